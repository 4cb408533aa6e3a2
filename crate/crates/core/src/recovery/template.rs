use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::signal::{gaussian_pulse, PulseSpec};

/// Dictionary of unit-norm pulse copies, one per grid shift.
///
/// Column `k` is the pulse centred on sample `k`, truncated where it falls
/// below `exp(-24.5)` of its peak (7 sigma), so each column is a short band.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateDictionary {
    len: usize,
    dt: f64,
    pulse: PulseSpec,
    half_width: usize,
    /// `(first row, values)` per column.
    columns: Vec<(usize, Vec<f64>)>,
}

impl TemplateDictionary {
    pub fn new(len: usize, dt: f64, pulse: PulseSpec) -> Result<Self> {
        pulse.validate()?;
        if len == 0 {
            return Err(Error::invalid("len", "dictionary needs at least one sample"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        let half_width = ((7.0 * pulse.sigma / dt).ceil() as usize).max(1);
        let columns = (0..len)
            .map(|k| {
                let start = k.saturating_sub(half_width);
                let end = (k + half_width + 1).min(len);
                let mut values: Vec<f64> = (start..end)
                    .map(|i| gaussian_pulse((i as f64 - k as f64) * dt, &pulse))
                    .collect();
                let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
                values.iter_mut().for_each(|v| *v /= norm);
                (start, values)
            })
            .collect();
        Ok(TemplateDictionary {
            len,
            dt,
            pulse,
            half_width,
            columns,
        })
    }

    /// Frame length (rows).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of atoms (columns).
    pub fn atoms(&self) -> usize {
        self.columns.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn pulse(&self) -> PulseSpec {
        self.pulse
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.len, self.atoms());
        for (k, (start, values)) in self.columns.iter().enumerate() {
            for (i, v) in values.iter().enumerate() {
                d[(start + i, k)] = *v;
            }
        }
        d
    }

    /// `D x`.
    pub fn synthesize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.atoms() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for {} atoms",
                x.len(),
                self.atoms()
            )));
        }
        let mut s = vec![0.0; self.len];
        for (xk, (start, values)) in x.iter().zip(&self.columns) {
            if *xk == 0.0 {
                continue;
            }
            for (i, v) in values.iter().enumerate() {
                s[start + i] += xk * v;
            }
        }
        Ok(s)
    }

    /// `Phi D` computed band by band.
    pub fn project(&self, phi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if phi.ncols() != self.len {
            return Err(Error::DimensionMismatch(format!(
                "projection has {} columns, dictionary {} rows",
                phi.ncols(),
                self.len
            )));
        }
        let mut out = DMatrix::zeros(phi.nrows(), self.atoms());
        for (k, (start, values)) in self.columns.iter().enumerate() {
            let mut col = out.column_mut(k);
            for (i, v) in values.iter().enumerate() {
                col.axpy(*v, &phi.column(start + i), 1.0);
            }
        }
        Ok(out)
    }
}
