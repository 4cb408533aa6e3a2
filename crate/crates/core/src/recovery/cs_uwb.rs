//! BCS over a pulse-template dictionary with hyperparameters shared across
//! stations.
//!
//! Each station solves `y_i = Phi_i D x_i`. Because `D`'s columns are pulse
//! copies, every reconstruction `D x_i` is a sum of pulses. The stations
//! share one `alpha` vector (one relevance per delay), so the delay pattern is
//! common while amplitudes stay per station. Stations whose frames start at
//! different times are aligned by integer offsets before coupling.

use nalgebra::{DMatrix, DVector};

use super::bcs::{BcsEngine, BcsOptions, SpatialCoupling, Step, SummedStatistics};
use super::template::TemplateDictionary;
use super::ReconResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsUwbOptions {
    pub bcs: BcsOptions,
    /// Per-station column offsets; `None` aligns each station on its
    /// strongest matched-filter atom.
    pub offsets: Option<Vec<usize>>,
}

impl Default for CsUwbOptions {
    fn default() -> Self {
        CsUwbOptions {
            bcs: BcsOptions::default(),
            offsets: None,
        }
    }
}

/// Incremental solver; the pipeline steps it to interleave TDOA updates.
#[derive(Debug)]
pub struct CsUwbSolver<C: SpatialCoupling = SummedStatistics> {
    engine: BcsEngine<C>,
    dict: TemplateDictionary,
    offsets: Vec<usize>,
}

impl<C: SpatialCoupling> CsUwbSolver<C> {
    pub fn step(&mut self) -> Result<Step> {
        self.engine.step()
    }

    pub fn run(&mut self) -> Result<Step> {
        self.engine.run()
    }

    pub fn engine(&self) -> &BcsEngine<C> {
        &self.engine
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn stations(&self) -> usize {
        self.engine.station_count()
    }

    /// Current reconstruction `D x_i` for station `i`.
    pub fn frame(&self, station: usize) -> Vec<f64> {
        self.dict
            .synthesize(&self.engine.coefficients(station))
            .expect("coefficients match dictionary")
    }

    pub fn results(&self) -> Vec<ReconResult> {
        (0..self.stations())
            .map(|i| ReconResult {
                s_hat: self.frame(i),
                coeffs: self.engine.coefficients(i),
                iterations: self.engine.iterations(),
                p_re: None,
                converged: self.engine.converged(),
                arrival_trace: Vec::new(),
            })
            .collect()
    }
}

/// Index of the atom best matching `y`, by normalised correlation.
fn strongest_atom(psi: &DMatrix<f64>, y: &DVector<f64>) -> usize {
    let corr = psi.tr_mul(y);
    let mut best = (0, f64::NEG_INFINITY);
    for (j, col) in psi.column_iter().enumerate() {
        let norm = col.norm();
        if norm == 0.0 {
            continue;
        }
        let score = corr[j].abs() / norm;
        if score > best.1 {
            best = (j, score);
        }
    }
    best.0
}

pub fn cs_uwb_engine(
    ys: &[DVector<f64>],
    phis: &[DMatrix<f64>],
    dict: &TemplateDictionary,
    betas: &[f64],
    opts: &CsUwbOptions,
) -> Result<CsUwbSolver> {
    cs_uwb_engine_with(ys, phis, dict, betas, opts, SummedStatistics)
}

pub fn cs_uwb_engine_with<C: SpatialCoupling>(
    ys: &[DVector<f64>],
    phis: &[DMatrix<f64>],
    dict: &TemplateDictionary,
    betas: &[f64],
    opts: &CsUwbOptions,
    coupling: C,
) -> Result<CsUwbSolver<C>> {
    if ys.is_empty() {
        return Err(Error::invalid("stations", "need at least one station"));
    }
    if phis.len() != ys.len() || betas.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} measurement vectors, {} matrices, {} noise scales",
            ys.len(),
            phis.len(),
            betas.len()
        )));
    }
    let mut psis = Vec::with_capacity(ys.len());
    for (i, phi) in phis.iter().enumerate() {
        if phi.ncols() != dict.len() {
            return Err(Error::DimensionMismatch(format!(
                "station {i}: frame length {} but dictionary has {}",
                phi.ncols(),
                dict.len()
            )));
        }
        psis.push(dict.project(phi)?);
    }
    CsUwbSolver::from_projected(psis, ys, dict, betas, opts, coupling)
}

impl<C: SpatialCoupling> CsUwbSolver<C> {
    /// Builds the solver from precomputed `Psi_i = Phi_i D`, so a fixed set of
    /// projections can be reused across many frames.
    pub fn from_projected(
        psis: Vec<DMatrix<f64>>,
        ys: &[DVector<f64>],
        dict: &TemplateDictionary,
        betas: &[f64],
        opts: &CsUwbOptions,
        coupling: C,
    ) -> Result<Self> {
        if psis.len() != ys.len() || betas.len() != ys.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} measurement vectors, {} matrices, {} noise scales",
                ys.len(),
                psis.len(),
                betas.len()
            )));
        }
        if let Some(i) = psis.iter().position(|p| p.ncols() != dict.atoms()) {
            return Err(Error::DimensionMismatch(format!(
                "station {i}: {} columns but dictionary has {} atoms",
                psis[i].ncols(),
                dict.atoms()
            )));
        }
        let problems: Vec<_> = psis
            .into_iter()
            .zip(ys)
            .zip(betas)
            .map(|((psi, y), beta)| (psi, y.clone(), *beta))
            .collect();
        let offsets = match &opts.offsets {
            Some(o) => o.clone(),
            None => {
                let peaks: Vec<usize> = problems.iter().map(|(psi, y, _)| strongest_atom(psi, y)).collect();
                let low = peaks.iter().copied().min().unwrap_or(0);
                peaks.iter().map(|p| p - low).collect()
            }
        };
        let engine = BcsEngine::new(problems, offsets.clone(), coupling, opts.bcs)?;
        Ok(CsUwbSolver {
            engine,
            dict: dict.clone(),
            offsets,
        })
    }
}

/// Template- and spatially-informed reconstruction, one result per station.
pub fn cs_uwb(
    ys: &[DVector<f64>],
    phis: &[DMatrix<f64>],
    dict: &TemplateDictionary,
    beta: f64,
) -> Result<Vec<ReconResult>> {
    let betas = vec![beta; ys.len()];
    let mut solver = cs_uwb_engine(ys, phis, dict, &betas, &CsUwbOptions::default())?;
    solver.run()?;
    Ok(solver.results())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::{make_projection, ProjectionKind};
    use crate::signal::{synthesize_frame, ChannelRealization, PropagationPath, PulseSpec};

    const N: usize = 256;
    const DT: f64 = 10e-12;

    fn dict() -> TemplateDictionary {
        TemplateDictionary::new(N, DT, PulseSpec::new(50e-12).unwrap()).unwrap()
    }

    fn frame(paths: &[(f64, f64)]) -> Vec<f64> {
        let ch = ChannelRealization::new(
            paths
                .iter()
                .map(|&(amplitude, delay)| PropagationPath { amplitude, delay })
                .collect(),
        )
        .unwrap();
        synthesize_frame(&ch, &PulseSpec::new(50e-12).unwrap(), N, DT).unwrap().samples
    }

    #[test]
    fn single_pulse_peak_recovered() {
        let s = frame(&[(1.0, 93.0 * DT)]);
        let phi = make_projection(N / 4, N, ProjectionKind::Gaussian, 9).unwrap().entries;
        let y = &phi * DVector::from_column_slice(&s);
        let r = cs_uwb(&[y], &[phi], &dict(), 1e-4).unwrap();
        let peak = r[0]
            .s_hat
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, 93);
        assert!(r[0].clone().score(&s).unwrap().p_re.unwrap() > 0.99);
    }

    #[test]
    fn shared_support_across_stations() {
        let d = dict();
        let gains = [1.0, 0.8, 0.6];
        let mut ys = Vec::new();
        let mut phis = Vec::new();
        let mut truths = Vec::new();
        for (i, g) in gains.iter().enumerate() {
            let s = frame(&[(*g, 60.0 * DT), (0.5 * g, 120.0 * DT)]);
            let phi = make_projection(N / 4, N, ProjectionKind::Gaussian, 20 + i as u64).unwrap().entries;
            ys.push(&phi * DVector::from_column_slice(&s));
            phis.push(phi);
            truths.push(s);
        }
        let betas = [1e-4; 3];
        let mut solver = cs_uwb_engine(&ys, &phis, &d, &betas, &CsUwbOptions::default()).unwrap();
        solver.run().unwrap();
        assert_eq!(solver.offsets(), &[0, 0, 0]);
        let mut support = solver.engine().active_set().to_vec();
        support.sort();
        assert_eq!(support, vec![60, 120]);
        for (i, r) in solver.results().into_iter().enumerate() {
            assert!(r.score(&truths[i]).unwrap().p_re.unwrap() > 0.99, "station {i}");
        }
    }

    #[test]
    fn reconstruction_lies_in_dictionary_span() {
        let d = dict();
        let s = frame(&[(1.0, 80.3 * DT), (-0.4, 101.7 * DT)]);
        let phi = make_projection(N / 5, N, ProjectionKind::Gaussian, 2).unwrap().entries;
        let noise = DVector::from_fn(N / 5, |i, _| 0.01 * ((i * 7919) % 13) as f64 - 0.06);
        let y = &phi * DVector::from_column_slice(&s) + noise;
        let r = cs_uwb(&[y], &[phi], &d, 0.05).unwrap();
        let dense = d.to_dense();
        let sh = DVector::from_vec(r[0].s_hat.clone());
        let fit = dense.clone().svd(true, true).solve(&sh, 1e-12).unwrap();
        assert!((dense * fit - sh).norm() < 1e-10);
    }

    #[test]
    fn mismatched_frame_length_rejected() {
        let phi = DMatrix::zeros(4, N + 1);
        assert!(cs_uwb(&[DVector::zeros(4)], &[phi], &dict(), 0.1).is_err());
    }
}
