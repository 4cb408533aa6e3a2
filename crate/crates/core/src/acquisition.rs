//! Compressed-sensing measurement path: `y = Phi (s + n1) + n2`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::signal::{gaussian_vector, mean_power, noise_variance, SignalFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    /// i.i.d. `N(0, 1/M)` entries.
    Gaussian,
    /// i.i.d. `±1/sqrt(M)` entries.
    Bernoulli,
    /// First `M` rows of the identity.
    Identity,
    /// Loaded from a matrix file.
    Imported,
}

impl std::str::FromStr for ProjectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(ProjectionKind::Gaussian),
            "bernoulli" => Ok(ProjectionKind::Bernoulli),
            "identity" => Ok(ProjectionKind::Identity),
            other => Err(Error::invalid("projection", format!("unknown kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    pub entries: DMatrix<f64>,
    pub kind: ProjectionKind,
    pub seed: u64,
}

impl ProjectionMatrix {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn from_entries(entries: DMatrix<f64>) -> Result<Self> {
        let (m, n) = entries.shape();
        if m == 0 || n == 0 || m > n {
            return Err(Error::invalid("entries", format!("need 1 <= M <= N, got {m}x{n}")));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("entries", "non-finite entry"));
        }
        Ok(ProjectionMatrix {
            entries,
            kind: ProjectionKind::Imported,
            seed: 0,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_matrix(path, &self.entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_entries(read_matrix(path)?)
    }
}

/// Random projection. Rows are drawn in order from one seeded stream, so
/// matrices with the same seed and `N` share their leading rows up to the
/// `1/sqrt(M)` normalisation.
pub fn make_projection(m: usize, n: usize, kind: ProjectionKind, seed: u64) -> Result<ProjectionMatrix> {
    if m == 0 || n == 0 {
        return Err(Error::invalid("M", "dimensions must be at least 1"));
    }
    if m > n {
        return Err(Error::invalid("M", format!("M = {m} exceeds N = {n}")));
    }
    let scale = 1.0 / (m as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = match kind {
        ProjectionKind::Gaussian => DMatrix::from_row_iterator(
            m,
            n,
            (0..m * n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)),
        ),
        ProjectionKind::Bernoulli => DMatrix::from_row_iterator(
            m,
            n,
            (0..m * n).map(|_| if rng.random::<bool>() { scale } else { -scale }),
        ),
        ProjectionKind::Identity => DMatrix::from_fn(m, n, |i, j| if i == j { 1.0 } else { 0.0 }),
        ProjectionKind::Imported => {
            return Err(Error::invalid("kind", "imported matrices are loaded, not generated"))
        }
    };
    Ok(ProjectionMatrix { entries, kind, seed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    pub y: DVector<f64>,
    /// Standard deviation of the combined noise `Phi n1 + n2`.
    pub beta: f64,
}

/// Noise levels given as absolute standard deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevels {
    pub signal_std: f64,
    pub measurement_std: f64,
}

/// `y = Phi (s + n1) + n2` with the noise levels set from SNRs: `n1` relative
/// to the mean power of `s`, `n2` relative to the mean power of `Phi s`.
/// `f64::INFINITY` disables a noise term.
pub fn measure(
    phi: &ProjectionMatrix,
    s: &SignalFrame,
    n1_snr_db: f64,
    n2_snr_db: f64,
    seed: u64,
) -> Result<MeasurementVector> {
    check_dims(phi, s)?;
    let clean = &phi.entries * DVector::from_column_slice(&s.samples);
    let p_signal = s.mean_power();
    let p_measured = mean_power(clean.as_slice());
    if (n1_snr_db.is_finite() || n2_snr_db.is_finite()) && p_signal == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let levels = NoiseLevels {
        signal_std: noise_variance(p_signal, n1_snr_db).sqrt(),
        measurement_std: noise_variance(p_measured, n2_snr_db).sqrt(),
    };
    measure_with_noise(phi, s, levels, seed)
}

/// `y = Phi (s + n1) + n2` with absolute noise levels; linear in `s` for a fixed seed.
pub fn measure_with_noise(
    phi: &ProjectionMatrix,
    s: &SignalFrame,
    noise: NoiseLevels,
    seed: u64,
) -> Result<MeasurementVector> {
    check_dims(phi, s)?;
    if !(noise.signal_std >= 0.0 && noise.measurement_std >= 0.0) {
        return Err(Error::invalid("noise", "standard deviations must be >= 0"));
    }
    let (m, n) = phi.entries.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n1 = gaussian_vector(n, noise.signal_std, &mut rng);
    let n2 = gaussian_vector(m, noise.measurement_std, &mut rng);
    let noisy = DVector::from_iterator(n, s.samples.iter().zip(&n1).map(|(a, b)| a + b));
    let y = &phi.entries * noisy + DVector::from_vec(n2);
    let fro2 = phi.entries.norm_squared();
    let beta = (noise.signal_std.powi(2) * fro2 / m as f64 + noise.measurement_std.powi(2)).sqrt();
    Ok(MeasurementVector { y, beta })
}

fn check_dims(phi: &ProjectionMatrix, s: &SignalFrame) -> Result<()> {
    if phi.cols() != s.len() {
        return Err(Error::DimensionMismatch(format!(
            "projection has {} columns but frame has {} samples",
            phi.cols(),
            s.len()
        )));
    }
    Ok(())
}

/// `M / N`.
pub fn reduction_ratio(m: usize, n: usize) -> f64 {
    m as f64 / n as f64
}

/// Measurement count for a target ratio, rounded and kept within `1..=N`.
pub fn measurements_for(r_r: f64, n: usize) -> usize {
    ((r_r * n as f64).round() as usize).clamp(1, n)
}

/// Row-major, comma-separated, one row per line.
pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    parse_matrix(&std::fs::read_to_string(path)?)
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| Error::MatrixFile {
                    line: i + 1,
                    reason: format!("bad number `{}`", f.trim()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::MatrixFile {
                    line: i + 1,
                    reason: format!("expected {} columns, got {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    let Some(first) = rows.first() else {
        return Err(Error::MatrixFile {
            line: 0,
            reason: "empty matrix".into(),
        });
    };
    let cols = first.len();
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{synthesize_frame, ChannelRealization, PulseSpec, DEFAULT_DT};

    fn frame(n: usize) -> SignalFrame {
        let ch = ChannelRealization::single(1.0, (n as f64 / 3.0).floor() * DEFAULT_DT).unwrap();
        synthesize_frame(&ch, &PulseSpec::new(3.0 * DEFAULT_DT).unwrap(), n, DEFAULT_DT).unwrap()
    }

    #[test]
    fn projections_are_seeded() {
        for kind in [ProjectionKind::Gaussian, ProjectionKind::Bernoulli] {
            assert_eq!(make_projection(20, 50, kind, 4).unwrap(), make_projection(20, 50, kind, 4).unwrap());
            assert_ne!(make_projection(20, 50, kind, 4).unwrap(), make_projection(20, 50, kind, 5).unwrap());
        }
    }

    #[test]
    fn leading_rows_are_shared_across_m() {
        let a = make_projection(10, 64, ProjectionKind::Gaussian, 8).unwrap();
        let b = make_projection(30, 64, ProjectionKind::Gaussian, 8).unwrap();
        let ratio = (30.0f64 / 10.0).sqrt();
        for i in 0..10 {
            for j in 0..64 {
                assert!((a.entries[(i, j)] - ratio * b.entries[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_columns_have_unit_norm_on_average() {
        let p = make_projection(200, 400, ProjectionKind::Gaussian, 1).unwrap();
        let mean: f64 = p.entries.column_iter().map(|c| c.norm_squared()).sum::<f64>() / 400.0;
        assert!((mean - 1.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn bernoulli_entries() {
        let p = make_projection(4, 4, ProjectionKind::Bernoulli, 3).unwrap();
        assert!(p.entries.iter().all(|v| *v == 0.5 || *v == -0.5));
    }

    #[test]
    fn m_above_n_rejected() {
        assert!(make_projection(5, 4, ProjectionKind::Gaussian, 0).is_err());
        assert!(make_projection(0, 4, ProjectionKind::Gaussian, 0).is_err());
    }

    #[test]
    fn identity_projection_passes_signal() {
        let s = frame(32);
        let phi = make_projection(32, 32, ProjectionKind::Identity, 0).unwrap();
        let y = measure(&phi, &s, f64::INFINITY, f64::INFINITY, 0).unwrap();
        assert_eq!(y.y.as_slice(), s.samples.as_slice());
        assert_eq!(y.beta, 0.0);
    }

    #[test]
    fn zero_signal_without_noise_measures_zero() {
        let s = SignalFrame::new(vec![0.0; 16], DEFAULT_DT, 0.0).unwrap();
        let phi = make_projection(8, 16, ProjectionKind::Gaussian, 2).unwrap();
        let y = measure(&phi, &s, f64::INFINITY, f64::INFINITY, 0).unwrap();
        assert!(y.y.iter().all(|v| *v == 0.0));
        assert!(matches!(measure(&phi, &s, 10.0, f64::INFINITY, 0), Err(Error::ZeroSignal)));
    }

    #[test]
    fn square_projection_inverts_exactly() {
        let s = frame(24);
        let phi = make_projection(24, 24, ProjectionKind::Gaussian, 9).unwrap();
        let y = measure(&phi, &s, f64::INFINITY, f64::INFINITY, 0).unwrap();
        let x = phi.entries.clone().lu().solve(&y.y).unwrap();
        let scale = s.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in x.iter().zip(&s.samples) {
            assert!((a - b).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let phi = make_projection(8, 16, ProjectionKind::Gaussian, 2).unwrap();
        assert!(matches!(
            measure(&phi, &frame(20), 10.0, 10.0, 0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn reduction_ratio_values() {
        assert_eq!(reduction_ratio(150, 1000), 0.15);
        assert_eq!(reduction_ratio(7, 7), 1.0);
        assert_eq!(reduction_ratio(210, 1000), 0.21);
        assert_eq!(measurements_for(0.15, 1024), 154);
    }

    #[test]
    fn recorded_beta_matches_empirical_noise() {
        let s = frame(256);
        let phi = make_projection(64, 256, ProjectionKind::Gaussian, 7).unwrap();
        let clean = &phi.entries * DVector::from_column_slice(&s.samples);
        let mut sq = 0.0;
        let mut beta = 0.0;
        for seed in 0..100 {
            let y = measure(&phi, &s, 10.0, 20.0, seed).unwrap();
            sq += (&y.y - &clean).norm_squared();
            beta = y.beta;
        }
        let empirical = (sq / (100.0 * 64.0)).sqrt();
        assert!((empirical / beta - 1.0).abs() < 0.1, "{empirical} vs {beta}");
    }

    #[test]
    fn matrix_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.csv");
        let p = make_projection(5, 9, ProjectionKind::Gaussian, 12).unwrap();
        p.save(&path).unwrap();
        let q = ProjectionMatrix::load(&path).unwrap();
        assert_eq!(q.entries, p.entries);
        assert!(parse_matrix("1,2\n3\n").is_err());
        assert!(parse_matrix("").is_err());
        assert!(parse_matrix("1,x").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn measurement_is_affine_in_signal(a in prop::collection::vec(-1.0f64..1.0, 16),
                                               b in prop::collection::vec(-1.0f64..1.0, 16),
                                               seed in 0u64..1000) {
                let phi = make_projection(6, 16, ProjectionKind::Gaussian, 3).unwrap();
                let noise = NoiseLevels { signal_std: 0.1, measurement_std: 0.05 };
                let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
                let f = |v: Vec<f64>| measure_with_noise(&phi, &SignalFrame::new(v, 1.0, 0.0).unwrap(), noise, seed).unwrap().y;
                let lhs = f(sum);
                let rhs = f(a) + f(b) - f(vec![0.0; 16]);
                prop_assert!((lhs - rhs).amax() < 1e-12);
            }
        }
    }
}
