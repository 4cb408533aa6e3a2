//! Sparse reconstruction: OMP, basis-pursuit denoising, fast Bayesian CS and
//! the template/spatial-prior variant used for UWB frames.

mod bcs;
mod bp;
mod cs_uwb;
mod omp;
mod template;

pub use bcs::{
    bcs, bcs_with, l1_contribution, optimal_alpha, BcsEngine, BcsOptions, BcsState, Step,
    SpatialCoupling, SummedStatistics,
};
pub use bp::{bp_denoise, bp_denoise_with, BpOptions};
pub use cs_uwb::{cs_uwb, cs_uwb_engine, cs_uwb_engine_with, CsUwbOptions, CsUwbSolver};
pub use omp::{omp, OmpStop};
pub use template::TemplateDictionary;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    /// Reconstructed frame samples.
    pub s_hat: Vec<f64>,
    /// Sparse coefficients in the solver's basis.
    pub coeffs: Vec<f64>,
    pub iterations: usize,
    /// Filled in once the true frame is known, see [`ReconResult::score`].
    pub p_re: Option<f64>,
    /// False when an iterative solver hit its iteration cap.
    pub converged: bool,
    /// Arrival time after each iteration, when the caller tracked it.
    pub arrival_trace: Vec<f64>,
}

impl ReconResult {
    pub(crate) fn canonical(coeffs: Vec<f64>, iterations: usize, converged: bool) -> Self {
        ReconResult {
            s_hat: coeffs.clone(),
            coeffs,
            iterations,
            p_re: None,
            converged,
            arrival_trace: Vec::new(),
        }
    }

    /// Sets `p_re` against the true frame.
    pub fn score(mut self, truth: &[f64]) -> Result<Self> {
        self.p_re = Some(recon_percentage(truth, &self.s_hat)?);
        Ok(self)
    }

    pub fn nonzeros(&self) -> usize {
        self.coeffs.iter().filter(|c| **c != 0.0).count()
    }
}

/// `1 - ||s - s_hat|| / ||s||`.
pub fn recon_percentage(s: &[f64], s_hat: &[f64]) -> Result<f64> {
    if s.len() != s_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "truth has {} samples, reconstruction {}",
            s.len(),
            s_hat.len()
        )));
    }
    let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let err = s
        .iter()
        .zip(s_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(1.0 - err / norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recon_percentage_examples() {
        let s = [1.0, -2.0, 0.5];
        assert_eq!(recon_percentage(&s, &s).unwrap(), 1.0);
        assert_eq!(recon_percentage(&s, &[0.0; 3]).unwrap(), 0.0);
        let doubled: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert!(recon_percentage(&s, &doubled).unwrap().abs() < 1e-15);
        assert!(matches!(recon_percentage(&[0.0; 3], &s), Err(Error::ZeroSignal)));
        assert!(recon_percentage(&s, &[0.0; 2]).is_err());
    }
}
