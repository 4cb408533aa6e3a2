use nalgebra::{DMatrix, DVector};

use super::ReconResult;
use crate::error::{Error, Result};

/// OMP stopping rule; the first condition reached ends the run. With neither
/// set, OMP runs until the support has `min(M, N)` atoms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OmpStop {
    pub max_nonzeros: Option<usize>,
    pub residual_tol: Option<f64>,
}

impl OmpStop {
    pub fn nonzeros(k: usize) -> Self {
        OmpStop {
            max_nonzeros: Some(k),
            residual_tol: None,
        }
    }

    pub fn residual(tol: f64) -> Self {
        OmpStop {
            max_nonzeros: None,
            residual_tol: Some(tol),
        }
    }
}

/// Orthogonal matching pursuit over the columns of `a`.
pub fn omp(y: &DVector<f64>, a: &DMatrix<f64>, stop: OmpStop) -> Result<ReconResult> {
    let (m, n) = a.shape();
    if y.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "y has {} entries, matrix has {m} rows",
            y.len()
        )));
    }
    let cap = stop.max_nonzeros.unwrap_or(usize::MAX).min(m).min(n);
    let tol = stop.residual_tol.unwrap_or(0.0);
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();

    let mut support: Vec<usize> = Vec::new();
    let mut in_support = vec![false; n];
    let mut coeffs = vec![0.0; n];
    let mut residual = y.clone();
    let mut iterations = 0;

    while support.len() < cap && residual.norm() > tol {
        let corr = a.tr_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if in_support[j] || norms[j] == 0.0 {
                continue;
            }
            let score = corr[j].abs() / norms[j];
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((j, score));
            }
        }
        let Some((j, score)) = best else { break };
        if score == 0.0 {
            break;
        }
        support.push(j);
        in_support[j] = true;
        iterations += 1;

        let sub = a.select_columns(&support);
        let qr = sub.clone().qr();
        let r = qr.r();
        let diag_max = r.diagonal().amax();
        if r.diagonal().iter().any(|d| d.abs() <= 1e-12 * diag_max) {
            return Err(Error::RankDeficient {
                partial: Box::new(ReconResult::canonical(coeffs, iterations - 1, false)),
            });
        }
        let qty = qr.q().tr_mul(y);
        let x = r
            .solve_upper_triangular(&qty)
            .ok_or_else(|| Error::RankDeficient {
                partial: Box::new(ReconResult::canonical(coeffs.clone(), iterations - 1, false)),
            })?;
        coeffs.iter_mut().for_each(|c| *c = 0.0);
        for (&idx, &v) in support.iter().zip(x.iter()) {
            coeffs[idx] = v;
        }
        residual = y - sub * x;
    }
    Ok(ReconResult::canonical(coeffs, iterations, true))
}
