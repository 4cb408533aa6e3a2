use nalgebra::{DMatrix, DVector};

use super::ReconResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpOptions {
    /// l1 weight; `None` uses `0.1 * ||A^T y||_inf`.
    pub lambda: Option<f64>,
    /// Relative objective change that counts as converged.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for BpOptions {
    fn default() -> Self {
        BpOptions {
            lambda: None,
            tol: 1e-8,
            max_iters: 5000,
        }
    }
}

pub fn bp_denoise(y: &DVector<f64>, a: &DMatrix<f64>, lambda: f64) -> Result<ReconResult> {
    bp_denoise_with(
        y,
        a,
        &BpOptions {
            lambda: Some(lambda),
            ..Default::default()
        },
    )
}

/// Minimises `0.5 ||y - A x||^2 + lambda ||x||_1` with accelerated proximal
/// gradient (FISTA) using backtracking on the Lipschitz constant and a
/// restart whenever the objective goes up. Hitting `max_iters` returns the
/// last iterate with `converged = false`.
pub fn bp_denoise_with(y: &DVector<f64>, a: &DMatrix<f64>, opts: &BpOptions) -> Result<ReconResult> {
    let (m, n) = a.shape();
    if y.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "y has {} entries, matrix has {m} rows",
            y.len()
        )));
    }
    let aty = a.tr_mul(y);
    let lambda = opts.lambda.unwrap_or(0.1 * aty.amax());
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda", format!("must be finite and >= 0, got {lambda}")));
    }
    let mut lip = spectral_norm_sq(a).max(f64::MIN_POSITIVE);

    let objective = |x: &DVector<f64>| -> f64 {
        0.5 * (y - a * x).norm_squared() + lambda * x.lp_norm(1)
    };

    let mut x = DVector::<f64>::zeros(n);
    let mut z = x.clone();
    let mut theta = 1.0f64;
    let mut f_prev = objective(&x);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;
        let rz = a * &z - y;
        let grad = a.tr_mul(&rz);
        let fz = 0.5 * rz.norm_squared();
        let x_next = loop {
            let cand = soft_threshold(&(&z - &grad / lip), lambda / lip);
            let d = &cand - &z;
            let smooth = 0.5 * (a * &cand - y).norm_squared();
            if smooth <= fz + grad.dot(&d) + 0.5 * lip * d.norm_squared() * (1.0 + 1e-12) {
                break cand;
            }
            lip *= 2.0;
        };
        let f_next = objective(&x_next);
        if f_next > f_prev {
            // restart momentum from the last accepted point
            z = x.clone();
            theta = 1.0;
            continue;
        }
        let change = (f_prev - f_next).abs();
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        z = &x_next + (&x_next - &x) * ((theta - 1.0) / theta_next);
        theta = theta_next;
        x = x_next;
        f_prev = f_next;
        if change <= opts.tol * f_next.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(ReconResult::canonical(x.as_slice().to_vec(), iterations, converged))
}

fn soft_threshold(v: &DVector<f64>, t: f64) -> DVector<f64> {
    v.map(|x| x.signum() * (x.abs() - t).max(0.0))
}

/// Upper bound on `||A||_2^2` from power iteration, padded by 1 %.
fn spectral_norm_sq(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i % 7) as f64 * 0.1);
    let mut est = 0.0;
    for _ in 0..50 {
        let w = a.tr_mul(&(a * &v));
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        est = norm / v.norm();
        v = w / norm;
    }
    1.01 * est
}
