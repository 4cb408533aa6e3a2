//! Fast marginal-likelihood Bayesian compressive sensing.
//!
//! Each coefficient `x_j` has a zero-mean Gaussian prior with precision
//! `alpha_j`; `alpha_j = inf` removes it from the model. With the noise scale
//! `beta` known, the log marginal likelihood splits into a part that does not
//! depend on `alpha_j` plus
//!
//! ```text
//! l1(alpha_j) = 0.5 * (ln alpha_j - ln(alpha_j + g_j) + h_j^2 / (alpha_j + g_j))
//! ```
//!
//! where `g_j = phi_j^T E_{-j}^{-1} phi_j`, `h_j = phi_j^T E_{-j}^{-1} y` and
//! `E_{-j}` is the measurement covariance with `j` left out. `l1` has an
//! interior maximum at `alpha_j = g_j^2 / (h_j^2 - g_j)` when `h_j^2 > g_j`
//! and increases towards `alpha_j = inf` otherwise. Every step applies the
//! single add, re-estimate or delete with the largest likelihood gain.
//!
//! The engine runs one or more stations against a shared hyperparameter
//! vector. Station `i` sees shared candidate `j` as its own column
//! `j + offset_i`; a [`SpatialCoupling`] turns the stations' `(g, h)` into one
//! proposed `alpha_j`. With a single station this is the plain algorithm.
//!
//! Internally each station works in noise-scaled units (`alpha * beta^2`,
//! `beta^2 * S`, `beta^2 * Q`) so that very small `beta` stays well
//! conditioned; the posterior covariance is `Sigma = beta^2 (A^T A + beta^2 diag(alpha))^{-1}`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::ReconResult;
use crate::error::{Error, Result};

/// Maximiser of `l1` for given `g`, `h`; `None` means `alpha = inf`.
pub fn optimal_alpha(g: f64, h: f64) -> Option<f64> {
    let excess = h * h - g;
    (excess > 0.0 && g > 0.0).then(|| g * g / excess)
}

/// The `alpha_j`-dependent part of the log marginal likelihood; zero at `alpha = inf`.
pub fn l1_contribution(alpha: f64, g: f64, h: f64) -> f64 {
    if alpha.is_infinite() {
        return 0.0;
    }
    0.5 * (-(g / alpha).ln_1p() + h * h / (alpha + g))
}

/// How per-station statistics combine into one shared hyperparameter.
pub trait SpatialCoupling: std::fmt::Debug + Send + Sync {
    /// `stats[i] = (g, h)` for station `i`. `None` prunes the candidate.
    fn propose(&self, stats: &[(f64, f64)]) -> Option<f64>;
}

/// `g = sum g_i`, `h^2 = sum h_i^2`, then the single-station closed form.
#[derive(Debug, Clone, Copy, Default)]
pub struct SummedStatistics;

impl SpatialCoupling for SummedStatistics {
    fn propose(&self, stats: &[(f64, f64)]) -> Option<f64> {
        let g: f64 = stats.iter().map(|s| s.0).sum();
        let h2: f64 = stats.iter().map(|s| s.1 * s.1).sum();
        optimal_alpha(g, h2.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcsOptions {
    pub max_iters: usize,
    /// Stop once no single step raises the log likelihood by more than this.
    pub tol: f64,
    /// Recompute the posterior from scratch every this many steps.
    pub refresh_every: usize,
    /// Cap on the active set; never above the smallest measurement count.
    pub max_active: Option<usize>,
}

impl Default for BcsOptions {
    fn default() -> Self {
        BcsOptions {
            max_iters: 2000,
            tol: 1e-6,
            refresh_every: 200,
            max_active: None,
        }
    }
}

/// Snapshot of the hyperparameters and posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct BcsState {
    /// One entry per shared candidate, `inf` when excluded.
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Posterior mean over the active set, per station.
    pub mu: Vec<DVector<f64>>,
    /// Posterior covariance over the active set, per station.
    pub sigma_cov: Vec<DMatrix<f64>>,
    pub active_set: Vec<usize>,
    /// Coupled sparsity statistic per candidate (sum over stations).
    pub g: Vec<f64>,
    /// Coupled quality statistic per candidate (root sum of squares over
    /// stations; signed when there is a single station).
    pub h: Vec<f64>,
    pub likelihood: f64,
    pub likelihood_trace: Vec<f64>,
}

/// What a step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Added(usize),
    Reestimated(usize),
    Deleted(usize),
    Converged,
    IterationCap,
}

#[derive(Debug, Clone)]
struct Station {
    a: DMatrix<f64>,
    y: DVector<f64>,
    beta2: f64,
    offset: usize,
    col_norm2: Vec<f64>,
    /// `(A_a^T A_a + beta^2 diag(alpha))^{-1}` over the active set.
    gamma: DMatrix<f64>,
    mu: DVector<f64>,
    /// `beta^2 S_m` and `beta^2 Q_m` for every column.
    big_s: Vec<f64>,
    big_q: Vec<f64>,
}

impl Station {
    fn new(a: DMatrix<f64>, y: DVector<f64>, beta: f64, offset: usize) -> Self {
        let col_norm2: Vec<f64> = a.column_iter().map(|c| c.norm_squared()).collect();
        let big_q = a.tr_mul(&y).as_slice().to_vec();
        Station {
            big_s: col_norm2.clone(),
            col_norm2,
            big_q,
            gamma: DMatrix::zeros(0, 0),
            mu: DVector::zeros(0),
            beta2: beta * beta,
            offset,
            a,
            y,
        }
    }

    fn local(&self, j: usize) -> usize {
        j + self.offset
    }

    /// Leave-one-out `(g, h)` in natural units.
    fn stats(&self, j: usize, alpha: Option<f64>) -> (f64, f64) {
        let l = self.local(j);
        let (s, q) = (self.big_s[l], self.big_q[l]);
        let (s, q) = match alpha {
            Some(alpha) => {
                let ah = alpha * self.beta2;
                let d = ah - s;
                (ah * s / d, ah * q / d)
            }
            None => (s, q),
        };
        (s / self.beta2, q / self.beta2)
    }

    fn active_columns(&self, active: &[usize]) -> DMatrix<f64> {
        let cols: Vec<usize> = active.iter().map(|&j| self.local(j)).collect();
        self.a.select_columns(&cols)
    }

    /// Applies `c = A^T r` to `S`, `Q` as `S -= ks c^2`, `Q -= kq c`.
    fn downdate(&mut self, r: &DVector<f64>, ks: f64, kq: f64) {
        let c = self.a.tr_mul(r);
        for (m, cm) in c.iter().enumerate() {
            self.big_s[m] -= ks * cm * cm;
            self.big_q[m] -= kq * cm;
        }
    }

    fn add(&mut self, active: &[usize], j: usize, alpha: f64) -> Result<()> {
        let l = self.local(j);
        let ah = alpha * self.beta2;
        let sigma_jj = 1.0 / (ah + self.big_s[l]);
        if !(sigma_jj > 0.0 && sigma_jj.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let mu_j = sigma_jj * self.big_q[l];
        let col = self.a.column(l).clone_owned();
        let k = active.len();
        let (u, e) = if k == 0 {
            (DVector::zeros(0), col)
        } else {
            let aa = self.active_columns(active);
            let u = &self.gamma * aa.tr_mul(&col);
            let e = &col - aa * &u;
            (u, e)
        };
        let mut gamma = DMatrix::zeros(k + 1, k + 1);
        gamma
            .view_mut((0, 0), (k, k))
            .copy_from(&(&self.gamma + &u * u.transpose() * sigma_jj));
        for i in 0..k {
            gamma[(i, k)] = -sigma_jj * u[i];
            gamma[(k, i)] = -sigma_jj * u[i];
        }
        gamma[(k, k)] = sigma_jj;
        let mut mu = DVector::zeros(k + 1);
        mu.rows_mut(0, k).copy_from(&(&self.mu - &u * mu_j));
        mu[k] = mu_j;
        self.gamma = gamma;
        self.mu = mu;
        self.downdate(&e, sigma_jj, mu_j);
        Ok(())
    }

    fn reestimate(&mut self, active: &[usize], pos: usize, old: f64, new: f64) -> Result<()> {
        let (old_h, new_h) = (old * self.beta2, new * self.beta2);
        if old_h == new_h {
            return Ok(());
        }
        let g = self.gamma.column(pos).clone_owned();
        let kappa = 1.0 / (g[pos] + 1.0 / (new_h - old_h));
        if !kappa.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let mu_p = self.mu[pos];
        let r = self.active_columns(active) * &g;
        self.gamma -= &g * g.transpose() * kappa;
        self.mu -= &g * (kappa * mu_p);
        self.downdate(&r, -kappa, -kappa * mu_p);
        Ok(())
    }

    fn delete(&mut self, active: &[usize], pos: usize) -> Result<()> {
        let g = self.gamma.column(pos).clone_owned();
        let gpp = g[pos];
        if !(gpp > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let mu_p = self.mu[pos];
        let r = self.active_columns(active) * &g;
        self.gamma -= &g * g.transpose() / gpp;
        self.mu -= &g * (mu_p / gpp);
        self.gamma = self.gamma.clone().remove_row(pos).remove_column(pos);
        self.mu = self.mu.clone().remove_row(pos);
        self.downdate(&r, -1.0 / gpp, -mu_p / gpp);
        Ok(())
    }

    /// Recomputes the posterior and `S`, `Q` from scratch.
    fn refresh(&mut self, active: &[usize], alpha: &[f64]) -> Result<()> {
        let k = active.len();
        if k == 0 {
            self.gamma = DMatrix::zeros(0, 0);
            self.mu = DVector::zeros(0);
            self.big_s = self.col_norm2.clone();
            self.big_q = self.a.tr_mul(&self.y).as_slice().to_vec();
            return Ok(());
        }
        let aa = self.active_columns(active);
        let mut c = aa.tr_mul(&aa);
        for (i, a) in alpha.iter().enumerate() {
            c[(i, i)] += a * self.beta2;
        }
        let chol = c.cholesky().ok_or(Error::NotPositiveDefinite)?;
        self.gamma = chol.inverse();
        self.mu = chol.solve(&aa.tr_mul(&self.y));
        let w = aa.tr_mul(&self.a);
        let z = chol.l().solve_lower_triangular(&w).ok_or(Error::NotPositiveDefinite)?;
        for (m, zc) in z.column_iter().enumerate() {
            self.big_s[m] = self.col_norm2[m] - zc.norm_squared();
        }
        let resid = &self.y - &aa * &self.mu;
        self.big_q = self.a.tr_mul(&resid).as_slice().to_vec();
        Ok(())
    }

    fn empty_likelihood(&self) -> f64 {
        let m = self.y.len() as f64;
        -0.5 * (m * (2.0 * PI).ln() + m * self.beta2.ln() + self.y.norm_squared() / self.beta2)
    }

    /// `-0.5 (M ln 2pi + ln|E| + y^T E^{-1} y)` with `E = beta^2 I + A_a diag(1/alpha) A_a^T`.
    fn exact_likelihood(&self, active: &[usize], alpha: &[f64]) -> Result<f64> {
        let m = self.y.len();
        let aa = self.active_columns(active);
        let mut e = DMatrix::identity(m, m) * self.beta2;
        for (i, a) in alpha.iter().enumerate() {
            let c = aa.column(i);
            e += c * c.transpose() / *a;
        }
        let chol = e.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let quad = self.y.dot(&chol.solve(&self.y));
        Ok(-0.5 * (m as f64 * (2.0 * PI).ln() + logdet + quad))
    }
}

#[derive(Debug, Clone, Copy)]
enum Action {
    Add(f64),
    Reestimate(usize, f64),
    Delete(usize),
}

/// Incremental multi-station BCS solver.
#[derive(Debug)]
pub struct BcsEngine<C: SpatialCoupling = SummedStatistics> {
    stations: Vec<Station>,
    coupling: C,
    opts: BcsOptions,
    candidates: usize,
    cap: usize,
    active: Vec<usize>,
    alpha: Vec<f64>,
    pos_of: Vec<Option<usize>>,
    likelihood: f64,
    trace: Vec<f64>,
    iterations: usize,
    since_refresh: usize,
    done: Option<Step>,
}

impl BcsEngine<SummedStatistics> {
    pub fn single(a: DMatrix<f64>, y: DVector<f64>, beta: f64, opts: BcsOptions) -> Result<Self> {
        Self::new(vec![(a, y, beta)], vec![0], SummedStatistics, opts)
    }
}

impl<C: SpatialCoupling> BcsEngine<C> {
    /// `problems[i] = (A_i, y_i, beta_i)`; all `A_i` need the same column count.
    /// Shared candidate `j` is column `j + offsets[i]` of `A_i`; candidates
    /// run over the indices valid for every station.
    pub fn new(
        problems: Vec<(DMatrix<f64>, DVector<f64>, f64)>,
        offsets: Vec<usize>,
        coupling: C,
        opts: BcsOptions,
    ) -> Result<Self> {
        if problems.is_empty() {
            return Err(Error::invalid("stations", "need at least one station"));
        }
        if offsets.len() != problems.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} offsets for {} stations",
                offsets.len(),
                problems.len()
            )));
        }
        let k = problems[0].0.ncols();
        let mut min_rows = usize::MAX;
        for (i, (a, y, beta)) in problems.iter().enumerate() {
            if a.ncols() != k {
                return Err(Error::DimensionMismatch(format!(
                    "station {i} has {} columns, station 0 has {k}",
                    a.ncols()
                ))
                .at_station(i));
            }
            if a.nrows() != y.len() {
                return Err(Error::DimensionMismatch(format!(
                    "station {i}: {} rows but {} measurements",
                    a.nrows(),
                    y.len()
                )));
            }
            if !(*beta > 0.0 && beta.is_finite()) {
                return Err(Error::IllPosed(format!(
                    "station {i}: beta must be positive and finite, got {beta}"
                )));
            }
            min_rows = min_rows.min(a.nrows());
        }
        let max_offset = offsets.iter().copied().max().unwrap_or(0);
        if max_offset >= k {
            return Err(Error::invalid("offsets", format!("offset {max_offset} >= {k} columns")));
        }
        let candidates = k - max_offset;
        let cap = opts.max_active.unwrap_or(usize::MAX).min(min_rows);
        let stations: Vec<Station> = problems
            .into_iter()
            .zip(offsets)
            .map(|((a, y, beta), off)| Station::new(a, y, beta, off))
            .collect();
        let likelihood = stations.iter().map(Station::empty_likelihood).sum();
        Ok(BcsEngine {
            stations,
            coupling,
            opts,
            candidates,
            cap,
            active: Vec::new(),
            alpha: Vec::new(),
            pos_of: vec![None; candidates],
            likelihood,
            trace: vec![likelihood],
            iterations: 0,
            since_refresh: 0,
            done: None,
        })
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn is_finished(&self) -> bool {
        self.done.is_some()
    }

    pub fn converged(&self) -> bool {
        self.done == Some(Step::Converged)
    }

    pub fn station_count(&self) -> usize {
        self.stations.len()
    }

    pub fn active_set(&self) -> &[usize] {
        &self.active
    }

    pub fn log_likelihood(&self) -> f64 {
        self.likelihood
    }

    pub fn likelihood_trace(&self) -> &[f64] {
        &self.trace
    }

    fn alpha_of(&self, j: usize) -> Option<f64> {
        self.pos_of[j].map(|p| self.alpha[p])
    }

    fn candidate_stats(&self, j: usize, buf: &mut Vec<(f64, f64)>) {
        let alpha = self.alpha_of(j);
        buf.clear();
        buf.extend(self.stations.iter().map(|s| s.stats(j, alpha)));
    }

    fn in_span(&self, j: usize) -> bool {
        self.stations.iter().any(|s| {
            let l = s.local(j);
            !(s.col_norm2[l] > 0.0 && s.big_s[l] > 1e-10 * s.col_norm2[l])
        })
    }

    /// Best single move and its likelihood gain.
    fn best_action(&self) -> Option<(usize, Action, f64)> {
        let mut stats = Vec::with_capacity(self.stations.len());
        let mut best: Option<(usize, Action, f64)> = None;
        for j in 0..self.candidates {
            self.candidate_stats(j, &mut stats);
            let proposal = self.coupling.propose(&stats);
            let current = self.alpha_of(j);
            let gain_at = |alpha: f64| -> f64 {
                stats.iter().map(|&(g, h)| l1_contribution(alpha, g, h)).sum()
            };
            let (action, gain) = match (self.pos_of[j], proposal) {
                (None, Some(new)) => {
                    if self.active.len() >= self.cap || self.in_span(j) {
                        continue;
                    }
                    (Action::Add(new), gain_at(new))
                }
                (Some(p), Some(new)) => {
                    let old = current.unwrap_or(f64::INFINITY);
                    (Action::Reestimate(p, new), gain_at(new) - gain_at(old))
                }
                (Some(p), None) => (Action::Delete(p), -gain_at(self.alpha[p])),
                (None, None) => continue,
            };
            if !gain.is_finite() {
                continue;
            }
            if best.is_none_or(|b| gain > b.2) {
                best = Some((j, action, gain));
            }
        }
        best
    }

    /// Applies the best move, or reports convergence.
    pub fn step(&mut self) -> Result<Step> {
        if let Some(done) = self.done {
            return Ok(done);
        }
        if self.iterations >= self.opts.max_iters {
            self.finish(Step::IterationCap)?;
            return Ok(Step::IterationCap);
        }
        let Some((j, action, gain)) = self.best_action().filter(|b| b.2 > self.opts.tol) else {
            self.finish(Step::Converged)?;
            return Ok(Step::Converged);
        };
        let outcome = match action {
            Action::Add(alpha) => {
                for s in &mut self.stations {
                    s.add(&self.active, j, alpha)?;
                }
                self.pos_of[j] = Some(self.active.len());
                self.active.push(j);
                self.alpha.push(alpha);
                Step::Added(j)
            }
            Action::Reestimate(p, alpha) => {
                let old = self.alpha[p];
                for s in &mut self.stations {
                    s.reestimate(&self.active, p, old, alpha)?;
                }
                self.alpha[p] = alpha;
                Step::Reestimated(j)
            }
            Action::Delete(p) => {
                for s in &mut self.stations {
                    s.delete(&self.active, p)?;
                }
                self.active.remove(p);
                self.alpha.remove(p);
                self.pos_of[j] = None;
                for q in self.active.iter().skip(p) {
                    self.pos_of[*q] = self.pos_of[*q].map(|v| v - 1);
                }
                Step::Deleted(j)
            }
        };
        self.iterations += 1;
        self.likelihood += gain;
        self.trace.push(self.likelihood);
        self.since_refresh += 1;
        if self.since_refresh >= self.opts.refresh_every.max(1) {
            self.refresh()?;
        }
        Ok(outcome)
    }

    fn finish(&mut self, how: Step) -> Result<()> {
        self.refresh()?;
        self.done = Some(how);
        Ok(())
    }

    fn refresh(&mut self) -> Result<()> {
        for s in &mut self.stations {
            s.refresh(&self.active, &self.alpha)?;
        }
        self.since_refresh = 0;
        Ok(())
    }

    /// Steps until converged or capped.
    pub fn run(&mut self) -> Result<Step> {
        loop {
            match self.step()? {
                s @ (Step::Converged | Step::IterationCap) => return Ok(s),
                _ => {}
            }
        }
    }

    /// Posterior mean of station `i` embedded in its full column space.
    pub fn coefficients(&self, station: usize) -> Vec<f64> {
        let s = &self.stations[station];
        let mut x = vec![0.0; s.a.ncols()];
        for (p, &j) in self.active.iter().enumerate() {
            x[s.local(j)] = s.mu[p];
        }
        x
    }

    /// Log marginal likelihood evaluated directly from the current hyperparameters.
    pub fn exact_log_likelihood(&self) -> Result<f64> {
        self.stations
            .iter()
            .map(|s| s.exact_likelihood(&self.active, &self.alpha))
            .sum()
    }

    /// `(beta^-2 A_a^T A_a + diag(alpha)) Sigma - I`, max abs entry over stations.
    pub fn posterior_identity_error(&self) -> f64 {
        self.stations
            .iter()
            .map(|s| {
                let k = self.active.len();
                if k == 0 {
                    return 0.0;
                }
                let aa = s.active_columns(&self.active);
                let mut precision = aa.tr_mul(&aa) / s.beta2;
                for (i, a) in self.alpha.iter().enumerate() {
                    precision[(i, i)] += a;
                }
                let sigma = &s.gamma * s.beta2;
                (precision * sigma - DMatrix::identity(k, k)).amax()
            })
            .fold(0.0, f64::max)
    }

    pub fn state(&self) -> BcsState {
        let mut alpha = vec![f64::INFINITY; self.candidates];
        for (p, &j) in self.active.iter().enumerate() {
            alpha[j] = self.alpha[p];
        }
        let mut g = Vec::with_capacity(self.candidates);
        let mut h = Vec::with_capacity(self.candidates);
        let mut stats = Vec::new();
        for j in 0..self.candidates {
            self.candidate_stats(j, &mut stats);
            g.push(stats.iter().map(|s| s.0).sum());
            h.push(if stats.len() == 1 {
                stats[0].1
            } else {
                stats.iter().map(|s| s.1 * s.1).sum::<f64>().sqrt()
            });
        }
        BcsState {
            alpha,
            beta: self.stations.iter().map(|s| s.beta2.sqrt()).collect(),
            mu: self.stations.iter().map(|s| s.mu.clone()).collect(),
            sigma_cov: self.stations.iter().map(|s| &s.gamma * s.beta2).collect(),
            active_set: self.active.clone(),
            g,
            h,
            likelihood: self.likelihood,
            likelihood_trace: self.trace.clone(),
        }
    }
}

pub fn bcs(y: &DVector<f64>, a: &DMatrix<f64>, beta: f64) -> Result<(ReconResult, BcsState)> {
    bcs_with(y, a, beta, &BcsOptions::default())
}

/// Single-station BCS in the canonical basis.
pub fn bcs_with(
    y: &DVector<f64>,
    a: &DMatrix<f64>,
    beta: f64,
    opts: &BcsOptions,
) -> Result<(ReconResult, BcsState)> {
    if !(beta > 0.0) {
        return Err(Error::IllPosed(format!("beta must be positive, got {beta}")));
    }
    let mut engine = BcsEngine::single(a.clone(), y.clone(), beta, *opts)?;
    let end = engine.run()?;
    let result = ReconResult::canonical(
        engine.coefficients(0),
        engine.iterations(),
        end == Step::Converged,
    );
    Ok((result, engine.state()))
}
