//! Iterative linearised TDOA multilateration in 2D and 3D.
//!
//! With `D_i = ||a_i - p||`, the measured range differences are
//! `D_ri = D_r - D_i` against a reference anchor `r`. Around a guess the
//! range differences are linear in the position update; the solver takes
//! least-squares Gauss-Newton steps until the step length falls below a
//! threshold.
//!
//! Lengths are millimetres and times seconds; [`range_from_time`] is the one
//! place time differences become range differences.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Propagation speed in mm/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e11;

/// Range difference (mm) for a time difference (s): `c * tau`.
pub fn range_from_time(tau: f64, c: f64) -> f64 {
    c * tau
}

/// Time difference (s) for a range difference (mm).
pub fn time_from_range(d: f64, c: f64) -> f64 {
    d / c
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point { x, y, z }
    }

    pub const fn planar(x: f64, y: f64) -> Self {
        Point { x, y, z: 0.0 }
    }

    pub fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_coords(c: &[f64]) -> Self {
        Point::new(c[0], c.get(1).copied().unwrap_or(0.0), c.get(2).copied().unwrap_or(0.0))
    }

    pub fn distance(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }

    pub fn offset(&self, d: &Point) -> Point {
        Point::new(self.x + d.x, self.y + d.y, self.z + d.z)
    }
}

/// Anchor positions plus the solve dimension and reference anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    positions: Vec<Point>,
    dim: usize,
    reference: usize,
}

impl AnchorSet {
    /// `dim` is 2 (z ignored) or 3. Needs at least `dim + 1` anchors spanning `dim` dimensions.
    pub fn new(positions: Vec<Point>, dim: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::invalid("dim", format!("must be 2 or 3, got {dim}")));
        }
        if positions.len() < dim + 1 {
            return Err(Error::invalid(
                "anchors",
                format!("{dim}D needs at least {} anchors, got {}", dim + 1, positions.len()),
            ));
        }
        if positions.iter().any(|p| !p.coords().iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("anchors", "coordinates must be finite"));
        }
        let set = AnchorSet {
            positions,
            dim,
            reference: 0,
        };
        let base = set.coords(&set.positions[0]);
        let spread = DMatrix::from_fn(set.len() - 1, dim, |i, k| set.coords(&set.positions[i + 1])[k] - base[k]);
        let sv = spread.singular_values();
        if sv.min() <= 1e-9 * sv.max().max(f64::MIN_POSITIVE) {
            return Err(Error::IllPosed(format!(
                "anchors do not span {dim} dimensions"
            )));
        }
        Ok(set)
    }

    pub fn planar(xy: &[(f64, f64)]) -> Result<Self> {
        Self::new(xy.iter().map(|&(x, y)| Point::planar(x, y)).collect(), 2)
    }

    pub fn spatial(xyz: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(xyz.iter().map(|&(x, y, z)| Point::new(x, y, z)).collect(), 3)
    }

    /// Four ceiling/wall anchors in a 5 m x 5 m x 4 m room.
    pub fn room_default() -> Self {
        Self::spatial(&[
            (0.0, 0.0, 170.0),
            (4000.0, 0.0, 1855.0),
            (4410.0, 4435.0, 2860.0),
            (0.0, 4545.0, 3260.0),
        ])
        .expect("default anchors are well posed")
    }

    pub fn with_reference(mut self, reference: usize) -> Result<Self> {
        if reference >= self.len() {
            return Err(Error::invalid("reference", format!("no anchor {reference}")));
        }
        self.reference = reference;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn get(&self, i: usize) -> Point {
        self.positions[i]
    }

    /// Indices of the non-reference anchors, in order.
    pub fn others(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| i != self.reference)
    }

    pub fn centroid(&self) -> Point {
        let n = self.len() as f64;
        let mut c = Point::default();
        for p in &self.positions {
            c.x += p.x / n;
            c.y += p.y / n;
            c.z += p.z / n;
        }
        if self.dim == 2 {
            c.z = 0.0;
        }
        c
    }

    /// Distance from anchor `i` to `p` in the solve dimension (z ignored in 2D).
    pub fn range(&self, i: usize, p: &Point) -> f64 {
        self.dist(i, p)
    }

    /// Distance between two points in the solve dimension.
    pub fn separation(&self, a: &Point, b: &Point) -> f64 {
        let (u, v) = (self.coords(a), self.coords(b));
        u.iter().zip(&v).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    /// Translated copy.
    pub fn translated(&self, v: &Point) -> Self {
        AnchorSet {
            positions: self.positions.iter().map(|p| p.offset(v)).collect(),
            ..self.clone()
        }
    }

    fn coords(&self, p: &Point) -> Vec<f64> {
        p.coords()[..self.dim].to_vec()
    }

    /// Distance in the solve dimension (z ignored in 2D).
    fn dist(&self, i: usize, p: &Point) -> f64 {
        let a = self.coords(&self.positions[i]);
        let b = self.coords(p);
        a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
    }
}

/// `D_r - D_i` for tag position `tag`.
pub fn range_difference(anchors: &AnchorSet, tag: &Point, i: usize) -> Result<f64> {
    let r = anchors.reference();
    if i >= anchors.len() {
        return Err(Error::invalid("i", format!("no anchor {i}")));
    }
    let dr = anchors.dist(r, tag);
    let di = anchors.dist(i, tag);
    if dr == 0.0 {
        return Err(Error::CoincidentAnchor(r));
    }
    if di == 0.0 {
        return Err(Error::CoincidentAnchor(i));
    }
    Ok(dr - di)
}

/// Row per non-reference anchor `i`:
/// `[(x_r - x)/D_r - (x_i - x)/D_i, (same for y), (same for z)]`.
///
/// This is the negative gradient of `D_ri` with respect to the tag position.
pub fn tdoa_jacobian(anchors: &AnchorSet, guess: &Point) -> Result<DMatrix<f64>> {
    let dim = anchors.dim();
    let r = anchors.reference();
    let g = anchors.coords(guess);
    let unit = |i: usize| -> Result<Vec<f64>> {
        let d = anchors.dist(i, guess);
        if d == 0.0 {
            return Err(Error::CoincidentAnchor(i));
        }
        let a = anchors.coords(&anchors.get(i));
        Ok(a.iter().zip(&g).map(|(ak, gk)| (ak - gk) / d).collect())
    };
    let ur = unit(r)?;
    let others: Vec<usize> = anchors.others().collect();
    let mut j = DMatrix::zeros(others.len(), dim);
    for (row, &i) in others.iter().enumerate() {
        let ui = unit(i)?;
        for k in 0..dim {
            j[(row, k)] = ur[k] - ui[k];
        }
    }
    Ok(j)
}

/// Time differences `tau_ri = t_r - t_i` for every non-reference anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaProblem {
    pub anchors: AnchorSet,
    pub tau: Vec<f64>,
    pub c: f64,
}

impl TdoaProblem {
    pub fn new(anchors: AnchorSet, tau: Vec<f64>, c: f64) -> Result<Self> {
        if tau.len() != anchors.len() - 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} time differences for {} anchors",
                tau.len(),
                anchors.len()
            )));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid("c", "must be positive"));
        }
        if tau.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("tau", "must be finite"));
        }
        Ok(TdoaProblem { anchors, tau, c })
    }

    /// Builds the problem from absolute arrival times, one per anchor.
    pub fn from_arrivals(anchors: AnchorSet, arrivals: &[f64], c: f64) -> Result<Self> {
        if arrivals.len() != anchors.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} arrivals for {} anchors",
                arrivals.len(),
                anchors.len()
            )));
        }
        let r = arrivals[anchors.reference()];
        let tau = anchors
            .others()
            .map(|i| crate::arrival::time_difference(r, arrivals[i]))
            .collect();
        Self::new(anchors, tau, c)
    }

    /// Exact time differences for a tag at `tag`.
    pub fn forward(anchors: AnchorSet, tag: &Point, c: f64) -> Result<Self> {
        let tau = anchors
            .others()
            .map(|i| range_difference(&anchors, tag, i).map(|d| time_from_range(d, c)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(anchors, tau, c)
    }

    /// Measured minus predicted range differences at `p`.
    pub fn residual(&self, p: &Point) -> Result<DVector<f64>> {
        let others: Vec<usize> = self.anchors.others().collect();
        let mut r = DVector::zeros(others.len());
        for (row, &i) in others.iter().enumerate() {
            r[row] = range_from_time(self.tau[row], self.c) - range_difference(&self.anchors, p, i)?;
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Stop once the applied step is shorter than this (mm).
    pub err_threshold: f64,
    pub max_iters: usize,
    /// Step halvings tried when a step increases the residual.
    pub max_halvings: usize,
    /// Consecutive growing steps that count as divergence.
    pub divergence_window: usize,
    /// Where the tag is known to be. With as many range differences as
    /// unknowns the equations can have a second root; a solution outside the
    /// region triggers restarts from the region's centre and corners.
    pub region: Option<Region>,
}

/// Axis-aligned box; the z extent is ignored for planar problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub min: Point,
    pub max: Point,
}

impl Region {
    pub fn new(min: Point, max: Point) -> Result<Self> {
        let ok = min.coords().iter().zip(max.coords()).all(|(a, b)| a.is_finite() && b.is_finite() && *a <= b);
        if !ok {
            return Err(Error::invalid("region", "need finite min <= max on every axis"));
        }
        Ok(Region { min, max })
    }

    /// The 5 m x 5 m x 4 m room around [`AnchorSet::room_default`].
    pub fn room_default() -> Self {
        Region {
            min: Point::new(0.0, 0.0, 0.0),
            max: Point::new(5000.0, 5000.0, 4000.0),
        }
    }

    pub fn centre(&self) -> Point {
        Point::new(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
            0.5 * (self.min.z + self.max.z),
        )
    }

    /// Containment with a slack of 5% of the diagonal, so noisy fixes near a
    /// wall still count as inside.
    pub fn contains(&self, p: &Point, dim: usize) -> bool {
        let slack = 0.05 * self.min.distance(&self.max);
        let (lo, hi, q) = (self.min.coords(), self.max.coords(), p.coords());
        (0..dim).all(|k| q[k] >= lo[k] - slack && q[k] <= hi[k] + slack)
    }

    fn corners(&self, dim: usize) -> Vec<Point> {
        let (lo, hi) = (self.min.coords(), self.max.coords());
        (0..1usize << dim)
            .map(|mask| {
                let mut c = lo;
                for k in 0..dim {
                    if mask >> k & 1 == 1 {
                        c[k] = hi[k];
                    }
                }
                Point::from_coords(&c)
            })
            .collect()
    }
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            err_threshold: 1e-6,
            max_iters: 100,
            max_halvings: 10,
            divergence_window: 5,
            region: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionEstimate {
    pub position: Point,
    pub iterations: usize,
    /// Length of the last applied step (mm).
    pub final_err: f64,
    pub converged: bool,
    /// Norm of the range-difference residual at `position` (mm).
    pub residual_norm: f64,
    pub diverged: bool,
}

/// Gauss-Newton iteration from `initial` (anchor centroid when `None`).
///
/// When `opts.region` is set and the fix lands outside it, the solve restarts
/// from the region's centre and corners and keeps the first converged fix
/// inside; `iterations` then counts every attempt.
pub fn solve_tdoa(problem: &TdoaProblem, initial: Option<Point>, opts: &SolveOptions) -> Result<PositionEstimate> {
    let first = gauss_newton(problem, initial, opts);
    let Some(region) = opts.region else {
        return first;
    };
    let dim = problem.anchors.dim();
    let accept = |e: &PositionEstimate| e.converged && region.contains(&e.position, dim);
    if matches!(&first, Ok(e) if accept(e)) {
        return first;
    }
    let mut spent = first.as_ref().map(|e| e.iterations).unwrap_or(0);
    let starts = std::iter::once(region.centre()).chain(region.corners(dim));
    for start in starts {
        if let Ok(mut e) = gauss_newton(problem, Some(start), opts) {
            spent += e.iterations;
            if accept(&e) {
                e.iterations = spent;
                return Ok(e);
            }
        }
    }
    first
}

fn gauss_newton(problem: &TdoaProblem, initial: Option<Point>, opts: &SolveOptions) -> Result<PositionEstimate> {
    let anchors = &problem.anchors;
    let dim = anchors.dim();
    let mut guess = initial.unwrap_or_else(|| anchors.centroid());
    if dim == 2 {
        guess.z = 0.0;
    }
    let mut res = problem.residual(&guess)?;
    let mut last_err = f64::INFINITY;
    let mut growing = 0;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let j = tdoa_jacobian(anchors, &guess)?;
        let svd = j.clone().svd(true, true);
        let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
        if smin <= 1e-10 * smax.max(f64::MIN_POSITIVE) {
            return Err(Error::SingularGeometry { iteration: iterations });
        }
        // J is the negative gradient, so the Gauss-Newton step is -J^+ r.
        let delta = svd
            .solve(&res, 0.0)
            .map_err(|_| Error::SingularGeometry { iteration: iterations })?;
        let mut scale = 1.0;
        let mut next;
        let mut next_res;
        let mut halvings = 0;
        loop {
            let mut c = guess.coords();
            for k in 0..dim {
                c[k] -= scale * delta[k];
            }
            next = Point::from_coords(&c);
            next_res = problem.residual(&next);
            let better = matches!(&next_res, Ok(r) if r.norm() <= res.norm());
            if better || halvings >= opts.max_halvings {
                break;
            }
            scale *= 0.5;
            halvings += 1;
        }
        let next_res = next_res?;
        let err = scale * delta.norm();
        guess = next;
        res = next_res;
        if err < opts.err_threshold {
            return Ok(PositionEstimate {
                position: guess,
                iterations,
                final_err: err,
                converged: true,
                residual_norm: res.norm(),
                diverged: false,
            });
        }
        growing = if err > last_err { growing + 1 } else { 0 };
        last_err = err;
        if growing >= opts.divergence_window {
            return Ok(PositionEstimate {
                position: guess,
                iterations,
                final_err: err,
                converged: false,
                residual_norm: res.norm(),
                diverged: true,
            });
        }
    }
    Ok(PositionEstimate {
        position: guess,
        iterations,
        final_err: last_err,
        converged: false,
        residual_norm: res.norm(),
        diverged: false,
    })
}
