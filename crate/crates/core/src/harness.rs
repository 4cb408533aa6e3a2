//! Seeded Monte Carlo experiments: 1D reconstruction sweeps, 2D error maps
//! and 3D room runs, with CSV and gnuplot output.
//!
//! Every random draw is seeded from the master seed and the draw's position in
//! the experiment (trial, cell, station) through [`mix_seed`], so work items
//! can run in any order on any number of threads and still give identical
//! tables. Trials share their random numbers across reduction ratios and
//! methods: the same channel, the same signal noise and projections whose
//! leading rows coincide.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::acquisition::{make_projection, measure, measurements_for};
use crate::arrival::detect_arrival;
use crate::error::{Error, Result};
use crate::pipeline::{mix_seed, reconstruct_canonical, Mode, Pipeline, PipelineConfig};
use crate::recovery::{cs_uwb, recon_percentage, TemplateDictionary};
use crate::signal::{generate_channel, synthesize_on, ChannelProfile, FrameGrid, Overflow};
use crate::tdoa::{AnchorSet, Point, Region};

/// Column order of every CSV this module writes.
pub const CSV_HEADER: [&str; 10] = [
    "experiment",
    "algorithm",
    "R_r",
    "snr_db",
    "x_mm",
    "y_mm",
    "z_mm",
    "trial",
    "metric",
    "value",
];

const STREAM_CHANNEL: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_PROJECTION: u64 = 3;
const STREAM_TAG: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    Recon1d,
    Grid2d,
    Room3d,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Recon1d => "recon_1d",
            ExperimentKind::Grid2d => "grid_2d",
            ExperimentKind::Room3d => "room_3d",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [ExperimentKind::Recon1d, ExperimentKind::Grid2d, ExperimentKind::Room3d]
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::invalid("kind", format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub algorithms: Vec<Mode>,
    /// Reduction ratios; positioning runs use the first.
    pub r_r: Vec<f64>,
    pub snr_db: f64,
    pub trials: usize,
    /// Defaults per kind when `None`.
    pub anchors: Option<AnchorSet>,
    /// Grid extent (2D) or room (3D); also the TDOA search region.
    pub bounds: Option<Region>,
    /// Grid cells per axis (2D).
    pub resolution: usize,
    /// Random tag positions (3D).
    pub points: usize,
    /// Channel profile; defaults per kind when `None`.
    pub channel: Option<ChannelProfile>,
    /// Acquisition, recovery and TDOA settings. Its `mode`, `seed`, `r_r`
    /// and `snr_db` are overridden per run.
    pub pipeline: PipelineConfig,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl ExperimentSpec {
    fn base(kind: ExperimentKind) -> Self {
        ExperimentSpec {
            kind,
            algorithms: Vec::new(),
            r_r: vec![0.3],
            snr_db: 10.0,
            trials: 1,
            anchors: None,
            bounds: None,
            resolution: 20,
            points: 100,
            channel: None,
            pipeline: PipelineConfig::default(),
            seed: 0,
            threads: 0,
        }
    }

    /// Reconstruction sweep: all four CS methods over `R_r = 0.10..0.30`.
    pub fn recon_1d() -> Self {
        ExperimentSpec {
            algorithms: vec![Mode::CsUwb, Mode::Bp, Mode::Omp, Mode::Bcs],
            r_r: vec![0.10, 0.15, 0.21, 0.25, 0.30],
            trials: 50,
            ..Self::base(ExperimentKind::Recon1d)
        }
    }

    /// 20 x 20 grid over 4 m x 4 m, CS-UWB against sequential sampling with a 3% scale error.
    pub fn grid_2d() -> Self {
        let mut spec = ExperimentSpec {
            algorithms: vec![Mode::CsUwb, Mode::Sequential],
            trials: 10,
            ..Self::base(ExperimentKind::Grid2d)
        };
        spec.pipeline.acquisition.drift = 0.03;
        spec
    }

    /// 100 random tags among the four room anchors, CS-UWB against sequential sampling.
    pub fn room_3d() -> Self {
        let mut spec = ExperimentSpec {
            algorithms: vec![Mode::CsUwb, Mode::Sequential],
            ..Self::base(ExperimentKind::Room3d)
        };
        spec.pipeline.acquisition.drift = 0.03;
        spec
    }

    pub fn default_for(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Recon1d => Self::recon_1d(),
            ExperimentKind::Grid2d => Self::grid_2d(),
            ExperimentKind::Room3d => Self::room_3d(),
        }
    }

    pub fn anchors(&self) -> AnchorSet {
        self.anchors.clone().unwrap_or_else(|| match self.kind {
            ExperimentKind::Room3d => AnchorSet::room_default(),
            _ => default_planar_anchors(),
        })
    }

    pub fn bounds(&self) -> Region {
        self.bounds.unwrap_or_else(|| match self.kind {
            ExperimentKind::Room3d => Region::room_default(),
            _ => Region {
                min: Point::planar(0.0, 0.0),
                max: Point::planar(4000.0, 4000.0),
            },
        })
    }

    pub fn channel(&self) -> ChannelProfile {
        self.channel.unwrap_or_else(|| match self.kind {
            ExperimentKind::Recon1d => ChannelProfile::dense(),
            _ => ChannelProfile::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::invalid("algorithms", "need at least one"));
        }
        if self.r_r.is_empty() {
            return Err(Error::invalid("rr", "need at least one reduction ratio"));
        }
        if let Some(r) = self.r_r.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::invalid("rr", format!("must lie in (0, 1], got {r}")));
        }
        if self.snr_db.is_nan() {
            return Err(Error::invalid("snr", "must be a number"));
        }
        match self.kind {
            ExperimentKind::Recon1d => {
                if let Some(m) = self.algorithms.iter().find(|m| !m.is_cs()) {
                    return Err(Error::invalid("algs", format!("{m} has no reconstruction step")));
                }
            }
            ExperimentKind::Grid2d => {
                if self.resolution == 0 {
                    return Err(Error::invalid("resolution", "must be at least 1"));
                }
                let a = self.anchors();
                if a.dim() != 2 || a.len() < 3 {
                    return Err(Error::invalid("anchors", "2D grid needs at least 3 planar anchors"));
                }
            }
            ExperimentKind::Room3d => {
                if self.points == 0 {
                    return Err(Error::invalid("points", "must be at least 1"));
                }
                let a = self.anchors();
                if a.dim() != 3 || a.len() < 4 {
                    return Err(Error::invalid("anchors", "3D room needs at least 4 anchors"));
                }
            }
        }
        if self.kind != ExperimentKind::Recon1d {
            if let Some(m) = self.algorithms.iter().find(|m| !matches!(m, Mode::CsUwb | Mode::Sequential)) {
                return Err(Error::invalid("algs", format!("positioning runs support cs_uwb and sequential, not {m}")));
            }
        }
        self.channel().validate()?;
        for r in &self.r_r {
            let mut cfg = self.pipeline.clone();
            cfg.acquisition.r_r = *r;
            cfg.validate()?;
        }
        Ok(())
    }

    fn config_for(&self, mode: Mode) -> PipelineConfig {
        let mut cfg = self.pipeline.clone();
        cfg.mode = mode;
        cfg.seed = mix_seed(self.seed, &[STREAM_PROJECTION]);
        cfg.acquisition.r_r = self.r_r[0];
        cfg.acquisition.snr_db = self.snr_db;
        cfg.channel = self.channel();
        cfg.tdoa.region = Some(self.bounds());
        cfg
    }
}

/// Three anchors on a 3 m circle around the centre of the default 4 m x 4 m grid.
pub fn default_planar_anchors() -> AnchorSet {
    let r = 3000.0;
    let (s, c) = (60f64.to_radians().sin(), 60f64.to_radians().cos());
    AnchorSet::planar(&[
        (2000.0, 2000.0 + r),
        (2000.0 - r * s, 2000.0 - r * c),
        (2000.0 + r * s, 2000.0 - r * c),
    ])
    .expect("circle anchors are well posed")
}

/// The point at equal distance from every anchor (least squares when
/// overdetermined): where all arrival-time differences vanish.
pub fn equal_distance_point(anchors: &AnchorSet) -> Result<Point> {
    let dim = anchors.dim();
    let p = anchors.positions();
    let norm2 = |q: &Point| q.coords()[..dim].iter().map(|v| v * v).sum::<f64>();
    let rows = p.len() - 1;
    let a = nalgebra::DMatrix::from_fn(rows, dim, |i, k| 2.0 * (p[i + 1].coords()[k] - p[0].coords()[k]));
    let b = DVector::from_fn(rows, |i, _| norm2(&p[i + 1]) - norm2(&p[0]));
    let x = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::IllPosed(e.to_string()))?;
    Ok(Point::from_coords(x.as_slice()))
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub algorithm: String,
    pub r_r: Option<f64>,
    pub snr_db: f64,
    pub x_mm: Option<f64>,
    pub y_mm: Option<f64>,
    pub z_mm: Option<f64>,
    /// `None` on summary rows.
    pub trial: Option<usize>,
    pub metric: String,
    pub value: f64,
}

/// Per-trial rows followed by summary rows (`<metric>_median`, `_mean`,
/// `_std`) for every scenario. A failed trial appears as metric `failed`
/// with value 1 and the error in no other column.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Rows matching the experiment, algorithm and metric, in table order.
    pub fn select<'a>(
        &'a self,
        experiment: &'a str,
        algorithm: &'a str,
        metric: &'a str,
    ) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.experiment == experiment && r.algorithm == algorithm && r.metric == metric)
    }

    /// Summary value for one algorithm at one reduction ratio.
    pub fn summary_at(&self, experiment: &str, algorithm: &str, r_r: f64, metric: &str) -> Option<f64> {
        self.select(experiment, algorithm, metric)
            .find(|r| r.trial.is_none() && r.r_r == Some(r_r))
            .map(|r| r.value)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.metric == "failed").count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub median: f64,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

pub fn stats(values: &[f64]) -> Option<Stats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(Stats { median, mean, std })
}

/// Runs `f` on a pool of `threads` workers (0 = all cores).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid("threads", e.to_string()))?;
    Ok(pool.install(f))
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    match spec.kind {
        ExperimentKind::Recon1d => run_recon_1d(spec),
        ExperimentKind::Grid2d => run_grid_2d(spec),
        ExperimentKind::Room3d => run_room_3d(spec),
    }
}

fn expect_kind(spec: &ExperimentSpec, kind: ExperimentKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::invalid("kind", format!("expected {kind}, got {}", spec.kind)));
    }
    spec.validate()
}

struct Scenario<'a> {
    experiment: &'a str,
    algorithm: &'a str,
    r_r: Option<f64>,
    snr_db: f64,
    at: Option<Point>,
    dim: usize,
}

impl Scenario<'_> {
    fn row(&self, trial: Option<usize>, metric: &str, value: f64) -> ResultRow {
        let coord = |k: usize| self.at.filter(|_| k < self.dim).map(|p| p.coords()[k]);
        ResultRow {
            experiment: self.experiment.to_string(),
            algorithm: self.algorithm.to_string(),
            r_r: self.r_r,
            snr_db: self.snr_db,
            x_mm: coord(0),
            y_mm: coord(1),
            z_mm: coord(2),
            trial,
            metric: metric.to_string(),
            value,
        }
    }

    /// Per-trial rows, then median/mean/std rows for each metric with at least one value.
    fn rows(&self, trials: &[Vec<(&'static str, Option<f64>)>], metrics: &[&str]) -> Vec<ResultRow> {
        let mut out = Vec::new();
        for (t, values) in trials.iter().enumerate() {
            for (metric, v) in values {
                match v {
                    Some(v) => out.push(self.row(Some(t), metric, *v)),
                    None => out.push(self.row(Some(t), "failed", 1.0)),
                }
            }
        }
        for metric in metrics {
            let vals: Vec<f64> = trials
                .iter()
                .flat_map(|v| v.iter().filter(|(m, _)| m == metric).filter_map(|(_, x)| *x))
                .collect();
            if let Some(s) = stats(&vals) {
                out.push(self.row(None, &format!("{metric}_median"), s.median));
                out.push(self.row(None, &format!("{metric}_mean"), s.mean));
                out.push(self.row(None, &format!("{metric}_std"), s.std));
            }
        }
        out
    }
}

/// Reconstruction percentage and arrival error (in grid bins, between the
/// strongest peak of the true and of the reconstructed frame) for every
/// method, reduction ratio and trial.
pub fn run_recon_1d(spec: &ExperimentSpec) -> Result<ResultTable> {
    expect_kind(spec, ExperimentKind::Recon1d)?;
    let acq = &spec.pipeline.acquisition;
    let (n, dt) = (acq.frame_len, acq.dt);
    let profile = spec.channel();
    let dict = TemplateDictionary::new(n, dt, acq.pulse)?;
    let work: Vec<(usize, usize)> = (0..spec.r_r.len())
        .flat_map(|r| (0..spec.trials).map(move |t| (r, t)))
        .collect();
    type Cell = Vec<Vec<(&'static str, Option<f64>)>>;
    let cells: Vec<Result<Cell>> = with_threads(spec.threads, || {
        work.par_iter()
            .map(|&(ri, trial)| -> Result<Cell> {
                let trial_seed = mix_seed(spec.seed, &[trial as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(trial_seed, &[STREAM_CHANNEL]));
                let mut p = profile;
                // First arrival between 10% and 20% of the frame.
                p.first_delay = rng.random_range(0.1..0.2) * n as f64 * dt;
                let channel = generate_channel(&p, rng.random())?;
                let truth = synthesize_on(&channel, &acq.pulse, &FrameGrid::new(n, dt), Overflow::Clip)?;
                let true_peak = detect_arrival(&truth, 0.0)?.time;
                let m = measurements_for(spec.r_r[ri], n);
                let phi = make_projection(m, n, acq.projection, mix_seed(trial_seed, &[STREAM_PROJECTION]))?;
                let meas = measure(&phi, &truth, spec.snr_db, acq.n2_snr_db, mix_seed(trial_seed, &[STREAM_NOISE]))?;
                let beta = meas.beta.max(1e-6 * meas.y.norm() / (m as f64).sqrt()).max(f64::MIN_POSITIVE);
                Ok(spec
                    .algorithms
                    .iter()
                    .map(|&mode| {
                        let recon = if mode == Mode::CsUwb {
                            cs_uwb(&[meas.y.clone()], &[phi.entries.clone()], &dict, beta)
                                .map(|mut r| r.remove(0))
                        } else {
                            reconstruct_canonical(mode, &meas.y, &phi.entries, beta, &spec.pipeline.recovery)
                        };
                        let Ok(recon) = recon else {
                            return vec![("p_re", None)];
                        };
                        let p_re = recon_percentage(&truth.samples, &recon.s_hat).ok();
                        let arrival = detect_arrival(&truth.with_samples(recon.s_hat), 0.0)
                            .ok()
                            .map(|a| (a.time - true_peak).abs() / dt);
                        vec![("p_re", p_re), ("arrival_err_bins", arrival)]
                    })
                    .collect())
            })
            .collect()
    })?;
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (ai, mode) in spec.algorithms.iter().enumerate() {
        for (ri, r_r) in spec.r_r.iter().enumerate() {
            let trials: Vec<_> = (0..spec.trials)
                .map(|t| cells[ri * spec.trials + t][ai].clone())
                .collect();
            let sc = Scenario {
                experiment: "recon_1d",
                algorithm: mode.name(),
                r_r: Some(*r_r),
                snr_db: spec.snr_db,
                at: None,
                dim: 0,
            };
            rows.extend(sc.rows(&trials, &["p_re", "arrival_err_bins"]));
        }
    }
    Ok(ResultTable { rows })
}

/// Centres of a `resolution x resolution` grid over the planar extent of `bounds`, row-major from the minimum corner.
pub fn grid_cells(bounds: &Region, resolution: usize) -> Vec<Point> {
    let (lo, hi) = (bounds.min, bounds.max);
    let (wx, wy) = ((hi.x - lo.x) / resolution as f64, (hi.y - lo.y) / resolution as f64);
    (0..resolution)
        .flat_map(|j| (0..resolution).map(move |i| Point::planar(lo.x + (i as f64 + 0.5) * wx, lo.y + (j as f64 + 0.5) * wy)))
        .collect()
}

/// Random tags inside the anchors' convex hull: Dirichlet(1, ..., 1) mixtures
/// of the anchor positions, which for four anchors is uniform over the
/// tetrahedron.
pub fn hull_tags(anchors: &AnchorSet, count: usize, seed: u64) -> Vec<Point> {
    (0..count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[STREAM_TAG, k as u64]));
            let w: Vec<f64> = anchors
                .positions()
                .iter()
                .map(|_| -(1.0 - rng.random::<f64>()).ln())
                .collect();
            let total: f64 = w.iter().sum();
            let mut p = Point::default();
            for (wi, a) in w.iter().zip(anchors.positions()) {
                p.x += wi / total * a.x;
                p.y += wi / total * a.y;
                p.z += wi / total * a.z;
            }
            p
        })
        .collect()
}

/// Positioning error (mm) at every point for every method and trial.
fn run_positions(spec: &ExperimentSpec, experiment: &str, points: &[Point]) -> Result<Vec<ResultRow>> {
    let anchors = spec.anchors();
    let pipelines = spec
        .algorithms
        .iter()
        .map(|&m| Pipeline::new(spec.config_for(m), anchors.clone()))
        .collect::<Result<Vec<_>>>()?;
    let profile = spec.channel();
    let work: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    type Cell = Vec<(&'static str, Option<f64>)>;
    let cells: Vec<Result<Vec<Cell>>> = with_threads(spec.threads, || {
        work.par_iter()
            .map(|&(c, trial)| -> Result<Vec<Cell>> {
                let key = mix_seed(spec.seed, &[c as u64, trial as u64]);
                let channels = (0..anchors.len())
                    .map(|s| generate_channel(&profile, mix_seed(key, &[STREAM_CHANNEL, s as u64])))
                    .collect::<Result<Vec<_>>>()?;
                let noise = mix_seed(key, &[STREAM_NOISE]);
                Ok(pipelines
                    .iter()
                    .map(|p| {
                        let err = p.locate(&points[c], &channels, noise, None).ok().map(|o| o.error_mm);
                        vec![("error_mm", err)]
                    })
                    .collect())
            })
            .collect()
    })?;
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (ai, mode) in spec.algorithms.iter().enumerate() {
        let r_r = (mode.is_cs()).then_some(spec.r_r[0]);
        for (c, point) in points.iter().enumerate() {
            let trials: Vec<_> = (0..spec.trials)
                .map(|t| cells[c * spec.trials + t][ai].clone())
                .collect();
            let sc = Scenario {
                experiment,
                algorithm: mode.name(),
                r_r,
                snr_db: spec.snr_db,
                at: Some(*point),
                dim: anchors.dim(),
            };
            rows.extend(sc.rows(&trials, &["error_mm"]));
        }
    }
    Ok(rows)
}

/// Error map over the grid cells, plus the same measurement at the anchors'
/// equal-distance point under experiment `grid_2d_probe`.
pub fn run_grid_2d(spec: &ExperimentSpec) -> Result<ResultTable> {
    expect_kind(spec, ExperimentKind::Grid2d)?;
    let cells = grid_cells(&spec.bounds(), spec.resolution);
    let mut rows = run_positions(spec, "grid_2d", &cells)?;
    let probe = equal_distance_point(&spec.anchors())?;
    let mut probe_spec = spec.clone();
    // Distinct seeds from every grid cell.
    probe_spec.seed = mix_seed(spec.seed, &[u64::MAX]);
    rows.extend(run_positions(&probe_spec, "grid_2d_probe", &[probe])?);
    Ok(ResultTable { rows })
}

/// Errors at random tags inside the anchors' hull, with overall summary rows
/// (no coordinates) per method.
pub fn run_room_3d(spec: &ExperimentSpec) -> Result<ResultTable> {
    expect_kind(spec, ExperimentKind::Room3d)?;
    let tags = hull_tags(&spec.anchors(), spec.points, spec.seed);
    let mut rows = run_positions(spec, "room_3d", &tags)?;
    for mode in &spec.algorithms {
        let errs: Vec<f64> = rows
            .iter()
            .filter(|r| r.algorithm == mode.name() && r.trial.is_some() && r.metric == "error_mm")
            .map(|r| r.value)
            .collect();
        if let Some(s) = stats(&errs) {
            let sc = Scenario {
                experiment: "room_3d",
                algorithm: mode.name(),
                r_r: mode.is_cs().then_some(spec.r_r[0]),
                snr_db: spec.snr_db,
                at: None,
                dim: 3,
            };
            rows.push(sc.row(None, "error_mm_overall_median", s.median));
            rows.push(sc.row(None, "error_mm_overall_mean", s.mean));
            rows.push(sc.row(None, "error_mm_overall_std", s.std));
        }
    }
    Ok(ResultTable { rows })
}

fn fmt_opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// CSV text of a table; floats use Rust's shortest round-trip formatting.
pub fn to_csv(table: &ResultTable) -> Result<String> {
    if table.is_empty() {
        return Err(Error::invalid("table", "nothing to export"));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in &table.rows {
        w.write_record([
            r.experiment.clone(),
            r.algorithm.clone(),
            fmt_opt(&r.r_r),
            r.snr_db.to_string(),
            fmt_opt(&r.x_mm),
            fmt_opt(&r.y_mm),
            fmt_opt(&r.z_mm),
            fmt_opt(&r.trial),
            r.metric.clone(),
            r.value.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn from_csv(text: &str) -> Result<ResultTable> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::invalid("csv", format!("unexpected header {}", header.join(","))));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |col: &str| Error::invalid("csv", format!("row {}: bad {col}", line + 2));
        let float = |i: usize| -> Result<f64> { rec[i].parse().map_err(|_| bad(CSV_HEADER[i])) };
        let opt = |i: usize| -> Result<Option<f64>> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                float(i).map(Some)
            }
        };
        rows.push(ResultRow {
            experiment: rec[0].to_string(),
            algorithm: rec[1].to_string(),
            r_r: opt(2)?,
            snr_db: float(3)?,
            x_mm: opt(4)?,
            y_mm: opt(5)?,
            z_mm: opt(6)?,
            trial: if rec[7].is_empty() {
                None
            } else {
                Some(rec[7].parse().map_err(|_| bad("trial"))?)
            },
            metric: rec[8].to_string(),
            value: float(9)?,
        });
    }
    Ok(ResultTable { rows })
}

/// Writes `bytes` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid("path", format!("`{}` names no file", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn export_csv(table: &ResultTable, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, to_csv(table)?.as_bytes())
}

pub fn import_csv(path: impl AsRef<Path>) -> Result<ResultTable> {
    from_csv(&fs::read_to_string(path)?)
}

/// Gnuplot `matrix` blocks of the per-cell mean error, one block per method
/// (separated by two blank lines, so `index` selects them). Rows run along y,
/// columns along x, both ascending.
pub fn to_gnuplot(table: &ResultTable) -> Result<String> {
    let cells: Vec<&ResultRow> = table
        .rows
        .iter()
        .filter(|r| r.experiment == "grid_2d" && r.metric == "error_mm_mean")
        .collect();
    if cells.is_empty() {
        return Err(Error::invalid("table", "no 2D grid rows to export"));
    }
    let mut algorithms: Vec<&str> = Vec::new();
    for r in &cells {
        if !algorithms.contains(&r.algorithm.as_str()) {
            algorithms.push(&r.algorithm);
        }
    }
    let axis = |f: fn(&ResultRow) -> Option<f64>| -> Vec<f64> {
        let mut v: Vec<f64> = cells.iter().filter_map(|r| f(r)).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let (xs, ys) = (axis(|r| r.x_mm), axis(|r| r.y_mm));
    let mut out = String::new();
    for (k, alg) in algorithms.iter().enumerate() {
        if k > 0 {
            out.push_str("\n\n");
        }
        out.push_str(&format!("# {alg}: mean error (mm), {} rows (y) x {} columns (x)\n", ys.len(), xs.len()));
        for y in &ys {
            let line: Vec<String> = xs
                .iter()
                .map(|x| {
                    cells
                        .iter()
                        .find(|r| r.algorithm == *alg && r.x_mm == Some(*x) && r.y_mm == Some(*y))
                        .map(|r| r.value.to_string())
                        .unwrap_or_else(|| "NaN".into())
                })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn export_gnuplot(table: &ResultTable, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, to_gnuplot(table)?.as_bytes())
}
