//! End-to-end localisation: per-station acquisition, reconstruction, arrival
//! detection and the TDOA solve.
//!
//! Each station records a frame that opens a little before the true line of
//! sight arrival (a coarse gate, as a receiver's trigger would provide), so
//! the frame is short while the arrival time stays absolute. Channel delays
//! are excess delays on top of the line-of-sight time of flight.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::acquisition::{make_projection, measure, measurements_for, ProjectionKind, ProjectionMatrix};
use crate::arrival::{default_threshold, detect_leading_peak};
use crate::error::{Error, Result};
use crate::recovery::{
    bcs_with, bp_denoise_with, omp, recon_percentage, BcsOptions, BpOptions, CsUwbOptions, CsUwbSolver,
    OmpStop, ReconResult, Step, SummedStatistics, TemplateDictionary,
};
use crate::sequential::{acquire_sequential, extension_scale, SequentialConfig};
use crate::signal::{
    generate_channel, synthesize_on, ChannelProfile, ChannelRealization, FrameGrid, Overflow, PulseSpec,
    SignalFrame, DEFAULT_DT, DEFAULT_FRAME_LEN,
};
use crate::tdoa::{solve_tdoa, AnchorSet, Point, PositionEstimate, SolveOptions, TdoaProblem, SPEED_OF_LIGHT};

/// Acquisition and reconstruction method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    CsUwb,
    Omp,
    Bp,
    Bcs,
    Sequential,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::CsUwb, Mode::Omp, Mode::Bp, Mode::Bcs, Mode::Sequential];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::CsUwb => "cs_uwb",
            Mode::Omp => "omp",
            Mode::Bp => "bp",
            Mode::Bcs => "bcs",
            Mode::Sequential => "sequential",
        }
    }

    /// Whether the mode acquires compressed measurements.
    pub fn is_cs(&self) -> bool {
        !matches!(self, Mode::Sequential)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::invalid("mode", format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionSettings {
    pub frame_len: usize,
    pub dt: f64,
    pub pulse: PulseSpec,
    /// Reduction ratio `M / N` of the CS modes.
    pub r_r: f64,
    pub projection: ProjectionKind,
    /// SNR of the signal-domain noise (dB); `inf` disables it.
    pub snr_db: f64,
    /// SNR of the measurement-domain noise (dB); `inf` disables it.
    pub n2_snr_db: f64,
    /// Pulse repetition frequency of the sequential sampler (Hz).
    pub f_p: f64,
    /// Relative extension-scale error of the sequential sampler, `K_r / K - 1`.
    pub drift: f64,
    /// Coarse trigger gate (s): frames open at a gate boundary ...
    pub gate: f64,
    /// ... minus this lead (s).
    pub lead: f64,
}

impl Default for AcquisitionSettings {
    fn default() -> Self {
        AcquisitionSettings {
            frame_len: DEFAULT_FRAME_LEN,
            dt: DEFAULT_DT,
            pulse: PulseSpec::default(),
            r_r: 0.3,
            projection: ProjectionKind::Gaussian,
            snr_db: 10.0,
            n2_snr_db: f64::INFINITY,
            f_p: 1e6,
            drift: 0.0,
            gate: 1e-9,
            lead: 1e-9,
        }
    }
}

impl AcquisitionSettings {
    pub fn validate(&self) -> Result<()> {
        self.pulse.validate()?;
        if self.frame_len < 3 {
            return Err(Error::invalid("frame_len", "need at least 3 samples"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        if !(self.r_r > 0.0 && self.r_r <= 1.0) {
            return Err(Error::invalid("r_r", format!("must lie in (0, 1], got {}", self.r_r)));
        }
        if self.snr_db.is_nan() || self.n2_snr_db.is_nan() {
            return Err(Error::invalid("snr_db", "must not be NaN"));
        }
        if !(self.f_p > 0.0 && self.f_p.is_finite()) {
            return Err(Error::invalid("f_p", "must be positive"));
        }
        if !(self.drift > -1.0 && self.drift.is_finite()) {
            return Err(Error::invalid("drift", "must exceed -1"));
        }
        if !(self.gate > 0.0 && self.lead >= 0.0) {
            return Err(Error::invalid("gate", "gate must be positive and lead >= 0"));
        }
        if self.lead + self.gate >= self.frame_len as f64 * self.dt {
            return Err(Error::invalid("lead", "gate plus lead must fit inside the frame"));
        }
        Ok(())
    }

    pub fn measurements(&self) -> usize {
        measurements_for(self.r_r, self.frame_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoverySettings {
    pub bcs: BcsOptions,
    pub bp: BpOptions,
    /// OMP stops at `M / omp_cap_divisor` atoms or once the residual reaches the noise level.
    pub omp_cap_divisor: usize,
}

impl Default for RecoverySettings {
    fn default() -> Self {
        RecoverySettings {
            bcs: BcsOptions::default(),
            bp: BpOptions::default(),
            omp_cap_divisor: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// Arrival-time convergence threshold (s) of the interleaved loop.
    pub epsilon: f64,
    /// Refresh the TDOA solution after every reconstruction step (CS-UWB).
    pub interleave: bool,
    /// Consecutive steps every arrival must stay within `epsilon` before the
    /// interleaved loop stops.
    pub settle: usize,
    /// Arrival = first peak reaching this fraction of the frame's strongest
    /// peak; 1 takes the strongest peak itself.
    pub peak_fraction: f64,
    pub tdoa: SolveOptions,
    pub acquisition: AcquisitionSettings,
    pub recovery: RecoverySettings,
    /// Channel profile for generated channels (tracks).
    pub channel: ChannelProfile,
    pub c: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::CsUwb,
            epsilon: DEFAULT_DT / 30.0,
            interleave: true,
            settle: 30,
            peak_fraction: 0.6,
            tdoa: SolveOptions::default(),
            acquisition: AcquisitionSettings::default(),
            recovery: RecoverySettings::default(),
            channel: ChannelProfile::default(),
            c: SPEED_OF_LIGHT,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        if !(self.peak_fraction > 0.0 && self.peak_fraction <= 1.0) {
            return Err(Error::invalid("peak_fraction", "must lie in (0, 1]"));
        }
        if self.settle == 0 {
            return Err(Error::invalid("settle", "must be at least 1"));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid("c", "must be positive"));
        }
        if self.recovery.omp_cap_divisor == 0 {
            return Err(Error::invalid("omp_cap_divisor", "must be at least 1"));
        }
        self.channel.validate()?;
        self.acquisition.validate()
    }
}

/// SplitMix64 finaliser; the seed-mixing function used throughout.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed from a master seed and a path of indices.
pub fn mix_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

const PROJECTION_STREAM: u64 = 0x5052_4f4a;

#[derive(Debug, Clone, PartialEq)]
pub struct StationDiagnostics {
    pub station: usize,
    /// True line-of-sight arrival (s).
    pub true_arrival: f64,
    /// Estimated arrival (s).
    pub arrival: f64,
    /// Start of the station's frame (s).
    pub window_start: f64,
    /// Reconstruction percentage of the CS frame, when there is one.
    pub p_re: Option<f64>,
    pub recon_iterations: usize,
    /// Arrival after each reconstruction step (interleaved mode only).
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocateOutcome {
    pub estimate: PositionEstimate,
    /// Distance from the truth in the solve dimension (mm).
    pub error_mm: f64,
    pub stations: Vec<StationDiagnostics>,
    /// TDOA solves run inside the interleaved loop.
    pub interleaved_solves: usize,
}

/// Fixed per-station hardware: projection matrices, and for CS-UWB the
/// projected dictionaries.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    anchors: AnchorSet,
    projections: Vec<ProjectionMatrix>,
    dict: Option<TemplateDictionary>,
    psis: Vec<DMatrix<f64>>,
}

struct Acquired {
    truth: SignalFrame,
    y: DVector<f64>,
    beta: f64,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, anchors: AnchorSet) -> Result<Self> {
        cfg.validate()?;
        let acq = &cfg.acquisition;
        let (m, n) = (acq.measurements(), acq.frame_len);
        let projections = if cfg.mode.is_cs() {
            (0..anchors.len())
                .map(|i| make_projection(m, n, acq.projection, mix_seed(cfg.seed, &[PROJECTION_STREAM, i as u64])))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let (dict, psis) = if cfg.mode == Mode::CsUwb {
            let dict = TemplateDictionary::new(n, acq.dt, acq.pulse)?;
            let psis = projections
                .iter()
                .map(|p| dict.project(&p.entries))
                .collect::<Result<Vec<_>>>()?;
            (Some(dict), psis)
        } else {
            (None, Vec::new())
        };
        Ok(Pipeline {
            cfg,
            anchors,
            projections,
            dict,
            psis,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    fn window_start(&self, toa: f64) -> f64 {
        let acq = &self.cfg.acquisition;
        (acq.gate * (toa / acq.gate).floor() - acq.lead).max(0.0)
    }

    /// Simulates one position fix. `noise_seed` drives all per-station noise.
    pub fn locate(
        &self,
        tag: &Point,
        channels: &[ChannelRealization],
        noise_seed: u64,
        initial: Option<Point>,
    ) -> Result<LocateOutcome> {
        let n_st = self.anchors.len();
        if channels.len() != n_st {
            return Err(Error::DimensionMismatch(format!(
                "{} channels for {n_st} stations",
                channels.len()
            )));
        }
        let acq = &self.cfg.acquisition;
        let c = self.cfg.c;
        let mut diags = Vec::with_capacity(n_st);
        let mut delayed = Vec::with_capacity(n_st);
        for (i, ch) in channels.iter().enumerate() {
            let toa = self.anchors.range(i, tag) / c;
            let t0 = self.window_start(toa);
            delayed.push(ch.delayed(toa).map_err(|e| e.at_station(i))?);
            diags.push(StationDiagnostics {
                station: i,
                true_arrival: toa,
                arrival: f64::NAN,
                window_start: t0,
                p_re: None,
                recon_iterations: 0,
                trace: Vec::new(),
            });
        }
        let station_seed = |i: usize| mix_seed(noise_seed, &[i as u64]);
        let mut interleaved_solves = 0;
        let mut guess = initial;

        match self.cfg.mode {
            Mode::Sequential => {
                for (i, d) in diags.iter_mut().enumerate() {
                    let mut seq = SequentialConfig::for_grid(acq.f_p, acq.dt, acq.frame_len).starting_at(d.window_start);
                    if acq.drift != 0.0 {
                        seq = seq.with_scale_error(acq.drift)?;
                    }
                    let k = extension_scale(&seq)?.nominal;
                    let record = acquire_sequential(&delayed[i], &acq.pulse, &seq, acq.snr_db, station_seed(i))
                        .map_err(|e| e.at_station(i))?;
                    d.arrival = self.arrival(&record).map_err(|e| e.at_station(i))? / k;
                }
            }
            Mode::Omp | Mode::Bp | Mode::Bcs => {
                for (i, d) in diags.iter_mut().enumerate() {
                    let a = self.acquire(i, &delayed[i], d.window_start, station_seed(i))?;
                    let phi = &self.projections[i].entries;
                    let recon = reconstruct_canonical(self.cfg.mode, &a.y, phi, a.beta, &self.cfg.recovery)
                        .map_err(|e| e.at_station(i))?;
                    d.recon_iterations = recon.iterations;
                    d.p_re = recon_percentage(&a.truth.samples, &recon.s_hat).ok();
                    d.arrival = self
                        .arrival(&a.truth.with_samples(recon.s_hat))
                        .map_err(|e| e.at_station(i))?;
                }
            }
            Mode::CsUwb => {
                let mut acquired = Vec::with_capacity(n_st);
                for (i, d) in diags.iter().enumerate() {
                    acquired.push(self.acquire(i, &delayed[i], d.window_start, station_seed(i))?);
                }
                let ys: Vec<DVector<f64>> = acquired.iter().map(|a| a.y.clone()).collect();
                let betas: Vec<f64> = acquired.iter().map(|a| a.beta).collect();
                let dict = self.dict.as_ref().expect("dictionary built for cs_uwb");
                let opts = CsUwbOptions {
                    bcs: self.cfg.recovery.bcs,
                    offsets: None,
                };
                let mut solver =
                    CsUwbSolver::from_projected(self.psis.clone(), &ys, dict, &betas, &opts, SummedStatistics)?;
                let mut prev: Option<Vec<f64>> = None;
                let mut stable = 0;
                loop {
                    let step = solver.step()?;
                    let finished = matches!(step, Step::Converged | Step::IterationCap);
                    if self.cfg.interleave && !finished {
                        let arrivals: Option<Vec<f64>> = (0..n_st)
                            .map(|i| {
                                self.arrival(&acquired[i].truth.with_samples(solver.frame(i))).ok()
                            })
                            .collect();
                        if let Some(arrivals) = arrivals {
                            for (d, t) in diags.iter_mut().zip(&arrivals) {
                                d.trace.push(*t);
                            }
                            let problem = TdoaProblem::from_arrivals(self.anchors.clone(), &arrivals, c)?;
                            if let Ok(est) = solve_tdoa(&problem, guess, &self.cfg.tdoa) {
                                interleaved_solves += 1;
                                if est.converged {
                                    guess = Some(est.position);
                                }
                            }
                            let settled = prev.as_ref().is_some_and(|p| {
                                p.iter().zip(&arrivals).all(|(a, b)| (a - b).abs() < self.cfg.epsilon)
                            });
                            stable = if settled { stable + 1 } else { 0 };
                            prev = Some(arrivals);
                            if stable >= self.cfg.settle {
                                break;
                            }
                        }
                    }
                    if finished {
                        break;
                    }
                }
                for (i, d) in diags.iter_mut().enumerate() {
                    let frame = solver.frame(i);
                    d.recon_iterations = solver.engine().iterations();
                    d.p_re = recon_percentage(&acquired[i].truth.samples, &frame).ok();
                    d.arrival = self
                        .arrival(&acquired[i].truth.with_samples(frame))
                        .map_err(|e| e.at_station(i))?;
                }
            }
        }

        let arrivals: Vec<f64> = diags.iter().map(|d| d.arrival).collect();
        let problem = TdoaProblem::from_arrivals(self.anchors.clone(), &arrivals, c)?;
        let estimate = solve_tdoa(&problem, guess, &self.cfg.tdoa)?;
        Ok(LocateOutcome {
            error_mm: self.anchors.separation(&estimate.position, tag),
            estimate,
            stations: diags,
            interleaved_solves,
        })
    }

    fn arrival(&self, frame: &SignalFrame) -> Result<f64> {
        Ok(detect_leading_peak(frame, default_threshold(frame), self.cfg.peak_fraction)?.time)
    }

    fn acquire(&self, i: usize, channel: &ChannelRealization, t0: f64, seed: u64) -> Result<Acquired> {
        let acq = &self.cfg.acquisition;
        let grid = FrameGrid::new(acq.frame_len, acq.dt).starting_at(t0);
        let truth = synthesize_on(channel, &acq.pulse, &grid, Overflow::Clip).map_err(|e| e.at_station(i))?;
        let meas = measure(&self.projections[i], &truth, acq.snr_db, acq.n2_snr_db, seed)
            .map_err(|e| e.at_station(i))?;
        // A noiseless receiver still needs a positive noise scale.
        let floor = 1e-6 * meas.y.norm() / (meas.y.len() as f64).sqrt();
        let beta = meas.beta.max(floor).max(f64::MIN_POSITIVE);
        Ok(Acquired {
            truth,
            y: meas.y,
            beta,
        })
    }
}

/// Reconstruction in the sample basis by OMP, BP or plain BCS. OMP keeps its
/// partial solution when the active columns become dependent.
pub fn reconstruct_canonical(
    mode: Mode,
    y: &DVector<f64>,
    phi: &DMatrix<f64>,
    beta: f64,
    recovery: &RecoverySettings,
) -> Result<ReconResult> {
    match mode {
        Mode::Omp => {
            let m = phi.nrows();
            let stop = OmpStop {
                max_nonzeros: Some((m / recovery.omp_cap_divisor.max(1)).max(1)),
                residual_tol: Some(beta * (m as f64).sqrt()),
            };
            match omp(y, phi, stop) {
                Err(Error::RankDeficient { partial }) => Ok(*partial),
                r => r,
            }
        }
        Mode::Bp => bp_denoise_with(y, phi, &recovery.bp),
        Mode::Bcs => Ok(bcs_with(y, phi, beta, &recovery.bcs)?.0),
        other => Err(Error::invalid("mode", format!("{other} does not reconstruct in the sample basis"))),
    }
}

/// One position fix with freshly built station hardware.
pub fn locate_once(
    true_tag: &Point,
    anchors: &AnchorSet,
    channels: &[ChannelRealization],
    cfg: &PipelineConfig,
) -> Result<LocateOutcome> {
    Pipeline::new(cfg.clone(), anchors.clone())?.locate(true_tag, channels, mix_seed(cfg.seed, &[1]), None)
}

/// Channels for every station of waypoint `index`, drawn from `cfg.channel`.
pub fn track_channels(cfg: &PipelineConfig, stations: usize, index: usize) -> Result<Vec<ChannelRealization>> {
    (0..stations)
        .map(|i| generate_channel(&cfg.channel, mix_seed(cfg.seed, &[2, index as u64, i as u64])))
        .collect()
}

/// Solves each waypoint in turn, starting each TDOA solve from the previous
/// solution. Failures are recorded and the track continues.
pub fn locate_track(waypoints: &[Point], anchors: &AnchorSet, cfg: &PipelineConfig) -> Result<Vec<Result<LocateOutcome>>> {
    locate_track_with(waypoints, anchors, cfg, true)
}

/// As [`locate_track`]; `warm_start = false` starts every solve from the default guess.
pub fn locate_track_with(
    waypoints: &[Point],
    anchors: &AnchorSet,
    cfg: &PipelineConfig,
    warm_start: bool,
) -> Result<Vec<Result<LocateOutcome>>> {
    if waypoints.is_empty() {
        return Ok(Vec::new());
    }
    let pipeline = Pipeline::new(cfg.clone(), anchors.clone())?;
    let mut previous: Option<Point> = None;
    let mut out = Vec::with_capacity(waypoints.len());
    for (k, tag) in waypoints.iter().enumerate() {
        let channels = track_channels(cfg, anchors.len(), k)?;
        let initial = if warm_start { previous } else { None };
        let result = pipeline.locate(tag, &channels, mix_seed(cfg.seed, &[3, k as u64]), initial);
        if let Ok(o) = &result {
            if o.estimate.converged {
                previous = Some(o.estimate.position);
            }
        }
        out.push(result);
    }
    Ok(out)
}
