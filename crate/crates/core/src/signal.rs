//! Ground-truth UWB frames: Gaussian pulse, multipath channels, sampling and noise.
//!
//! Times are in seconds throughout. A frame is one pulse-repetition period
//! sampled on a uniform grid `t0 + n * dt`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default frame length in samples.
pub const DEFAULT_FRAME_LEN: usize = 1024;
/// Default grid spacing: 10 ps, about 3 mm of range per bin.
pub const DEFAULT_DT: f64 = 10e-12;
/// Gaussian width parameter of the default pulse; +-3 sigma spans 300 ps.
pub const DEFAULT_SIGMA: f64 = 50e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSpec {
    pub sigma: f64,
    pub amplitude: f64,
}

impl PulseSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        let spec = PulseSpec {
            sigma,
            amplitude: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma", format!("must be positive, got {}", self.sigma)));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::invalid("amplitude", "must be finite"));
        }
        Ok(())
    }
}

impl Default for PulseSpec {
    fn default() -> Self {
        PulseSpec {
            sigma: DEFAULT_SIGMA,
            amplitude: 1.0,
        }
    }
}

/// `amplitude * exp(-t^2 / (2 sigma^2))`.
pub fn gaussian_pulse(t: f64, spec: &PulseSpec) -> f64 {
    spec.amplitude * (-t * t / (2.0 * spec.sigma * spec.sigma)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationPath {
    pub amplitude: f64,
    pub delay: f64,
}

/// Multipath channel as a list of (amplitude, delay) paths sorted by delay.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelRealization {
    paths: Vec<PropagationPath>,
}

impl ChannelRealization {
    /// Builds a realization, sorting paths by delay. Negative or non-finite
    /// delays and non-finite amplitudes are rejected.
    pub fn new(mut paths: Vec<PropagationPath>) -> Result<Self> {
        for p in &paths {
            if !(p.delay >= 0.0 && p.delay.is_finite()) {
                return Err(Error::invalid("delay", format!("must be finite and >= 0, got {}", p.delay)));
            }
            if !p.amplitude.is_finite() {
                return Err(Error::invalid("amplitude", "must be finite"));
            }
        }
        paths.sort_by(|a, b| a.delay.total_cmp(&b.delay));
        Ok(ChannelRealization { paths })
    }

    pub fn single(amplitude: f64, delay: f64) -> Result<Self> {
        Self::new(vec![PropagationPath { amplitude, delay }])
    }

    pub fn paths(&self) -> &[PropagationPath] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// True when the earliest path also has the largest magnitude.
    pub fn is_los(&self) -> bool {
        match self.paths.first() {
            None => true,
            Some(first) => self
                .paths
                .iter()
                .all(|p| p.amplitude.abs() <= first.amplitude.abs()),
        }
    }

    /// Adds `offset` seconds to every delay.
    pub fn delayed(&self, offset: f64) -> Result<Self> {
        Self::new(
            self.paths
                .iter()
                .map(|p| PropagationPath {
                    amplitude: p.amplitude,
                    delay: p.delay + offset,
                })
                .collect(),
        )
    }

    /// Multiplies every amplitude by `gain`.
    pub fn scaled(&self, gain: f64) -> Self {
        ChannelRealization {
            paths: self
                .paths
                .iter()
                .map(|p| PropagationPath {
                    amplitude: p.amplitude * gain,
                    delay: p.delay,
                })
                .collect(),
        }
    }

    /// Continuous-time received waveform at time `t`.
    pub fn waveform(&self, t: f64, pulse: &PulseSpec) -> f64 {
        self.paths
            .iter()
            .map(|p| p.amplitude * gaussian_pulse(t - p.delay, pulse))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalFrame {
    pub samples: Vec<f64>,
    pub dt: f64,
    pub t0: f64,
}

impl SignalFrame {
    pub fn new(samples: Vec<f64>, dt: f64, t0: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("samples", "frame needs at least one sample"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("samples", "non-finite sample"));
        }
        Ok(SignalFrame { samples, dt, t0 })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time_of(&self, index: f64) -> f64 {
        self.t0 + index * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + self.samples.len() as f64 * self.dt
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn with_samples(&self, samples: Vec<f64>) -> Self {
        SignalFrame {
            samples,
            dt: self.dt,
            t0: self.t0,
        }
    }
}

pub(crate) fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// What to do with a path whose delay falls outside the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Overflow {
    #[default]
    Error,
    /// Drop the path from the sum.
    Clip,
}

/// Sampling grid of a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGrid {
    pub len: usize,
    pub dt: f64,
    pub t0: f64,
}

impl FrameGrid {
    pub fn new(len: usize, dt: f64) -> Self {
        FrameGrid { len, dt, t0: 0.0 }
    }

    pub fn starting_at(mut self, t0: f64) -> Self {
        self.t0 = t0;
        self
    }

    pub fn end(&self) -> f64 {
        self.t0 + self.len as f64 * self.dt
    }
}

impl Default for FrameGrid {
    fn default() -> Self {
        FrameGrid::new(DEFAULT_FRAME_LEN, DEFAULT_DT)
    }
}

/// Samples the multipath waveform on `n` points spaced `dt` apart from t = 0.
pub fn synthesize_frame(
    channel: &ChannelRealization,
    pulse: &PulseSpec,
    n: usize,
    dt: f64,
) -> Result<SignalFrame> {
    synthesize_on(channel, pulse, &FrameGrid::new(n, dt), Overflow::Error)
}

pub fn synthesize_on(
    channel: &ChannelRealization,
    pulse: &PulseSpec,
    grid: &FrameGrid,
    overflow: Overflow,
) -> Result<SignalFrame> {
    pulse.validate()?;
    if grid.len == 0 {
        return Err(Error::invalid("n", "frame needs at least one sample"));
    }
    if !(grid.dt > 0.0 && grid.dt.is_finite()) {
        return Err(Error::invalid("dt", format!("must be positive, got {}", grid.dt)));
    }
    let (start, end) = (grid.t0, grid.end());
    let mut samples = vec![0.0; grid.len];
    for path in channel.paths() {
        if path.delay < start || path.delay >= end {
            match overflow {
                Overflow::Error => {
                    return Err(Error::PathOutsideFrame {
                        delay: path.delay,
                        start,
                        end,
                    })
                }
                Overflow::Clip => continue,
            }
        }
        for (n, s) in samples.iter_mut().enumerate() {
            let t = grid.t0 + n as f64 * grid.dt;
            *s += path.amplitude * gaussian_pulse(t - path.delay, pulse);
        }
    }
    SignalFrame::new(samples, grid.dt, grid.t0)
}

/// Noise variance giving `snr_db` against a signal of mean power `power`.
pub fn noise_variance(power: f64, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        power / 10f64.powf(snr_db / 10.0)
    }
}

pub(crate) fn gaussian_vector(len: usize, std: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..len)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Adds white Gaussian noise at `snr_db` relative to the frame's mean power.
/// `f64::INFINITY` means noiseless.
pub fn add_noise(frame: &SignalFrame, snr_db: f64, seed: u64) -> Result<SignalFrame> {
    if snr_db.is_nan() {
        return Err(Error::invalid("snr_db", "NaN"));
    }
    if snr_db == f64::INFINITY {
        return Ok(frame.clone());
    }
    let power = frame.mean_power();
    if power == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let std = noise_variance(power, snr_db).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = gaussian_vector(frame.len(), std, &mut rng);
    Ok(frame.with_samples(
        frame
            .samples
            .iter()
            .zip(noise)
            .map(|(s, n)| s + n)
            .collect(),
    ))
}

/// Distribution of the number of paths in a generated channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathCount {
    Fixed(usize),
    /// Uniform over `min..=max`.
    Range { min: usize, max: usize },
}

/// Parameters of the exponential-decay multipath generator.
///
/// The first path sits at `first_delay` with unit amplitude. The remaining
/// paths get excess delays uniform in `[min_excess, delay_spread]`, signs
/// uniform, and magnitudes `relative_gain * u * exp(-excess / decay)` with
/// `u ~ U(0.5, 1)`. In LOS mode no later path may reach the first one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelProfile {
    pub los: bool,
    pub paths: PathCount,
    pub first_delay: f64,
    pub decay: f64,
    pub delay_spread: f64,
    pub min_excess: f64,
    pub relative_gain: f64,
}

/// Largest magnitude a later path may have relative to the LOS path.
const LOS_CAP: f64 = 0.95;

impl Default for ChannelProfile {
    fn default() -> Self {
        ChannelProfile {
            los: true,
            paths: PathCount::Range { min: 4, max: 10 },
            first_delay: 0.0,
            decay: 2.0e-9,
            delay_spread: 6.0e-9,
            min_excess: 0.5e-9,
            relative_gain: 0.7,
        }
    }
}

impl ChannelProfile {
    /// Single unit path at `delay`.
    pub fn line_of_sight_only(delay: f64) -> Self {
        ChannelProfile {
            los: true,
            paths: PathCount::Fixed(1),
            first_delay: delay,
            ..Default::default()
        }
    }

    /// Dense, slowly decaying multipath: 50-100 paths over 9 ns with later
    /// paths nearly as strong as the first. Used for reconstruction sweeps,
    /// where the frame should be hard to compress.
    pub fn dense() -> Self {
        ChannelProfile {
            los: true,
            paths: PathCount::Range { min: 50, max: 100 },
            first_delay: 0.0,
            decay: 6.0e-9,
            delay_spread: 9.0e-9,
            min_excess: 0.2e-9,
            relative_gain: 0.95,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(Error::invalid("decay", format!("must be positive, got {}", self.decay)));
        }
        if !(self.first_delay >= 0.0 && self.first_delay.is_finite()) {
            return Err(Error::invalid("first_delay", "must be finite and >= 0"));
        }
        if !(self.min_excess >= 0.0 && self.delay_spread >= self.min_excess) {
            return Err(Error::invalid(
                "delay_spread",
                "need 0 <= min_excess <= delay_spread",
            ));
        }
        if !(self.relative_gain >= 0.0 && self.relative_gain.is_finite()) {
            return Err(Error::invalid("relative_gain", "must be finite and >= 0"));
        }
        match self.paths {
            PathCount::Fixed(_) => {}
            PathCount::Range { min, max } => {
                if min > max {
                    return Err(Error::invalid("paths", format!("min {min} > max {max}")));
                }
            }
        }
        Ok(())
    }
}

/// Draws a channel realization from `profile`; identical seeds give identical channels.
pub fn generate_channel(profile: &ChannelProfile, seed: u64) -> Result<ChannelRealization> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = match profile.paths {
        PathCount::Fixed(n) => n,
        PathCount::Range { min, max } => rng.random_range(min..=max),
    };
    if count == 0 {
        return Ok(ChannelRealization::default());
    }
    let mut paths = Vec::with_capacity(count);
    paths.push(PropagationPath {
        amplitude: 1.0,
        delay: profile.first_delay,
    });
    for _ in 1..count {
        let excess = if profile.delay_spread > profile.min_excess {
            rng.random_range(profile.min_excess..=profile.delay_spread)
        } else {
            profile.min_excess
        };
        let fade: f64 = rng.random_range(0.5..1.0);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let mut magnitude = profile.relative_gain * fade * (-excess / profile.decay).exp();
        if profile.los {
            magnitude = magnitude.min(LOS_CAP);
        }
        paths.push(PropagationPath {
            amplitude: sign * magnitude,
            delay: profile.first_delay + excess,
        });
    }
    ChannelRealization::new(paths)
}

/// Parses `delay_seconds,amplitude` rows; `#` starts a comment.
pub fn parse_channel(text: &str) -> Result<ChannelRealization> {
    let mut paths = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| Error::ChannelFile {
            line: i + 1,
            reason,
        };
        let mut fields = line.split(',').map(str::trim);
        let (Some(d), Some(a), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(bad(format!("expected `delay,amplitude`, got `{line}`")));
        };
        let delay: f64 = d.parse().map_err(|_| bad(format!("bad delay `{d}`")))?;
        let amplitude: f64 = a.parse().map_err(|_| bad(format!("bad amplitude `{a}`")))?;
        if !delay.is_finite() || delay < 0.0 {
            return Err(bad(format!("delay must be finite and >= 0, got {delay}")));
        }
        if !amplitude.is_finite() {
            return Err(bad(format!("amplitude must be finite, got {amplitude}")));
        }
        paths.push(PropagationPath { amplitude, delay });
    }
    if paths.is_empty() {
        return Err(Error::ChannelFile {
            line: 0,
            reason: "no paths".into(),
        });
    }
    ChannelRealization::new(paths)
}

pub fn load_channel_file(path: impl AsRef<Path>) -> Result<ChannelRealization> {
    parse_channel(&std::fs::read_to_string(path)?)
}
