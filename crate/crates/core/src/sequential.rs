//! Equivalent-time (sequential) acquisition with a drifting sampling clock.
//!
//! A sampler running at `f_s`, slightly off the pulse repetition frequency
//! `f_p`, lands a little later inside each successive period, so one period
//! of the signal is traced out over many periods of wall-clock time. The
//! record is the waveform stretched by `K = f_p / |f_s - f_p|`. A clock drift
//! `delta_f` changes the true stretch to `K_r`; a receiver that still divides
//! by `K` sees every arrival time scaled by `K_r / K`.

use crate::arrival::detect_arrival_default;
use crate::error::{Error, Result};
use crate::signal::{add_noise, ChannelRealization, PulseSpec, SignalFrame};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequentialConfig {
    /// Pulse repetition frequency (Hz).
    pub f_p: f64,
    /// Nominal sampling frequency (Hz).
    pub f_s: f64,
    /// Signed clock drift (Hz); the sampler actually runs at `f_s + delta_f`.
    pub delta_f: f64,
    pub n_samples: usize,
    /// Equivalent time (s, nominal scale) at which the record window opens.
    pub window_start: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtensionScale {
    /// Scale without drift, `K`.
    pub nominal: f64,
    /// Scale with drift, `K_r`.
    pub actual: f64,
    /// `K_r - K`.
    pub delta: f64,
}

impl ExtensionScale {
    /// `K_r / K`, the factor applied to every arrival time.
    pub fn bias(&self) -> f64 {
        self.actual / self.nominal
    }
}

/// `|f_s f_p / (f_s - f_p)|`.
pub fn equivalent_rate(f_p: f64, f_s: f64) -> Result<f64> {
    if !(f_p > 0.0 && f_s > 0.0) {
        return Err(Error::invalid("f_p/f_s", "frequencies must be positive"));
    }
    if f_s == f_p {
        return Err(Error::invalid("f_s", "equals f_p; equivalent rate is infinite"));
    }
    Ok((f_s * f_p / (f_s - f_p)).abs())
}

impl SequentialConfig {
    /// Sampler below `f_p` whose nominal equivalent-time step is exactly `dt`.
    pub fn for_grid(f_p: f64, dt: f64, n_samples: usize) -> Self {
        SequentialConfig {
            f_p,
            f_s: 1.0 / (1.0 / f_p + dt),
            delta_f: 0.0,
            n_samples,
            window_start: 0.0,
        }
    }

    /// Sets `delta_f` so that `K_r = (1 + ratio) K`.
    pub fn with_scale_error(mut self, ratio: f64) -> Result<Self> {
        if !(ratio > -1.0 && ratio.is_finite()) {
            return Err(Error::invalid("ratio", format!("must exceed -1, got {ratio}")));
        }
        let offset = self.f_s - self.f_p;
        self.delta_f = offset / (1.0 + ratio) - offset;
        self.validate()?;
        Ok(self)
    }

    pub fn starting_at(mut self, window_start: f64) -> Self {
        self.window_start = window_start;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_p > 0.0 && self.f_p.is_finite()) {
            return Err(Error::invalid("f_p", format!("must be positive, got {}", self.f_p)));
        }
        if !(self.f_s > 0.0 && self.f_s.is_finite()) {
            return Err(Error::invalid("f_s", format!("must be positive, got {}", self.f_s)));
        }
        if self.f_s == self.f_p {
            return Err(Error::invalid("f_s", "must differ from f_p"));
        }
        if !(self.delta_f.abs() < (self.f_s - self.f_p).abs()) {
            return Err(Error::invalid(
                "delta_f",
                format!(
                    "|delta_f| = {} must stay below |f_s - f_p| = {}",
                    self.delta_f.abs(),
                    (self.f_s - self.f_p).abs()
                ),
            ));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples", "must be at least 1"));
        }
        if !(self.window_start >= 0.0 && self.window_start.is_finite()) {
            return Err(Error::invalid("window_start", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn actual_sampling_rate(&self) -> f64 {
        self.f_s + self.delta_f
    }

    /// Equivalent-time step the receiver assumes, `1 / f_eq`.
    pub fn nominal_step(&self) -> f64 {
        (1.0 / self.f_s - 1.0 / self.f_p).abs()
    }

    /// Equivalent-time step the sampler actually takes.
    pub fn actual_step(&self) -> f64 {
        (1.0 / self.actual_sampling_rate() - 1.0 / self.f_p).abs()
    }
}

/// `K = f_p / |f_s - f_p|` and `K_r = f_p / |f_s + delta_f - f_p|`.
pub fn extension_scale(cfg: &SequentialConfig) -> Result<ExtensionScale> {
    cfg.validate()?;
    let nominal = cfg.f_p / (cfg.f_s - cfg.f_p).abs();
    let denom = (cfg.actual_sampling_rate() - cfg.f_p).abs();
    if denom == 0.0 {
        return Err(Error::invalid("delta_f", "drift cancels the frequency offset"));
    }
    let actual = cfg.f_p / denom;
    Ok(ExtensionScale {
        nominal,
        actual,
        delta: actual - nominal,
    })
}

/// Simulates the stretched record `r(n)`.
///
/// Sample `n` of the record is taken at wall-clock time `n / (f_s + delta_f)`
/// and sees the periodic waveform at `n * step mod 1/f_p`, where `step` is the
/// drifted equivalent-time step. The window opens at the first index whose
/// nominal equivalent time reaches `window_start`. When `f_s > f_p` the
/// sampler sweeps backwards through the period; the record is returned in
/// forward equivalent-time order. The frame's `dt` and `t0` are wall-clock.
pub fn acquire_sequential(
    channel: &ChannelRealization,
    pulse: &PulseSpec,
    cfg: &SequentialConfig,
    snr_db: f64,
    seed: u64,
) -> Result<SignalFrame> {
    cfg.validate()?;
    pulse.validate()?;
    let period = 1.0 / cfg.f_p;
    let step = cfg.actual_step();
    let start = (cfg.window_start / cfg.nominal_step()).ceil() as u64;
    let samples: Vec<f64> = (0..cfg.n_samples as u64)
        .map(|k| {
            let t = ((start + k) as f64 * step).rem_euclid(period);
            channel.waveform(t, pulse) + channel.waveform(t - period, pulse)
        })
        .collect();
    let wall_dt = 1.0 / cfg.actual_sampling_rate();
    let record = SignalFrame::new(samples, wall_dt, start as f64 * wall_dt)?;
    add_noise(&record, snr_db, seed)
}

/// Arrival time implied by a stretched record when the receiver assumes scale `assumed_k`.
pub fn estimate_arrival_sequential(record: &SignalFrame, assumed_k: f64) -> Result<f64> {
    if !(assumed_k > 0.0 && assumed_k.is_finite()) {
        return Err(Error::invalid("assumed_k", format!("must be positive, got {assumed_k}")));
    }
    Ok(detect_arrival_default(record)?.time / assumed_k)
}
