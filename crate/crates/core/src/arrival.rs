//! Pulse arrival time from a sampled frame.
//!
//! Under line-of-sight the first arriving path is also the strongest, so the
//! arrival is the global maximum, refined below one bin by fitting a parabola
//! to the log-amplitudes of the three samples around it. For a Gaussian pulse
//! the log-amplitude is exactly quadratic and the fit has no bias.

use crate::error::{Error, Result};
use crate::signal::SignalFrame;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalEstimate {
    pub time: f64,
    pub peak_index: usize,
    pub amplitude: f64,
    /// Whether a sub-bin offset was applied.
    pub refined: bool,
}

impl ArrivalEstimate {
    /// Fractional grid position of the refined peak.
    pub fn fractional_index(&self, frame: &SignalFrame) -> f64 {
        (self.time - frame.t0) / frame.dt
    }
}

/// Four times the median absolute sample.
pub fn default_threshold(frame: &SignalFrame) -> f64 {
    let mut mags: Vec<f64> = frame.samples.iter().map(|s| s.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let n = mags.len();
    let median = if n % 2 == 1 {
        mags[n / 2]
    } else {
        0.5 * (mags[n / 2 - 1] + mags[n / 2])
    };
    4.0 * median
}

pub fn detect_arrival(frame: &SignalFrame, min_amplitude: f64) -> Result<ArrivalEstimate> {
    let x = &frame.samples;
    let (peak_index, amplitude) = x
        .iter()
        .copied()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |best, (i, v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        });
    if !(amplitude > min_amplitude) {
        return Err(Error::NoPulse {
            threshold: min_amplitude,
        });
    }
    let (offset, refined) = if peak_index > 0 && peak_index + 1 < x.len() {
        (
            vertex_offset(x[peak_index - 1], amplitude, x[peak_index + 1]),
            true,
        )
    } else {
        (0.0, false)
    };
    Ok(ArrivalEstimate {
        time: frame.time_of(peak_index as f64 + offset),
        peak_index,
        amplitude,
        refined,
    })
}

pub fn detect_arrival_default(frame: &SignalFrame) -> Result<ArrivalEstimate> {
    detect_arrival(frame, default_threshold(frame))
}

/// First local maximum reaching `fraction` of the global maximum (and above
/// `min_amplitude`), refined like [`detect_arrival`]. Later multipath can pile
/// up into a peak above the line-of-sight pulse; the leading edge is still the
/// first strong peak. `fraction >= 1` reduces to [`detect_arrival`].
pub fn detect_leading_peak(frame: &SignalFrame, min_amplitude: f64, fraction: f64) -> Result<ArrivalEstimate> {
    let global = detect_arrival(frame, min_amplitude)?;
    if fraction >= 1.0 {
        return Ok(global);
    }
    let x = &frame.samples;
    let level = (fraction * global.amplitude).max(min_amplitude);
    let peak_index = (0..global.peak_index)
        .find(|&i| {
            x[i] >= level && (i == 0 || x[i] > x[i - 1]) && x[i] >= x[i + 1]
        })
        .unwrap_or(global.peak_index);
    let amplitude = x[peak_index];
    let (offset, refined) = if peak_index > 0 && peak_index + 1 < x.len() {
        (vertex_offset(x[peak_index - 1], amplitude, x[peak_index + 1]), true)
    } else {
        (0.0, false)
    };
    Ok(ArrivalEstimate {
        time: frame.time_of(peak_index as f64 + offset),
        peak_index,
        amplitude,
        refined,
    })
}

/// Offset in bins of the vertex of the parabola through three samples
/// centered on a local maximum. Uses log-amplitudes when all are positive.
fn vertex_offset(left: f64, center: f64, right: f64) -> f64 {
    let (l, c, r) = if left > 0.0 && right > 0.0 {
        (left.ln(), center.ln(), right.ln())
    } else {
        (left, center, right)
    };
    let curvature = l - 2.0 * c + r;
    if curvature >= 0.0 || !curvature.is_finite() {
        return 0.0;
    }
    (0.5 * (l - r) / curvature).clamp(-0.5, 0.5)
}

/// `t_j - t_i`.
pub fn time_difference(t_j: f64, t_i: f64) -> f64 {
    t_j - t_i
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{synthesize_frame, ChannelRealization, PropagationPath, PulseSpec, DEFAULT_DT};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn on_grid_pulse() {
        let ch = ChannelRealization::single(1.0, 417.0 * DEFAULT_DT).unwrap();
        let f = synthesize_frame(&ch, &PulseSpec::default(), 1024, DEFAULT_DT).unwrap();
        let a = detect_arrival_default(&f).unwrap();
        assert_eq!(a.peak_index, 417);
        assert!((a.time - 417.0 * DEFAULT_DT).abs() < 1e-18);
        assert!(a.refined);
    }

    #[test]
    fn picks_the_strongest_pulse() {
        let ch = ChannelRealization::new(vec![
            PropagationPath { amplitude: 1.0, delay: 2e-9 },
            PropagationPath { amplitude: 0.6, delay: 5e-9 },
        ])
        .unwrap();
        let f = synthesize_frame(&ch, &PulseSpec::default(), 1024, DEFAULT_DT).unwrap();
        assert_eq!(detect_arrival_default(&f).unwrap().peak_index, 200);
    }

    #[test]
    fn zero_frame_has_no_pulse() {
        let f = SignalFrame::new(vec![0.0; 32], DEFAULT_DT, 0.0).unwrap();
        assert!(matches!(detect_arrival_default(&f), Err(Error::NoPulse { .. })));
    }

    #[test]
    fn edge_peak_is_not_refined() {
        let f = SignalFrame::new(vec![3.0, 1.0, 0.5], 1.0, 0.0).unwrap();
        let a = detect_arrival(&f, 0.0).unwrap();
        assert_eq!((a.peak_index, a.refined, a.time), (0, false, 0.0));
    }

    #[test]
    fn sub_bin_accuracy_off_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pulse = PulseSpec::new(10.0 * DEFAULT_DT).unwrap();
        for _ in 0..100 {
            let t: f64 = rng.random_range(2e-9..8e-9);
            let ch = ChannelRealization::single(1.0, t).unwrap();
            let f = synthesize_frame(&ch, &pulse, 1024, DEFAULT_DT).unwrap();
            let a = detect_arrival_default(&f).unwrap();
            assert!((a.time - t).abs() < DEFAULT_DT / 10.0, "t={t} got {}", a.time);
        }
    }

    #[test]
    fn time_difference_basics() {
        assert_eq!(time_difference(5e-9, 5e-9), 0.0);
        assert!((time_difference(10e-9, 7e-9) - 3e-9).abs() < 1e-21);
        assert_eq!(time_difference(1.0, 4.0), -time_difference(4.0, 1.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn raising_threshold_keeps_peak(samples in prop::collection::vec(-1.0f64..1.0, 3..64),
                                            lo in 0.0f64..0.5, extra in 0.0f64..0.5) {
                let f = SignalFrame::new(samples, 1.0, 0.0).unwrap();
                let a = detect_arrival(&f, lo);
                let b = detect_arrival(&f, lo + extra);
                match (a, b) {
                    (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                    (Ok(_), Err(Error::NoPulse { .. })) => {}
                    (Err(_), Ok(_)) => prop_assert!(false, "higher threshold found a pulse"),
                    (Err(_), Err(_)) => {}
                    (Ok(_), Err(e)) => prop_assert!(false, "unexpected {e}"),
                }
            }
        }
    }

    #[test]
    fn leading_peak_skips_later_pile_up() {
        let mut x = vec![0.0; 40];
        for (k, v) in [(9, 0.6), (10, 1.0), (11, 0.6), (29, 0.9), (30, 1.4), (31, 0.9)] {
            x[k] = v;
        }
        let f = SignalFrame::new(x, 1.0, 0.0).unwrap();
        assert_eq!(detect_arrival(&f, 0.1).unwrap().peak_index, 30);
        let lead = detect_leading_peak(&f, 0.1, 0.6).unwrap();
        assert_eq!(lead.peak_index, 10);
        assert!((lead.time - 10.0).abs() < 1e-12);
        assert_eq!(detect_leading_peak(&f, 0.1, 1.0).unwrap().peak_index, 30);
        assert_eq!(detect_leading_peak(&f, 0.1, 0.8).unwrap().peak_index, 30);
        assert_eq!(detect_leading_peak(&f, 0.1, 0.7).unwrap().peak_index, 10);
    }
}
