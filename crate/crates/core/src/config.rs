//! Run configuration: INI files with flat sections, string-valued settings
//! shared by files, environment variables and command-line flags.
//!
//! Every setting has one key, listed in [`KEYS`]; the file form is
//! `[section]` + `key = value`, the flag form `--key` with underscores turned
//! into dashes, the environment form `UWBSIM_KEY`. Later sources override
//! earlier ones: defaults, file, environment, flags.

use std::fs;
use std::path::{Path, PathBuf};

use ini::Ini;

use crate::acquisition::ProjectionKind;
use crate::error::{Error, Result};
use crate::harness::{ExperimentKind, ExperimentSpec};
use crate::pipeline::Mode;
use crate::signal::{ChannelProfile, PulseSpec};
use crate::tdoa::{AnchorSet, Point, Region};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeySpec {
    pub section: &'static str,
    pub key: &'static str,
    pub help: &'static str,
}

impl KeySpec {
    pub fn flag(&self) -> String {
        self.key.replace('_', "-")
    }

    pub fn env(&self) -> String {
        format!("UWBSIM_{}", self.key.to_ascii_uppercase())
    }
}

const fn k(section: &'static str, key: &'static str, help: &'static str) -> KeySpec {
    KeySpec { section, key, help }
}

/// Every configurable key.
pub const KEYS: &[KeySpec] = &[
    k("harness", "trials", "Monte Carlo trials per scenario"),
    k("harness", "seed", "Master seed"),
    k("harness", "threads", "Worker threads, 0 = all cores"),
    k("harness", "rr", "Reduction ratio(s) M/N, comma separated"),
    k("harness", "snr", "Signal-to-noise ratio (dB)"),
    k("harness", "algs", "Reconstruction methods: cs_uwb,bp,omp,bcs"),
    k("harness", "mode", "Positioning methods: cs_uwb,sequential"),
    k("harness", "anchors", "Anchors inline as \"x,y[,z];...\" (mm) or a file of such rows"),
    k("harness", "bounds", "Grid or room box \"xmin,ymin,xmax,ymax\" or \"xmin,ymin,zmin,xmax,ymax,zmax\" (mm)"),
    k("harness", "resolution", "Grid cells per axis (2D)"),
    k("harness", "points", "Random tag positions (3D)"),
    k("acquisition", "frame_len", "Samples per frame N"),
    k("acquisition", "dt_ps", "Sample spacing (ps)"),
    k("acquisition", "sigma_ps", "Gaussian pulse width parameter (ps)"),
    k("acquisition", "projection", "Projection matrix: gaussian or bernoulli"),
    k("acquisition", "n2_snr", "Measurement-domain SNR (dB), inf = none"),
    k("acquisition", "prf_hz", "Pulse repetition frequency of the sequential sampler (Hz)"),
    k("acquisition", "drift_ppm", "Sequential extension-scale error (ppm of K)"),
    k("acquisition", "gate_ps", "Coarse trigger gate (ps)"),
    k("acquisition", "lead_ps", "Frame lead before the gate (ps)"),
    k("signal", "channel", "Channel profile: dense, multipath or los"),
    k("pipeline", "epsilon_ps", "Arrival-time convergence threshold (ps)"),
    k("pipeline", "interleave", "Refresh TDOA after each reconstruction step: true or false"),
    k("pipeline", "settle", "Stable steps before the interleaved loop stops"),
    k("pipeline", "peak_fraction", "Arrival = first peak above this fraction of the strongest"),
    k("tdoa", "err_threshold", "TDOA step-length threshold (mm)"),
    k("tdoa", "tdoa_max_iters", "TDOA iteration cap"),
    k("recovery", "bcs_tol", "BCS likelihood-gain stopping threshold"),
    k("recovery", "bcs_max_iters", "BCS iteration cap"),
    k("recovery", "omp_cap_divisor", "OMP stops at M / this many atoms"),
    k("recovery", "bp_lambda", "BP l1 weight, auto = 0.1 ||A^T y||_inf"),
    k("output", "out", "CSV output path"),
    k("output", "gnuplot", "Gnuplot matrix output path (2D)"),
    k("output", "quiet", "Suppress the summary table: true or false"),
];

pub fn key_spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

/// A validated-on-finish experiment plus output settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spec: ExperimentSpec,
    pub out: Option<PathBuf>,
    pub gnuplot: Option<PathBuf>,
    pub quiet: bool,
}

fn bad(key: &str, reason: impl std::fmt::Display) -> Error {
    Error::Config(format!("invalid value for `{key}`: {reason}"))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse::<T>().map_err(|e| bad(key, format!("`{v}`: {e}")))
}

fn float(key: &str, v: &str) -> Result<f64> {
    let x: f64 = num(key, v)?;
    if x.is_nan() {
        return Err(bad(key, "NaN"));
    }
    Ok(x)
}

fn floats(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|p| float(key, p)).collect()
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(bad(key, format!("`{v}` is not true or false"))),
    }
}

/// Anchors from `"x,y[,z];..."` or, when the text names an existing file,
/// from that file (rows separated by `;` or newlines, `#` comments).
pub fn parse_anchors(text: &str, dim: usize) -> Result<AnchorSet> {
    let body = if Path::new(text.trim()).is_file() {
        fs::read_to_string(text.trim())?
    } else {
        text.to_string()
    };
    let mut points = Vec::new();
    for row in body
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split(';'))
        .map(str::trim)
        .filter(|r| !r.is_empty())
    {
        let c = floats("anchors", row)?;
        if c.len() != dim && !(dim == 2 && c.len() == 3 && c[2] == 0.0) {
            return Err(bad("anchors", format!("`{row}` needs {dim} coordinates")));
        }
        points.push(Point::from_coords(&c));
    }
    AnchorSet::new(points, dim).map_err(|e| bad("anchors", e))
}

impl RunConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        RunConfig {
            spec: ExperimentSpec::default_for(kind),
            out: None,
            gnuplot: None,
            quiet: false,
        }
    }

    fn dim(&self) -> usize {
        if self.spec.kind == ExperimentKind::Room3d {
            3
        } else {
            2
        }
    }

    /// Applies one setting; errors name the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let spec = &mut self.spec;
        let acq = &mut spec.pipeline.acquisition;
        match key {
            "trials" => spec.trials = num(key, value)?,
            "seed" => spec.seed = num(key, value)?,
            "threads" => spec.threads = num(key, value)?,
            "rr" => spec.r_r = floats(key, value)?,
            "snr" => spec.snr_db = float(key, value)?,
            "algs" | "mode" => {
                spec.algorithms = value
                    .split(',')
                    .map(|m| m.parse::<Mode>().map_err(|_| bad(key, format!("unknown method `{}`", m.trim()))))
                    .collect::<Result<_>>()?
            }
            "anchors" => {
                let dim = self.dim();
                self.spec.anchors = Some(parse_anchors(value, dim)?);
            }
            "bounds" => {
                let c = floats(key, value)?;
                let (lo, hi) = match c.len() {
                    4 => (Point::planar(c[0], c[1]), Point::planar(c[2], c[3])),
                    6 => (Point::new(c[0], c[1], c[2]), Point::new(c[3], c[4], c[5])),
                    n => return Err(bad(key, format!("need 4 or 6 numbers, got {n}"))),
                };
                spec.bounds = Some(Region::new(lo, hi).map_err(|e| bad(key, e))?);
            }
            "resolution" => spec.resolution = num(key, value)?,
            "points" => spec.points = num(key, value)?,
            "frame_len" => acq.frame_len = num(key, value)?,
            "dt_ps" => acq.dt = float(key, value)? * 1e-12,
            "sigma_ps" => acq.pulse = PulseSpec::new(float(key, value)? * 1e-12).map_err(|e| bad(key, e))?,
            "projection" => {
                acq.projection = match value.trim().to_ascii_lowercase().as_str() {
                    "gaussian" => ProjectionKind::Gaussian,
                    "bernoulli" => ProjectionKind::Bernoulli,
                    _ => return Err(bad(key, format!("`{value}` is not gaussian or bernoulli"))),
                }
            }
            "n2_snr" => acq.n2_snr_db = float(key, value)?,
            "prf_hz" => acq.f_p = float(key, value)?,
            "drift_ppm" => acq.drift = float(key, value)? * 1e-6,
            "gate_ps" => acq.gate = float(key, value)? * 1e-12,
            "lead_ps" => acq.lead = float(key, value)? * 1e-12,
            "channel" => {
                spec.channel = Some(match value.trim().to_ascii_lowercase().as_str() {
                    "dense" => ChannelProfile::dense(),
                    "multipath" => ChannelProfile::default(),
                    "los" => ChannelProfile::line_of_sight_only(0.0),
                    _ => return Err(bad(key, format!("`{value}` is not dense, multipath or los"))),
                })
            }
            "epsilon_ps" => spec.pipeline.epsilon = float(key, value)? * 1e-12,
            "interleave" => spec.pipeline.interleave = boolean(key, value)?,
            "settle" => spec.pipeline.settle = num(key, value)?,
            "peak_fraction" => spec.pipeline.peak_fraction = float(key, value)?,
            "err_threshold" => spec.pipeline.tdoa.err_threshold = float(key, value)?,
            "tdoa_max_iters" => spec.pipeline.tdoa.max_iters = num(key, value)?,
            "bcs_tol" => spec.pipeline.recovery.bcs.tol = float(key, value)?,
            "bcs_max_iters" => spec.pipeline.recovery.bcs.max_iters = num(key, value)?,
            "omp_cap_divisor" => spec.pipeline.recovery.omp_cap_divisor = num(key, value)?,
            "bp_lambda" => {
                spec.pipeline.recovery.bp.lambda = if value.trim() == "auto" {
                    None
                } else {
                    Some(float(key, value)?)
                }
            }
            "out" => self.out = Some(PathBuf::from(value)),
            "gnuplot" => self.gnuplot = Some(PathBuf::from(value)),
            "quiet" => self.quiet = boolean(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies an INI document. Keys must sit in their own section.
    pub fn apply_ini(&mut self, text: &str) -> Result<()> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (section, props) in ini.iter() {
            for (key, value) in props.iter() {
                let spec = key_spec(key).ok_or_else(|| match section {
                    Some(s) => Error::Config(format!("unknown key `{s}.{key}`")),
                    None => Error::Config(format!("unknown key `{key}`")),
                })?;
                if section != Some(spec.section) {
                    return Err(Error::Config(format!(
                        "key `{key}` belongs in section [{}], found in {}",
                        spec.section,
                        section.map(|s| format!("[{s}]")).unwrap_or_else(|| "no section".into())
                    )));
                }
                self.set(key, value)?;
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read `{}`: {e}", path.display())))?;
        self.apply_ini(&text)
    }

    /// Validates the experiment; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate().map_err(|e| match e {
            Error::InvalidParameter { name, reason } => bad(name, reason),
            other => Error::Config(other.to_string()),
        })
    }

    /// INI text reproducing the experiment settings that have keys.
    pub fn to_ini(&self) -> String {
        let s = &self.spec;
        let acq = &s.pipeline.acquisition;
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let methods = s.algorithms.iter().map(|m| m.name()).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let mut section = "";
        let mut put = |key: &str, value: String| {
            let sec = key_spec(key).expect("known key").section;
            if sec != section {
                out.push_str(&format!("{}[{sec}]\n", if section.is_empty() { "" } else { "\n" }));
                section = sec;
            }
            out.push_str(&format!("{key} = {value}\n"));
        };
        put("trials", s.trials.to_string());
        put("seed", s.seed.to_string());
        put("threads", s.threads.to_string());
        put("rr", list(&s.r_r));
        put("snr", s.snr_db.to_string());
        put(if s.kind == ExperimentKind::Recon1d { "algs" } else { "mode" }, methods);
        put("resolution", s.resolution.to_string());
        put("points", s.points.to_string());
        put("frame_len", acq.frame_len.to_string());
        put("dt_ps", (acq.dt * 1e12).to_string());
        put("sigma_ps", (acq.pulse.sigma * 1e12).to_string());
        put("drift_ppm", (acq.drift * 1e6).to_string());
        put("epsilon_ps", (s.pipeline.epsilon * 1e12).to_string());
        put("interleave", s.pipeline.interleave.to_string());
        put("settle", s.pipeline.settle.to_string());
        out
    }
}
