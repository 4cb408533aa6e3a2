//! C interface to the simulator.
//!
//! Every fallible call returns a [`UwbStatus`]; on failure the message is
//! kept per thread and can be copied out with [`uwb_last_error`]. Handles are
//! opaque, created by `*_new` and released by the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use uwbsim::config::RunConfig;
use uwbsim::harness::{export_csv, run_experiment, ExperimentKind};
use uwbsim::pipeline::{mix_seed, track_channels, Mode, Pipeline, PipelineConfig};
use uwbsim::tdoa::{solve_tdoa, AnchorSet, Point, SolveOptions, TdoaProblem};
use uwbsim::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UwbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Runtime = 3,
    Io = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UwbMode {
    CsUwb = 0,
    Omp = 1,
    Bp = 2,
    Bcs = 3,
    Sequential = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UwbExperimentKind {
    Recon1d = 0,
    Grid2d = 1,
    Room3d = 2,
}

/// A positioning pipeline with fixed anchors and station hardware.
pub struct UwbPipeline {
    inner: Pipeline,
}

/// An experiment configuration, adjusted key by key and then run.
pub struct UwbExperiment {
    cfg: RunConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> UwbStatus {
    match err {
        Error::InvalidParameter { .. } | Error::Config(_) | Error::DimensionMismatch(_) => UwbStatus::InvalidArgument,
        Error::Io(_) | Error::Csv(_) => UwbStatus::Io,
        _ => UwbStatus::Runtime,
    }
}

/// Runs `f`, turning errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), (UwbStatus, String)>) -> UwbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            UwbStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            UwbStatus::Panic
        }
    }
}

fn lift<T>(r: uwbsim::Result<T>) -> Result<T, (UwbStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (UwbStatus, String) {
    (UwbStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> (UwbStatus, String) {
    (UwbStatus::InvalidArgument, msg.into())
}

unsafe fn cstr<'a>(p: *const c_char, what: &str) -> Result<&'a str, (UwbStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("`{what}` is not UTF-8")))
}

/// `count` anchors stored as consecutive (x, y, z) triples in millimetres.
unsafe fn read_anchors(anchors: *const f64, count: usize, dim: u32) -> Result<AnchorSet, (UwbStatus, String)> {
    if anchors.is_null() {
        return Err(null("anchors"));
    }
    if dim != 2 && dim != 3 {
        return Err(invalid(format!("dim must be 2 or 3, got {dim}")));
    }
    let flat = std::slice::from_raw_parts(anchors, 3 * count);
    let points = flat
        .chunks_exact(3)
        .map(|c| if dim == 2 { Point::planar(c[0], c[1]) } else { Point::new(c[0], c[1], c[2]) })
        .collect();
    lift(AnchorSet::new(points, dim as usize))
}

fn mode_of(mode: UwbMode) -> Mode {
    match mode {
        UwbMode::CsUwb => Mode::CsUwb,
        UwbMode::Omp => Mode::Omp,
        UwbMode::Bp => Mode::Bp,
        UwbMode::Bcs => Mode::Bcs,
        UwbMode::Sequential => Mode::Sequential,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn uwb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full length including
/// the terminator, so a too-small buffer can be retried.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn uwb_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Builds a pipeline with default settings for the given anchors and mode.
///
/// # Safety
/// `anchors` must hold `3 * count` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uwb_pipeline_new(
    anchors: *const f64,
    count: usize,
    dim: u32,
    mode: UwbMode,
    seed: u64,
    out: *mut *mut UwbPipeline,
) -> UwbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let set = read_anchors(anchors, count, dim)?;
        let cfg = PipelineConfig { mode: mode_of(mode), seed, ..PipelineConfig::default() };
        let inner = lift(Pipeline::new(cfg, set))?;
        *out = Box::into_raw(Box::new(UwbPipeline { inner }));
        Ok(())
    })
}

/// Simulates one fix of a tag at `tag` (x, y, z in mm; z ignored in 2D).
/// `trial` selects the channel and noise realisation.
///
/// # Safety
/// `pipeline` must come from [`uwb_pipeline_new`]; `tag` must hold 3 doubles;
/// `out_position` 3 writable doubles; `out_error_mm` may be null.
#[no_mangle]
pub unsafe extern "C" fn uwb_pipeline_locate(
    pipeline: *const UwbPipeline,
    tag: *const f64,
    trial: u64,
    out_position: *mut f64,
    out_error_mm: *mut f64,
) -> UwbStatus {
    guard(|| {
        let p = pipeline.as_ref().ok_or_else(|| null("pipeline"))?;
        if tag.is_null() {
            return Err(null("tag"));
        }
        if out_position.is_null() {
            return Err(null("out_position"));
        }
        let t = std::slice::from_raw_parts(tag, 3);
        let truth = if p.inner.anchors().dim() == 2 { Point::planar(t[0], t[1]) } else { Point::new(t[0], t[1], t[2]) };
        let cfg = p.inner.config();
        let channels = lift(track_channels(cfg, p.inner.anchors().len(), trial as usize))?;
        let outcome = lift(p.inner.locate(&truth, &channels, mix_seed(cfg.seed, &[3, trial]), None))?;
        let pos = outcome.estimate.position.coords();
        std::slice::from_raw_parts_mut(out_position, 3).copy_from_slice(&pos);
        if !out_error_mm.is_null() {
            *out_error_mm = outcome.error_mm;
        }
        Ok(())
    })
}

/// # Safety
/// `pipeline` must be null or come from [`uwb_pipeline_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn uwb_pipeline_free(pipeline: *mut UwbPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Solves for the tag position from `count - 1` time differences
/// `tau[k] = t_0 - t_{k+1}` (seconds; anchor 0 is the reference) with
/// propagation speed `c` (mm/s).
///
/// # Safety
/// `anchors` must hold `3 * count` doubles, `tau` `count - 1` doubles,
/// `out_position` 3 writable doubles; `out_iterations` may be null.
#[no_mangle]
pub unsafe extern "C" fn uwb_tdoa_solve(
    anchors: *const f64,
    count: usize,
    dim: u32,
    tau: *const f64,
    c: f64,
    out_position: *mut f64,
    out_iterations: *mut u32,
) -> UwbStatus {
    guard(|| {
        let set = read_anchors(anchors, count, dim)?;
        if tau.is_null() {
            return Err(null("tau"));
        }
        if out_position.is_null() {
            return Err(null("out_position"));
        }
        let tau = std::slice::from_raw_parts(tau, count - 1).to_vec();
        let problem = lift(TdoaProblem::new(set, tau, c))?;
        let est = lift(solve_tdoa(&problem, None, &SolveOptions::default()))?;
        std::slice::from_raw_parts_mut(out_position, 3).copy_from_slice(&est.position.coords());
        if !out_iterations.is_null() {
            *out_iterations = est.iterations as u32;
        }
        if !est.converged {
            return Err((UwbStatus::Runtime, "TDOA solve did not converge".into()));
        }
        Ok(())
    })
}

/// Creates an experiment with its default settings.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uwb_experiment_new(kind: UwbExperimentKind, out: *mut *mut UwbExperiment) -> UwbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let kind = match kind {
            UwbExperimentKind::Recon1d => ExperimentKind::Recon1d,
            UwbExperimentKind::Grid2d => ExperimentKind::Grid2d,
            UwbExperimentKind::Room3d => ExperimentKind::Room3d,
        };
        *out = Box::into_raw(Box::new(UwbExperiment { cfg: RunConfig::new(kind) }));
        Ok(())
    })
}

/// Sets one configuration key, using the same keys and value syntax as the
/// command line and config files.
///
/// # Safety
/// `experiment` must come from [`uwb_experiment_new`]; strings must be
/// NUL-terminated UTF-8.
#[no_mangle]
pub unsafe extern "C" fn uwb_experiment_set(
    experiment: *mut UwbExperiment,
    key: *const c_char,
    value: *const c_char,
) -> UwbStatus {
    guard(|| {
        let e = experiment.as_mut().ok_or_else(|| null("experiment"))?;
        let (key, value) = (cstr(key, "key")?, cstr(value, "value")?);
        lift(e.cfg.set(key, value))
    })
}

/// Validates, runs the experiment and writes the result table as CSV to
/// `csv_path` (replaced atomically).
///
/// # Safety
/// `experiment` must come from [`uwb_experiment_new`]; `csv_path` must be a
/// NUL-terminated UTF-8 path.
#[no_mangle]
pub unsafe extern "C" fn uwb_experiment_run(experiment: *const UwbExperiment, csv_path: *const c_char) -> UwbStatus {
    guard(|| {
        let e = experiment.as_ref().ok_or_else(|| null("experiment"))?;
        let path = cstr(csv_path, "csv_path")?;
        lift(e.cfg.validate())?;
        let table = lift(run_experiment(&e.cfg.spec))?;
        lift(export_csv(&table, Path::new(path)))
    })
}

/// # Safety
/// `experiment` must be null or come from [`uwb_experiment_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn uwb_experiment_free(experiment: *mut UwbExperiment) {
    if !experiment.is_null() {
        drop(Box::from_raw(experiment));
    }
}
