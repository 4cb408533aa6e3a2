use std::ffi::{CStr, CString};
use std::ptr;

use uwbsim_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe { uwb_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

const ROOM: [f64; 12] = [0.0, 0.0, 3000.0, 5000.0, 0.0, 3000.0, 2500.0, 5000.0, 3000.0, 2500.0, 2500.0, 0.0];
const C: f64 = 2.99792458e11;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(uwb_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn tdoa_solve_recovers_forward_simulated_tag() {
    let tag = [2000.0, 2200.0, 1500.0];
    let anchors: Vec<&[f64]> = ROOM.chunks(3).collect();
    let tau: Vec<f64> = (1..4).map(|i| (dist(&tag, anchors[0]) - dist(&tag, anchors[i])) / C).collect();
    let mut pos = [0.0; 3];
    let mut iters = 0u32;
    let st = unsafe { uwb_tdoa_solve(ROOM.as_ptr(), 4, 3, tau.as_ptr(), C, pos.as_mut_ptr(), &mut iters) };
    assert_eq!(st, UwbStatus::Ok, "{}", last_error());
    assert!(dist(&pos, &tag) < 1e-3, "{pos:?}");
    assert!(iters > 0 && iters < 25);
}

#[test]
fn null_and_bad_arguments_report_codes_and_messages() {
    let mut pos = [0.0; 3];
    let st = unsafe { uwb_tdoa_solve(ptr::null(), 4, 3, ptr::null(), C, pos.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, UwbStatus::NullPointer);
    assert!(last_error().contains("anchors"));

    let mut p: *mut UwbPipeline = ptr::null_mut();
    let st = unsafe { uwb_pipeline_new(ROOM.as_ptr(), 2, 3, UwbMode::CsUwb, 0, &mut p) };
    assert_eq!(st, UwbStatus::InvalidArgument);
    assert!(p.is_null());
    assert!(last_error().contains("anchors"), "{}", last_error());

    let st = unsafe { uwb_pipeline_new(ROOM.as_ptr(), 4, 7, UwbMode::CsUwb, 0, &mut p) };
    assert_eq!(st, UwbStatus::InvalidArgument);

    // A short buffer gets a truncated message and the needed length.
    let mut small = [1 as std::ffi::c_char; 4];
    let need = unsafe { uwb_last_error(small.as_mut_ptr(), small.len()) };
    assert!(need > 4);
    assert_eq!(small[3], 0);
}

#[test]
fn pipeline_locates_and_is_deterministic() {
    let mut p: *mut UwbPipeline = ptr::null_mut();
    let st = unsafe { uwb_pipeline_new(ROOM.as_ptr(), 4, 3, UwbMode::CsUwb, 11, &mut p) };
    assert_eq!(st, UwbStatus::Ok, "{}", last_error());
    let tag = [2400.0, 1800.0, 1600.0];
    let mut a = [0.0; 3];
    let mut b = [0.0; 3];
    let mut err = f64::NAN;
    unsafe {
        assert_eq!(uwb_pipeline_locate(p, tag.as_ptr(), 0, a.as_mut_ptr(), &mut err), UwbStatus::Ok, "{}", last_error());
        assert_eq!(uwb_pipeline_locate(p, tag.as_ptr(), 0, b.as_mut_ptr(), ptr::null_mut()), UwbStatus::Ok);
        uwb_pipeline_free(p);
        uwb_pipeline_free(ptr::null_mut());
    }
    assert_eq!(a, b);
    assert!((dist(&a, &tag) - err).abs() < 1e-9);
    assert!(err < 20.0, "{err}");
}

#[test]
fn experiment_runs_through_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().join("room.csv").to_str().unwrap()).unwrap();
    let mut e: *mut UwbExperiment = ptr::null_mut();
    unsafe {
        assert_eq!(uwb_experiment_new(UwbExperimentKind::Room3d, &mut e), UwbStatus::Ok);
        let set = |k: &str, v: &str| {
            let (k, v) = (CString::new(k).unwrap(), CString::new(v).unwrap());
            uwb_experiment_set(e, k.as_ptr(), v.as_ptr())
        };
        assert_eq!(set("points", "2"), UwbStatus::Ok);
        assert_eq!(set("mode", "sequential"), UwbStatus::Ok);
        assert_eq!(set("no_such_key", "1"), UwbStatus::InvalidArgument);
        assert!(last_error().contains("no_such_key"));
        assert_eq!(uwb_experiment_run(e, out.as_ptr()), UwbStatus::Ok, "{}", last_error());
        assert_eq!(set("points", "0"), UwbStatus::Ok);
        assert_eq!(uwb_experiment_run(e, out.as_ptr()), UwbStatus::InvalidArgument);
        assert!(last_error().contains("points"));
        uwb_experiment_free(e);
    }
    let text = std::fs::read_to_string(dir.path().join("room.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains(",error_mm,")).count(), 2);
}
