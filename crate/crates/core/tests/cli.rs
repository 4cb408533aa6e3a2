use std::collections::BTreeSet;
use std::fs;
use std::process::{Command, Output};

use uwbsim::config::KEYS;

fn uwbsim(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_uwbsim"));
    cmd.args(args).env_remove("UWBSIM_CONFIG");
    for k in KEYS {
        cmd.env_remove(k.env());
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_matches_golden_file() {
    let mut text = String::new();
    for sub in ["", "recon", "locate2d", "locate3d", "selftest"] {
        let args: Vec<&str> = [sub, "--help"].into_iter().filter(|a| !a.is_empty()).collect();
        let out = uwbsim(&args);
        assert_eq!(code(&out), 0);
        text.push_str(&format!("== uwbsim {sub} --help\n"));
        text.push_str(&String::from_utf8_lossy(&out.stdout));
    }
    let golden = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/help.txt")).unwrap();
    assert_eq!(text, golden);
}

#[test]
fn every_flag_has_a_config_key() {
    let out = uwbsim(&["locate3d", "--help"]);
    let help = String::from_utf8_lossy(&out.stdout);
    let flags: BTreeSet<String> = help
        .split_whitespace()
        .filter(|w| w.starts_with("--"))
        .map(|w| w.trim_start_matches("--").trim_end_matches(',').to_string())
        .filter(|f| f != "help" && f != "config")
        .collect();
    let keys: BTreeSet<String> = KEYS.iter().map(|k| k.flag()).collect();
    assert_eq!(flags, keys);
    for k in KEYS {
        assert!(help.contains(&format!("[{}.{}]", k.section, k.key)));
    }
}

#[test]
fn recon_writes_identical_csv_twice() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = uwbsim(&[
            "recon", "--rr", "0.15", "--snr", "10", "--algs", "cs_uwb,bp", "--trials", "3", "--seed", "7",
            "--out", path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("experiment,algorithm,R_r,snr_db,x_mm,y_mm,z_mm,trial,metric,value\n"));
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    // No temporary files left behind.
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn bad_reduction_ratio_exits_2_naming_the_key() {
    let out = uwbsim(&["recon", "--rr", "1.5"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("`rr`"), "{}", stderr(&out));
}

#[test]
fn two_anchors_in_3d_exit_2() {
    let out = uwbsim(&["locate3d", "--anchors", "0,0,0;1000,0,0"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("anchors"));
}

#[test]
fn unknown_method_and_bad_number_exit_2() {
    for args in [["recon", "--algs", "lasso"], ["locate2d", "--trials", "many"], ["locate3d", "--points", "0"]] {
        let out = uwbsim(&args);
        assert_eq!(code(&out), 2, "{args:?}");
        assert!(stderr(&out).contains(&format!("`{}`", &args[1][2..])), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn sequential_with_large_drift_is_accepted() {
    let out = uwbsim(&["locate3d", "--mode", "sequential", "--drift-ppm", "30000", "--points", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("error_mm_overall_mean"));
}

#[test]
fn config_file_then_env_then_flag() {
    let dir = tempfile::tempdir().unwrap();
    let ini = dir.path().join("run.ini");
    let out = dir.path().join("out.csv");
    fs::write(&ini, "[harness]\npoints = 2\nseed = 1\nmode = sequential\n\n[output]\nquiet = true\n").unwrap();
    let run = |env_points: Option<&str>, flag_points: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_uwbsim"));
        cmd.args(["locate3d", "--config", ini.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        for k in KEYS {
            cmd.env_remove(k.env());
        }
        if let Some(p) = env_points {
            cmd.env("UWBSIM_POINTS", p);
        }
        if let Some(p) = flag_points {
            cmd.args(["--points", p]);
        }
        let o = cmd.output().unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let table = uwbsim::harness::import_csv(&out).unwrap();
        table.rows.iter().filter(|r| r.metric == "error_mm" && r.algorithm == "sequential").count()
    };
    assert_eq!(run(None, None), 2);
    assert_eq!(run(Some("3"), None), 3);
    assert_eq!(run(Some("3"), Some("4")), 4);
}

#[test]
fn config_file_rejects_unknown_key() {
    let dir = tempfile::tempdir().unwrap();
    let ini = dir.path().join("bad.ini");
    fs::write(&ini, "[harness]\ntrails = 3\n").unwrap();
    let out = uwbsim(&["recon", "--config", ini.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("harness.trails"));
}

#[test]
fn threads_do_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for threads in ["1", "3", "0"] {
        let path = dir.path().join(format!("t{threads}.csv"));
        let out = uwbsim(&[
            "locate2d", "--resolution", "2", "--trials", "2", "--threads", threads, "--quiet", "true", "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        texts.push(fs::read_to_string(path).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    assert_eq!(texts[0], texts[2]);
}

#[test]
fn selftest_passes_lists_and_catches_faults() {
    let out = uwbsim(&["selftest"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let list = uwbsim(&["selftest", "--list"]);
    assert_eq!(code(&list), 0);
    let names = String::from_utf8_lossy(&list.stdout).into_owned();
    assert!(names.lines().count() >= 5);
    let first = names.lines().next().unwrap();
    assert_eq!(code(&uwbsim(&["selftest", "--inject-fault", first])), 1);
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    assert_eq!(code(&uwbsim(&[])), 2);
    assert_eq!(code(&uwbsim(&["recon", "--no-such-flag", "1"])), 2);
}
