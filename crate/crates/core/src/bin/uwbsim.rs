//! `uwbsim` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};

use uwbsim::config::{RunConfig, KEYS};
use uwbsim::harness::{export_csv, export_gnuplot, run_experiment, stats, ExperimentKind, ResultTable};
use uwbsim::selftest;
use uwbsim::Error;

fn experiment_command(name: &'static str, about: &'static str) -> Command {
    let mut cmd = Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .env("UWBSIM_CONFIG")
            .value_name("FILE")
            .help("INI file with [section] key = value settings"),
    );
    for k in KEYS {
        let flag: &'static str = Box::leak(k.flag().into_boxed_str());
        let env: &'static str = Box::leak(k.env().into_boxed_str());
        cmd = cmd.arg(
            Arg::new(k.key)
                .long(flag)
                .env(env)
                .value_name("VALUE")
                .help(format!("{} [{}.{}]", k.help, k.section, k.key)),
        );
    }
    cmd
}

fn cli() -> Command {
    Command::new("uwbsim")
        .about("UWB TDOA positioning simulator")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(experiment_command("recon", "Single-frame reconstruction sweep over reduction ratios"))
        .subcommand(experiment_command("locate2d", "2D positioning error over a grid of tag positions"))
        .subcommand(experiment_command("locate3d", "3D positioning error at random tag positions in a room"))
        .subcommand(
            Command::new("selftest")
                .about("Run the built-in oracle checks")
                .arg(Arg::new("list").long("list").action(ArgAction::SetTrue).help("Print check names and exit"))
                .arg(Arg::new("inject-fault").long("inject-fault").value_name("CHECK").hide(true)),
        )
}

/// Defaults, then the config file, then environment and flags (clap already
/// lets a flag win over its variable).
fn build_config(kind: ExperimentKind, m: &ArgMatches) -> uwbsim::Result<RunConfig> {
    let mut cfg = RunConfig::new(kind);
    if let Some(path) = m.get_one::<String>("config") {
        cfg.apply_file(path)?;
    }
    for source in [ValueSource::EnvVariable, ValueSource::CommandLine] {
        for k in KEYS {
            if m.value_source(k.key) == Some(source) {
                cfg.set(k.key, m.get_one::<String>(k.key).expect("value present"))?;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_else(|| "-".into())
}

fn print_summary(table: &ResultTable) {
    println!(
        "{:<14} {:<11} {:>6} {:>10} {:>10} {:>10}  {:<26} {:>12}",
        "experiment", "algorithm", "R_r", "x_mm", "y_mm", "z_mm", "metric", "value"
    );
    for r in table.rows.iter().filter(|r| r.trial.is_none()) {
        // Per-position rows would swamp the table; keep overall figures.
        if r.x_mm.is_some() && !r.experiment.ends_with("_probe") {
            continue;
        }
        println!(
            "{:<14} {:<11} {:>6} {:>10} {:>10} {:>10}  {:<26} {:>12.6}",
            r.experiment,
            r.algorithm,
            r.r_r.map(|x| x.to_string()).unwrap_or_else(|| "-".into()),
            fmt_opt(r.x_mm),
            fmt_opt(r.y_mm),
            fmt_opt(r.z_mm),
            r.metric,
            r.value
        );
    }
    let mut cells: Vec<(&str, &str, Vec<f64>)> = Vec::new();
    for r in table.rows.iter().filter(|r| r.experiment == "grid_2d" && r.metric == "error_mm_mean") {
        match cells.iter_mut().find(|c| c.1 == r.algorithm) {
            Some(c) => c.2.push(r.value),
            None => cells.push((&r.experiment, &r.algorithm, vec![r.value])),
        }
    }
    for (exp, alg, vals) in cells {
        let s = stats(&vals).expect("non-empty");
        let max = vals.iter().copied().fold(f64::MIN, f64::max);
        for (metric, v) in [("cell_mean_median", s.median), ("cell_mean_max", max)] {
            println!("{exp:<14} {alg:<11} {:>6} {:>10} {:>10} {:>10}  {metric:<26} {v:>12.6}", "", "", "", "");
        }
    }
    let failed = table.failures();
    if failed > 0 {
        println!("{failed} trial(s) failed");
    }
}

fn run_kind(kind: ExperimentKind, m: &ArgMatches) -> ExitCode {
    let cfg = match build_config(kind, m) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = run_experiment(&cfg.spec).and_then(|table| {
        if let Some(path) = &cfg.out {
            export_csv(&table, path)?;
        }
        if let Some(path) = &cfg.gnuplot {
            export_gnuplot(&table, path)?;
        }
        Ok(table)
    });
    match result {
        Ok(table) => {
            if !cfg.quiet {
                print_summary(&table);
            }
            ExitCode::SUCCESS
        }
        Err(e @ Error::InvalidParameter { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run_selftest(m: &ArgMatches) -> ExitCode {
    if m.get_flag("list") {
        for name in selftest::check_names() {
            println!("{name}");
        }
        return ExitCode::SUCCESS;
    }
    let fault = m.get_one::<String>("inject-fault").map(String::as_str);
    let outcomes = selftest::run_checks(fault);
    for c in &outcomes {
        println!("{} {:<28} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if outcomes.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    match matches.subcommand() {
        Some(("recon", m)) => run_kind(ExperimentKind::Recon1d, m),
        Some(("locate2d", m)) => run_kind(ExperimentKind::Grid2d, m),
        Some(("locate3d", m)) => run_kind(ExperimentKind::Room3d, m),
        Some(("selftest", m)) => run_selftest(m),
        _ => unreachable!("subcommand required"),
    }
}
