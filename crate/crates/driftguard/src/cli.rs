//! Command-line wiring: `calibrate`, `detect`, `experiment`, `simulate`.
//!
//! Exit codes: 0 success, 1 assertion violation, 2 input format,
//! 3 insufficient data, 4 usage. Alarms are data, not errors — a detect
//! run with zero alarms still exits 0. `--seed` is mandatory wherever
//! randomness is consumed wholesale (`simulate`, `experiment`): no silent
//! entropy. `DRIFTGUARD_THREADS` caps the worker pool.

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use crate::calibration::{read_scores_csv, CalibrationSummary};
use crate::eprocess::{AlarmEvent, EProcessState, ResetPolicy};
use crate::error::{Error, Result};
use crate::harness::{
    check_assertions, delay_scaling_sweep, run_detection, run_detect_adapt, supermartingale_audit,
    trajectories, write_trajectories_csv, ExperimentConfig, DEFAULT_TAU_GRID,
};
use crate::score::{FeatureStats, ScoreConfig};
use crate::stream::{
    generate, score_samples, write_scores_csv, write_stream_csv, ShiftKind, StreamConfig,
};

/// Streaming shift detection and Fisher-preconditioned adaptation.
#[derive(Debug, Parser)]
#[command(name = "driftguard", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit null-score statistics (μ̂, ψ̂, ψ̄) from a t,score CSV.
    Calibrate {
        /// Input CSV with a `t,score` header and at least 10 rows.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = 1000)]
        bootstrap_b: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha_boot: f64,
        /// Master seed of the bootstrap resampling streams.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path for the calibration summary JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream t,score rows through the detector; one JSON line per alarm.
    Detect {
        /// Calibration summary JSON produced by `calibrate`.
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        tau: f64,
        /// Score CSV path, or `-` for line-buffered standard input.
        #[arg(long, default_value = "-")]
        scores: String,
        #[arg(long, value_enum, default_value_t = ResetArg::ResetOnAlarm)]
        reset_policy: ResetArg,
    },
    /// Run a Monte Carlo experiment suite from a config JSON.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: ExperimentMode,
        #[arg(long)]
        out_dir: PathBuf,
        /// Master seed (overrides the config's master_seed).
        #[arg(long)]
        seed: u64,
        /// Also dump the first N runs' detector trajectories to
        /// trajectories.csv (run,t,score,log_m,alarm).
        #[arg(long)]
        trajectories: Option<usize>,
    },
    /// Generate a synthetic labeled feature stream as CSV.
    Simulate {
        /// Stream config JSON; omitted = the desk-scale default geometry.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed (overrides the config's seed).
        #[arg(long)]
        seed: u64,
        /// Stream length when no config file is given.
        #[arg(long, default_value_t = 1000)]
        length: usize,
        /// Change point ν for the default geometry.
        #[arg(long)]
        change_point: Option<usize>,
        /// Mean-translate magnitude along the first axis (with --change-point).
        #[arg(long, default_value_t = 2.0)]
        shift_delta: f64,
        /// Output CSV (`t,label,f1..fd`), or `-` for standard output.
        #[arg(long, default_value = "-")]
        out: String,
        /// Also score the stream with the desk model and write a t,score CSV.
        #[arg(long)]
        scores_out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ResetArg {
    ResetOnAlarm,
    NoReset,
}

impl From<ResetArg> for ResetPolicy {
    fn from(a: ResetArg) -> Self {
        match a {
            ResetArg::ResetOnAlarm => ResetPolicy::ResetOnAlarm,
            ResetArg::NoReset => ResetPolicy::NoReset,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExperimentMode {
    /// False-alarm rate under the configured (usually null) stream.
    #[value(name = "null_far", alias = "null-far")]
    NullFar,
    /// Mean detection delay across a τ grid, with the fitted slope.
    #[value(name = "delay_sweep", alias = "delay-sweep")]
    DelaySweep,
    /// Full detect-then-adapt loop with the paired frozen arm.
    Adapt,
    /// Mean e-process checkpoint audit (`E[M_t] <= 1`) over null streams.
    Audit,
}

/// Provenance stamp written next to every experiment's reports.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of the canonicalized (key-sorted) effective config.
    pub config_hash: String,
    pub tool_version: String,
    /// UTC ISO-8601 completion time.
    pub timestamp: String,
    pub output_paths: Vec<String>,
}

/// Canonical config hash: JSON value with sorted keys, hashed bytewise, so
/// the hash is stable under key reordering of the source document.
pub fn config_hash(value: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(value).expect("canonical json");
    let mut h = Sha256::new();
    h.update(canonical.as_bytes());
    hex::encode(h.finalize())
}

pub fn cmd_calibrate(
    scores: &Path,
    lambda: f64,
    bootstrap_b: usize,
    alpha_boot: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let file = std::fs::File::open(scores)?;
    let rows = read_scores_csv(file)?;
    if rows.len() < 10 {
        return Err(Error::InsufficientData {
            needed: 10,
            have: rows.len(),
        });
    }
    let values: Vec<f64> = rows.iter().map(|(_, s)| *s).collect();
    let summary = CalibrationSummary::fit(&values, lambda, bootstrap_b, alpha_boot, seed)?;
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(out, json.as_bytes())?;
    println!(
        "mu_hat={} psi_plugin={} psi_bar={}",
        summary.mu_hat, summary.psi_plugin, summary.psi_bar
    );
    Ok(())
}

fn load_calibration(path: &Path) -> Result<CalibrationSummary> {
    let text = std::fs::read_to_string(path)?;
    let summary: CalibrationSummary =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("calibration json: {e}")))?;
    summary.validate()?;
    Ok(summary)
}

/// Runs the detector over a line-buffered reader of `t,score` rows,
/// emitting one JSON alarm line per crossing as it happens.
pub fn detect_from_reader<R: BufRead, W: Write>(
    calibration: CalibrationSummary,
    tau: f64,
    reset_policy: ResetPolicy,
    reader: R,
    mut out: W,
) -> Result<usize> {
    let mut detector = EProcessState::new(calibration, tau, reset_policy)?;
    let mut lines = reader.lines();
    let header = match lines.next() {
        None => return Ok(0), // empty input: no output, success
        Some(h) => h?,
    };
    let header = header.trim();
    if header != "t,score" {
        return Err(Error::Format(format!(
            "expected header `t,score`, got `{header}`"
        )));
    }
    let mut alarms = 0;
    for line in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, ',');
        let t: u64 = parts
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad t in `{line}`")))?;
        let s: f64 = parts
            .next()
            .ok_or_else(|| Error::Format(format!("missing score in `{line}`")))?
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad score in `{line}`")))?;
        if !s.is_finite() {
            return Err(Error::Format(format!("non-finite score at t={t}")));
        }
        let crossing = detector.log_m() + detector.increment(s);
        if detector.update(s)? {
            let event = AlarmEvent {
                t,
                log_m: crossing,
            };
            serde_json::to_writer(&mut out, &event)?;
            writeln!(out)?;
            out.flush()?;
            alarms += 1;
        }
    }
    Ok(alarms)
}

pub fn cmd_detect(
    calibration_path: &Path,
    tau: f64,
    scores: &str,
    reset_policy: ResetPolicy,
) -> Result<()> {
    let calibration = load_calibration(calibration_path)?;
    let stdout = std::io::stdout();
    if scores == "-" {
        let stdin = std::io::stdin();
        detect_from_reader(calibration, tau, reset_policy, stdin.lock(), stdout.lock())?;
    } else {
        let file = std::fs::File::open(scores)?;
        detect_from_reader(
            calibration,
            tau,
            reset_policy,
            std::io::BufReader::new(file),
            stdout.lock(),
        )?;
    }
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<String> {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value)?.as_bytes())?;
    Ok(path.display().to_string())
}

pub fn cmd_experiment(
    config_path: &Path,
    mode: ExperimentMode,
    out_dir: &Path,
    seed: u64,
    dump_trajectories: Option<usize>,
) -> Result<bool> {
    let text = std::fs::read_to_string(config_path)?;
    let mut config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("config json: {e}")))?;
    config.master_seed = seed;
    config.validate().map_err(|e| match e {
        Error::Config(m) => Error::Format(format!("config: {m}")),
        other => other,
    })?;
    std::fs::create_dir_all(out_dir)?;

    let assertions = config.assertions.clone().unwrap_or_default();
    let mut outputs = Vec::new();
    let violations;
    match mode {
        ExperimentMode::NullFar => {
            let report = run_detection(&config)?;
            println!("empirical_far={}", report.empirical_far);
            violations = check_assertions(&assertions, Some(&report), None, None, None);
            outputs.push(write_json(out_dir, "detection_report.json", &report)?);
        }
        ExperimentMode::DelaySweep => {
            let grid = config
                .tau_grid
                .clone()
                .unwrap_or_else(|| DEFAULT_TAU_GRID.to_vec());
            let report = delay_scaling_sweep(&config, &grid)?;
            println!(
                "slope={} predicted_slope={:?}",
                report.slope, report.predicted_slope
            );
            violations = check_assertions(&assertions, None, Some(&report), None, None);
            outputs.push(write_json(out_dir, "delay_sweep.json", &report)?);
        }
        ExperimentMode::Adapt => {
            let (detection, adaptation) = run_detect_adapt(&config)?;
            println!(
                "acc_post_no_adapt={} acc_post_adapt={} win_fraction={}",
                adaptation.acc_post_no_adapt,
                adaptation.acc_post_adapt,
                adaptation.adapt_win_fraction
            );
            violations = check_assertions(
                &assertions,
                Some(&detection),
                None,
                None,
                Some(&adaptation),
            );
            outputs.push(write_json(out_dir, "detection_report.json", &detection)?);
            outputs.push(write_json(out_dir, "adaptation_report.json", &adaptation)?);
        }
        ExperimentMode::Audit => {
            let report = supermartingale_audit(&config)?;
            for c in &report.checkpoints {
                println!(
                    "t={} mean={} std_err={} {}",
                    c.t,
                    c.mean,
                    c.std_err,
                    if c.pass { "pass" } else { "FLAG" }
                );
            }
            violations = check_assertions(&assertions, None, None, Some(&report), None);
            outputs.push(write_json(out_dir, "audit.json", &report)?);
        }
    }

    if let Some(n) = dump_trajectories {
        let rows = trajectories(&config, n)?;
        let path = out_dir.join("trajectories.csv");
        write_trajectories_csv(&rows, std::fs::File::create(&path)?)?;
        outputs.push(path.display().to_string());
    }

    // Hash the effective config (file content with the seed applied).
    let effective = serde_json::to_value(&config)?;
    let manifest = RunManifest {
        config_hash: config_hash(&effective),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        output_paths: outputs,
    };
    write_json(out_dir, "manifest.json", &manifest)?;

    for v in &violations {
        eprintln!("assertion violated: {v}");
    }
    Ok(violations.is_empty())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_simulate(
    config: Option<&Path>,
    seed: u64,
    length: usize,
    change_point: Option<usize>,
    shift_delta: f64,
    out: &str,
    scores_out: Option<&Path>,
) -> Result<()> {
    let mut cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<StreamConfig>(&text)
                .map_err(|e| Error::Format(format!("stream config json: {e}")))?
        }
        None => {
            let mut c = StreamConfig::desk_default(seed, length);
            if let Some(nu) = change_point {
                let mut delta = Array1::zeros(c.d);
                delta[0] = shift_delta;
                c = c.with_shift(nu, ShiftKind::MeanTranslate { delta });
            }
            c
        }
    };
    cfg.seed = seed;
    cfg.validate().map_err(|e| match e {
        Error::Config(m) => Error::Format(format!("stream config: {m}")),
        other => other,
    })?;
    let samples = generate(&cfg)?;
    if out == "-" {
        write_stream_csv(&samples, std::io::stdout().lock())?;
    } else {
        write_stream_csv(&samples, std::fs::File::create(out)?)?;
    }
    if let Some(path) = scores_out {
        // Desk model: class-mean prompts, feature statistics from a
        // held-out null draw of the same geometry.
        let params = crate::model::PromptParams::from_class_means(&cfg.class_means)?;
        let mut cal_cfg = cfg.clone();
        cal_cfg.seed = crate::numerics::derive_seed(seed, 0xCA1, 0);
        cal_cfg.change_point = None;
        cal_cfg.shift = None;
        cal_cfg.length = cfg.length.max(200);
        let cal = generate(&cal_cfg)?;
        let feats: Vec<Array1<f64>> = cal.iter().map(|s| s.feature.clone()).collect();
        let stats = FeatureStats::from_samples(&feats)?;
        let scores = score_samples(&samples, &params, &stats, &ScoreConfig::default())?;
        write_scores_csv(&scores, std::fs::File::create(path)?)?;
    }
    Ok(())
}

/// Maps an error to the documented process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Format(_) | Error::Json(_) | Error::Io(_) | Error::Config(_) => 2,
        Error::InsufficientData { .. } => 3,
        _ => 1,
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 4,
            };
            let _ = e.print();
            return code;
        }
    };
    let result: Result<bool> = match cli.command {
        Command::Calibrate {
            scores,
            lambda,
            bootstrap_b,
            alpha_boot,
            seed,
            out,
        } => cmd_calibrate(&scores, lambda, bootstrap_b, alpha_boot, seed, &out).map(|_| true),
        Command::Detect {
            calibration,
            tau,
            scores,
            reset_policy,
        } => cmd_detect(&calibration, tau, &scores, reset_policy.into()).map(|_| true),
        Command::Experiment {
            config,
            mode,
            out_dir,
            seed,
            trajectories,
        } => cmd_experiment(&config, mode, &out_dir, seed, trajectories),
        Command::Simulate {
            config,
            seed,
            length,
            change_point,
            shift_delta,
            out,
            scores_out,
        } => cmd_simulate(
            config.as_deref(),
            seed,
            length,
            change_point,
            shift_delta,
            &out,
            scores_out.as_deref(),
        )
        .map(|_| true),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1, // assertion violations
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_stable_under_key_reordering() {
        let a: serde_json::Value =
            serde_json::from_str(r#"{"b": 1, "a": {"y": 2, "x": [1, 2]}}"#).unwrap();
        let b: serde_json::Value =
            serde_json::from_str(r#"{"a": {"x": [1, 2], "y": 2}, "b": 1}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        let c: serde_json::Value = serde_json::from_str(r#"{"b": 2, "a": 1}"#).unwrap();
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn detect_reader_clean_cases() {
        let cal = CalibrationSummary::exact(0.5, 1.0, 0.5_f64.cosh().ln());
        // Empty input: success, no output.
        let mut out = Vec::new();
        let n = detect_from_reader(
            cal.clone(),
            100.0,
            ResetPolicy::ResetOnAlarm,
            "".as_bytes(),
            &mut out,
        )
        .unwrap();
        assert_eq!(n, 0);
        assert!(out.is_empty());

        // Thirteen ones: exactly one alarm at t = 13.
        let mut body = String::from("t,score\n");
        for t in 1..=13 {
            body.push_str(&format!("{t},1.0\n"));
        }
        let mut out = Vec::new();
        let n = detect_from_reader(
            cal.clone(),
            100.0,
            ResetPolicy::ResetOnAlarm,
            body.as_bytes(),
            &mut out,
        )
        .unwrap();
        assert_eq!(n, 1);
        let line = String::from_utf8(out).unwrap();
        let event: AlarmEvent = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(event.t, 13);

        // Bad rows are format errors.
        assert!(matches!(
            detect_from_reader(
                cal.clone(),
                100.0,
                ResetPolicy::ResetOnAlarm,
                "t,score\nx,y\n".as_bytes(),
                &mut Vec::new(),
            ),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            detect_from_reader(
                cal,
                100.0,
                ResetPolicy::ResetOnAlarm,
                "wrong,header\n".as_bytes(),
                &mut Vec::new(),
            ),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::Format("x".into())), 2);
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(
            exit_code(&Error::InsufficientData { needed: 10, have: 3 }),
            3
        );
        assert_eq!(exit_code(&Error::NonFinite("x")), 1);
    }
}
