//! Monte Carlo experiment harness: the full detect-then-adapt loop, plus
//! the suites that verify its statistical guarantees — false-alarm rate
//! under the null, expected detection delay against `ln(τ)/Γ`, the
//! supermartingale mean audit, and adaptation quality before/after shifts.
//!
//! Runs are independent and execute on a worker pool capped by the
//! `DRIFTGUARD_THREADS` environment variable; every run derives its own
//! seeds from the master seed, and aggregation folds per-run results in run
//! index order, so reports are byte-identical for any thread count.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::calibration::{estimate_gamma, psi_plugin, CalibrationSummary, DEFAULT_LAMBDA_GRID};
use crate::eprocess::{EProcessState, ResetPolicy};
use crate::error::{Error, Result};
use crate::fisher::{adapt, estimate_fisher_diag, EceConfig, FisherDiag, FisherLabelMode};
use crate::model::{LabeledSample, PromptParams};
use crate::numerics::derive_seed;
use crate::score::{nonconformity, FeatureStats, ProbabilityVector, ScoreConfig};
use crate::stream::{generate, StreamConfig};

/// Where the detector's ψ̄ comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiMode {
    /// Bootstrap upper bound fit per run from fresh calibration scores.
    Bootstrap,
    /// Plug-in ψ̂ without the finite-sample correction (no unconditional
    /// guarantee; kept for diagnosing the correction's effect).
    Plugin,
    /// Analytic injection for standard normal scores: μ = 0, ψ(λ) = λ²/2.
    /// Isolates the Ville guarantee from bootstrap estimation error.
    ExactGaussian,
}

/// Where the scores themselves come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    /// Full pipeline: simulated features through the classifier and the
    /// non-conformity score.
    Model,
    /// Score-level Gaussian idealization: N(0,1) before the change point,
    /// N(post_shift_mean, 1) after. Supports the closed-form ψ.
    GaussianIdealized { post_shift_mean: f64 },
}

/// Which features feed the Fisher estimate used at adaptation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherMode {
    /// Fisher frozen at the calibration (train-time) features, estimated
    /// once at the initial parameters. The default.
    TrainTime,
    /// Refit at each alarm from a sliding window of recent stream features
    /// (model-expectation mode, no labels needed).
    SlidingWindow { window: usize },
}

/// Detector block of the experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorSettings {
    pub tau: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_alpha_boot")]
    pub alpha_boot: f64,
    #[serde(default = "default_bootstrap_b")]
    pub bootstrap_b: usize,
    #[serde(default = "default_reset_policy")]
    pub reset_policy: ResetPolicy,
    #[serde(default = "default_psi_mode")]
    pub psi_mode: PsiMode,
    /// Deliberate downward bias applied to ψ̄ (negative-control knob for
    /// the supermartingale audit; zero in any real configuration).
    #[serde(default)]
    pub psi_undercut: f64,
}

fn default_lambda() -> f64 {
    0.5
}
fn default_alpha_boot() -> f64 {
    0.05
}
fn default_bootstrap_b() -> usize {
    1000
}
fn default_reset_policy() -> ResetPolicy {
    ResetPolicy::ResetOnAlarm
}
fn default_psi_mode() -> PsiMode {
    PsiMode::Bootstrap
}

/// Adapter block of the experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdapterSettings {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_gamma_damp")]
    pub gamma_damp: f64,
    #[serde(default)]
    pub ece: EceConfig,
    #[serde(default = "default_fisher_mode")]
    pub fisher_mode: FisherMode,
}

fn default_eta() -> f64 {
    5e-5
}
fn default_gamma_damp() -> f64 {
    1e-4
}
fn default_fisher_mode() -> FisherMode {
    FisherMode::TrainTime
}

impl Default for AdapterSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            eta: default_eta(),
            gamma_damp: default_gamma_damp(),
            ece: EceConfig::default(),
            fisher_mode: default_fisher_mode(),
        }
    }
}

/// CI-style bounds checked by `experiment` after a run; any violation makes
/// the process exit nonzero.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AssertionBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_empirical_far: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_delay_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_delay_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_must_pass: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_adapt_win_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub require_mean_ece_improvement: Option<bool>,
}

/// One experiment: stream geometry, score, detector, adapter, and the
/// Monte Carlo envelope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub stream: StreamConfig,
    #[serde(default)]
    pub score: ScoreConfig,
    pub detector: DetectorSettings,
    #[serde(default)]
    pub adapter: AdapterSettings,
    pub n_runs: usize,
    pub calibration_size: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_score_source")]
    pub score_source: ScoreSource,
    /// Thresholds for [`delay_scaling_sweep`]; defaults to
    /// {20, 50, 100, 200, 500}.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assertions: Option<AssertionBlock>,
}

fn default_score_source() -> ScoreSource {
    ScoreSource::Model
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        self.score.validate()?;
        if self.n_runs < 1 {
            return Err(Error::Config("n_runs must be >= 1".into()));
        }
        if self.calibration_size < 10 {
            return Err(Error::Config("calibration_size must be >= 10".into()));
        }
        if !(self.detector.tau > 1.0) {
            return Err(Error::Config("tau must exceed 1".into()));
        }
        if !(self.detector.lambda > 0.0) {
            return Err(Error::Config("lambda must be positive".into()));
        }
        if self.detector.psi_mode == PsiMode::Bootstrap
            && !(self.detector.alpha_boot > 0.0 && self.detector.alpha_boot < 0.5)
        {
            return Err(Error::Config("alpha_boot must lie in (0, 0.5)".into()));
        }
        if self.adapter.enabled {
            if let ScoreSource::GaussianIdealized { .. } = self.score_source {
                return Err(Error::Config(
                    "the adapter needs the model pipeline, not idealized scores".into(),
                ));
            }
            self.adapter.ece.validate()?;
            if !(self.adapter.eta > 0.0) {
                return Err(Error::Config("eta must be positive".into()));
            }
            if !(self.adapter.gamma_damp > 0.0) {
                return Err(Error::Config("gamma_damp must be positive".into()));
            }
        }
        Ok(())
    }

    /// Stream carrying the held-out calibration samples for one run;
    /// disjoint from the test stream by construction (independent seed).
    pub fn calibration_stream(&self, run: usize) -> StreamConfig {
        let mut cfg = self.stream.clone();
        cfg.seed = derive_seed(self.master_seed, run as u64, 0x11);
        cfg.length = self.calibration_size;
        cfg.change_point = None;
        cfg.shift = None;
        cfg
    }

    /// The test stream for one run.
    pub fn test_stream(&self, run: usize) -> StreamConfig {
        let mut cfg = self.stream.clone();
        cfg.seed = derive_seed(self.master_seed, run as u64, 0x22);
        cfg
    }

    fn bootstrap_seed(&self, run: usize) -> u64 {
        derive_seed(self.master_seed, run as u64, 0x33)
    }

    fn gaussian_seed(&self, run: usize, purpose: u64) -> u64 {
        derive_seed(self.master_seed, run as u64, 0x44 ^ (purpose << 8))
    }

    /// ν for delay accounting; a null stream never contributes a delay.
    fn change_point(&self) -> Option<usize> {
        self.stream.change_point
    }
}

/// Detection outcome of a single run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub alarms: Vec<u64>,
    /// First alarm strictly after ν, minus ν.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay: Option<u64>,
    /// Any alarm at t ≤ ν (for null streams: any alarm at all).
    pub falsely_alarmed: bool,
}

/// Aggregated detection metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionReport {
    pub runs: Vec<RunRecord>,
    /// Fraction of runs with at least one alarm inside the null segment.
    pub empirical_far: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_delay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay_std: Option<f64>,
    /// Growth-rate estimate from run 0's calibration and realized
    /// post-shift scores (grid supremum).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_hat: Option<f64>,
    /// First-order delay prediction `ln τ / Γ̂`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_delay: Option<f64>,
}

/// Per-run adaptation comparison (paired arms on the same stream).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptationRunRecord {
    pub acc_post_adapt: f64,
    pub acc_post_no_adapt: f64,
    pub ece_post_adapt: f64,
    pub ece_post_no_adapt: f64,
    pub adapt_steps: usize,
}

/// Aggregated accuracy/calibration before and after the shift, with and
/// without adaptation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub acc_pre: f64,
    pub acc_post_no_adapt: f64,
    pub acc_post_adapt: f64,
    pub ece_pre: f64,
    pub ece_post_no_adapt: f64,
    pub ece_post_adapt: f64,
    pub n_adapt_steps: usize,
    /// Fraction of paired runs where adaptation strictly improved
    /// post-shift accuracy.
    pub adapt_win_fraction: f64,
    pub runs: Vec<AdaptationRunRecord>,
    /// Run 0's adapted parameters with the train-time Fisher estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<ModelCheckpoint>,
}

/// One checkpoint of the supermartingale audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditCheckpoint {
    pub t: usize,
    pub mean: f64,
    pub std_err: f64,
    /// Mean within `1 + 3·SE`.
    pub pass: bool,
}

/// E-process mean audit over many null streams.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRecord {
    pub n_streams: usize,
    pub checkpoints: Vec<AuditCheckpoint>,
    pub all_pass: bool,
}

/// One threshold of the delay sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelayPoint {
    pub tau: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_delay: Option<f64>,
    pub n_delays: usize,
}

/// Delay-vs-threshold sweep with the fitted scaling law.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelaySweepReport {
    pub points: Vec<DelayPoint>,
    /// Least-squares slope of mean delay against ln τ.
    pub slope: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_hat: Option<f64>,
    /// `1/Γ̂`, the slope the scaling law predicts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_slope: Option<f64>,
}

static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

/// Worker pool capped by `DRIFTGUARD_THREADS` (unset: rayon's default).
pub fn thread_pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Ok(v) = std::env::var("DRIFTGUARD_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    builder = builder.num_threads(n);
                }
            }
        }
        builder.build().expect("worker pool")
    })
}

/// One `run,t,score,log_m,alarm` row of a dumped trajectory. `log_m` is
/// the post-update value before any reset (the crossing value on alarms).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub run: usize,
    pub t: u64,
    pub score: f64,
    pub log_m: f64,
    pub alarm: bool,
}

/// Writes trajectory rows as `run,t,score,log_m,alarm` CSV.
pub fn write_trajectories_csv<W: std::io::Write>(
    rows: &[TrajectoryRow],
    mut w: W,
) -> Result<()> {
    writeln!(w, "run,t,score,log_m,alarm")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.run, r.t, r.score, r.log_m, r.alarm as u8)?;
    }
    Ok(())
}

/// Adapted parameters with the Fisher estimate they were stepped under,
/// serialized alongside experiment reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub params: PromptParams,
    pub fisher: FisherDiag,
}

/// Everything one run produces; prediction records only exist on the model
/// path when requested.
struct ArmOutcome {
    alarms: Vec<u64>,
    /// (probabilities, label) per step, when tracked.
    predictions: Vec<(ProbabilityVector, usize)>,
    adapt_steps: usize,
    /// Mean score over the post-change segment (for Γ̂).
    post_mean_score: Option<f64>,
    final_params: PromptParams,
    /// (score, log_m, alarm) per step, when tracked.
    trace: Vec<(f64, f64, bool)>,
}

/// Per-run context for the model pipeline.
struct ModelRun {
    samples: Vec<LabeledSample>,
    cal_samples: Vec<LabeledSample>,
    cal_scores: Vec<f64>,
    stats: FeatureStats,
    calibration: CalibrationSummary,
    params0: PromptParams,
    fisher0: FisherDiag,
}

fn fit_run_calibration(
    cfg: &ExperimentConfig,
    cal_scores: &[f64],
    run: usize,
) -> Result<CalibrationSummary> {
    let det = &cfg.detector;
    let mut summary = match det.psi_mode {
        PsiMode::ExactGaussian => {
            CalibrationSummary::exact(0.0, det.lambda, det.lambda * det.lambda / 2.0)
        }
        PsiMode::Plugin => {
            let mu = crate::calibration::fit_mu_hat(cal_scores)?;
            let psi = psi_plugin(cal_scores, mu, det.lambda)?;
            let mut s = CalibrationSummary::exact(mu, det.lambda, psi);
            s.n = cal_scores.len();
            s
        }
        PsiMode::Bootstrap => CalibrationSummary::fit(
            cal_scores,
            det.lambda,
            det.bootstrap_b,
            det.alpha_boot,
            cfg.bootstrap_seed(run),
        )?,
    };
    summary.psi_bar -= det.psi_undercut;
    Ok(summary)
}

fn prepare_model_run(cfg: &ExperimentConfig, run: usize) -> Result<ModelRun> {
    let cal_samples = generate(&cfg.calibration_stream(run))?;
    let feats: Vec<Array1<f64>> = cal_samples.iter().map(|s| s.feature.clone()).collect();
    let stats = FeatureStats::from_samples(&feats)?;
    let params0 = PromptParams::from_class_means(&cfg.stream.class_means)?;
    let cal_scores: Vec<f64> = cal_samples
        .iter()
        .map(|s| {
            let p = params0.predict(s.feature.view())?;
            Ok(cfg.score.clip(nonconformity(&p, s.feature.view(), &stats, &cfg.score)?))
        })
        .collect::<Result<_>>()?;
    let calibration = fit_run_calibration(cfg, &cal_scores, run)?;
    // cal_scores ride along for growth-rate estimation.
    let fisher0 = estimate_fisher_diag(
        &params0,
        &cal_samples,
        cfg.adapter.gamma_damp,
        FisherLabelMode::ModelExpectation,
    )?;
    let samples = generate(&cfg.test_stream(run))?;
    Ok(ModelRun {
        samples,
        cal_samples,
        cal_scores,
        stats,
        calibration,
        params0,
        fisher0,
    })
}

/// Streams one arm of a model run: predict with the current parameters,
/// score, update the detector, adapt on alarm when enabled.
///
/// `tap`, when set, observes the 1-based index of every processed sample
/// in order (the sequential-causality audit hook: samples are pulled one
/// at a time and fully processed before the next is touched).
fn run_model_arm(
    cfg: &ExperimentConfig,
    ctx: &ModelRun,
    adapt_enabled: bool,
    track_predictions: bool,
    track_trace: bool,
    tap: Option<&mut dyn FnMut(usize)>,
) -> Result<ArmOutcome> {
    let mut detector = EProcessState::new(
        ctx.calibration.clone(),
        cfg.detector.tau,
        cfg.detector.reset_policy,
    )?;
    let mut params = ctx.params0.clone();
    let mut predictions = Vec::new();
    let mut trace = Vec::new();
    let mut adapt_steps = 0usize;
    let mut window: Vec<LabeledSample> = Vec::new();
    let mut post_sum = 0.0;
    let mut post_n = 0usize;
    let nu = cfg.change_point().unwrap_or(usize::MAX);
    let mut tap = tap;

    for (idx, sample) in ctx.samples.iter().enumerate() {
        let t = idx + 1;
        if let Some(cb) = tap.as_deref_mut() {
            cb(t);
        }
        let p = params.predict(sample.feature.view())?;
        if track_predictions {
            predictions.push((p.clone(), sample.label));
        }
        let raw = nonconformity(&p, sample.feature.view(), &ctx.stats, &cfg.score)?;
        let score = cfg.score.clip(raw);
        if t > nu {
            post_sum += score;
            post_n += 1;
        }
        if let FisherMode::SlidingWindow { window: w } = cfg.adapter.fisher_mode {
            window.push(sample.clone());
            if window.len() > w {
                window.remove(0);
            }
        }
        let crossing = detector.log_m() + detector.increment(score);
        let alarm = detector.update(score)?;
        if track_trace {
            trace.push((score, crossing, alarm));
        }
        if alarm && adapt_enabled {
            let fisher = match cfg.adapter.fisher_mode {
                FisherMode::TrainTime => ctx.fisher0.clone(),
                FisherMode::SlidingWindow { .. } => estimate_fisher_diag(
                    &params,
                    &window,
                    cfg.adapter.gamma_damp,
                    FisherLabelMode::ModelExpectation,
                )?,
            };
            params = adapt(
                &params,
                sample.feature.view(),
                &fisher,
                cfg.adapter.eta,
                Some(&ctx.cal_samples),
                &cfg.adapter.ece,
            )?;
            adapt_steps += 1;
        }
    }
    Ok(ArmOutcome {
        alarms: detector.alarm_times().to_vec(),
        predictions,
        adapt_steps,
        post_mean_score: (post_n > 0).then(|| post_sum / post_n as f64),
        final_params: params,
        trace,
    })
}

/// Gaussian-idealized scores for one run (sequential draws from the run's
/// own stream).
fn gaussian_scores(cfg: &ExperimentConfig, run: usize, post_shift_mean: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.gaussian_seed(run, 0));
    let nu = cfg.change_point().unwrap_or(usize::MAX);
    (1..=cfg.stream.length)
        .map(|t| {
            let z: f64 = rng.sample(StandardNormal);
            if t > nu {
                z + post_shift_mean
            } else {
                z
            }
        })
        .collect()
}

fn gaussian_calibration_scores(cfg: &ExperimentConfig, run: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.gaussian_seed(run, 1));
    (0..cfg.calibration_size)
        .map(|_| rng.sample(StandardNormal))
        .collect()
}

fn record_from_alarms(alarms: &[u64], nu: Option<usize>) -> RunRecord {
    let horizon = nu.map(|v| v as u64);
    let falsely_alarmed = match horizon {
        Some(h) => alarms.iter().any(|&a| a <= h),
        None => !alarms.is_empty(),
    };
    // Delay convention: first alarm strictly after ν, minus ν; a run that
    // already false-alarmed contributes no delay sample.
    let delay = if falsely_alarmed {
        None
    } else {
        horizon.and_then(|h| alarms.iter().find(|&&a| a > h).map(|&a| a - h))
    };
    RunRecord {
        alarms: alarms.to_vec(),
        delay,
        falsely_alarmed,
    }
}

fn detection_run(cfg: &ExperimentConfig, run: usize) -> Result<(RunRecord, Option<f64>, Option<Vec<f64>>)> {
    match &cfg.score_source {
        ScoreSource::Model => {
            let ctx = prepare_model_run(cfg, run)?;
            let arm = run_model_arm(cfg, &ctx, cfg.adapter.enabled, false, false, None)?;
            Ok((
                record_from_alarms(&arm.alarms, cfg.change_point()),
                arm.post_mean_score,
                (run == 0).then_some(ctx.cal_scores),
            ))
        }
        ScoreSource::GaussianIdealized { post_shift_mean } => {
            let scores = gaussian_scores(cfg, run, *post_shift_mean);
            let cal_scores = match cfg.detector.psi_mode {
                PsiMode::ExactGaussian => Vec::new(),
                _ => gaussian_calibration_scores(cfg, run),
            };
            let calibration = fit_run_calibration(cfg, &cal_scores, run)?;
            let mut detector =
                EProcessState::new(calibration, cfg.detector.tau, cfg.detector.reset_policy)?;
            let nu = cfg.change_point().unwrap_or(usize::MAX);
            let mut post_sum = 0.0;
            let mut post_n = 0usize;
            for (idx, &s) in scores.iter().enumerate() {
                if idx + 1 > nu {
                    post_sum += s;
                    post_n += 1;
                }
                detector.update(s)?;
            }
            Ok((
                record_from_alarms(detector.alarm_times(), cfg.change_point()),
                (post_n > 0).then(|| post_sum / post_n as f64),
                (run == 0).then_some(cal_scores),
            ))
        }
    }
}

fn gamma_from_observations(
    cfg: &ExperimentConfig,
    run0_cal: Option<&[f64]>,
    post_mean: Option<f64>,
) -> Option<f64> {
    let post_mean = post_mean?;
    let fine_grid: Vec<f64> = (1..=300).map(|i| i as f64 * 0.01).collect();
    let est = match cfg.detector.psi_mode {
        PsiMode::ExactGaussian => {
            estimate_gamma(0.0, |l| 0.5 * l * l, post_mean, &fine_grid).ok()?
        }
        _ => {
            let cal = run0_cal?;
            if cal.len() < 2 {
                return None;
            }
            let mu = crate::calibration::fit_mu_hat(cal).ok()?;
            estimate_gamma(
                mu,
                |l| psi_plugin(cal, mu, l).unwrap_or(f64::INFINITY),
                post_mean,
                &DEFAULT_LAMBDA_GRID,
            )
            .ok()?
        }
    };
    (est.gamma > 0.0).then_some(est.gamma)
}

/// Runs the detection experiment over `n_runs` independent streams.
pub fn run_detection(cfg: &ExperimentConfig) -> Result<DetectionReport> {
    cfg.validate()?;
    let outcomes: Vec<Result<(RunRecord, Option<f64>, Option<Vec<f64>>)>> = thread_pool()
        .install(|| (0..cfg.n_runs).into_par_iter().map(|r| detection_run(cfg, r)).collect());
    let mut runs = Vec::with_capacity(cfg.n_runs);
    let mut post_means = Vec::new();
    let mut run0_cal: Option<Vec<f64>> = None;
    for o in outcomes {
        let (rec, post_mean, cal) = o?;
        if let Some(c) = cal {
            run0_cal = Some(c);
        }
        if let Some(m) = post_mean {
            post_means.push(m);
        }
        runs.push(rec);
    }
    let n = runs.len() as f64;
    let empirical_far = runs.iter().filter(|r| r.falsely_alarmed).count() as f64 / n;
    let delays: Vec<f64> = runs.iter().filter_map(|r| r.delay.map(|d| d as f64)).collect();
    let mean_delay = (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64);
    let delay_std = mean_delay.map(|m| {
        (delays.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / delays.len() as f64).sqrt()
    });
    let pooled_post_mean = (!post_means.is_empty())
        .then(|| post_means.iter().sum::<f64>() / post_means.len() as f64);
    let gamma_hat = gamma_from_observations(cfg, run0_cal.as_deref(), pooled_post_mean);
    let predicted_delay = gamma_hat.map(|g| cfg.detector.tau.ln() / g);
    Ok(DetectionReport {
        runs,
        empirical_far,
        mean_delay,
        delay_std,
        gamma_hat,
        predicted_delay,
    })
}

fn segment_metrics(
    predictions: &[(ProbabilityVector, usize)],
    range: std::ops::Range<usize>,
    n_bins: usize,
) -> (f64, f64) {
    let segment = &predictions[range];
    if segment.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let acc = segment
        .iter()
        .filter(|(p, y)| p.argmax() == *y)
        .count() as f64
        / segment.len() as f64;
    let ece = crate::fisher::ece_hard(segment, n_bins).unwrap_or(f64::NAN);
    (acc, ece)
}

/// Runs the full loop: detection plus (when enabled) Fisher adaptation,
/// with a paired frozen-parameter arm on the same stream for comparison.
pub fn run_detect_adapt(cfg: &ExperimentConfig) -> Result<(DetectionReport, AdaptationReport)> {
    cfg.validate()?;
    if !matches!(cfg.score_source, ScoreSource::Model) {
        return Err(Error::Config(
            "run_detect_adapt requires the model score source".into(),
        ));
    }
    struct PairedOutcome {
        record: RunRecord,
        adapt_rec: AdaptationRunRecord,
        acc_pre: f64,
        ece_pre: f64,
        post_mean: Option<f64>,
        cal_scores: Option<Vec<f64>>,
        checkpoint: Option<ModelCheckpoint>,
    }
    let nu = cfg.change_point().unwrap_or(cfg.stream.length);
    let n_bins = cfg.adapter.ece.n_bins;
    let outcomes: Vec<Result<PairedOutcome>> = thread_pool().install(|| {
        (0..cfg.n_runs)
            .into_par_iter()
            .map(|run| {
                let ctx = prepare_model_run(cfg, run)?;
                let frozen = run_model_arm(cfg, &ctx, false, true, false, None)?;
                let adapted = if cfg.adapter.enabled {
                    run_model_arm(cfg, &ctx, true, true, false, None)?
                } else {
                    run_model_arm(cfg, &ctx, false, true, false, None)?
                };
                let len = ctx.samples.len();
                let (acc_pre, ece_pre) =
                    segment_metrics(&frozen.predictions, 0..nu.min(len), n_bins);
                let (acc_post_no, ece_post_no) =
                    segment_metrics(&frozen.predictions, nu.min(len)..len, n_bins);
                let (acc_post_ad, ece_post_ad) =
                    segment_metrics(&adapted.predictions, nu.min(len)..len, n_bins);
                let cal_scores = (run == 0).then(|| ctx.cal_scores.clone());
                let checkpoint = (run == 0 && cfg.adapter.enabled).then(|| ModelCheckpoint {
                    params: adapted.final_params.clone(),
                    fisher: ctx.fisher0.clone(),
                });
                Ok(PairedOutcome {
                    record: record_from_alarms(&adapted.alarms, cfg.change_point()),
                    adapt_rec: AdaptationRunRecord {
                        acc_post_adapt: acc_post_ad,
                        acc_post_no_adapt: acc_post_no,
                        ece_post_adapt: ece_post_ad,
                        ece_post_no_adapt: ece_post_no,
                        adapt_steps: adapted.adapt_steps,
                    },
                    acc_pre,
                    ece_pre,
                    post_mean: frozen.post_mean_score,
                    cal_scores,
                    checkpoint,
                })
            })
            .collect()
    });

    let mut runs = Vec::with_capacity(cfg.n_runs);
    let mut adapt_runs = Vec::with_capacity(cfg.n_runs);
    let mut acc_pre_sum = 0.0;
    let mut ece_pre_sum = 0.0;
    let mut post_means = Vec::new();
    let mut run0_cal: Option<Vec<f64>> = None;
    let mut checkpoint = None;
    for o in outcomes {
        let o = o?;
        acc_pre_sum += o.acc_pre;
        ece_pre_sum += o.ece_pre;
        if let Some(c) = o.cal_scores {
            run0_cal = Some(c);
        }
        if o.checkpoint.is_some() {
            checkpoint = o.checkpoint;
        }
        if let Some(m) = o.post_mean {
            post_means.push(m);
        }
        runs.push(o.record);
        adapt_runs.push(o.adapt_rec);
    }
    let n = cfg.n_runs as f64;
    let empirical_far = runs.iter().filter(|r| r.falsely_alarmed).count() as f64 / n;
    let delays: Vec<f64> = runs.iter().filter_map(|r| r.delay.map(|d| d as f64)).collect();
    let mean_delay = (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64);
    let delay_std = mean_delay.map(|m| {
        (delays.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / delays.len() as f64).sqrt()
    });
    let pooled_post_mean = (!post_means.is_empty())
        .then(|| post_means.iter().sum::<f64>() / post_means.len() as f64);
    let gamma_hat = gamma_from_observations(cfg, run0_cal.as_deref(), pooled_post_mean);
    let predicted_delay = gamma_hat.map(|g| cfg.detector.tau.ln() / g);

    let mean = |f: &dyn Fn(&AdaptationRunRecord) -> f64| {
        adapt_runs.iter().map(|r| f(r)).sum::<f64>() / n
    };
    let wins = adapt_runs
        .iter()
        .filter(|r| r.acc_post_adapt > r.acc_post_no_adapt)
        .count() as f64;
    let adaptation = AdaptationReport {
        acc_pre: acc_pre_sum / n,
        acc_post_no_adapt: mean(&|r| r.acc_post_no_adapt),
        acc_post_adapt: mean(&|r| r.acc_post_adapt),
        ece_pre: ece_pre_sum / n,
        ece_post_no_adapt: mean(&|r| r.ece_post_no_adapt),
        ece_post_adapt: mean(&|r| r.ece_post_adapt),
        n_adapt_steps: adapt_runs.iter().map(|r| r.adapt_steps).sum(),
        adapt_win_fraction: wins / n,
        runs: adapt_runs,
        checkpoint,
    };
    let detection = DetectionReport {
        runs,
        empirical_far,
        mean_delay,
        delay_std,
        gamma_hat,
        predicted_delay,
    };
    Ok((detection, adaptation))
}

/// Audit checkpoints (plus the trivial t = 0, where `M_0 = 1` exactly).
pub const AUDIT_CHECKPOINTS: [usize; 5] = [1, 5, 10, 25, 50];

/// Estimates `E[M_t]` at fixed checkpoints over `n_runs` null streams;
/// flags any checkpoint where the sample mean exceeds `1 + 3·SE`.
///
/// The audit accumulates the raw product (no alarms, no resets) — the
/// supermartingale property concerns the unstopped process.
pub fn supermartingale_audit(cfg: &ExperimentConfig) -> Result<AuditRecord> {
    cfg.validate()?;
    if cfg.change_point().is_some() {
        return Err(Error::Config("the audit needs a null stream".into()));
    }
    let max_t = *AUDIT_CHECKPOINTS.iter().max().unwrap();
    if cfg.stream.length < max_t {
        return Err(Error::Config(format!(
            "stream length {} shorter than the last checkpoint {max_t}",
            cfg.stream.length
        )));
    }
    let per_run: Vec<Result<Vec<f64>>> = thread_pool().install(|| {
        (0..cfg.n_runs)
            .into_par_iter()
            .map(|run| {
                let (scores, calibration): (Vec<f64>, CalibrationSummary) =
                    match &cfg.score_source {
                        ScoreSource::Model => {
                            let ctx = prepare_model_run(cfg, run)?;
                            let scores = ctx
                                .samples
                                .iter()
                                .map(|s| {
                                    let p = ctx.params0.predict(s.feature.view())?;
                                    Ok(cfg.score.clip(nonconformity(
                                        &p,
                                        s.feature.view(),
                                        &ctx.stats,
                                        &cfg.score,
                                    )?))
                                })
                                .collect::<Result<_>>()?;
                            (scores, ctx.calibration)
                        }
                        ScoreSource::GaussianIdealized { post_shift_mean } => {
                            let scores = gaussian_scores(cfg, run, *post_shift_mean);
                            let cal_scores = match cfg.detector.psi_mode {
                                PsiMode::ExactGaussian => Vec::new(),
                                _ => gaussian_calibration_scores(cfg, run),
                            };
                            (scores, fit_run_calibration(cfg, &cal_scores, run)?)
                        }
                    };
                let mut log_m = 0.0;
                let mut values = Vec::with_capacity(AUDIT_CHECKPOINTS.len());
                for (idx, &s) in scores.iter().take(max_t).enumerate() {
                    log_m += calibration.lambda * (s - calibration.mu_hat) - calibration.psi_bar;
                    if AUDIT_CHECKPOINTS.contains(&(idx + 1)) {
                        values.push(log_m.exp());
                    }
                }
                Ok(values)
            })
            .collect()
    });
    let mut sums = vec![0.0; AUDIT_CHECKPOINTS.len()];
    let mut sq_sums = vec![0.0; AUDIT_CHECKPOINTS.len()];
    let mut n = 0usize;
    for r in per_run {
        let vals = r?;
        for (i, v) in vals.iter().enumerate() {
            sums[i] += v;
            sq_sums[i] += v * v;
        }
        n += 1;
    }
    let mut checkpoints = vec![AuditCheckpoint {
        t: 0,
        mean: 1.0,
        std_err: 0.0,
        pass: true,
    }];
    let nf = n as f64;
    for (i, &t) in AUDIT_CHECKPOINTS.iter().enumerate() {
        let mean = sums[i] / nf;
        let var = (sq_sums[i] / nf - mean * mean).max(0.0);
        let std_err = (var / nf).sqrt();
        checkpoints.push(AuditCheckpoint {
            t,
            mean,
            std_err,
            pass: mean <= 1.0 + 3.0 * std_err,
        });
    }
    let all_pass = checkpoints.iter().all(|c| c.pass);
    Ok(AuditRecord {
        n_streams: n,
        checkpoints,
        all_pass,
    })
}

/// Default threshold grid for the delay sweep.
pub const DEFAULT_TAU_GRID: [f64; 5] = [20.0, 50.0, 100.0, 200.0, 500.0];

/// Measures mean detection delay across thresholds and fits the slope of
/// delay against `ln τ` by least squares.
pub fn delay_scaling_sweep(cfg: &ExperimentConfig, tau_grid: &[f64]) -> Result<DelaySweepReport> {
    cfg.validate()?;
    if tau_grid.is_empty() || tau_grid.windows(2).any(|w| w[0] >= w[1]) || tau_grid[0] <= 1.0 {
        return Err(Error::Config(
            "tau grid must be increasing with every value above 1".into(),
        ));
    }
    let mut points = Vec::with_capacity(tau_grid.len());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut gamma_hat = None;
    for (i, &tau) in tau_grid.iter().enumerate() {
        let mut sub = cfg.clone();
        sub.detector.tau = tau;
        // Independent randomness per threshold, still derived from the
        // master seed.
        sub.master_seed = derive_seed(cfg.master_seed, 0x7A0 + i as u64, 0x55);
        let report = run_detection(&sub)?;
        if gamma_hat.is_none() {
            gamma_hat = report.gamma_hat;
        }
        let n_delays = report.runs.iter().filter(|r| r.delay.is_some()).count();
        if let Some(m) = report.mean_delay {
            xs.push(tau.ln());
            ys.push(m);
        }
        points.push(DelayPoint {
            tau,
            mean_delay: report.mean_delay,
            n_delays,
        });
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            have: xs.len(),
        });
    }
    let nx = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / nx;
    let my = ys.iter().sum::<f64>() / nx;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok(DelaySweepReport {
        points,
        slope,
        gamma_hat,
        predicted_slope: gamma_hat.map(|g| 1.0 / g),
    })
}

/// Replays the first `max_runs` runs of an experiment and collects their
/// per-step detector trajectories for external plotting. Runs are
/// deterministic, so the replay matches what the experiment executed.
pub fn trajectories(cfg: &ExperimentConfig, max_runs: usize) -> Result<Vec<TrajectoryRow>> {
    cfg.validate()?;
    let n = max_runs.min(cfg.n_runs);
    let mut rows = Vec::new();
    for run in 0..n {
        match &cfg.score_source {
            ScoreSource::Model => {
                let ctx = prepare_model_run(cfg, run)?;
                let arm = run_model_arm(cfg, &ctx, cfg.adapter.enabled, false, true, None)?;
                for (idx, (score, log_m, alarm)) in arm.trace.iter().enumerate() {
                    rows.push(TrajectoryRow {
                        run,
                        t: idx as u64 + 1,
                        score: *score,
                        log_m: *log_m,
                        alarm: *alarm,
                    });
                }
            }
            ScoreSource::GaussianIdealized { post_shift_mean } => {
                let scores = gaussian_scores(cfg, run, *post_shift_mean);
                let cal_scores = match cfg.detector.psi_mode {
                    PsiMode::ExactGaussian => Vec::new(),
                    _ => gaussian_calibration_scores(cfg, run),
                };
                let calibration = fit_run_calibration(cfg, &cal_scores, run)?;
                let mut detector =
                    EProcessState::new(calibration, cfg.detector.tau, cfg.detector.reset_policy)?;
                for (idx, &s) in scores.iter().enumerate() {
                    let crossing = detector.log_m() + detector.increment(s);
                    let alarm = detector.update(s)?;
                    rows.push(TrajectoryRow {
                        run,
                        t: idx as u64 + 1,
                        score: s,
                        log_m: crossing,
                        alarm,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Checks a report against the config's assertion block; returns the list
/// of violated bounds (empty = all good).
pub fn check_assertions(
    assertions: &AssertionBlock,
    detection: Option<&DetectionReport>,
    sweep: Option<&DelaySweepReport>,
    audit: Option<&AuditRecord>,
    adaptation: Option<&AdaptationReport>,
) -> Vec<String> {
    let mut violations = Vec::new();
    if let (Some(bound), Some(rep)) = (assertions.max_empirical_far, detection) {
        if rep.empirical_far > bound {
            violations.push(format!(
                "empirical_far {} exceeds bound {bound}",
                rep.empirical_far
            ));
        }
    }
    if let Some(rep) = detection {
        if let Some(lo) = assertions.mean_delay_min {
            match rep.mean_delay {
                Some(m) if m >= lo => {}
                other => violations.push(format!("mean_delay {other:?} below {lo}")),
            }
        }
        if let Some(hi) = assertions.mean_delay_max {
            match rep.mean_delay {
                Some(m) if m <= hi => {}
                other => violations.push(format!("mean_delay {other:?} above {hi}")),
            }
        }
    }
    if let Some(sw) = sweep {
        if let Some(lo) = assertions.slope_min {
            if sw.slope < lo {
                violations.push(format!("slope {} below {lo}", sw.slope));
            }
        }
        if let Some(hi) = assertions.slope_max {
            if sw.slope > hi {
                violations.push(format!("slope {} above {hi}", sw.slope));
            }
        }
    }
    if let (Some(expected), Some(a)) = (assertions.audit_must_pass, audit) {
        if a.all_pass != expected {
            violations.push(format!(
                "audit all_pass = {} but expected {expected}",
                a.all_pass
            ));
        }
    }
    if let Some(ad) = adaptation {
        if let Some(bound) = assertions.min_adapt_win_fraction {
            if ad.adapt_win_fraction < bound {
                violations.push(format!(
                    "adapt_win_fraction {} below {bound}",
                    ad.adapt_win_fraction
                ));
            }
        }
        if assertions.require_mean_ece_improvement == Some(true)
            && ad.ece_post_adapt > ad.ece_post_no_adapt
        {
            violations.push(format!(
                "mean ece_post_adapt {} exceeds ece_post_no_adapt {}",
                ad.ece_post_adapt, ad.ece_post_no_adapt
            ));
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{generate_score_stream, ShiftKind};

    fn gaussian_cfg(n_runs: usize, length: usize, shift: Option<(usize, f64)>) -> ExperimentConfig {
        let mut stream = StreamConfig::desk_default(0, length);
        if let Some((nu, delta)) = shift {
            stream = stream.with_shift(
                nu,
                ShiftKind::MeanTranslate {
                    delta: {
                        let mut v = Array1::zeros(8);
                        v[0] = delta;
                        v
                    },
                },
            );
        }
        ExperimentConfig {
            stream,
            score: ScoreConfig::default(),
            detector: DetectorSettings {
                tau: 100.0,
                lambda: 1.0,
                alpha_boot: 0.05,
                bootstrap_b: 200,
                reset_policy: ResetPolicy::ResetOnAlarm,
                psi_mode: PsiMode::ExactGaussian,
                psi_undercut: 0.0,
            },
            adapter: AdapterSettings::default(),
            n_runs,
            calibration_size: 100,
            master_seed: 7,
            score_source: ScoreSource::GaussianIdealized {
                post_shift_mean: 1.0,
            },
            tau_grid: None,
            assertions: None,
        }
    }

    #[test]
    fn gaussian_null_rarely_alarms() {
        let mut cfg = gaussian_cfg(200, 500, None);
        cfg.stream.change_point = None;
        cfg.stream.shift = None;
        let report = run_detection(&cfg).unwrap();
        assert!(report.empirical_far <= 0.03, "far {}", report.empirical_far);
        assert!(report.mean_delay.is_none());
    }

    #[test]
    fn gaussian_shift_detected_with_sane_delay() {
        let cfg = gaussian_cfg(100, 400, Some((0, 1.0)));
        let report = run_detection(&cfg).unwrap();
        let mean = report.mean_delay.unwrap();
        assert!(mean > 5.0 && mean < 20.0, "mean delay {mean}");
        let gamma = report.gamma_hat.unwrap();
        assert!((gamma - 0.5).abs() < 0.1, "gamma_hat {gamma}");
    }

    #[test]
    fn reports_are_deterministic_across_reruns() {
        let cfg = gaussian_cfg(50, 200, Some((50, 1.0)));
        let a = serde_json::to_string(&run_detection(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&run_detection(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adapter_disabled_equals_standalone_replay() {
        // The harness with the adapter off must produce exactly the alarms
        // of a bare detector replayed over generate_score_stream's output.
        let mut cfg = gaussian_cfg(3, 300, Some((100, 0.0)));
        cfg.score_source = ScoreSource::Model;
        cfg.detector.psi_mode = PsiMode::Bootstrap;
        cfg.detector.lambda = 0.2;
        cfg.detector.tau = 20.0;
        cfg.stream = StreamConfig::desk_default(0, 300).with_shift(
            100,
            ShiftKind::MeanTranslate {
                delta: {
                    let mut v = Array1::zeros(8);
                    v[0] = 2.0;
                    v
                },
            },
        );
        let report = run_detection(&cfg).unwrap();

        for run in 0..cfg.n_runs {
            let ctx = prepare_model_run(&cfg, run).unwrap();
            let scores = generate_score_stream(
                &cfg.test_stream(run),
                &ctx.params0,
                &ctx.stats,
                &cfg.score,
            )
            .unwrap();
            let mut det = EProcessState::new(
                ctx.calibration.clone(),
                cfg.detector.tau,
                cfg.detector.reset_policy,
            )
            .unwrap();
            for (_, s) in scores {
                det.update(s).unwrap();
            }
            assert_eq!(report.runs[run].alarms, det.alarm_times());
        }
    }

    #[test]
    fn audit_passes_under_exact_psi_and_flags_undercut() {
        // 20k streams: the 3·SE band is then tight enough for the 0.05
        // undercut (mean e^{0.05t}) to flag at the first checkpoint.
        let mut cfg = gaussian_cfg(20_000, 50, None);
        cfg.stream.change_point = None;
        cfg.stream.shift = None;
        let record = supermartingale_audit(&cfg).unwrap();
        assert!(record.all_pass, "checkpoints {:?}", record.checkpoints);
        assert_eq!(record.checkpoints[0].mean, 1.0);

        let mut bad = cfg.clone();
        bad.detector.psi_undercut = 0.05;
        let record = supermartingale_audit(&bad).unwrap();
        assert!(!record.all_pass, "negative control failed to flag");
    }

    #[test]
    fn sequential_causality_tap_sees_ordered_prefix() {
        let mut cfg = gaussian_cfg(1, 50, None);
        cfg.score_source = ScoreSource::Model;
        cfg.detector.psi_mode = PsiMode::Bootstrap;
        cfg.stream = StreamConfig::desk_default(3, 50);
        let ctx = prepare_model_run(&cfg, 0).unwrap();
        let mut seen = Vec::new();
        let mut tap = |t: usize| seen.push(t);
        run_model_arm(&cfg, &ctx, false, false, false, Some(&mut tap)).unwrap();
        let expected: Vec<usize> = (1..=50).collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let mut cfg = gaussian_cfg(0, 100, None);
        assert!(cfg.validate().is_err()); // n_runs 0
        cfg.n_runs = 10;
        cfg.calibration_size = 5;
        assert!(cfg.validate().is_err()); // calibration too small
        cfg.calibration_size = 50;
        cfg.adapter.enabled = true;
        assert!(cfg.validate().is_err()); // adapter with idealized scores
    }

    #[test]
    fn sliding_window_fisher_mode_runs_and_adapts() {
        let mut delta = Array1::zeros(8);
        delta[0] = 2.0;
        let cfg = ExperimentConfig {
            stream: StreamConfig::desk_default(0, 300)
                .with_shift(100, ShiftKind::MeanTranslate { delta }),
            score: ScoreConfig::default(),
            detector: DetectorSettings {
                tau: 20.0,
                lambda: 0.15,
                alpha_boot: 0.05,
                bootstrap_b: 300,
                reset_policy: ResetPolicy::ResetOnAlarm,
                psi_mode: PsiMode::Bootstrap,
                psi_undercut: 0.0,
            },
            adapter: AdapterSettings {
                enabled: true,
                eta: 1e-3,
                gamma_damp: 1e-4,
                ece: crate::fisher::EceConfig::default(),
                fisher_mode: FisherMode::SlidingWindow { window: 64 },
            },
            n_runs: 3,
            calibration_size: 100,
            master_seed: 5,
            score_source: ScoreSource::Model,
            tau_grid: None,
            assertions: None,
        };
        let (_, adaptation) = run_detect_adapt(&cfg).unwrap();
        assert!(adaptation.n_adapt_steps > 0, "no adaptation fired");
        assert!(adaptation.checkpoint.is_some());
        // Rerun is byte-identical with the window refits in the loop.
        let (_, again) = run_detect_adapt(&cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&adaptation).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn doubling_gamma_roughly_halves_delay() {
        // Γ = Δ²/2 at the optimal λ = Δ; doubling Γ (δ·√2, λ·√2) should
        // cut mean delay by a factor in [0.4, 0.6].
        let mut slow = gaussian_cfg(400, 600, Some((0, 1.0)));
        slow.score_source = ScoreSource::GaussianIdealized {
            post_shift_mean: 1.0,
        };
        slow.detector.lambda = 1.0;
        let mut fast = slow.clone();
        fast.score_source = ScoreSource::GaussianIdealized {
            post_shift_mean: 2.0_f64.sqrt(),
        };
        fast.detector.lambda = 2.0_f64.sqrt();
        fast.master_seed = 77;
        let d_slow = run_detection(&slow).unwrap().mean_delay.unwrap();
        let d_fast = run_detection(&fast).unwrap().mean_delay.unwrap();
        let ratio = d_fast / d_slow;
        assert!(
            (0.4..=0.6).contains(&ratio),
            "delay ratio {ratio} ({d_fast} / {d_slow})"
        );
    }

    #[test]
    fn sweep_delays_nondecreasing_in_tau() {
        let cfg = gaussian_cfg(200, 800, Some((0, 1.0)));
        let sweep = delay_scaling_sweep(&cfg, &[20.0, 50.0, 100.0, 200.0, 500.0]).unwrap();
        let delays: Vec<f64> = sweep.points.iter().map(|p| p.mean_delay.unwrap()).collect();
        for w in delays.windows(2) {
            // Up to one sample of Monte Carlo noise.
            assert!(w[1] >= w[0] - 1.0, "delays decreased: {delays:?}");
        }
        assert!(sweep.slope > 0.0);
    }

    #[test]
    fn assertion_block_reports_violations() {
        let cfg = gaussian_cfg(50, 300, Some((0, 1.0)));
        let report = run_detection(&cfg).unwrap();
        let a = AssertionBlock {
            mean_delay_max: Some(1.0),
            ..Default::default()
        };
        let v = check_assertions(&a, Some(&report), None, None, None);
        assert_eq!(v.len(), 1);
        let ok = AssertionBlock {
            mean_delay_max: Some(100.0),
            max_empirical_far: Some(1.0),
            ..Default::default()
        };
        assert!(check_assertions(&ok, Some(&report), None, None, None).is_empty());
    }
}
