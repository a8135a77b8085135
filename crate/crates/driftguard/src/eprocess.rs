//! Exponential supermartingale detector with Ville-threshold stopping.
//!
//! The running statistic is the corrected e-process
//!
//! ```text
//! M_t = Π_{i≤t} exp(λ(S_i − μ̂) − ψ̄(λ)),   M_0 = 1,
//! ```
//!
//! kept entirely in the log domain: under a sustained shift `ln M_t` grows
//! linearly and the linear-domain product overflows a double within a few
//! hundred steps. An alarm fires when `M_t ≥ τ`; by Ville's inequality the
//! probability of ever alarming under the null is at most `1/τ` given
//! `ψ̄ ≥ ψ`, hence at most `alpha_boot + 1/τ` unconditionally.
//!
//! The threshold comparison uses `≥`, the conservative direction; the
//! false-alarm bound is unaffected either way.

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationSummary;
use crate::error::{Error, Result};

/// What happens to the running statistic after an alarm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetPolicy {
    /// Restart `M_t` at 1 after each alarm: the standard rule for repeated
    /// change detection, and the default (one detection, one adaptation).
    ResetOnAlarm,
    /// Never reset: once the threshold is crossed, every subsequent sample
    /// that leaves the statistic above it re-fires. Kept for fidelity
    /// comparisons against the default restart rule.
    NoReset,
}

/// One alarm event, as emitted on the streaming interface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlarmEvent {
    /// 1-based sample index at which the threshold was reached.
    pub t: u64,
    /// `ln M_t` at the crossing (before any reset).
    pub log_m: f64,
}

/// Sequential e-process state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EProcessState {
    log_m: f64,
    t: u64,
    log_tau: f64,
    calibration: CalibrationSummary,
    alarm_times: Vec<u64>,
    reset_policy: ResetPolicy,
}

impl EProcessState {
    /// Fresh detector at `M_0 = 1` with threshold `τ = 1/δ > 1`.
    pub fn new(
        calibration: CalibrationSummary,
        tau: f64,
        reset_policy: ResetPolicy,
    ) -> Result<Self> {
        if !(tau > 1.0) {
            return Err(Error::invalid_parameter("tau", "must exceed 1"));
        }
        calibration.validate()?;
        Ok(Self {
            log_m: 0.0,
            t: 0,
            log_tau: tau.ln(),
            calibration,
            alarm_times: Vec::new(),
            reset_policy,
        })
    }

    /// Processes one score; returns whether this sample raised an alarm.
    ///
    /// The increment is `λ(s_t − μ̂) − ψ̄(λ)`. On alarm under
    /// [`ResetPolicy::ResetOnAlarm`] the statistic restarts at 1; the
    /// calibration is deliberately not refit (the null stays the pre-shift
    /// distribution unless the caller recalibrates explicitly).
    pub fn update(&mut self, s_t: f64) -> Result<bool> {
        if !s_t.is_finite() {
            return Err(Error::NonFinite("score"));
        }
        self.t += 1;
        self.log_m += self.increment(s_t);
        let alarm = self.log_m >= self.log_tau;
        if alarm {
            self.alarm_times.push(self.t);
            if self.reset_policy == ResetPolicy::ResetOnAlarm {
                self.log_m = 0.0;
            }
        }
        Ok(alarm)
    }

    /// The log-domain increment contributed by one score.
    pub fn increment(&self, s_t: f64) -> f64 {
        let c = &self.calibration;
        c.lambda * (s_t - c.mu_hat) - c.psi_bar
    }

    /// Restarts the statistic at `M = 1`, preserving the alarm history and
    /// the calibration. Idempotent.
    pub fn reset(&mut self) {
        self.log_m = 0.0;
    }

    /// Swaps in a freshly fitted calibration (the optional recalibration
    /// hook; never invoked automatically).
    pub fn recalibrate(&mut self, calibration: CalibrationSummary) -> Result<()> {
        calibration.validate()?;
        self.calibration = calibration;
        Ok(())
    }

    pub fn log_m(&self) -> f64 {
        self.log_m
    }

    /// Samples processed since construction.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn log_tau(&self) -> f64 {
        self.log_tau
    }

    pub fn alarm_times(&self) -> &[u64] {
        &self.alarm_times
    }

    pub fn calibration(&self) -> &CalibrationSummary {
        &self.calibration
    }

    pub fn reset_policy(&self) -> ResetPolicy {
        self.reset_policy
    }
}

/// Unconditional time-uniform false alarm budget `alpha_boot + 1/τ`.
pub fn false_alarm_budget(tau: f64, alpha_boot: f64) -> f64 {
    alpha_boot + 1.0 / tau
}

/// Runs a detector over `(t, score)` rows, emitting alarm events.
///
/// Row timestamps are reported as-is; the detector's own clock indexes the
/// rows in arrival order.
pub fn detect_stream<I>(state: &mut EProcessState, rows: I) -> Result<Vec<AlarmEvent>>
where
    I: IntoIterator<Item = (u64, f64)>,
{
    let mut events = Vec::new();
    for (t_row, score) in rows {
        // Capture the crossing value before a reset wipes it.
        let increment = state.increment(score);
        let crossing = state.log_m() + increment;
        if state.update(score)? {
            events.push(AlarmEvent {
                t: t_row,
                log_m: crossing,
            });
        }
    }
    Ok(events)
}
