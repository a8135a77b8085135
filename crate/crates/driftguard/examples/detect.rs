//! Sequential detection with the e-process detector.
//!
//! The running statistic multiplies per-sample factors
//! `exp(λ(S_t − μ̂) − ψ̄(λ))` (kept in the log domain). Under the null its
//! expectation never exceeds 1, so by Ville's inequality the probability of
//! ever reaching τ is at most 1/τ — anytime-valid, no fixed horizon.
//!
//! The flip side of that guarantee: under the null the statistic drifts
//! *down* at rate ψ̄(λ) per sample, so a detector left running through a
//! long null prefix has to climb out of a hole before it can alarm. The
//! demo below makes the hole visible.
//!
//! Run with: `cargo run --example detect`

use driftguard::calibration::CalibrationSummary;
use driftguard::eprocess::{detect_stream, false_alarm_budget, EProcessState, ResetPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian_scores(seed: u64, length: usize, nu: usize, delta: f64) -> Vec<(u64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=length)
        .map(|t| {
            let z: f64 = rng.sample(StandardNormal);
            (t as u64, if t > nu { z + delta } else { z })
        })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Standard normal null scores with the exactly known ψ(λ) = λ²/2; the
    // score mean jumps to 1.0 at the change point.
    let calibration = CalibrationSummary::exact(0.0, 1.0, 0.5);
    let tau = 100.0;
    println!(
        "tau = {tau}, false alarm budget = {:.3} (alpha_boot + 1/tau)",
        false_alarm_budget(tau, calibration.alpha_boot)
    );

    // Early shift: the detector fires about ln(tau)/Gamma = 9.2 samples in.
    let nu = 20;
    let scores = gaussian_scores(3, 200, nu, 1.0);
    let mut detector = EProcessState::new(calibration.clone(), tau, ResetPolicy::ResetOnAlarm)?;
    let events = detect_stream(&mut detector, scores.iter().copied())?;
    println!("\nshift at t = {nu}:");
    for e in &events {
        println!(
            "  alarm at t = {} (log M = {:.2} >= ln tau = {:.2}), delay = {}",
            e.t,
            e.log_m,
            tau.ln(),
            e.t - nu as u64
        );
    }

    // Late shift after a long null prefix: the statistic has drifted to
    // roughly −ψ̄·ν by the change point and must climb back first. This is
    // the price of a never-reset e-process and the reason the detector
    // restarts at 1 after each alarm under the default policy.
    let nu = 300;
    let scores = gaussian_scores(4, 500, nu, 1.0);
    let mut hole = 0.0_f64;
    let mut probe = EProcessState::new(calibration.clone(), tau, ResetPolicy::ResetOnAlarm)?;
    for (i, (_, s)) in scores.iter().enumerate() {
        if i < nu {
            probe.update(*s)?;
            hole = probe.log_m();
        }
    }
    let mut detector = EProcessState::new(calibration.clone(), tau, ResetPolicy::ResetOnAlarm)?;
    let events = detect_stream(&mut detector, scores.iter().copied())?;
    println!("\nshift at t = {nu} after a long null prefix:");
    println!("  log M at the change point: {hole:.1} (the hole)");
    match events.first() {
        Some(e) => println!("  first alarm at t = {} (delay {})", e.t, e.t - nu as u64),
        None => println!(
            "  no alarm within {} post-shift samples: the climb out of the \
             hole needs ~{:.0} samples at growth rate 0.5",
            scores.len() - nu,
            (-hole + tau.ln()) / 0.5
        ),
    }

    // The no-reset rule keeps firing while the statistic sits above the
    // threshold; the default rule restarts and fires once per detection
    // cycle.
    let scores = gaussian_scores(5, 120, 20, 1.0);
    for policy in [ResetPolicy::ResetOnAlarm, ResetPolicy::NoReset] {
        let mut d = EProcessState::new(calibration.clone(), tau, policy)?;
        let events = detect_stream(&mut d, scores.iter().copied())?;
        println!("\n{policy:?}: {} alarm events in 100 post-shift samples", events.len());
    }
    Ok(())
}
