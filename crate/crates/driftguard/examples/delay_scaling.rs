//! Detection delay against the `ln(τ)/Γ` scaling law.
//!
//! Γ is the post-shift growth rate of the e-process: the supremum over λ
//! of `λ·(post-shift mean − μ̂) − ψ(λ)`. Doubling the threshold buys more
//! false-alarm protection but costs `ln 2 / Γ` extra samples of delay — a
//! logarithmic, not linear, price.
//!
//! Run with: `cargo run --example delay_scaling`

use driftguard::eprocess::ResetPolicy;
use driftguard::harness::{
    delay_scaling_sweep, AdapterSettings, DetectorSettings, ExperimentConfig, PsiMode, ScoreSource,
};
use driftguard::score::ScoreConfig;
use driftguard::stream::{ShiftKind, StreamConfig};
use ndarray::Array1;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Gaussian idealization: unit mean shift at t = 0, psi(λ) = λ²/2 known
    // exactly, λ at the Γ-optimal value. Γ = Δ²/2 = 0.5.
    let mut delta = Array1::zeros(8);
    delta[0] = 1.0;
    let cfg = ExperimentConfig {
        stream: StreamConfig::desk_default(0, 1000)
            .with_shift(0, ShiftKind::MeanTranslate { delta }),
        score: ScoreConfig::default(),
        detector: DetectorSettings {
            tau: 100.0,
            lambda: 1.0,
            alpha_boot: 0.05,
            bootstrap_b: 1000,
            reset_policy: ResetPolicy::ResetOnAlarm,
            psi_mode: PsiMode::ExactGaussian,
            psi_undercut: 0.0,
        },
        adapter: AdapterSettings::default(),
        n_runs: 200,
        calibration_size: 100,
        master_seed: 12,
        score_source: ScoreSource::GaussianIdealized {
            post_shift_mean: 1.0,
        },
        tau_grid: None,
        assertions: None,
    };

    let sweep = delay_scaling_sweep(&cfg, &[20.0, 50.0, 100.0, 200.0, 500.0])?;
    let gamma = sweep.gamma_hat.unwrap();
    println!("Gamma_hat = {gamma:.3}\n");
    println!("{:>6} {:>12} {:>14}", "tau", "mean delay", "ln(tau)/Gamma");
    for p in &sweep.points {
        println!(
            "{:>6} {:>12.2} {:>14.2}",
            p.tau,
            p.mean_delay.unwrap(),
            p.tau.ln() / gamma
        );
    }
    println!(
        "\nfitted slope of delay vs ln(tau): {:.3} (theory: 1/Gamma = {:.3})",
        sweep.slope,
        sweep.predicted_slope.unwrap()
    );
    Ok(())
}
