//! Non-conformity scores on hand-built inputs.
//!
//! The score combines confidence deviation from uniform (KL to the uniform
//! distribution over classes) with the squared Mahalanobis distance of the
//! feature vector from the calibration mean:
//!
//! ```text
//! S = KL(p ‖ Uniform) + α · (x − μ)ᵀ Σ⁻¹ (x − μ)
//! ```
//!
//! Run with: `cargo run --example scores`

use driftguard::score::{
    kl_to_uniform, mahalanobis_sq, nonconformity, nonconformity_grad_logits, FeatureStats,
    ProbabilityVector, ScoreConfig,
};
use ndarray::{array, Array1, Array2};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Confidence term: 0 at uniform, ln C at one-hot.
    let uniform = ProbabilityVector::uniform(4);
    let confident = ProbabilityVector::new(vec![0.97, 0.01, 0.01, 0.01])?;
    let one_hot = ProbabilityVector::new(vec![1.0, 0.0, 0.0, 0.0])?;
    println!("KL to uniform (C = 4):");
    println!("  uniform    -> {:.6}", kl_to_uniform(&uniform));
    println!("  confident  -> {:.6}", kl_to_uniform(&confident));
    println!("  one-hot    -> {:.6} (= ln 4 = {:.6})", kl_to_uniform(&one_hot), 4.0_f64.ln());

    // Feature term: anisotropic metric weights directions differently.
    let stats = FeatureStats::new(array![0.0, 0.0], array![[2.0, 0.0], [0.0, 0.5]])?;
    println!("\nSquared Mahalanobis distance under diag(2, 0.5):");
    for x in [array![0.0, 0.0], array![1.0, 0.0], array![0.0, 1.0], array![1.0, 2.0]] {
        println!("  x = {:?} -> {:.3}", x.to_vec(), mahalanobis_sq(x.view(), &stats)?);
    }

    // Combined score with the default α = 0.5.
    let cfg = ScoreConfig::default();
    let d = 8;
    let stats = FeatureStats::new(Array1::zeros(d), Array2::eye(d))?;
    let mut off_manifold = Array1::zeros(d);
    off_manifold[0] = 3.0;
    let s_typical = nonconformity(&confident, Array1::zeros(d).view(), &stats, &cfg)?;
    let s_outlier = nonconformity(&confident, off_manifold.view(), &stats, &cfg)?;
    println!("\nCombined score (alpha = {}):", cfg.alpha_score);
    println!("  confident prediction, feature at the mean  -> {s_typical:.3}");
    println!("  confident prediction, feature 3 sigma out  -> {s_outlier:.3}");
    println!("  clipped at s_max = {}: {:.3}", cfg.s_max, cfg.clip(s_outlier));

    // The gradient that drives adaptation lives in the softmax tangent
    // space: entries always sum to zero.
    let g = nonconformity_grad_logits(array![2.0, 0.5, -1.0, 0.0].view())?;
    println!("\nScore gradient w.r.t. logits: {:?}", g.to_vec());
    println!("  sum = {:.2e}", g.sum());
    Ok(())
}
