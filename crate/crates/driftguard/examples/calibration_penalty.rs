//! The differentiable calibration penalty: soft-binned expected
//! calibration error and its gradient.
//!
//! Hard ECE bins predictions by confidence and compares per-bin accuracy
//! with per-bin confidence — a step function, useless for gradients. The
//! soft variant replaces bin indicators with logistic edge memberships and
//! per-sample accuracy with the probability assigned to the true label, so
//! the penalty admits an analytic gradient through the logits.
//!
//! Run with: `cargo run --example calibration_penalty`

use driftguard::fisher::{ece_hard, ece_soft, EceConfig};
use driftguard::numerics::softmax;
use driftguard::score::ProbabilityVector;
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Overconfident prediction set: the claimed probabilities are sharper
/// than the label distribution they are scored against.
fn overconfident_set(seed: u64, n: usize) -> Vec<(Array1<f64>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 4;
    (0..n)
        .map(|_| {
            let z = Array1::from_iter((0..c).map(|_| 4.5 * rng.gen_range(-1.0_f64..1.0)));
            let label_dist = softmax(z.mapv(|v| v * 0.4).view());
            let u: f64 = rng.gen();
            let mut cum = 0.0;
            let mut label = c - 1;
            for (i, &pi) in label_dist.iter().enumerate() {
                cum += pi;
                if u < cum {
                    label = i;
                    break;
                }
            }
            (z, label)
        })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sets = overconfident_set(17, 2000);
    let hard_preds: Vec<(ProbabilityVector, usize)> = sets
        .iter()
        .map(|(z, y)| (ProbabilityVector::from_logits(z.view()).unwrap(), *y))
        .collect();

    let cfg = EceConfig {
        n_bins: 15,
        sharpness: 50.0,
    };
    let hard = ece_hard(&hard_preds, 15)?;
    let (soft, _) = ece_soft(&sets, &cfg)?;
    println!("hard ECE (15 bins):      {hard:.4}");
    println!("soft ECE (sharpness 50): {soft:.4}");
    println!(
        "(the gap is the accuracy surrogate: probability of the true label \
         \n instead of a 0/1 correctness bit; it closes as predictions sharpen)"
    );

    // The analytic gradient matches central finite differences.
    let small = overconfident_set(99, 6);
    let (_, grads) = ece_soft(&small, &cfg)?;
    let h = 1e-6;
    let mut worst = 0.0_f64;
    for i in 0..small.len() {
        for j in 0..4 {
            let mut up = small.clone();
            up[i].0[j] += h;
            let mut dn = small.clone();
            dn[i].0[j] -= h;
            let fd = (ece_soft(&up, &cfg)?.0 - ece_soft(&dn, &cfg)?.0) / (2.0 * h);
            let denom = fd.abs().max(grads[i][j].abs()).max(1e-8);
            worst = worst.max((grads[i][j] - fd).abs() / denom);
        }
    }
    println!("\nworst finite-difference relative error over 24 coordinates: {worst:.2e}");

    // Gradient descent on the logits shrinks the penalty — this is the
    // signal that regularizes adaptation steps. The value is a mean over
    // samples, so a batch-sized learning rate gives visible movement.
    let mut current = overconfident_set(18, 400);
    let lr = 100.0;
    println!("\ngradient descent on the logits (n = 400, lr = {lr}):");
    for step in 0..8 {
        let (value, grads) = ece_soft(&current, &cfg)?;
        if step % 2 == 0 {
            println!("  step {step}: soft ECE = {value:.4}");
        }
        current = current
            .iter()
            .zip(&grads)
            .map(|((z, y), g)| (z - &(lr * g), *y))
            .collect();
    }
    let (final_v, _) = ece_soft(&current, &cfg)?;
    println!("  final:  soft ECE = {final_v:.4}");
    Ok(())
}
