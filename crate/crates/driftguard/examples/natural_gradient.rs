//! Fisher-preconditioned (natural gradient) updates and their geometry.
//!
//! Dividing each gradient coordinate by the damped diagonal Fisher makes
//! the step a trust-region move in prediction space: parameter directions
//! the output distribution is sensitive to move cautiously, insensitive
//! ones move freely, and the induced KL between old and new predictive
//! distributions shrinks quadratically with the learning rate.
//!
//! Run with: `cargo run --example natural_gradient`

use driftguard::fisher::{estimate_fisher_diag, natural_grad_step, FisherLabelMode};
use driftguard::model::{LabeledSample, PromptParams};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mean_kl(a: &PromptParams, b: &PromptParams, inputs: &[Array1<f64>]) -> f64 {
    inputs
        .iter()
        .map(|x| {
            let pa = a.predict(x.view()).unwrap();
            let pb = b.predict(x.view()).unwrap();
            pa.as_array()
                .iter()
                .zip(pb.as_array().iter())
                .filter(|(&p, _)| p > 0.0)
                .map(|(&p, &q)| p * (p / q).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / inputs.len() as f64
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (c, d) = (4, 8);
    let params =
        PromptParams::new(Array2::from_shape_fn((c, d), |_| rng.gen_range(-0.8..0.8)))?;
    let inputs: Vec<Array1<f64>> = (0..64)
        .map(|_| Array1::from_iter((0..d).map(|_| rng.gen_range(-1.0..1.0))))
        .collect();
    let samples: Vec<LabeledSample> = inputs
        .iter()
        .map(|x| LabeledSample::new(x.clone(), 0).unwrap())
        .collect();

    // Damped diagonal Fisher over the parameter matrix. Model-expectation
    // mode enumerates the classes exactly — no labels, no sampling noise.
    let gamma = 1e-2;
    let fisher = estimate_fisher_diag(&params, &samples, gamma, FisherLabelMode::ModelExpectation)?;
    let diag = fisher.diag();
    println!(
        "Fisher diagonal over {} coordinates: min {:.4}, max {:.4}",
        diag.len(),
        diag.iter().cloned().fold(f64::INFINITY, f64::min),
        diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );

    // Natural step on the score gradient at one input.
    let grad = params.grad_loss(inputs[0].view(), None)?;
    let eta = 1e-2;
    let stepped = natural_grad_step(&params, &grad, &fisher, eta)?;
    let max_step = stepped
        .weights()
        .iter()
        .zip(params.weights().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let max_grad = grad.iter().cloned().map(f64::abs).fold(0.0, f64::max);
    println!(
        "step bound: max |dP| = {:.2e} <= eta*max|g|/gamma = {:.2e}",
        max_step,
        eta * max_grad / gamma
    );

    // KL trust region: halving eta quarters the measured divergence.
    println!("\n{:>8} {:>12} {:>8}", "eta", "mean KL", "ratio");
    let mut previous: Option<f64> = None;
    let mut e = 1e-2;
    while e >= 1e-4 {
        let s = natural_grad_step(&params, &grad, &fisher, e)?;
        let kl = mean_kl(&params, &s, &inputs);
        match previous {
            Some(prev) => println!("{e:>8.0e} {kl:>12.3e} {:>8.2}", prev / kl),
            None => println!("{e:>8.0e} {kl:>12.3e} {:>8}", "-"),
        }
        previous = Some(kl);
        e /= 2.0;
    }

    // Per-coordinate rescaling invariance: stretch coordinates, transform
    // gradient and metric accordingly, step, map back — same update.
    let scale = Array2::from_shape_fn((c, d), |_| rng.gen_range(0.2..1.0));
    let tilde = PromptParams::new(&params.weights().to_owned() * &scale)?;
    let tilde_grad = &grad / &scale;
    let tilde_diag = (fisher.diag() + gamma) / (&scale * &scale) - gamma;
    let tilde_fisher = driftguard::fisher::FisherDiag::new(tilde_diag, gamma, samples.len())?;
    let mapped = natural_grad_step(&tilde, &tilde_grad, &tilde_fisher, eta)?;
    let gap = (&mapped.weights().to_owned() / &scale - &stepped.weights().to_owned())
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    println!("\nrescaling invariance gap: {gap:.2e}");
    Ok(())
}
