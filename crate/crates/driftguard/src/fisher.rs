//! Fisher-preconditioned adaptation: damped diagonal Fisher information
//! over the classifier parameters, natural-gradient updates, and the
//! calibration-misalignment penalty (a differentiable expected calibration
//! error).
//!
//! For the linear-softmax model the per-sample squared score function has a
//! closed form per coordinate,
//!
//! ```text
//! E_{y~p}[ (∂ log p(y|x) / ∂P_ij)² ] = p_i (1 − p_i) · φ_j(x)²,
//! ```
//!
//! so the model-expectation Fisher diagonal needs no sampling. The natural
//! step divides each gradient coordinate by `diag + γ` (additive Tikhonov
//! damping): coordinates the output distribution is sensitive to move
//! cautiously, insensitive ones move freely, and no coordinate ever moves
//! farther than `η·|g|/γ`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{outer, LabeledSample, PromptParams};
use crate::numerics::{sigmoid, softmax};
use crate::score::ProbabilityVector;

/// How labels enter the Fisher estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherLabelMode {
    /// Exact expectation over `y ~ p(y|x)`, classes enumerated in closed
    /// form; labels in the samples are ignored.
    ModelExpectation,
    /// Empirical squared gradients at the provided labels.
    Empirical,
}

/// Damped diagonal Fisher estimate over the parameter matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FisherDiag {
    #[serde(with = "crate::wire::mat2")]
    diag: Array2<f64>,
    gamma_damp: f64,
    n_samples: usize,
}

impl FisherDiag {
    pub fn new(diag: Array2<f64>, gamma_damp: f64, n_samples: usize) -> Result<Self> {
        if !(gamma_damp > 0.0) {
            return Err(Error::invalid_parameter("gamma_damp", "must be positive"));
        }
        if diag.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid_parameter(
                "diag",
                "entries must be finite and nonnegative",
            ));
        }
        Ok(Self {
            diag,
            gamma_damp,
            n_samples,
        })
    }

    pub fn diag(&self) -> &Array2<f64> {
        &self.diag
    }

    pub fn gamma_damp(&self) -> f64 {
        self.gamma_damp
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }
}

/// Estimates the diagonal Fisher over `P` from a batch of samples.
pub fn estimate_fisher_diag(
    params: &PromptParams,
    samples: &[LabeledSample],
    gamma_damp: f64,
    mode: FisherLabelMode,
) -> Result<FisherDiag> {
    if samples.is_empty() {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    let (c, d) = (params.classes(), params.dim());
    let mut acc = Array2::<f64>::zeros((c, d));
    for s in samples {
        let p = params.predict(s.feature.view())?;
        let p = p.as_array();
        match mode {
            FisherLabelMode::ModelExpectation => {
                for i in 0..c {
                    let pi = p[i] * (1.0 - p[i]);
                    for j in 0..d {
                        acc[[i, j]] += pi * s.feature[j] * s.feature[j];
                    }
                }
            }
            FisherLabelMode::Empirical => {
                if s.label >= c {
                    return Err(Error::LabelOutOfRange {
                        label: s.label,
                        classes: c,
                    });
                }
                for i in 0..c {
                    let r = (if i == s.label { 1.0 } else { 0.0 }) - p[i];
                    for j in 0..d {
                        acc[[i, j]] += r * r * s.feature[j] * s.feature[j];
                    }
                }
            }
        }
    }
    acc /= samples.len() as f64;
    FisherDiag::new(acc, gamma_damp, samples.len())
}

/// One preconditioned descent step: `P_ij ← P_ij − η·g_ij/(diag_ij + γ)`.
pub fn natural_grad_step(
    params: &PromptParams,
    grad: &Array2<f64>,
    fisher: &FisherDiag,
    eta: f64,
) -> Result<PromptParams> {
    if !(eta > 0.0) {
        return Err(Error::invalid_parameter("eta", "must be positive"));
    }
    if grad.dim() != (params.classes(), params.dim()) || fisher.diag.dim() != grad.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.classes() * params.dim(),
            got: grad.len(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let mut w = params.weights().to_owned();
    for ((i, j), wij) in w.indexed_iter_mut() {
        *wij -= eta * grad[[i, j]] / (fisher.diag[[i, j]] + fisher.gamma_damp);
    }
    params.with_weights(w)
}

/// Soft-binning configuration for the differentiable calibration error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EceConfig {
    #[serde(default = "default_n_bins")]
    pub n_bins: usize,
    /// Inverse temperature of the logistic bin edges; hard binning is the
    /// sharpness → ∞ limit.
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
}

fn default_n_bins() -> usize {
    15
}

fn default_sharpness() -> f64 {
    200.0
}

impl Default for EceConfig {
    fn default() -> Self {
        Self {
            n_bins: default_n_bins(),
            sharpness: default_sharpness(),
        }
    }
}

impl EceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 1 {
            return Err(Error::invalid_parameter("n_bins", "must be >= 1"));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(Error::invalid_parameter(
                "sharpness",
                "must be positive and finite",
            ));
        }
        Ok(())
    }
}

/// Standard binned expected calibration error over max-probability
/// confidence: `Σ_b (|B_b|/N)·|acc(B_b) − conf(B_b)|`, equal-width
/// right-closed bins on [0, 1].
pub fn ece_hard(predictions: &[(ProbabilityVector, usize)], n_bins: usize) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    if n_bins < 1 {
        return Err(Error::invalid_parameter("n_bins", "must be >= 1"));
    }
    let n = predictions.len() as f64;
    let mut count = vec![0.0_f64; n_bins];
    let mut conf_sum = vec![0.0_f64; n_bins];
    let mut acc_sum = vec![0.0_f64; n_bins];
    for (p, label) in predictions {
        let conf = p.confidence();
        let correct = (p.argmax() == *label) as u8 as f64;
        let idx = ((conf * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1;
        count[idx] += 1.0;
        conf_sum[idx] += conf;
        acc_sum[idx] += correct;
    }
    let mut ece = 0.0;
    for b in 0..n_bins {
        if count[b] > 0.0 {
            ece += (count[b] / n) * ((acc_sum[b] - conf_sum[b]) / count[b]).abs();
        }
    }
    Ok(ece)
}

/// Differentiable calibration error with its gradient per logit set.
///
/// Hard bin indicators become smooth memberships built from logistic edges
/// (adjacent-difference construction, so memberships sum to one exactly),
/// and hard per-sample accuracy becomes the probability assigned to the
/// true label. Returns the value and `∂value/∂logits` for every input.
pub fn ece_soft(
    logit_sets: &[(Array1<f64>, usize)],
    cfg: &EceConfig,
) -> Result<(f64, Vec<Array1<f64>>)> {
    cfg.validate()?;
    if logit_sets.is_empty() {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    let n = logit_sets.len();
    let n_bins = cfg.n_bins;
    let k = cfg.sharpness;

    struct PerSample {
        p: Array1<f64>,
        argmax: usize,
        conf: f64,
        acc: f64,
        w: Vec<f64>,
        w_prime: Vec<f64>,
    }

    let mut per = Vec::with_capacity(n);
    // Soft bin masses D_b = Σ_n w_b(c_n)·(a_n − c_n).
    let mut d_b = vec![0.0_f64; n_bins];
    for (logits, label) in logit_sets {
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        if *label >= logits.len() {
            return Err(Error::LabelOutOfRange {
                label: *label,
                classes: logits.len(),
            });
        }
        let p = softmax(logits.view());
        let mut argmax = 0;
        for (i, &pi) in p.iter().enumerate() {
            if pi > p[argmax] {
                argmax = i;
            }
        }
        let conf = p[argmax];
        let acc = p[*label];
        // Membership via adjacent differences of edge sigmoids; the outer
        // edges are pinned at 1 and 0 so Σ_b w_b = 1 exactly.
        let mut w = vec![0.0; n_bins];
        let mut w_prime = vec![0.0; n_bins];
        let mut u_prev = 1.0;
        let mut up_prev = 0.0;
        for b in 0..n_bins {
            let (u, up) = if b + 1 < n_bins {
                let edge = (b + 1) as f64 / n_bins as f64;
                let s = sigmoid(k * (conf - edge));
                (s, k * s * (1.0 - s))
            } else {
                (0.0, 0.0)
            };
            w[b] = u_prev - u;
            w_prime[b] = up_prev - up;
            u_prev = u;
            up_prev = up;
        }
        for b in 0..n_bins {
            d_b[b] += w[b] * (acc - conf);
        }
        per.push(PerSample {
            p,
            argmax,
            conf,
            acc,
            w,
            w_prime,
        });
    }

    let value = d_b.iter().map(|d| d.abs()).sum::<f64>() / n as f64;
    let signs: Vec<f64> = d_b.iter().map(|d| d.signum() * (*d != 0.0) as u8 as f64).collect();

    let mut grads = Vec::with_capacity(n);
    for (sample, (logits, label)) in per.iter().zip(logit_sets) {
        let gap = sample.acc - sample.conf;
        let mut dv_dc = 0.0;
        let mut dv_da = 0.0;
        for b in 0..n_bins {
            dv_dc += signs[b] * (sample.w_prime[b] * gap - sample.w[b]);
            dv_da += signs[b] * sample.w[b];
        }
        dv_dc /= n as f64;
        dv_da /= n as f64;
        // Chain through the softmax: ∂p_i/∂z_j = p_i(δ_ij − p_j).
        let c_classes = logits.len();
        let p = &sample.p;
        let mut g = Array1::<f64>::zeros(c_classes);
        for j in 0..c_classes {
            let jac_conf = sample.conf * (((j == sample.argmax) as u8 as f64) - p[j]);
            let jac_acc = sample.acc * (((j == *label) as u8 as f64) - p[j]);
            g[j] = dv_dc * jac_conf + dv_da * jac_acc;
        }
        grads.push(g);
    }
    Ok((value, grads))
}

/// One Fisher-preconditioned adaptation step on `S_t + L_CMP`.
///
/// The score part differentiates the KL-to-uniform term at the triggering
/// input. The calibration penalty, when a buffer is supplied, is the soft
/// calibration error over that buffer, routed through the buffer inputs
/// only (the penalty is defined on held-out calibration data, not on the
/// stream sample).
pub fn adapt(
    params: &PromptParams,
    feature: ndarray::ArrayView1<'_, f64>,
    fisher: &FisherDiag,
    eta: f64,
    cmp_buffer: Option<&[LabeledSample]>,
    cfg: &EceConfig,
) -> Result<PromptParams> {
    let mut grad = params.grad_loss(feature, None)?;
    if let Some(buffer) = cmp_buffer {
        if !buffer.is_empty() {
            let logit_sets: Vec<(Array1<f64>, usize)> = buffer
                .iter()
                .map(|s| Ok((params.logits(s.feature.view())?, s.label)))
                .collect::<Result<_>>()?;
            let (_, grads) = ece_soft(&logit_sets, cfg)?;
            for (g_logits, s) in grads.iter().zip(buffer) {
                grad += &outer(g_logits.view(), s.feature.view());
            }
        }
    }
    natural_grad_step(params, &grad, fisher, eta)
}
