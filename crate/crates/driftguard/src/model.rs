//! A small fully differentiable softmax classifier over frozen features:
//! `p(y|x) = softmax(P·φ(x))` with learnable parameter matrix `P` (C×d).
//!
//! This is the desk-scale stand-in for prompt parameters: the feature map φ
//! is frozen (it arrives from the stream simulator or from files), gradients
//! flow only through `P`, and every expectation over labels is exactly
//! computable because classes can be enumerated. Rows are initialized from
//! class-mean features so adaptation experiments start from a model worth
//! degrading.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{nonconformity_grad_logits, ProbabilityVector};

/// A feature vector with its ground-truth class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    #[serde(with = "crate::wire::vec1")]
    pub feature: Array1<f64>,
    pub label: usize,
}

impl LabeledSample {
    pub fn new(feature: Array1<f64>, label: usize) -> Result<Self> {
        if feature.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature"));
        }
        Ok(Self { feature, label })
    }
}

/// Learnable parameter matrix of the classifier (row per class).
#[derive(Debug, Clone, PartialEq)]
pub struct PromptParams {
    weights: Array2<f64>,
}

/// Row-major JSON wire format with explicit shape header.
#[derive(Serialize, Deserialize)]
struct PromptParamsWire {
    c: usize,
    d: usize,
    weights: Vec<f64>,
}

impl Serialize for PromptParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PromptParamsWire {
            c: self.classes(),
            d: self.dim(),
            weights: self.weights.iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PromptParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let wire = PromptParamsWire::deserialize(d)?;
        if wire.weights.len() != wire.c * wire.d {
            return Err(serde::de::Error::custom(format!(
                "weights length {} does not match {}x{}",
                wire.weights.len(),
                wire.c,
                wire.d
            )));
        }
        let weights = Array2::from_shape_vec((wire.c, wire.d), wire.weights)
            .map_err(serde::de::Error::custom)?;
        PromptParams::new(weights).map_err(serde::de::Error::custom)
    }
}

impl PromptParams {
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        if weights.nrows() < 2 {
            return Err(Error::invalid_parameter("weights", "need at least 2 classes"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("weights"));
        }
        Ok(Self { weights })
    }

    /// Initializes each row to its class-mean feature (the stand-in for a
    /// pretrained prompt initialization).
    pub fn from_class_means(means: &[Array1<f64>]) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::invalid_parameter("means", "need at least 2 classes"));
        }
        let d = means[0].len();
        let mut w = Array2::zeros((means.len(), d));
        for (i, m) in means.iter().enumerate() {
            if m.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: m.len(),
                });
            }
            w.row_mut(i).assign(m);
        }
        Self::new(w)
    }

    /// Number of classes C.
    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    /// Feature dimension d.
    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    /// Raw logits `P·φ(x)`.
    pub fn logits(&self, feature: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if feature.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: feature.len(),
            });
        }
        if feature.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature"));
        }
        Ok(self.weights.dot(&feature))
    }

    /// Predictive distribution `softmax(P·φ(x))`.
    pub fn predict(&self, feature: ArrayView1<'_, f64>) -> Result<ProbabilityVector> {
        ProbabilityVector::from_logits(self.logits(feature)?.view())
    }

    /// `∇_P log p(y|x) = (onehot(y) − p) φ(x)ᵀ`.
    pub fn grad_log_prob(&self, sample: &LabeledSample) -> Result<Array2<f64>> {
        if sample.label >= self.classes() {
            return Err(Error::LabelOutOfRange {
                label: sample.label,
                classes: self.classes(),
            });
        }
        let p = self.predict(sample.feature.view())?;
        let mut residual = -p.as_array().to_owned();
        residual[sample.label] += 1.0;
        Ok(outer(residual.view(), sample.feature.view()))
    }

    /// Gradient of the adaptation loss with respect to `P`, chained through
    /// the logits of one input: `(∇_z KL-to-uniform + extra) φ(x)ᵀ`.
    ///
    /// The Mahalanobis part of the score is constant in `P` (the feature
    /// encoder is frozen) and contributes nothing. `cmp_grad_logits`, when
    /// present, is an additional logit-space gradient to route through the
    /// same input.
    pub fn grad_loss(
        &self,
        feature: ArrayView1<'_, f64>,
        cmp_grad_logits: Option<ArrayView1<'_, f64>>,
    ) -> Result<Array2<f64>> {
        let logits = self.logits(feature)?;
        let mut g = nonconformity_grad_logits(logits.view())?;
        if let Some(extra) = cmp_grad_logits {
            if extra.len() != self.classes() {
                return Err(Error::DimensionMismatch {
                    expected: self.classes(),
                    got: extra.len(),
                });
            }
            g += &extra;
        }
        Ok(outer(g.view(), feature))
    }

    /// Applies a raw additive update (used by the natural-gradient step).
    pub(crate) fn with_weights(&self, weights: Array2<f64>) -> Result<Self> {
        if weights.dim() != self.weights.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: weights.len(),
            });
        }
        Self::new(weights)
    }
}

/// Outer product `a bᵀ`.
pub(crate) fn outer(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[[i, j]] = a[i] * b[j];
        }
    }
    out
}
