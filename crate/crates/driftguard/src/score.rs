//! Per-sample non-conformity scores.
//!
//! A sample's score combines two disagreement signals against the
//! calibration distribution:
//!
//! ```text
//! S = KL(p ‖ Uniform) + α · (x − μ)ᵀ Σ⁻¹ (x − μ)
//! ```
//!
//! The first term is confidence deviation from uniform (`ln C − H(p)`), the
//! second is squared Mahalanobis distance in feature space. The feature
//! encoder is frozen, so only the KL term carries gradient with respect to
//! model parameters.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cholesky, softmax, spd_inverse};

/// Tolerance for the sum-to-one invariant.
const PROB_SUM_TOL: f64 = 1e-9;
/// Tolerance for the symmetry invariant of Σ⁻¹.
const SYMMETRY_TOL: f64 = 1e-9;

/// A validated discrete probability distribution over classes.
///
/// Entries are nonnegative and sum to one within `1e-9`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector(Array1<f64>);

impl ProbabilityVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidProbability("empty vector".into()));
        }
        if entries.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("probability vector"));
        }
        if let Some(p) = entries.iter().find(|&&p| p < 0.0) {
            return Err(Error::InvalidProbability(format!("negative entry {p}")));
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidProbability(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(Self(Array1::from(entries)))
    }

    /// Uniform distribution over `c` classes.
    pub fn uniform(c: usize) -> Self {
        Self(Array1::from_elem(c, 1.0 / c as f64))
    }

    /// Builds the distribution from logits via a stable softmax.
    pub fn from_logits(logits: ArrayView1<'_, f64>) -> Result<Self> {
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(Self(softmax(logits)))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_array(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    /// Largest entry (the max-probability confidence).
    pub fn confidence(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest entry; first index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(p: ProbabilityVector) -> Self {
        p.0.to_vec()
    }
}

/// Null-distribution feature statistics: mean and inverse covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureStats {
    mean: Array1<f64>,
    covariance_inverse: Array2<f64>,
}

impl FeatureStats {
    /// Validates symmetry (within `1e-9`) and positive-definiteness of the
    /// supplied Σ⁻¹ (Cholesky must succeed).
    pub fn new(mean: Array1<f64>, covariance_inverse: Array2<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance_inverse.nrows() != d || covariance_inverse.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: covariance_inverse.nrows(),
            });
        }
        for i in 0..d {
            for j in 0..i {
                if (covariance_inverse[[i, j]] - covariance_inverse[[j, i]]).abs() > SYMMETRY_TOL {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        if cholesky(covariance_inverse.view()).is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self {
            mean,
            covariance_inverse,
        })
    }

    /// Estimates the statistics from calibration features: sample mean and
    /// sample covariance with ridge `1e-6·I`, inverted once here so the
    /// score path stays stateless.
    pub fn from_samples(features: &[Array1<f64>]) -> Result<Self> {
        const RIDGE: f64 = 1e-6;
        let n = features.len();
        if n < 2 {
            return Err(Error::InsufficientData { needed: 2, have: n });
        }
        let d = features[0].len();
        let mut mean = Array1::<f64>::zeros(d);
        for f in features {
            if f.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: f.len(),
                });
            }
            mean += f;
        }
        mean /= n as f64;
        let mut cov = Array2::<f64>::zeros((d, d));
        for f in features {
            let c = f - &mean;
            for i in 0..d {
                for j in 0..=i {
                    cov[[i, j]] += c[i] * c[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..=i {
                let v = cov[[i, j]] / n as f64;
                cov[[i, j]] = v;
                cov[[j, i]] = v;
            }
            cov[[i, i]] += RIDGE;
        }
        let inv = spd_inverse(cov.view()).ok_or(Error::NotPositiveDefinite)?;
        Self::new(mean, inv)
    }

    pub fn mean(&self) -> ArrayView1<'_, f64> {
        self.mean.view()
    }

    pub fn covariance_inverse(&self) -> ArrayView2<'_, f64> {
        self.covariance_inverse.view()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Score hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreConfig {
    /// Scaling of the Mahalanobis term (α).
    #[serde(default = "default_alpha_score")]
    pub alpha_score: f64,
    /// Cap applied to scores before they enter the detector; the
    /// Mahalanobis term is unbounded and an unbounded score can make the
    /// moment generating function infinite at the working λ.
    #[serde(default = "default_s_max")]
    pub s_max: f64,
}

fn default_alpha_score() -> f64 {
    0.5
}

fn default_s_max() -> f64 {
    50.0
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            alpha_score: default_alpha_score(),
            s_max: default_s_max(),
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_score >= 0.0) {
            return Err(Error::invalid_parameter(
                "alpha_score",
                "must be nonnegative",
            ));
        }
        if !(self.s_max > 0.0) {
            return Err(Error::invalid_parameter("s_max", "must be positive"));
        }
        Ok(())
    }

    /// Clips a raw score to the detector-facing range.
    pub fn clip(&self, score: f64) -> f64 {
        score.min(self.s_max)
    }
}

/// Confidence deviation from uniform: `Σ pᵢ·ln(pᵢ·C) = ln C − H(p)`.
///
/// Zero entries contribute zero (`0·ln 0 := 0`). The result lies in
/// `[0, ln C]`, attaining the maximum exactly at one-hot vectors.
pub fn kl_to_uniform(p: &ProbabilityVector) -> f64 {
    let c = p.len() as f64;
    let kl: f64 = p
        .as_array()
        .iter()
        .filter(|&&pi| pi > 0.0)
        .map(|&pi| pi * (pi * c).ln())
        .sum();
    kl.max(0.0)
}

/// Squared Mahalanobis distance `(x − μ)ᵀ Σ⁻¹ (x − μ)`.
pub fn mahalanobis_sq(x: ArrayView1<'_, f64>, stats: &FeatureStats) -> Result<f64> {
    if x.len() != stats.dim() {
        return Err(Error::DimensionMismatch {
            expected: stats.dim(),
            got: x.len(),
        });
    }
    let c = &x - &stats.mean;
    let v = c.dot(&stats.covariance_inverse.dot(&c));
    Ok(v.max(0.0))
}

/// Non-conformity score `kl_to_uniform(p) + α·mahalanobis_sq(x)` (unclipped;
/// apply [`ScoreConfig::clip`] before feeding a detector).
pub fn nonconformity(
    p: &ProbabilityVector,
    x: ArrayView1<'_, f64>,
    stats: &FeatureStats,
    cfg: &ScoreConfig,
) -> Result<f64> {
    cfg.validate()?;
    Ok(kl_to_uniform(p) + cfg.alpha_score * mahalanobis_sq(x, stats)?)
}

/// Gradient of `kl_to_uniform(softmax(z))` with respect to the logits `z`.
///
/// Closed form: `g_k = p_k·(ln p_k − Σᵢ pᵢ ln pᵢ)`. The entries sum to zero
/// (softmax is shift invariant, so the gradient lives in the tangent space).
pub fn nonconformity_grad_logits(logits: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let p = softmax(logits);
    let mean_log: f64 = p
        .iter()
        .filter(|&&pi| pi > 0.0)
        .map(|&pi| pi * pi.ln())
        .sum();
    Ok(p.mapv(|pi| if pi > 0.0 { pi * (pi.ln() - mean_log) } else { 0.0 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn unit_stats(d: usize) -> FeatureStats {
        FeatureStats::new(Array1::zeros(d), Array2::eye(d)).unwrap()
    }

    #[test]
    fn probability_vector_rejects_bad_sums() {
        assert!(ProbabilityVector::new(vec![0.5, 0.4]).is_err());
        assert!(ProbabilityVector::new(vec![0.5, 0.5]).is_ok());
        assert!(ProbabilityVector::new(vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn kl_uniform_is_zero() {
        let p = ProbabilityVector::uniform(4);
        assert_eq!(kl_to_uniform(&p), 0.0);
    }

    #[test]
    fn kl_one_hot_is_log_c() {
        let p = ProbabilityVector::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((kl_to_uniform(&p) - 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_hand_computed_pair() {
        // 0.9·ln(1.8) + 0.1·ln(0.2)
        let p = ProbabilityVector::new(vec![0.9, 0.1]).unwrap();
        let expected = 0.9 * (1.8_f64).ln() + 0.1 * (0.2_f64).ln();
        assert!((expected - 0.368064).abs() < 1e-6);
        assert!((kl_to_uniform(&p) - expected).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_zero_at_mean() {
        let stats = unit_stats(3);
        assert_eq!(mahalanobis_sq(array![0.0, 0.0, 0.0].view(), &stats).unwrap(), 0.0);
    }

    #[test]
    fn mahalanobis_unit_offset_identity_metric() {
        let stats = unit_stats(3);
        let v = mahalanobis_sq(array![1.0, 0.0, 0.0].view(), &stats).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_hand_matrix_product() {
        let stats = FeatureStats::new(
            array![0.0, 0.0],
            array![[2.0, 0.0], [0.0, 0.5]],
        )
        .unwrap();
        let v = mahalanobis_sq(array![1.0, 2.0].view(), &stats).unwrap();
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_dimension_mismatch() {
        let stats = unit_stats(3);
        assert!(mahalanobis_sq(array![1.0, 2.0].view(), &stats).is_err());
    }

    #[test]
    fn feature_stats_rejects_asymmetric_and_indefinite() {
        assert!(FeatureStats::new(array![0.0, 0.0], array![[1.0, 0.5], [0.1, 1.0]]).is_err());
        assert!(FeatureStats::new(array![0.0, 0.0], array![[1.0, 2.0], [2.0, 1.0]]).is_err());
    }

    #[test]
    fn nonconformity_examples() {
        let stats = unit_stats(4);
        let cfg = ScoreConfig::default();
        let uniform = ProbabilityVector::uniform(4);
        let at_mean = array![0.0, 0.0, 0.0, 0.0];
        assert_eq!(nonconformity(&uniform, at_mean.view(), &stats, &cfg).unwrap(), 0.0);

        let one_hot = ProbabilityVector::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let v = nonconformity(&one_hot, at_mean.view(), &stats, &cfg).unwrap();
        assert!((v - 4.0_f64.ln()).abs() < 1e-12);

        let stats2 = unit_stats(2);
        let p = ProbabilityVector::new(vec![0.9, 0.1]).unwrap();
        let v = nonconformity(&p, array![1.0, 0.0].view(), &stats2, &cfg).unwrap();
        assert!((v - 0.868064).abs() < 1e-6);
    }

    #[test]
    fn grad_zero_at_uniform_logits() {
        let g = nonconformity_grad_logits(array![0.3, 0.3, 0.3, 0.3].view()).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn grad_rejects_non_finite() {
        assert!(nonconformity_grad_logits(array![f64::NAN, 0.0].view()).is_err());
    }

    fn central_diff_grad(logits: &Array1<f64>) -> Array1<f64> {
        let h = 1e-5;
        let mut g = Array1::zeros(logits.len());
        for k in 0..logits.len() {
            let mut up = logits.clone();
            up[k] += h;
            let mut dn = logits.clone();
            dn[k] -= h;
            let f = |z: &Array1<f64>| {
                kl_to_uniform(&ProbabilityVector::from_logits(z.view()).unwrap())
            };
            g[k] = (f(&up) - f(&dn)) / (2.0 * h);
        }
        g
    }

    #[test]
    fn grad_matches_finite_differences_two_class() {
        let logits = array![1.0, 0.0];
        let g = nonconformity_grad_logits(logits.view()).unwrap();
        let fd = central_diff_grad(&logits);
        let rel = (&g - &fd).mapv(f64::abs).sum() / fd.mapv(f64::abs).sum().max(1e-12);
        assert!(rel < 1e-5, "rel err {rel}");
    }

    #[test]
    fn grad_matches_finite_differences_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let c = rng.gen_range(2..=6);
            let logits = Array1::from_iter((0..c).map(|_| rng.gen_range(-3.0..3.0)));
            let g = nonconformity_grad_logits(logits.view()).unwrap();
            let fd = central_diff_grad(&logits);
            let num = (&g - &fd).mapv(|x| x * x).sum().sqrt();
            let den = fd.mapv(|x| x * x).sum().sqrt().max(1e-8);
            assert!(num / den < 1e-5, "rel err {}", num / den);
        }
    }

    proptest! {
        #[test]
        fn kl_bounded_by_log_c(raw in prop::collection::vec(1e-6f64..1.0, 2..8)) {
            let sum: f64 = raw.iter().sum();
            let p = ProbabilityVector::new(raw.iter().map(|x| x / sum).collect()).unwrap();
            let v = kl_to_uniform(&p);
            let ln_c = (p.len() as f64).ln();
            prop_assert!(v >= 0.0);
            prop_assert!(v <= ln_c + 1e-12);
        }

        #[test]
        fn grad_sums_to_zero(raw in prop::collection::vec(-5.0f64..5.0, 2..8)) {
            let g = nonconformity_grad_logits(Array1::from(raw).view()).unwrap();
            prop_assert!(g.sum().abs() < 1e-10);
        }

        #[test]
        fn nonconformity_monotone_in_alpha(
            a1 in 0.0f64..2.0,
            extra in 0.01f64..2.0,
            off in 0.1f64..3.0,
        ) {
            let stats = unit_stats(2);
            let p = ProbabilityVector::new(vec![0.7, 0.3]).unwrap();
            let x = array![off, 0.0];
            let lo = ScoreConfig { alpha_score: a1, s_max: 1e9 };
            let hi = ScoreConfig { alpha_score: a1 + extra, s_max: 1e9 };
            let v_lo = nonconformity(&p, x.view(), &stats, &lo).unwrap();
            let v_hi = nonconformity(&p, x.view(), &stats, &hi).unwrap();
            prop_assert!(v_hi >= v_lo);
        }
    }

    // Mahalanobis invariance under joint orthogonal transform of (x, μ, Σ⁻¹).
    #[test]
    fn mahalanobis_orthogonal_invariance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let d = 4;
            // Random orthogonal matrix via Gram-Schmidt on a random matrix.
            let mut q = Array2::<f64>::zeros((d, d));
            for i in 0..d {
                let mut v = Array1::from_iter((0..d).map(|_| rng.gen_range(-1.0..1.0)));
                for j in 0..i {
                    let proj = v.dot(&q.row(j));
                    v = &v - &(proj * &q.row(j).to_owned());
                }
                let norm = v.dot(&v).sqrt();
                q.row_mut(i).assign(&(v / norm));
            }
            let mu = Array1::from_iter((0..d).map(|_| rng.gen_range(-1.0..1.0)));
            let x = Array1::from_iter((0..d).map(|_| rng.gen_range(-1.0..1.0)));
            // SPD Σ⁻¹ = AᵀA + I
            let a = Array2::from_shape_fn((d, d), |_| rng.gen_range(-1.0..1.0));
            let spd = a.t().dot(&a) + Array2::<f64>::eye(d);

            let stats = FeatureStats::new(mu.clone(), spd.clone()).unwrap();
            let v0 = mahalanobis_sq(x.view(), &stats).unwrap();

            let qx = q.dot(&x);
            let qmu = q.dot(&mu);
            let qspd = q.dot(&spd).dot(&q.t());
            // Symmetrize exactly before the constructor's strict check.
            let qspd = (&qspd + &qspd.t()) * 0.5;
            let stats_t = FeatureStats::new(qmu, qspd).unwrap();
            let v1 = mahalanobis_sq(qx.view(), &stats_t).unwrap();
            assert!((v0 - v1).abs() < 1e-9, "{v0} vs {v1}");
        }
    }

    #[test]
    fn kl_max_attained_only_at_one_hot() {
        let nearly = ProbabilityVector::new(vec![0.999, 0.001]).unwrap();
        assert!(kl_to_uniform(&nearly) < 2.0_f64.ln());
        let hot = ProbabilityVector::new(vec![0.0, 1.0]).unwrap();
        assert!((kl_to_uniform(&hot) - 2.0_f64.ln()).abs() < 1e-12);
    }
}
