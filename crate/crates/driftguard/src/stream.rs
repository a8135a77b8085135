//! Seeded synthetic labeled feature streams with a configurable change
//! point.
//!
//! Samples `1..=ν` come from the base class-conditional Gaussian mixture,
//! samples `ν+1..=length` from the shifted mixture. Every index draws its
//! randomness from its own counter-based ChaCha stream keyed by
//! `(seed, t)`, so a stream is bit-identical however generation is chunked
//! across threads, and the pre-change segment cannot depend on the shift
//! parameters (that code path is unreachable before ν).

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabeledSample, PromptParams};
use crate::numerics::cholesky;
use crate::score::{nonconformity, FeatureStats, ProbabilityVector, ScoreConfig};

/// The distribution change applied after the change point.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    /// Translate every class mean by `delta` (covariate shift).
    MeanTranslate {
        #[serde(with = "crate::wire::vec1")]
        delta: Array1<f64>,
    },
    /// Scale the shared covariance by a positive factor.
    CovarianceScale { factor: f64 },
    /// Replace the uniform class prior (experimental; beyond the
    /// covariate-shift families the guarantees are stated for).
    ClassPriorShift { new_prior: ProbabilityVector },
}

/// Full description of one synthetic stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamConfig {
    pub seed: u64,
    /// Feature dimension.
    pub d: usize,
    /// Number of classes.
    pub c: usize,
    pub length: usize,
    /// ν: last index of the null segment; absent means a null stream.
    pub change_point: Option<usize>,
    pub shift: Option<ShiftKind>,
    #[serde(with = "crate::wire::vec1_list")]
    pub class_means: Vec<Array1<f64>>,
    #[serde(with = "crate::wire::mat2")]
    pub class_cov: Array2<f64>,
}

impl StreamConfig {
    /// Desk-scale default: 4 well-separated Gaussians with means `2·eᵢ` in
    /// 8 dimensions, identity covariance, uniform prior.
    pub fn desk_default(seed: u64, length: usize) -> Self {
        let (c, d) = (4, 8);
        let mut means = Vec::with_capacity(c);
        for i in 0..c {
            let mut m = Array1::zeros(d);
            m[i] = 2.0;
            means.push(m);
        }
        Self {
            seed,
            d,
            c,
            length,
            change_point: None,
            shift: None,
            class_means: means,
            class_cov: Array2::eye(d),
        }
    }

    pub fn with_shift(mut self, change_point: usize, shift: ShiftKind) -> Self {
        self.change_point = Some(change_point);
        self.shift = Some(shift);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.c < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.class_means.len() != self.c {
            return Err(Error::Config(format!(
                "{} class means for {} classes",
                self.class_means.len(),
                self.c
            )));
        }
        for m in &self.class_means {
            if m.len() != self.d {
                return Err(Error::DimensionMismatch {
                    expected: self.d,
                    got: m.len(),
                });
            }
        }
        if self.class_cov.dim() != (self.d, self.d) {
            return Err(Error::Config("covariance shape mismatch".into()));
        }
        if cholesky(self.class_cov.view()).is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        if let Some(nu) = self.change_point {
            if nu >= self.length {
                return Err(Error::Config(format!(
                    "change_point {nu} must precede stream length {}",
                    self.length
                )));
            }
            if self.shift.is_none() {
                return Err(Error::Config("change_point set without a shift".into()));
            }
        }
        if let Some(ShiftKind::CovarianceScale { factor }) = &self.shift {
            if !(*factor > 0.0) {
                return Err(Error::Config("covariance factor must be positive".into()));
            }
        }
        if let Some(ShiftKind::ClassPriorShift { new_prior }) = &self.shift {
            if new_prior.len() != self.c {
                return Err(Error::DimensionMismatch {
                    expected: self.c,
                    got: new_prior.len(),
                });
            }
        }
        Ok(())
    }
}

/// Precomputed sampling state for one configuration.
struct Sampler<'a> {
    cfg: &'a StreamConfig,
    chol: Array2<f64>,
    chol_shifted: Array2<f64>,
}

impl<'a> Sampler<'a> {
    fn new(cfg: &'a StreamConfig) -> Result<Self> {
        cfg.validate()?;
        let chol = cholesky(cfg.class_cov.view()).ok_or(Error::NotPositiveDefinite)?;
        let chol_shifted = match &cfg.shift {
            Some(ShiftKind::CovarianceScale { factor }) => &chol * factor.sqrt(),
            _ => chol.clone(),
        };
        Ok(Self {
            cfg,
            chol,
            chol_shifted,
        })
    }

    /// Draws sample `t` (1-based) from its dedicated counter-based stream.
    fn sample_at(&self, t: usize) -> LabeledSample {
        let cfg = self.cfg;
        let shifted = cfg.change_point.is_some_and(|nu| t > nu);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(t as u64);

        let label = if shifted {
            if let Some(ShiftKind::ClassPriorShift { new_prior }) = &cfg.shift {
                let u: f64 = rng.gen();
                let mut cum = 0.0;
                let mut lab = cfg.c - 1;
                for (i, &pi) in new_prior.as_array().iter().enumerate() {
                    cum += pi;
                    if u < cum {
                        lab = i;
                        break;
                    }
                }
                lab
            } else {
                rng.gen_range(0..cfg.c)
            }
        } else {
            rng.gen_range(0..cfg.c)
        };

        let z = Array1::from_iter((0..cfg.d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let chol = if shifted { &self.chol_shifted } else { &self.chol };
        let mut feature = &cfg.class_means[label] + &chol.dot(&z);
        if shifted {
            if let Some(ShiftKind::MeanTranslate { delta }) = &cfg.shift {
                feature += delta;
            }
        }
        LabeledSample { feature, label }
    }
}

/// Generates the full stream. Labels ride along with the features; they are
/// withheld from the detector and used only for metrics and calibration
/// buffers.
pub fn generate(cfg: &StreamConfig) -> Result<Vec<LabeledSample>> {
    let sampler = Sampler::new(cfg)?;
    Ok((1..=cfg.length).map(|t| sampler.sample_at(t)).collect())
}

/// Generates only the index range `lo..=hi` (1-based, inclusive); chunked
/// generation concatenates to exactly the output of [`generate`].
pub fn generate_range(cfg: &StreamConfig, lo: usize, hi: usize) -> Result<Vec<LabeledSample>> {
    let sampler = Sampler::new(cfg)?;
    Ok((lo..=hi.min(cfg.length)).map(|t| sampler.sample_at(t)).collect())
}

/// Concatenates several stream configurations end to end (multi-change-point
/// streams as uniform chained segments), re-indexing time across segments.
pub fn generate_chained(configs: &[StreamConfig]) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::new();
    for cfg in configs {
        out.extend(generate(cfg)?);
    }
    Ok(out)
}

/// Maps a generated stream through the classifier and score engine,
/// producing the clipped `(t, score)` stream the detector consumes.
pub fn generate_score_stream(
    cfg: &StreamConfig,
    params: &PromptParams,
    stats: &FeatureStats,
    score_cfg: &ScoreConfig,
) -> Result<Vec<(u64, f64)>> {
    let samples = generate(cfg)?;
    score_samples(&samples, params, stats, score_cfg)
}

/// Scores an already-generated sample sequence (1-based timestamps).
pub fn score_samples(
    samples: &[LabeledSample],
    params: &PromptParams,
    stats: &FeatureStats,
    score_cfg: &ScoreConfig,
) -> Result<Vec<(u64, f64)>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = params.predict(s.feature.view())?;
            let raw = nonconformity(&p, s.feature.view(), stats, score_cfg)?;
            Ok((i as u64 + 1, score_cfg.clip(raw)))
        })
        .collect()
}

/// Writes a feature stream as `t,label,f1..fd` CSV.
pub fn write_stream_csv<W: std::io::Write>(samples: &[LabeledSample], mut w: W) -> Result<()> {
    let d = samples.first().map_or(0, |s| s.feature.len());
    let mut header = String::from("t,label");
    for j in 1..=d {
        header.push_str(&format!(",f{j}"));
    }
    writeln!(w, "{header}")?;
    for (i, s) in samples.iter().enumerate() {
        let feats: Vec<String> = s.feature.iter().map(|x| format!("{x}")).collect();
        writeln!(w, "{},{},{}", i + 1, s.label, feats.join(","))?;
    }
    Ok(())
}

/// Writes a score stream as `t,score` CSV.
pub fn write_scores_csv<W: std::io::Write>(scores: &[(u64, f64)], mut w: W) -> Result<()> {
    writeln!(w, "t,score")?;
    for (t, s) in scores {
        writeln!(w, "{t},{s}")?;
    }
    Ok(())
}
