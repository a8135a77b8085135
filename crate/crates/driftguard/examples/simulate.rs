//! Synthetic labeled feature streams with a configurable change point.
//!
//! Every sample draws from its own counter-based RNG stream keyed by
//! `(seed, t)`, so generation is bit-reproducible under any chunking and
//! the pre-change segment provably cannot depend on the shift parameters.
//!
//! Run with: `cargo run --example simulate`

use driftguard::model::PromptParams;
use driftguard::score::{FeatureStats, ScoreConfig};
use driftguard::stream::{
    generate, generate_range, generate_score_stream, write_scores_csv, ShiftKind, StreamConfig,
};
use ndarray::Array1;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut delta = Array1::zeros(8);
    delta[0] = 2.0;
    let cfg = StreamConfig::desk_default(11, 600)
        .with_shift(300, ShiftKind::MeanTranslate { delta });

    // Determinism: full generation equals chunked generation.
    let full = generate(&cfg)?;
    let mut chunked = generate_range(&cfg, 1, 250)?;
    chunked.extend(generate_range(&cfg, 251, 600)?);
    assert_eq!(full, chunked);
    println!("600 samples, chunked == full: true");

    // The shift moves the feature cloud, visible in the first coordinate.
    let mean_f1 = |lo: usize, hi: usize| {
        full[lo..hi].iter().map(|s| s.feature[0]).sum::<f64>() / (hi - lo) as f64
    };
    println!("mean f1 pre-shift  (t <= 300): {:+.3}", mean_f1(0, 300));
    println!("mean f1 post-shift (t >  300): {:+.3}", mean_f1(300, 600));

    // Labels ride along for metrics and calibration buffers; the detector
    // only ever sees scores.
    let by_class: Vec<usize> = (0..4)
        .map(|c| full.iter().filter(|s| s.label == c).count())
        .collect();
    println!("label counts: {by_class:?}");

    // Score the stream with the desk model: calibration statistics come
    // from a held-out null draw, never from the test stream itself.
    let params = PromptParams::from_class_means(&cfg.class_means)?;
    let cal = generate(&StreamConfig::desk_default(999, 500))?;
    let feats: Vec<Array1<f64>> = cal.iter().map(|s| s.feature.clone()).collect();
    let stats = FeatureStats::from_samples(&feats)?;
    let scores = generate_score_stream(&cfg, &params, &stats, &ScoreConfig::default())?;
    let mean_s = |lo: usize, hi: usize| {
        scores[lo..hi].iter().map(|(_, s)| s).sum::<f64>() / (hi - lo) as f64
    };
    println!("mean score pre-shift:  {:.3}", mean_s(0, 300));
    println!("mean score post-shift: {:.3}", mean_s(300, 600));

    // CSV is the wire format the CLI consumes (`driftguard detect`).
    let mut preview = Vec::new();
    write_scores_csv(&scores[..3], &mut preview)?;
    println!("\nscore CSV preview:\n{}", String::from_utf8(preview)?);
    Ok(())
}
