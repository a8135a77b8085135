//! Shared numerical primitives: stable exponential sums, softmax, a small
//! Cholesky factorization, and deterministic seed derivation.
//!
//! Everything that turns into an `exp` somewhere else in the crate funnels
//! through [`log_sum_exp`] so that overflow is impossible by construction.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Computes `ln Σ exp(x_i)` with the max-subtraction trick.
///
/// Returns `-inf` for an empty slice (the log of an empty sum).
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        // all -inf (empty or degenerate): the sum is 0 or infinite
        return m;
    }
    let sum: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

/// Numerically stable softmax of a logit vector.
pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.mapv(|z| (z - m).exp());
    let sum = out.sum();
    out.mapv_inplace(|e| e / sum);
    out
}

/// Logistic sigmoid, stable on both tails.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// Returns the lower-triangular `L` with `L·Lᵀ = A`, or `None` when a pivot
/// is not strictly positive (the SPD check used across the crate).
pub fn cholesky(a: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return None;
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Inverse of an SPD matrix via its Cholesky factor.
pub fn spd_inverse(a: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let l = cholesky(a)?;
    let mut inv = Array2::<f64>::zeros((n, n));
    // Solve L Lᵀ x = e_k column by column.
    let mut y = vec![0.0; n];
    for k in 0..n {
        // forward: L y = e_k
        for i in 0..n {
            let mut s = if i == k { 1.0 } else { 0.0 };
            for j in 0..i {
                s -= l[[i, j]] * y[j];
            }
            y[i] = s / l[[i, i]];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in (i + 1)..n {
                s -= l[[j, i]] * inv[[j, k]];
            }
            inv[[i, k]] = s / l[[i, i]];
        }
    }
    // Symmetrize against accumulated rounding.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (inv[[i, j]] + inv[[j, i]]);
            inv[[i, j]] = v;
            inv[[j, i]] = v;
        }
    }
    Some(inv)
}

/// SplitMix64 step, the standard 64-bit seed expander.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a master seed and two tags.
///
/// Used to give every (run, purpose) pair its own RNG stream so results do
/// not depend on execution order or thread count.
pub fn derive_seed(master: u64, tag_a: u64, tag_b: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(tag_a)) ^ splitmix64(tag_b ^ 0x51_7C_C1B7_2722_0A95))
}
