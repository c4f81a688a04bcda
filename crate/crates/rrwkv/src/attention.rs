//! Quadratic reference attention implementations.
//!
//! These are deliberately simple O(T^2) double loops used as ground truth for
//! the linear-time recurrence elsewhere in the crate. Two flavors exist:
//! scalar-score softmax attention (`dot_product_attention`) and the
//! channel-wise exponential average (`tensor_product_attention`) that the
//! time-mix recurrence must reproduce. `naive_wkv` is the same channel-wise
//! average written without any overflow protection; it doubles as the oracle
//! for small inputs and as a demonstration of why the stabilizer is needed.

use crate::numerics::{Matrix, Vector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error(
        "key magnitude {value} at position {position}, channel {channel} exceeds the \
         overflow guard (|k| <= {limit})"
    )]
    KeyTooLarge { position: usize, channel: usize, value: f64, limit: f64 },
}

/// Largest key magnitude `naive_wkv` accepts before refusing to evaluate.
pub const NAIVE_KEY_LIMIT: f64 = 30.0;

/// Query/key/value sequences plus an optional additive position bias.
///
/// All three sequences must be the same length and channel width. The bias,
/// when present, is a T x T matrix of scalars `w[t][i]` added to `k_i` when
/// output position t attends to input position i; only the lower triangle
/// (i <= t) is ever read.
#[derive(Debug, Clone)]
pub struct AttentionInput {
    q: Vec<Vector>,
    k: Vec<Vector>,
    v: Vec<Vector>,
    w_bias: Option<Matrix>,
}

impl AttentionInput {
    pub fn new(q: Vec<Vector>, k: Vec<Vector>, v: Vec<Vector>, w_bias: Option<Matrix>) -> Self {
        assert!(!q.is_empty(), "attention input must contain at least one position");
        assert!(
            q.len() == k.len() && k.len() == v.len(),
            "query/key/value lengths differ: {} / {} / {}",
            q.len(),
            k.len(),
            v.len()
        );
        let dim = q[0].len();
        for (name, seq) in [("query", &q), ("key", &k), ("value", &v)] {
            assert!(
                seq.iter().all(|x| x.len() == dim),
                "{name} stream has inconsistent channel width"
            );
        }
        if let Some(w) = &w_bias {
            assert!(
                w.rows() == q.len() && w.cols() == q.len(),
                "position bias must be {0}x{0}, got {1}x{2}",
                q.len(),
                w.rows(),
                w.cols()
            );
        }
        AttentionInput { q, k, v, w_bias }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.q[0].len()
    }
}

/// Causal softmax attention with scalar scores `q_t . k_i` and no scaling.
///
/// Output t is the softmax-weighted average of `v_1..v_t`. Scores are shifted
/// by their running maximum before exponentiation, which changes nothing
/// mathematically but keeps the exponentials bounded. The position bias slot
/// must be empty; scalar-score attention has no channel-wise bias to add.
pub fn dot_product_attention(input: &AttentionInput) -> Vec<Vector> {
    assert!(input.w_bias.is_none(), "dot_product_attention takes no position bias");
    let dim = input.dim();
    let mut out = Vec::with_capacity(input.len());
    for t in 0..input.len() {
        let scores: Vec<f64> = (0..=t).map(|i| input.q[t].dot(&input.k[i])).collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = weights.iter().sum();
        let mut acc = Vector::zeros(dim);
        for (i, w) in weights.iter().enumerate() {
            acc.axpy(w / z, &input.v[i]);
        }
        out.push(acc);
    }
    out
}

/// Ungated channel-wise exponential average.
///
/// Output t, channel c is `Σ_{i<=t} exp(k_i[c] + w[t][i]) v_i[c]` divided by
/// the matching weight sum, computed with a per-channel shift by the running
/// maximum exponent so arbitrarily large keys stay finite.
pub fn exp_weighted_average(k: &[Vector], v: &[Vector], w_bias: Option<&Matrix>) -> Vec<Vector> {
    assert!(k.len() == v.len(), "key/value lengths differ");
    assert!(!k.is_empty(), "empty sequence");
    let dim = k[0].len();
    let mut out = Vec::with_capacity(k.len());
    for t in 0..k.len() {
        let mut result = Vector::zeros(dim);
        for c in 0..dim {
            let exponent = |i: usize| k[i][c] + w_bias.map_or(0.0, |w| w.get(t, i));
            let mut m = f64::NEG_INFINITY;
            for i in 0..=t {
                m = m.max(exponent(i));
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..=t {
                let w = (exponent(i) - m).exp();
                num += w * v[i][c];
                den += w;
            }
            result[c] = num / den;
        }
        out.push(result);
    }
    out
}

/// Gated channel-wise attention: `sigmoid(q_t) ⊙ exp_weighted_average`.
///
/// This is the quadratic oracle for the time-mix core: with the position bias
/// left empty it must agree with the linear-time recurrence to near machine
/// precision.
pub fn tensor_product_attention(input: &AttentionInput) -> Vec<Vector> {
    let averages = exp_weighted_average(&input.k, &input.v, input.w_bias.as_ref());
    input.q.iter().zip(averages).map(|(q, h)| q.sigmoid().hadamard(&h)).collect()
}

/// Unprotected exponential average over keys and values.
///
/// Sums `exp(k_i) ⊙ v_i` directly with no max subtraction, so it is only
/// valid for small keys; any |k| > [`NAIVE_KEY_LIMIT`] is refused with a
/// domain error naming the offending entry. Within that range it is the
/// independent cross-check for both the stabilized recurrence and
/// [`exp_weighted_average`].
pub fn naive_wkv(k: &[Vector], v: &[Vector]) -> Result<Vec<Vector>, OracleError> {
    assert!(k.len() == v.len(), "key/value lengths differ");
    let dim = if k.is_empty() { 0 } else { k[0].len() };
    for (position, key) in k.iter().enumerate() {
        for channel in 0..key.len() {
            if key[channel].abs() > NAIVE_KEY_LIMIT {
                return Err(OracleError::KeyTooLarge {
                    position,
                    channel,
                    value: key[channel],
                    limit: NAIVE_KEY_LIMIT,
                });
            }
        }
    }
    let mut num = Vector::zeros(dim);
    let mut den = Vector::zeros(dim);
    let mut out = Vec::with_capacity(k.len());
    for t in 0..k.len() {
        let w = k[t].exp();
        num.add_assign(&w.hadamard(&v[t]));
        den.add_assign(&w);
        out.push(num.div(&den));
    }
    Ok(out)
}
