//! The linear-time recurrence against its quadratic oracles.
//!
//! Two comparisons, both over a few hundred random instances:
//!
//! * the stabilized exponential-average scan against `naive_wkv`, the
//!   direct quadratic sum that only works for small keys, and
//! * the full time-mix core (shift, project, recur, gate) against
//!   `tensor_product_attention`, the gated channel-wise attention form.
//!
//! Agreement is to 1e-10, far below anything a coincidence could produce:
//! the recurrence and the quadratic sums are the same function computed
//! two ways.

use rrwkv::attention::{naive_wkv, tensor_product_attention, AttentionInput};
use rrwkv::rwkv::{time_mix_forward_cached, wkv_scan, TimeMixParams, TokenStream};
use rrwkv::{Rng, Vector};

fn max_abs_diff(a: &[Vector], b: &[Vector]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn main() {
    let instances = 200;

    // Recurrence vs the naive quadratic sum on keys the naive form accepts.
    let mut worst_wkv = 0.0f64;
    for seed in 0..instances {
        let mut rng = Rng::new(seed);
        let t = 1 + rng.below(64);
        let d = 1 + rng.below(16);
        let k: Vec<Vector> = (0..t).map(|_| rng.uniform_vector(d, -3.0, 3.0)).collect();
        let v: Vec<Vector> = (0..t).map(|_| rng.normal_vector(d, 1.0)).collect();
        let fast = wkv_scan(&k, &v);
        let slow = naive_wkv(&k, &v).expect("keys are inside the naive range");
        worst_wkv = worst_wkv.max(max_abs_diff(&fast, &slow));
    }
    println!(
        "wkv scan vs naive quadratic sum   ({instances} instances): max |diff| = {worst_wkv:.3e}"
    );

    // Whole time-mix core vs gated channel-wise attention.
    let mut worst_tm = 0.0f64;
    for seed in 0..instances {
        let mut rng = Rng::new(1000 + seed);
        let t = 1 + rng.below(32);
        let d = 1 + rng.below(12);
        let params = TimeMixParams::new(
            rng.uniform_vector(d, 0.0, 1.0),
            rng.uniform_vector(d, 0.0, 1.0),
            rng.uniform_vector(d, 0.0, 1.0),
            rng.normal_matrix(d, d, 0.6),
            rng.normal_matrix(d, d, 0.6),
            rng.normal_matrix(d, d, 0.6),
            rng.normal_matrix(d, d, 0.6),
        );
        let xs = TokenStream::new((0..t).map(|_| rng.normal_vector(d, 1.0)).collect());
        let cache = time_mix_forward_cached(&xs, &params);
        // The oracle sees exactly what the recurrence consumed: the
        // projected queries, keys, and values.
        let oracle = tensor_product_attention(&AttentionInput::new(
            cache.q.clone(),
            cache.wkv.k.clone(),
            cache.wkv.v.clone(),
            None,
        ));
        worst_tm = worst_tm.max(max_abs_diff(&cache.gated, &oracle));
    }
    println!(
        "time-mix core vs gated attention  ({instances} instances): max |diff| = {worst_tm:.3e}"
    );

    assert!(worst_wkv < 1e-10 && worst_tm < 1e-10);
    println!("both oracles agree to 1e-10");
}
