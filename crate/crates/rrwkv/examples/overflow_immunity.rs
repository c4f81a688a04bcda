//! Why the recurrence carries a running maximum exponent.
//!
//! exp(700) overflows f64, so any implementation that sums raw
//! exponentials dies on keys far smaller than that: the naive oracle
//! refuses them by design. The production scan subtracts a running
//! maximum before exponentiating, which leaves every intermediate bounded
//! no matter how large the keys get. This demo pushes keys to |k| = 700
//! and checks three things: outputs stay finite, each output is a convex
//! combination of the values seen so far (so it lies inside their bounds),
//! and shifting every key by a constant changes nothing.

use rrwkv::attention::naive_wkv;
use rrwkv::rwkv::wkv_scan;
use rrwkv::{Rng, Vector};

fn main() {
    let mut rng = Rng::new(7);
    let t = 24;
    let d = 4;

    // Alternate +700 / -700 keys with some noise: the worst case for
    // anything unprotected.
    let k: Vec<Vector> = (0..t)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            Vector::from_fn(d, |_| sign * 700.0 + rng.range(-1.0, 1.0))
        })
        .collect();
    let v: Vec<Vector> = (0..t).map(|_| rng.normal_vector(d, 1.0)).collect();

    match naive_wkv(&k, &v) {
        Err(e) => println!("naive quadratic sum refuses:  {e}"),
        Ok(_) => panic!("the naive oracle must reject |k| = 700"),
    }

    let out = wkv_scan(&k, &v);
    let finite = out.iter().all(|h| h.as_slice().iter().all(|x| x.is_finite()));
    println!("stabilized scan at |k| = 700: all outputs finite = {finite}");
    assert!(finite);

    // Convexity: every output channel lies within the min/max of the
    // values seen so far, because the weights are positive and sum to one.
    let mut ok = true;
    for (t_i, out_t) in out.iter().enumerate() {
        for c in 0..d {
            let lo = (0..=t_i).map(|i| v[i][c]).fold(f64::INFINITY, f64::min) - 1e-12;
            let hi = (0..=t_i).map(|i| v[i][c]).fold(f64::NEG_INFINITY, f64::max) + 1e-12;
            ok &= out_t[c] >= lo && out_t[c] <= hi;
        }
    }
    println!("outputs inside value bounds:  {ok}");
    assert!(ok);

    // Shift invariance: the average only sees key differences.
    let shifted: Vec<Vector> = k.iter().map(|ki| ki.map(|x| x + 250.0)).collect();
    let out_shifted = wkv_scan(&shifted, &v);
    let worst = out
        .iter()
        .zip(&out_shifted)
        .flat_map(|(a, b)| a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    println!("max |diff| after +250 shift:  {worst:.3e}");
    assert!(worst < 1e-9);
}
