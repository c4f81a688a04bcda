//! Exact operation counts against sequence length.
//!
//! Every kernel in the bench harness tallies one unit per scalar multiply
//! while it computes, so the counts are measurements, not formulas. On a
//! log-log plot of multiply-adds over length, pairwise attention must show
//! slope 2 and the recurrent layer slope 1; the medium-augmented layer
//! follows a two-term cost a·(n·d) + b·(c²·d), the quadratic piece coming
//! from each medium reading the whole bank prefix.

use rrwkv::harness::bench::{
    attention_kernel, fit_medium_cost, loglog_slope, rrwkv_layer_kernel, rwkv_layer_kernel,
};

fn main() {
    let d = 64;
    let grid = [128usize, 256, 512, 1024, 2048];

    let mut att = Vec::new();
    let mut rec = Vec::new();
    println!("n       attention madds   rwkv layer madds");
    for &n in &grid {
        let (a, _) = attention_kernel(n, d, 0);
        let (r, _) = rwkv_layer_kernel(n, d, 0);
        println!("{n:<7} {a:<17} {r}");
        att.push((n as f64, a as f64));
        rec.push((n as f64, r as f64));
    }
    let s_att = loglog_slope(&att);
    let s_rec = loglog_slope(&rec);
    println!("\nlog-log slope: attention {s_att:.4} (quadratic), rwkv {s_rec:.4} (linear)");
    assert!((s_att - 2.0).abs() < 0.05 && (s_rec - 1.0).abs() < 0.05);

    // Medium-augmented rows over (n, s); c = n/s mediums each read the
    // whole bank prefix, hence the c² term.
    let width = 8;
    let mut rows = Vec::new();
    println!("\nn       s    mediums   rrwkv layer madds");
    for &n in &grid {
        for &s in &[16usize, 32, 64] {
            let (m, _) = rrwkv_layer_kernel(n, d, s, width, 0);
            let c = (n / s).max(1);
            println!("{n:<7} {s:<4} {c:<9} {m}");
            rows.push((n, d, c, m));
        }
    }
    let (a, b, resid) = fit_medium_cost(&rows);
    println!(
        "\ntwo-term fit: madds ≈ {a:.2}·(n·d) + {b:.2}·(c²·d), worst relative residual {:.2}%",
        resid * 100.0
    );
    assert!(resid < 0.05, "two-term model misses by more than 5%");
}
