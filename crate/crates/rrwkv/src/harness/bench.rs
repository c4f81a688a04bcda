//! Operation counting and wall-clock timing.
//!
//! The claims under test are asymptotic: pairwise attention costs grow
//! quadratically in sequence length, the recurrence linearly, and the
//! medium machinery adds a term quadratic in the medium count (the
//! recalibration network reads an ever longer bank prefix). To measure
//! them, this module carries small single-precision kernels instrumented
//! with an explicit multiply tally. They mirror the f64 reference
//! implementations structurally but exist purely as counting and throughput
//! instruments; correctness of the arithmetic is established elsewhere.
//!
//! The tally convention: one unit per scalar multiplication (a fused
//! multiply-add counts once). Transcendentals, comparisons, and divisions
//! are not counted; they are bounded by a constant multiple of the
//! multiplies in every kernel here.

use std::time::Instant;

use crate::medium::schedule_mediums;
use crate::numerics::Rng;

/// Scalar multiply tally.
#[derive(Debug, Default, Clone, Copy)]
pub struct Counter(pub u64);

impl Counter {
    fn add(&mut self, n: u64) {
        self.0 += n;
    }
}

fn random_rows(rng: &mut Rng, n: usize, d: usize) -> Vec<Vec<f32>> {
    (0..n).map(|_| (0..d).map(|_| rng.normal() as f32 * 0.5).collect()).collect()
}

fn random_matrix_f32(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f32>> {
    (0..rows).map(|_| (0..cols).map(|_| (rng.normal() * scale) as f32).collect()).collect()
}

fn matvec_f32(m: &[Vec<f32>], x: &[f32], tally: &mut Counter) -> Vec<f32> {
    tally.add((m.len() * x.len()) as u64);
    m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn sigmoid_f32(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Causal pairwise attention over scalar scores: for each position, dot
/// products against every earlier position and a weighted sum of values.
/// Returns the tally; the outputs are folded into a checksum so the work
/// cannot be optimized away.
pub fn attention_kernel(n: usize, d: usize, seed: u64) -> (u64, f32) {
    let mut rng = Rng::new(seed);
    let q = random_rows(&mut rng, n, d);
    let k = random_rows(&mut rng, n, d);
    let v = random_rows(&mut rng, n, d);
    let mut tally = Counter::default();
    let mut checksum = 0.0f32;
    for t in 0..n {
        let mut weights = Vec::with_capacity(t + 1);
        let mut max_score = f32::NEG_INFINITY;
        for u in 0..=t {
            tally.add(d as u64);
            let score: f32 = q[t].iter().zip(&k[u]).map(|(a, b)| a * b).sum();
            max_score = max_score.max(score);
            weights.push(score);
        }
        let mut z = 0.0f32;
        for w in weights.iter_mut() {
            *w = (*w - max_score).exp();
            z += *w;
        }
        let mut out = vec![0.0f32; d];
        for u in 0..=t {
            tally.add(d as u64);
            for c in 0..d {
                out[c] += weights[u] * v[u][c];
            }
        }
        checksum += out.iter().sum::<f32>() / z;
    }
    (tally.0, checksum)
}

/// Exact multiply count of [`attention_kernel`]: `d * n * (n + 1)`.
pub fn attention_madds(n: usize, d: usize) -> u64 {
    (d as u64) * (n as u64) * (n as u64 + 1)
}

/// The stabilized recurrence alone: three multiplies per channel per step.
pub fn wkv_kernel(n: usize, d: usize, seed: u64) -> (u64, f32) {
    let mut rng = Rng::new(seed);
    let k = random_rows(&mut rng, n, d);
    let v = random_rows(&mut rng, n, d);
    let mut tally = Counter::default();
    let mut num = vec![0.0f32; d];
    let mut den = vec![0.0f32; d];
    let mut p = vec![0.0f32; d];
    let mut checksum = 0.0f32;
    for t in 0..n {
        for c in 0..d {
            let p_new = p[c].max(k[t][c]);
            let alpha = (p[c] - p_new).exp();
            let beta = (k[t][c] - p_new).exp();
            tally.add(3);
            num[c] = alpha * num[c] + beta * v[t][c];
            den[c] = alpha * den[c] + beta;
            p[c] = p_new;
            checksum += num[c] / den[c];
        }
    }
    (tally.0, checksum)
}

/// Exact multiply count of [`wkv_kernel`]: `3 * n * d`.
pub fn wkv_madds(n: usize, d: usize) -> u64 {
    3 * (n as u64) * (d as u64)
}

struct BlockWeights {
    mix: Vec<Vec<f32>>, // five shift-mix vectors: q, k, v, r, z
    wq: Vec<Vec<f32>>,
    wk: Vec<Vec<f32>>,
    wv: Vec<Vec<f32>>,
    wo: Vec<Vec<f32>>,
    wr: Vec<Vec<f32>>,
    wz: Vec<Vec<f32>>,
    wp: Vec<Vec<f32>>,
}

fn block_weights(rng: &mut Rng, d: usize) -> BlockWeights {
    let s = 1.0 / (d as f64).sqrt();
    BlockWeights {
        mix: (0..5).map(|_| (0..d).map(|_| rng.uniform() as f32).collect()).collect(),
        wq: random_matrix_f32(rng, d, d, s),
        wk: random_matrix_f32(rng, d, d, s),
        wv: random_matrix_f32(rng, d, d, s),
        wo: random_matrix_f32(rng, d, d, s),
        wr: random_matrix_f32(rng, d, d, s),
        wz: random_matrix_f32(rng, d, d, s),
        wp: random_matrix_f32(rng, d, d, s),
    }
}

/// Shift-interpolate (2 multiplies per channel) then project.
fn shift_project(
    w: &[Vec<f32>],
    mix: &[f32],
    x: &[f32],
    prev: &[f32],
    tally: &mut Counter,
) -> Vec<f32> {
    tally.add(2 * x.len() as u64);
    let mixed: Vec<f32> =
        x.iter().zip(prev).zip(mix).map(|((a, b), m)| m * a + (1.0 - m) * b).collect();
    matvec_f32(w, &mixed, tally)
}

/// Time mix over a stream: per position `4 d^2` projection multiplies,
/// `6 d` shift multiplies, `3 d` recurrence multiplies, `d` gate multiplies.
fn time_mix_f32(xs: &[Vec<f32>], w: &BlockWeights, tally: &mut Counter) -> Vec<Vec<f32>> {
    let d = xs[0].len();
    let zero = vec![0.0f32; d];
    let mut num = vec![0.0f32; d];
    let mut den = vec![0.0f32; d];
    let mut p = vec![0.0f32; d];
    let mut out = Vec::with_capacity(xs.len());
    for t in 0..xs.len() {
        let prev = if t == 0 { &zero } else { &xs[t - 1] };
        let q = shift_project(&w.wq, &w.mix[0], &xs[t], prev, tally);
        let k = shift_project(&w.wk, &w.mix[1], &xs[t], prev, tally);
        let v = shift_project(&w.wv, &w.mix[2], &xs[t], prev, tally);
        let mut gated = vec![0.0f32; d];
        for c in 0..d {
            let p_new = p[c].max(k[c]);
            let alpha = (p[c] - p_new).exp();
            let beta = (k[c] - p_new).exp();
            tally.add(3);
            num[c] = alpha * num[c] + beta * v[c];
            den[c] = alpha * den[c] + beta;
            p[c] = p_new;
            tally.add(1);
            gated[c] = sigmoid_f32(q[c]) * (num[c] / den[c]);
        }
        out.push(matvec_f32(&w.wo, &gated, tally));
    }
    out
}

/// Channel mix over a stream with explicit "previous" vectors: `3 d^2`
/// projection multiplies, `4 d` shift multiplies, `2 d` activation/gate
/// multiplies per position.
fn channel_mix_f32(
    xs: &[Vec<f32>],
    prevs: &[&[f32]],
    w: &BlockWeights,
    tally: &mut Counter,
) -> Vec<Vec<f32>> {
    let d = xs[0].len();
    let mut out = Vec::with_capacity(xs.len());
    for t in 0..xs.len() {
        let r = shift_project(&w.wr, &w.mix[3], &xs[t], prevs[t], tally);
        let z = shift_project(&w.wz, &w.mix[4], &xs[t], prevs[t], tally);
        tally.add(d as u64);
        let hidden: Vec<f32> = z
            .iter()
            .map(|&v| {
                let rl = v.max(0.0);
                rl * rl
            })
            .collect();
        let proj = matvec_f32(&w.wp, &hidden, tally);
        tally.add(d as u64);
        out.push(r.iter().zip(&proj).map(|(g, p)| sigmoid_f32(*g) * p).collect());
    }
    out
}

/// One plain recurrent block over `n` positions. Per position the tally is
/// exactly `7 d^2 + 16 d`.
pub fn rwkv_layer_kernel(n: usize, d: usize, seed: u64) -> (u64, f32) {
    let mut rng = Rng::new(seed);
    let w = block_weights(&mut rng, d);
    let xs = random_rows(&mut rng, n, d);
    let mut tally = Counter::default();
    let tm = time_mix_f32(&xs, &w, &mut tally);
    let zero = vec![0.0f32; d];
    let prevs: Vec<&[f32]> =
        (0..n).map(|t| if t == 0 { zero.as_slice() } else { xs[t - 1].as_slice() }).collect();
    let cm = channel_mix_f32(&xs, &prevs, &w, &mut tally);
    let checksum = tm.iter().chain(&cm).map(|v| v.iter().sum::<f32>()).sum();
    (tally.0, checksum)
}

/// Exact multiply count of [`rwkv_layer_kernel`]: `n (7 d^2 + 16 d)`.
pub fn rwkv_layer_madds(n: usize, d: usize) -> u64 {
    (n as u64) * (7 * (d as u64) * (d as u64) + 16 * (d as u64))
}

/// One medium block: time mix over the interleaved stream (`n + c` slots),
/// channel mix over the `n` token slots with medium "previous" vectors,
/// mean pooling, and the recalibration network whose cost grows with the
/// square of the medium count.
pub fn rrwkv_layer_kernel(
    n: usize,
    d: usize,
    interval: usize,
    width: usize,
    seed: u64,
) -> (u64, f32) {
    let mut rng = Rng::new(seed);
    let w = block_weights(&mut rng, d);
    let xs = random_rows(&mut rng, n, d);
    let plan = schedule_mediums(n, interval);
    let c = plan.mediums();
    let w_hidden = random_matrix_f32(&mut rng, width, c.max(1), 0.5);
    let w_out = random_matrix_f32(&mut rng, 1, width, 0.5);
    let mut tally = Counter::default();

    // Squeeze: mean over each window, one multiply per channel for the
    // 1/s scale.
    let mut mediums: Vec<Vec<f32>> = vec![vec![0.0f32; d]];
    for i in 1..c {
        let win = plan.window(i).expect("window");
        let mut m = vec![0.0f32; d];
        for j in win.clone() {
            for ch in 0..d {
                m[ch] += xs[j][ch];
            }
        }
        tally.add(d as u64);
        let inv = 1.0 / win.len() as f32;
        for ch in 0..d {
            m[ch] *= inv;
        }
        mediums.push(m);
    }
    // Recalibrate: per channel, a width x (i+1) hidden layer and a width
    // output dot.
    for i in 1..c {
        for ch in 0..d {
            let mut score = 0.0f32;
            for r in 0..width {
                let mut h = 0.0f32;
                tally.add((i + 1) as u64);
                for (j, m) in mediums.iter().take(i + 1).enumerate() {
                    h += w_hidden[r][j] * m[ch];
                }
                tally.add(1);
                score += w_out[0][r] * h.max(0.0);
            }
            mediums[i][ch] = sigmoid_f32(score);
        }
    }
    // Interleave and run the mixer over the joint stream.
    let mut stream: Vec<Vec<f32>> = vec![vec![0.0f32; d]; plan.stream_len()];
    for i in 0..c {
        stream[plan.medium_slot(i)] = mediums[i].clone();
    }
    for j in 0..n {
        stream[plan.token_slot(j)] = xs[j].clone();
    }
    let tm = time_mix_f32(&stream, &w, &mut tally);
    let prevs: Vec<&[f32]> = (0..n)
        .map(|j| mediums[plan.mapped_medium(j, crate::medium::Mapping::Causal)].as_slice())
        .collect();
    let cm = channel_mix_f32(&xs, &prevs, &w, &mut tally);
    let checksum = tm.iter().chain(&cm).map(|v| v.iter().sum::<f32>()).sum();
    (tally.0, checksum)
}

/// One benchmark measurement.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub arch: String,
    pub n: usize,
    pub d: usize,
    pub s: usize,
    pub madds: u64,
    pub wall_ms: f64,
}

pub fn bench_csv_header() -> &'static str {
    "arch,n,d,s,madds,wall_ms"
}

impl BenchRow {
    pub fn to_csv_line(&self) -> String {
        format!("{},{},{},{},{},{:.3}", self.arch, self.n, self.d, self.s, self.madds, self.wall_ms)
    }
}

/// Median wall time of `f` over `repeats` runs, in milliseconds.
pub fn median_wall_ms(mut f: impl FnMut(), repeats: usize) -> f64 {
    assert!(repeats >= 1);
    let mut times: Vec<f64> = (0..repeats)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

/// Least-squares slope of `log2 y` against `log2 x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    assert!(points.len() >= 2, "need at least two points for a slope");
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.log2(), y.log2())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    num / den
}

/// Fit `madds = a (n d) + b (c^2 d)` by least squares over measurements of
/// the medium block, returning `(a, b, max relative residual)`. The two
/// basis functions separate the stream cost from the recalibration cost.
pub fn fit_medium_cost(rows: &[(usize, usize, usize, u64)]) -> (f64, f64, f64) {
    // rows: (n, d, c, madds)
    assert!(rows.len() >= 2, "need at least two measurements");
    // Normal equations for two parameters.
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
    for &(n, d, c, madds) in rows {
        let x1 = (n * d) as f64;
        let x2 = (c * c * d) as f64;
        let y = madds as f64;
        s11 += x1 * x1;
        s12 += x1 * x2;
        s22 += x2 * x2;
        b1 += x1 * y;
        b2 += x2 * y;
    }
    let det = s11 * s22 - s12 * s12;
    assert!(det.abs() > 1e-9, "degenerate design: vary both n and c");
    let a = (b1 * s22 - b2 * s12) / det;
    let b = (s11 * b2 - s12 * b1) / det;
    let mut worst = 0.0f64;
    for &(n, d, c, madds) in rows {
        let pred = a * (n * d) as f64 + b * (c * c * d) as f64;
        let rel = (pred - madds as f64).abs() / madds as f64;
        worst = worst.max(rel);
    }
    (a, b, worst)
}
