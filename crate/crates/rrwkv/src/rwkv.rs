//! Token-shifted time mixing and channel mixing over a numerically
//! stabilized exponential-average recurrence.
//!
//! The time mixer computes, per channel,
//!
//! ```text
//! h_t = Σ_{i<=t} exp(k_i) v_i / Σ_{i<=t} exp(k_i)
//! o_t = W_o (sigmoid(q_t) ⊙ h_t)
//! ```
//!
//! where q, k, v come from token-shifted projections of the input stream.
//! The running average is evaluated by a recurrence that tracks a numerator,
//! a denominator, and the largest exponent seen so far; every exponential it
//! takes has a non-positive argument, so keys of any magnitude stay finite.
//! The quadratic oracles in [`crate::attention`] define the semantics this
//! recurrence must reproduce.
//!
//! Forward passes come in two forms: plain, and `_cached` variants that
//! record every intermediate needed by the matching hand-derived backward
//! pass.

use crate::numerics::{Matrix, Vector};

/// Ordered stream of equal-width token vectors.
///
/// Position indices are 0-based. Wherever a block needs the element before
/// position 0 (token shifting, the recurrence start), the convention is a
/// zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStream {
    dim: usize,
    items: Vec<Vector>,
}

impl TokenStream {
    pub fn new(items: Vec<Vector>) -> Self {
        assert!(!items.is_empty(), "use TokenStream::empty for empty streams");
        let dim = items[0].len();
        assert!(
            items.iter().all(|x| x.len() == dim),
            "token stream has inconsistent channel width"
        );
        TokenStream { dim, items }
    }

    pub fn empty(dim: usize) -> Self {
        TokenStream { dim, items: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[Vector] {
        &self.items
    }

    pub fn push(&mut self, x: Vector) {
        assert!(x.len() == self.dim, "pushed vector has wrong width");
        self.items.push(x);
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vector> {
        self.items.iter()
    }
}

impl std::ops::Index<usize> for TokenStream {
    type Output = Vector;
    fn index(&self, i: usize) -> &Vector {
        &self.items[i]
    }
}

/// Time-mix parameters: interpolation weights and the four projections.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMixParams {
    pub mix_q: Vector,
    pub mix_k: Vector,
    pub mix_v: Vector,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

impl TimeMixParams {
    pub fn new(
        mix_q: Vector,
        mix_k: Vector,
        mix_v: Vector,
        wq: Matrix,
        wk: Matrix,
        wv: Matrix,
        wo: Matrix,
    ) -> Self {
        let d = mix_q.len();
        for (name, m) in [("mix_q", &mix_q), ("mix_k", &mix_k), ("mix_v", &mix_v)] {
            assert!(m.len() == d, "{name} has wrong width");
            assert!(
                m.as_slice().iter().all(|&x| (0.0..=1.0).contains(&x)),
                "{name} components must lie in [0, 1]"
            );
        }
        for (name, w) in [("wq", &wq), ("wk", &wk), ("wv", &wv), ("wo", &wo)] {
            assert!(
                w.rows() == d && w.cols() == d,
                "{name} must be {d}x{d}, got {}x{}",
                w.rows(),
                w.cols()
            );
        }
        TimeMixParams { mix_q, mix_k, mix_v, wq, wk, wv, wo }
    }

    pub fn dim(&self) -> usize {
        self.mix_q.len()
    }

    /// Same shapes, all zeros; used as gradient storage.
    pub fn zeros_like(&self) -> Self {
        let d = self.dim();
        TimeMixParams {
            mix_q: Vector::zeros(d),
            mix_k: Vector::zeros(d),
            mix_v: Vector::zeros(d),
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
        }
    }
}

/// Channel-mix parameters: two interpolation weights, a receptance
/// projection, a candidate projection, and the post-activation projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMixParams {
    pub mix_r: Vector,
    pub mix_z: Vector,
    pub wr: Matrix,
    pub wz: Matrix,
    pub wp: Matrix,
}

impl ChannelMixParams {
    pub fn new(mix_r: Vector, mix_z: Vector, wr: Matrix, wz: Matrix, wp: Matrix) -> Self {
        let d = mix_r.len();
        for (name, m) in [("mix_r", &mix_r), ("mix_z", &mix_z)] {
            assert!(m.len() == d, "{name} has wrong width");
            assert!(
                m.as_slice().iter().all(|&x| (0.0..=1.0).contains(&x)),
                "{name} components must lie in [0, 1]"
            );
        }
        for (name, w) in [("wr", &wr), ("wz", &wz), ("wp", &wp)] {
            assert!(
                w.rows() == d && w.cols() == d,
                "{name} must be {d}x{d}, got {}x{}",
                w.rows(),
                w.cols()
            );
        }
        ChannelMixParams { mix_r, mix_z, wr, wz, wp }
    }

    pub fn dim(&self) -> usize {
        self.mix_r.len()
    }

    pub fn zeros_like(&self) -> Self {
        let d = self.dim();
        ChannelMixParams {
            mix_r: Vector::zeros(d),
            mix_z: Vector::zeros(d),
            wr: Matrix::zeros(d, d),
            wz: Matrix::zeros(d, d),
            wp: Matrix::zeros(d, d),
        }
    }
}

/// Interpolate the current and previous token, then project:
/// `W (mix ⊙ x_t + (1 − mix) ⊙ x_prev)`.
pub fn token_shift(x_t: &Vector, x_prev: &Vector, mix: &Vector, w: &Matrix) -> Vector {
    w.matvec(&x_t.lerp(mix, x_prev))
}

/// Adjoint of [`token_shift`]. Accumulates the weight and mix gradients and
/// returns `(d x_t, d x_prev)`.
#[allow(clippy::too_many_arguments)] // backward passes carry params, cache, upstream, and sinks
fn token_shift_backward(
    d_proj: &Vector,
    w: &Matrix,
    mix: &Vector,
    x_t: &Vector,
    x_prev: &Vector,
    mixed: &Vector,
    g_w: &mut Matrix,
    g_mix: &mut Vector,
) -> (Vector, Vector) {
    g_w.add_outer(d_proj, mixed);
    let du = w.tmatvec(d_proj);
    for c in 0..du.len() {
        g_mix[c] += (x_t[c] - x_prev[c]) * du[c];
    }
    let dx_t = mix.hadamard(&du);
    let dx_prev = du.sub(&dx_t);
    (dx_t, dx_prev)
}

/// Running state of the stabilized recurrence: stabilized numerator and
/// denominator accumulators plus the largest exponent folded in so far.
#[derive(Debug, Clone, PartialEq)]
pub struct WkvState {
    pub num: Vector,
    pub den: Vector,
    pub max_exp: Vector,
}

impl WkvState {
    /// Start-of-stream state: all three components zero.
    pub fn start(dim: usize) -> Self {
        WkvState { num: Vector::zeros(dim), den: Vector::zeros(dim), max_exp: Vector::zeros(dim) }
    }

    pub fn dim(&self) -> usize {
        self.num.len()
    }
}

struct WkvStepOut {
    alpha: Vector,
    beta: Vector,
    state: WkvState,
    h: Vector,
}

/// One recurrence step. Per channel:
///
/// ```text
/// p'    = max(p, k)
/// alpha = exp(p - p'),  beta = exp(k - p')
/// num'  = alpha * num + beta * v
/// den'  = alpha * den + beta
/// h     = num' / den'
/// ```
///
/// Both exponents are non-positive by construction; `den'` is strictly
/// positive after the first step, so the quotient is always finite.
fn wkv_step_core(state: &WkvState, k: &Vector, v: &Vector) -> WkvStepOut {
    let d = state.dim();
    assert!(k.len() == d && v.len() == d, "wkv step width mismatch");
    assert!(
        k.as_slice().iter().chain(v.as_slice()).all(|x| x.is_finite()),
        "wkv step requires finite keys and values"
    );
    let mut alpha = Vector::zeros(d);
    let mut beta = Vector::zeros(d);
    let mut num = Vector::zeros(d);
    let mut den = Vector::zeros(d);
    let mut max_exp = Vector::zeros(d);
    let mut h = Vector::zeros(d);
    for c in 0..d {
        let p = state.max_exp[c];
        let p_new = if p >= k[c] { p } else { k[c] };
        let a = (p - p_new).exp();
        let b = (k[c] - p_new).exp();
        let n = a * state.num[c] + b * v[c];
        let z = a * state.den[c] + b;
        alpha[c] = a;
        beta[c] = b;
        num[c] = n;
        den[c] = z;
        max_exp[c] = p_new;
        h[c] = n / z;
    }
    WkvStepOut { alpha, beta, state: WkvState { num, den, max_exp }, h }
}

/// Advance the recurrence by one (key, value) pair, returning the output and
/// the next state.
pub fn wkv_step(state: &WkvState, k: &Vector, v: &Vector) -> (Vector, WkvState) {
    let out = wkv_step_core(state, k, v);
    (out.h, out.state)
}

/// Run the recurrence over whole key/value sequences.
///
/// This is exactly the fold of [`wkv_step`] from the start state — same
/// arithmetic in the same order — packaged for sequence-level use. An empty
/// input yields an empty output.
pub fn wkv_scan(k: &[Vector], v: &[Vector]) -> Vec<Vector> {
    assert!(k.len() == v.len(), "key/value lengths differ");
    if k.is_empty() {
        return Vec::new();
    }
    let mut state = WkvState::start(k[0].len());
    let mut out = Vec::with_capacity(k.len());
    for (ki, vi) in k.iter().zip(v) {
        let step = wkv_step_core(&state, ki, vi);
        state = step.state;
        out.push(step.h);
    }
    out
}

/// Every intermediate of a scan, sufficient for the exact backward pass.
/// `num/den/max_exp[i]` hold the state *before* step i (index 0 is the start
/// state), `alpha/beta/h[i]` belong to step i itself.
#[derive(Debug, Clone)]
pub struct WkvCache {
    pub k: Vec<Vector>,
    pub v: Vec<Vector>,
    pub alpha: Vec<Vector>,
    pub beta: Vec<Vector>,
    pub num: Vec<Vector>,
    pub den: Vec<Vector>,
    pub max_exp: Vec<Vector>,
    pub h: Vec<Vector>,
}

impl WkvCache {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn dim(&self) -> usize {
        if self.num.is_empty() {
            0
        } else {
            self.num[0].len()
        }
    }
}

/// Scan that records every intermediate. Output values are bitwise identical
/// to [`wkv_scan`]; both drive the same step core.
pub fn wkv_scan_cached(k: &[Vector], v: &[Vector]) -> WkvCache {
    assert!(k.len() == v.len(), "key/value lengths differ");
    let dim = if k.is_empty() { 0 } else { k[0].len() };
    let mut cache = WkvCache {
        k: k.to_vec(),
        v: v.to_vec(),
        alpha: Vec::with_capacity(k.len()),
        beta: Vec::with_capacity(k.len()),
        num: vec![Vector::zeros(dim)],
        den: vec![Vector::zeros(dim)],
        max_exp: vec![Vector::zeros(dim)],
        h: Vec::with_capacity(k.len()),
    };
    let mut state = WkvState::start(dim);
    for (ki, vi) in k.iter().zip(v) {
        let step = wkv_step_core(&state, ki, vi);
        cache.alpha.push(step.alpha);
        cache.beta.push(step.beta);
        cache.num.push(step.state.num.clone());
        cache.den.push(step.state.den.clone());
        cache.max_exp.push(step.state.max_exp.clone());
        cache.h.push(step.h);
        state = step.state;
    }
    cache
}

/// Exact reverse pass of the recurrence. Returns `(d_k, d_v)` given the
/// adjoint of every output `h`.
///
/// The reverse recurrence carries adjoints for the three state components.
/// The `max` that selects the stabilizer exponent routes its adjoint to the
/// argument that won the forward comparison (previous exponent on ties),
/// which is the subgradient convention the finite-difference harness also
/// assumes.
pub fn wkv_backward(cache: &WkvCache, d_h: &[Vector]) -> (Vec<Vector>, Vec<Vector>) {
    let t_len = cache.len();
    assert!(d_h.len() == t_len, "adjoint length mismatch");
    let dim = cache.dim();
    let mut d_k = vec![Vector::zeros(dim); t_len];
    let mut d_v = vec![Vector::zeros(dim); t_len];
    let mut carry_num = Vector::zeros(dim);
    let mut carry_den = Vector::zeros(dim);
    let mut carry_p = Vector::zeros(dim);
    for i in (0..t_len).rev() {
        for c in 0..dim {
            let alpha = cache.alpha[i][c];
            let beta = cache.beta[i][c];
            let num_new = cache.num[i + 1][c];
            let den_new = cache.den[i + 1][c];
            // h = num' / den'
            let da = carry_num[c] + d_h[i][c] / den_new;
            let db = carry_den[c] - d_h[i][c] * num_new / (den_new * den_new);
            // num' = alpha num + beta v ; den' = alpha den + beta
            let d_alpha = da * cache.num[i][c] + db * cache.den[i][c];
            let d_beta = da * cache.v[i][c] + db;
            d_v[i][c] = da * beta;
            // alpha = exp(p - p'), beta = exp(k - p')
            d_k[i][c] = d_beta * beta;
            let dp_new = carry_p[c] - d_alpha * alpha - d_beta * beta;
            let mut dp_prev = d_alpha * alpha;
            // p' = max(p, k), ties to the previous exponent
            if cache.max_exp[i][c] >= cache.k[i][c] {
                dp_prev += dp_new;
            } else {
                d_k[i][c] += dp_new;
            }
            carry_num[c] = da * alpha;
            carry_den[c] = db * alpha;
            carry_p[c] = dp_prev;
        }
    }
    (d_k, d_v)
}

/// Record of a time-mix forward pass.
#[derive(Debug, Clone)]
pub struct TimeMixCache {
    pub inputs: Vec<Vector>,
    pub mixed_q: Vec<Vector>,
    pub mixed_k: Vec<Vector>,
    pub mixed_v: Vec<Vector>,
    pub q: Vec<Vector>,
    pub gate: Vec<Vector>,
    pub wkv: WkvCache,
    /// gate ⊙ h, the vector the output projection consumes.
    pub gated: Vec<Vector>,
    pub out: Vec<Vector>,
}

/// Time mixer: token-shifted q/k/v projections, the stabilized recurrence,
/// a sigmoid receptance gate, and an output projection.
pub fn time_mix_forward_cached(xs: &TokenStream, params: &TimeMixParams) -> TimeMixCache {
    let d = params.dim();
    assert!(xs.is_empty() || xs.dim() == d, "stream width {} != params width {d}", xs.dim());
    let t_len = xs.len();
    let zero = Vector::zeros(d);
    let mut cache = TimeMixCache {
        inputs: xs.as_slice().to_vec(),
        mixed_q: Vec::with_capacity(t_len),
        mixed_k: Vec::with_capacity(t_len),
        mixed_v: Vec::with_capacity(t_len),
        q: Vec::with_capacity(t_len),
        gate: Vec::with_capacity(t_len),
        wkv: wkv_scan_cached(&[], &[]),
        gated: Vec::with_capacity(t_len),
        out: Vec::with_capacity(t_len),
    };
    let mut k_seq = Vec::with_capacity(t_len);
    let mut v_seq = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let x_prev = if t == 0 { &zero } else { &xs[t - 1] };
        let mq = xs[t].lerp(&params.mix_q, x_prev);
        let mk = xs[t].lerp(&params.mix_k, x_prev);
        let mv = xs[t].lerp(&params.mix_v, x_prev);
        let q = params.wq.matvec(&mq);
        k_seq.push(params.wk.matvec(&mk));
        v_seq.push(params.wv.matvec(&mv));
        cache.gate.push(q.sigmoid());
        cache.q.push(q);
        cache.mixed_q.push(mq);
        cache.mixed_k.push(mk);
        cache.mixed_v.push(mv);
    }
    cache.wkv = wkv_scan_cached(&k_seq, &v_seq);
    for t in 0..t_len {
        let gated = cache.gate[t].hadamard(&cache.wkv.h[t]);
        cache.out.push(params.wo.matvec(&gated));
        cache.gated.push(gated);
    }
    cache
}

pub fn time_mix_forward(xs: &TokenStream, params: &TimeMixParams) -> Vec<Vector> {
    time_mix_forward_cached(xs, params).out
}

/// Adjoint of the time mixer. Accumulates parameter gradients and returns
/// the adjoint of each input position.
pub fn time_mix_backward(
    params: &TimeMixParams,
    cache: &TimeMixCache,
    d_out: &[Vector],
    grads: &mut TimeMixParams,
) -> Vec<Vector> {
    let t_len = cache.out.len();
    assert!(d_out.len() == t_len, "adjoint length mismatch");
    let d = params.dim();
    let zero = Vector::zeros(d);
    let mut d_h = Vec::with_capacity(t_len);
    let mut d_q = Vec::with_capacity(t_len);
    for t in 0..t_len {
        grads.wo.add_outer(&d_out[t], &cache.gated[t]);
        let d_gated = params.wo.tmatvec(&d_out[t]);
        let gate = &cache.gate[t];
        d_h.push(d_gated.hadamard(gate));
        let mut dq = Vector::zeros(d);
        for c in 0..d {
            let g = gate[c];
            dq[c] = d_gated[c] * cache.wkv.h[t][c] * g * (1.0 - g);
        }
        d_q.push(dq);
    }
    let (d_k, d_v) = wkv_backward(&cache.wkv, &d_h);
    let mut d_x = vec![Vector::zeros(d); t_len];
    for t in (0..t_len).rev() {
        let x_prev = if t == 0 { &zero } else { &cache.inputs[t - 1] };
        for (d_proj, w, mix, mixed, g_w, g_mix) in [
            (
                &d_q[t],
                &params.wq,
                &params.mix_q,
                &cache.mixed_q[t],
                &mut grads.wq,
                &mut grads.mix_q,
            ),
            (
                &d_k[t],
                &params.wk,
                &params.mix_k,
                &cache.mixed_k[t],
                &mut grads.wk,
                &mut grads.mix_k,
            ),
            (
                &d_v[t],
                &params.wv,
                &params.mix_v,
                &cache.mixed_v[t],
                &mut grads.wv,
                &mut grads.mix_v,
            ),
        ] {
            let (dx_t, dx_prev) =
                token_shift_backward(d_proj, w, mix, &cache.inputs[t], x_prev, mixed, g_w, g_mix);
            d_x[t].add_assign(&dx_t);
            if t > 0 {
                d_x[t - 1].add_assign(&dx_prev);
            }
        }
    }
    d_x
}

/// Record of a channel-mix forward pass.
#[derive(Debug, Clone)]
pub struct ChannelMixCache {
    pub inputs: Vec<Vector>,
    pub mixed_r: Vec<Vector>,
    pub mixed_z: Vec<Vector>,
    pub gate: Vec<Vector>,
    pub z: Vec<Vector>,
    /// relu(z)^2
    pub hidden: Vec<Vector>,
    pub proj: Vec<Vector>,
    pub out: Vec<Vector>,
}

/// Channel-mix arithmetic with an explicit "previous" vector per position.
///
/// The plain mixer passes the preceding stream element (zero at the start);
/// the medium-excited variant passes each position's mapped medium. Both
/// share this exact code path.
pub(crate) fn channel_mix_prevs_cached(
    xs: &TokenStream,
    prev_of: &dyn Fn(usize) -> Vector,
    params: &ChannelMixParams,
) -> ChannelMixCache {
    let d = params.dim();
    assert!(xs.is_empty() || xs.dim() == d, "stream width {} != params width {d}", xs.dim());
    let t_len = xs.len();
    let mut cache = ChannelMixCache {
        inputs: xs.as_slice().to_vec(),
        mixed_r: Vec::with_capacity(t_len),
        mixed_z: Vec::with_capacity(t_len),
        gate: Vec::with_capacity(t_len),
        z: Vec::with_capacity(t_len),
        hidden: Vec::with_capacity(t_len),
        proj: Vec::with_capacity(t_len),
        out: Vec::with_capacity(t_len),
    };
    for t in 0..t_len {
        let x_prev = prev_of(t);
        let mr = xs[t].lerp(&params.mix_r, &x_prev);
        let mz = xs[t].lerp(&params.mix_z, &x_prev);
        let r = params.wr.matvec(&mr);
        let z = params.wz.matvec(&mz);
        let hidden = z.relu().square();
        let proj = params.wp.matvec(&hidden);
        let gate = r.sigmoid();
        cache.out.push(gate.hadamard(&proj));
        cache.mixed_r.push(mr);
        cache.mixed_z.push(mz);
        cache.gate.push(gate);
        cache.z.push(z);
        cache.hidden.push(hidden);
        cache.proj.push(proj);
    }
    cache
}

/// Channel mixer: token-shifted receptance and candidate projections, a
/// squared-ReLU activation, a value projection, and a sigmoid gate:
/// `out_t = sigmoid(r_t) ⊙ (W_p relu(z_t)^2)`.
pub fn channel_mix_forward_cached(xs: &TokenStream, params: &ChannelMixParams) -> ChannelMixCache {
    let d = params.dim();
    let inputs = xs.as_slice().to_vec();
    let prev_of = move |t: usize| if t == 0 { Vector::zeros(d) } else { inputs[t - 1].clone() };
    channel_mix_prevs_cached(xs, &prev_of, params)
}

pub fn channel_mix_forward(xs: &TokenStream, params: &ChannelMixParams) -> Vec<Vector> {
    channel_mix_forward_cached(xs, params).out
}

/// Adjoint of the channel mixer (shared with the medium-excited variant,
/// which differs only in where the shift's "previous" vector comes from).
/// Returns per-position input adjoints plus the adjoint of each position's
/// previous-slot vector so the caller can route it (to x_{t-1} here, to a
/// medium in the excited variant).
pub fn channel_mix_backward_split(
    params: &ChannelMixParams,
    cache: &ChannelMixCache,
    prev_of: &dyn Fn(usize) -> Vector,
    d_out: &[Vector],
    grads: &mut ChannelMixParams,
) -> (Vec<Vector>, Vec<Vector>) {
    let t_len = cache.out.len();
    assert!(d_out.len() == t_len, "adjoint length mismatch");
    let d = params.dim();
    let mut d_x = vec![Vector::zeros(d); t_len];
    let mut d_prev = Vec::with_capacity(t_len);
    for t in (0..t_len).rev() {
        let x_prev = prev_of(t);
        let gate = &cache.gate[t];
        let d_proj = d_out[t].hadamard(gate);
        let mut d_r = Vector::zeros(d);
        for c in 0..d {
            let g = gate[c];
            d_r[c] = d_out[t][c] * cache.proj[t][c] * g * (1.0 - g);
        }
        grads.wp.add_outer(&d_proj, &cache.hidden[t]);
        let d_hidden = params.wp.tmatvec(&d_proj);
        // d/dz relu(z)^2 = 2 relu(z)
        let mut d_z = Vector::zeros(d);
        for c in 0..d {
            let z = cache.z[t][c];
            d_z[c] = d_hidden[c] * 2.0 * if z > 0.0 { z } else { 0.0 };
        }
        let mut d_prev_t = Vector::zeros(d);
        for (d_proj, w, mix, mixed, g_w, g_mix) in [
            (&d_r, &params.wr, &params.mix_r, &cache.mixed_r[t], &mut grads.wr, &mut grads.mix_r),
            (&d_z, &params.wz, &params.mix_z, &cache.mixed_z[t], &mut grads.wz, &mut grads.mix_z),
        ] {
            let (dx_t, dx_prev) =
                token_shift_backward(d_proj, w, mix, &cache.inputs[t], &x_prev, mixed, g_w, g_mix);
            d_x[t].add_assign(&dx_t);
            d_prev_t.add_assign(&dx_prev);
        }
        d_prev.push(d_prev_t);
    }
    d_prev.reverse();
    (d_x, d_prev)
}

/// Adjoint of [`channel_mix_forward`]: previous-slot adjoints fold back into
/// the input stream under the x_0 = 0 convention.
pub fn channel_mix_backward(
    params: &ChannelMixParams,
    cache: &ChannelMixCache,
    d_out: &[Vector],
    grads: &mut ChannelMixParams,
) -> Vec<Vector> {
    let d = params.dim();
    let inputs = cache.inputs.clone();
    let prev = move |t: usize| {
        if t == 0 {
            Vector::zeros(d)
        } else {
            inputs[t - 1].clone()
        }
    };
    let (mut d_x, d_prev) = channel_mix_backward_split(params, cache, &prev, d_out, grads);
    for t in 1..cache.out.len() {
        d_x[t - 1].add_assign(&d_prev[t]);
    }
    d_x
}
