//! Full model assembly: embedding, pre-norm residual blocks, output head.
//!
//! Both variants share the block skeleton
//!
//! ```text
//! x  -> norm -> time mix    -> (+x)  = o
//! o  -> norm -> channel mix -> (+o)  = x'
//! ```
//!
//! The recurrent variant applies it to the raw token stream. The medium
//! variant first pools and recalibrates mediums from the block's input,
//! splices them into the stream the time mixer scans, drops the medium
//! slots' outputs after the first residual, and feeds each position's
//! mapped medium to the channel mixer as its token-shift "previous" slot.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::medium::{
    build_medium_bank, deinterleave_mediums, deinterleave_tokens, excited_channel_mix_cached,
    interleave, schedule_mediums, ExcitedChannelMixParams, InsertionPlan, MediumBank, MediumConfig,
    MediumError, MediumParams,
};
use crate::numerics::{Matrix, Rng, Vector};
use crate::rwkv::{
    channel_mix_forward_cached, time_mix_forward_cached, ChannelMixCache, ChannelMixParams,
    TimeMixCache, TimeMixParams, TokenStream,
};

/// Variance floor inside layer normalization.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Plain recurrent blocks over the token stream.
    Rwkv,
    /// Medium-augmented blocks.
    Rrwkv,
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rwkv" => Ok(Variant::Rwkv),
            "rrwkv" => Ok(Variant::Rrwkv),
            other => Err(format!("unknown variant {other:?} (expected rwkv or rrwkv)")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Rwkv => "rwkv",
            Variant::Rrwkv => "rrwkv",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub vocab: usize,
    pub variant: Variant,
    /// Medium settings; ignored when `variant` is [`Variant::Rwkv`].
    pub medium: MediumConfig,
}

impl ModelConfig {
    pub fn new(
        dim: usize,
        layers: usize,
        vocab: usize,
        variant: Variant,
        medium: MediumConfig,
    ) -> Self {
        assert!(dim >= 1 && layers >= 1 && vocab >= 2, "degenerate model shape");
        ModelConfig { dim, layers, vocab, variant, medium }
    }
}

/// Layer normalization with learned gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vector,
    pub bias: Vector,
}

/// Per-position intermediates of one normalization, kept for the backward
/// pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub xhat: Vector,
    pub inv_std: f64,
}

impl LayerNorm {
    pub fn unit(dim: usize) -> Self {
        LayerNorm { gain: Vector::new(vec![1.0; dim]), bias: Vector::zeros(dim) }
    }

    pub fn zeros_like(&self) -> Self {
        LayerNorm { gain: Vector::zeros(self.gain.len()), bias: Vector::zeros(self.bias.len()) }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }

    pub fn forward_cached(&self, x: &Vector) -> (Vector, NormCache) {
        let d = self.dim();
        assert_eq!(x.len(), d, "norm width mismatch");
        let mean = x.sum() / d as f64;
        let centered = x.map(|v| v - mean);
        let var = centered.dot(&centered) / d as f64;
        let inv_std = 1.0 / (var + NORM_EPS).sqrt();
        let xhat = centered.scale(inv_std);
        let y = xhat.hadamard(&self.gain).add(&self.bias);
        (y, NormCache { xhat, inv_std })
    }

    pub fn forward(&self, x: &Vector) -> Vector {
        self.forward_cached(x).0
    }
}

/// Adjoint of [`LayerNorm::forward_cached`]. Accumulates gain and bias
/// gradients into `grads` and returns the input adjoint.
pub fn layer_norm_backward(
    norm: &LayerNorm,
    cache: &NormCache,
    d_y: &Vector,
    grads: &mut LayerNorm,
) -> Vector {
    let d = norm.dim() as f64;
    grads.bias.add_assign(d_y);
    grads.gain.add_assign(&d_y.hadamard(&cache.xhat));
    let d_xhat = d_y.hadamard(&norm.gain);
    let mean_dxhat = d_xhat.sum() / d;
    let mean_proj = d_xhat.dot(&cache.xhat) / d;
    Vector::from_fn(norm.dim(), |i| {
        cache.inv_std * (d_xhat[i] - mean_dxhat - cache.xhat[i] * mean_proj)
    })
}

/// The second half of a block: a plain channel mixer, or the medium-excited
/// one bundled with its recalibration network.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelBlock {
    Plain(ChannelMixParams),
    Excited { cm: ExcitedChannelMixParams, net: MediumParams },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub norm_tm: LayerNorm,
    pub time_mix: TimeMixParams,
    pub norm_cm: LayerNorm,
    pub channel: ChannelBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    /// `vocab x dim`; row `id` is token `id`'s embedding.
    pub embed: Matrix,
    pub layers: Vec<LayerParams>,
    pub norm_out: LayerNorm,
    /// `vocab x dim`; logits are `head . x`.
    pub head: Matrix,
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("token id {id} at position {position} is outside the vocabulary of {vocab}")]
    VocabOutOfRange { position: usize, id: usize, vocab: usize },
    #[error(transparent)]
    Medium(#[from] MediumError),
}

/// Everything one layer's backward pass needs.
#[derive(Debug, Clone)]
pub struct LayerTape {
    /// Mediums pooled from this layer's input; `None` for plain blocks.
    pub bank: Option<MediumBank>,
    pub norm_tm: Vec<NormCache>,
    pub tm: TimeMixCache,
    /// Token-level stream after the time-mix residual.
    pub resid_mid: Vec<Vector>,
    pub norm_cm: Vec<NormCache>,
    pub cm: ChannelMixCache,
}

/// Forward record for the whole model.
#[derive(Debug, Clone)]
pub struct GradTape {
    pub ids: Vec<usize>,
    pub layers: Vec<LayerTape>,
    pub norm_out: Vec<NormCache>,
    /// Final normalized stream, the head's input.
    pub final_normed: Vec<Vector>,
    pub logits: Vec<Vector>,
}

impl Model {
    /// Draw fresh parameters. Matrices are Gaussian with scale `1/sqrt(fan)`,
    /// shift mixes uniform in a comfortable interior range, norms unit.
    pub fn init(cfg: ModelConfig, rng: &mut Rng) -> Model {
        let d = cfg.dim;
        let scale = 1.0 / (d as f64).sqrt();
        let embed = rng.normal_matrix(cfg.vocab, d, 0.5);
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            let time_mix = TimeMixParams::new(
                rng.uniform_vector(d, 0.2, 0.8),
                rng.uniform_vector(d, 0.2, 0.8),
                rng.uniform_vector(d, 0.2, 0.8),
                rng.normal_matrix(d, d, scale),
                rng.normal_matrix(d, d, scale),
                rng.normal_matrix(d, d, scale),
                rng.normal_matrix(d, d, scale),
            );
            let cm = ChannelMixParams::new(
                rng.uniform_vector(d, 0.2, 0.8),
                rng.uniform_vector(d, 0.2, 0.8),
                rng.normal_matrix(d, d, scale),
                rng.normal_matrix(d, d, scale),
                rng.normal_matrix(d, d, scale),
            );
            let channel = match cfg.variant {
                Variant::Rwkv => ChannelBlock::Plain(cm),
                Variant::Rrwkv => {
                    let width = cfg.medium.squeeze_width;
                    let cap = cfg.medium.max_mediums;
                    let net = MediumParams::new(
                        rng.normal_matrix(width, cap, 1.0 / (cap as f64).sqrt()),
                        rng.normal_matrix(1, width, 1.0 / (width as f64).sqrt()),
                    );
                    ChannelBlock::Excited { cm, net }
                }
            };
            layers.push(LayerParams {
                norm_tm: LayerNorm::unit(d),
                time_mix,
                norm_cm: LayerNorm::unit(d),
                channel,
            });
        }
        let head = rng.normal_matrix(cfg.vocab, d, scale);
        Model { cfg, embed, layers, norm_out: LayerNorm::unit(d), head }
    }

    /// A model of the same shape with every parameter zero; used as a
    /// gradient accumulator and optimizer state.
    pub fn zeros_like(&self) -> Model {
        Model {
            cfg: self.cfg.clone(),
            embed: Matrix::zeros(self.embed.rows(), self.embed.cols()),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    norm_tm: l.norm_tm.zeros_like(),
                    time_mix: l.time_mix.zeros_like(),
                    norm_cm: l.norm_cm.zeros_like(),
                    channel: match &l.channel {
                        ChannelBlock::Plain(cm) => ChannelBlock::Plain(cm.zeros_like()),
                        ChannelBlock::Excited { cm, net } => {
                            ChannelBlock::Excited { cm: cm.zeros_like(), net: net.zeros_like() }
                        }
                    },
                })
                .collect(),
            norm_out: self.norm_out.zeros_like(),
            head: Matrix::zeros(self.head.rows(), self.head.cols()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Every learnable tensor with a stable dotted name, in a fixed order.
    /// The order is shared by [`Model::named_tensors_mut`] and by models
    /// returned from [`Model::zeros_like`], so gradient and optimizer
    /// tensors can be zipped positionally.
    pub fn named_tensors(&self) -> Vec<(String, TensorView<'_>)> {
        let mut out: Vec<(String, TensorView<'_>)> = Vec::new();
        out.push(("embed".into(), TensorView::Matrix(&self.embed)));
        for (i, l) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            out.push((p("norm_tm.gain"), TensorView::Vector(&l.norm_tm.gain)));
            out.push((p("norm_tm.bias"), TensorView::Vector(&l.norm_tm.bias)));
            out.push((p("time_mix.mix_q"), TensorView::Vector(&l.time_mix.mix_q)));
            out.push((p("time_mix.mix_k"), TensorView::Vector(&l.time_mix.mix_k)));
            out.push((p("time_mix.mix_v"), TensorView::Vector(&l.time_mix.mix_v)));
            out.push((p("time_mix.wq"), TensorView::Matrix(&l.time_mix.wq)));
            out.push((p("time_mix.wk"), TensorView::Matrix(&l.time_mix.wk)));
            out.push((p("time_mix.wv"), TensorView::Matrix(&l.time_mix.wv)));
            out.push((p("time_mix.wo"), TensorView::Matrix(&l.time_mix.wo)));
            out.push((p("norm_cm.gain"), TensorView::Vector(&l.norm_cm.gain)));
            out.push((p("norm_cm.bias"), TensorView::Vector(&l.norm_cm.bias)));
            let (cm, net) = match &l.channel {
                ChannelBlock::Plain(cm) => (cm, None),
                ChannelBlock::Excited { cm, net } => (cm, Some(net)),
            };
            out.push((p("channel_mix.mix_r"), TensorView::Vector(&cm.mix_r)));
            out.push((p("channel_mix.mix_z"), TensorView::Vector(&cm.mix_z)));
            out.push((p("channel_mix.wr"), TensorView::Matrix(&cm.wr)));
            out.push((p("channel_mix.wz"), TensorView::Matrix(&cm.wz)));
            out.push((p("channel_mix.wp"), TensorView::Matrix(&cm.wp)));
            if let Some(net) = net {
                out.push((p("medium.w_hidden"), TensorView::Matrix(&net.w_hidden)));
                out.push((p("medium.w_out"), TensorView::Matrix(&net.w_out)));
            }
        }
        out.push(("norm_out.gain".into(), TensorView::Vector(&self.norm_out.gain)));
        out.push(("norm_out.bias".into(), TensorView::Vector(&self.norm_out.bias)));
        out.push(("head".into(), TensorView::Matrix(&self.head)));
        out
    }

    /// Mutable version of [`Model::named_tensors`], same names, same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, TensorViewMut<'_>)> {
        let mut out: Vec<(String, TensorViewMut<'_>)> = Vec::new();
        out.push(("embed".into(), TensorViewMut::Matrix(&mut self.embed)));
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            out.push((p("norm_tm.gain"), TensorViewMut::Vector(&mut l.norm_tm.gain)));
            out.push((p("norm_tm.bias"), TensorViewMut::Vector(&mut l.norm_tm.bias)));
            out.push((p("time_mix.mix_q"), TensorViewMut::Vector(&mut l.time_mix.mix_q)));
            out.push((p("time_mix.mix_k"), TensorViewMut::Vector(&mut l.time_mix.mix_k)));
            out.push((p("time_mix.mix_v"), TensorViewMut::Vector(&mut l.time_mix.mix_v)));
            out.push((p("time_mix.wq"), TensorViewMut::Matrix(&mut l.time_mix.wq)));
            out.push((p("time_mix.wk"), TensorViewMut::Matrix(&mut l.time_mix.wk)));
            out.push((p("time_mix.wv"), TensorViewMut::Matrix(&mut l.time_mix.wv)));
            out.push((p("time_mix.wo"), TensorViewMut::Matrix(&mut l.time_mix.wo)));
            out.push((p("norm_cm.gain"), TensorViewMut::Vector(&mut l.norm_cm.gain)));
            out.push((p("norm_cm.bias"), TensorViewMut::Vector(&mut l.norm_cm.bias)));
            let (cm, net) = match &mut l.channel {
                ChannelBlock::Plain(cm) => (cm, None),
                ChannelBlock::Excited { cm, net } => (cm, Some(net)),
            };
            out.push((p("channel_mix.mix_r"), TensorViewMut::Vector(&mut cm.mix_r)));
            out.push((p("channel_mix.mix_z"), TensorViewMut::Vector(&mut cm.mix_z)));
            out.push((p("channel_mix.wr"), TensorViewMut::Matrix(&mut cm.wr)));
            out.push((p("channel_mix.wz"), TensorViewMut::Matrix(&mut cm.wz)));
            out.push((p("channel_mix.wp"), TensorViewMut::Matrix(&mut cm.wp)));
            if let Some(net) = net {
                out.push((p("medium.w_hidden"), TensorViewMut::Matrix(&mut net.w_hidden)));
                out.push((p("medium.w_out"), TensorViewMut::Matrix(&mut net.w_out)));
            }
        }
        out.push(("norm_out.gain".into(), TensorViewMut::Vector(&mut self.norm_out.gain)));
        out.push(("norm_out.bias".into(), TensorViewMut::Vector(&mut self.norm_out.bias)));
        out.push(("head".into(), TensorViewMut::Matrix(&mut self.head)));
        out
    }

    /// Next-step logits for each position of `ids`.
    pub fn forward(&self, ids: &[usize]) -> Result<Vec<Vector>, ModelError> {
        Ok(self.forward_taped(ids)?.0)
    }

    /// Forward pass that also records every intermediate the backward pass
    /// consumes.
    pub fn forward_taped(&self, ids: &[usize]) -> Result<(Vec<Vector>, GradTape), ModelError> {
        assert!(!ids.is_empty(), "cannot run the model on an empty sequence");
        let mut xs: Vec<Vector> = Vec::with_capacity(ids.len());
        for (position, &id) in ids.iter().enumerate() {
            if id >= self.cfg.vocab {
                return Err(ModelError::VocabOutOfRange { position, id, vocab: self.cfg.vocab });
            }
            xs.push(Vector::new(self.embed.row(id).to_vec()));
        }
        let mut layer_tapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, tape) = layer_forward_taped(&xs, layer, &self.cfg)?;
            xs = next;
            layer_tapes.push(tape);
        }
        let mut norm_out = Vec::with_capacity(xs.len());
        let mut final_normed = Vec::with_capacity(xs.len());
        let mut logits = Vec::with_capacity(xs.len());
        for x in &xs {
            let (y, cache) = self.norm_out.forward_cached(x);
            logits.push(self.head.matvec(&y));
            final_normed.push(y);
            norm_out.push(cache);
        }
        let tape = GradTape {
            ids: ids.to_vec(),
            layers: layer_tapes,
            norm_out,
            final_normed,
            logits: logits.clone(),
        };
        Ok((logits, tape))
    }
}

/// One block applied to a token-level stream. Returns the block's output
/// stream (same length as the input).
pub fn layer_forward(
    xs: &[Vector],
    layer: &LayerParams,
    cfg: &ModelConfig,
) -> Result<Vec<Vector>, ModelError> {
    Ok(layer_forward_taped(xs, layer, cfg)?.0)
}

pub(crate) fn layer_forward_taped(
    xs: &[Vector],
    layer: &LayerParams,
    cfg: &ModelConfig,
) -> Result<(Vec<Vector>, LayerTape), ModelError> {
    match &layer.channel {
        ChannelBlock::Plain(cm_params) => {
            let stream = TokenStream::new(xs.to_vec());
            let mut norm_tm = Vec::with_capacity(xs.len());
            let mut normed = Vec::with_capacity(xs.len());
            for x in xs {
                let (y, c) = layer.norm_tm.forward_cached(x);
                normed.push(y);
                norm_tm.push(c);
            }
            let tm = time_mix_forward_cached(&TokenStream::new(normed), &layer.time_mix);
            let resid_mid: Vec<Vector> = xs.iter().zip(&tm.out).map(|(x, u)| x.add(u)).collect();
            let mut norm_cm = Vec::with_capacity(xs.len());
            let mut normed2 = Vec::with_capacity(xs.len());
            for o in &resid_mid {
                let (y, c) = layer.norm_cm.forward_cached(o);
                normed2.push(y);
                norm_cm.push(c);
            }
            let cm = channel_mix_forward_cached(&TokenStream::new(normed2), cm_params);
            let out: Vec<Vector> = resid_mid.iter().zip(&cm.out).map(|(o, v)| o.add(v)).collect();
            drop(stream);
            Ok((out, LayerTape { bank: None, norm_tm, tm, resid_mid, norm_cm, cm }))
        }
        ChannelBlock::Excited { cm: cm_params, net } => {
            let plan = schedule_mediums(xs.len(), cfg.medium.interval);
            let bank = build_medium_bank(xs, &plan, net, cfg.medium.mode, cfg.medium.pooling)?;
            let stream = interleave(xs, &bank.finished, &plan);
            let mut norm_tm = Vec::with_capacity(stream.len());
            let mut normed = Vec::with_capacity(stream.len());
            for x in &stream {
                let (y, c) = layer.norm_tm.forward_cached(x);
                normed.push(y);
                norm_tm.push(c);
            }
            let tm = time_mix_forward_cached(&TokenStream::new(normed), &layer.time_mix);
            // Residual over token slots only; medium slots' mixer outputs
            // are dropped when the mediums leave the stream.
            let resid_mid: Vec<Vector> =
                (0..xs.len()).map(|j| xs[j].add(&tm.out[plan.token_slot(j)])).collect();
            let mut norm_cm = Vec::with_capacity(xs.len());
            let mut normed2 = Vec::with_capacity(xs.len());
            for o in &resid_mid {
                let (y, c) = layer.norm_cm.forward_cached(o);
                normed2.push(y);
                norm_cm.push(c);
            }
            let cm = excited_channel_mix_cached(
                &TokenStream::new(normed2),
                &bank.finished,
                &plan,
                cfg.medium.mapping,
                cm_params,
            );
            let out: Vec<Vector> = resid_mid.iter().zip(&cm.out).map(|(o, v)| o.add(v)).collect();
            Ok((out, LayerTape { bank: Some(bank), norm_tm, tm, resid_mid, norm_cm, cm }))
        }
    }
}

/// Shape of a named tensor, as written to and read from checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorShape {
    Vector(usize),
    Matrix(usize, usize),
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorShape::Vector(n) => write!(f, "vector {n}"),
            TensorShape::Matrix(r, c) => write!(f, "matrix {r} {c}"),
        }
    }
}

/// Borrowed view of one named tensor.
pub enum TensorView<'a> {
    Vector(&'a Vector),
    Matrix(&'a Matrix),
}

impl<'a> TensorView<'a> {
    pub fn values(&self) -> &[f64] {
        match self {
            TensorView::Vector(v) => v.as_slice(),
            TensorView::Matrix(m) => m.as_slice(),
        }
    }

    pub fn len(&self) -> usize {
        self.values().len()
    }

    pub fn is_empty(&self) -> bool {
        self.values().is_empty()
    }

    pub fn shape(&self) -> TensorShape {
        match self {
            TensorView::Vector(v) => TensorShape::Vector(v.len()),
            TensorView::Matrix(m) => TensorShape::Matrix(m.rows(), m.cols()),
        }
    }
}

/// Mutable view of one named tensor.
pub enum TensorViewMut<'a> {
    Vector(&'a mut Vector),
    Matrix(&'a mut Matrix),
}

impl<'a> TensorViewMut<'a> {
    pub fn values_mut(&mut self) -> &mut [f64] {
        match self {
            TensorViewMut::Vector(v) => v.as_mut_slice(),
            TensorViewMut::Matrix(m) => m.as_mut_slice(),
        }
    }

    pub fn shape(&self) -> TensorShape {
        match self {
            TensorViewMut::Vector(v) => TensorShape::Vector(v.len()),
            TensorViewMut::Matrix(m) => TensorShape::Matrix(m.rows(), m.cols()),
        }
    }
}

/// Recover the plan a layer used for a given input length, for callers that
/// need slot positions outside the forward pass (the backward pass, path
/// analysis, tests).
pub fn plan_for(cfg: &ModelConfig, tokens: usize) -> Option<InsertionPlan> {
    match cfg.variant {
        Variant::Rwkv => None,
        Variant::Rrwkv => Some(schedule_mediums(tokens, cfg.medium.interval)),
    }
}

/// Convenience: split an interleaved stream back into (tokens, mediums).
pub fn split_stream(stream: &[Vector], plan: &InsertionPlan) -> (Vec<Vector>, Vec<Vector>) {
    (deinterleave_tokens(stream, plan), deinterleave_mediums(stream, plan))
}
