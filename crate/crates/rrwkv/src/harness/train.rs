//! Training loop: RMSProp over the hand-derived gradients, batch averaging,
//! periodic held-out evaluation, early stopping on accuracy, and divergence
//! detection. Everything is sequential and seed-deterministic: the same
//! model, task, and config produce bit-identical logs.

use thiserror::Error;

use crate::grad::{backward, masked_accuracy, masked_cross_entropy};
use crate::model::{Model, ModelError};
use crate::numerics::Rng;

use super::task::{generate_batch, Sample, TaskSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Evaluate (and log a row) every this many steps; step 0 and the last
    /// step always evaluate.
    pub eval_interval: usize,
    /// Held-out sequences used for every evaluation.
    pub eval_samples: usize,
    pub seed: u64,
    /// Reuse the first batch for every step. An overfitting probe: any
    /// correct gradient should drive its loss toward zero.
    pub fixed_batch: bool,
    /// Stop as soon as held-out masked accuracy reaches this level.
    pub stop_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 16,
            learning_rate: 3e-3,
            eval_interval: 50,
            eval_samples: 64,
            seed: 0,
            fixed_batch: false,
            stop_accuracy: Some(0.9),
        }
    }
}

/// One evaluation row, as written to the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRow {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<TrainRow>,
    /// Optimizer steps actually taken (may stop early).
    pub steps_run: usize,
    pub final_loss: f64,
    pub final_accuracy: f64,
}

impl TrainOutcome {
    /// CSV with header `step,loss,accuracy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,accuracy\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.17e},{:.6}\n", r.step, r.loss, r.accuracy));
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss diverged to {loss} at step {step}")]
    Diverged { step: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

const RMS_DECAY: f64 = 0.99;
const RMS_EPS: f64 = 1e-8;

/// Mean loss and masked accuracy of `model` over `samples`.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<(f64, f64), ModelError> {
    assert!(!samples.is_empty(), "cannot evaluate on zero samples");
    let mut loss = 0.0;
    let mut acc = 0.0;
    for s in samples {
        let logits = model.forward(&s.inputs)?;
        let (l, _) = masked_cross_entropy(&logits, &s.targets, &s.mask);
        loss += l;
        acc += masked_accuracy(&logits, &s.targets, &s.mask);
    }
    let n = samples.len() as f64;
    Ok((loss / n, acc / n))
}

/// Train `model` in place. Data comes from two independent substreams of
/// `cfg.seed`: one for training batches, one for the held-out evaluation
/// set, so evaluation sequences never appear in training.
pub fn train(
    model: &mut Model,
    task: &TaskSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    assert!(cfg.steps >= 1 && cfg.batch_size >= 1 && cfg.eval_interval >= 1);
    let base = Rng::new(cfg.seed);
    let mut train_rng = base.substream(1);
    let mut eval_rng = base.substream(2);
    let eval_set = generate_batch(task, &mut eval_rng, cfg.eval_samples);

    // Squared-gradient running average, one slot per parameter.
    let mut cache = model.zeros_like();
    let fixed = if cfg.fixed_batch {
        Some(generate_batch(task, &mut train_rng, cfg.batch_size))
    } else {
        None
    };

    let mut rows = Vec::new();
    let mut steps_run = 0;
    let record =
        |model: &Model, step: usize, rows: &mut Vec<TrainRow>| -> Result<(f64, f64), TrainError> {
            let (loss, accuracy) = evaluate(model, &eval_set)?;
            rows.push(TrainRow { step, loss, accuracy });
            Ok((loss, accuracy))
        };

    let mut last = record(model, 0, &mut rows)?;
    if let Some(stop) = cfg.stop_accuracy {
        if last.1 >= stop {
            return Ok(TrainOutcome {
                rows,
                steps_run: 0,
                final_loss: last.0,
                final_accuracy: last.1,
            });
        }
    }

    for step in 1..=cfg.steps {
        let batch = match &fixed {
            Some(b) => b.clone(),
            None => generate_batch(task, &mut train_rng, cfg.batch_size),
        };
        let mut grads = model.zeros_like();
        let mut batch_loss = 0.0;
        let inv = 1.0 / batch.len() as f64;
        for sample in &batch {
            let (logits, tape) = model.forward_taped(&sample.inputs)?;
            let (loss, d_logits) = masked_cross_entropy(&logits, &sample.targets, &sample.mask);
            batch_loss += loss * inv;
            let scaled: Vec<_> = d_logits.iter().map(|d| d.scale(inv)).collect();
            let (g, _) = backward(model, &tape, &scaled);
            accumulate(&mut grads, &g);
        }
        if !batch_loss.is_finite() {
            return Err(TrainError::Diverged { step, loss: batch_loss });
        }
        apply_rmsprop(model, &grads, &mut cache, cfg.learning_rate);
        steps_run = step;

        if step % cfg.eval_interval == 0 || step == cfg.steps {
            last = record(model, step, &mut rows)?;
            if !last.0.is_finite() {
                return Err(TrainError::Diverged { step, loss: last.0 });
            }
            if let Some(stop) = cfg.stop_accuracy {
                if last.1 >= stop {
                    break;
                }
            }
        }
    }

    Ok(TrainOutcome { rows, steps_run, final_loss: last.0, final_accuracy: last.1 })
}

fn accumulate(into: &mut Model, from: &Model) {
    let src = from.named_tensors();
    for ((_, mut dst), (_, s)) in into.named_tensors_mut().into_iter().zip(src) {
        let sv = s.values();
        for (d, v) in dst.values_mut().iter_mut().zip(sv) {
            *d += v;
        }
    }
}

/// RMSProp update with the shift-mix constraint: mix vectors interpolate
/// between the current and previous position, so they are projected back
/// into [0, 1] after each step.
fn apply_rmsprop(model: &mut Model, grads: &Model, cache: &mut Model, lr: f64) {
    let gs = grads.named_tensors();
    let mut cs = cache.named_tensors_mut();
    for (((name, mut p), (_, g)), (_, c)) in
        model.named_tensors_mut().into_iter().zip(gs).zip(cs.iter_mut())
    {
        let clamp = name.contains(".mix_");
        let pv = p.values_mut();
        let gv = g.values();
        let cv = c.values_mut();
        for i in 0..pv.len() {
            cv[i] = RMS_DECAY * cv[i] + (1.0 - RMS_DECAY) * gv[i] * gv[i];
            pv[i] -= lr * gv[i] / (cv[i].sqrt() + RMS_EPS);
            if clamp {
                pv[i] = pv[i].clamp(0.0, 1.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::task::TaskKind;
    use crate::medium::{Mapping, MediumConfig, MediumMode, Pooling};
    use crate::model::{ModelConfig, Variant};

    fn tiny_model(seed: u64) -> Model {
        let cfg = ModelConfig::new(
            8,
            1,
            8,
            Variant::Rrwkv,
            MediumConfig::new(4, 4, 8, Mapping::Causal, MediumMode::GateLiteral, Pooling::Mean),
        );
        Model::init(cfg, &mut Rng::new(seed))
    }

    fn tiny_task() -> TaskSpec {
        TaskSpec::new(TaskKind::Recall, 12, 4, 8)
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut model = tiny_model(1);
        let before = model.clone();
        let cfg = TrainConfig {
            steps: 3,
            batch_size: 2,
            learning_rate: 0.0,
            eval_interval: 1,
            eval_samples: 4,
            seed: 5,
            fixed_batch: false,
            stop_accuracy: None,
        };
        let out = train(&mut model, &tiny_task(), &cfg).unwrap();
        assert_eq!(model, before);
        // Every evaluation sees the same parameters, so identical rows.
        assert!(out.rows.windows(2).all(|w| w[0].loss == w[1].loss));
    }

    #[test]
    fn training_is_deterministic() {
        let task = tiny_task();
        let cfg = TrainConfig {
            steps: 12,
            batch_size: 4,
            learning_rate: 1e-3,
            eval_interval: 4,
            eval_samples: 8,
            seed: 3,
            fixed_batch: false,
            stop_accuracy: None,
        };
        let mut m1 = tiny_model(2);
        let mut m2 = tiny_model(2);
        let o1 = train(&mut m1, &task, &cfg).unwrap();
        let o2 = train(&mut m2, &task, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(o1.to_csv(), o2.to_csv());
    }

    #[test]
    fn one_fixed_batch_is_overfit() {
        // The bluntest end-to-end gradient test there is: if the same few
        // sequences cannot be memorized, something upstream is wrong.
        let mut model = tiny_model(7);
        let cfg = TrainConfig {
            steps: 400,
            batch_size: 4,
            learning_rate: 3e-3,
            eval_interval: 25,
            eval_samples: 4,
            seed: 11,
            fixed_batch: true,
            stop_accuracy: None,
        };
        let task = tiny_task();
        let first_loss = {
            let base = Rng::new(cfg.seed);
            let mut r = base.substream(1);
            let batch = generate_batch(&task, &mut r, cfg.batch_size);
            evaluate(&model, &batch).unwrap().0
        };
        train(&mut model, &task, &cfg).unwrap();
        let final_loss = {
            let base = Rng::new(cfg.seed);
            let mut r = base.substream(1);
            let batch = generate_batch(&task, &mut r, cfg.batch_size);
            evaluate(&model, &batch).unwrap().0
        };
        assert!(
            final_loss < first_loss * 0.2,
            "training batch loss barely moved: {first_loss} -> {final_loss}"
        );
    }

    #[test]
    fn early_stop_halts_at_threshold() {
        let mut model = tiny_model(4);
        let cfg = TrainConfig {
            steps: 2000,
            batch_size: 8,
            learning_rate: 3e-3,
            eval_interval: 20,
            eval_samples: 16,
            seed: 13,
            fixed_batch: false,
            stop_accuracy: Some(0.95),
        };
        let out = train(&mut model, &tiny_task(), &cfg).unwrap();
        if out.final_accuracy >= 0.95 {
            assert!(out.steps_run <= 2000);
            let last = out.rows.last().unwrap();
            assert!(last.accuracy >= 0.95);
        }
    }

    #[test]
    fn mix_vectors_stay_in_unit_interval() {
        let mut model = tiny_model(9);
        let cfg = TrainConfig {
            steps: 60,
            batch_size: 4,
            learning_rate: 0.05, // deliberately violent
            eval_interval: 30,
            eval_samples: 4,
            seed: 17,
            fixed_batch: false,
            stop_accuracy: None,
        };
        let _ = train(&mut model, &tiny_task(), &cfg);
        for (name, t) in model.named_tensors() {
            if name.contains(".mix_") {
                for &v in t.values() {
                    assert!((0.0..=1.0).contains(&v), "{name} escaped to {v}");
                }
            }
        }
    }
}
