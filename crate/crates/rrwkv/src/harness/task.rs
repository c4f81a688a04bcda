//! Synthetic tasks that demand carrying information across a long gap.
//!
//! Both tasks share a tiny fixed vocabulary convention:
//! id 0 is filler, id 1 is the query marker, and ids from 2 up are payload
//! symbols. Targets are only scored where the mask is set, so the model is
//! free to predict anything on filler positions.

use std::fmt;
use std::str::FromStr;

use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Associative recall: see a key/value pair, sit through a gap of
    /// filler, then produce the value when the query marker appears.
    Recall,
    /// Copy: read a prefix of symbols, sit through a gap, then echo the
    /// prefix with teacher forcing (each echo input is the previous true
    /// symbol).
    Copy,
}

impl FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "recall" => Ok(TaskKind::Recall),
            "copy" => Ok(TaskKind::Copy),
            other => Err(format!("unknown task kind {other:?} (expected recall or copy)")),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Recall => "recall",
            TaskKind::Copy => "copy",
        })
    }
}

pub const FILLER: usize = 0;
pub const QUERY: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Sequence length fed to the model.
    pub length: usize,
    /// Filler positions between the payload and the point it must be
    /// reproduced.
    pub gap: usize,
    /// Total vocabulary, payload symbols included.
    pub vocab: usize,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, length: usize, gap: usize, vocab: usize) -> Self {
        assert!(vocab >= 4, "need filler, query, and at least two payload ids");
        let spec = TaskSpec { kind, length, gap, vocab };
        match kind {
            TaskKind::Recall => assert!(
                length >= gap + 4,
                "recall needs length >= gap + 4 (key, value, gap, query, answer)"
            ),
            TaskKind::Copy => assert!(
                length >= gap + 3,
                "copy needs room for at least one symbol, the gap, the query, and one echo"
            ),
        }
        spec
    }

    /// Payload ids for recall keys: the lower half of the payload range.
    fn key_range(&self) -> std::ops::Range<usize> {
        2..2 + (self.vocab - 2) / 2
    }

    /// Payload ids for recall values (and copy symbols): the upper half.
    fn value_range(&self) -> std::ops::Range<usize> {
        2 + (self.vocab - 2) / 2..self.vocab
    }
}

/// One sequence with its per-position targets and scoring mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
}

fn pick(rng: &mut Rng, range: std::ops::Range<usize>) -> usize {
    range.start + rng.below(range.end - range.start)
}

/// Draw one sample. The same generator state always yields the same sample.
pub fn generate(spec: &TaskSpec, rng: &mut Rng) -> Sample {
    let n = spec.length;
    let mut inputs = vec![FILLER; n];
    let mut targets = vec![FILLER; n];
    let mut mask = vec![false; n];
    match spec.kind {
        TaskKind::Recall => {
            let key = pick(rng, spec.key_range());
            let value = pick(rng, spec.value_range());
            inputs[0] = key;
            inputs[1] = value;
            // positions 2 .. 2+gap stay filler
            inputs[2 + spec.gap] = QUERY;
            // The answer slot: input is filler, output must be the value.
            targets[3 + spec.gap] = value;
            mask[3 + spec.gap] = true;
        }
        TaskKind::Copy => {
            let prefix = ((n - spec.gap) / 2).max(1);
            let symbols: Vec<usize> = (0..prefix).map(|_| pick(rng, spec.value_range())).collect();
            inputs[..prefix].copy_from_slice(&symbols);
            let echo_start = prefix + spec.gap;
            for (i, &sym) in symbols.iter().enumerate() {
                let pos = echo_start + i;
                // Teacher forcing: the first echo input is the query marker,
                // later echo inputs are the previous true symbol.
                inputs[pos] = if i == 0 { QUERY } else { symbols[i - 1] };
                targets[pos] = sym;
                mask[pos] = true;
            }
        }
    }
    Sample { inputs, targets, mask }
}

pub fn generate_batch(spec: &TaskSpec, rng: &mut Rng, count: usize) -> Vec<Sample> {
    (0..count).map(|_| generate(spec, rng)).collect()
}
