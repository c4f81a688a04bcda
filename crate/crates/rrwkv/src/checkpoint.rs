//! Text checkpoints: the model config plus every parameter in decimal.
//!
//! The format is line oriented and diffable. Values are written with 17
//! significant digits, enough to identify any f64 uniquely, so a
//! save/load round trip reproduces every parameter bit for bit:
//!
//! ```text
//! rrwkv checkpoint v1
//! model.d = 8
//! ...config echo...
//! params 14
//! param embed matrix 16 8
//! <row of 8 values> x16
//! param layers.0.norm_tm.gain vector 8
//! <8 values>
//! ...
//! end
//! ```
//!
//! Parameters load by name, so block order in the file is free; every
//! model tensor must appear exactly once. The trailing `end` marker makes
//! truncation detectable, and loading builds a fresh model that is only
//! returned on full success, so a bad file can never leave a partial one.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::medium::MediumConfig;
use crate::model::{Model, ModelConfig, TensorShape, Variant};
use crate::numerics::Rng;

const VERSION: &str = "rrwkv checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported checkpoint version {found:?} (expected {VERSION:?})")]
    Version { found: String },
    #[error("malformed checkpoint at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("parameter {name}: checkpoint has shape `{found}`, model wants `{expected}`")]
    ShapeMismatch { name: String, expected: TensorShape, found: TensorShape },
    #[error("checkpoint was saved from variant {found}, config asks for variant {expected}")]
    VariantMismatch { expected: Variant, found: Variant },
    #[error("checkpoint {field} is {found}, configured model wants {expected}")]
    ConfigMismatch { field: &'static str, expected: String, found: String },
}

fn fmt_value(x: f64) -> String {
    // 16 digits after the point in scientific notation: 17 significant
    // digits, the round-trip threshold for f64.
    format!("{x:.16e}")
}

fn render(model: &Model) -> String {
    let cfg = &model.cfg;
    let m = &cfg.medium;
    let tensors = model.named_tensors();
    let mut out = String::new();
    out.push_str(VERSION);
    out.push('\n');
    for (key, value) in [
        ("model.d", cfg.dim.to_string()),
        ("model.layers", cfg.layers.to_string()),
        ("model.vocab", cfg.vocab.to_string()),
        ("model.variant", cfg.variant.to_string()),
        ("model.medium_interval", m.interval.to_string()),
        ("model.squeeze_width", m.squeeze_width.to_string()),
        ("model.max_mediums", m.max_mediums.to_string()),
        ("model.mapping_mode", m.mapping.to_string()),
        ("model.medium_mode", m.mode.to_string()),
        ("model.pooling", m.pooling.to_string()),
    ] {
        out.push_str(&format!("{key} = {value}\n"));
    }
    out.push_str(&format!("params {}\n", tensors.len()));
    for (name, view) in &tensors {
        out.push_str(&format!("param {name} {}\n", view.shape()));
        let values = view.values();
        match view.shape() {
            TensorShape::Vector(_) => {
                out.push_str(&row(values));
                out.push('\n');
            }
            TensorShape::Matrix(_, c) => {
                for r in values.chunks(c) {
                    out.push_str(&row(r));
                    out.push('\n');
                }
            }
        }
    }
    out.push_str("end\n");
    out
}

fn row(values: &[f64]) -> String {
    values.iter().map(|&x| fmt_value(x)).collect::<Vec<_>>().join(" ")
}

/// Write `model` to `path` atomically (temp file then rename).
pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let io = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, render(model)).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

struct Lines<'a> {
    iter: std::str::Lines<'a>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, CheckpointError> {
        self.line += 1;
        self.iter.next().ok_or(CheckpointError::Malformed {
            line: self.line,
            reason: "unexpected end of file".to_string(),
        })
    }

    fn bad(&self, reason: impl Into<String>) -> CheckpointError {
        CheckpointError::Malformed { line: self.line, reason: reason.into() }
    }
}

fn parse_config(lines: &mut Lines<'_>) -> Result<(ModelConfig, usize), CheckpointError> {
    let mut fields: HashMap<&str, String> = HashMap::new();
    loop {
        let text = lines.next()?;
        if let Some(rest) = text.strip_prefix("params ") {
            let declared: usize =
                rest.trim().parse().map_err(|_| lines.bad("bad parameter count"))?;
            let get = |key: &str| {
                fields
                    .get(key)
                    .cloned()
                    .ok_or_else(|| lines.bad(format!("missing config line {key}")))
            };
            fn parse<T: std::str::FromStr>(
                lines: &Lines<'_>,
                key: &str,
                value: &str,
            ) -> Result<T, CheckpointError> {
                value.parse().map_err(|_| lines.bad(format!("bad value for {key}: {value:?}")))
            }
            let cfg = ModelConfig::new(
                parse(lines, "model.d", &get("model.d")?)?,
                parse(lines, "model.layers", &get("model.layers")?)?,
                parse(lines, "model.vocab", &get("model.vocab")?)?,
                parse(lines, "model.variant", &get("model.variant")?)?,
                MediumConfig::new(
                    parse(lines, "model.medium_interval", &get("model.medium_interval")?)?,
                    parse(lines, "model.squeeze_width", &get("model.squeeze_width")?)?,
                    parse(lines, "model.max_mediums", &get("model.max_mediums")?)?,
                    parse(lines, "model.mapping_mode", &get("model.mapping_mode")?)?,
                    parse(lines, "model.medium_mode", &get("model.medium_mode")?)?,
                    parse(lines, "model.pooling", &get("model.pooling")?)?,
                ),
            );
            return Ok((cfg, declared));
        }
        let Some((key, value)) = text.split_once('=') else {
            return Err(lines.bad(format!("expected `key = value` or `params N`, got {text:?}")));
        };
        let key = key.trim();
        let known = [
            "model.d",
            "model.layers",
            "model.vocab",
            "model.variant",
            "model.medium_interval",
            "model.squeeze_width",
            "model.max_mediums",
            "model.mapping_mode",
            "model.medium_mode",
            "model.pooling",
        ];
        let Some(&key) = known.iter().find(|&&k| k == key) else {
            return Err(lines.bad(format!("unknown config key {key:?}")));
        };
        fields.insert(key, value.trim().to_string());
    }
}

fn parse_values(lines: &mut Lines<'_>, expected: usize) -> Result<Vec<f64>, CheckpointError> {
    let text = lines.next()?;
    let mut out = Vec::with_capacity(expected);
    for tok in text.split_whitespace() {
        let v: f64 = tok.parse().map_err(|_| lines.bad(format!("bad value {tok:?}")))?;
        out.push(v);
    }
    if out.len() != expected {
        return Err(lines.bad(format!("expected {expected} values on line, found {}", out.len())));
    }
    Ok(out)
}

/// Load a model from `path`, reconstructing it from the embedded config.
pub fn load(path: impl AsRef<Path>) -> Result<Model, CheckpointError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    parse(&text)
}

fn parse(text: &str) -> Result<Model, CheckpointError> {
    let mut lines = Lines { iter: text.lines(), line: 0 };
    let version = lines.next()?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version.to_string() });
    }
    let (cfg, declared) = parse_config(&mut lines)?;
    // Initialize for shape and overwrite everything; the seed is irrelevant
    // because load fails unless every tensor is assigned.
    let mut model = Model::init(cfg, &mut Rng::new(0));
    let mut tensors = model.named_tensors_mut();
    if declared != tensors.len() {
        return Err(CheckpointError::Malformed {
            line: 0,
            reason: format!("file declares {declared} parameters, model has {}", tensors.len()),
        });
    }
    let index: HashMap<String, usize> =
        tensors.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
    let mut seen = vec![false; tensors.len()];
    for _ in 0..declared {
        let header = lines.next()?;
        let rest = header
            .strip_prefix("param ")
            .ok_or_else(|| lines.bad(format!("expected `param ...`, got {header:?}")))?;
        let mut parts = rest.split_whitespace();
        let name = parts.next().ok_or_else(|| lines.bad("missing parameter name"))?;
        let kind = parts.next().ok_or_else(|| lines.bad("missing parameter shape"))?;
        let dims: Vec<usize> = parts
            .map(|p| p.parse().map_err(|_| lines.bad(format!("bad dimension {p:?}"))))
            .collect::<Result<_, _>>()?;
        let found = match (kind, dims.as_slice()) {
            ("vector", [n]) => TensorShape::Vector(*n),
            ("matrix", [r, c]) => TensorShape::Matrix(*r, *c),
            _ => return Err(lines.bad(format!("bad shape declaration in {header:?}"))),
        };
        let &slot =
            index.get(name).ok_or_else(|| lines.bad(format!("unknown parameter {name:?}")))?;
        if seen[slot] {
            return Err(lines.bad(format!("duplicate parameter {name:?}")));
        }
        seen[slot] = true;
        let expected = tensors[slot].1.shape();
        if found != expected {
            return Err(CheckpointError::ShapeMismatch { name: name.to_string(), expected, found });
        }
        let values = match found {
            TensorShape::Vector(n) => parse_values(&mut lines, n)?,
            TensorShape::Matrix(r, c) => {
                let mut all = Vec::with_capacity(r * c);
                for _ in 0..r {
                    all.extend(parse_values(&mut lines, c)?);
                }
                all
            }
        };
        tensors[slot].1.values_mut().copy_from_slice(&values);
    }
    if lines.next()? != "end" {
        return Err(lines.bad("expected `end` marker"));
    }
    drop(tensors);
    Ok(model)
}

/// Load a model and insist it matches `expected`, field by field. The
/// variant gets its own error because mixing the two architectures is the
/// likely mistake; everything else reports the differing field.
pub fn load_compatible(
    path: impl AsRef<Path>,
    expected: &ModelConfig,
) -> Result<Model, CheckpointError> {
    let model = load(path)?;
    let found = &model.cfg;
    if found.variant != expected.variant {
        return Err(CheckpointError::VariantMismatch {
            expected: expected.variant,
            found: found.variant,
        });
    }
    let pairs: [(&'static str, String, String); 9] = [
        ("model.d", expected.dim.to_string(), found.dim.to_string()),
        ("model.layers", expected.layers.to_string(), found.layers.to_string()),
        ("model.vocab", expected.vocab.to_string(), found.vocab.to_string()),
        (
            "model.medium_interval",
            expected.medium.interval.to_string(),
            found.medium.interval.to_string(),
        ),
        (
            "model.squeeze_width",
            expected.medium.squeeze_width.to_string(),
            found.medium.squeeze_width.to_string(),
        ),
        (
            "model.max_mediums",
            expected.medium.max_mediums.to_string(),
            found.medium.max_mediums.to_string(),
        ),
        (
            "model.mapping_mode",
            expected.medium.mapping.to_string(),
            found.medium.mapping.to_string(),
        ),
        ("model.medium_mode", expected.medium.mode.to_string(), found.medium.mode.to_string()),
        ("model.pooling", expected.medium.pooling.to_string(), found.medium.pooling.to_string()),
    ];
    for (field, want, got) in pairs {
        if want != got {
            return Err(CheckpointError::ConfigMismatch { field, expected: want, found: got });
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{Mapping, MediumMode, Pooling};

    fn medium_cfg() -> MediumConfig {
        MediumConfig::new(4, 4, 64, Mapping::Causal, MediumMode::GateLiteral, Pooling::Mean)
    }

    fn tiny(variant: Variant) -> Model {
        let cfg = ModelConfig::new(6, 2, 10, variant, medium_cfg());
        Model::init(cfg, &mut Rng::new(11))
    }

    fn bits(m: &Model) -> Vec<u64> {
        m.named_tensors().iter().flat_map(|(_, t)| t.values().to_vec()).map(f64::to_bits).collect()
    }

    #[test]
    fn round_trip_is_bit_exact_for_both_variants() {
        let dir = tempfile::tempdir().unwrap();
        for variant in [Variant::Rwkv, Variant::Rrwkv] {
            let model = tiny(variant);
            let path = dir.path().join(format!("{variant}.ckpt"));
            save(&model, &path).unwrap();
            let loaded = load(&path).unwrap();
            assert_eq!(loaded.cfg, model.cfg);
            assert_eq!(bits(&loaded), bits(&model), "{variant}");
        }
    }

    #[test]
    fn round_trip_preserves_forward_outputs_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny(Variant::Rrwkv);
        let path = dir.path().join("m.ckpt");
        save(&model, &path).unwrap();
        let loaded = load(&path).unwrap();
        let ids = [3usize, 1, 4, 1, 5, 9, 2, 6, 5, 3];
        let a = model.forward(&ids).unwrap();
        let b = loaded.forward(&ids).unwrap();
        for (va, vb) in a.iter().zip(&b) {
            for (x, y) in va.as_slice().iter().zip(vb.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn awkward_constants_survive() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = tiny(Variant::Rwkv);
        let specials = [0.1 + 0.2, 1.0 / 3.0, -0.0, 5e-324, f64::MAX, 1e-300];
        {
            let mut tensors = model.named_tensors_mut();
            let values = tensors[0].1.values_mut();
            for (i, s) in specials.iter().enumerate() {
                values[i] = *s;
            }
        }
        let path = dir.path().join("m.ckpt");
        save(&model, &path).unwrap();
        let loaded = load(&path).unwrap();
        let restored = loaded.named_tensors()[0].1.values().to_vec();
        for (i, s) in specials.iter().enumerate() {
            assert_eq!(restored[i].to_bits(), s.to_bits(), "value {i}");
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny(Variant::Rrwkv);
        let path = dir.path().join("m.ckpt");
        save(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for frac in [0.25, 0.5, 0.9] {
            let cut = (text.len() as f64 * frac) as usize;
            let short = dir.path().join("short.ckpt");
            std::fs::write(&short, &text[..cut]).unwrap();
            assert!(load(&short).is_err(), "cut at {frac}");
        }
        // Dropping just the end marker must also fail.
        let no_end = text.trim_end().trim_end_matches("end").to_string();
        let p = dir.path().join("noend.ckpt");
        std::fs::write(&p, no_end).unwrap();
        assert!(load(&p).is_err());
    }

    #[test]
    fn version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny(Variant::Rwkv);
        let path = dir.path().join("m.ckpt");
        save(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let doctored = text.replace("checkpoint v1", "checkpoint v9");
        std::fs::write(&path, doctored).unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::Version { .. })));
    }

    #[test]
    fn shape_mismatch_names_the_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny(Variant::Rwkv);
        let path = dir.path().join("m.ckpt");
        save(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // Declare a shorter gain vector and trim its value row to match,
        // leaving the file self-consistent but wrong for the model.
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let at =
            lines.iter().position(|l| l.starts_with("param layers.0.norm_tm.gain vector")).unwrap();
        lines[at] = "param layers.0.norm_tm.gain vector 3".to_string();
        lines[at + 1] = lines[at + 1].split_whitespace().take(3).collect::<Vec<_>>().join(" ");
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        match load(&path) {
            Err(CheckpointError::ShapeMismatch { name, .. }) => {
                assert_eq!(name, "layers.0.norm_tm.gain")
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn variant_mismatch_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny(Variant::Rwkv);
        let path = dir.path().join("m.ckpt");
        save(&model, &path).unwrap();
        let want = ModelConfig::new(6, 2, 10, Variant::Rrwkv, medium_cfg());
        match load_compatible(&path, &want) {
            Err(CheckpointError::VariantMismatch { expected, found }) => {
                assert_eq!(expected, Variant::Rrwkv);
                assert_eq!(found, Variant::Rwkv);
            }
            other => panic!("expected variant mismatch, got {other:?}"),
        }
    }

    #[test]
    fn differing_width_is_reported_by_field() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny(Variant::Rwkv);
        let path = dir.path().join("m.ckpt");
        save(&model, &path).unwrap();
        let want = ModelConfig::new(8, 2, 10, Variant::Rwkv, medium_cfg());
        match load_compatible(&path, &want) {
            Err(CheckpointError::ConfigMismatch { field, .. }) => assert_eq!(field, "model.d"),
            other => panic!("expected config mismatch, got {other:?}"),
        }
    }

    #[test]
    fn matching_config_loads_compatibly() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny(Variant::Rrwkv);
        let path = dir.path().join("m.ckpt");
        save(&model, &path).unwrap();
        let loaded = load_compatible(&path, &model.cfg).unwrap();
        assert_eq!(bits(&loaded), bits(&model));
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny(Variant::Rwkv);
        let path = dir.path().join("m.ckpt");
        save(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap().replace("param embed ", "param imbed ");
        std::fs::write(&path, text).unwrap();
        match load(&path) {
            Err(CheckpointError::Malformed { reason, .. }) => assert!(reason.contains("imbed")),
            other => panic!("expected malformed, got {other:?}"),
        }
    }
}
