//! Experiment orchestration behind the command-line interface.
//!
//! [`run`] resolves one command against a [`RunConfig`], locks the output
//! directory, executes, and writes artifacts: every command leaves
//! `config.txt` (the resolved settings actually used) next to its CSVs, so
//! a results directory is self-describing. Given the same config and seed,
//! every artifact is byte-identical across reruns except the wall-time
//! column of the bench CSV.
//!
//! Failures split into two families with distinct process exit codes:
//! config/schema problems exit 2 and name the offending key, runtime
//! problems (divergence, unreadable checkpoint, failed gradient check)
//! exit 1 with a diagnostic line.

use std::fmt;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::checkpoint;
use crate::config::{Arch, ConfigError, RunConfig};
use crate::grad::{check_model, GradRow};
use crate::harness::bench::{
    attention_kernel, attention_madds, bench_csv_header, median_wall_ms, rrwkv_layer_kernel,
    rwkv_layer_kernel, BenchRow,
};
use crate::harness::graph::{attention_graph, chain_graph, medium_graph, path_csv_header, PathRow};
use crate::harness::task::generate_batch;
use crate::harness::train::{evaluate, train, TrainError};
use crate::model::Model;
use crate::numerics::Rng;

/// Gradient checks at or above this relative error fail the gradcheck
/// command.
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Wall-clock medians use this many repeats per cell.
const BENCH_REPEATS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Gradcheck,
    Bench,
    Pathlen,
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Command::Train),
            "eval" => Ok(Command::Eval),
            "gradcheck" => Ok(Command::Gradcheck),
            "bench" => Ok(Command::Bench),
            "pathlen" => Ok(Command::Pathlen),
            other => Err(format!("unknown command {other:?}")),
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Gradcheck => "gradcheck",
            Command::Bench => "bench",
            Command::Pathlen => "pathlen",
        })
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Schema(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl RunError {
    /// Process exit status for this failure: 2 for schema violations, 1
    /// for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Schema(_) => 2,
            RunError::Runtime(_) => 1,
        }
    }
}

fn runtime(msg: impl Into<String>) -> RunError {
    RunError::Runtime(msg.into())
}

/// What a successful run produced: files on disk plus human-readable
/// result lines for the terminal.
#[derive(Debug)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

/// Exclusive claim on an output directory for the duration of a run.
/// Existence of the lock file is the claim; dropping the guard releases it.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock, RunError> {
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(runtime(format!(
                "output directory {} is in use by another run (stale? remove {})",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(runtime(format!("cannot lock {}: {e}", dir.display()))),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    fs::write(path, contents).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

/// Execute one command. The config must already be validated (parsing does
/// that); this re-validates anyway so programmatic callers get the same
/// guarantees as the CLI.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    let dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&dir)
        .map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
    let _lock = DirLock::acquire(&dir)?;

    let mut files = Vec::new();
    let echo_path = dir.join("config.txt");
    write_file(&echo_path, &cfg.echo())?;
    files.push(echo_path);

    let mut lines = Vec::new();
    match cmd {
        Command::Train => run_train(cfg, &dir, &mut files, &mut lines)?,
        Command::Eval => run_eval(cfg, &dir, &mut files, &mut lines)?,
        Command::Gradcheck => run_gradcheck(cfg, &dir, &mut files, &mut lines)?,
        Command::Bench => run_bench(cfg, &dir, &mut files, &mut lines)?,
        Command::Pathlen => run_pathlen(cfg, &dir, &mut files, &mut lines)?,
    }
    Ok(RunSummary { files, lines })
}

fn run_train(
    cfg: &RunConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
    lines: &mut Vec<String>,
) -> Result<(), RunError> {
    let task = cfg.task_spec();
    let mut model = Model::init(cfg.model_config(), &mut Rng::new(cfg.seed));
    let outcome = train(&mut model, &task, &cfg.train_config()).map_err(|e| match e {
        TrainError::Diverged { .. } => runtime(e.to_string()),
        TrainError::Model(m) => runtime(format!("forward pass failed: {m}")),
    })?;

    let metrics = dir.join("metrics.csv");
    write_file(&metrics, &outcome.to_csv())?;
    files.push(metrics);

    let ckpt = dir.join("model.ckpt");
    checkpoint::save(&model, &ckpt).map_err(|e| runtime(e.to_string()))?;
    files.push(ckpt);

    lines.push(format!(
        "trained {} steps: loss {:.4}, masked accuracy {:.3}",
        outcome.steps_run, outcome.final_loss, outcome.final_accuracy
    ));
    Ok(())
}

fn run_eval(
    cfg: &RunConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
    lines: &mut Vec<String>,
) -> Result<(), RunError> {
    if cfg.eval_checkpoint.is_empty() {
        return Err(runtime("eval.checkpoint is not set"));
    }
    let model = checkpoint::load_compatible(&cfg.eval_checkpoint, &cfg.model_config())
        .map_err(|e| runtime(e.to_string()))?;
    // Substream 2 is the held-out stream; training evaluates on the same
    // distribution, so numbers are comparable across the two commands.
    let mut rng = Rng::new(cfg.seed).substream(2);
    let samples = generate_batch(&cfg.task_spec(), &mut rng, cfg.eval_samples);
    let (loss, accuracy) =
        evaluate(&model, &samples).map_err(|e| runtime(format!("forward pass failed: {e}")))?;

    let path = dir.join("eval.csv");
    write_file(&path, &format!("loss,accuracy\n{loss:.17e},{accuracy:.6}\n"))?;
    files.push(path);
    lines.push(format!(
        "evaluated {} sequences: loss {loss:.4}, masked accuracy {accuracy:.3}",
        cfg.eval_samples
    ));
    Ok(())
}

/// Sequence length used for gradient audits: two full medium windows plus
/// trailing tokens for the excited variant, a dozen positions otherwise.
fn gradcheck_len(cfg: &RunConfig) -> usize {
    match cfg.model_variant {
        crate::model::Variant::Rwkv => 12,
        crate::model::Variant::Rrwkv => 2 * cfg.model_medium_interval + 4,
    }
}

fn run_gradcheck(
    cfg: &RunConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
    lines: &mut Vec<String>,
) -> Result<(), RunError> {
    let t_len = gradcheck_len(cfg);
    // One audit per seed; the CSV keeps each tensor's worst coordinate
    // across every audit so the format stays one line per parameter.
    let mut worst: Vec<GradRow> = Vec::new();
    let (mut checked, mut skipped) = (0usize, 0usize);
    for s in 0..cfg.gradcheck_seeds as u64 {
        let model = Model::init(cfg.model_config(), &mut Rng::new(cfg.seed ^ s));
        let report = check_model(model, cfg.seed ^ s, t_len);
        checked += report.checked;
        skipped += report.skipped;
        for row in report.rows {
            match worst.iter_mut().find(|w| w.parameter == row.parameter) {
                Some(w) if w.rel_error >= row.rel_error => {}
                Some(w) => *w = row,
                None => worst.push(row),
            }
        }
    }
    let mut csv = String::from("parameter,analytic,numeric,rel_error\n");
    for r in &worst {
        csv.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e}\n",
            r.parameter, r.analytic, r.numeric, r.rel_error
        ));
    }
    let path = dir.join("gradreport.csv");
    write_file(&path, &csv)?;
    files.push(path);

    let max = worst.iter().map(|r| r.rel_error).fold(0.0f64, f64::max);
    lines.push(format!(
        "checked {checked} coordinates over {} seeds ({skipped} skipped at kinks), worst relative error {max:.3e}",
        cfg.gradcheck_seeds
    ));
    if max >= GRADCHECK_TOL {
        let bad = worst.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).unwrap();
        return Err(runtime(format!(
            "gradient check failed: {} has relative error {:.3e} (tolerance {GRADCHECK_TOL:.0e})",
            bad.parameter, bad.rel_error
        )));
    }
    Ok(())
}

fn run_bench(
    cfg: &RunConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
    lines: &mut Vec<String>,
) -> Result<(), RunError> {
    let d = cfg.bench_d;
    let width = cfg.model_squeeze_width;
    let mut rows: Vec<BenchRow> = Vec::new();
    for &arch in &cfg.bench_archs {
        for &n in &cfg.bench_n_grid {
            match arch {
                Arch::Attention => {
                    let (madds, _) = attention_kernel(n, d, cfg.seed);
                    debug_assert_eq!(madds, attention_madds(n, d));
                    let wall_ms = median_wall_ms(
                        || {
                            attention_kernel(n, d, cfg.seed);
                        },
                        BENCH_REPEATS,
                    );
                    rows.push(BenchRow { arch: arch.to_string(), n, d, s: 0, madds, wall_ms });
                }
                Arch::Rwkv => {
                    let (madds, _) = rwkv_layer_kernel(n, d, cfg.seed);
                    let wall_ms = median_wall_ms(
                        || {
                            rwkv_layer_kernel(n, d, cfg.seed);
                        },
                        BENCH_REPEATS,
                    );
                    rows.push(BenchRow { arch: arch.to_string(), n, d, s: 0, madds, wall_ms });
                }
                Arch::Rrwkv => {
                    for &s in &cfg.bench_s_grid {
                        let (madds, _) = rrwkv_layer_kernel(n, d, s, width, cfg.seed);
                        let wall_ms = median_wall_ms(
                            || {
                                rrwkv_layer_kernel(n, d, s, width, cfg.seed);
                            },
                            BENCH_REPEATS,
                        );
                        rows.push(BenchRow { arch: arch.to_string(), n, d, s, madds, wall_ms });
                    }
                }
            }
        }
    }
    let mut csv = String::from(bench_csv_header());
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.to_csv_line());
        csv.push('\n');
    }
    let path = dir.join("bench.csv");
    write_file(&path, &csv)?;
    files.push(path);
    lines.push(format!("benchmarked {} cells at d={d}", rows.len()));
    Ok(())
}

fn run_pathlen(
    cfg: &RunConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
    lines: &mut Vec<String>,
) -> Result<(), RunError> {
    let mut rows: Vec<PathRow> = Vec::new();
    for &arch in &cfg.pathlen_archs {
        for &n in &cfg.pathlen_n_grid {
            match arch {
                // The recurrent architectures move information one position
                // per step: a chain.
                Arch::Rwkv => rows.push(path_row(arch, n, 0, chain_graph(n))?),
                Arch::Attention => rows.push(path_row(arch, n, 0, attention_graph(n))?),
                Arch::Rrwkv => {
                    for &s in &cfg.pathlen_s_grid {
                        rows.push(path_row(arch, n, s, medium_graph(n, s))?);
                    }
                }
            }
        }
    }
    let mut csv = String::from(path_csv_header());
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.to_csv_line());
        csv.push('\n');
    }
    let path = dir.join("pathlen.csv");
    write_file(&path, &csv)?;
    files.push(path);
    lines.push(format!("analyzed {} graphs", rows.len()));
    Ok(())
}

fn path_row(
    arch: Arch,
    n: usize,
    s: usize,
    graph: crate::harness::graph::InfoFlowGraph,
) -> Result<PathRow, RunError> {
    graph
        .validate()
        .map_err(|e| runtime(format!("{arch} graph at n={n}, s={s} is invalid: {e}")))?;
    Ok(PathRow { arch: arch.to_string(), n, s, max_path: graph.max_path_length() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::from_text(
            "model.d = 6\n\
             model.layers = 1\n\
             model.vocab = 8\n\
             model.medium_interval = 4\n\
             model.squeeze_width = 3\n\
             task.length = 12\n\
             task.gap = 4\n\
             train.steps = 3\n\
             train.batch_size = 2\n\
             train.eval_interval = 2\n\
             train.eval_samples = 4\n\
             train.stop_accuracy = none\n\
             eval.samples = 4\n\
             gradcheck.seeds = 1\n\
             bench.archs = attention,rwkv,rrwkv\n\
             bench.n_grid = 16,32\n\
             bench.d = 8\n\
             bench.s_grid = 4\n\
             pathlen.n_grid = 10,16\n\
             pathlen.s_grid = 4\n",
        )
        .unwrap();
        cfg.out_dir = dir.display().to_string();
        cfg
    }

    #[test]
    fn train_writes_metrics_checkpoint_and_echo() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = base_cfg(dir.path());
        let summary = run(Command::Train, &cfg).unwrap();
        assert!(dir.path().join("config.txt").exists());
        assert!(dir.path().join("metrics.csv").exists());
        assert!(dir.path().join("model.ckpt").exists());
        assert_eq!(summary.files.len(), 3);
        let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(metrics.starts_with("step,loss,accuracy\n"));
        let echo = fs::read_to_string(dir.path().join("config.txt")).unwrap();
        assert!(echo.contains("model.d = 6"));
        assert!(!echo.contains("out.dir"));
    }

    #[test]
    fn eval_round_trips_a_training_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base_cfg(&dir.path().join("train"));
        run(Command::Train, &cfg).unwrap();
        let ckpt = dir.path().join("train").join("model.ckpt");
        cfg.out_dir = dir.path().join("eval").display().to_string();
        cfg.eval_checkpoint = ckpt.display().to_string();
        run(Command::Eval, &cfg).unwrap();
        let text = fs::read_to_string(dir.path().join("eval").join("eval.csv")).unwrap();
        assert!(text.starts_with("loss,accuracy\n"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn eval_without_checkpoint_is_a_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = base_cfg(dir.path());
        let err = run(Command::Eval, &cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("eval.checkpoint"));
    }

    #[test]
    fn gradcheck_passes_and_reports_on_a_tiny_model() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base_cfg(dir.path());
        cfg.model_d = 4;
        cfg.model_vocab = 6;
        run(Command::Gradcheck, &cfg).unwrap();
        let text = fs::read_to_string(dir.path().join("gradreport.csv")).unwrap();
        assert!(text.starts_with("parameter,analytic,numeric,rel_error\n"));
        assert!(text.contains("embed,"));
    }

    #[test]
    fn bench_and_pathlen_write_their_grids() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base_cfg(&dir.path().join("b"));
        run(Command::Bench, &cfg).unwrap();
        let bench = fs::read_to_string(dir.path().join("b").join("bench.csv")).unwrap();
        // attention and rwkv rows per n, plus one rrwkv row per (n, s).
        assert_eq!(bench.lines().count(), 1 + 2 + 2 + 2);
        assert!(bench.lines().nth(1).unwrap().starts_with("attention,16,8,0,"));

        cfg.out_dir = dir.path().join("p").display().to_string();
        run(Command::Pathlen, &cfg).unwrap();
        let paths = fs::read_to_string(dir.path().join("p").join("pathlen.csv")).unwrap();
        assert!(paths.contains("rwkv,10,0,9"));
        assert!(paths.contains("attention,10,0,1"));
        assert!(paths.contains("rrwkv,16,4,"));
    }

    #[test]
    fn deterministic_artifacts_are_byte_identical_across_reruns() {
        let dir = tempfile::tempdir().unwrap();
        let mut first = base_cfg(&dir.path().join("a"));
        first.seed = 9;
        run(Command::Train, &first).unwrap();
        let mut second = first.clone();
        second.out_dir = dir.path().join("b").display().to_string();
        run(Command::Train, &second).unwrap();
        for name in ["config.txt", "metrics.csv", "model.ckpt"] {
            let a = fs::read(dir.path().join("a").join(name)).unwrap();
            let b = fs::read(dir.path().join("b").join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn lock_blocks_concurrent_use_and_releases_after() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = base_cfg(dir.path());
        let _held = DirLock::acquire(dir.path()).unwrap();
        let err = run(Command::Pathlen, &cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("in use"));
        drop(_held);
        run(Command::Pathlen, &cfg).unwrap();
        assert!(!dir.path().join(".lock").exists());
    }
}
