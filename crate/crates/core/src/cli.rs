//! The `resbridge` command line.
//!
//! Exit codes: 0 success, 2 invalid input (including usage errors), 3
//! numerical failure. Payload files are byte-identical across reruns with
//! the same config hash, seed and version; wall-clock data goes to
//! `<command>.timestamps.json` in the output directory.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bridge::{sample, Batch, SourceMode};
use crate::config::{Provenance, RunConfig};
use crate::diagnostics::{
    convergence_ab, loss_collapse_probe, mode_coverage_report, nfe_sweep, quantization_sweep, straightness_report,
    svg, transport_cost_report, ConvergenceSettings, DiagnosticReport, Variant,
};
use crate::error::{Error, Result};
use crate::formats::{read_checkpoint, read_dataset, write_checkpoint, write_dataset, Checkpoint, TrainState};
use crate::models::{ModelBundle, ModelKind};
use crate::numerics::{RngStream, StreamLabel, Tensor};
use crate::spectral::{lowpass_rows, DctBasis};
use crate::synth::{endpoint_error, generate_task, Dataset, Split, TaskKind};
use crate::train::{evaluate, fit, run, summarize, MetricsRow, Trainer, TrainingData, METRICS_HEADER};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "resbridge", version, about = "Residual diffusion bridge policies on synthetic reach tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run config; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed (and the task seed for gen-data).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config's out_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Continue from a checkpoint that carries training state.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this step instead of the schedule's end.
        #[arg(long)]
        until: Option<u64>,
        /// Train the deterministic regression baseline instead of a bridge.
        #[arg(long)]
        regression: bool,
    },
    /// Sample trajectories, writing anchor, residual and output separately.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Take conditions from this dataset's validation split.
        #[arg(long)]
        data: Option<PathBuf>,
        /// A single raw condition vector, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        condition: Option<String>,
        /// Number of validation conditions to sample (default all).
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 8)]
        nfe: usize,
    },
    /// Score a checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = crate::synth::DEFAULT_SUCCESS_TOL)]
        tol: f64,
        /// Defaults to the training config's validation NFE.
        #[arg(long)]
        nfe: Option<usize>,
        #[arg(long, value_enum, default_value_t = SplitArg::Val)]
        split: SplitArg,
        /// Score the dataset's own trajectories instead of model samples.
        #[arg(long)]
        oracle: bool,
    },
    /// Run diagnostics and write JSON reports, curve CSVs and SVG charts.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        which: Which,
        /// Train missing prerequisite models.
        #[arg(long)]
        auto: bool,
        /// Dataset to use (default: generated from the config's task)
        #[arg(long)]
        data: Option<PathBuf>,
        /// Anchored-source checkpoint (default <out>/models/anchored.rvbm).
        #[arg(long)]
        anchored: Option<PathBuf>,
        /// Gaussian-source checkpoint (default <out>/models/gaussian.rvbm).
        #[arg(long)]
        gaussian: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Val,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Quantization,
    Transport,
    Collapse,
    Nfe,
    Straightness,
    Convergence,
    /// Two-mode regression vs bridge; not part of `all`.
    Modes,
    All,
}

impl Which {
    fn expand(self) -> Vec<Which> {
        use Which::*;
        match self {
            All => vec![Quantization, Transport, Collapse, Nfe, Straightness, Convergence],
            w => vec![w],
        }
    }

    fn name(self) -> &'static str {
        use Which::*;
        match self {
            Quantization => "quantization",
            Transport => "transport",
            Collapse => "collapse",
            Nfe => "nfe",
            Straightness => "straightness",
            Convergence => "convergence",
            Modes => "modes",
            All => "all",
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INVALID
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let threads = threads_from_env()?;
    match cli.command {
        Command::GenData { common } => cmd_gen_data(&common),
        Command::Train {
            common,
            data,
            resume,
            until,
            regression,
        } => cmd_train(&common, &data, resume.as_deref(), until, regression),
        Command::Sample {
            common,
            checkpoint,
            data,
            condition,
            count,
            nfe,
        } => cmd_sample(&common, &checkpoint, data.as_deref(), condition.as_deref(), count, nfe),
        Command::Eval {
            common,
            checkpoint,
            data,
            tol,
            nfe,
            split,
            oracle,
        } => cmd_eval(&common, checkpoint.as_deref(), &data, tol, nfe, split, oracle),
        Command::Diagnose {
            common,
            which,
            auto,
            data,
            anchored,
            gaussian,
        } => cmd_diagnose(&common, which, auto, data.as_deref(), anchored, gaussian, threads),
    }
}

/// `RESBRIDGE_THREADS`, default 1.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var("RESBRIDGE_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Invalid(format!("RESBRIDGE_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn refuse_existing(paths: &[&Path], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    for p in paths {
        if p.exists() {
            return Err(Error::Invalid(format!(
                "refusing to overwrite {} (pass --force)",
                p.display()
            )));
        }
    }
    Ok(())
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Wall-clock facts about a command, kept out of the payload files.
struct Timestamps {
    command: &'static str,
    started: f64,
    clock: Instant,
    extra: BTreeMap<String, serde_json::Value>,
}

impl Timestamps {
    fn start(command: &'static str) -> Self {
        Self {
            command,
            started: unix_now(),
            clock: Instant::now(),
            extra: BTreeMap::new(),
        }
    }

    fn write(self, dir: &Path) -> Result<()> {
        let v = json!({
            "command": self.command,
            "started_unix": self.started,
            "finished_unix": unix_now(),
            "elapsed_seconds": self.clock.elapsed().as_secs_f64(),
            "extra": self.extra,
        });
        let path = dir.join(format!("{}.timestamps.json", self.command));
        std::fs::write(path, serde_json::to_string_pretty(&v)? + "\n")?;
        Ok(())
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

/// Written into the RVBM provenance field: the run's identity plus the full
/// config it was trained under (with `out_dir` cleared).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub config: RunConfig,
}

impl CheckpointMeta {
    pub fn new(cfg: &RunConfig) -> Self {
        let mut config = cfg.clone();
        config.out_dir = String::new();
        Self {
            provenance: cfg.provenance(),
            config,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("checkpoint provenance: {e}")))
    }
}

pub fn checkpoint_of(trainer: &Trainer, cfg: &RunConfig, with_state: bool) -> Checkpoint {
    Checkpoint {
        provenance: serde_json::to_string(&CheckpointMeta::new(cfg)).expect("meta serializes"),
        bundle: trainer.bundle.clone(),
        train_state: with_state.then(|| TrainState {
            opt: trainer.opt_state.clone(),
            streams: trainer.streams.clone(),
            acc: trainer.acc,
        }),
    }
}

fn load_model(path: &Path) -> Result<(ModelBundle, RunConfig, Option<TrainState>)> {
    let ck = read_checkpoint(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let meta = CheckpointMeta::parse(&ck.provenance)?;
    Ok((ck.bundle, meta.config, ck.train_state))
}

// ---- gen-data ----

pub fn dataset_csv(ds: &Dataset) -> String {
    let mut s = String::from("sample,split");
    for c in 0..ds.cond_width {
        s.push_str(&format!(",cond_{c}"));
    }
    for j in 0..ds.horizon {
        for d in 0..ds.action_dim {
            s.push_str(&format!(",x_{j}_{d}"));
        }
    }
    s.push('\n');
    let val = ds.split_range(Split::Val);
    let w = ds.traj_width();
    for i in 0..ds.len() {
        s.push_str(&format!("{i},{}", if val.contains(&i) { "val" } else { "train" }));
        for v in ds.condition(i) {
            s.push_str(&format!(",{v}"));
        }
        for v in &ds.trajectories[i * w..(i + 1) * w] {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

fn cmd_gen_data(common: &Common) -> Result<()> {
    let ts = Timestamps::start("gen-data");
    let mut cfg = resolve_config(common)?;
    if let Some(s) = common.seed {
        cfg.task.seed = s;
    }
    let dir = out_dir(common, &cfg)?;
    let (bin, csv, stats, conf) = (
        dir.join("dataset.rvb1"),
        dir.join("dataset.csv"),
        dir.join("dataset_stats.json"),
        dir.join("config.json"),
    );
    refuse_existing(&[&bin, &csv, &stats], common.force)?;
    let ds = generate_task(&cfg.task)?;
    let prov = cfg.provenance();
    write_dataset(&bin, &ds)?;
    prov.write_sidecar(&bin)?;
    std::fs::write(&csv, dataset_csv(&ds))?;
    prov.write_sidecar(&csv)?;
    let bytes = std::fs::read(&bin)?;
    let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    write_json(
        &stats,
        &json!({
            "samples": ds.len(),
            "train_samples": ds.split_range(Split::Train).len(),
            "val_samples": ds.val_count(),
            "horizon": ds.horizon,
            "action_dim": ds.action_dim,
            "cond_width": ds.cond_width,
            "task": cfg.task.name,
            "norm": ds.norm,
            "crc32": format!("{crc:08x}"),
            "provenance": prov,
        }),
    )?;
    // the output location is not part of the run's identity
    let portable = RunConfig {
        out_dir: RunConfig::default().out_dir,
        ..cfg.clone()
    };
    std::fs::write(&conf, portable.canonical_json() + "\n")?;
    println!("wrote {} ({} samples)", bin.display(), ds.len());
    ts.write(&dir)
}

// ---- train ----

fn read_metrics_rows(path: &Path, through: u64) -> Result<Vec<String>> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(_) => return Ok(Vec::new()),
    };
    let mut rows = Vec::new();
    for line in BufReader::new(f).lines().skip(1) {
        let line = line?;
        let step: u64 = line
            .split(',')
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad metrics row {line:?}")))?;
        if step <= through {
            rows.push(line);
        }
    }
    Ok(rows)
}

/// Runs training into `dir`, writing `model.rvbm` at every logged row so a
/// numerical failure leaves the last good checkpoint behind.
pub fn train_into(
    dir: &Path,
    cfg: &RunConfig,
    ds: &Dataset,
    trainer: &mut Trainer,
    until: u64,
    previous_rows: Vec<String>,
) -> Result<Option<MetricsRow>> {
    let data = TrainingData::new(ds, cfg.bridge.cutoff)?;
    let model = dir.join("model.rvbm");
    let metrics = dir.join("metrics.csv");
    let mut out = BufWriter::new(File::create(&metrics)?);
    writeln!(out, "{METRICS_HEADER}")?;
    for r in &previous_rows {
        writeln!(out, "{r}")?;
    }
    out.flush()?;
    let mut last = None;
    let res = run(trainer, &data, &cfg.task, until, cfg.seed, |row, t| {
        writeln!(out, "{}", row.csv_line())?;
        out.flush()?;
        write_checkpoint(&model, &checkpoint_of(t, cfg, true))?;
        eprintln!(
            "step {:>6}  loss {:.4e}  val_success {:.4}  val_error {:.4e}",
            row.step, row.loss_total, row.val_success, row.val_endpoint_error
        );
        last = Some(*row);
        Ok(())
    });
    out.flush()?;
    drop(out);
    let prov = cfg.provenance();
    prov.write_sidecar(&metrics)?;
    res?;
    write_checkpoint(&model, &checkpoint_of(trainer, cfg, true))?;
    prov.write_sidecar(&model)?;
    Ok(last)
}

fn cmd_train(common: &Common, data: &Path, resume: Option<&Path>, until: Option<u64>, regression: bool) -> Result<()> {
    let ts = Timestamps::start("train");
    let ds = read_dataset(data).map_err(|e| Error::Invalid(format!("{}: {e}", data.display())))?;
    let (cfg, mut trainer, previous) = match resume {
        None => {
            let cfg = resolve_config(common)?;
            let kind = if regression { ModelKind::Regression } else { ModelKind::Bridge };
            let trainer = Trainer::new(
                &cfg.arch,
                &ds,
                kind,
                cfg.bridge.clone(),
                cfg.optimizer.clone(),
                cfg.train.clone(),
                cfg.seed,
            )?;
            (cfg, trainer, None)
        }
        Some(path) => {
            let (bundle, mut cfg, state) = load_model(path)?;
            if common.config.is_some() || common.seed.is_some() {
                let given = resolve_config(common)?;
                if given.hash() != cfg.hash() {
                    return Err(Error::Invalid("config differs from the checkpoint being resumed".into()));
                }
            }
            if let Some(o) = &common.out {
                cfg.out_dir = o.to_string_lossy().into_owned();
            }
            let state = state.ok_or_else(|| Error::Invalid(format!("{} has no training state", path.display())))?;
            let trainer = Trainer {
                bundle,
                opt_state: state.opt,
                streams: state.streams,
                acc: state.acc,
                bridge: cfg.bridge.clone(),
                optimizer: cfg.optimizer.clone(),
                settings: cfg.train.clone(),
            };
            let step = trainer.step_count();
            (cfg, trainer, Some(step))
        }
    };
    let dir = out_dir(common, &cfg)?;
    let metrics = dir.join("metrics.csv");
    let model = dir.join("model.rvbm");
    let previous_rows = match previous {
        Some(step) => read_metrics_rows(&metrics, step)?,
        None => {
            refuse_existing(&[&metrics, &model], common.force)?;
            Vec::new()
        }
    };
    let last_step = until.unwrap_or(cfg.optimizer.total_steps);
    match train_into(&dir, &cfg, &ds, &mut trainer, last_step, previous_rows) {
        Ok(Some(row)) => println!(
            "step {} val_success {} val_endpoint_error {}",
            row.step, row.val_success, row.val_endpoint_error
        ),
        Ok(None) => println!("no rows logged (step {})", trainer.step_count()),
        Err(e) => {
            ts.write(&dir)?;
            return Err(e);
        }
    }
    ts.write(&dir)
}

// ---- sample ----

fn parse_condition(s: &str, width: usize) -> Result<Tensor> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Invalid(format!("bad --condition: {e}")))?;
    if vals.len() != width {
        return Err(Error::Invalid(format!("--condition needs {width} values, got {}", vals.len())));
    }
    Tensor::new(vec![1, width], vals)
}

/// Long-format CSV of a sample trace in raw units.
pub fn samples_csv(bundle: &ModelBundle, anchor: &Tensor, residual: &Tensor, output: &Tensor) -> String {
    let (t, a) = (bundle.arch.horizon, bundle.arch.action_dim);
    let norm = &bundle.norm;
    let mut s = String::from("sample,step,dim,anchor,residual,output\n");
    for i in 0..output.rows() {
        for j in 0..t {
            for d in 0..a {
                let k = j * a + d;
                let an = anchor.row(i)[k] * norm.std[d] + norm.mean[d];
                let re = residual.row(i)[k] * norm.std[d];
                let out = output.row(i)[k] * norm.std[d] + norm.mean[d];
                s.push_str(&format!("{i},{j},{d},{an},{re},{out}\n"));
            }
        }
    }
    s
}

fn cmd_sample(
    common: &Common,
    checkpoint: &Path,
    data: Option<&Path>,
    condition: Option<&str>,
    count: Option<usize>,
    nfe: usize,
) -> Result<()> {
    let ts = Timestamps::start("sample");
    if nfe == 0 {
        return Err(Error::Invalid("--nfe must be >= 1".into()));
    }
    let (bundle, mut cfg, _) = load_model(checkpoint)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let cond = match (data, condition) {
        (Some(p), None) => {
            let ds = read_dataset(p)?;
            let (c, _) = ds.split_tensors(Split::Val);
            let n = count.unwrap_or(c.rows()).min(c.rows());
            c.select_rows(&(0..n).collect::<Vec<_>>())
        }
        (None, Some(s)) => parse_condition(s, bundle.arch.cond_width)?,
        _ => return Err(Error::Invalid("give exactly one of --data or --condition".into())),
    };
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)?;
    let (csv, summary) = (dir.join("samples.csv"), dir.join("samples.json"));
    refuse_existing(&[&csv, &summary], common.force)?;
    let mut stream = RngStream::new(cfg.seed, StreamLabel::Eval);
    let (anchor, residual, output, evaluations) = match bundle.kind {
        ModelKind::Bridge => {
            let tr = sample(&cond, &bundle, &bundle, nfe, &cfg.bridge, &mut stream, false)?;
            (tr.anchor, tr.residual, tr.output, tr.evaluations)
        }
        ModelKind::Regression => {
            let mu = bundle.anchor_predict(&cond)?;
            let zero = Tensor::zeros(mu.shape());
            (mu.clone(), zero, mu, 0)
        }
    };
    let prov = cfg.provenance();
    std::fs::write(&csv, samples_csv(&bundle, &anchor, &residual, &output))?;
    prov.write_sidecar(&csv)?;
    write_json(
        &summary,
        &json!({
            "samples": output.rows(),
            "nfe": nfe,
            "evaluations": evaluations,
            "source_mode": cfg.bridge.source_mode,
            "provenance": prov,
        }),
    )?;
    println!("wrote {} ({} samples, {} evaluations)", csv.display(), output.rows(), evaluations);
    ts.write(&dir)
}

// ---- eval ----

fn cmd_eval(
    common: &Common,
    checkpoint: Option<&Path>,
    data: &Path,
    tol: f64,
    nfe: Option<usize>,
    split: SplitArg,
    oracle: bool,
) -> Result<()> {
    let ts = Timestamps::start("eval");
    if !(tol >= 0.0) {
        return Err(Error::Invalid("--tol must be >= 0".into()));
    }
    let ds = read_dataset(data)?;
    let range = match split {
        SplitArg::Val => ds.split_range(Split::Val),
        SplitArg::All => 0..ds.len(),
    };
    let idx: Vec<usize> = range.clone().collect();
    let w = ds.traj_width();
    let cond = Tensor::new(
        vec![idx.len(), ds.cond_width],
        ds.conditions[range.start * ds.cond_width..range.end * ds.cond_width].to_vec(),
    )?;
    let (summary, cfg, nfe_used) = if oracle {
        let cfg = resolve_config(common)?;
        let errors: Vec<f64> = idx
            .iter()
            .map(|&i| endpoint_error(&ds.normalized_trajectory(i), ds.condition(i), &cfg.task, &ds.norm))
            .collect();
        (summarize(errors, tol, 0), cfg, 0)
    } else {
        let path = checkpoint.ok_or_else(|| Error::Invalid("--checkpoint is required unless --oracle".into()))?;
        let (bundle, mut cfg, _) = load_model(path)?;
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        let nfe = nfe.unwrap_or(cfg.train.eval_nfe);
        if nfe == 0 {
            return Err(Error::Invalid("--nfe must be >= 1".into()));
        }
        if bundle.arch.traj_width() != w || bundle.arch.cond_width != ds.cond_width {
            return Err(Error::Invalid("checkpoint does not match the dataset".into()));
        }
        let s = evaluate(&bundle, &cond, &cfg.task, nfe, tol, &cfg.bridge, cfg.seed)?;
        (s, cfg, nfe)
    };
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)?;
    let (report, per_sample) = (dir.join("eval.json"), dir.join("eval_samples.csv"));
    refuse_existing(&[&report, &per_sample], common.force)?;
    let prov = cfg.provenance();
    let mut csv = String::from("sample,endpoint_error,success\n");
    for (i, e) in idx.iter().zip(&summary.errors) {
        csv.push_str(&format!("{i},{e},{}\n", u8::from(*e <= tol)));
    }
    std::fs::write(&per_sample, csv)?;
    prov.write_sidecar(&per_sample)?;
    write_json(
        &report,
        &json!({
            "success_rate": summary.success_rate,
            "mean_endpoint_error": summary.mean_endpoint_error,
            "tol": tol,
            "nfe": nfe_used,
            "evaluations": summary.evaluations,
            "split": format!("{split:?}").to_lowercase(),
            "samples": idx.len(),
            "oracle": oracle,
            "provenance": prov,
        }),
    )?;
    println!(
        "success_rate {} mean_endpoint_error {}",
        summary.success_rate, summary.mean_endpoint_error
    );
    ts.write(&dir)
}

// ---- diagnose ----

/// Quantization draws per delta.
pub const QUANTIZATION_SAMPLES: usize = 1_000_000;
pub const QUANTIZATION_DELTAS: [f64; 3] = [0.01, 0.1, 1.0];
pub const COLLAPSE_TIMES: [f64; 3] = [0.01, 0.1, 0.5];
/// Validation rows used by the condition-gradient probe.
pub const COLLAPSE_SAMPLES: usize = 512;
pub const NFE_LIST: [usize; 5] = [1, 2, 4, 8, 16];
pub const STRAIGHTNESS_NFE: usize = 32;
pub const MODE_DRAWS: usize = 8;

/// Per-diagnostic random stream, independent of the others.
fn diag_stream(seed: u64, which: Which) -> RngStream {
    RngStream::new(seed ^ ((which as u64 + 1) << 48), StreamLabel::Diagnostics)
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Writes `report.json`, `curves.csv` and one SVG per y-axis quantity into
/// `dir`. Returns the files written.
pub fn write_report(dir: &Path, report: &DiagnosticReport) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let json_path = dir.join("report.json");
    std::fs::write(&json_path, report.to_json())?;
    written.push(json_path);
    if !report.curves.is_empty() {
        let csv = dir.join("curves.csv");
        std::fs::write(&csv, report.curves_csv())?;
        if let Some(p) = &report.provenance {
            p.write_sidecar(&csv)?;
        }
        written.push(csv);
    }
    let mut groups: BTreeMap<&str, Vec<crate::diagnostics::Curve>> = BTreeMap::new();
    for c in &report.curves {
        groups.entry(c.y_label.as_str()).or_default().push(c.clone());
    }
    for (y, curves) in groups {
        let mut svg_text = svg::line_chart(&format!("{}: {y}", report.name), &curves);
        if let Some(p) = &report.provenance {
            svg_text.push_str(&format!("<!-- provenance {} -->\n", p.to_json().replace("--", "-")));
        }
        let path = dir.join(format!("{}.svg", slug(y)));
        std::fs::write(&path, svg_text)?;
        written.push(path);
    }
    Ok(written)
}

fn with_mode(cfg: &RunConfig, mode: SourceMode) -> RunConfig {
    let mut c = cfg.clone();
    c.bridge.source_mode = mode;
    c
}

struct Models {
    anchored: ModelBundle,
    gaussian: ModelBundle,
}

fn train_bundle(cfg: &RunConfig, ds: &Dataset, kind: ModelKind) -> Result<Trainer> {
    fit(cfg, ds, kind, |row, _| {
        eprintln!("  step {:>6}  val_success {:.4}", row.step, row.val_success);
        Ok(())
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_diagnose(
    common: &Common,
    which: Which,
    auto: bool,
    data: Option<&Path>,
    anchored: Option<PathBuf>,
    gaussian: Option<PathBuf>,
    threads: usize,
) -> Result<()> {
    let mut ts = Timestamps::start("diagnose");
    let cfg = resolve_config(common)?;
    let dir = out_dir(common, &cfg)?;
    let diag_dir = dir.join("diagnostics");
    let list = which.expand();
    let targets: Vec<PathBuf> = list.iter().map(|w| diag_dir.join(w.name()).join("report.json")).collect();
    refuse_existing(&targets.iter().map(PathBuf::as_path).collect::<Vec<_>>(), common.force)?;
    let prov = cfg.provenance();

    let needs_models = list
        .iter()
        .any(|w| matches!(w, Which::Transport | Which::Collapse | Which::Nfe | Which::Straightness));
    let needs_data = needs_models || list.contains(&Which::Convergence);
    let ds = if needs_data {
        Some(match data {
            Some(p) => read_dataset(p)?,
            None => generate_task(&cfg.task)?,
        })
    } else {
        None
    };

    let a_path = anchored.unwrap_or_else(|| dir.join("models").join("anchored.rvbm"));
    let g_path = gaussian.unwrap_or_else(|| dir.join("models").join("gaussian.rvbm"));
    let a_cfg = with_mode(&cfg, SourceMode::Anchored);
    let g_cfg = with_mode(&cfg, SourceMode::Gaussian);

    let mut reports: Vec<DiagnosticReport> = Vec::new();

    // Convergence trains both variants with the same seeds and schedule as
    // `train`, so with --auto its models double as the prerequisites.
    if list.contains(&Which::Convergence) {
        let ds = ds.as_ref().expect("data loaded");
        let settings = ConvergenceSettings {
            budget: cfg.optimizer.total_steps,
            eval_every: cfg.train.eval_every,
            target: 0.8,
            parallel: threads > 1,
        };
        eprintln!("convergence: training anchored and gaussian variants");
        let out = convergence_ab(&cfg, ds, &settings)?;
        if auto {
            std::fs::create_dir_all(a_path.parent().unwrap_or(Path::new(".")))?;
            for (p, c, rc) in [(&a_path, &a_cfg, &out.anchored), (&g_path, &g_cfg, &out.gaussian)] {
                if !p.exists() && rc.failure.is_none() {
                    write_checkpoint(p, &checkpoint_of(&rc.trainer, c, false))?;
                }
            }
        }
        reports.push(out.report.with_provenance(prov.clone()));
    }

    let models = if needs_models {
        let ds = ds.as_ref().expect("data loaded");
        let load_or_train = |path: &Path, c: &RunConfig| -> Result<ModelBundle> {
            if path.exists() {
                return Ok(load_model(path)?.0);
            }
            if !auto {
                return Err(Error::Invalid(format!(
                    "missing checkpoint {} (train it or pass --auto)",
                    path.display()
                )));
            }
            eprintln!("training {}", path.display());
            let t = train_bundle(c, ds, ModelKind::Bridge)?;
            std::fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))?;
            write_checkpoint(path, &checkpoint_of(&t, c, false))?;
            Ok(t.bundle)
        };
        Some(Models {
            anchored: load_or_train(&a_path, &a_cfg)?,
            gaussian: load_or_train(&g_path, &g_cfg)?,
        })
    } else {
        None
    };

    let mut nfe_timing = None;
    for w in &list {
        let report = match w {
            Which::Convergence => continue,
            Which::Quantization => quantization_sweep(&QUANTIZATION_DELTAS, QUANTIZATION_SAMPLES, &mut diag_stream(cfg.seed, *w))?,
            Which::Modes => modes_report(&cfg, auto, &dir)?,
            _ => {
                let m = models.as_ref().expect("models loaded");
                let ds = ds.as_ref().expect("data loaded");
                let va = Variant {
                    label: "anchored",
                    bundle: &m.anchored,
                    bridge: &a_cfg.bridge,
                };
                let vg = Variant {
                    label: "gaussian",
                    bundle: &m.gaussian,
                    bridge: &g_cfg.bridge,
                };
                let (cond, x1) = ds.split_tensors(Split::Val);
                match w {
                    Which::Transport => transport_cost_report(ds, &m.anchored, &a_cfg.bridge, &mut diag_stream(cfg.seed, *w))?,
                    Which::Collapse => {
                        let batch = probe_batch(ds, &cond, &x1, cfg.bridge.cutoff, COLLAPSE_SAMPLES)?;
                        loss_collapse_probe(&va, &vg, &batch, &COLLAPSE_TIMES, &mut diag_stream(cfg.seed, *w))?
                    }
                    Which::Nfe => {
                        let sweep = nfe_sweep(&[va, vg], &cond, &cfg.task, &NFE_LIST, cfg.train.eval_tol, cfg.seed)?;
                        nfe_timing = Some(json!({
                            "seconds_per_sample": sweep.timings.iter().map(|t| json!({"label": t.label, "nfe": t.nfe, "seconds": t.seconds_per_sample})).collect::<Vec<_>>(),
                            "r2_anchored": sweep.timing_r2("anchored"),
                            "r2_gaussian": sweep.timing_r2("gaussian"),
                        }));
                        sweep.report
                    }
                    Which::Straightness => straightness_report(&[va, vg], &cond, STRAIGHTNESS_NFE, cfg.seed)?,
                    _ => unreachable!("handled above"),
                }
            }
        };
        reports.push(report.with_provenance(prov.clone()));
    }

    for r in &reports {
        write_report(&diag_dir.join(&r.name), r)?;
        let status = if r.passed() { "pass" } else { "FAIL" };
        println!("{:<13} {status}", r.name);
        for v in &r.verdicts {
            println!(
                "    {:<40} {:>12.6} {} {:<12.6} {}",
                v.name,
                v.value,
                serde_json::to_value(v.comparison)?.as_str().unwrap_or("?"),
                v.threshold,
                if v.passed { "ok" } else { "failed" }
            );
        }
    }
    if let Some(t) = nfe_timing {
        ts.extra.insert("nfe_timing".into(), t);
    }
    ts.write(&dir)
}

fn probe_batch(ds: &Dataset, cond: &Tensor, x1: &Tensor, cutoff: usize, n: usize) -> Result<Batch> {
    let idx: Vec<usize> = (0..n.min(cond.rows())).collect();
    let x1 = x1.select_rows(&idx);
    let sem = lowpass_rows(&DctBasis::new(ds.horizon), x1.data(), ds.action_dim, cutoff)?;
    Ok(Batch {
        cond: cond.select_rows(&idx),
        semantic: Tensor::new(x1.shape().to_vec(), sem)?,
        x1,
    })
}

/// Schedule multiplier for the two-mode models: resolving two modes from a
/// shared anchor takes longer than fitting one.
pub const TWO_MODE_BUDGET_FACTOR: u64 = 2;

/// `cfg` switched to the two-mode task with an anchored source and a
/// stretched schedule.
pub fn two_mode_config(cfg: &RunConfig) -> RunConfig {
    let mut two = cfg.clone();
    two.task.name = TaskKind::TwoMode;
    two.bridge.source_mode = SourceMode::Anchored;
    two.optimizer.total_steps *= TWO_MODE_BUDGET_FACTOR;
    two.optimizer.warmup_steps *= TWO_MODE_BUDGET_FACTOR;
    two
}

fn modes_report(cfg: &RunConfig, auto: bool, dir: &Path) -> Result<DiagnosticReport> {
    let two = two_mode_config(cfg);
    let ds = generate_task(&two.task)?;
    let models = dir.join("models");
    let load_or_train = |name: &str, kind: ModelKind| -> Result<ModelBundle> {
        let path = models.join(name);
        if path.exists() {
            return Ok(load_model(&path)?.0);
        }
        if !auto {
            return Err(Error::Invalid(format!("missing checkpoint {} (pass --auto)", path.display())));
        }
        eprintln!("training {}", path.display());
        let t = train_bundle(&two, &ds, kind)?;
        std::fs::create_dir_all(&models)?;
        write_checkpoint(&path, &checkpoint_of(&t, &two, false))?;
        Ok(t.bundle)
    };
    let reg = load_or_train("two_mode_regression.rvbm", ModelKind::Regression)?;
    let bridge = load_or_train("two_mode_bridge.rvbm", ModelKind::Bridge)?;
    let (cond, _) = ds.split_tensors(Split::Val);
    let v = Variant {
        label: "bridge",
        bundle: &bridge,
        bridge: &two.bridge,
    };
    mode_coverage_report(&reg, &v, &cond, &two.task, MODE_DRAWS, two.train.eval_nfe, two.seed)
}
