//! Training loop, validation sampling and success metrics.

use serde::{Deserialize, Serialize};

use crate::bridge::{loss_and_grads, sample, Batch, BridgeConfig, LossDraws, LossParts};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::models::{init_params, mlp_record, Arch, Dropout, ModelBundle, ModelKind};
use crate::numerics::{adamw_step, OptimizerConfig, OptimizerState, Precision, RngStream, StreamLabel, Tape, Tensor};
use crate::spectral::{lowpass_rows, DctBasis, Trajectory};
use crate::synth::{endpoint_error, Dataset, Split, TaskSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub eval_every: u64,
    /// Euler steps used for validation sampling during training.
    pub eval_nfe: usize,
    pub eval_tol: f64,
    #[serde(default)]
    pub precision: Precision,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            batch_size: 128,
            eval_every: 250,
            eval_nfe: 8,
            eval_tol: crate::synth::DEFAULT_SUCCESS_TOL,
            precision: Precision::F64,
        }
    }
}

/// Normalized tensors for the train and validation splits.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub train_cond: Tensor,
    pub train_x1: Tensor,
    /// Low-pass part of `train_x1` at the configured cutoff.
    pub train_semantic: Tensor,
    pub val_cond: Tensor,
    pub val_x1: Tensor,
}

impl TrainingData {
    pub fn new(ds: &Dataset, cutoff: usize) -> Result<Self> {
        let (train_cond, train_x1) = ds.split_tensors(Split::Train);
        let (val_cond, val_x1) = ds.split_tensors(Split::Val);
        if train_cond.rows() == 0 || val_cond.rows() == 0 {
            return Err(Error::Invalid("dataset too small for a train/val split".into()));
        }
        let basis = DctBasis::new(ds.horizon);
        let sem = lowpass_rows(&basis, train_x1.data(), ds.action_dim, cutoff)?;
        let train_semantic = Tensor::new(train_x1.shape().to_vec(), sem)?;
        Ok(Self {
            train_cond,
            train_x1,
            train_semantic,
            val_cond,
            val_x1,
        })
    }

    pub fn train_len(&self) -> usize {
        self.train_cond.rows()
    }
}

/// Independent random streams owned by a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainStreams {
    pub batch: RngStream,
    pub noise: RngStream,
    pub time: RngStream,
    pub dropout: RngStream,
}

impl TrainStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            batch: RngStream::new(seed, StreamLabel::Batch),
            noise: RngStream::new(seed, StreamLabel::SourceNoise),
            time: RngStream::new(seed, StreamLabel::TimeSampling),
            dropout: RngStream::new(seed ^ 0x5bd1_e995, StreamLabel::Batch),
        }
    }

    pub fn all(&self) -> [&RngStream; 4] {
        [&self.batch, &self.noise, &self.time, &self.dropout]
    }
}

/// Sums of per-step losses since the last logged row.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossAccumulator {
    pub total: f64,
    pub sem: f64,
    pub flow: f64,
    pub count: u64,
}

impl LossAccumulator {
    fn push(&mut self, p: &LossParts) {
        self.total += p.total;
        self.sem += p.sem;
        self.flow += p.flow;
        self.count += 1;
    }

    fn mean(&self) -> LossParts {
        let n = self.count.max(1) as f64;
        LossParts {
            total: self.total / n,
            sem: self.sem / n,
            flow: self.flow / n,
        }
    }
}

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub bundle: ModelBundle,
    pub opt_state: OptimizerState,
    pub streams: TrainStreams,
    pub acc: LossAccumulator,
    pub bridge: BridgeConfig,
    pub optimizer: OptimizerConfig,
    pub settings: TrainSettings,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_sem: f64,
    pub loss_flow: f64,
    pub val_endpoint_error: f64,
    pub val_success: f64,
}

pub const METRICS_HEADER: &str = "step,lr,loss_total,loss_sem,loss_flow,val_endpoint_error,val_success";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{}",
            self.step,
            self.lr,
            self.loss_total,
            self.loss_sem,
            self.loss_flow,
            self.val_endpoint_error,
            self.val_success
        )
    }
}

impl Trainer {
    pub fn new(
        arch: &Arch,
        ds: &Dataset,
        kind: ModelKind,
        bridge: BridgeConfig,
        optimizer: OptimizerConfig,
        settings: TrainSettings,
        seed: u64,
    ) -> Result<Self> {
        bridge.validate(arch.horizon)?;
        if arch.horizon != ds.horizon || arch.action_dim != ds.action_dim || arch.cond_width != ds.cond_width {
            return Err(Error::Invalid("architecture does not match the dataset".into()));
        }
        if settings.batch_size == 0 || settings.eval_nfe == 0 {
            return Err(Error::Invalid("batch_size and eval_nfe must be >= 1".into()));
        }
        let mut init = RngStream::new(seed, StreamLabel::Init);
        let mut bundle = init_params(arch, ds.norm.clone(), &mut init)?;
        bundle.kind = kind;
        let opt_state = OptimizerState::new(&bundle.params);
        Ok(Self {
            bundle,
            opt_state,
            streams: TrainStreams::new(seed),
            acc: LossAccumulator::default(),
            bridge,
            optimizer,
            settings,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.opt_state.step
    }

    fn draw_batch(&mut self, data: &TrainingData) -> Batch {
        let n = data.train_len();
        let idx: Vec<usize> = (0..self.settings.batch_size)
            .map(|_| self.streams.batch.below(n))
            .collect();
        let semantic = match self.bundle.kind {
            ModelKind::Bridge => data.train_semantic.select_rows(&idx),
            ModelKind::Regression => data.train_x1.select_rows(&idx),
        };
        Batch {
            cond: data.train_cond.select_rows(&idx),
            x1: data.train_x1.select_rows(&idx),
            semantic,
        }
    }

    fn lr_mults(&self) -> Vec<f64> {
        let mut m = vec![self.optimizer.anchor_lr_mult; self.bundle.params.len()];
        for i in self.bundle.velocity_range() {
            m[i] = self.optimizer.velocity_lr_mult;
        }
        m
    }

    /// One optimizer step on a fresh minibatch.
    pub fn step(&mut self, data: &TrainingData) -> Result<LossParts> {
        let batch = self.draw_batch(data);
        let width = self.bundle.arch.traj_width();
        let mut tape = Tape::with_precision(self.settings.precision);
        let rate = self.bundle.arch.dropout;
        let mut dropout = Dropout {
            rate,
            stream: &mut self.streams.dropout,
        };
        let (parts, grads) = match self.bundle.kind {
            ModelKind::Bridge => {
                let draws = LossDraws::draw(batch.len(), width, &mut self.streams.noise, &mut self.streams.time);
                loss_and_grads(&self.bundle, &batch, &draws, &self.bridge, &mut tape, Some(&mut dropout))?
            }
            ModelKind::Regression => regression_loss_and_grads(&self.bundle, &batch, &mut tape, Some(&mut dropout))?,
        };
        let mults = self.lr_mults();
        adamw_step(&mut self.bundle.params, &grads, &mults, &mut self.opt_state, &self.optimizer)?;
        self.acc.push(&parts);
        Ok(parts)
    }

    /// Mean losses since the last call, paired with the lr of the latest step.
    pub fn take_row(&mut self, eval: &EvalSummary) -> MetricsRow {
        let m = self.acc.mean();
        self.acc = LossAccumulator::default();
        let step = self.opt_state.step;
        MetricsRow {
            step,
            lr: self.optimizer.lr_at(step.saturating_sub(1)),
            loss_total: m.total,
            loss_sem: m.sem,
            loss_flow: m.flow,
            val_endpoint_error: eval.mean_endpoint_error,
            val_success: eval.success_rate,
        }
    }
}

/// Anchor-only loss `mean((μ(c) - target)²)` where `batch.semantic` is the target.
pub fn regression_loss_and_grads(
    bundle: &ModelBundle,
    batch: &Batch,
    tape: &mut Tape,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<(LossParts, Vec<Tensor>)> {
    let params: Vec<_> = bundle.anchor_params().iter().map(|p| tape.param(p.clone())).collect();
    let cond = tape.constant(batch.cond.clone());
    let mu = mlp_record(tape, &params, cond, bundle.arch.activation, dropout)?;
    let target = tape.constant(batch.semantic.clone());
    let d = tape.sub(mu, target)?;
    let loss = tape.mean_square(d);
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Diverged);
    }
    let g = tape.backward(loss)?;
    let mut grads: Vec<Tensor> = params
        .iter()
        .zip(bundle.anchor_params())
        .map(|(v, p)| g.wrt_or_zeros(*v, p.shape()))
        .collect();
    grads.extend(bundle.velocity_params().iter().map(|p| Tensor::zeros(p.shape())));
    Ok((
        LossParts {
            total: value,
            sem: value,
            flow: 0.0,
        },
        grads,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub success_rate: f64,
    pub mean_endpoint_error: f64,
    pub errors: Vec<f64>,
    pub evaluations: usize,
}

/// Generated trajectories for a batch of conditions.
///
/// Regression bundles return the anchor; bridge bundles integrate the flow.
pub fn generate(
    bundle: &ModelBundle,
    cond: &Tensor,
    nfe: usize,
    bridge: &BridgeConfig,
    stream: &mut RngStream,
) -> Result<(Tensor, usize)> {
    match bundle.kind {
        ModelKind::Regression => Ok((bundle.anchor_predict(cond)?, 0)),
        ModelKind::Bridge => {
            let tr = sample(cond, bundle, bundle, nfe, bridge, stream, false)?;
            Ok((tr.output, tr.evaluations))
        }
    }
}

/// Endpoint errors of row-flattened normalized trajectories.
pub fn endpoint_errors(bundle: &ModelBundle, cond: &Tensor, out: &Tensor, task: &TaskSpec) -> Result<Vec<f64>> {
    let (t, a) = (bundle.arch.horizon, bundle.arch.action_dim);
    (0..out.rows())
        .map(|i| {
            let tr = Trajectory::new(t, a, out.row(i).to_vec())?;
            Ok(endpoint_error(&tr, cond.row(i), task, &bundle.norm))
        })
        .collect()
}

pub fn summarize(errors: Vec<f64>, tol: f64, evaluations: usize) -> EvalSummary {
    let n = errors.len().max(1) as f64;
    let hits = errors.iter().filter(|e| **e <= tol).count();
    EvalSummary {
        success_rate: hits as f64 / n,
        mean_endpoint_error: errors.iter().sum::<f64>() / n,
        errors,
        evaluations,
    }
}

/// Samples every condition once from a stream seeded by `seed`, and scores
/// endpoints against the task goals.
pub fn evaluate(
    bundle: &ModelBundle,
    cond: &Tensor,
    task: &TaskSpec,
    nfe: usize,
    tol: f64,
    bridge: &BridgeConfig,
    seed: u64,
) -> Result<EvalSummary> {
    let mut stream = RngStream::new(seed, StreamLabel::Eval);
    let (out, evals) = generate(bundle, cond, nfe, bridge, &mut stream)?;
    let errors = endpoint_errors(bundle, cond, &out, task)?;
    Ok(summarize(errors, tol, evals))
}

/// Trains until `last_step`, evaluating at every multiple of `eval_every` and
/// at the schedule's final step. `on_row` sees each logged row.
pub fn run(
    trainer: &mut Trainer,
    data: &TrainingData,
    task: &TaskSpec,
    last_step: u64,
    seed: u64,
    mut on_row: impl FnMut(&MetricsRow, &Trainer) -> Result<()>,
) -> Result<()> {
    while trainer.step_count() < last_step {
        trainer.step(data)?;
        let s = trainer.step_count();
        if s.is_multiple_of(trainer.settings.eval_every) || s == trainer.optimizer.total_steps {
            let eval = evaluate(
                &trainer.bundle,
                &data.val_cond,
                task,
                trainer.settings.eval_nfe,
                trainer.settings.eval_tol,
                &trainer.bridge,
                seed,
            )?;
            let row = trainer.take_row(&eval);
            on_row(&row, trainer)?;
        }
    }
    Ok(())
}

/// A fresh run of `kind` on `ds` under `cfg`, trained for the full schedule.
pub fn fit(
    cfg: &RunConfig,
    ds: &Dataset,
    kind: ModelKind,
    on_row: impl FnMut(&MetricsRow, &Trainer) -> Result<()>,
) -> Result<Trainer> {
    let data = TrainingData::new(ds, cfg.bridge.cutoff)?;
    let mut trainer = Trainer::new(
        &cfg.arch,
        ds,
        kind,
        cfg.bridge.clone(),
        cfg.optimizer.clone(),
        cfg.train.clone(),
        cfg.seed,
    )?;
    run(&mut trainer, &data, &cfg.task, cfg.optimizer.total_steps, cfg.seed, on_row)?;
    Ok(trainer)
}
