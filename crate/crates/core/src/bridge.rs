//! Residual diffusion bridge: anchored source, straight interpolation paths,
//! the two-term training loss and Euler sampling.
//!
//! Single-trajectory functions (`make_source`, `interpolate`, ...) state the
//! math; the batched functions below are what training and evaluation use.
//! Batches are row tensors of flattened `T·A` trajectories in normalized units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{check_time, mlp_record, time_feature_rows, Dropout, ModelBundle};
use crate::numerics::{RngStream, Tape, Tensor, Var};
use crate::spectral::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceMode {
    /// `x0 ~ N(μ_prior(c), σ_min² I)`.
    Anchored,
    /// `x0 ~ N(0, I)`, the noise-to-action baseline.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    pub sigma_min: f64,
    pub lambda_sem: f64,
    pub cutoff: usize,
    pub source_mode: SourceMode,
    /// Treat the source draw as a constant for the anchor parameters, so the
    /// anchor is trained by the semantic term alone.
    pub anchor_stopgrad: bool,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            sigma_min: 0.1,
            lambda_sem: 1.0,
            cutoff: 4,
            source_mode: SourceMode::Anchored,
            anchor_stopgrad: true,
        }
    }
}

impl BridgeConfig {
    pub fn gaussian() -> Self {
        Self {
            source_mode: SourceMode::Gaussian,
            ..Self::default()
        }
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if !(self.sigma_min >= 0.0) || !(self.lambda_sem >= 0.0) {
            return Err(Error::Invalid("sigma_min and lambda_sem must be >= 0".into()));
        }
        if self.cutoff == 0 || self.cutoff > horizon {
            return Err(Error::CutoffOutOfRange {
                cutoff: self.cutoff,
                horizon,
            });
        }
        Ok(())
    }

    /// Standard deviation of the source around its center.
    pub fn source_std(&self) -> f64 {
        match self.source_mode {
            SourceMode::Anchored => self.sigma_min,
            SourceMode::Gaussian => 1.0,
        }
    }
}

/// One training tuple on a straight path.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgeSample {
    pub x0: Trajectory,
    pub x1: Trajectory,
    pub t: f64,
    pub xt: Trajectory,
    pub ut: Trajectory,
}

pub fn make_source(mu_prior: &Trajectory, config: &BridgeConfig, stream: &mut RngStream) -> Trajectory {
    let std = config.source_std();
    let mut out = match config.source_mode {
        SourceMode::Anchored => mu_prior.clone(),
        SourceMode::Gaussian => Trajectory::zeros(mu_prior.horizon(), mu_prior.dims()),
    };
    if std > 0.0 {
        for v in out.values_mut() {
            *v += std * stream.normal();
        }
    }
    out
}

/// `(1-t)·x0 + t·x1`.
pub fn interpolate(x0: &Trajectory, x1: &Trajectory, t: f64) -> Result<Trajectory> {
    check_time(t)?;
    x0.same_shape(x1)?;
    let values = x0
        .values()
        .iter()
        .zip(x1.values())
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect();
    Trajectory::new(x0.horizon(), x0.dims(), values)
}

/// `x1 - x0`, constant along the path.
pub fn target_velocity(x0: &Trajectory, x1: &Trajectory) -> Result<Trajectory> {
    x1.sub(x0)
}

/// Squared Frobenius distance, the kinetic energy of the straight path.
pub fn kinetic_cost(x0: &Trajectory, x1: &Trajectory) -> Result<f64> {
    Ok(x1.sub(x0)?.sq_norm())
}

/// Draws `x0` and `t` and builds the path tuple for a ground truth `x1`.
pub fn bridge_sample(
    x1: &Trajectory,
    mu_prior: &Trajectory,
    config: &BridgeConfig,
    noise: &mut RngStream,
    time: &mut RngStream,
) -> Result<BridgeSample> {
    let x0 = make_source(mu_prior, config, noise);
    let t = time.uniform();
    let xt = interpolate(&x0, x1, t)?;
    let ut = target_velocity(&x0, x1)?;
    Ok(BridgeSample {
        x0,
        x1: x1.clone(),
        t,
        xt,
        ut,
    })
}

/// A training batch: conditions, normalized ground truth and its low-pass part.
#[derive(Clone, Debug)]
pub struct Batch {
    pub cond: Tensor,
    pub x1: Tensor,
    pub semantic: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.cond.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Randomness consumed by one loss evaluation: standard-normal `eps` per
/// element and one time per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LossDraws {
    pub eps: Tensor,
    pub t: Vec<f64>,
}

impl LossDraws {
    pub fn draw(rows: usize, width: usize, noise: &mut RngStream, time: &mut RngStream) -> Self {
        let eps = noise.normal_tensor(&[rows, width]);
        let t = (0..rows).map(|_| time.uniform()).collect();
        Self { eps, t }
    }

    pub fn zeros_at(rows: usize, width: usize, t: f64) -> Self {
        Self {
            eps: Tensor::zeros(&[rows, width]),
            t: vec![t; rows],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub sem: f64,
    pub flow: f64,
}

/// Vars of a recorded loss evaluation.
pub struct LossGraph {
    pub anchor_params: Vec<Var>,
    pub velocity_params: Vec<Var>,
    pub cond: Var,
    pub mu: Var,
    pub velocity: Var,
    pub sem: Var,
    pub flow: Var,
    pub total: Var,
}

fn row_scaled(rows: &[f64], x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let w = x.cols();
    let mut out = x.clone();
    for (i, row) in out.data_mut().chunks_mut(w.max(1)).enumerate() {
        let s = f(rows[i]);
        row.iter_mut().for_each(|v| *v *= s);
    }
    out
}

/// Records the semantic and flow losses for `batch` under fixed `draws`.
///
/// With `cond_requires_grad` the condition is a differentiable input, which
/// is how the loss-collapse probe reads `∂loss/∂c`.
pub fn record_loss(
    tape: &mut Tape,
    bundle: &ModelBundle,
    batch: &Batch,
    draws: &LossDraws,
    config: &BridgeConfig,
    cond_requires_grad: bool,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<LossGraph> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Invalid("empty batch".into()));
    }
    let width = bundle.arch.traj_width();
    if batch.x1.cols() != width || batch.semantic.cols() != width || draws.eps.cols() != width {
        return Err(Error::Shape("batch trajectories do not match the model".into()));
    }
    if draws.t.len() != n || draws.eps.rows() != n || batch.x1.rows() != n {
        return Err(Error::Shape("batch sizes differ".into()));
    }
    for &t in &draws.t {
        check_time(t)?;
    }

    let anchor_params: Vec<Var> = bundle.anchor_params().iter().map(|p| tape.param(p.clone())).collect();
    let velocity_params: Vec<Var> = bundle.velocity_params().iter().map(|p| tape.param(p.clone())).collect();
    let cond = if cond_requires_grad {
        tape.param(batch.cond.clone())
    } else {
        tape.constant(batch.cond.clone())
    };
    let act = bundle.arch.activation;

    let mu = mlp_record(tape, &anchor_params, cond, act, dropout.as_deref_mut())?;
    let semantic = tape.constant(batch.semantic.clone());
    let sem_diff = tape.sub(mu, semantic)?;
    let sem = tape.mean_square(sem_diff);

    let std = config.source_std();
    let x0 = match config.source_mode {
        SourceMode::Gaussian => tape.constant(draws.eps.clone()),
        SourceMode::Anchored if config.anchor_stopgrad => {
            let v = tape.value(mu).add(&draws.eps.scale(std))?;
            tape.constant(v)
        }
        SourceMode::Anchored => {
            let e = tape.constant(draws.eps.scale(std));
            tape.add(mu, e)?
        }
    };

    let x1 = tape.constant(batch.x1.clone());
    let one_minus_t = tape.constant(row_scaled(&draws.t, &Tensor::full(&[n, width], 1.0), |t| 1.0 - t));
    let t_x1 = tape.constant(row_scaled(&draws.t, &batch.x1, |t| t));
    let scaled_x0 = tape.mul(x0, one_minus_t)?;
    let xt = tape.add(scaled_x0, t_x1)?;
    let ut = tape.sub(x1, x0)?;

    let tf = tape.constant(time_feature_rows(&draws.t));
    let input = tape.concat(&[xt, tf, cond])?;
    let velocity = mlp_record(tape, &velocity_params, input, act, dropout)?;
    let flow_diff = tape.sub(velocity, ut)?;
    let flow = tape.mean_square(flow_diff);

    let weighted = tape.scale(sem, config.lambda_sem);
    let total = tape.add(weighted, flow)?;

    Ok(LossGraph {
        anchor_params,
        velocity_params,
        cond,
        mu,
        velocity,
        sem,
        flow,
        total,
    })
}

fn parts(tape: &Tape, g: &LossGraph) -> Result<LossParts> {
    let p = LossParts {
        total: tape.value(g.total).item(),
        sem: tape.value(g.sem).item(),
        flow: tape.value(g.flow).item(),
    };
    if !p.total.is_finite() {
        return Err(Error::Diverged);
    }
    Ok(p)
}

/// Loss value under fixed draws, no gradients.
pub fn loss_with_draws(bundle: &ModelBundle, batch: &Batch, draws: &LossDraws, config: &BridgeConfig) -> Result<LossParts> {
    let mut tape = Tape::new();
    let g = record_loss(&mut tape, bundle, batch, draws, config, false, None)?;
    parts(&tape, &g)
}

/// Draws `t` and source noise, then evaluates the loss.
pub fn training_loss(
    batch: &Batch,
    bundle: &ModelBundle,
    config: &BridgeConfig,
    noise: &mut RngStream,
    time: &mut RngStream,
) -> Result<LossParts> {
    let draws = LossDraws::draw(batch.len(), bundle.arch.traj_width(), noise, time);
    loss_with_draws(bundle, batch, &draws, config)
}

/// Loss and gradients for every parameter tensor of the bundle, in
/// `bundle.params` order.
pub fn loss_and_grads(
    bundle: &ModelBundle,
    batch: &Batch,
    draws: &LossDraws,
    config: &BridgeConfig,
    tape: &mut Tape,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<(LossParts, Vec<Tensor>)> {
    let g = record_loss(tape, bundle, batch, draws, config, false, dropout)?;
    let p = parts(tape, &g)?;
    let grads = tape.backward(g.total)?;
    let out = g
        .anchor_params
        .iter()
        .chain(&g.velocity_params)
        .zip(&bundle.params)
        .map(|(v, p)| grads.wrt_or_zeros(*v, p.shape()))
        .collect();
    Ok((p, out))
}

/// Something that maps a batch of conditions to anchors.
pub trait Anchor {
    fn anchor(&self, cond: &Tensor) -> Result<Tensor>;
}

/// A velocity field over batched states.
pub trait VelocityField {
    fn velocity(&self, x: &Tensor, t: f64, cond: &Tensor) -> Result<Tensor>;
}

impl Anchor for ModelBundle {
    fn anchor(&self, cond: &Tensor) -> Result<Tensor> {
        self.anchor_predict(cond)
    }
}

impl VelocityField for ModelBundle {
    fn velocity(&self, x: &Tensor, t: f64, cond: &Tensor) -> Result<Tensor> {
        self.velocity_predict(x, &vec![t; x.rows()], cond)
    }
}

/// Output of Euler sampling, split into the two Predict-Refine terms.
#[derive(Clone, Debug)]
pub struct SampleTrace {
    /// Center of the source (zero for the gaussian source).
    pub anchor: Tensor,
    /// Source noise plus the integrated velocity.
    pub residual: Tensor,
    /// `anchor + residual`.
    pub output: Tensor,
    /// Velocity-field evaluations performed.
    pub evaluations: usize,
    /// States at `t_0 .. t_N` when recording was requested.
    pub path: Vec<Tensor>,
}

/// Euler integration of the velocity field from the source at `t=0` to `t=1`
/// with `nfe` uniform left-endpoint steps.
pub fn sample<A: Anchor + ?Sized, V: VelocityField + ?Sized>(
    cond: &Tensor,
    anchor: &A,
    field: &V,
    nfe: usize,
    config: &BridgeConfig,
    stream: &mut RngStream,
    record_path: bool,
) -> Result<SampleTrace> {
    if nfe == 0 {
        return Err(Error::Invalid("nfe must be >= 1".into()));
    }
    let mu = anchor.anchor(cond)?;
    let base = match config.source_mode {
        SourceMode::Anchored => mu,
        SourceMode::Gaussian => Tensor::zeros(mu.shape()),
    };
    let std = config.source_std();
    let mut residual = stream.normal_tensor(base.shape()).scale(std);
    let dt = 1.0 / nfe as f64;
    let mut path = Vec::new();
    let mut x = base.add(&residual)?;
    if record_path {
        path.push(x.clone());
    }
    for i in 0..nfe {
        let t = i as f64 / nfe as f64;
        let v = field.velocity(&x, t, cond)?;
        for (r, vi) in residual.data_mut().iter_mut().zip(v.data()) {
            *r += vi * dt;
        }
        x = base.add(&residual)?;
        if !x.is_finite() {
            return Err(Error::SamplerDiverged { step: i });
        }
        if record_path {
            path.push(x.clone());
        }
    }
    Ok(SampleTrace {
        anchor: base,
        residual,
        output: x,
        evaluations: nfe,
        path,
    })
}
