//! Anchor network `μ_prior(c)` and velocity network `v_θ(x_t, t, c)`.
//!
//! Both heads are plain MLPs sharing the raw condition vector as input. The
//! anchor maps `c ↦ T·A` values; the velocity net maps
//! `[flatten(x_t) | time features(t) | c] ↦ T·A` values. Output layers start
//! at zero so a fresh bundle predicts a zero anchor and a zero velocity.

use std::f64::consts::PI;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::{add_row, concat_cols, matmul};
use crate::numerics::{RngStream, Tape, Tensor, Var};
use crate::spectral::Trajectory;
use crate::synth::NormStats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Gelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Anchor plus residual flow.
    #[default]
    Bridge,
    /// Anchor head trained on the full trajectory, no flow.
    Regression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Arch {
    pub horizon: usize,
    pub action_dim: usize,
    pub cond_width: usize,
    pub anchor_hidden: Vec<usize>,
    pub velocity_hidden: Vec<usize>,
    pub activation: Activation,
    /// Dropout on hidden activations during training; 0 disables it.
    #[serde(default)]
    pub dropout: f64,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            horizon: 16,
            action_dim: 2,
            cond_width: 8,
            anchor_hidden: vec![128, 128],
            velocity_hidden: vec![128, 128],
            activation: Activation::Tanh,
            dropout: 0.0,
        }
    }
}

pub const TIME_FEATURES: usize = 9;
const TIME_FREQS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

/// `[t, sin(2π f t), cos(2π f t) for f in {1,2,4,8}]`.
pub fn time_features(t: f64) -> [f64; TIME_FEATURES] {
    let mut out = [0.0; TIME_FEATURES];
    out[0] = t;
    for (i, f) in TIME_FREQS.iter().enumerate() {
        let a = 2.0 * PI * f * t;
        out[1 + 2 * i] = a.sin();
        out[2 + 2 * i] = a.cos();
    }
    out
}

pub fn time_feature_rows(ts: &[f64]) -> Tensor {
    let mut data = Vec::with_capacity(ts.len() * TIME_FEATURES);
    for &t in ts {
        data.extend_from_slice(&time_features(t));
    }
    Tensor::new(vec![ts.len(), TIME_FEATURES], data).expect("dims")
}

impl Arch {
    pub fn traj_width(&self) -> usize {
        self.horizon * self.action_dim
    }

    pub fn velocity_input_width(&self) -> usize {
        self.traj_width() + TIME_FEATURES + self.cond_width
    }

    fn layer_dims(input: usize, hidden: &[usize], output: usize) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = input;
        for &h in hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, output));
        dims
    }

    pub fn anchor_layers(&self) -> Vec<(usize, usize)> {
        Self::layer_dims(self.cond_width, &self.anchor_hidden, self.traj_width())
    }

    pub fn velocity_layers(&self) -> Vec<(usize, usize)> {
        Self::layer_dims(
            self.velocity_input_width(),
            &self.velocity_hidden,
            self.traj_width(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.action_dim == 0 || self.cond_width == 0 {
            return Err(Error::Invalid("arch dimensions must be >= 1".into()));
        }
        if self
            .anchor_hidden
            .iter()
            .chain(&self.velocity_hidden)
            .any(|&h| h == 0)
        {
            return Err(Error::Invalid("hidden widths must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Parameters of both heads plus normalization statistics.
///
/// `params` holds `[W, b]` pairs for every anchor layer followed by every
/// velocity layer; `W` is `[fan_in, fan_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub arch: Arch,
    pub kind: ModelKind,
    pub norm: NormStats,
    pub params: Vec<Tensor>,
}

fn glorot_uniform(fan_in: usize, fan_out: usize, stream: &mut RngStream) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(&[fan_in, fan_out], |_| a * (2.0 * stream.uniform() - 1.0))
}

fn init_stack(dims: &[(usize, usize)], stream: &mut RngStream, out: &mut Vec<Tensor>) {
    let last = dims.len() - 1;
    for (i, &(fi, fo)) in dims.iter().enumerate() {
        if i == last {
            out.push(Tensor::zeros(&[fi, fo]));
        } else {
            out.push(glorot_uniform(fi, fo, stream));
        }
        out.push(Tensor::zeros(&[fo]));
    }
}

/// Hidden layers uniform in `±sqrt(6/(fan_in+fan_out))`, zero biases, zero
/// output layers.
pub fn init_params(arch: &Arch, norm: NormStats, stream: &mut RngStream) -> Result<ModelBundle> {
    arch.validate()?;
    norm.validate()?;
    if norm.dims() != arch.action_dim {
        return Err(Error::Invalid("norm stats do not match action_dim".into()));
    }
    let mut params = Vec::new();
    init_stack(&arch.anchor_layers(), stream, &mut params);
    init_stack(&arch.velocity_layers(), stream, &mut params);
    Ok(ModelBundle {
        arch: arch.clone(),
        kind: ModelKind::Bridge,
        norm,
        params,
    })
}

fn mlp_forward(params: &[Tensor], input: &Tensor, act: Activation) -> Result<Tensor> {
    let layers = params.len() / 2;
    let mut h = input.clone();
    for l in 0..layers {
        h = add_row(&matmul(&h, &params[2 * l])?, &params[2 * l + 1])?;
        if l + 1 < layers {
            match act {
                Activation::Tanh => h.data_mut().iter_mut().for_each(|x| *x = x.tanh()),
                Activation::Gelu => h = h.map(gelu),
            }
        }
    }
    Ok(h)
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044_715 * x * x * x)).tanh())
}

/// Inverted-dropout masks for a training forward pass.
pub struct Dropout<'a> {
    pub rate: f64,
    pub stream: &'a mut RngStream,
}

/// Records an MLP forward pass on `tape`.
pub fn mlp_record(
    tape: &mut Tape,
    params: &[Var],
    input: Var,
    act: Activation,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<Var> {
    let layers = params.len() / 2;
    let mut h = input;
    for l in 0..layers {
        h = tape.matmul(h, params[2 * l])?;
        h = tape.add_row(h, params[2 * l + 1])?;
        if l + 1 < layers {
            h = match act {
                Activation::Tanh => tape.tanh(h),
                Activation::Gelu => tape.gelu(h),
            };
            if let Some(d) = dropout.as_deref_mut() {
                if d.rate > 0.0 {
                    let keep = 1.0 - d.rate;
                    let shape = tape.value(h).shape().to_vec();
                    let mask = Tensor::from_fn(&shape, |_| {
                        if d.stream.uniform() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    let m = tape.constant(mask);
                    h = tape.mul(h, m)?;
                }
            }
        }
    }
    Ok(h)
}

fn check_width(t: &Tensor, width: usize, what: &str) -> Result<()> {
    if t.cols() != width || t.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "{what}: expected rows of width {width}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

pub fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    Ok(())
}

impl ModelBundle {
    pub fn anchor_range(&self) -> Range<usize> {
        0..2 * self.arch.anchor_layers().len()
    }

    pub fn velocity_range(&self) -> Range<usize> {
        let a = 2 * self.arch.anchor_layers().len();
        a..a + 2 * self.arch.velocity_layers().len()
    }

    pub fn anchor_params(&self) -> &[Tensor] {
        &self.params[self.anchor_range()]
    }

    pub fn velocity_params(&self) -> &[Tensor] {
        &self.params[self.velocity_range()]
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Checks parameter shapes against the architecture.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.norm.validate()?;
        let expected: Vec<Vec<usize>> = self
            .arch
            .anchor_layers()
            .into_iter()
            .chain(self.arch.velocity_layers())
            .flat_map(|(i, o)| [vec![i, o], vec![o]])
            .collect();
        if expected.len() != self.params.len()
            || expected.iter().zip(&self.params).any(|(s, p)| s != p.shape())
        {
            return Err(Error::Shape("parameters do not match architecture".into()));
        }
        Ok(())
    }

    /// Anchor prediction for a batch of conditions, `[B, T·A]` normalized.
    pub fn anchor_predict(&self, cond: &Tensor) -> Result<Tensor> {
        check_width(cond, self.arch.cond_width, "anchor condition")?;
        mlp_forward(self.anchor_params(), cond, self.arch.activation)
    }

    /// Velocity for a batch of states at per-row times.
    pub fn velocity_predict(&self, xt: &Tensor, ts: &[f64], cond: &Tensor) -> Result<Tensor> {
        check_width(xt, self.arch.traj_width(), "velocity state")?;
        check_width(cond, self.arch.cond_width, "velocity condition")?;
        if ts.len() != xt.rows() || cond.rows() != xt.rows() {
            return Err(Error::Shape("velocity: batch sizes differ".into()));
        }
        for &t in ts {
            check_time(t)?;
        }
        let input = concat_cols(&[xt, &time_feature_rows(ts), cond])?;
        mlp_forward(self.velocity_params(), &input, self.arch.activation)
    }

    /// Single-condition anchor as a trajectory.
    pub fn anchor_trajectory(&self, condition: &[f64]) -> Result<Trajectory> {
        let c = Tensor::new(vec![1, condition.len()], condition.to_vec())?;
        let out = self.anchor_predict(&c)?;
        Trajectory::new(self.arch.horizon, self.arch.action_dim, out.into_data())
    }

    pub fn velocity_trajectory(&self, xt: &Trajectory, t: f64, condition: &[f64]) -> Result<Trajectory> {
        let x = Tensor::new(vec![1, xt.values().len()], xt.values().to_vec())?;
        let c = Tensor::new(vec![1, condition.len()], condition.to_vec())?;
        let out = self.velocity_predict(&x, &[t], &c)?;
        Trajectory::new(self.arch.horizon, self.arch.action_dim, out.into_data())
    }
}

pub fn anchor_predict(bundle: &ModelBundle, condition: &[f64]) -> Result<Trajectory> {
    bundle.anchor_trajectory(condition)
}

pub fn velocity_predict(bundle: &ModelBundle, xt: &Trajectory, t: f64, condition: &[f64]) -> Result<Trajectory> {
    bundle.velocity_trajectory(xt, t, condition)
}

/// Deterministic full-trajectory regression `x = f(c)` from a bundle trained
/// with the flow disabled and the cutoff at the full horizon.
pub fn regression_baseline_predict(bundle: &ModelBundle, condition: &[f64]) -> Result<Trajectory> {
    if bundle.kind != ModelKind::Regression {
        return Err(Error::Invalid("bundle was not trained as a regression baseline".into()));
    }
    bundle.anchor_trajectory(condition)
}
