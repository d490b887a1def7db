//! Synthetic conditional-trajectory tasks with known spectral structure.
//!
//! Each trajectory is a smoothstep reach from a start point to a goal (almost
//! all energy in the lowest three DCT modes) plus a phase-shifted cosine at a
//! high frequency index and a small Gaussian observation noise. The condition
//! vector carries start, goal and phase:
//!
//! ```text
//! [ p0 (A) | p1 (A) | cos φ | sin φ | 0 ... ]
//! ```
//!
//! In the two-mode task the goal slot holds `g`, and the realised goal is
//! `+g` or `-g` with equal probability, so the condition cannot tell the modes
//! apart.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, StreamLabel, Tensor};
use crate::spectral::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    ReachWiggle,
    TwoMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub name: TaskKind,
    pub horizon: usize,
    pub action_dim: usize,
    pub cond_width: usize,
    /// Amplitude of the high-frequency jitter, raw units.
    pub jitter_amplitude: f64,
    /// DCT frequency index of the jitter.
    pub jitter_freq: usize,
    pub noise_floor: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            name: TaskKind::ReachWiggle,
            horizon: 16,
            action_dim: 2,
            cond_width: 8,
            jitter_amplitude: 0.2,
            jitter_freq: 10,
            noise_floor: 0.01,
            samples: 20_000,
            seed: 0,
        }
    }
}

/// Goals in the two-mode task are drawn away from the origin so the mirror
/// images stay distinguishable.
const TWO_MODE_MIN_GOAL_NORM: f64 = 0.25;

impl TaskSpec {
    pub fn two_mode() -> Self {
        Self {
            name: TaskKind::TwoMode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.action_dim == 0 {
            return Err(Error::Invalid("horizon and action_dim must be >= 1".into()));
        }
        if self.jitter_freq >= self.horizon {
            return Err(Error::JitterOutOfBand {
                m_hf: self.jitter_freq,
                horizon: self.horizon,
            });
        }
        if self.cond_width < 2 * self.action_dim + 2 {
            return Err(Error::Invalid(format!(
                "cond_width {} cannot hold start, goal and phase for {} action dims",
                self.cond_width, self.action_dim
            )));
        }
        if !(self.jitter_amplitude >= 0.0) || !(self.noise_floor >= 0.0) {
            return Err(Error::Invalid("jitter amplitude and noise floor must be >= 0".into()));
        }
        if self.samples == 0 {
            return Err(Error::Invalid("samples must be >= 1".into()));
        }
        if self.samples > u32::MAX as usize
            || self.horizon > u16::MAX as usize
            || self.cond_width > u16::MAX as usize
            || self.action_dim > u16::MAX as usize
        {
            return Err(Error::Invalid("dimensions exceed the dataset file header".into()));
        }
        Ok(())
    }

    /// Checks the jitter lies above a spectral cutoff.
    pub fn validate_cutoff(&self, cutoff: usize) -> Result<()> {
        if cutoff == 0 || cutoff > self.horizon {
            return Err(Error::CutoffOutOfRange {
                cutoff,
                horizon: self.horizon,
            });
        }
        if self.jitter_freq < cutoff {
            return Err(Error::Invalid(format!(
                "jitter frequency {} must be >= cutoff {}",
                self.jitter_freq, cutoff
            )));
        }
        Ok(())
    }

    fn smoothstep(&self, j: usize) -> f64 {
        let tau = if self.horizon == 1 {
            1.0
        } else {
            j as f64 / (self.horizon - 1) as f64
        };
        tau * tau * (3.0 - 2.0 * tau)
    }

    /// Jitter value at step `j` for phase `phi`, before scaling by amplitude.
    fn jitter(&self, j: usize, phi: f64) -> f64 {
        (PI * self.jitter_freq as f64 * (j as f64 + 0.5) / self.horizon as f64 + phi).cos()
    }

    /// Noise-free trajectory for start `p0`, goal `p1`, phase `phi`.
    pub fn clean_trajectory(&self, p0: &[f64], p1: &[f64], phi: f64) -> Trajectory {
        let (t, a) = (self.horizon, self.action_dim);
        let mut values = Vec::with_capacity(t * a);
        for j in 0..t {
            let s = self.smoothstep(j);
            let w = self.jitter_amplitude * self.jitter(j, phi);
            for d in 0..a {
                values.push(p0[d] + (p1[d] - p0[d]) * s + w);
            }
        }
        Trajectory::new(t, a, values).expect("dims validated")
    }

    /// Raw-unit goal points the final action should reach for `condition`:
    /// one for reach-wiggle, two mirror images for two-mode. The goal includes
    /// the jitter's value at the last step.
    pub fn goals(&self, condition: &[f64]) -> Vec<Vec<f64>> {
        let a = self.action_dim;
        let phi = condition[2 * a + 1].atan2(condition[2 * a]);
        let w = self.jitter_amplitude * self.jitter(self.horizon - 1, phi);
        let g: Vec<f64> = condition[a..2 * a].iter().map(|x| x + w).collect();
        match self.name {
            TaskKind::ReachWiggle => vec![g],
            TaskKind::TwoMode => {
                let mirror = condition[a..2 * a].iter().map(|x| -x + w).collect();
                vec![g, mirror]
            }
        }
    }
}

/// Per-action-dimension z-scoring statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dims: usize) -> Self {
        Self {
            mean: vec![0.0; dims],
            std: vec![1.0; dims],
        }
    }

    /// Statistics of time-major trajectory values with `dims` columns.
    pub fn fit(values: &[f64], dims: usize) -> Result<Self> {
        let rows = values.len() / dims;
        if rows == 0 {
            return Err(Error::Invalid("no values to fit normalization".into()));
        }
        let mut mean = vec![0.0; dims];
        for row in values.chunks(dims) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; dims];
        for row in values.chunks(dims) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / rows as f64).sqrt()).collect();
        let stats = Self { mean, std };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::Invalid("normalization mean/std lengths differ".into()));
        }
        if self.std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Invalid("normalization std must be > 0".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    /// z-scores time-major values in place.
    pub fn normalize_in_place(&self, values: &mut [f64]) {
        let a = self.dims();
        for row in values.chunks_mut(a) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn denormalize_in_place(&self, values: &mut [f64]) {
        let a = self.dims();
        for row in values.chunks_mut(a) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
    }

    pub fn normalize_point(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub horizon: usize,
    pub action_dim: usize,
    pub cond_width: usize,
    /// `N × cond_width`.
    pub conditions: Vec<f64>,
    /// `N × T × A`, raw units.
    pub trajectories: Vec<f64>,
    pub norm: NormStats,
    /// Which mirror goal each two-mode sample took; empty for datasets read
    /// from disk or single-mode tasks.
    pub modes: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.conditions.len() / self.cond_width.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn traj_width(&self) -> usize {
        self.horizon * self.action_dim
    }

    /// Validation holds the last `N / 10` samples.
    pub fn val_count(&self) -> usize {
        self.len() / 10
    }

    pub fn split_range(&self, split: Split) -> std::ops::Range<usize> {
        let n = self.len();
        let v = self.val_count();
        match split {
            Split::Train => 0..n - v,
            Split::Val => n - v..n,
        }
    }

    pub fn condition(&self, i: usize) -> &[f64] {
        &self.conditions[i * self.cond_width..(i + 1) * self.cond_width]
    }

    pub fn raw_trajectory(&self, i: usize) -> Trajectory {
        let w = self.traj_width();
        Trajectory::new(
            self.horizon,
            self.action_dim,
            self.trajectories[i * w..(i + 1) * w].to_vec(),
        )
        .expect("dataset dims")
    }

    pub fn normalized_trajectory(&self, i: usize) -> Trajectory {
        let mut t = self.raw_trajectory(i);
        self.norm.normalize_in_place(t.values_mut());
        t
    }

    /// Conditions and normalized trajectories of a split as row tensors.
    pub fn split_tensors(&self, split: Split) -> (Tensor, Tensor) {
        let r = self.split_range(split);
        let n = r.len();
        let c = self.conditions[r.start * self.cond_width..r.end * self.cond_width].to_vec();
        let w = self.traj_width();
        let mut x = self.trajectories[r.start * w..r.end * w].to_vec();
        self.norm.normalize_in_place(&mut x);
        (
            Tensor::new(vec![n, self.cond_width], c).expect("dims"),
            Tensor::new(vec![n, w], x).expect("dims"),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.conditions.len() != n * self.cond_width
            || self.trajectories.len() != n * self.traj_width()
        {
            return Err(Error::Format("dataset lengths disagree".into()));
        }
        if self.trajectories.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite trajectory value".into()));
        }
        if self.norm.dims() != self.action_dim {
            return Err(Error::Format("normalization dims mismatch".into()));
        }
        self.norm.validate()
    }
}

fn uniform_in(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

fn generate(spec: &TaskSpec, stream: &mut RngStream) -> Result<Dataset> {
    spec.validate()?;
    let (t, a, c) = (spec.horizon, spec.action_dim, spec.cond_width);
    let n = spec.samples;
    let mut conditions = Vec::with_capacity(n * c);
    let mut trajectories = Vec::with_capacity(n * t * a);
    let mut modes = Vec::new();

    for _ in 0..n {
        let p0: Vec<f64> = (0..a).map(|_| uniform_in(stream, -1.0, 1.0)).collect();
        let p1: Vec<f64> = loop {
            let g: Vec<f64> = (0..a).map(|_| uniform_in(stream, -1.0, 1.0)).collect();
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if spec.name == TaskKind::ReachWiggle || norm >= TWO_MODE_MIN_GOAL_NORM {
                break g;
            }
        };
        let phi = uniform_in(stream, 0.0, 2.0 * PI);

        conditions.extend_from_slice(&p0);
        conditions.extend_from_slice(&p1);
        conditions.push(phi.cos());
        conditions.push(phi.sin());
        conditions.extend(std::iter::repeat_n(0.0, c - 2 * a - 2));

        let goal = match spec.name {
            TaskKind::ReachWiggle => p1,
            TaskKind::TwoMode => {
                let flip = stream.uniform() < 0.5;
                modes.push(flip as u8);
                if flip {
                    p1.iter().map(|x| -x).collect()
                } else {
                    p1
                }
            }
        };
        let clean = spec.clean_trajectory(&p0, &goal, phi);
        for v in clean.values() {
            trajectories.push(v + spec.noise_floor * stream.normal());
        }
    }

    let norm = NormStats::fit(&trajectories, a)?;
    let ds = Dataset {
        horizon: t,
        action_dim: a,
        cond_width: c,
        conditions,
        trajectories,
        norm,
        modes,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn gen_reach_wiggle(spec: &TaskSpec, stream: &mut RngStream) -> Result<Dataset> {
    if spec.name != TaskKind::ReachWiggle {
        return Err(Error::Invalid("task is not reach-wiggle".into()));
    }
    generate(spec, stream)
}

pub fn gen_two_mode(spec: &TaskSpec, stream: &mut RngStream) -> Result<Dataset> {
    if spec.name != TaskKind::TwoMode {
        return Err(Error::Invalid("task is not two-mode".into()));
    }
    generate(spec, stream)
}

/// Generates the task named in `spec` from its own seed.
pub fn generate_task(spec: &TaskSpec) -> Result<Dataset> {
    let mut stream = RngStream::new(spec.seed, StreamLabel::Data);
    generate(spec, &mut stream)
}

/// Euclidean distance from the final action of a normalized trajectory to
/// each normalized goal, in `TaskSpec::goals` order.
pub fn goal_errors(traj: &Trajectory, condition: &[f64], spec: &TaskSpec, norm: &NormStats) -> Vec<f64> {
    let end = traj.endpoint();
    spec.goals(condition)
        .iter()
        .map(|g| {
            let gn = norm.normalize_point(g);
            end.iter()
                .zip(&gn)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Distance from the final action to the nearest goal, normalized units.
pub fn endpoint_error(traj: &Trajectory, condition: &[f64], spec: &TaskSpec, norm: &NormStats) -> f64 {
    goal_errors(traj, condition, spec, norm)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

pub const DEFAULT_SUCCESS_TOL: f64 = 0.1;

pub fn success(traj: &Trajectory, condition: &[f64], spec: &TaskSpec, norm: &NormStats, tol: f64) -> bool {
    endpoint_error(traj, condition, spec, norm) <= tol
}
