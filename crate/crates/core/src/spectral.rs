//! Temporal DCT, low-pass projection and the semantic/execution split.
//!
//! Transforms are orthonormal DCT-II (forward) and DCT-III (inverse), applied
//! to each action dimension independently along the time axis. Frequency
//! index `0` is the DC term; a cutoff `k` keeps indices `0..k`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A `T × A` array of action values, time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    horizon: usize,
    dims: usize,
    values: Vec<f64>,
}

impl Trajectory {
    pub fn new(horizon: usize, dims: usize, values: Vec<f64>) -> Result<Self> {
        if horizon == 0 || dims == 0 {
            return Err(Error::Shape(format!(
                "trajectory needs T >= 1 and A >= 1, got {horizon}x{dims}"
            )));
        }
        if values.len() != horizon * dims {
            return Err(Error::Shape(format!(
                "trajectory {horizon}x{dims} needs {} values, got {}",
                horizon * dims,
                values.len()
            )));
        }
        Ok(Self {
            horizon,
            dims,
            values,
        })
    }

    pub fn zeros(horizon: usize, dims: usize) -> Self {
        Self {
            horizon,
            dims,
            values: vec![0.0; horizon * dims],
        }
    }

    /// Single action dimension.
    pub fn from_series(series: &[f64]) -> Result<Self> {
        Self::new(series.len(), 1, series.to_vec())
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, step: usize, dim: usize) -> f64 {
        self.values[step * self.dims + dim]
    }

    /// The action at the last time step.
    pub fn endpoint(&self) -> &[f64] {
        &self.values[(self.horizon - 1) * self.dims..]
    }

    pub fn sq_norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum()
    }

    pub fn dot(&self, other: &Trajectory) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn same_shape(&self, other: &Trajectory) -> Result<()> {
        if self.horizon != other.horizon || self.dims != other.dims {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.horizon, self.dims, other.horizon, other.dims
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Trajectory) -> Result<Trajectory> {
        self.same_shape(other)?;
        Ok(self.zip_with(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Trajectory) -> Result<Trajectory> {
        self.same_shape(other)?;
        Ok(self.zip_with(other, |a, b| a - b))
    }

    pub fn scale(&self, s: f64) -> Trajectory {
        Trajectory {
            values: self.values.iter().map(|x| x * s).collect(),
            ..*self
        }
    }

    fn zip_with(&self, other: &Trajectory, f: impl Fn(f64, f64) -> f64) -> Trajectory {
        Trajectory {
            horizon: self.horizon,
            dims: self.dims,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

/// DCT-II coefficients of a trajectory, laid out like the trajectory
/// (row = frequency index, column = action dimension).
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralCoeffs(pub Trajectory);

impl SpectralCoeffs {
    pub fn horizon(&self) -> usize {
        self.0.horizon
    }

    pub fn coeff(&self, freq: usize, dim: usize) -> f64 {
        self.0.at(freq, dim)
    }
}

/// Orthonormal DCT-II matrix for a fixed horizon, `basis[k*T + j]`.
#[derive(Clone, Debug)]
pub struct DctBasis {
    horizon: usize,
    basis: Vec<f64>,
}

impl DctBasis {
    pub fn new(horizon: usize) -> Self {
        let t = horizon as f64;
        let mut basis = vec![0.0; horizon * horizon];
        for k in 0..horizon {
            let s = if k == 0 { (1.0 / t).sqrt() } else { (2.0 / t).sqrt() };
            for j in 0..horizon {
                basis[k * horizon + j] = s * (PI * k as f64 * (j as f64 + 0.5) / t).cos();
            }
        }
        Self { horizon, basis }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Basis vector `k` sampled at time step `j`.
    pub fn at(&self, k: usize, j: usize) -> f64 {
        self.basis[k * self.horizon + j]
    }

    pub fn forward(&self, x: &Trajectory) -> SpectralCoeffs {
        let (t, a) = (x.horizon, x.dims);
        let mut out = vec![0.0; t * a];
        for k in 0..t {
            let row = &self.basis[k * t..(k + 1) * t];
            for (j, &b) in row.iter().enumerate() {
                for d in 0..a {
                    out[k * a + d] += b * x.values[j * a + d];
                }
            }
        }
        SpectralCoeffs(Trajectory {
            horizon: t,
            dims: a,
            values: out,
        })
    }

    pub fn inverse(&self, c: &SpectralCoeffs) -> Trajectory {
        let (t, a) = (c.0.horizon, c.0.dims);
        let mut out = vec![0.0; t * a];
        for k in 0..t {
            let row = &self.basis[k * t..(k + 1) * t];
            for (j, &b) in row.iter().enumerate() {
                for d in 0..a {
                    out[j * a + d] += b * c.0.values[k * a + d];
                }
            }
        }
        Trajectory {
            horizon: t,
            dims: a,
            values: out,
        }
    }

    /// The `T × T` projector onto the lowest `k` modes, `P = Cᵀ diag(1_{<k}) C`.
    pub fn lowpass_matrix(&self, cutoff: usize) -> Result<Vec<f64>> {
        check_cutoff(cutoff, self.horizon)?;
        let t = self.horizon;
        let mut p = vec![0.0; t * t];
        for i in 0..t {
            for j in 0..t {
                p[i * t + j] = (0..cutoff).map(|k| self.at(k, i) * self.at(k, j)).sum();
            }
        }
        Ok(p)
    }
}

fn check_cutoff(cutoff: usize, horizon: usize) -> Result<()> {
    if cutoff == 0 || cutoff > horizon {
        return Err(Error::CutoffOutOfRange { cutoff, horizon });
    }
    Ok(())
}

pub fn dct_forward(x: &Trajectory) -> SpectralCoeffs {
    DctBasis::new(x.horizon).forward(x)
}

pub fn dct_inverse(c: &SpectralCoeffs) -> Trajectory {
    DctBasis::new(c.0.horizon).inverse(c)
}

/// Zeroes every coefficient with frequency index `>= cutoff`.
pub fn lowpass_project(c: &SpectralCoeffs, cutoff: usize) -> Result<SpectralCoeffs> {
    check_cutoff(cutoff, c.0.horizon)?;
    let mut out = c.clone();
    let a = c.0.dims;
    for v in &mut out.0.values[cutoff * a..] {
        *v = 0.0;
    }
    Ok(out)
}

/// `x = semantic + execution`, with `semantic` in the span of the lowest
/// `cutoff` DCT modes and `execution` in its orthogonal complement.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralDecomposition {
    pub semantic: Trajectory,
    pub execution: Trajectory,
    pub cutoff: usize,
}

pub fn decompose(x: &Trajectory, cutoff: usize) -> Result<SpectralDecomposition> {
    decompose_with(&DctBasis::new(x.horizon), x, cutoff)
}

pub fn decompose_with(
    basis: &DctBasis,
    x: &Trajectory,
    cutoff: usize,
) -> Result<SpectralDecomposition> {
    if basis.horizon != x.horizon {
        return Err(Error::Shape(format!(
            "basis for T={} applied to T={}",
            basis.horizon, x.horizon
        )));
    }
    let low = lowpass_project(&basis.forward(x), cutoff)?;
    let semantic = basis.inverse(&low);
    let execution = x.sub(&semantic)?;
    Ok(SpectralDecomposition {
        semantic,
        execution,
        cutoff,
    })
}

/// Low-pass filters a batch of flattened trajectories (`rows × T·A`).
pub fn lowpass_rows(
    basis: &DctBasis,
    rows: &[f64],
    dims: usize,
    cutoff: usize,
) -> Result<Vec<f64>> {
    let t = basis.horizon;
    let width = t * dims;
    if width == 0 || !rows.len().is_multiple_of(width) {
        return Err(Error::Shape(format!(
            "{} values is not a whole number of {}x{} trajectories",
            rows.len(),
            t,
            dims
        )));
    }
    let p = basis.lowpass_matrix(cutoff)?;
    let mut out = vec![0.0; rows.len()];
    for (src, dst) in rows.chunks(width).zip(out.chunks_mut(width)) {
        for i in 0..t {
            for j in 0..t {
                let pij = p[i * t + j];
                for d in 0..dims {
                    dst[i * dims + d] += pij * src[j * dims + d];
                }
            }
        }
    }
    Ok(out)
}
