//! Reverse-mode differentiation over a small fixed primitive set.
//!
//! A [`Tape`] records every value produced by a forward pass together with
//! the primitive that produced it. [`Tape::backward`] walks the record in
//! reverse and accumulates adjoints. Nodes built only from constants are
//! never differentiated.

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    /// Every primitive output is rounded through `f32`.
    F32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Gelu(usize),
    MeanSquare(usize),
    Concat(Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self {
            nodes: Vec::new(),
            precision,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        if self.precision == Precision::F32 {
            for x in value.data_mut() {
                *x = *x as f32 as f64;
            }
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input treated as constant: no gradient flows into or through it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(out, Op::MatMul(a.0, b.0), rg))
    }

    /// `a + bias` with `bias` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let out = tensor::add_row(self.value(a), self.value(bias))?;
        let rg = self.rg(a.0) || self.rg(bias.0);
        Ok(self.push(out, Op::AddRow(a.0, bias.0), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(out, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(out, Op::Sub(a.0, b.0), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(out, Op::Mul(a.0, b.0), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        let rg = self.rg(a.0);
        self.push(out, Op::Scale(a.0, s), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a.0);
        self.push(out, Op::Tanh(a.0), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        let rg = self.rg(a.0);
        self.push(out, Op::Gelu(a.0), rg)
    }

    /// Mean of squared entries, as a scalar.
    pub fn mean_square(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.numel().max(1) as f64;
        let out = Tensor::scalar(x.sq_norm() / n);
        let rg = self.rg(a.0);
        self.push(out, Op::MeanSquare(a.0), rg)
    }

    /// Column-wise concatenation of 2-D values.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let out = tensor::concat_cols(&vals)?;
        let rg = parts.iter().any(|v| self.rg(v.0));
        Ok(self.push(out, Op::Concat(parts.iter().map(|v| v.0).collect()), rg))
    }

    /// Adjoints of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = tensor::matmul_nt(&g, &self.nodes[*b].value)?;
                        accumulate(&mut grads, *a, ga)?;
                    }
                    if self.rg(*b) {
                        let gb = tensor::matmul_tn(&self.nodes[*a].value, &g)?;
                        accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.rg(*bias) {
                        let m = g.cols();
                        let mut gb = vec![0.0; m];
                        for row in g.data().chunks(m.max(1)) {
                            for (acc, x) in gb.iter_mut().zip(row) {
                                *acc += x;
                            }
                        }
                        let shape = self.nodes[*bias].value.shape().to_vec();
                        accumulate(&mut grads, *bias, Tensor::new(shape, gb)?)?;
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g)?;
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.scale(-1.0))?;
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let ga = g.zip_map(&self.nodes[*b].value, |x, y| x * y)?;
                        accumulate(&mut grads, *a, ga)?;
                    }
                    if self.rg(*b) {
                        let gb = g.zip_map(&self.nodes[*a].value, |x, y| x * y)?;
                        accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s))?,
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * (1.0 - y * y))?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Gelu(a) => {
                    let ga = g.zip_map(&self.nodes[*a].value, |x, z| x * gelu_grad(z))?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::MeanSquare(a) => {
                    let x = &self.nodes[*a].value;
                    let c = 2.0 * g.item() / x.numel().max(1) as f64;
                    accumulate(&mut grads, *a, x.scale(c))?;
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.cols();
                        if self.rg(p) {
                            let gp = g.slice_cols(start, w);
                            let shape = self.nodes[p].value.shape().to_vec();
                            accumulate(&mut grads, p, gp.reshape(&shape)?)?;
                        }
                        start += w;
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) -> Result<()> {
    match &mut grads[idx] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when no path connects it to the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, zero-filled when disconnected.
    pub fn wrt_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Gradients of a scalar-valued function of parameter tensors.
///
/// `f` records its computation on the supplied tape, reading parameters from
/// the given vars, and returns the loss var.
pub fn grad<F>(params: &[Tensor], f: F) -> Result<(f64, Vec<Tensor>)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let gs = tape.backward(loss)?;
    let value = tape.value(loss).item();
    let out = vars
        .iter()
        .zip(params)
        .map(|(v, p)| gs.wrt_or_zeros(*v, p.shape()))
        .collect();
    Ok((value, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::{RngStream, StreamLabel};

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    /// Central finite differences of `f` at `params`, one coordinate at a time.
    fn finite_diff(params: &[Tensor], h: f64, f: &dyn Fn(&[Tensor]) -> f64) -> Vec<Tensor> {
        let mut out = Vec::new();
        for (pi, p) in params.iter().enumerate() {
            let mut g = Tensor::zeros(p.shape());
            for j in 0..p.numel() {
                let mut plus = params.to_vec();
                plus[pi].data_mut()[j] += h;
                let mut minus = params.to_vec();
                minus[pi].data_mut()[j] -= h;
                g.data_mut()[j] = (f(&plus) - f(&minus)) / (2.0 * h);
            }
            out.push(g);
        }
        out
    }

    #[test]
    fn square_at_three() {
        let (v, g) = grad(&[Tensor::scalar(3.0)], |t, p| {
            let sq = t.mul(p[0], p[0])?;
            Ok(sq)
        })
        .unwrap();
        assert_eq!(v, 9.0);
        assert_eq!(g[0].item(), 6.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let err = grad(&[Tensor::zeros(&[2])], |_, p| Ok(p[0])).unwrap_err();
        assert!(err.to_string().contains("loss must be scalar"));
    }

    #[test]
    fn linear_least_squares_matches_finite_differences() {
        let x = Tensor::new(vec![4, 1], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let y = Tensor::new(vec![4, 1], vec![1.0, -2.5, 3.0, 0.0]).unwrap();
        let w = Tensor::new(vec![1, 1], vec![0.7]).unwrap();
        let loss_of = |p: &[Tensor]| -> f64 {
            let wx = tensor::matmul(&x, &p[0]).unwrap();
            wx.sub(&y).unwrap().sq_norm() / 4.0
        };
        let (_, g) = grad(std::slice::from_ref(&w), |t, p| {
            let xv = t.constant(x.clone());
            let yv = t.constant(y.clone());
            let wx = t.matmul(xv, p[0])?;
            let d = t.sub(wx, yv)?;
            Ok(t.mean_square(d))
        })
        .unwrap();
        let fd = finite_diff(&[w], 1e-6, &loss_of);
        assert!(rel_err(g[0].item(), fd[0].item()) < 1e-6);
    }

    fn mlp_loss_tape(t: &mut Tape, p: &[Var], x: &Tensor, y: &Tensor, gelu_act: bool) -> Result<Var> {
        let xv = t.constant(x.clone());
        let yv = t.constant(y.clone());
        let h = t.matmul(xv, p[0])?;
        let h = t.add_row(h, p[1])?;
        let h = if gelu_act { t.gelu(h) } else { t.tanh(h) };
        let o = t.matmul(h, p[2])?;
        let o = t.add_row(o, p[3])?;
        let d = t.sub(o, yv)?;
        Ok(t.mean_square(d))
    }

    #[test]
    fn two_layer_mlp_matches_finite_differences() {
        let mut rng = RngStream::new(7, StreamLabel::Init);
        let x = rng.normal_tensor(&[5, 3]);
        let y = rng.normal_tensor(&[5, 2]);
        let params = vec![
            rng.normal_tensor(&[3, 4]),
            rng.normal_tensor(&[4]),
            rng.normal_tensor(&[4, 2]),
            rng.normal_tensor(&[2]),
        ];
        for gelu_act in [false, true] {
            let (_, g) = grad(&params, |t, p| mlp_loss_tape(t, p, &x, &y, gelu_act)).unwrap();
            let f = |p: &[Tensor]| {
                let mut t = Tape::new();
                let vars: Vec<Var> = p.iter().map(|q| t.constant(q.clone())).collect();
                let l = mlp_loss_tape(&mut t, &vars, &x, &y, gelu_act).unwrap();
                t.value(l).item()
            };
            let fd = finite_diff(&params, 1e-6, &f);
            for (a, b) in g.iter().zip(&fd) {
                for (u, v) in a.data().iter().zip(b.data()) {
                    assert!(rel_err(*u, *v) < 1e-4, "{u} vs {v}");
                }
            }
        }
    }

    #[test]
    fn concat_and_scale_route_gradients() {
        let a = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![3.0, -1.0, 0.5, 4.0]).unwrap();
        let (v, g) = grad(&[a, b], |t, p| {
            let c = t.concat(&[p[0], p[1]])?;
            let c = t.scale(c, 2.0);
            Ok(t.mean_square(c))
        })
        .unwrap();
        // mean((2z)^2) over 6 entries; d/dz = 8z/6
        let total: f64 = [1.0, 2.0, 3.0, -1.0, 0.5, 4.0f64].iter().map(|z| 4.0 * z * z).sum();
        assert!((v - total / 6.0).abs() < 1e-12);
        assert!((g[0].data()[1] - 8.0 * 2.0 / 6.0).abs() < 1e-12);
        assert!((g[1].data()[3] - 8.0 * 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::scalar(2.0));
        let p = t.param(Tensor::scalar(5.0));
        let m = t.mul(c, p).unwrap();
        let l = t.mean_square(m);
        let g = t.backward(l).unwrap();
        assert!(g.wrt(c).is_none());
        assert_eq!(g.wrt(p).unwrap().item(), 2.0 * 10.0 * 2.0);
    }

    #[test]
    fn single_precision_rounds_outputs() {
        let mut t = Tape::with_precision(Precision::F32);
        let v = t.param(Tensor::scalar(0.1));
        assert_eq!(t.value(v).item(), 0.1f32 as f64);
    }
}
