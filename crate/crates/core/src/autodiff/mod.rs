//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node appended to a tape. Nodes
//! only ever reference earlier nodes, so walking the tape backwards is a
//! reverse topological order and each node is visited exactly once.

pub mod kernels;

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use kernels::Padding;
use kernels::ConvGeom;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch statistics observed by a training-mode batch-norm node.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of values averaged per channel.
    pub count: usize,
}

#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a> {
    Train { eps: f64 },
    Eval { mean: &'a [f64], var: &'a [f64], eps: f64 },
}

enum Op<'a> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    MaskMul {
        input: Var,
        mask: Cow<'a, [f64]>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalMeanPool {
        input: Var,
    },
    Relu {
        input: Var,
    },
    BatchNormTrain {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        input: Var,
        gamma: Var,
        beta: Var,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sum {
        input: Var,
    },
    WeightedSum {
        input: Var,
        weights: Cow<'a, [f64]>,
    },
    SoftCrossEntropy {
        logits: Var,
        targets: Vec<f64>,
        log_probs: Vec<f64>,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op<'a>,
    requires_grad: bool,
}

/// Recording tape. Parameters may be borrowed for the lifetime `'a` so a
/// forward pass does not copy network weights.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op<'a>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Owned leaf.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    /// Borrowed leaf, typically a network parameter.
    pub fn leaf_ref(&mut self, value: &'a Tensor, requires_grad: bool) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, requires_grad)
    }

    /// Constant input that never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads[v.0].take()
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.value(input).shape(), self.value(weight).shape(), stride, padding)?;
        if let Some(b) = bias {
            let bs = self.value(b).shape();
            if bs != [geom.cout] {
                return Err(Error::dim("bias", format!("expected [{}], got {:?}", geom.cout, bs)));
            }
        }
        let out = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        let t = Tensor::new(geom.out_shape().to_vec(), out)?;
        Ok(self.push(
            Cow::Owned(t),
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Elementwise product with a constant mask (no gradient to the mask).
    pub fn mask_mul(&mut self, input: Var, mask: Cow<'a, [f64]>) -> Result<Var> {
        let x = self.value(input);
        if mask.len() != x.len() {
            return Err(Error::dim(
                "mask",
                format!("mask has {} entries, tensor {:?} has {}", mask.len(), x.shape(), x.len()),
            ));
        }
        let data = x.data().iter().zip(mask.iter()).map(|(a, m)| a * m).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(input);
        Ok(self.push(Cow::Owned(t), Op::MaskMul { input, mask }, rg))
    }

    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (shape, out, argmax) = kernels::maxpool2x2_forward(x.shape(), x.data())?;
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(input);
        Ok(self.push(Cow::Owned(t), Op::MaxPool { input, argmax }, rg))
    }

    pub fn global_mean_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (shape, out) = kernels::global_mean_pool_forward(x.shape(), x.data())?;
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(input);
        Ok(self.push(Cow::Owned(t), Op::GlobalMeanPool { input }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let t = Tensor::new(x.shape().to_vec(), kernels::relu(x.data())).expect("same shape");
        let rg = self.rg(input);
        self.push(Cow::Owned(t), Op::Relu { input }, rg)
    }

    /// Per-channel batch normalization over (batch, frequency, time). In
    /// training mode the observed batch statistics are returned so the
    /// caller can update running estimates.
    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var, mode: BnMode<'_>) -> Result<(Var, Option<BatchStats>)> {
        let x = self.value(input);
        let (b, c, f, t) = x.dims4()?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::dim(name, format!("expected [{}], got {:?}", c, self.value(v).shape())));
            }
        }
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        let shape = x.shape().to_vec();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        match mode {
            BnMode::Train { eps } => {
                let (mean, var) = kernels::channel_stats(&shape, x.data());
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let shift: Vec<f64> = mean.iter().zip(&inv_std).map(|(m, s)| -m * s).collect();
                let xhat = kernels::channel_affine(&shape, x.data(), &inv_std, &shift);
                let zero = vec![0.0; c];
                let scaled = kernels::channel_affine(&shape, &xhat, g, &zero);
                let y = kernels::channel_affine(&shape, &scaled, &vec![1.0; c], bt);
                let out = self.push(
                    Cow::Owned(Tensor::new(shape, y)?),
                    Op::BatchNormTrain {
                        input,
                        gamma,
                        beta,
                        xhat,
                        inv_std,
                    },
                    rg,
                );
                Ok((
                    out,
                    Some(BatchStats {
                        mean,
                        var,
                        count: b * f * t,
                    }),
                ))
            }
            BnMode::Eval { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::dim("running stats", format!("expected {} channels", c)));
                }
                let (scale, shift) = kernels::bn_eval_coeffs(g, bt, mean, var, eps);
                let y = kernels::channel_affine(&shape, x.data(), &scale, &shift);
                let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let out = self.push(
                    Cow::Owned(Tensor::new(shape, y)?),
                    Op::BatchNormEval {
                        input,
                        gamma,
                        beta,
                        inv_std,
                        mean: mean.to_vec(),
                    },
                    rg,
                );
                Ok((out, None))
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (xa, xb) = (self.value(a), self.value(b));
        if xa.shape() != xb.shape() {
            let axis = xa
                .shape()
                .iter()
                .zip(xb.shape())
                .position(|(p, q)| p != q)
                .map_or("rank".to_string(), |i| format!("axis {}", i));
            return Err(Error::dim(axis, format!("residual add of {:?} and {:?}", xa.shape(), xb.shape())));
        }
        let data = xa.data().iter().zip(xb.data()).map(|(p, q)| p + q).collect();
        let t = Tensor::new(xa.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(t), Op::Add { a, b }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().sum();
        let rg = self.rg(input);
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum { input }, rg)
    }

    /// Scalar `sum_i w_i x_i` against constant weights.
    pub fn weighted_sum(&mut self, input: Var, weights: Cow<'a, [f64]>) -> Result<Var> {
        let x = self.value(input);
        if weights.len() != x.len() {
            return Err(Error::dim("weights", format!("{} weights for {} values", weights.len(), x.len())));
        }
        let s = x.data().iter().zip(weights.iter()).map(|(a, w)| a * w).sum();
        let rg = self.rg(input);
        Ok(self.push(Cow::Owned(Tensor::scalar(s)), Op::WeightedSum { input, weights }, rg))
    }

    /// Mean over the batch of the cross-entropy between `softmax(logits)`
    /// and soft target rows. With a mixup target `l*e_i + (1-l)*e_j` this is
    /// exactly `l*CE(i) + (1-l)*CE(j)`.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: Vec<f64>) -> Result<Var> {
        let x = self.value(logits);
        let (rows, classes) = match x.shape()[..] {
            [r, c] => (r, c),
            _ => return Err(Error::dim("logits rank", format!("expected [batch, classes], got {:?}", x.shape()))),
        };
        if targets.len() != rows * classes {
            return Err(Error::dim("targets", format!("expected {} entries, got {}", rows * classes, targets.len())));
        }
        let log_probs = kernels::log_softmax(x.data(), classes);
        let loss = -log_probs.iter().zip(&targets).map(|(l, t)| l * t).sum::<f64>() / rows as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(loss)),
            Op::SoftCrossEntropy {
                logits,
                targets,
                log_probs,
            },
            rg,
        ))
    }

    /// Backpropagates from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.value(loss).len();
        if n != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_with(loss, vec![1.0])
    }

    /// Backpropagates an explicit upstream gradient seeded at `root`.
    pub fn backward_with(&mut self, root: Var, seed: Vec<f64>) -> Result<()> {
        if seed.len() != self.value(root).len() {
            return Err(Error::dim("seed", format!("{} values for a tensor of {}", seed.len(), self.value(root).len())));
        }
        if !self.rg(root) {
            return Err(Error::Contract("root is not connected to any leaf that requires a gradient".into()));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = self.grads[i].take() else { continue };
            let contribs = self.local_backward(i, &gy);
            self.grads[i] = Some(gy);
            for (v, g) in contribs {
                accumulate(&mut self.grads[v.0], g);
            }
        }
        Ok(())
    }

    fn local_backward(&self, i: usize, gy: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let need_b = bias.is_some_and(|b| self.rg(b));
                let (dx, dw, db) = kernels::conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    gy,
                    self.rg(*input),
                    self.rg(*weight),
                    need_b,
                );
                if let Some(dx) = dx {
                    out.push((*input, dx));
                }
                if let Some(dw) = dw {
                    out.push((*weight, dw));
                }
                if let (Some(b), Some(db)) = (bias, db) {
                    out.push((*b, db));
                }
            }
            Op::MaskMul { input, mask } => {
                out.push((*input, gy.iter().zip(mask.iter()).map(|(g, m)| g * m).collect()));
            }
            Op::MaxPool { input, argmax } => {
                let mut dx = vec![0.0; self.value(*input).len()];
                for (g, &idx) in gy.iter().zip(argmax) {
                    dx[idx] += g;
                }
                out.push((*input, dx));
            }
            Op::GlobalMeanPool { input } => {
                let x = self.value(*input);
                let hw = x.shape()[2] * x.shape()[3];
                let n = hw as f64;
                let mut dx = Vec::with_capacity(x.len());
                for g in gy {
                    dx.extend(std::iter::repeat_n(g / n, hw));
                }
                out.push((*input, dx));
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                out.push((*input, gy.iter().zip(x).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect()));
            }
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let shape = self.value(*input).shape();
                let (b, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                let g = self.value(*gamma).data();
                let n = (b * hw) as f64;
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for bi in 0..b {
                    for ch in 0..c {
                        let off = (bi * c + ch) * hw;
                        for k in off..off + hw {
                            sum_dy[ch] += gy[k];
                            sum_dy_xhat[ch] += gy[k] * xhat[k];
                        }
                    }
                }
                if self.rg(*input) {
                    let mut dx = vec![0.0; gy.len()];
                    for bi in 0..b {
                        for ch in 0..c {
                            let off = (bi * c + ch) * hw;
                            let k0 = g[ch] * inv_std[ch] / n;
                            for k in off..off + hw {
                                dx[k] = k0 * (n * gy[k] - sum_dy[ch] - xhat[k] * sum_dy_xhat[ch]);
                            }
                        }
                    }
                    out.push((*input, dx));
                }
                out.push((*gamma, sum_dy_xhat));
                out.push((*beta, sum_dy));
            }
            Op::BatchNormEval {
                input,
                gamma,
                beta,
                inv_std,
                mean,
            } => {
                let x = self.value(*input);
                let shape = x.shape();
                let (c, hw) = (shape[1], shape[2] * shape[3]);
                let g = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = Vec::with_capacity(gy.len());
                for (blk, (gchunk, xchunk)) in gy.chunks(hw).zip(x.data().chunks(hw)).enumerate() {
                    let ch = blk % c;
                    for (&gv, &xv) in gchunk.iter().zip(xchunk) {
                        dbeta[ch] += gv;
                        dgamma[ch] += gv * (xv - mean[ch]) * inv_std[ch];
                        dx.push(gv * g[ch] * inv_std[ch]);
                    }
                }
                if self.rg(*input) {
                    out.push((*input, dx));
                }
                out.push((*gamma, dgamma));
                out.push((*beta, dbeta));
            }
            Op::Add { a, b } => {
                out.push((*a, gy.to_vec()));
                out.push((*b, gy.to_vec()));
            }
            Op::Sum { input } => {
                out.push((*input, vec![gy[0]; self.value(*input).len()]));
            }
            Op::WeightedSum { input, weights } => {
                out.push((*input, weights.iter().map(|w| w * gy[0]).collect()));
            }
            Op::SoftCrossEntropy {
                logits,
                targets,
                log_probs,
            } => {
                let rows = self.value(*logits).shape()[0] as f64;
                let scale = gy[0] / rows;
                out.push((
                    *logits,
                    log_probs.iter().zip(targets).map(|(lp, t)| scale * (lp.exp() - t)).collect(),
                ));
            }
        }
        out.retain(|(v, _)| self.rg(*v));
        out
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn scalar_conv_is_affine() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 1, 1, 1], &[3.0]));
        let w = g.leaf(t(&[1, 1, 1, 1], &[-2.0]), true);
        let b = g.leaf(t(&[1], &[0.5]), true);
        let y = g.conv2d(x, w, Some(b), (1, 1), Padding::Same).unwrap();
        assert_eq!(g.value(y).data(), &[3.0 * -2.0 + 0.5]);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let data: Vec<f64> = (0..16).map(|i| i as f64 * 0.25 - 1.0).collect();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let mut g = Graph::new();
        let x = g.input(t(&[1, 1, 4, 4], &data));
        let w = g.leaf(t(&[1, 1, 3, 3], &k), false);
        let b = g.leaf(t(&[1], &[0.0]), false);
        let y = g.conv2d(x, w, Some(b), (1, 1), Padding::Same).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn zero_kernel_outputs_bias() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[2, 3, 5, 4], 1.7));
        let w = g.leaf(Tensor::zeros(&[2, 3, 3, 3]), false);
        let b = g.leaf(t(&[2], &[0.25, -4.0]), false);
        let y = g.conv2d(x, w, Some(b), (2, 1), Padding::Same).unwrap();
        let out = g.value(y);
        assert_eq!(out.shape(), &[2, 2, 3, 4]);
        for (i, v) in out.data().iter().enumerate() {
            let ch = (i / 12) % 2;
            assert_eq!(*v, [0.25, -4.0][ch]);
        }
    }

    #[test]
    fn maxpool_examples() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), true);
        let y = g.maxpool2x2(x).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 0.0, 1.0]);

        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[1, 1, 256, 431], 2.5));
        let y = g.maxpool2x2(x).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 128, 215]);
        assert!(g.value(y).data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn maxpool_rejects_tiny_maps() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 1, 1, 4]));
        assert!(matches!(g.maxpool2x2(x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn global_mean_pool_examples() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), true);
        let y = g.global_mean_pool(x).unwrap();
        assert_eq!(g.value(y).data(), &[2.5]);
        let s = g.weighted_sum(y, Cow::Owned(vec![8.0])).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0; 4]);
    }

    #[test]
    fn relu_and_residual() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 1, 1, 2], &[-1.0, 2.0]), true);
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
        let z = g.input(Tensor::zeros(&[1, 1, 1, 2]));
        let r = g.add(x, z).unwrap();
        assert_eq!(g.value(r).data(), &[-1.0, 2.0]);
        let bad = g.input(Tensor::zeros(&[1, 2, 1, 2]));
        assert!(matches!(g.add(x, bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn batch_norm_of_standardized_batch_is_identity() {
        // per channel: values {-1, 1} twice -> mean 0, variance 1
        let data = [-1.0, 1.0, 1.0, -1.0, 2f64.sqrt(), -(2f64.sqrt()), 0.0, 0.0];
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2, 2, 2], &data));
        let gamma = g.leaf(Tensor::full(&[2], 1.0), true);
        let beta = g.leaf(Tensor::zeros(&[2]), true);
        let (y, stats) = g.batch_norm(x, gamma, beta, BnMode::Train { eps: 1e-5 }).unwrap();
        let stats = stats.unwrap();
        assert_eq!(stats.count, 4);
        for (a, b) in g.value(y).data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-5, "{} vs {}", a, b);
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[2, 3], 0.3), true);
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn fan_out_gradients_accumulate() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 1, 1, 3], &[1.0, -2.0, 3.0]), true);
        let y = g.add(x, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0; 3]);
    }

    #[test]
    fn backward_on_non_scalar_is_contract_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2]), true);
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn soft_cross_entropy_matches_mixed_hard_losses() {
        let logits = [0.3, -1.2, 2.0, 0.0, 0.5, -0.5];
        let lam = 0.7;
        let mut g = Graph::new();
        let x = g.leaf(t(&[2, 3], &logits), true);
        let targets = vec![lam, 0.0, 1.0 - lam, 0.0, 1.0, 0.0];
        let l = g.soft_cross_entropy(x, targets).unwrap();
        let ls = kernels::log_softmax(&logits, 3);
        let expect = -(lam * ls[0] + (1.0 - lam) * ls[2] + ls[4]) / 2.0;
        assert!((g.value(l).data()[0] - expect).abs() < 1e-12);
    }
}
