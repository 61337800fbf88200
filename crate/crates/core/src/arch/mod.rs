//! The scalable residual CNN family.
//!
//! | repeat | channels | block                         |
//! |--------|----------|-------------------------------|
//! |        | W        | input conv 5x5, stride 2      |
//! | 1      | W        | residual 3x3, 1x1, pool       |
//! | 1      | W        | residual 3x3, 3x3, pool       |
//! | 1      | W        | residual 3x3, 3x3             |
//! | 1      | W        | residual 3x3, 3x3, pool       |
//! | D      | 2W       | residual 3x3, 3x3             |
//! | K      | 4W       | residual 1x1, 1x1             |
//! |        |          | 1x1 classifier, global mean   |
//!
//! Pools are 2x2 max pools applied after the residual addition. Every conv
//! is followed by batch norm except the classifier.

pub mod checkpoint;
pub mod rf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::{self, ConvGeom};
use crate::autodiff::{BatchStats, BnMode, Graph, Padding, Var};
use crate::damping::{make_damping_mask_with, DampingMask, DecayKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use rf::{max_receptive_field, ReceptiveField, RfBox};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Widths of the full-scale width sweep.
pub const STUDY_WIDTHS: [usize; 7] = [32, 64, 128, 192, 256, 384, 512];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Base channel width `W`.
    pub width: usize,
    /// Number of 3x3 residual blocks at `2W` channels.
    pub depth: usize,
    /// Number of 1x1 residual blocks at `4W` channels.
    pub k_blocks: usize,
    pub damped: bool,
    pub damping_floor: f64,
    #[serde(default)]
    pub decay: DecayKind,
    pub num_classes: usize,
    #[serde(default = "one")]
    pub in_channels: usize,
}

fn one() -> usize {
    1
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            width: 32,
            depth: 1,
            k_blocks: 1,
            damped: false,
            damping_floor: 0.1,
            decay: DecayKind::Linear,
            num_classes: 10,
            in_channels: 1,
        }
    }
}

impl ArchConfig {
    pub fn new(width: usize, depth: usize, k_blocks: usize) -> Self {
        ArchConfig {
            width,
            depth,
            k_blocks,
            ..Default::default()
        }
    }

    pub fn with_damping(mut self, floor: f64) -> Self {
        self.damped = true;
        self.damping_floor = floor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::Config("width W must be positive".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("depth D must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.damping_floor) {
            return Err(Error::Config(format!("damping floor {} outside [0, 1]", self.damping_floor)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("need at least one input channel".into()));
        }
        Ok(())
    }

    /// Short identifier used in file names and summaries.
    pub fn tag(&self) -> String {
        format!(
            "W{}-D{}-K{}{}",
            self.width,
            self.depth,
            self.k_blocks,
            if self.damped { "-damped" } else { "" }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Index of the batch norm following this conv, if any.
    pub bn: Option<usize>,
    pub damped: bool,
    /// Whether the weight tensor takes part in pruning.
    pub prunable: bool,
}

impl ConvSpec {
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.cout, self.cin, self.kernel, self.kernel]
    }

    pub fn weight_count(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        self.weight_count() + self.cout
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub conv1: usize,
    pub conv2: usize,
    pub shortcut: Option<usize>,
    pub pool: bool,
}

/// Weight-free description of a network: conv list, blocks and BN widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub config: ArchConfig,
    pub convs: Vec<ConvSpec>,
    pub bn_channels: Vec<usize>,
    pub stem: usize,
    pub blocks: Vec<BlockSpec>,
    pub classifier: usize,
}

impl Architecture {
    pub fn plan(cfg: &ArchConfig) -> Result<Self> {
        cfg.validate()?;
        let mut arch = Architecture {
            config: cfg.clone(),
            convs: Vec::new(),
            bn_channels: Vec::new(),
            stem: 0,
            blocks: Vec::new(),
            classifier: 0,
        };
        let w = cfg.width;
        arch.stem = arch.add_conv("input", cfg.in_channels, w, 5, 2, true, true);
        let rows = [(3, 1, true), (3, 3, true), (3, 3, false), (3, 3, true)];
        let mut c = w;
        for (i, &(k1, k2, pool)) in rows.iter().enumerate() {
            arch.add_block(format!("row{}", i + 1), c, w, k1, k2, pool);
            c = w;
        }
        for d in 0..cfg.depth {
            arch.add_block(format!("depth{}", d + 1), c, 2 * w, 3, 3, false);
            c = 2 * w;
        }
        for k in 0..cfg.k_blocks {
            arch.add_block(format!("point{}", k + 1), c, 4 * w, 1, 1, false);
            c = 4 * w;
        }
        arch.classifier = arch.add_conv("classifier", c, cfg.num_classes, 1, 1, false, false);
        Ok(arch)
    }

    #[allow(clippy::too_many_arguments)]
    fn add_conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, bn: bool, prunable: bool) -> usize {
        let bn = bn.then(|| {
            self.bn_channels.push(cout);
            self.bn_channels.len() - 1
        });
        self.convs.push(ConvSpec {
            name: name.to_string(),
            cin,
            cout,
            kernel,
            stride,
            bn,
            damped: self.config.damped && kernel > 1,
            prunable,
        });
        self.convs.len() - 1
    }

    fn add_block(&mut self, name: String, cin: usize, cout: usize, k1: usize, k2: usize, pool: bool) {
        let conv1 = self.add_conv(&format!("{}.conv1", name), cin, cout, k1, 1, true, true);
        let conv2 = self.add_conv(&format!("{}.conv2", name), cout, cout, k2, 1, true, true);
        let shortcut = (cin != cout).then(|| self.add_conv(&format!("{}.shortcut", name), cin, cout, 1, 1, true, true));
        self.blocks.push(BlockSpec {
            name,
            conv1,
            conv2,
            shortcut,
            pool,
        });
    }

    /// Number of residual blocks (fixed rows plus D and K blocks).
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Trainable scalars of the unpruned network.
    pub fn param_count(&self) -> usize {
        self.convs.iter().map(ConvSpec::param_count).sum::<usize>() + 2 * self.bn_channels.iter().sum::<usize>()
    }

    /// Weights of the prunable conv layers.
    pub fn prunable_count(&self) -> usize {
        self.convs.iter().filter(|c| c.prunable).map(ConvSpec::weight_count).sum()
    }

    /// Output shape for a (B, C, F, T) input, without running the network.
    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 2]> {
        let [b, _, mut f, mut t] = input;
        let conv = |f: usize, t: usize, c: &ConvSpec| {
            ConvGeom::new(&[b, c.cin, f, t], &c.weight_shape(), (c.stride, c.stride), Padding::Same).map(|g| (g.fo, g.to))
        };
        (f, t) = conv(f, t, &self.convs[self.stem])?;
        for blk in &self.blocks {
            (f, t) = conv(f, t, &self.convs[blk.conv1])?;
            (f, t) = conv(f, t, &self.convs[blk.conv2])?;
            if blk.pool {
                if f < 2 || t < 2 {
                    return Err(Error::dim("spatial", format!("{}: map {}x{} too small to pool", blk.name, f, t)));
                }
                (f, t) = (f / 2, t / 2);
            }
        }
        Ok([b, self.config.num_classes])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weight: Tensor,
    pub bias: Tensor,
    pub damping: Option<DampingMask>,
    /// Retained positions (`true`) when the layer has been pruned.
    pub prune_mask: Option<Vec<bool>>,
}

impl ConvLayer {
    pub fn retained_weights(&self) -> usize {
        match &self.prune_mask {
            Some(m) => m.iter().filter(|&&k| k).count(),
            None => self.weight.len(),
        }
    }

    /// Weights as seen by the convolution (weight times damping mask).
    pub fn effective_weight(&self) -> Vec<f64> {
        match &self.damping {
            Some(m) => self.weight.data().iter().zip(m.values()).map(|(w, c)| w * c).collect(),
            None => self.weight.data().to_vec(),
        }
    }

    pub fn apply_prune_mask(&mut self) {
        if let Some(mask) = &self.prune_mask {
            for (w, &keep) in self.weight.data_mut().iter_mut().zip(mask) {
                if !keep {
                    *w = 0.0;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(c: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[c], 1.0),
            beta: Tensor::zeros(&[c]),
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
        }
    }

    fn update_running(&mut self, stats: &BatchStats) {
        let unbias = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        for c in 0..self.running_mean.len() {
            self.running_mean[c] = (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * stats.mean[c];
            self.running_var[c] = (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * stats.var[c] * unbias;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running estimates updated afterwards.
    Train,
    /// Running statistics.
    Eval,
}

/// Vars produced by one taped forward pass.
pub struct ForwardPass {
    pub logits: Var,
    /// Feature map feeding the classifier conv.
    pub penultimate: Var,
    /// One var per trainable tensor, in [`Network::params`] order.
    pub params: Vec<Var>,
    pub bn_stats: Vec<(usize, BatchStats)>,
}

/// A built network: architecture plus weights, damping and prune masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub seed: u64,
    pub convs: Vec<ConvLayer>,
    pub bns: Vec<BatchNorm>,
    /// Affine input standardization `(x - mean) / std`.
    pub input_norm: (f64, f64),
}

pub fn build_network(cfg: &ArchConfig, seed: u64) -> Result<Network> {
    let arch = Architecture::plan(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut convs = Vec::with_capacity(arch.convs.len());
    for spec in &arch.convs {
        let fan_in = (spec.cin * spec.kernel * spec.kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let data: Vec<f64> = (0..spec.weight_count()).map(|_| normal.sample(&mut rng)).collect();
        let damping = if spec.damped {
            Some(make_damping_mask_with(spec.weight_shape(), cfg.damping_floor, cfg.decay)?)
        } else {
            None
        };
        convs.push(ConvLayer {
            weight: Tensor::new(spec.weight_shape().to_vec(), data)?,
            bias: Tensor::zeros(&[spec.cout]),
            spec: spec.clone(),
            damping,
            prune_mask: None,
        });
    }
    let bns = arch.bn_channels.iter().map(|&c| BatchNorm::new(c)).collect();
    Ok(Network {
        arch,
        seed,
        convs,
        bns,
        input_norm: (0.0, 1.0),
    })
}

impl Network {
    pub fn config(&self) -> &ArchConfig {
        &self.arch.config
    }

    /// Trainable tensors: every conv weight and bias, then every BN scale
    /// and shift.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(2 * (self.convs.len() + self.bns.len()));
        for c in &self.convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        for b in &self.bns {
            out.push(&b.gamma);
            out.push(&b.beta);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(2 * (self.convs.len() + self.bns.len()));
        for c in self.convs.iter_mut() {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for b in self.bns.iter_mut() {
            out.push(&mut b.gamma);
            out.push(&mut b.beta);
        }
        out
    }

    /// Prune mask for each entry of [`Network::params`] (only conv weights
    /// can carry one).
    pub fn param_masks(&self) -> Vec<Option<&[bool]>> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.push(c.prune_mask.as_deref());
            out.push(None);
        }
        for _ in &self.bns {
            out.push(None);
            out.push(None);
        }
        out
    }

    pub fn apply_prune_masks(&mut self) {
        for c in self.convs.iter_mut() {
            c.apply_prune_mask();
        }
    }

    pub fn is_pruned(&self) -> bool {
        self.convs.iter().any(|c| c.prune_mask.is_some())
    }

    pub fn prunable_layers(&self) -> Vec<usize> {
        (0..self.convs.len()).filter(|&i| self.convs[i].spec.prunable).collect()
    }

    pub fn retained_prunable(&self) -> usize {
        self.convs.iter().filter(|c| c.spec.prunable).map(ConvLayer::retained_weights).sum()
    }

    pub fn apply_bn_stats(&mut self, stats: &[(usize, BatchStats)]) {
        for (i, s) in stats {
            self.bns[*i].update_running(s);
        }
    }

    pub fn normalize_input(&self, x: &Tensor) -> Tensor {
        let (m, s) = self.input_norm;
        if m == 0.0 && s == 1.0 {
            return x.clone();
        }
        let data = x.data().iter().map(|v| (v - m) / s).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    /// Records a forward pass on `g`. `x` must already be normalized.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, x: Var, mode: Mode, param_grads: bool) -> Result<ForwardPass> {
        let mut params = Vec::with_capacity(2 * (self.convs.len() + self.bns.len()));
        for c in &self.convs {
            params.push(g.leaf_ref(&c.weight, param_grads));
            params.push(g.leaf_ref(&c.bias, param_grads));
        }
        for b in &self.bns {
            params.push(g.leaf_ref(&b.gamma, param_grads));
            params.push(g.leaf_ref(&b.beta, param_grads));
        }
        let mut stats = Vec::new();
        let nconv = self.convs.len();
        let conv_bn = |g: &mut Graph<'a>, x: Var, i: usize, stats: &mut Vec<(usize, BatchStats)>| -> Result<Var> {
            let layer = &self.convs[i];
            let w = params[2 * i];
            let w = match &layer.damping {
                Some(m) => g.mask_mul(w, std::borrow::Cow::Borrowed(m.values()))?,
                None => w,
            };
            let s = layer.spec.stride;
            let y = g.conv2d(x, w, Some(params[2 * i + 1]), (s, s), Padding::Same)?;
            let Some(bi) = layer.spec.bn else { return Ok(y) };
            let (gamma, beta) = (params[2 * nconv + 2 * bi], params[2 * nconv + 2 * bi + 1]);
            let bn = &self.bns[bi];
            let bn_mode = match mode {
                Mode::Train => BnMode::Train { eps: BN_EPS },
                Mode::Eval => BnMode::Eval {
                    mean: &bn.running_mean,
                    var: &bn.running_var,
                    eps: BN_EPS,
                },
            };
            let (y, st) = g.batch_norm(y, gamma, beta, bn_mode)?;
            if let Some(st) = st {
                stats.push((bi, st));
            }
            Ok(y)
        };
        let h = conv_bn(g, x, self.arch.stem, &mut stats)?;
        let mut h = g.relu(h);
        for blk in &self.arch.blocks {
            let a = conv_bn(g, h, blk.conv1, &mut stats)?;
            let a = g.relu(a);
            let a = conv_bn(g, a, blk.conv2, &mut stats)?;
            let skip = match blk.shortcut {
                Some(sc) => conv_bn(g, h, sc, &mut stats)?,
                None => h,
            };
            let sum = g.add(a, skip)?;
            h = g.relu(sum);
            if blk.pool {
                h = g.maxpool2x2(h)?;
            }
        }
        let penultimate = h;
        let out = conv_bn(g, h, self.arch.classifier, &mut stats)?;
        let logits = g.global_mean_pool(out)?;
        Ok(ForwardPass {
            logits,
            penultimate,
            params,
            bn_stats: stats,
        })
    }

    /// Tape-free evaluation-mode forward pass returning logits `[B, classes]`.
    /// Bit-identical to [`Network::forward`] in [`Mode::Eval`].
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let x = self.normalize_input(x);
        let conv_bn = |x: &Tensor, i: usize| -> Result<Tensor> {
            let layer = &self.convs[i];
            let s = layer.spec.stride;
            let geom = ConvGeom::new(x.shape(), layer.weight.shape(), (s, s), Padding::Same)?;
            let w = layer.effective_weight();
            let y = kernels::conv2d_forward(&geom, x.data(), &w, Some(layer.bias.data()));
            let shape = geom.out_shape().to_vec();
            let y = match layer.spec.bn {
                Some(bi) => {
                    let bn = &self.bns[bi];
                    let (scale, shift) = kernels::bn_eval_coeffs(bn.gamma.data(), bn.beta.data(), &bn.running_mean, &bn.running_var, BN_EPS);
                    kernels::channel_affine(&shape, &y, &scale, &shift)
                }
                None => y,
            };
            Tensor::new(shape, y)
        };
        let relu = |t: Tensor| Tensor::new(t.shape().to_vec(), kernels::relu(t.data())).expect("same shape");
        let mut h = relu(conv_bn(&x, self.arch.stem)?);
        for blk in &self.arch.blocks {
            let a = relu(conv_bn(&h, blk.conv1)?);
            let a = conv_bn(&a, blk.conv2)?;
            let skip = match blk.shortcut {
                Some(sc) => conv_bn(&h, sc)?,
                None => h,
            };
            let sum: Vec<f64> = a.data().iter().zip(skip.data()).map(|(p, q)| p + q).collect();
            h = Tensor::new(a.shape().to_vec(), kernels::relu(&sum))?;
            if blk.pool {
                let (shape, data, _) = kernels::maxpool2x2_forward(h.shape(), h.data())?;
                h = Tensor::new(shape, data)?;
            }
        }
        let out = conv_bn(&h, self.arch.classifier)?;
        let (shape, data) = kernels::global_mean_pool_forward(out.shape(), out.data())?;
        Tensor::new(shape, data)
    }
}

/// Trainable scalars; pruned layers contribute only their retained weights.
pub fn count_params(net: &Network) -> usize {
    let convs: usize = net.convs.iter().map(|c| c.retained_weights() + c.bias.len()).sum();
    let bns: usize = net.bns.iter().map(|b| b.gamma.len() + b.beta.len()).sum();
    convs + bns
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_counts_follow_the_table() {
        let a = Architecture::plan(&ArchConfig::new(32, 1, 1)).unwrap();
        assert_eq!(a.block_count(), 6);
        let b = Architecture::plan(&ArchConfig::new(32, 3, 1)).unwrap();
        let count = |a: &Architecture| a.blocks.iter().filter(|b| b.name.starts_with("depth")).count();
        assert_eq!(count(&b) - count(&a), 2);
        for blk in b.blocks.iter().filter(|b| b.name.starts_with("depth")) {
            assert_eq!(b.convs[blk.conv2].cout, 64);
            assert_eq!(b.convs[blk.conv1].kernel, 3);
            assert_eq!(b.convs[blk.conv2].kernel, 3);
        }
    }

    #[test]
    fn single_conv_param_count() {
        let spec = ConvSpec {
            name: "c".into(),
            cin: 32,
            cout: 32,
            kernel: 3,
            stride: 1,
            bn: None,
            damped: false,
            prunable: true,
        };
        assert_eq!(spec.param_count(), 9248);
    }

    #[test]
    fn invalid_knobs_are_config_errors() {
        assert!(matches!(build_network(&ArchConfig::new(0, 1, 1), 0), Err(Error::Config(_))));
        assert!(matches!(build_network(&ArchConfig::new(8, 0, 1), 0), Err(Error::Config(_))));
        let mut c = ArchConfig::new(8, 1, 0);
        c.damping_floor = -0.5;
        assert!(build_network(&c, 0).is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = ArchConfig::new(4, 1, 1);
        assert_eq!(build_network(&cfg, 7).unwrap(), build_network(&cfg, 7).unwrap());
        assert_ne!(build_network(&cfg, 7).unwrap().convs[0].weight, build_network(&cfg, 8).unwrap().convs[0].weight);
    }

    #[test]
    fn damped_and_plain_share_raw_weights() {
        let plain = build_network(&ArchConfig::new(4, 1, 1), 3).unwrap();
        let damped = build_network(&ArchConfig::new(4, 1, 1).with_damping(0.1), 3).unwrap();
        for (a, b) in plain.convs.iter().zip(&damped.convs) {
            assert_eq!(a.weight, b.weight);
            assert_eq!(b.damping.is_some(), b.spec.kernel > 1);
        }
    }

    #[test]
    fn taped_and_tape_free_forward_agree_bitwise() {
        let mut net = build_network(&ArchConfig::new(4, 1, 1).with_damping(0.2), 11).unwrap();
        net.input_norm = (-40.0, 12.0);
        for (i, bn) in net.bns.iter_mut().enumerate() {
            bn.running_mean.iter_mut().for_each(|m| *m = 0.01 * i as f64);
            bn.running_var.iter_mut().for_each(|v| *v = 1.0 + 0.1 * i as f64);
        }
        let x = Tensor::new(vec![2, 1, 32, 20], (0..1280).map(|i| ((i * 37) % 101) as f64 - 80.0).collect()).unwrap();
        let fast = net.infer(&x).unwrap();
        let mut g = Graph::new();
        let xv = g.input(net.normalize_input(&x));
        let fp = net.forward(&mut g, xv, Mode::Eval, false).unwrap();
        assert_eq!(g.value(fp.logits).data(), fast.data());
        assert_eq!(fast.shape(), &[2, 10]);
    }

    #[test]
    fn count_params_matches_plan_and_masks() {
        let mut net = build_network(&ArchConfig::new(4, 1, 1), 0).unwrap();
        assert_eq!(count_params(&net), net.arch.param_count());
        let n = net.convs[1].weight.len();
        let mut mask = vec![true; n];
        mask[0] = false;
        mask[3] = false;
        net.convs[1].prune_mask = Some(mask);
        assert_eq!(count_params(&net), net.arch.param_count() - 2);
    }
}
