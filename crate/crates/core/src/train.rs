//! Training engine: Adam, exponential warmup with linear decay, mixup,
//! waveform time-roll, pruning hooks, run records and checkpoints.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::arch::{checkpoint, ArchConfig, Mode, Network};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::frontend::{Frontend, FrontendConfig, Waveform};
use crate::pruning::{magnitude_prune_step, make_prune_schedule, ratio_for, static_random_prune, PruneMask, PruneSchedule, SparsityReport};
use crate::rng::keyed_rng;
use crate::tensor::Tensor;

/// How weights are sparsified during a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PruningPlan {
    /// Random pruning at initialization down to `target` prunable weights.
    Static { target: usize },
    /// Global magnitude pruning at the end of each of the first `horizon`
    /// epochs, removal counts decaying by `ratio` per epoch.
    Iterative { target: usize, horizon: usize, ratio: f64 },
}

impl PruningPlan {
    /// Iterative plan over the first 200/350 of the epochs, the last pruning
    /// epoch removing 5% of what the first one removes.
    pub fn iterative_default(target: usize, epochs: usize) -> Self {
        let horizon = ((epochs * 200) as f64 / 350.0).round().max(1.0) as usize;
        PruningPlan::Iterative {
            target,
            horizon,
            ratio: ratio_for(horizon, 0.05),
        }
    }

    pub fn target(&self) -> usize {
        match *self {
            PruningPlan::Static { target } | PruningPlan::Iterative { target, .. } => target,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub max_lr: f64,
    pub final_lr: f64,
    pub warmup_epochs: usize,
    /// Learning rate at epoch 0 relative to `max_lr`.
    pub warmup_start_factor: f64,
    /// Mixup Beta parameter; 0 disables mixing.
    pub mixup_alpha: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Random circular shift of every training waveform each epoch.
    pub time_roll: bool,
    pub checkpoint_every: usize,
    pub pruning: Option<PruningPlan>,
    /// Destination for the run record, sparsity reports and checkpoints.
    pub output_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 250,
            max_lr: 1e-4,
            final_lr: 1e-6,
            warmup_epochs: 20,
            warmup_start_factor: 0.01,
            mixup_alpha: 0.3,
            batch_size: 32,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            time_roll: true,
            checkpoint_every: 25,
            pruning: None,
            output_dir: None,
        }
    }
}

impl TrainConfig {
    /// Defaults for pruned runs, which train for 350 epochs.
    pub fn pruned(plan: PruningPlan) -> Self {
        TrainConfig {
            epochs: 350,
            pruning: Some(plan),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup ({}) must be shorter than training ({} epochs)",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.final_lr > 0.0 && self.final_lr <= self.max_lr) {
            return Err(Error::Config(format!(
                "need 0 < final_lr <= max_lr, got {} and {}",
                self.final_lr, self.max_lr
            )));
        }
        if !(self.warmup_start_factor > 0.0 && self.warmup_start_factor <= 1.0) {
            return Err(Error::Config("warmup start factor must lie in (0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.mixup_alpha >= 0.0 && self.mixup_alpha.is_finite()) {
            return Err(Error::Config("mixup alpha must be non-negative".into()));
        }
        Ok(())
    }
}

/// Learning rate for `epoch`: exponential warmup from
/// `max_lr * warmup_start_factor` to `max_lr`, then linear decay reaching
/// `final_lr` at the last epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::Contract(format!("epoch {} outside 0..{}", epoch, cfg.epochs)));
    }
    let w = cfg.warmup_epochs;
    if epoch < w {
        let r = cfg.warmup_start_factor.powf(1.0 / w as f64);
        return Ok(cfg.max_lr * r.powi((w - epoch) as i32));
    }
    let last = cfg.epochs - 1;
    if last == w {
        return Ok(cfg.max_lr);
    }
    let frac = (epoch - w) as f64 / (last - w) as f64;
    Ok(cfg.max_lr + frac * (cfg.final_lr - cfg.max_lr))
}

/// A mixed batch with soft targets `[B, classes]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedBatch {
    pub inputs: Tensor,
    pub targets: Vec<f64>,
    pub lambda: f64,
    pub partners: Vec<usize>,
}

/// `lambda * x_i + (1 - lambda) * x_partner(i)` with matching soft labels.
pub fn mix_with(x: &Tensor, labels: &[usize], classes: usize, lambda: f64, partners: &[usize]) -> Result<MixedBatch> {
    let b = x.shape()[0];
    if labels.len() != b || partners.len() != b {
        return Err(Error::dim("batch", format!("{} inputs, {} labels, {} partners", b, labels.len(), partners.len())));
    }
    let per = x.len() / b.max(1);
    let d = x.data();
    let mut data = Vec::with_capacity(x.len());
    let mut targets = vec![0.0; b * classes];
    for i in 0..b {
        let j = partners[i];
        let (xi, xj) = (&d[i * per..(i + 1) * per], &d[j * per..(j + 1) * per]);
        data.extend(xi.iter().zip(xj).map(|(a, c)| lambda * a + (1.0 - lambda) * c));
        targets[i * classes + labels[i]] += lambda;
        targets[i * classes + labels[j]] += 1.0 - lambda;
    }
    Ok(MixedBatch {
        inputs: Tensor::new(x.shape().to_vec(), data)?,
        targets,
        lambda,
        partners: partners.to_vec(),
    })
}

/// Draws `lambda ~ Beta(alpha, alpha)` and a random partner permutation.
/// Batches of one and `alpha == 0` pass through unmixed.
pub fn mixup<R: Rng>(x: &Tensor, labels: &[usize], classes: usize, alpha: f64, rng: &mut R) -> Result<MixedBatch> {
    let b = x.shape()[0];
    let identity: Vec<usize> = (0..b).collect();
    if b < 2 || alpha == 0.0 {
        return mix_with(x, labels, classes, 1.0, &identity);
    }
    let lambda = sample_lambda(alpha, rng)?;
    let mut partners = identity;
    partners.shuffle(rng);
    mix_with(x, labels, classes, lambda, &partners)
}

pub fn sample_lambda<R: Rng>(alpha: f64, rng: &mut R) -> Result<f64> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("mixup alpha {}: {}", alpha, e)))?;
    Ok(beta.sample(rng))
}

/// Circular shift: sample `i` moves to `i + shift`.
pub fn time_roll(w: &Waveform, shift: isize) -> Waveform {
    let n = w.samples.len();
    if n == 0 {
        return w.clone();
    }
    let s = shift.rem_euclid(n as isize) as usize;
    let mut samples = Vec::with_capacity(n);
    samples.extend_from_slice(&w.samples[n - s..]);
    samples.extend_from_slice(&w.samples[..n - s]);
    Waveform::new(samples, w.sample_rate)
}

/// First and second moment estimates for every trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(net: &Network) -> Self {
        let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `w` in place.
pub fn adam_update(w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], step: u64, lr: f64, cfg: &TrainConfig) {
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    for i in 0..w.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_eps);
    }
}

/// Adam over every trainable tensor, in [`Network::params`] order. Masked
/// weights get zero gradient before the update and are re-zeroed after.
pub fn adam_step(net: &mut Network, grads: &mut [Vec<f64>], state: &mut AdamState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    for (i, g) in grads.iter().enumerate() {
        if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in parameter {} at {}", i, pos)));
        }
    }
    let masks: Vec<Option<Vec<bool>>> = net.param_masks().into_iter().map(|m| m.map(<[bool]>::to_vec)).collect();
    state.step += 1;
    let step = state.step;
    for (i, (w, g)) in net.params_mut().into_iter().zip(grads.iter_mut()).enumerate() {
        if g.len() != w.len() {
            return Err(Error::dim("gradient", format!("parameter {} has {} entries, gradient {}", i, w.len(), g.len())));
        }
        if let Some(mask) = &masks[i] {
            g.iter_mut().zip(mask).filter(|(_, &k)| !k).for_each(|(v, _)| *v = 0.0);
        }
        adam_update(w.data_mut(), g, &mut state.m[i], &mut state.v[i], step, lr, cfg);
    }
    net.apply_prune_masks();
    Ok(())
}

/// A labelled clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub wave: Waveform,
    pub label: usize,
    pub device: String,
}

/// Everything a run trains and evaluates on.
#[derive(Clone, Debug)]
pub struct TrainSet {
    pub frontend: FrontendConfig,
    pub num_classes: usize,
    pub train: Vec<Example>,
    pub test_seen: Vec<Example>,
    pub test_unseen: Vec<Example>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean mixup loss over the epoch's batches.
    pub train_loss: f64,
    /// Clean (unaugmented) training accuracy in evaluation mode.
    pub train_acc: f64,
    pub seen_acc: Option<f64>,
    pub unseen_acc: Option<f64>,
    /// Retained prunable weights after the epoch.
    pub retained: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub frontend: FrontendConfig,
    pub seed: u64,
    pub init_seed: u64,
    pub input_norm: (f64, f64),
    pub prunable_set: String,
    pub prunable_total: usize,
    pub train_clips: usize,
    pub seen_clips: usize,
    pub unseen_clips: usize,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub header: RunHeader,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RecordLine {
    Header(RunHeader),
    Epoch(EpochRecord),
}

impl RunRecord {
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&RecordLine::Header(self.header.clone()))?);
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(&RecordLine::Epoch(e.clone()))?);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<RunRecord> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut header = None;
        let mut epochs: Vec<EpochRecord> = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line)? {
                RecordLine::Header(h) => header = Some(h),
                RecordLine::Epoch(e) => {
                    if epochs.last().is_some_and(|p| p.epoch >= e.epoch) {
                        return Err(Error::Input(format!("{:?}: epoch {} out of order", path, e.epoch)));
                    }
                    epochs.push(e)
                }
            }
        }
        let header = header.ok_or_else(|| Error::Input(format!("{:?}: run record has no header line", path)))?;
        Ok(RunRecord { header, epochs })
    }
}

/// Callbacks invoked by [`train`].
pub trait TrainHooks {
    fn on_epoch_end(&mut self, _net: &Network, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }
}

/// Hooks that do nothing.
pub struct NoHooks;

impl TrainHooks for NoHooks {}

/// Spectrogram tensors of a list of clips.
pub fn spectrograms(frontend: &Frontend, clips: &[Example]) -> Result<Vec<Tensor>> {
    clips.iter().map(|c| Ok(frontend.compute(&c.wave)?.values)).collect()
}

/// Argmax predictions in evaluation mode, batched.
pub fn predict(net: &Network, inputs: &[Tensor], batch: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(batch.max(1)) {
        let logits = net.infer(&Tensor::stack(chunk)?)?;
        let classes = logits.shape()[1];
        out.extend(logits.data().chunks(classes).map(argmax));
    }
    Ok(out)
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

fn accuracy(net: &Network, inputs: &[Tensor], labels: &[usize], batch: usize) -> Result<Option<f64>> {
    if inputs.is_empty() {
        return Ok(None);
    }
    let pred = predict(net, inputs, batch)?;
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(Some(hits as f64 / inputs.len() as f64))
}

/// Mean and standard deviation over every value of every tensor.
pub fn input_statistics(inputs: &[Tensor]) -> (f64, f64) {
    let n: usize = inputs.iter().map(Tensor::len).sum();
    let mean = inputs.iter().flat_map(|t| t.data()).sum::<f64>() / n as f64;
    let var = inputs.iter().flat_map(|t| t.data()).map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt().max(1e-8))
}

const EVAL_BATCH: usize = 32;

/// Runs the full training loop and returns its record.
pub fn train(net: &mut Network, data: &TrainSet, cfg: &TrainConfig, hooks: &mut dyn TrainHooks) -> Result<RunRecord> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if data.num_classes != net.config().num_classes {
        return Err(Error::Config(format!(
            "data has {} classes, network {}",
            data.num_classes,
            net.config().num_classes
        )));
    }
    let frontend = Frontend::new(data.frontend.clone())?;
    let clean_train = spectrograms(&frontend, &data.train)?;
    let seen = spectrograms(&frontend, &data.test_seen)?;
    let unseen = spectrograms(&frontend, &data.test_unseen)?;
    let train_labels: Vec<usize> = data.train.iter().map(|e| e.label).collect();
    let seen_labels: Vec<usize> = data.test_seen.iter().map(|e| e.label).collect();
    let unseen_labels: Vec<usize> = data.test_unseen.iter().map(|e| e.label).collect();
    net.input_norm = input_statistics(&clean_train);

    let mut mask = None;
    let mut schedule: Option<PruneSchedule> = None;
    match &cfg.pruning {
        Some(PruningPlan::Static { target }) => {
            let m = static_random_prune(net, *target, cfg.seed)?;
            m.apply(net);
            mask = Some(m);
        }
        Some(PruningPlan::Iterative { target, horizon, ratio }) => {
            let m = PruneMask::from_network(net);
            let have = m.retained();
            if *target > have {
                return Err(Error::Config(format!("pruning target {} exceeds the {} retained weights", target, have)));
            }
            schedule = Some(make_prune_schedule(have - target, *horizon, *ratio)?);
            mask = Some(m);
        }
        None => {}
    }

    let header = RunHeader {
        arch: net.config().clone(),
        train: cfg.clone(),
        frontend: data.frontend.clone(),
        seed: cfg.seed,
        init_seed: net.seed,
        input_norm: net.input_norm,
        prunable_set: "conv weights excluding the classifier; biases and batch-norm parameters dense".into(),
        prunable_total: net.arch.prunable_count(),
        train_clips: data.train.len(),
        seen_clips: data.test_seen.len(),
        unseen_clips: data.test_unseen.len(),
        extra: serde_json::Value::Null,
    };
    let out = Outputs::create(cfg.output_dir.as_deref(), &header)?;
    if let (Some(out), Some(m)) = (&out, &mask) {
        out.sparsity(&m.report(net, None))?;
    }

    let mut adam = AdamState::new(net);
    let mut record = RunRecord { header, epochs: Vec::new() };
    let n = data.train.len();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg)?;
        let inputs: Vec<Tensor> = if cfg.time_roll {
            data.train
                .iter()
                .enumerate()
                .map(|(i, ex)| {
                    let len = ex.wave.samples.len().max(1);
                    let shift = keyed_rng(cfg.seed, &[1, epoch as u64, i as u64]).gen_range(0..len) as isize;
                    Ok(frontend.compute(&time_roll(&ex.wave, shift))?.values)
                })
                .collect::<Result<_>>()?
        } else {
            clean_train.clone()
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut keyed_rng(cfg.seed, &[2, epoch as u64]));

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let parts: Vec<Tensor> = idx.iter().map(|&i| net.normalize_input(&inputs[i])).collect();
            let x = Tensor::stack(&parts)?;
            let labels: Vec<usize> = idx.iter().map(|&i| train_labels[i]).collect();
            let mut mix_rng = keyed_rng(cfg.seed, &[3, epoch as u64, bi as u64]);
            let batch = mixup(&x, &labels, data.num_classes, cfg.mixup_alpha, &mut mix_rng)?;

            let (loss, mut grads, stats) = {
                let mut g = Graph::new();
                let xv = g.input(batch.inputs);
                let pass = net.forward(&mut g, xv, Mode::Train, true)?;
                let loss = g.soft_cross_entropy(pass.logits, batch.targets)?;
                let value = g.value(loss).data()[0];
                g.backward(loss)?;
                let grads: Vec<Vec<f64>> = pass
                    .params
                    .iter()
                    .map(|&p| g.take_grad(p).unwrap_or_else(|| vec![0.0; g.value(p).len()]))
                    .collect();
                (value, grads, pass.bn_stats)
            };
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss became {} at epoch {} batch {}", loss, epoch, bi)));
            }
            adam_step(net, &mut grads, &mut adam, lr, cfg)?;
            net.apply_bn_stats(&stats);
            loss_sum += loss;
            batches += 1;
        }

        if let (Some(sched), Some(m)) = (&schedule, &mut mask) {
            let remove = sched.at(epoch);
            if remove > 0 {
                *m = magnitude_prune_step(net, m, remove)?;
                m.apply(net);
            }
        }
        if let (Some(out), Some(m)) = (&out, &mask) {
            out.sparsity(&m.report(net, Some(epoch)))?;
        }

        let rec = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            train_acc: accuracy(net, &clean_train, &train_labels, EVAL_BATCH)?.unwrap_or(0.0),
            seen_acc: accuracy(net, &seen, &seen_labels, EVAL_BATCH)?,
            unseen_acc: accuracy(net, &unseen, &unseen_labels, EVAL_BATCH)?,
            retained: net.retained_prunable(),
        };
        log::info!(
            "epoch {:>4} lr {:.3e} loss {:.4} train {:.3} seen {:?} unseen {:?} retained {}",
            epoch,
            lr,
            rec.train_loss,
            rec.train_acc,
            rec.seen_acc,
            rec.unseen_acc,
            rec.retained
        );
        hooks.on_epoch_end(net, &rec)?;
        if let Some(out) = &out {
            out.epoch(&rec)?;
            let done = epoch + 1;
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.epochs {
                out.checkpoint(net, &format!("epoch{:04}.ckpt", done), done)?;
            }
        }
        record.epochs.push(rec);
    }
    if let Some(out) = &out {
        out.checkpoint(net, "final.ckpt", cfg.epochs)?;
    }
    Ok(record)
}

/// Files a run writes while it progresses.
struct Outputs {
    dir: PathBuf,
}

impl Outputs {
    const RECORD: &'static str = "run.jsonl";
    const SPARSITY: &'static str = "sparsity.jsonl";

    fn create(dir: Option<&Path>, header: &RunHeader) -> Result<Option<Outputs>> {
        let Some(dir) = dir else { return Ok(None) };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let out = Outputs { dir: dir.to_path_buf() };
        let path = dir.join(Self::RECORD);
        let line = serde_json::to_string(&RecordLine::Header(header.clone()))?;
        fs::write(&path, line + "\n").map_err(|e| Error::io(&path, e))?;
        let sp = dir.join(Self::SPARSITY);
        if sp.exists() {
            fs::remove_file(&sp).map_err(|e| Error::io(&sp, e))?;
        }
        Ok(Some(out))
    }

    fn append(&self, name: &str, line: String) -> Result<()> {
        let path = self.dir.join(name);
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{}", line).map_err(|e| Error::io(&path, e))
    }

    fn epoch(&self, rec: &EpochRecord) -> Result<()> {
        self.append(Self::RECORD, serde_json::to_string(&RecordLine::Epoch(rec.clone()))?)
    }

    fn sparsity(&self, report: &SparsityReport) -> Result<()> {
        self.append(Self::SPARSITY, serde_json::to_string(report)?)
    }

    fn checkpoint(&self, net: &Network, name: &str, epoch: usize) -> Result<()> {
        let path = self.dir.join("checkpoints").join(name);
        checkpoint::save(net, &path, serde_json::json!({ "epoch": epoch }))
    }
}
