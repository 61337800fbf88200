//! Oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

pub mod grad_cases;

use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scalelab::arch::rf::{center_pixel, rf_box, RfBox};
use scalelab::arch::{build_network, Architecture, ArchConfig, Mode, Network};
use scalelab::autodiff::{Graph, Var};
use scalelab::harness::synth::{synth_examples, SynthSpec};
use scalelab::harness::{build_train_set, desk_frontend, make_split, DatasetManifest};
use scalelab::train::TrainSet;
use scalelab::{Result, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

/// Relative error `|a - n| / max(|a| + |n|, tiny)` of an analytic gradient
/// against central finite differences, maximized over all inputs. The loss
/// is a fixed random weighting of the op's output, so every output entry
/// contributes.
pub fn gradcheck<'a, F>(inputs: &[Tensor], seed: u64, build: F) -> f64
where
    F: Fn(&mut Graph<'a>, &[Var]) -> Result<Var>,
{
    const H: f64 = 1e-5;
    let mut r = rng(seed ^ 0xABCD);
    let out_len = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = build(&mut g, &vars).unwrap();
        g.value(out).len()
    };
    let weights: Vec<f64> = (0..out_len).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let loss = |vals: &[Tensor], grads: bool| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone(), grads)).collect();
        let out = build(&mut g, &vars).unwrap();
        let l = g.weighted_sum(out, Cow::Owned(weights.clone())).unwrap();
        let value = g.value(l).data()[0];
        if !grads {
            return (value, Vec::new());
        }
        g.backward(l).unwrap();
        let gs = vars.iter().map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).len()])).collect();
        (value, gs)
    };
    let (_, analytic) = loss(inputs, true);
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; t.len()];
        for i in 0..t.len() {
            let mut vals = inputs.to_vec();
            vals[k].data_mut()[i] += H;
            let (up, _) = loss(&vals, false);
            vals[k].data_mut()[i] -= 2.0 * H;
            let (down, _) = loss(&vals, false);
            numeric[i] = (up - down) / (2.0 * H);
        }
        let diff: f64 = analytic[k].iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = analytic[k].iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        worst = worst.max(diff / scale.max(1e-12));
    }
    worst
}

/// Smallest multiple of 16 whose centre pixel's max-RF box lies inside the
/// input, plus one extra block so the box never touches the border.
pub fn interior_size(arch: &Architecture) -> usize {
    let mut n = 32;
    loop {
        let b = rf_box(arch, center_pixel(arch, n, n));
        if b.f0 > 0 && b.t0 > 0 && b.f1 < n as isize - 1 && b.t1 < n as isize - 1 {
            return n;
        }
        n += 16;
    }
}

/// Gradient-support oracle for the maximum receptive field.
///
/// All weights are made strictly positive and the inputs strictly positive
/// ramps, so every ReLU is active and every max-pool window has a unique
/// winner at the ramp's uphill corner. Running the four diagonal ramp
/// directions makes the pools pick each extreme corner, so the union of the
/// input-gradient supports of the centre pixel spans the full field. Returns
/// the bounding box of that union.
pub fn gradient_support_box(cfg: &ArchConfig, seed: u64) -> (RfBox, RfBox, usize) {
    let mut net = build_network(cfg, seed).unwrap();
    for c in net.convs.iter_mut() {
        c.weight.data_mut().iter_mut().for_each(|w| *w = w.abs() + 0.05);
    }
    let n = interior_size(&net.arch);
    let pixel = center_pixel(&net.arch, n, n);
    let mut union: Option<RfBox> = None;
    for (sf, st) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let data = (0..n * n)
            .map(|i| {
                let (f, t) = ((i / n) as f64, (i % n) as f64);
                10.0 + 1e-2 * (sf * f + st * t)
            })
            .collect();
        let x = Tensor::new(vec![1, 1, n, n], data).unwrap();
        let grad = penultimate_input_gradient(&net, &x, pixel);
        for f in 0..n {
            for t in 0..n {
                if grad[f * n + t] != 0.0 {
                    let (f, t) = (f as isize, t as isize);
                    union = Some(match union {
                        None => RfBox { f0: f, f1: f, t0: t, t1: t },
                        Some(b) => RfBox {
                            f0: b.f0.min(f),
                            f1: b.f1.max(f),
                            t0: b.t0.min(t),
                            t1: b.t1.max(t),
                        },
                    });
                }
            }
        }
    }
    (union.expect("nonzero gradient"), rf_box(&net.arch, pixel), n)
}

fn penultimate_input_gradient(net: &Network, x: &Tensor, pixel: (usize, usize)) -> Vec<f64> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let pass = net.forward(&mut g, xv, Mode::Eval, false).unwrap();
    let (_, c, h, w) = g.value(pass.penultimate).dims4().unwrap();
    let mut seed = vec![0.0; c * h * w];
    for ch in 0..c {
        seed[(ch * h + pixel.0) * w + pixel.1] = 1.0;
    }
    g.backward_with(pass.penultimate, seed).unwrap();
    g.take_grad(xv).unwrap()
}

/// In-memory synthetic train set for `spec`, split with `holdout`.
pub fn synth_train_set(spec: &SynthSpec, holdout: f64, split_seed: u64) -> (TrainSet, scalelab::harness::SplitPlan, DatasetManifest) {
    let clips = synth_examples(spec).unwrap();
    let manifest = DatasetManifest::new(clips.iter().map(|c| c.0.clone()).collect(), "");
    let split = make_split(&manifest, holdout, split_seed).unwrap();
    let data = build_train_set(&manifest, &split, desk_frontend(), |i| Ok(clips[i].1.clone())).unwrap();
    (data, split, manifest)
}

/// The 80-clip overfit set: 10 classes x 4 cities x 2 clips on device A.
pub fn overfit_set(seed: u64) -> TrainSet {
    synth_train_set(&SynthSpec::new(10, 4, 1, 2, seed), 0.0, seed).0
}
