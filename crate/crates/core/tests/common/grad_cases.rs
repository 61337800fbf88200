//! Random small-shape cases for every differentiable op.

use std::borrow::Cow;

use rand::Rng;
use scalelab::autodiff::{BnMode, Padding};
use scalelab::damping::{damped_conv2d, make_damping_mask};
use scalelab::Tensor;

use super::{gradcheck, randn, rng};

pub const TRIALS: u64 = 20;
pub const TOL: f64 = 1e-4;

/// Worst relative error over the trials of one op.
pub fn worst_over_trials(mut trial: impl FnMut(u64) -> f64) -> f64 {
    (0..TRIALS).map(&mut trial).fold(0.0, f64::max)
}

fn conv_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (b, cin, cout) = (r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..4));
    let padding = if r.gen_bool(0.5) { Padding::Same } else { Padding::Valid };
    let (kf, kt) = match padding {
        Padding::Same => ([1, 3, 5][r.gen_range(0..3)], [1, 3][r.gen_range(0..2)]),
        Padding::Valid => (r.gen_range(1..4), r.gen_range(1..4)),
    };
    let stride = (r.gen_range(1..3), r.gen_range(1..3));
    let (f, t) = (r.gen_range(kf.max(3)..8), r.gen_range(kt.max(3)..8));
    let inputs = [randn(&mut r, &[b, cin, f, t]), randn(&mut r, &[cout, cin, kf, kt]), randn(&mut r, &[cout])];
    gradcheck(&inputs, seed, |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, padding))
}

fn damped_conv_case(seed: u64) -> f64 {
    let mut r = rng(seed + 100);
    let (cin, cout) = (r.gen_range(1..3), r.gen_range(1..3));
    let (kf, kt) = ([3, 5][r.gen_range(0..2)], [1, 3][r.gen_range(0..2)]);
    let mask = make_damping_mask([cout, cin, kf, kt], r.gen_range(0.0..1.0)).unwrap();
    let stride = (r.gen_range(1..3), 1);
    let inputs = [randn(&mut r, &[2, cin, 6, 5]), randn(&mut r, &[cout, cin, kf, kt]), randn(&mut r, &[cout])];
    gradcheck(&inputs, seed, |g, v| damped_conv2d(g, v[0], v[1], &mask, Some(v[2]), stride, Padding::Same))
}

fn maxpool_case(seed: u64) -> f64 {
    let mut r = rng(seed + 200);
    let shape = [r.gen_range(1..3), r.gen_range(1..3), r.gen_range(2..7), r.gen_range(2..7)];
    let x = randn(&mut r, &shape);
    gradcheck(&[x], seed, |g, v| g.maxpool2x2(v[0]))
}

fn mean_pool_case(seed: u64) -> f64 {
    let mut r = rng(seed + 300);
    let shape = [r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..5), r.gen_range(1..5)];
    let x = randn(&mut r, &shape);
    gradcheck(&[x], seed, |g, v| g.global_mean_pool(v[0]))
}

fn bn_train_case(seed: u64) -> f64 {
    let mut r = rng(seed + 400);
    let c = r.gen_range(1..4);
    let shape = [r.gen_range(2..4), c, 3, r.gen_range(2..4)];
    let inputs = [randn(&mut r, &shape), randn(&mut r, &[c]), randn(&mut r, &[c])];
    gradcheck(&inputs, seed, |g, v| Ok(g.batch_norm(v[0], v[1], v[2], BnMode::Train { eps: 1e-5 })?.0))
}

fn bn_eval_case(seed: u64) -> f64 {
    let mut r = rng(seed + 500);
    let c = r.gen_range(1..4);
    let mean: Vec<f64> = (0..c).map(|_| r.gen_range(-1.0..1.0)).collect();
    let var: Vec<f64> = (0..c).map(|_| r.gen_range(0.5..2.0)).collect();
    let inputs = [randn(&mut r, &[2, c, 3, 3]), randn(&mut r, &[c]), randn(&mut r, &[c])];
    gradcheck(&inputs, seed, |g, v| {
        Ok(g.batch_norm(v[0], v[1], v[2], BnMode::Eval { mean: &mean, var: &var, eps: 1e-5 })?.0)
    })
}

fn relu_case(seed: u64) -> f64 {
    let mut r = rng(seed + 600);
    // keep entries away from the kink so the difference quotient is valid
    let data: Vec<f64> = (0..24)
        .map(|_| {
            let v: f64 = r.gen_range(0.01..2.0);
            if r.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    gradcheck(&[Tensor::new(vec![2, 3, 2, 2], data).unwrap()], seed, |g, v| Ok(g.relu(v[0])))
}

fn residual_case(seed: u64) -> f64 {
    let mut r = rng(seed + 700);
    let shape = [r.gen_range(1..3), 2, r.gen_range(2..5), 3];
    let inputs = [randn(&mut r, &shape), randn(&mut r, &[2, 2, 3, 3])];
    // relu(x + conv(x)) exercises fan-out as well as the sum
    gradcheck(&inputs, seed, |g, v| {
        let y = g.conv2d(v[0], v[1], None, (1, 1), Padding::Same)?;
        let s = g.add(v[0], y)?;
        Ok(g.relu(s))
    })
}

fn cross_entropy_case(seed: u64) -> f64 {
    let mut r = rng(seed + 800);
    let (b, k) = (r.gen_range(1..5), r.gen_range(2..6));
    let mut targets = vec![0.0; b * k];
    for i in 0..b {
        let lam: f64 = r.gen_range(0.0..1.0);
        targets[i * k + r.gen_range(0..k)] += lam;
        targets[i * k + r.gen_range(0..k)] += 1.0 - lam;
    }
    let logits = randn(&mut r, &[b, k]);
    gradcheck(&[logits], seed, move |g, v| g.soft_cross_entropy(v[0], targets.clone()))
}

fn mask_and_sum_case(seed: u64) -> f64 {
    let mut r = rng(seed + 900);
    let x = randn(&mut r, &[1, 2, 3, 3]);
    let mask: Vec<f64> = (0..18).map(|_| r.gen_range(0.0..1.0)).collect();
    gradcheck(&[x], seed, move |g, v| {
        let m = g.mask_mul(v[0], Cow::Owned(mask.clone()))?;
        Ok(g.sum(m))
    })
}

type Case = fn(u64) -> f64;

pub const CASES: [(&str, Case); 10] = [
    ("conv2d", conv_case),
    ("damped_conv2d", damped_conv_case),
    ("maxpool2x2", maxpool_case),
    ("global_mean_pool", mean_pool_case),
    ("batch_norm_train", bn_train_case),
    ("batch_norm_eval", bn_eval_case),
    ("relu", relu_case),
    ("residual_add", residual_case),
    ("soft_cross_entropy", cross_entropy_case),
    ("mask_mul_sum", mask_and_sum_case),
];
