//! Weight sparsification: static random pruning at initialization with
//! largest-layer-first waterfilling, and iterative global magnitude pruning
//! with a layer-collapse guard.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::Network;
use crate::error::{Error, Result};

/// Layers above this sparsity are excluded from further magnitude pruning.
pub const COLLAPSE_GUARD: f64 = 0.99;

/// Per-layer retained-weight masks for the prunable conv layers.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneMask {
    /// Conv indices into `Network::convs`.
    pub layers: Vec<usize>,
    /// `true` = retained.
    pub masks: Vec<Vec<bool>>,
    pub target_count: usize,
}

impl PruneMask {
    /// All-ones mask over the network's prunable layers, honoring any masks
    /// already installed.
    pub fn from_network(net: &Network) -> Self {
        let layers = net.prunable_layers();
        let masks: Vec<Vec<bool>> = layers
            .iter()
            .map(|&i| {
                let c = &net.convs[i];
                c.prune_mask.clone().unwrap_or_else(|| vec![true; c.weight.len()])
            })
            .collect();
        let retained = masks.iter().map(|m| m.iter().filter(|&&k| k).count()).sum();
        PruneMask {
            layers,
            masks,
            target_count: retained,
        }
    }

    pub fn retained(&self) -> usize {
        self.masks.iter().map(|m| m.iter().filter(|&&k| k).count()).sum()
    }

    pub fn total(&self) -> usize {
        self.masks.iter().map(Vec::len).sum()
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.retained() as f64 / self.total() as f64
    }

    pub fn layer_sparsity(&self) -> Vec<f64> {
        self.masks
            .iter()
            .map(|m| m.iter().filter(|&&k| !k).count() as f64 / m.len() as f64)
            .collect()
    }

    /// Installs the masks and zeroes the pruned weights.
    pub fn apply(&self, net: &mut Network) {
        for (&li, m) in self.layers.iter().zip(&self.masks) {
            net.convs[li].prune_mask = Some(m.clone());
        }
        net.apply_prune_masks();
    }

    pub fn report(&self, net: &Network, epoch: Option<usize>) -> SparsityReport {
        SparsityReport {
            epoch,
            retained: self.retained(),
            total: self.total(),
            sparsity: self.sparsity(),
            layers: self
                .layers
                .iter()
                .zip(&self.masks)
                .map(|(&li, m)| LayerSparsity {
                    name: net.convs[li].spec.name.clone(),
                    size: m.len(),
                    retained: m.iter().filter(|&&k| k).count(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub name: String,
    pub size: usize,
    pub retained: usize,
}

/// Per-epoch sparsity report, serialized as one JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub epoch: Option<usize>,
    pub retained: usize,
    pub total: usize,
    pub sparsity: f64,
    pub layers: Vec<LayerSparsity>,
}

/// Retained count per layer after lowering the largest layers to a common
/// level until the total equals `target`. When the level is fractional the
/// spare units go to the earliest capped layers.
pub fn waterfill(sizes: &[usize], target: usize) -> Result<Vec<usize>> {
    let total: usize = sizes.iter().sum();
    if target > total {
        return Err(Error::Config(format!("target {} exceeds the {} prunable weights", target, total)));
    }
    let kept = |level: usize| sizes.iter().map(|&s| s.min(level)).sum::<usize>();
    let (mut lo, mut hi) = (0usize, sizes.iter().copied().max().unwrap_or(0));
    // largest level whose total does not exceed the target
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if kept(mid) <= target {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let mut out: Vec<usize> = sizes.iter().map(|&s| s.min(lo)).collect();
    let mut spare = target - kept(lo);
    for (o, &s) in out.iter_mut().zip(sizes) {
        if spare == 0 {
            break;
        }
        if s > lo {
            *o += 1;
            spare -= 1;
        }
    }
    Ok(out)
}

/// Random pruning at initialization down to `target_count` prunable weights.
pub fn static_random_prune(net: &Network, target_count: usize, seed: u64) -> Result<PruneMask> {
    let base = PruneMask::from_network(net);
    let sizes: Vec<usize> = base.masks.iter().map(|m| m.iter().filter(|&&k| k).count()).collect();
    let keep = waterfill(&sizes, target_count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Vec::with_capacity(base.masks.len());
    for (mask, (&have, &want)) in base.masks.iter().zip(sizes.iter().zip(&keep)) {
        let mut mask = mask.clone();
        if want < have {
            let alive: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            for j in index::sample(&mut rng, have, have - want) {
                mask[alive[j]] = false;
            }
        }
        masks.push(mask);
    }
    Ok(PruneMask {
        layers: base.layers,
        masks,
        target_count,
    })
}

/// Per-epoch removal counts decaying geometrically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub counts: Vec<usize>,
    pub total_remove: usize,
}

impl PruneSchedule {
    pub fn horizon(&self) -> usize {
        self.counts.len()
    }

    /// Removals for `epoch` (zero past the horizon).
    pub fn at(&self, epoch: usize) -> usize {
        self.counts.get(epoch).copied().unwrap_or(0)
    }

    pub fn prefix_sum(&self, epochs: usize) -> usize {
        self.counts.iter().take(epochs).sum()
    }
}

/// Splits `total_remove` over `horizon` epochs proportionally to
/// `ratio^t`. Rounding uses largest remainders, so the counts sum exactly
/// and stay non-increasing.
pub fn make_prune_schedule(total_remove: usize, horizon: usize, ratio: f64) -> Result<PruneSchedule> {
    if horizon == 0 {
        return Err(Error::Config("pruning horizon must be at least one epoch".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("decay ratio must lie in (0, 1), got {}", ratio)));
    }
    let weights: Vec<f64> = (0..horizon).map(|t| ratio.powi(t as i32)).collect();
    let norm: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total_remove as f64 * w / norm).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut residue = total_remove - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..horizon).collect();
    // ties keep the earlier epoch first
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in &order {
        if residue == 0 {
            break;
        }
        counts[i] += 1;
        residue -= 1;
    }
    counts.sort_unstable_by(|a, b| b.cmp(a));
    Ok(PruneSchedule { counts, total_remove })
}

/// Decay ratio for which the last pruning epoch removes `last_fraction`
/// of what the first one does.
pub fn ratio_for(horizon: usize, last_fraction: f64) -> f64 {
    if horizon <= 1 {
        return 0.5;
    }
    last_fraction.powf(1.0 / (horizon - 1) as f64)
}

/// Removes the `remove_count` globally smallest-magnitude retained weights.
///
/// Magnitudes are taken from the effective (damped) weights. A layer may
/// only lose weights while its sparsity stays at or below the guard, so a
/// layer already past it is never touched; removals that would cross it
/// spill to the next-smallest weights elsewhere. Ties break on
/// (layer, flat index).
pub fn magnitude_prune_step(net: &Network, mask: &PruneMask, remove_count: usize) -> Result<PruneMask> {
    let mut out = mask.clone();
    if remove_count == 0 {
        return Ok(out);
    }
    let mut pruned: Vec<usize> = out.masks.iter().map(|m| m.iter().filter(|&&k| !k).count()).collect();
    let sizes: Vec<usize> = out.masks.iter().map(Vec::len).collect();
    let can_prune = |li: usize, pruned: &[usize]| (pruned[li] + 1) as f64 <= COLLAPSE_GUARD * sizes[li] as f64;

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (li, (&conv, m)) in out.layers.iter().zip(&out.masks).enumerate() {
        if !can_prune(li, &pruned) {
            continue;
        }
        let w = net.convs[conv].effective_weight();
        candidates.extend(m.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| (w[i].abs(), li, i)));
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut removed = 0;
    for (_, li, i) in candidates {
        if removed == remove_count {
            break;
        }
        if !can_prune(li, &pruned) {
            continue;
        }
        out.masks[li][i] = false;
        pruned[li] += 1;
        removed += 1;
    }
    if removed < remove_count {
        return Err(Error::Collapse(format!(
            "only {} of {} weights could be removed before every layer reached {:.0}% sparsity",
            removed,
            remove_count,
            COLLAPSE_GUARD * 100.0
        )));
    }
    out.target_count = out.retained();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_network, ArchConfig};
    use crate::tensor::Tensor;

    #[test]
    fn waterfill_example() {
        assert_eq!(waterfill(&[100, 50, 20], 90).unwrap(), vec![35, 35, 20]);
        assert_eq!(waterfill(&[100, 50, 20], 170).unwrap(), vec![100, 50, 20]);
        assert_eq!(waterfill(&[100, 50, 20], 91).unwrap(), vec![36, 35, 20]);
        assert_eq!(waterfill(&[100, 50, 20], 0).unwrap(), vec![0, 0, 0]);
        assert!(matches!(waterfill(&[10], 11), Err(Error::Config(_))));
    }

    #[test]
    fn schedule_examples() {
        let s = make_prune_schedule(990, 2, 0.1).unwrap();
        assert_eq!(s.counts, vec![900, 90]);
        assert_eq!(make_prune_schedule(0, 5, 0.5).unwrap().counts, vec![0; 5]);
    }

    fn tiny_net() -> Network {
        build_network(&ArchConfig::new(2, 1, 0), 1).unwrap()
    }

    #[test]
    fn static_target_equal_to_count_is_noop() {
        let net = tiny_net();
        let total = net.arch.prunable_count();
        let m = static_random_prune(&net, total, 3).unwrap();
        assert!(m.masks.iter().all(|l| l.iter().all(|&k| k)));
    }

    #[test]
    fn static_prune_hits_target_and_is_seeded() {
        let net = tiny_net();
        let target = net.arch.prunable_count() / 3;
        let a = static_random_prune(&net, target, 9).unwrap();
        assert_eq!(a.retained(), target);
        assert_eq!(a, static_random_prune(&net, target, 9).unwrap());
        assert_ne!(a, static_random_prune(&net, target, 10).unwrap());
        assert!(static_random_prune(&net, net.arch.prunable_count() + 1, 0).is_err());
    }

    #[test]
    fn smallest_magnitude_goes_first() {
        let mut net = tiny_net();
        let li = net.prunable_layers()[1];
        let n = net.convs[li].weight.len();
        let mut w = vec![10.0; n];
        w[0] = 0.5;
        w[1] = -0.1;
        w[2] = 0.3;
        net.convs[li].weight = Tensor::new(net.convs[li].weight.shape().to_vec(), w).unwrap();
        for (k, &c) in net.prunable_layers().iter().enumerate() {
            if k != 1 {
                net.convs[c].weight.data_mut().iter_mut().for_each(|v| *v = 100.0);
            }
        }
        let m = magnitude_prune_step(&net, &PruneMask::from_network(&net), 1).unwrap();
        assert!(!m.masks[1][1]);
        assert_eq!(m.retained(), m.total() - 1);
    }

    #[test]
    fn guarded_layer_is_never_touched() {
        let mut net = build_network(&ArchConfig::new(8, 1, 0), 1).unwrap();
        let mut mask = PruneMask::from_network(&net);
        let li = (0..mask.masks.len()).max_by_key(|&i| mask.masks[i].len()).unwrap();
        // just past the guard, with the survivors being the smallest weights anywhere
        let n = mask.masks[li].len();
        let keep = ((n as f64) * 0.008).ceil() as usize;
        for i in keep..n {
            mask.masks[li][i] = false;
        }
        mask.apply(&mut net);
        net.convs[mask.layers[li]].weight.data_mut()[..keep].iter_mut().for_each(|v| *v = 1e-9);
        let before = mask.masks[li].clone();
        assert!(mask.layer_sparsity()[li] > 0.99);
        let out = magnitude_prune_step(&net, &mask, 20).unwrap();
        assert_eq!(out.masks[li], before);
        assert_eq!(out.retained(), mask.retained() - 20);
    }

    #[test]
    fn collapse_is_reported() {
        let net = tiny_net();
        let mask = PruneMask::from_network(&net);
        let err = magnitude_prune_step(&net, &mask, mask.total()).unwrap_err();
        assert!(matches!(err, Error::Collapse(_)));
    }

    proptest::proptest! {
        #[test]
        fn schedules_sum_exactly_and_decay(total in 0usize..100_000, horizon in 1usize..60, ratio in 0.05f64..0.999) {
            let s = make_prune_schedule(total, horizon, ratio).unwrap();
            proptest::prop_assert_eq!(s.counts.iter().sum::<usize>(), total);
            proptest::prop_assert_eq!(s.horizon(), horizon);
            for w in s.counts.windows(2) {
                proptest::prop_assert!(w[0] >= w[1]);
            }
        }

        #[test]
        fn waterfill_respects_smaller_layers(sizes in proptest::collection::vec(1usize..500, 1..8), frac in 0.0f64..=1.0) {
            let total: usize = sizes.iter().sum();
            let target = (total as f64 * frac) as usize;
            let keep = waterfill(&sizes, target).unwrap();
            proptest::prop_assert_eq!(keep.iter().sum::<usize>(), target);
            for (i, (&k, &s)) in keep.iter().zip(&sizes).enumerate() {
                proptest::prop_assert!(k <= s);
                for (j, &sj) in sizes.iter().enumerate() {
                    // a layer never ends below an initially smaller layer's count, up to the spare unit
                    if sj <= s && i != j {
                        proptest::prop_assert!(k + 1 >= keep[j].min(sj));
                    }
                }
            }
        }
    }
}
