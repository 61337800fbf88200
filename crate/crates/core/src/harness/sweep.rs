//! Runs one scaling strategy over a list of settings and seeds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plot::Strategy;
use crate::arch::{build_network, ArchConfig, Architecture};
use crate::error::{Error, Result};
use crate::train::{train, NoHooks, PruningPlan, RunRecord, TrainConfig, TrainSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub strategy: Strategy,
    /// Widths for the width strategies, depths for `depth`, 1x1 block
    /// counts for `depth-1x1`.
    pub values: Vec<usize>,
    pub base: ArchConfig,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    /// Width whose prunable-weight count sparse strategies prune down to.
    pub reference_width: usize,
}

/// Architecture and pruning plan for every swept setting.
pub fn sweep_settings(cfg: &SweepConfig) -> Result<Vec<(usize, ArchConfig, Option<PruningPlan>)>> {
    if cfg.values.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Config("a sweep needs at least one value and one seed".into()));
    }
    let target = || -> Result<usize> {
        let reference = ArchConfig {
            width: cfg.reference_width,
            ..cfg.base.clone()
        };
        Ok(Architecture::plan(&reference)?.prunable_count())
    };
    cfg.values
        .iter()
        .map(|&v| {
            let mut arch = cfg.base.clone();
            let plan = match cfg.strategy {
                Strategy::Width => {
                    arch.width = v;
                    None
                }
                Strategy::Depth => {
                    arch.depth = v;
                    None
                }
                Strategy::Depth1x1 => {
                    arch.k_blocks = v;
                    None
                }
                Strategy::WidthSparseStatic => {
                    arch.width = v;
                    Some(PruningPlan::Static { target: target()? })
                }
                Strategy::WidthSparseIterative => {
                    arch.width = v;
                    Some(PruningPlan::iterative_default(target()?, cfg.train.epochs))
                }
            };
            arch.validate()?;
            if let Some(plan) = &plan {
                let have = Architecture::plan(&arch)?.prunable_count();
                if plan.target() > have {
                    return Err(Error::Config(format!(
                        "width {} has {} prunable weights, fewer than the reference target {}",
                        v,
                        have,
                        plan.target()
                    )));
                }
            }
            Ok((v, arch, plan))
        })
        .collect()
}

/// Trains every (setting, seed) pair in order. Each run writes to
/// `out_dir/<config>/seed<k>/` when an output directory is given.
pub fn run_sweep(cfg: &SweepConfig, data: &TrainSet, out_dir: Option<&Path>) -> Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    for (value, arch, plan) in sweep_settings(cfg)? {
        for &seed in &cfg.seeds {
            let mut tc = cfg.train.clone();
            tc.seed = seed;
            tc.pruning = plan.clone();
            let name = match &plan {
                Some(_) => format!("{}-{}", arch.tag(), cfg.strategy.name()),
                None => arch.tag(),
            };
            tc.output_dir = out_dir.map(|d| d.join(&name).join(format!("seed{}", seed)));
            log::info!("sweep {} = {}: {} seed {}", cfg.strategy, value, name, seed);
            let mut net = build_network(&arch, seed)?;
            let mut record = train(&mut net, data, &tc, &mut NoHooks)?;
            record.header.extra = serde_json::json!({ "strategy": cfg.strategy.name(), "value": value });
            if let Some(dir) = &tc.output_dir {
                record.write_jsonl(&dir.join("run.jsonl"))?;
            }
            records.push(record);
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(strategy: Strategy, values: Vec<usize>) -> SweepConfig {
        SweepConfig {
            strategy,
            values,
            base: ArchConfig::new(8, 1, 1),
            seeds: vec![0],
            train: TrainConfig::default(),
            reference_width: 4,
        }
    }

    #[test]
    fn settings_per_strategy() {
        let s = sweep_settings(&cfg(Strategy::Depth, vec![1, 2])).unwrap();
        assert_eq!(s.iter().map(|x| x.1.depth).collect::<Vec<_>>(), vec![1, 2]);
        let s = sweep_settings(&cfg(Strategy::WidthSparseStatic, vec![8, 16])).unwrap();
        let target = Architecture::plan(&ArchConfig::new(4, 1, 1)).unwrap().prunable_count();
        assert!(s.iter().all(|x| x.2 == Some(PruningPlan::Static { target })));
        assert!(sweep_settings(&cfg(Strategy::WidthSparseIterative, vec![2])).is_err());
        assert!(sweep_settings(&cfg(Strategy::Width, vec![])).is_err());
    }
}
