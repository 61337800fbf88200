//! Mean and standard deviation over the final epochs of a group of runs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::Architecture;
use crate::error::{Error, Result};
use crate::train::{PruningPlan, RunRecord};

/// Epochs pooled from the end of every run.
pub const LAST_EPOCHS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config: String,
    pub strategy: String,
    pub metric: String,
    pub mean: f64,
    /// Population standard deviation of the pooled values.
    pub std: f64,
    pub samples: usize,
    /// Trainable parameters at the end of the runs (retained weights only).
    pub params: usize,
}

/// Configuration key runs are grouped by.
pub fn config_key(record: &RunRecord) -> String {
    let mut key = record.header.arch.tag();
    match &record.header.train.pruning {
        Some(PruningPlan::Static { target }) => key.push_str(&format!("-static{}", target)),
        Some(PruningPlan::Iterative { target, .. }) => key.push_str(&format!("-iterative{}", target)),
        None => {}
    }
    key
}

pub fn strategy_of(record: &RunRecord) -> String {
    record.header.extra.get("strategy").and_then(|s| s.as_str()).unwrap_or("").to_string()
}

/// Trainable parameters after the final epoch.
pub fn final_params(record: &RunRecord) -> Result<usize> {
    let arch = Architecture::plan(&record.header.arch)?;
    let retained = record.epochs.last().map_or(record.header.prunable_total, |e| e.retained);
    Ok(arch.param_count() - arch.prunable_count() + retained)
}

type Metric = fn(&crate::train::EpochRecord) -> Option<f64>;

const METRICS: [(&str, Metric); 4] = [
    ("train_loss", |e| Some(e.train_loss)),
    ("train_acc", |e| Some(e.train_acc)),
    ("seen_acc", |e| e.seen_acc),
    ("unseen_acc", |e| e.unseen_acc),
];

/// One row per (config, metric), pooling the last ten epochs of every run
/// of that config.
pub fn summarize(records: &[RunRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::Summary("no run records given".into()));
    }
    let mut groups: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        if r.epochs.len() < LAST_EPOCHS {
            return Err(Error::Summary(format!(
                "run {} (seed {}) has {} epochs, at least {} required",
                config_key(r),
                r.header.seed,
                r.epochs.len(),
                LAST_EPOCHS
            )));
        }
        groups.entry(config_key(r)).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (config, runs) in groups {
        let params = final_params(runs[0])?;
        for (name, metric) in METRICS {
            let values: Vec<f64> = runs
                .iter()
                .flat_map(|r| r.epochs[r.epochs.len() - LAST_EPOCHS..].iter().filter_map(metric))
                .collect();
            if values.is_empty() {
                continue;
            }
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            rows.push(SummaryRow {
                config: config.clone(),
                strategy: strategy_of(runs[0]),
                metric: name.to_string(),
                mean,
                std: var.sqrt(),
                samples: values.len(),
                params,
            });
        }
    }
    Ok(rows)
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchConfig;
    use crate::frontend::FrontendConfig;
    use crate::train::{EpochRecord, RunHeader, TrainConfig};

    pub(crate) fn record(seed: u64, accs: &[f64]) -> RunRecord {
        let arch = ArchConfig::new(4, 1, 0);
        RunRecord {
            header: RunHeader {
                prunable_total: Architecture::plan(&arch).unwrap().prunable_count(),
                arch,
                train: TrainConfig::default(),
                frontend: FrontendConfig::default(),
                seed,
                init_seed: seed,
                input_norm: (0.0, 1.0),
                prunable_set: String::new(),
                train_clips: 1,
                seen_clips: 1,
                unseen_clips: 0,
                extra: serde_json::json!({"strategy": "width"}),
            },
            epochs: accs
                .iter()
                .enumerate()
                .map(|(i, &a)| EpochRecord {
                    epoch: i,
                    lr: 1e-4,
                    train_loss: 1.0 - a,
                    train_acc: a,
                    seen_acc: Some(a),
                    unseen_acc: None,
                    retained: 0,
                })
                .collect(),
        }
    }

    fn metric<'a>(rows: &'a [SummaryRow], name: &str) -> &'a SummaryRow {
        rows.iter().find(|r| r.metric == name).unwrap()
    }

    #[test]
    fn constant_runs_have_zero_spread() {
        let recs: Vec<_> = (0..3).map(|s| record(s, &[0.8; 12])).collect();
        let rows = summarize(&recs).unwrap();
        let acc = metric(&rows, "seen_acc");
        assert!((acc.mean - 0.8).abs() < 1e-12 && acc.std < 1e-12);
        assert_eq!(acc.samples, 30);
        assert!(rows.iter().all(|r| r.metric != "unseen_acc"));
        assert_eq!(acc.strategy, "width");
    }

    #[test]
    fn last_ten_epochs_only() {
        let mut accs = vec![0.0; 5];
        accs.extend((0..10).map(|i| 0.7 + 0.01 * i as f64));
        let rows = summarize(&[record(0, &accs)]).unwrap();
        assert!((metric(&rows, "train_acc").mean - 0.745).abs() < 1e-12);
        assert!(matches!(summarize(&[record(0, &[0.5; 9])]), Err(Error::Summary(_))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = summarize(&[record(0, &[0.5; 10])]).unwrap();
        let p = dir.path().join("s.csv");
        write_summary_csv(&rows, &p).unwrap();
        assert_eq!(read_summary_csv(&p).unwrap(), rows);
    }
}
