//! Accuracy overall and per recording device.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::arch::Network;
use crate::error::{Error, Result};
use crate::frontend::Frontend;
use crate::train::{predict, spectrograms, Example};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub overall: DeviceAccuracy,
    pub per_device: BTreeMap<String, DeviceAccuracy>,
}

fn tally(correct: usize, total: usize) -> DeviceAccuracy {
    DeviceAccuracy {
        correct,
        total,
        accuracy: correct as f64 / total as f64,
    }
}

/// Tabulates predictions against labels, grouped by device.
pub fn accuracy_table(predictions: &[usize], labels: &[usize], devices: &[String]) -> Result<AccuracyTable> {
    if predictions.is_empty() {
        return Err(Error::Input("nothing to evaluate".into()));
    }
    if predictions.len() != labels.len() || labels.len() != devices.len() {
        return Err(Error::Input("predictions, labels and devices differ in length".into()));
    }
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for ((p, l), d) in predictions.iter().zip(labels).zip(devices) {
        let c = counts.entry(d.clone()).or_default();
        c.0 += usize::from(p == l);
        c.1 += 1;
    }
    let correct = counts.values().map(|c| c.0).sum();
    Ok(AccuracyTable {
        overall: tally(correct, predictions.len()),
        per_device: counts.into_iter().map(|(d, (c, n))| (d, tally(c, n))).collect(),
    })
}

/// Argmax accuracy of `net` on `clips` in evaluation mode.
pub fn evaluate(net: &Network, clips: &[Example], frontend: &Frontend) -> Result<AccuracyTable> {
    let inputs = spectrograms(frontend, clips)?;
    let pred = predict(net, &inputs, 32)?;
    let labels: Vec<usize> = clips.iter().map(|c| c.label).collect();
    let devices: Vec<String> = clips.iter().map(|c| c.device.clone()).collect();
    accuracy_table(&pred, &labels, &devices)
}
