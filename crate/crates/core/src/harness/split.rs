//! Train/test splits in which every (city, scene) pair belongs wholly to one
//! side, training uses only the reference device, and test clips from other
//! devices form the unseen-device set.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, REFERENCE_DEVICE};
use crate::error::{Error, Result};
use crate::rng::{hash_str, keyed_rng};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairAssignment {
    pub city: String,
    pub scene: String,
    pub test: bool,
}

/// Indices into the manifest's entries plus the pair table they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub holdout_fraction: f64,
    pub seed: u64,
    /// Scene names; a label is an index into this list.
    pub classes: Vec<String>,
    pub pairs: Vec<PairAssignment>,
    pub train: Vec<usize>,
    pub test_seen: Vec<usize>,
    pub test_unseen: Vec<usize>,
    /// Label of each `train` entry, possibly randomized.
    pub train_labels: Vec<usize>,
    /// True labels while `train_labels` is randomized.
    #[serde(default)]
    pub original_train_labels: Option<Vec<usize>>,
    #[serde(default)]
    pub label_seed: Option<u64>,
}

impl SplitPlan {
    pub fn label_of(&self, manifest: &DatasetManifest, id: usize) -> usize {
        let scene = &manifest.entries[id].scene;
        self.classes.iter().position(|c| c == scene).expect("scene listed in classes")
    }

    pub fn is_randomized(&self) -> bool {
        self.original_train_labels.is_some()
    }

    /// Undoes [`randomize_labels`].
    pub fn restore_labels(&self) -> SplitPlan {
        let mut out = self.clone();
        if let Some(orig) = out.original_train_labels.take() {
            out.train_labels = orig;
            out.label_seed = None;
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SplitPlan> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Checks the disjointness and device rules against `manifest`.
    pub fn check(&self, manifest: &DatasetManifest) -> Result<()> {
        let pair = |i: usize| (manifest.entries[i].city.clone(), manifest.entries[i].scene.clone());
        let train_pairs: BTreeSet<_> = self.train.iter().map(|&i| pair(i)).collect();
        for &i in self.test_seen.iter().chain(&self.test_unseen) {
            if train_pairs.contains(&pair(i)) {
                return Err(Error::Split(format!("pair {:?} appears in train and test", pair(i))));
            }
        }
        if self.train.iter().chain(&self.test_seen).any(|&i| manifest.entries[i].device != REFERENCE_DEVICE) {
            return Err(Error::Split("train and seen-test sets must only hold reference-device clips".into()));
        }
        if self.test_unseen.iter().any(|&i| manifest.entries[i].device == REFERENCE_DEVICE) {
            return Err(Error::Split("unseen-test set holds reference-device clips".into()));
        }
        if self.train_labels.len() != self.train.len() {
            return Err(Error::Split("train labels and train ids differ in length".into()));
        }
        Ok(())
    }
}

/// Seeded split holding out about `holdout_fraction` of each scene's cities.
///
/// The draw is stratified per scene: `round(fraction * cities)` cities are
/// held out, clamped so that a positive fraction keeps at least one city on
/// each side.
pub fn make_split(manifest: &DatasetManifest, holdout_fraction: f64, seed: u64) -> Result<SplitPlan> {
    manifest.validate()?;
    if !(0.0..=1.0).contains(&holdout_fraction) {
        return Err(Error::Config(format!("holdout fraction {} outside [0, 1]", holdout_fraction)));
    }
    let mut cities: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for e in &manifest.entries {
        cities.entry(e.scene.clone()).or_default().insert(e.city.clone());
    }
    let mut held = BTreeSet::new();
    for (scene, set) in &cities {
        if set.len() < 2 {
            return Err(Error::Split(format!("scene {:?} is recorded in only {} city", scene, set.len())));
        }
        let n = set.len();
        let k = if holdout_fraction == 0.0 {
            0
        } else {
            ((holdout_fraction * n as f64).round() as usize).clamp(1, n - 1)
        };
        let mut list: Vec<&String> = set.iter().collect();
        list.shuffle(&mut keyed_rng(seed, &[hash_str(scene)]));
        for c in list.into_iter().take(k) {
            held.insert((c.clone(), scene.clone()));
        }
    }
    let mut plan = split_with_assignment(manifest, &held)?;
    plan.holdout_fraction = holdout_fraction;
    plan.seed = seed;
    Ok(plan)
}

/// Split for an explicit set of held-out `(city, scene)` pairs.
pub fn split_with_assignment(manifest: &DatasetManifest, held_out: &BTreeSet<(String, String)>) -> Result<SplitPlan> {
    manifest.validate()?;
    let classes = manifest.classes();
    let all_pairs: BTreeSet<(String, String)> = manifest.entries.iter().map(|e| (e.city.clone(), e.scene.clone())).collect();
    let pairs = all_pairs
        .iter()
        .map(|(city, scene)| PairAssignment {
            city: city.clone(),
            scene: scene.clone(),
            test: held_out.contains(&(city.clone(), scene.clone())),
        })
        .collect();
    let (mut train, mut test_seen, mut test_unseen) = (Vec::new(), Vec::new(), Vec::new());
    for (i, e) in manifest.entries.iter().enumerate() {
        let test = held_out.contains(&(e.city.clone(), e.scene.clone()));
        let reference = e.device == REFERENCE_DEVICE;
        match (test, reference) {
            (false, true) => train.push(i),
            (true, true) => test_seen.push(i),
            (true, false) => test_unseen.push(i),
            (false, false) => {}
        }
    }
    let train_labels = train
        .iter()
        .map(|&i| classes.iter().position(|c| *c == manifest.entries[i].scene).expect("listed"))
        .collect();
    Ok(SplitPlan {
        holdout_fraction: held_out.len() as f64 / all_pairs.len().max(1) as f64,
        seed: 0,
        classes,
        pairs,
        train,
        test_seen,
        test_unseen,
        train_labels,
        original_train_labels: None,
        label_seed: None,
    })
}

/// Replaces the training labels with uniform draws over the classes; test
/// labels (read from the manifest) are untouched.
pub fn randomize_labels(split: &SplitPlan, seed: u64) -> SplitPlan {
    let base = split.restore_labels();
    let mut rng = keyed_rng(seed, &[hash_str("random-labels")]);
    let classes = base.classes.len();
    let mut out = base.clone();
    out.train_labels = (0..base.train.len()).map(|_| rng.gen_range(0..classes)).collect();
    out.original_train_labels = Some(base.train_labels);
    out.label_seed = Some(seed);
    out
}
