//! Experiment plumbing: manifests, device-disjoint splits, synthetic data,
//! evaluation, summaries, plots and sweeps.

pub mod eval;
pub mod manifest;
pub mod plot;
pub mod split;
pub mod summary;
pub mod sweep;
pub mod synth;

use crate::error::Result;
use crate::frontend::{read_wav, FrontendConfig, Waveform};
use crate::train::{Example, TrainSet};

pub use eval::{accuracy_table, evaluate, AccuracyTable};
pub use manifest::{DatasetManifest, ManifestEntry};
pub use plot::{plot_scaling_curve, ScalingPoint, Strategy};
pub use split::{make_split, randomize_labels, SplitPlan};
pub use summary::{summarize, SummaryRow};
pub use sweep::{run_sweep, SweepConfig};
pub use synth::{generate_synth_dataset, SynthSpec};

/// Frontend used at desk scale: the standard pipeline with 64 mel bands.
pub fn desk_frontend() -> FrontendConfig {
    FrontendConfig {
        n_mels: 64,
        ..FrontendConfig::default()
    }
}

/// Builds the train/seen/unseen example lists of `split`, fetching audio
/// for manifest entry `i` through `audio(i)`.
pub fn build_train_set<F>(manifest: &DatasetManifest, split: &SplitPlan, frontend: FrontendConfig, mut audio: F) -> Result<TrainSet>
where
    F: FnMut(usize) -> Result<Waveform>,
{
    let mut example = |i: usize, label: usize| -> Result<Example> {
        let e = &manifest.entries[i];
        Ok(Example {
            id: e.path.clone(),
            wave: audio(i)?,
            label,
            device: e.device.clone(),
        })
    };
    let train = split
        .train
        .iter()
        .zip(&split.train_labels)
        .map(|(&i, &l)| example(i, l))
        .collect::<Result<Vec<_>>>()?;
    let mut test = |ids: &[usize]| ids.iter().map(|&i| example(i, split.label_of(manifest, i))).collect::<Result<Vec<_>>>();
    let test_seen = test(&split.test_seen)?;
    let test_unseen = test(&split.test_unseen)?;
    Ok(TrainSet {
        frontend,
        num_classes: split.classes.len(),
        train,
        test_seen,
        test_unseen,
    })
}

/// [`build_train_set`] reading WAV files named by the manifest.
pub fn load_train_set(manifest: &DatasetManifest, split: &SplitPlan, frontend: FrontendConfig) -> Result<TrainSet> {
    build_train_set(manifest, split, frontend, |i| read_wav(&manifest.resolve(&manifest.entries[i])))
}
