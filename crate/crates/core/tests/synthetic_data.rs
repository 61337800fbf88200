//! The synthetic benchmark is learnable on the reference device and
//! measurably shifted on the others.

mod common;

use scalelab::frontend::{read_wav, Frontend, MelSpectrogram};
use scalelab::harness::synth::{generate_synth_dataset, synth_clip, SynthSpec};
use scalelab::harness::{desk_frontend, load_train_set, make_split, DatasetManifest};
use scalelab::train::Example;

use common::synth_train_set;

/// Time-averaged dB profile over mel bands.
fn profile(s: &MelSpectrogram) -> Vec<f64> {
    (0..s.mel_bins).map(|b| (0..s.frames()).map(|t| s.at(b, t)).sum::<f64>() / s.frames() as f64).collect()
}

fn nearest_centroid_accuracy(fe: &Frontend, train: &[Example], test: &[Example], classes: usize) -> f64 {
    let mut sums = vec![Vec::<f64>::new(); classes];
    let mut counts = vec![0usize; classes];
    for e in train {
        let p = profile(&fe.compute(&e.wave).unwrap());
        if sums[e.label].is_empty() {
            sums[e.label] = vec![0.0; p.len()];
        }
        sums[e.label].iter_mut().zip(&p).for_each(|(s, v)| *s += v);
        counts[e.label] += 1;
    }
    let centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| s.into_iter().map(|v| v / n as f64).collect())
        .collect();
    let correct = test
        .iter()
        .filter(|e| {
            let p = profile(&fe.compute(&e.wave).unwrap());
            let dist = |c: &Vec<f64>| c.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..classes).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
            best == e.label
        })
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn reference_device_is_learnable_by_a_centroid_oracle() {
    let (data, _, _) = synth_train_set(&SynthSpec::new(10, 5, 3, 3, 21), 0.4, 21);
    let fe = Frontend::new(data.frontend.clone()).unwrap();
    let seen = nearest_centroid_accuracy(&fe, &data.train, &data.test_seen, data.num_classes);
    let unseen = nearest_centroid_accuracy(&fe, &data.train, &data.test_unseen, data.num_classes);
    println!("nearest-centroid accuracy: seen device {:.3}, unseen devices {:.3}", seen, unseen);
    assert!(seen >= 0.8, "seen-device centroid accuracy {}", seen);
    assert!(unseen < seen, "device coloration should cost accuracy: {} vs {}", unseen, seen);
}

#[test]
fn devices_color_the_spectrum() {
    let spec = SynthSpec::new(4, 2, 3, 1, 22);
    let fe = Frontend::new(desk_frontend()).unwrap();
    for class in 0..4 {
        let a = profile(&fe.compute(&synth_clip(&spec, class, 0, 0, 0)).unwrap());
        for device in 1..3 {
            let b = profile(&fe.compute(&synth_clip(&spec, class, 0, device, 0)).unwrap());
            let mean_abs = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
            assert!(mean_abs > 1.0, "device {} changes class {} by only {:.2} dB", device, class, mean_abs);
        }
    }
}

#[test]
fn files_on_disk_match_the_in_memory_set() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::new(3, 3, 2, 1, 23);
    generate_synth_dataset(&spec, dir.path()).unwrap();
    let manifest = DatasetManifest::read_csv(&dir.path().join("manifest.csv")).unwrap();
    assert_eq!(manifest.entries.len(), 3 * 3 * 2);
    let split = make_split(&manifest, 0.3, 23).unwrap();
    let from_disk = load_train_set(&manifest, &split, desk_frontend()).unwrap();
    let (in_memory, _, _) = synth_train_set(&spec, 0.3, 23);
    assert_eq!(from_disk.train.len(), in_memory.train.len());
    for (a, b) in from_disk.train.iter().zip(&in_memory.train) {
        assert_eq!((&a.id, a.label, &a.device), (&b.id, b.label, &b.device));
        let worst = a.wave.samples.iter().zip(&b.wave.samples).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        // WAV stores 32-bit floats
        assert!(worst < 1e-7, "{}", worst);
    }
    let first = read_wav(&manifest.resolve(&manifest.entries[0])).unwrap();
    assert!((first.duration() - spec.duration).abs() < 1e-3);
}
