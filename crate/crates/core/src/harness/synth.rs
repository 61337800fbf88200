//! Synthetic scene/device dataset.
//!
//! Every scene class owns a prototype: a harmonic tone comb with amplitude
//! modulation plus a band of filtered noise. Cities add background noise at
//! their own level and tint. Devices recolor the finished clip with a
//! cascade of shelving/peaking biquads, a gain and a soft-clipping
//! compressor. The underlying clip depends only on (seed, class, city,
//! index), so all devices see the same scene.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestEntry, REFERENCE_DEVICE};
use crate::error::{Error, Result};
use crate::frontend::{write_wav, Waveform, SAMPLE_RATE};
use crate::rng::{hash_str, keyed_rng};

const SCENES: [&str; 10] = [
    "airport",
    "bus",
    "metro",
    "metro_station",
    "park",
    "public_square",
    "shopping_mall",
    "street_pedestrian",
    "street_traffic",
    "tram",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FilterSpec {
    Peaking { freq: f64, q: f64, gain_db: f64 },
    LowShelf { freq: f64, gain_db: f64 },
    HighShelf { freq: f64, gain_db: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    pub filters: Vec<FilterSpec>,
    pub gain_db: f64,
    /// 0 = linear; larger values squash the dynamic range harder.
    pub compression: f64,
}

impl DeviceProfile {
    pub fn identity(name: &str) -> Self {
        DeviceProfile {
            name: name.into(),
            filters: Vec::new(),
            gain_db: 0.0,
            compression: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.filters.is_empty() && self.gain_db == 0.0 && self.compression == 0.0
    }

    /// Reference device A followed by `n - 1` colored devices B, C, ...
    pub fn default_set(n: usize) -> Vec<DeviceProfile> {
        let mut out = vec![DeviceProfile::identity(REFERENCE_DEVICE)];
        for i in 1..n {
            let name = ((b'A' + i as u8) as char).to_string();
            let s = if i % 2 == 1 { 1.0 } else { -1.0 };
            let k = 1.0 + (i as f64 - 1.0) * 0.35;
            out.push(DeviceProfile {
                name,
                filters: vec![
                    FilterSpec::LowShelf {
                        freq: 250.0 * k,
                        gain_db: -8.0 * s,
                    },
                    FilterSpec::Peaking {
                        freq: 1800.0 * k,
                        q: 0.9,
                        gain_db: 9.0 * s,
                    },
                    FilterSpec::HighShelf {
                        freq: 5000.0 / k,
                        gain_db: -10.0 * s,
                    },
                ],
                gain_db: -5.0 * s,
                compression: 0.3 + 0.2 * (i % 3) as f64,
            });
        }
        out
    }

    pub fn apply(&self, x: &[f64], sample_rate: u32) -> Vec<f64> {
        let mut y = x.to_vec();
        for f in &self.filters {
            y = Biquad::design(f, sample_rate as f64).process(&y);
        }
        let g = 10f64.powf(self.gain_db / 20.0);
        y.iter_mut().for_each(|v| *v *= g);
        if self.compression > 0.0 {
            let drive = 1.0 + 8.0 * self.compression;
            y.iter_mut().for_each(|v| *v = (drive * *v).tanh() / drive.tanh());
        }
        y
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub cities: usize,
    pub devices: Vec<DeviceProfile>,
    /// Clips per (class, city, device).
    pub clips_per: usize,
    pub duration: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(classes: usize, cities: usize, devices: usize, clips_per: usize, seed: u64) -> Self {
        SynthSpec {
            classes,
            cities,
            devices: DeviceProfile::default_set(devices),
            clips_per,
            duration: 1.5,
            sample_rate: SAMPLE_RATE,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.cities == 0 || self.clips_per == 0 || self.devices.is_empty() {
            return Err(Error::Config("synthetic spec needs classes, cities, devices and clips".into()));
        }
        if self.devices.iter().all(|d| d.name != REFERENCE_DEVICE) {
            return Err(Error::Config(format!("synthetic spec lacks device {}", REFERENCE_DEVICE)));
        }
        if !(self.duration > 0.0) {
            return Err(Error::Config("clip duration must be positive".into()));
        }
        Ok(())
    }

    pub fn scene_name(&self, class: usize) -> String {
        if self.classes <= SCENES.len() {
            SCENES[class].to_string()
        } else {
            format!("scene{:02}", class)
        }
    }

    pub fn city_name(&self, city: usize) -> String {
        format!("city{:02}", city)
    }

    pub fn samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }

    pub fn clip_path(&self, class: usize, city: usize, device: usize, index: usize) -> String {
        format!(
            "audio/{}/{}_{}_{:03}.wav",
            self.devices[device].name,
            self.scene_name(class),
            self.city_name(city),
            index
        )
    }

    /// Every clip in manifest order: class, city, index, device.
    pub fn entries(&self) -> Vec<(ManifestEntry, [usize; 4])> {
        let mut out = Vec::new();
        for k in 0..self.classes {
            for c in 0..self.cities {
                for i in 0..self.clips_per {
                    for d in 0..self.devices.len() {
                        let e = ManifestEntry {
                            path: self.clip_path(k, c, d, i),
                            scene: self.scene_name(k),
                            city: self.city_name(c),
                            device: self.devices[d].name.clone(),
                        };
                        out.push((e, [k, c, d, i]));
                    }
                }
            }
        }
        out
    }
}

/// Second-order IIR section (transposed direct form II).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Audio-EQ-cookbook designs (shelf slope 1).
    pub fn design(spec: &FilterSpec, fs: f64) -> Self {
        let (freq, gain_db) = match *spec {
            FilterSpec::Peaking { freq, gain_db, .. } | FilterSpec::LowShelf { freq, gain_db } | FilterSpec::HighShelf { freq, gain_db } => {
                (freq, gain_db)
            }
        };
        let a = 10f64.powf(gain_db / 40.0);
        let w0 = 2.0 * PI * freq / fs;
        let (sin, cos) = w0.sin_cos();
        let (b, den) = match *spec {
            FilterSpec::Peaking { q, .. } => {
                let alpha = sin / (2.0 * q);
                ([1.0 + alpha * a, -2.0 * cos, 1.0 - alpha * a], [1.0 + alpha / a, -2.0 * cos, 1.0 - alpha / a])
            }
            FilterSpec::LowShelf { .. } => {
                let k = 2.0 * a.sqrt() * sin / 2.0 * 2f64.sqrt();
                (
                    [
                        a * ((a + 1.0) - (a - 1.0) * cos + k),
                        2.0 * a * ((a - 1.0) - (a + 1.0) * cos),
                        a * ((a + 1.0) - (a - 1.0) * cos - k),
                    ],
                    [(a + 1.0) + (a - 1.0) * cos + k, -2.0 * ((a - 1.0) + (a + 1.0) * cos), (a + 1.0) + (a - 1.0) * cos - k],
                )
            }
            FilterSpec::HighShelf { .. } => {
                let k = 2.0 * a.sqrt() * sin / 2.0 * 2f64.sqrt();
                (
                    [
                        a * ((a + 1.0) + (a - 1.0) * cos + k),
                        -2.0 * a * ((a - 1.0) + (a + 1.0) * cos),
                        a * ((a + 1.0) + (a - 1.0) * cos - k),
                    ],
                    [(a + 1.0) - (a - 1.0) * cos + k, 2.0 * ((a - 1.0) - (a + 1.0) * cos), (a + 1.0) - (a - 1.0) * cos - k],
                )
            }
        };
        Biquad::normalized(b, den)
    }

    /// Constant 0 dB peak gain band-pass.
    pub fn bandpass(freq: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * freq / fs;
        let alpha = w0.sin() / (2.0 * q);
        Biquad::normalized([alpha, 0.0, -alpha], [1.0 + alpha, -2.0 * w0.cos(), 1.0 - alpha])
    }

    fn normalized(b: [f64; 3], a: [f64; 3]) -> Self {
        Biquad {
            b: [b[0] / a[0], b[1] / a[0], b[2] / a[0]],
            a: [a[1] / a[0], a[2] / a[0]],
        }
    }

    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let (mut z1, mut z2) = (0.0, 0.0);
        x.iter()
            .map(|&v| {
                let y = self.b[0] * v + z1;
                z1 = self.b[1] * v - self.a[0] * y + z2;
                z2 = self.b[2] * v - self.a[1] * y;
                y
            })
            .collect()
    }

    /// Magnitude response at `freq`.
    pub fn gain_at(&self, freq: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq / fs;
        let z = |k: f64| (-(k * w)).sin_cos();
        let (s1, c1) = z(1.0);
        let (s2, c2) = z(2.0);
        let num = (self.b[0] + self.b[1] * c1 + self.b[2] * c2, self.b[1] * s1 + self.b[2] * s2);
        let den = (1.0 + self.a[0] * c1 + self.a[1] * c2, self.a[0] * s1 + self.a[1] * s2);
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }
}

#[derive(Clone, Debug)]
struct Prototype {
    f0: f64,
    harmonics: usize,
    band: f64,
    band_q: f64,
    mod_rate: f64,
    tone_level: f64,
}

fn prototype(spec: &SynthSpec, class: usize) -> Prototype {
    let mut rng = keyed_rng(spec.seed, &[hash_str("prototype"), class as u64]);
    let n = spec.classes.max(2) as f64;
    // spread fundamentals and noise bands on log axes, bands in a scrambled order
    let pos = class as f64 / (n - 1.0);
    let scrambled = ((class * 7 + 3) % spec.classes.max(1)) as f64 / (n - 1.0);
    Prototype {
        f0: 140.0 * (1400.0f64 / 140.0).powf(pos) * rng.gen_range(0.97..1.03),
        harmonics: rng.gen_range(2..=5),
        band: 400.0 * (8000.0f64 / 400.0).powf(scrambled),
        band_q: rng.gen_range(1.0..3.0),
        mod_rate: rng.gen_range(0.5..6.0),
        tone_level: rng.gen_range(0.4..0.8),
    }
}

/// The device-independent clip for (class, city, index).
pub fn scene_clip(spec: &SynthSpec, class: usize, city: usize, index: usize) -> Waveform {
    let proto = prototype(spec, class);
    let fs = spec.sample_rate as f64;
    let n = spec.samples();
    let mut rng = keyed_rng(spec.seed, &[hash_str("clip"), class as u64, city as u64, index as u64]);
    let f0 = proto.f0 * rng.gen_range(0.96..1.04);
    let band = proto.band * rng.gen_range(0.92..1.08);
    let tone = proto.tone_level * 10f64.powf(rng.gen_range(-3.0..3.0) / 20.0);
    let mod_depth = rng.gen_range(0.2..0.8);
    let mod_phase = rng.gen_range(0.0..2.0 * PI);
    let phases: Vec<f64> = (0..proto.harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();

    let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let bp = Biquad::bandpass(band.min(0.45 * fs), proto.band_q, fs);
    let noise = bp.process(&bp.process(&white));
    let noise_rms = (noise.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);

    // city background: low-passed noise whose level and tint belong to the city
    let mut city_rng = keyed_rng(spec.seed, &[hash_str("city"), city as u64]);
    let bg_level = 10f64.powf(city_rng.gen_range(-28.0..-14.0) / 20.0);
    let tint = FilterSpec::LowShelf {
        freq: city_rng.gen_range(200.0..800.0),
        gain_db: city_rng.gen_range(0.0..12.0),
    };
    let bg_white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let bg = Biquad::design(&tint, fs).process(&bg_white);
    let bg_rms = (bg.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);

    let mut samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let env = 1.0 - mod_depth * 0.5 * (1.0 + (2.0 * PI * proto.mod_rate * t + mod_phase).sin());
            let comb: f64 = phases
                .iter()
                .enumerate()
                .map(|(h, ph)| {
                    let f = f0 * (h + 1) as f64;
                    if f < 0.45 * fs {
                        (2.0 * PI * f * t + ph).sin() / (h + 1) as f64
                    } else {
                        0.0
                    }
                })
                .sum();
            tone * env * comb + 0.3 * noise[i] / noise_rms + bg_level * bg[i] / bg_rms
        })
        .collect();
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    samples.iter_mut().for_each(|v| *v *= 0.5 / peak);
    Waveform::new(samples, spec.sample_rate)
}

/// A clip as recorded by `device`.
pub fn synth_clip(spec: &SynthSpec, class: usize, city: usize, device: usize, index: usize) -> Waveform {
    let clean = scene_clip(spec, class, city, index);
    Waveform::new(spec.devices[device].apply(&clean.samples, spec.sample_rate), spec.sample_rate)
}

/// All clips of the spec in memory, manifest entries paired with audio.
pub fn synth_examples(spec: &SynthSpec) -> Result<Vec<(ManifestEntry, Waveform)>> {
    spec.validate()?;
    let mut cache: Option<((usize, usize, usize), Waveform)> = None;
    let mut out = Vec::new();
    for (entry, [k, c, d, i]) in spec.entries() {
        let clean = match &cache {
            Some((key, w)) if *key == (k, c, i) => w.clone(),
            _ => {
                let w = scene_clip(spec, k, c, i);
                cache = Some(((k, c, i), w.clone()));
                w
            }
        };
        let wave = Waveform::new(spec.devices[d].apply(&clean.samples, spec.sample_rate), spec.sample_rate);
        out.push((entry, wave));
    }
    Ok(out)
}

/// Writes every clip as WAV under `dir/audio/<device>/`, plus `manifest.csv`
/// and `synth_spec.json`.
pub fn generate_synth_dataset(spec: &SynthSpec, dir: &Path) -> Result<DatasetManifest> {
    let clips = synth_examples(spec)?;
    let mut entries = Vec::with_capacity(clips.len());
    for (entry, wave) in clips {
        let path = dir.join(&entry.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_wav(&path, &wave)?;
        entries.push(entry);
    }
    let manifest = DatasetManifest::new(entries, dir);
    manifest.write_csv(&dir.join("manifest.csv"))?;
    let spec_path = dir.join("synth_spec.json");
    fs::write(&spec_path, serde_json::to_vec_pretty(spec)?).map_err(|e| Error::io(&spec_path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peaking_filter_hits_its_gain() {
        let fs = 22050.0;
        let b = Biquad::design(&FilterSpec::Peaking { freq: 1000.0, q: 1.0, gain_db: 9.0 }, fs);
        assert!((20.0 * b.gain_at(1000.0, fs).log10() - 9.0).abs() < 1e-9);
        assert!((20.0 * b.gain_at(20.0, fs).log10()).abs() < 0.1);
        let lo = Biquad::design(&FilterSpec::LowShelf { freq: 300.0, gain_db: -8.0 }, fs);
        assert!((20.0 * lo.gain_at(1.0, fs).log10() + 8.0).abs() < 0.05);
        assert!((20.0 * lo.gain_at(300.0, fs).log10() + 4.0).abs() < 1e-6);
        let hi = Biquad::design(&FilterSpec::HighShelf { freq: 4000.0, gain_db: 6.0 }, fs);
        assert!((20.0 * hi.gain_at(10000.0, fs).log10() - 6.0).abs() < 0.5);
        assert!((20.0 * hi.gain_at(4000.0, fs).log10() - 3.0).abs() < 1e-6);
        let bp = Biquad::bandpass(2000.0, 2.0, fs);
        assert!((bp.gain_at(2000.0, fs) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_device_is_exact() {
        let spec = SynthSpec::new(2, 2, 3, 1, 5);
        assert!(spec.devices[0].is_identity());
        let a = synth_clip(&spec, 1, 0, 0, 0);
        assert_eq!(a, scene_clip(&spec, 1, 0, 0));
        let b = synth_clip(&spec, 1, 0, 1, 0);
        assert_ne!(a, b);
        assert_eq!(a.samples.len(), spec.samples());
    }

    #[test]
    fn files_are_deterministic() {
        let spec = SynthSpec {
            duration: 0.2,
            ..SynthSpec::new(2, 2, 2, 1, 11)
        };
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m1 = generate_synth_dataset(&spec, d1.path()).unwrap();
        generate_synth_dataset(&spec, d2.path()).unwrap();
        assert_eq!(m1.entries.len(), 8);
        for e in &m1.entries {
            assert_eq!(fs::read(d1.path().join(&e.path)).unwrap(), fs::read(d2.path().join(&e.path)).unwrap());
        }
        let back = DatasetManifest::read_csv(&d1.path().join("manifest.csv")).unwrap();
        assert_eq!(back.entries, m1.entries);
    }
}
