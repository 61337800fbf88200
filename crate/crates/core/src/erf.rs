//! Effective receptive fields: mean absolute input gradient of the centre
//! pixel of the penultimate feature map.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::rf::{center_pixel, rf_box, RfBox};
use crate::arch::{Mode, Network};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::frontend::MelSpectrogram;
use crate::tensor::Tensor;

/// Mean absolute input gradient over a set of inputs, indexed `[f * time + t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErfMap {
    pub values: Vec<f64>,
    pub freq: usize,
    pub time: usize,
    /// Penultimate-layer pixel that was seeded.
    pub seed_location: (usize, usize),
    pub sample_count: usize,
    /// Analytic maximum receptive field of the seed pixel, unclipped.
    pub rf_box: RfBox,
}

impl ErfMap {
    pub fn at(&self, f: usize, t: usize) -> f64 {
        self.values[f * self.time + t]
    }

    /// Bounding box of the nonzero entries, `None` for an all-zero map.
    pub fn support(&self) -> Option<RfBox> {
        let mut b: Option<RfBox> = None;
        for f in 0..self.freq {
            for t in 0..self.time {
                if self.at(f, t) != 0.0 {
                    let (f, t) = (f as isize, t as isize);
                    b = Some(match b {
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
        b
    }

    /// Largest magnitude found outside the analytic box.
    pub fn mass_outside_box(&self) -> f64 {
        let mut worst = 0.0f64;
        for f in 0..self.freq {
            for t in 0..self.time {
                if !self.rf_box.contains(f, t) {
                    worst = worst.max(self.at(f, t));
                }
            }
        }
        worst
    }
}

/// Summary of a map cropped to its maximum receptive field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErfSummary {
    /// Crop window in input coordinates (the RF box clipped to the input).
    pub crop: RfBox,
    /// Cropped values, row-major over `crop.height() x crop.width()`.
    pub cropped: Vec<f64>,
    pub mass: f64,
    /// Mass-weighted centre in input coordinates.
    pub centroid: (f64, f64),
    pub std_freq: f64,
    pub std_time: f64,
}

/// Input gradient of the penultimate centre pixel, averaged in absolute
/// value over `inputs`.
pub fn compute_erf(net: &Network, inputs: &[MelSpectrogram]) -> Result<ErfMap> {
    let tensors: Vec<Tensor> = inputs.iter().map(|m| m.values.clone()).collect();
    compute_erf_tensors(net, &tensors, 1.0)
}

/// Like [`compute_erf`] on raw `[1, C, F, T]` tensors with a custom seed
/// gradient magnitude.
pub fn compute_erf_tensors(net: &Network, inputs: &[Tensor], seed_scale: f64) -> Result<ErfMap> {
    let first = inputs.first().ok_or_else(|| Error::Input("ERF needs at least one input".into()))?;
    let (_, _, freq, time) = first.dims4()?;
    let pixel = center_pixel(&net.arch, freq, time);
    let mut acc = vec![0.0; freq * time];
    for x in inputs {
        if x.shape() != first.shape() {
            return Err(Error::Input(format!("ERF inputs differ in shape: {:?} vs {:?}", x.shape(), first.shape())));
        }
        if x.shape()[0] != 1 {
            return Err(Error::dim("batch", "ERF inputs are single examples"));
        }
        let grad = input_gradient(net, x, pixel, seed_scale)?;
        // the gradient w.r.t. the raw input carries the standardization factor
        let inv_std = 1.0 / net.input_norm.1;
        let channels = x.shape()[1];
        for c in 0..channels {
            for (a, g) in acc.iter_mut().zip(&grad[c * freq * time..(c + 1) * freq * time]) {
                *a += (g * inv_std).abs();
            }
        }
    }
    let n = inputs.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    Ok(ErfMap {
        values: acc,
        freq,
        time,
        seed_location: pixel,
        sample_count: inputs.len(),
        rf_box: rf_box(&net.arch, pixel),
    })
}

fn input_gradient(net: &Network, x: &Tensor, pixel: (usize, usize), seed_scale: f64) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let xv = g.leaf(net.normalize_input(x), true);
    let pass = net.forward(&mut g, xv, Mode::Eval, false)?;
    let (b, c, h, w) = g.value(pass.penultimate).dims4()?;
    let mut seed = vec![0.0; b * c * h * w];
    for ch in 0..c {
        seed[(ch * h + pixel.0) * w + pixel.1] = seed_scale;
    }
    g.backward_with(pass.penultimate, seed)?;
    g.take_grad(xv).ok_or_else(|| Error::Numeric("input received no gradient".into()))
}

/// Crops to the maximum receptive field and reports centroid and spreads.
pub fn erf_stats(map: &ErfMap) -> ErfSummary {
    let crop = map.rf_box.clip(map.freq, map.time);
    let mut cropped = Vec::with_capacity(crop.height() * crop.width());
    let (mut mass, mut mf, mut mt) = (0.0, 0.0, 0.0);
    for f in crop.f0..=crop.f1 {
        for t in crop.t0..=crop.t1 {
            let v = map.at(f as usize, t as usize);
            cropped.push(v);
            mass += v;
            mf += v * f as f64;
            mt += v * t as f64;
        }
    }
    if mass <= 0.0 {
        return ErfSummary {
            crop,
            cropped,
            mass: 0.0,
            centroid: (0.0, 0.0),
            std_freq: 0.0,
            std_time: 0.0,
        };
    }
    let (cf, ct) = (mf / mass, mt / mass);
    let (mut vf, mut vt) = (0.0, 0.0);
    for f in crop.f0..=crop.f1 {
        for t in crop.t0..=crop.t1 {
            let v = map.at(f as usize, t as usize);
            vf += v * (f as f64 - cf).powi(2);
            vt += v * (t as f64 - ct).powi(2);
        }
    }
    ErfSummary {
        crop,
        cropped,
        mass,
        centroid: (cf, ct),
        std_freq: (vf / mass).sqrt(),
        std_time: (vt / mass).sqrt(),
    }
}

/// Export stem such as `erf_W32-D1-K1-damped_seed3_f0-166_t0-166`.
pub fn export_stem(config_tag: &str, seed: u64, crop: &RfBox) -> String {
    format!("erf_{}_seed{}_f{}-{}_t{}-{}", config_tag, seed, crop.f0, crop.f1, crop.t0, crop.t1)
}

/// Writes the cropped map as CSV (one frequency row per line) and as a
/// 16-bit PGM scaled to the map maximum. Returns both paths.
pub fn export_erf(summary: &ErfSummary, dir: &Path, config_tag: &str, seed: u64) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = export_stem(config_tag, seed, &summary.crop);
    let (h, w) = (summary.crop.height(), summary.crop.width());

    let csv_path = dir.join(format!("{}.csv", stem));
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_path(&csv_path)?;
    for row in summary.cropped.chunks(w.max(1)) {
        wtr.write_record(row.iter().map(|v| format!("{:e}", v)))?;
    }
    wtr.flush().map_err(|e| Error::io(&csv_path, e))?;

    let pgm_path = dir.join(format!("{}.pgm", stem));
    fs::write(&pgm_path, encode_pgm16(&summary.cropped, h, w)).map_err(|e| Error::io(&pgm_path, e))?;
    Ok((csv_path, pgm_path))
}

/// Binary 16-bit PGM (`P5`, maxval 65535, big-endian samples).
pub fn encode_pgm16(values: &[f64], height: usize, width: usize) -> Vec<u8> {
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let mut out = Vec::with_capacity(20 + 2 * values.len());
    write!(out, "P5\n{} {}\n65535\n", width, height).expect("vec write");
    for &v in values {
        let q = if max > 0.0 { (v / max * 65535.0).round() as u16 } else { 0 };
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}
