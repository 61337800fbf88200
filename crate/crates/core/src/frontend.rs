//! Waveform to log-mel spectrogram.
//!
//! Center-padded STFT (periodic Hann, 2048 window, hop 512) -> power
//! spectrum -> A-weighting per frequency bin -> Slaney-style area-normalized
//! triangular mel filterbank from 0 Hz to Nyquist -> dB, clipped at 100 dB
//! below the clip maximum.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 22050;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Waveform { samples, sample_rate }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    A,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MelNorm {
    /// Each triangle scaled by `2 / (f_hi - f_lo)`.
    #[default]
    Slaney,
    /// Unit-peak triangles.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    /// Dynamic range kept below the per-clip maximum.
    pub top_db: f64,
    /// Power floor before the log, i.e. an absolute floor of
    /// `10 log10(amin)` dB.
    pub amin: f64,
    pub weighting: Weighting,
    #[serde(default)]
    pub mel_norm: MelNorm,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sample_rate: SAMPLE_RATE,
            n_fft: 2048,
            hop: 512,
            n_mels: 256,
            top_db: 100.0,
            amin: 1e-10,
            weighting: Weighting::A,
            mel_norm: MelNorm::Slaney,
        }
    }
}

impl FrontendConfig {
    pub fn frames_for(&self, samples: usize) -> usize {
        1 + samples / self.hop
    }

    pub fn floor_db(&self) -> f64 {
        10.0 * self.amin.log10()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    /// `[1, 1, mel_bins, frames]`, in dB.
    pub values: Tensor,
    pub mel_bins: usize,
    pub frame_hop: usize,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.shape()[3]
    }

    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.values.data()[bin * self.frames() + frame]
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= min_log_hz {
        min_log_mel + (hz / min_log_hz).ln() / logstep
    } else {
        hz / f_sp
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        min_log_hz * (logstep * (mel - min_log_mel)).exp()
    } else {
        f_sp * mel
    }
}

/// A-weighting gain in dB, floored at -80 dB.
pub fn a_weighting_db(hz: f64) -> f64 {
    let f2 = hz * hz;
    let num = 12194.0f64.powi(2) * f2 * f2;
    let den = (f2 + 20.6f64.powi(2)) * ((f2 + 107.7f64.powi(2)) * (f2 + 737.9f64.powi(2))).sqrt() * (f2 + 12194.0f64.powi(2));
    if num == 0.0 {
        return -80.0;
    }
    (2.0 + 20.0 * (num / den).log10()).max(-80.0)
}

struct MelFilter {
    start: usize,
    weights: Vec<f64>,
}

pub struct Frontend {
    cfg: FrontendConfig,
    window: Vec<f64>,
    bin_weight: Vec<f64>,
    filters: Vec<MelFilter>,
    centers: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Frontend {
    pub fn new(cfg: FrontendConfig) -> Result<Self> {
        if cfg.n_fft < 2 || cfg.hop == 0 || cfg.n_mels == 0 {
            return Err(Error::Config(format!("invalid frontend sizes {:?}", cfg)));
        }
        let n = cfg.n_fft;
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let bins = n / 2 + 1;
        let sr = cfg.sample_rate as f64;
        let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * sr / n as f64).collect();
        let bin_weight = freqs
            .iter()
            .map(|&f| match cfg.weighting {
                Weighting::A => 10f64.powf(a_weighting_db(f) / 10.0),
                Weighting::None => 1.0,
            })
            .collect();
        let (mlo, mhi) = (hz_to_mel(0.0), hz_to_mel(sr / 2.0));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let mut filters = Vec::with_capacity(cfg.n_mels);
        for m in 0..cfg.n_mels {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = match cfg.mel_norm {
                MelNorm::Slaney => 2.0 / (hi - lo),
                MelNorm::None => 1.0,
            };
            let w: Vec<(usize, f64)> = freqs
                .iter()
                .enumerate()
                .map(|(k, &f)| {
                    let lower = (f - lo) / (c - lo);
                    let upper = (hi - f) / (hi - c);
                    (k, lower.min(upper).max(0.0) * norm)
                })
                .filter(|&(_, v)| v > 0.0)
                .collect();
            let start = w.first().map_or(0, |&(k, _)| k);
            let weights = w.iter().map(|&(_, v)| v).collect();
            filters.push(MelFilter { start, weights });
        }
        let centers = edges[1..=cfg.n_mels].to_vec();
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Frontend {
            cfg,
            window,
            bin_weight,
            filters,
            centers,
            fft,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    /// Center frequency (Hz) of each mel filter.
    pub fn mel_centers(&self) -> &[f64] {
        &self.centers
    }

    /// Weighted mel power before the log, `[n_mels][frames]` row-major.
    pub fn mel_power(&self, w: &Waveform) -> Result<(Vec<f64>, usize)> {
        let cfg = &self.cfg;
        if w.sample_rate != cfg.sample_rate {
            return Err(Error::Input(format!(
                "sample rate {} Hz does not match the frontend's {} Hz",
                w.sample_rate, cfg.sample_rate
            )));
        }
        if w.samples.len() < cfg.n_fft {
            return Err(Error::Input(format!(
                "signal has {} samples, at least {} required",
                w.samples.len(),
                cfg.n_fft
            )));
        }
        if let Some(i) = w.samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Input(format!("non-finite sample at index {}", i)));
        }
        let n = cfg.n_fft;
        let half = n / 2;
        let mut padded = vec![0.0; w.samples.len() + n];
        padded[half..half + w.samples.len()].copy_from_slice(&w.samples);
        let frames = cfg.frames_for(w.samples.len());
        let bins = n / 2 + 1;
        let mut out = vec![0.0; cfg.n_mels * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut power = vec![0.0; bins];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for fr in 0..frames {
            let seg = &padded[fr * cfg.hop..fr * cfg.hop + n];
            for ((b, &s), &win) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex::new(s * win, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, p) in power.iter_mut().enumerate() {
                *p = buf[k].norm_sqr() * self.bin_weight[k];
            }
            for (m, filt) in self.filters.iter().enumerate() {
                let s: f64 = filt
                    .weights
                    .iter()
                    .zip(&power[filt.start..])
                    .map(|(a, b)| a * b)
                    .sum();
                out[m * frames + fr] = s;
            }
        }
        Ok((out, frames))
    }

    pub fn compute(&self, w: &Waveform) -> Result<MelSpectrogram> {
        let (power, frames) = self.mel_power(w)?;
        let mut db: Vec<f64> = power
            .iter()
            .map(|&p| 10.0 * p.max(self.cfg.amin).log10())
            .collect();
        let max = db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let floor = max - self.cfg.top_db;
        for v in db.iter_mut() {
            *v = v.max(floor);
        }
        Ok(MelSpectrogram {
            values: Tensor::new(vec![1, 1, self.cfg.n_mels, frames], db)?,
            mel_bins: self.cfg.n_mels,
            frame_hop: self.cfg.hop,
        })
    }
}

/// Spectrogram with the default 256-band configuration.
pub fn compute_spectrogram(w: &Waveform) -> Result<MelSpectrogram> {
    Frontend::new(FrontendConfig::default())?.compute(w)
}

/// Reads a mono 16-bit PCM or 32-bit float WAV file.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Input(format!("{:?}: expected mono audio, got {} channels", path, spec.channels)));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (fmt, bits) => {
            return Err(Error::Input(format!("{:?}: unsupported sample format {:?}/{} bit", path, fmt, bits)));
        }
    };
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Writes a mono 32-bit float WAV file.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &w.samples {
        writer.write_sample(s as f32)?;
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Frontend {
        Frontend::new(FrontendConfig {
            n_mels: 64,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 60.0, 440.0, 1000.0, 4000.0, 11025.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn a_weighting_is_zero_db_at_1k() {
        assert!(a_weighting_db(1000.0).abs() < 0.01);
        assert!(a_weighting_db(100.0) < -15.0);
        assert_eq!(a_weighting_db(0.0), -80.0);
    }

    #[test]
    fn short_signal_is_rejected() {
        let w = Waveform::new(vec![0.0; 2047], SAMPLE_RATE);
        assert!(matches!(small().compute(&w), Err(Error::Input(_))));
    }

    #[test]
    fn non_finite_signal_is_rejected() {
        let mut s = vec![0.0; 4096];
        s[100] = f64::NAN;
        assert!(matches!(small().compute(&Waveform::new(s, SAMPLE_RATE)), Err(Error::Input(_))));
    }

    #[test]
    fn sample_rate_mismatch_is_rejected() {
        let w = Waveform::new(vec![0.0; 4096], 16000);
        assert!(matches!(small().compute(&w), Err(Error::Input(_))));
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let w = Waveform::new(vec![0.0; 8000], SAMPLE_RATE);
        let s = small().compute(&w).unwrap();
        assert!(s.values.data().iter().all(|&v| v == -100.0));
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let w = Waveform::new((0..3000).map(|i| (i as f64 * 0.01).sin() * 0.5).collect(), SAMPLE_RATE);
        write_wav(&p, &w).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.sample_rate, SAMPLE_RATE);
        for (a, b) in back.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn pcm16_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pcm.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&p, spec).unwrap();
        for v in [0i16, 16384, -32768] {
            wr.write_sample(v).unwrap();
        }
        wr.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap().samples, vec![0.0, 0.5, -1.0]);
    }

    #[test]
    fn ten_seconds_give_256_by_431() {
        let w = Waveform::new((0..220500).map(|i| (i as f64 * 0.05).sin() * 0.1).collect(), SAMPLE_RATE);
        let s = compute_spectrogram(&w).unwrap();
        assert_eq!(s.values.shape(), &[1, 1, 256, 431]);
        assert!(s.values.is_finite());
    }

    #[test]
    fn sine_peaks_in_nearest_mel_band() {
        let fe = Frontend::new(FrontendConfig::default()).unwrap();
        let sr = SAMPLE_RATE as f64;
        let w = Waveform::new(
            (0..22050).map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / sr).sin()).collect(),
            SAMPLE_RATE,
        );
        let expected = fe
            .mel_centers()
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        let s = fe.compute(&w).unwrap();
        for fr in 0..s.frames() {
            let peak = (0..s.mel_bins).max_by(|&a, &b| s.at(a, fr).total_cmp(&s.at(b, fr))).unwrap();
            assert_eq!(peak, expected, "frame {}", fr);
        }
    }

    #[test]
    fn tenfold_amplitude_adds_twenty_db() {
        let fe = small();
        let x: Vec<f64> = (0..9000).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
        let a = fe.mel_power(&Waveform::new(x.clone(), SAMPLE_RATE)).unwrap().0;
        let b = fe
            .mel_power(&Waveform::new(x.iter().map(|v| v * 10.0).collect(), SAMPLE_RATE))
            .unwrap()
            .0;
        for (p, q) in a.iter().zip(&b) {
            if *p > fe.config().amin {
                let shift = 10.0 * q.log10() - 10.0 * p.log10();
                assert!((shift - 20.0).abs() < 1e-9, "{}", shift);
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn frame_count_formula(len in 2048usize..12000, seed in 0u64..1000) {
            let x: Vec<f64> = (0..len).map(|i| (((i as u64 + seed) * 2654435761) % 2001) as f64 / 1000.0 - 1.0).collect();
            let s = small().compute(&Waveform::new(x, SAMPLE_RATE)).unwrap();
            proptest::prop_assert_eq!(s.frames(), 1 + len / 512);
            proptest::prop_assert!(s.values.is_finite());
        }
    }
}
