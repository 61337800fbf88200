//! Analytic receptive fields.
//!
//! Along the main path each conv or pool layer with kernel `k` and stride `s`
//! updates `r = r + (k - 1) * j` and `j = j * s`. Shortcuts are identity or
//! 1x1 convs, so they never widen the field.

use serde::{Deserialize, Serialize};

use super::{Architecture, Network};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceptiveField {
    pub rf_freq: usize,
    pub rf_time: usize,
    /// Input pixels per feature-map pixel.
    pub jump_freq: usize,
    pub jump_time: usize,
}

impl ReceptiveField {
    const UNIT: ReceptiveField = ReceptiveField {
        rf_freq: 1,
        rf_time: 1,
        jump_freq: 1,
        jump_time: 1,
    };

    fn step(self, k: usize, s: usize) -> Self {
        ReceptiveField {
            rf_freq: self.rf_freq + (k - 1) * self.jump_freq,
            rf_time: self.rf_time + (k - 1) * self.jump_time,
            jump_freq: self.jump_freq * s,
            jump_time: self.jump_time * s,
        }
    }
}

/// A main-path layer as seen by the receptive-field recurrence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RfLayer {
    pub name: String,
    pub kernel: usize,
    pub stride: usize,
    /// Leading zero padding.
    pub pad: usize,
    pub is_pool: bool,
}

/// Main-path layers up to (and excluding) the classifier.
pub fn main_path(arch: &Architecture) -> Vec<RfLayer> {
    let conv = |i: usize| {
        let c = &arch.convs[i];
        RfLayer {
            name: c.name.clone(),
            kernel: c.kernel,
            stride: c.stride,
            pad: (c.kernel - 1) / 2,
            is_pool: false,
        }
    };
    let mut out = vec![conv(arch.stem)];
    for blk in &arch.blocks {
        out.push(conv(blk.conv1));
        out.push(conv(blk.conv2));
        if blk.pool {
            out.push(RfLayer {
                name: format!("{}.pool", blk.name),
                kernel: 2,
                stride: 2,
                pad: 0,
                is_pool: true,
            });
        }
    }
    out
}

/// Receptive field after every main-path layer.
pub fn rf_trace(arch: &Architecture) -> Vec<(String, ReceptiveField)> {
    let mut rf = ReceptiveField::UNIT;
    main_path(arch)
        .into_iter()
        .map(|l| {
            rf = rf.step(l.kernel, l.stride);
            (l.name, rf)
        })
        .collect()
}

pub fn architecture_rf(arch: &Architecture) -> ReceptiveField {
    // the 1x1 classifier leaves the field unchanged
    rf_trace(arch).last().map_or(ReceptiveField::UNIT, |(_, r)| *r)
}

pub fn max_receptive_field(net: &Network) -> ReceptiveField {
    architecture_rf(&net.arch)
}

/// Inclusive input-coordinate box; may extend past the input borders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfBox {
    pub f0: isize,
    pub f1: isize,
    pub t0: isize,
    pub t1: isize,
}

impl RfBox {
    pub fn height(&self) -> usize {
        (self.f1 - self.f0 + 1).max(0) as usize
    }

    pub fn width(&self) -> usize {
        (self.t1 - self.t0 + 1).max(0) as usize
    }

    pub fn clip(&self, f: usize, t: usize) -> RfBox {
        RfBox {
            f0: self.f0.max(0),
            f1: self.f1.min(f as isize - 1),
            t0: self.t0.max(0),
            t1: self.t1.min(t as isize - 1),
        }
    }

    pub fn contains(&self, f: usize, t: usize) -> bool {
        let (f, t) = (f as isize, t as isize);
        f >= self.f0 && f <= self.f1 && t >= self.t0 && t <= self.t1
    }

    pub fn inside(&self, f: usize, t: usize) -> bool {
        self.f0 >= 0 && self.t0 >= 0 && self.f1 < f as isize && self.t1 < t as isize
    }
}

/// Spatial size of the feature map feeding the classifier.
pub fn penultimate_size(arch: &Architecture, f: usize, t: usize) -> (usize, usize) {
    main_path(arch).iter().fold((f, t), |(f, t), l| {
        if l.is_pool {
            (f / 2, t / 2)
        } else {
            (f.div_ceil(l.stride), t.div_ceil(l.stride))
        }
    })
}

/// Middle pixel of the penultimate map (floor of half on each axis).
pub fn center_pixel(arch: &Architecture, f: usize, t: usize) -> (usize, usize) {
    let (pf, pt) = penultimate_size(arch, f, t);
    (pf / 2, pt / 2)
}

/// Input region that can influence penultimate pixel `(pf, pt)`.
pub fn rf_box(arch: &Architecture, pixel: (usize, usize)) -> RfBox {
    let (mut f0, mut f1) = (pixel.0 as isize, pixel.0 as isize);
    let (mut t0, mut t1) = (pixel.1 as isize, pixel.1 as isize);
    for l in main_path(arch).iter().rev() {
        let (s, p, k) = (l.stride as isize, l.pad as isize, l.kernel as isize);
        f0 = f0 * s - p;
        f1 = f1 * s - p + k - 1;
        t0 = t0 * s - p;
        t1 = t1 * s - p + k - 1;
    }
    RfBox { f0, f1, t0, t1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchConfig;

    fn rf_of(layers: &[(usize, usize)]) -> ReceptiveField {
        layers.iter().fold(ReceptiveField::UNIT, |r, &(k, s)| r.step(k, s))
    }

    #[test]
    fn recurrence_examples() {
        let r = rf_of(&[(3, 1), (3, 1)]);
        assert_eq!(r.rf_freq, 5);
        let r = rf_of(&[(5, 2), (3, 1)]);
        assert_eq!((r.rf_freq, r.jump_freq), (9, 2));
    }

    #[test]
    fn baseline_values() {
        let a = Architecture::plan(&ArchConfig::new(32, 1, 1)).unwrap();
        let r = architecture_rf(&a);
        assert_eq!((r.rf_freq, r.rf_time, r.jump_freq), (167, 167, 16));
    }

    #[test]
    fn box_size_matches_recurrence() {
        for d in 1..4 {
            let a = Architecture::plan(&ArchConfig::new(8, d, 2)).unwrap();
            let b = rf_box(&a, (5, 7));
            let r = architecture_rf(&a);
            assert_eq!(b.height(), r.rf_freq);
            assert_eq!(b.width(), r.rf_time);
        }
    }

    #[test]
    fn trace_is_monotone() {
        let a = Architecture::plan(&ArchConfig::new(8, 2, 3)).unwrap();
        let trace = rf_trace(&a);
        for w in trace.windows(2) {
            assert!(w[1].1.rf_freq >= w[0].1.rf_freq);
            assert!(w[1].1.jump_freq == w[0].1.jump_freq || w[1].1.jump_freq == 2 * w[0].1.jump_freq);
        }
    }

    #[test]
    fn penultimate_size_matches_shape_walk() {
        let a = Architecture::plan(&ArchConfig::new(8, 1, 1)).unwrap();
        assert_eq!(penultimate_size(&a, 256, 431), (16, 27));
    }
}
