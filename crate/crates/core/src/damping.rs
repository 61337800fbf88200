//! Frequency-damping masks.
//!
//! A damped convolution scales every filter by a constant mask that is 1 on
//! the central frequency row and decays towards the frequency edges. The
//! mask is constant along channels and time and is never trained.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Padding, Var};
use crate::error::{Error, Result};

/// Shape of the decay away from the central frequency row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecayKind {
    /// `c(d) = 1 - (1 - floor) * d / center`
    #[default]
    Linear,
}

impl DecayKind {
    pub fn name(self) -> &'static str {
        match self {
            DecayKind::Linear => "linear",
        }
    }

    /// Mask value at distance `d` from the center row of a kernel whose
    /// center index is `center`.
    fn value(self, d: usize, center: usize, floor: f64) -> f64 {
        match self {
            DecayKind::Linear => 1.0 - (1.0 - floor) * d as f64 / center as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DampingMask {
    shape: [usize; 4],
    values: Vec<f64>,
    floor: f64,
    decay: DecayKind,
}

impl DampingMask {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn decay(&self) -> DecayKind {
        self.decay
    }

    /// The per-row profile along the frequency axis.
    pub fn frequency_profile(&self) -> Vec<f64> {
        let [_, _, kf, kt] = self.shape;
        (0..kf).map(|i| self.values[i * kt]).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.values.iter().all(|&v| v == 1.0)
    }
}

pub fn make_damping_mask(filter_shape: [usize; 4], floor: f64) -> Result<DampingMask> {
    make_damping_mask_with(filter_shape, floor, DecayKind::Linear)
}

pub fn make_damping_mask_with(filter_shape: [usize; 4], floor: f64, decay: DecayKind) -> Result<DampingMask> {
    let [cout, cin, kf, kt] = filter_shape;
    if kf % 2 == 0 {
        return Err(Error::Config(format!("damping needs an odd frequency kernel size, got {}", kf)));
    }
    if !(0.0..=1.0).contains(&floor) {
        return Err(Error::Config(format!("damping floor must lie in [0, 1], got {}", floor)));
    }
    let center = (kf - 1) / 2;
    let profile: Vec<f64> = (0..kf)
        .map(|f| {
            if kf == 1 {
                1.0
            } else {
                decay.value(f.abs_diff(center), center, floor)
            }
        })
        .collect();
    let mut values = Vec::with_capacity(cout * cin * kf * kt);
    for _ in 0..cout * cin {
        for &p in &profile {
            values.extend(std::iter::repeat_n(p, kt));
        }
    }
    Ok(DampingMask {
        shape: filter_shape,
        values,
        floor,
        decay,
    })
}

/// Convolution with effective weights `weight * mask`. Gradients reach
/// `weight` scaled by the mask; the mask itself is constant.
pub fn damped_conv2d<'a>(
    g: &mut Graph<'a>,
    input: Var,
    weight: Var,
    mask: &'a DampingMask,
    bias: Option<Var>,
    stride: (usize, usize),
    padding: Padding,
) -> Result<Var> {
    let ws = g.value(weight).shape();
    if ws != mask.shape {
        return Err(Error::dim(
            "mask",
            format!("mask shape {:?} does not match weight shape {:?}", mask.shape, ws),
        ));
    }
    let effective = g.mask_mul(weight, Cow::Borrowed(&mask.values))?;
    g.conv2d(input, effective, bias, stride, padding)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn pointwise_kernel_is_undamped() {
        let m = make_damping_mask([4, 3, 1, 1], 0.1).unwrap();
        assert!(m.is_identity());
    }

    #[test]
    fn linear_profiles() {
        let m3 = make_damping_mask([1, 1, 3, 3], 0.1).unwrap();
        assert!(close(&m3.frequency_profile(), &[0.1, 1.0, 0.1]));
        let m5 = make_damping_mask([2, 2, 5, 5], 0.1).unwrap();
        assert!(close(&m5.frequency_profile(), &[0.1, 0.55, 1.0, 0.55, 0.1]));
    }

    #[test]
    fn constant_along_time_and_channels() {
        let m = make_damping_mask([3, 2, 5, 3], 0.2).unwrap();
        let profile = m.frequency_profile();
        for (i, v) in m.values().iter().enumerate() {
            let f = (i / 3) % 5;
            assert_eq!(*v, profile[f]);
        }
    }

    #[test]
    fn even_kernel_is_config_error() {
        assert!(matches!(make_damping_mask([1, 1, 4, 3], 0.1), Err(Error::Config(_))));
        assert!(matches!(make_damping_mask([1, 1, 3, 3], 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn mask_shape_mismatch_is_dimension_error() {
        let mask = make_damping_mask([1, 1, 3, 3], 0.1).unwrap();
        let mut g = Graph::new();
        let x = g.input(crate::tensor::Tensor::zeros(&[1, 1, 4, 4]));
        let w = g.leaf(crate::tensor::Tensor::zeros(&[2, 1, 3, 3]), true);
        let err = damped_conv2d(&mut g, x, w, &mask, None, (1, 1), Padding::Same).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    proptest::proptest! {
        #[test]
        fn profile_is_symmetric_and_monotone(half in 0usize..6, floor in 0.0f64..=1.0) {
            let kf = 2 * half + 1;
            let m = make_damping_mask([1, 1, kf, 1], floor).unwrap();
            let p = m.frequency_profile();
            proptest::prop_assert_eq!(p[half], 1.0);
            for d in 0..=half {
                proptest::prop_assert_eq!(p[half + d], p[half - d]);
                if d > 0 {
                    proptest::prop_assert!(p[half + d] <= p[half + d - 1]);
                }
            }
            let min = p.iter().cloned().fold(f64::INFINITY, f64::min);
            if half > 0 {
                proptest::prop_assert!((min - floor).abs() < 1e-12);
            }
        }
    }
}
