//! Accuracy-versus-parameters scaling curves: a backing CSV plus a log-x
//! PNG with one colored polyline and error bars per scaling strategy.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::summary::SummaryRow;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "width")]
    Width,
    #[serde(rename = "depth")]
    Depth,
    #[serde(rename = "depth-1x1")]
    Depth1x1,
    #[serde(rename = "width-sparse-static")]
    WidthSparseStatic,
    #[serde(rename = "width-sparse-iterative")]
    WidthSparseIterative,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Width,
        Strategy::Depth,
        Strategy::Depth1x1,
        Strategy::WidthSparseStatic,
        Strategy::WidthSparseIterative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Width => "width",
            Strategy::Depth => "depth",
            Strategy::Depth1x1 => "depth-1x1",
            Strategy::WidthSparseStatic => "width-sparse-static",
            Strategy::WidthSparseIterative => "width-sparse-iterative",
        }
    }

    fn color(self) -> Rgb<u8> {
        match self {
            Strategy::Width => Rgb([31, 119, 180]),
            Strategy::Depth => Rgb([255, 127, 14]),
            Strategy::Depth1x1 => Rgb([44, 160, 44]),
            Strategy::WidthSparseStatic => Rgb([214, 39, 40]),
            Strategy::WidthSparseIterative => Rgb([148, 103, 189]),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scaling strategy {:?}", s)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub strategy: Strategy,
    pub params: usize,
    pub mean: f64,
    pub std: f64,
}

/// Points for `metric` from summary rows that carry a known strategy.
pub fn points_from_summary(rows: &[SummaryRow], metric: &str) -> Vec<ScalingPoint> {
    rows.iter()
        .filter(|r| r.metric == metric)
        .filter_map(|r| {
            Some(ScalingPoint {
                strategy: r.strategy.parse().ok()?,
                params: r.params,
                mean: r.mean,
                std: r.std,
            })
        })
        .collect()
}

/// Points sorted by parameter count, then strategy.
pub fn sorted_points(points: &[ScalingPoint]) -> Vec<ScalingPoint> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.params.cmp(&b.params).then(a.strategy.cmp(&b.strategy)));
    p
}

/// Writes the CSV, then tries the PNG. Returns whether the image was
/// written; the CSV is produced even when rendering fails.
pub fn plot_scaling_curve(points: &[ScalingPoint], png: &Path, csv_path: &Path) -> Result<bool> {
    if points.len() < 2 {
        return Err(Error::Input(format!("a scaling curve needs at least 2 points, got {}", points.len())));
    }
    let sorted = sorted_points(points);
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(["strategy", "params", "mean", "std"])?;
    for p in &sorted {
        w.write_record([p.strategy.name().to_string(), p.params.to_string(), p.mean.to_string(), p.std.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;
    match render(&sorted).save(png) {
        Ok(()) => Ok(true),
        Err(e) => {
            log::warn!("could not write {:?}: {}", png, e);
            Ok(false)
        }
    }
}

const W: u32 = 800;
const H: u32 = 500;
const MARGIN: i64 = 50;

fn render(points: &[ScalingPoint]) -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let lx: Vec<f64> = points.iter().map(|p| (p.params.max(1) as f64).log10()).collect();
    let (mut x0, mut x1) = (lx.iter().cloned().fold(f64::INFINITY, f64::min), lx.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let (mut y0, mut y1) = (
        points.iter().map(|p| p.mean - p.std).fold(f64::INFINITY, f64::min),
        points.iter().map(|p| p.mean + p.std).fold(f64::NEG_INFINITY, f64::max),
    );
    if x1 - x0 < 1e-9 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-9 {
        y0 -= 0.05;
        y1 += 0.05;
    }
    let (px, py) = (0.05 * (x1 - x0), 0.05 * (y1 - y0));
    let (x0, x1, y0, y1) = (x0 - px, x1 + px, y0 - py, y1 + py);
    let to_px = |lx: f64, y: f64| -> (i64, i64) {
        let u = MARGIN as f64 + (lx - x0) / (x1 - x0) * (W as i64 - 2 * MARGIN) as f64;
        let v = (H as i64 - MARGIN) as f64 - (y - y0) / (y1 - y0) * (H as i64 - 2 * MARGIN) as f64;
        (u.round() as i64, v.round() as i64)
    };
    let black = Rgb([0, 0, 0]);
    let grey = Rgb([200, 200, 200]);
    // axes, decade ticks and light grid lines
    line(&mut img, (MARGIN, H as i64 - MARGIN), (W as i64 - MARGIN, H as i64 - MARGIN), black);
    line(&mut img, (MARGIN, MARGIN), (MARGIN, H as i64 - MARGIN), black);
    for decade in (x0.ceil() as i64)..=(x1.floor() as i64) {
        let (u, _) = to_px(decade as f64, y0);
        line(&mut img, (u, MARGIN), (u, H as i64 - MARGIN - 1), grey);
        line(&mut img, (u, H as i64 - MARGIN), (u, H as i64 - MARGIN + 8), black);
    }
    let step = 0.1;
    let mut y = (y0 / step).ceil() * step;
    while y <= y1 {
        let (_, v) = to_px(x0, y);
        line(&mut img, (MARGIN + 1, v), (W as i64 - MARGIN, v), grey);
        line(&mut img, (MARGIN - 8, v), (MARGIN, v), black);
        y += step;
    }
    let mut by_strategy: BTreeMap<Strategy, Vec<(i64, i64, i64, i64)>> = BTreeMap::new();
    for (p, &l) in points.iter().zip(&lx) {
        let (u, v) = to_px(l, p.mean);
        let (_, vlo) = to_px(l, p.mean - p.std);
        let (_, vhi) = to_px(l, p.mean + p.std);
        by_strategy.entry(p.strategy).or_default().push((u, v, vlo, vhi));
    }
    for (s, pts) in &by_strategy {
        let c = s.color();
        for pair in pts.windows(2) {
            line(&mut img, (pair[0].0, pair[0].1), (pair[1].0, pair[1].1), c);
        }
        for &(u, v, vlo, vhi) in pts {
            line(&mut img, (u, vlo), (u, vhi), c);
            line(&mut img, (u - 4, vlo), (u + 4, vlo), c);
            line(&mut img, (u - 4, vhi), (u + 4, vhi), c);
            disc(&mut img, (u, v), 4, c);
        }
    }
    // legend: one color swatch per strategy present, in vocabulary order
    for (i, s) in by_strategy.keys().enumerate() {
        let top = MARGIN + 6 + 16 * i as i64;
        for dy in 0..10 {
            line(&mut img, (W as i64 - MARGIN - 30, top + dy), (W as i64 - MARGIN - 10, top + dy), s.color());
        }
    }
    img
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), c: Rgb<u8>) {
    let n = (b.0 - a.0).abs().max((b.1 - a.1).abs()).max(1);
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let x = a.0 as f64 + t * (b.0 - a.0) as f64;
        let y = a.1 as f64 + t * (b.1 - a.1) as f64;
        put(img, x.round() as i64, y.round() as i64, c);
    }
}

fn disc(img: &mut RgbImage, c: (i64, i64), r: i64, color: Rgb<u8>) {
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                put(img, c.0 + dx, c.1 + dy, color);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(s: Strategy, params: usize, mean: f64) -> ScalingPoint {
        ScalingPoint {
            strategy: s,
            params,
            mean,
            std: 0.01,
        }
    }

    #[test]
    fn csv_is_sorted_and_png_written() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![pt(Strategy::Width, 5000, 0.7), pt(Strategy::Depth, 900, 0.6), pt(Strategy::Width, 1000, 0.65)];
        let (png, csv) = (dir.path().join("c.png"), dir.path().join("c.csv"));
        assert!(plot_scaling_curve(&pts, &png, &csv).unwrap());
        let text = std::fs::read_to_string(&csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "strategy,params,mean,std");
        let xs: Vec<usize> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert_eq!(xs, vec![900, 1000, 5000]);
        let img = image::open(&png).unwrap();
        assert_eq!((img.width(), img.height()), (W, H));
    }

    #[test]
    fn two_points_give_two_rows_even_without_an_image() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![pt(Strategy::WidthSparseIterative, 2, 0.5), pt(Strategy::WidthSparseIterative, 1, 0.4)];
        let csv = dir.path().join("c.csv");
        let written = plot_scaling_curve(&pts, &dir.path().join("missing/c.png"), &csv).unwrap();
        assert!(!written);
        assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);
        assert!(plot_scaling_curve(&pts[..1], &dir.path().join("x.png"), &csv).is_err());
    }

    #[test]
    fn strategy_vocabulary() {
        let names: Vec<&str> = Strategy::ALL.iter().map(|s| s.name()).collect();
        assert_eq!(names, ["width", "depth", "depth-1x1", "width-sparse-static", "width-sparse-iterative"]);
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert!("breadth".parse::<Strategy>().is_err());
    }
}
