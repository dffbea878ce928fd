//! Procedural digit glyphs.
//!
//! Ten fixed stroke templates drawn in a unit box, warped per sample by a
//! random affine map plus a smooth low-frequency displacement, then
//! rasterized with anti-aliased strokes of random width.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::{self, StreamRng};
use crate::taskgen::{DigitSource, Glyph};

type Point = (f64, f64);
type Stroke = Vec<Point>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64) -> Stroke {
    let steps = (((to_deg - from_deg).abs() / 15.0).ceil() as usize).max(2);
    (0..=steps)
        .map(|i| {
            let t = (from_deg + (to_deg - from_deg) * i as f64 / steps as f64).to_radians();
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

/// Stroke templates, y pointing down, angles in degrees (-90 is the top).
fn template(digit: u8) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.21, 0.33, 0.0, 360.0)],
        1 => vec![
            vec![(0.52, 0.15), (0.50, 0.85)],
            vec![(0.38, 0.28), (0.52, 0.15)],
        ],
        2 => {
            let mut s = arc(0.5, 0.34, 0.2, 0.19, 190.0, 380.0);
            s.extend([(0.27, 0.85), (0.75, 0.85)]);
            vec![s]
        }
        3 => vec![
            arc(0.48, 0.33, 0.19, 0.17, -160.0, 90.0),
            arc(0.48, 0.67, 0.21, 0.18, -90.0, 160.0),
        ],
        4 => vec![vec![(0.63, 0.85), (0.63, 0.15), (0.26, 0.62), (0.77, 0.62)]],
        5 => {
            let mut s = vec![(0.73, 0.15), (0.34, 0.15), (0.31, 0.46)];
            s.extend(arc(0.5, 0.64, 0.21, 0.2, -140.0, 150.0));
            vec![s]
        }
        6 => {
            let mut s = arc(0.72, 0.55, 0.42, 0.4, -110.0, -180.0);
            s.extend(arc(0.5, 0.65, 0.2, 0.19, 180.0, 540.0));
            vec![s]
        }
        7 => vec![vec![(0.26, 0.16), (0.75, 0.16), (0.42, 0.86)]],
        8 => vec![
            arc(0.5, 0.31, 0.16, 0.16, 0.0, 360.0),
            arc(0.5, 0.67, 0.2, 0.18, 0.0, 360.0),
        ],
        9 => {
            let mut s = arc(0.5, 0.34, 0.2, 0.19, 0.0, 360.0);
            s.extend([(0.70, 0.34), (0.60, 0.86)]);
            vec![s]
        }
        _ => unreachable!("digit classes are 0..=9"),
    }
}

/// Per-sample deformation strength. The defaults make the digit band a
/// feature that takes a few thousand samples for a small MLP to master.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphStyle {
    pub rotation_sd: f64,
    pub shear_sd: f64,
    pub scale: (f64, f64),
    pub aspect: (f64, f64),
    pub shift_sd: f64,
    pub elastic: f64,
    pub width: (f64, f64),
    pub texture_sd: f64,
}

impl Default for GlyphStyle {
    fn default() -> Self {
        GlyphStyle {
            rotation_sd: 0.22,
            shear_sd: 0.2,
            scale: (0.75, 1.1),
            aspect: (0.8, 1.2),
            shift_sd: 0.07,
            elastic: 0.06,
            width: (0.04, 0.09),
            texture_sd: 0.15,
        }
    }
}

impl GlyphStyle {
    /// Shrinks (`k < 1`) or grows every geometric deformation of the
    /// defaults by `k`; stroke width and texture are left alone.
    pub fn scaled(k: f64) -> Self {
        let d = GlyphStyle::default();
        let around_one = |(lo, hi): (f64, f64)| (1.0 - (1.0 - lo) * k, 1.0 + (hi - 1.0) * k);
        GlyphStyle {
            rotation_sd: d.rotation_sd * k,
            shear_sd: d.shear_sd * k,
            scale: around_one(d.scale),
            aspect: around_one(d.aspect),
            shift_sd: d.shift_sd * k,
            elastic: d.elastic * k,
            ..d
        }
    }
}

/// Uniform on `[lo, hi)`, or `lo` for an empty range.
fn uniform((lo, hi): (f64, f64), rng: &mut StreamRng) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

struct Warp {
    m: [[f64; 2]; 2],
    shift: Point,
    modes: [(f64, f64, f64, f64); 4],
}

impl Warp {
    fn sample(style: &GlyphStyle, rng: &mut StreamRng) -> Warp {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let theta = style.rotation_sd * normal.sample(rng);
        let shear = style.shear_sd * normal.sample(rng);
        let s = uniform(style.scale, rng);
        let a = uniform(style.aspect, rng);
        let (sx, sy) = (s * a.sqrt(), s / a.sqrt());
        let (c, si) = (theta.cos(), theta.sin());
        // rotation * shear * scale
        let m = [
            [c * sx, (c * shear - si) * sy],
            [si * sx, (si * shear + c) * sy],
        ];
        let shift = (
            style.shift_sd * normal.sample(rng),
            style.shift_sd * normal.sample(rng),
        );
        let mut modes = [(0.0, 0.0, 0.0, 0.0); 4];
        for mode in &mut modes {
            *mode = (
                style.elastic * normal.sample(rng),
                rng.random_range(0.5..1.5),
                rng.random_range(0.5..1.5),
                rng.random_range(0.0..2.0 * PI),
            );
        }
        Warp { m, shift, modes }
    }

    fn apply(&self, (x, y): Point) -> Point {
        // smooth displacement: modes 0,1 move x, modes 2,3 move y
        let wave = |(amp, fx, fy, phase): (f64, f64, f64, f64)| {
            amp * (2.0 * PI * (fx * x + fy * y) + phase).sin()
        };
        let ex = x + wave(self.modes[0]) + wave(self.modes[1]);
        let ey = y + wave(self.modes[2]) + wave(self.modes[3]);
        let (dx, dy) = (ex - 0.5, ey - 0.5);
        (
            0.5 + self.m[0][0] * dx + self.m[0][1] * dy + self.shift.0,
            0.5 + self.m[1][0] * dx + self.m[1][1] * dy + self.shift.1,
        )
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

/// Rasterizes one jittered instance of `digit` at `side`×`side`.
pub fn render_glyph(digit: u8, side: usize, style: &GlyphStyle, rng: &mut StreamRng) -> Vec<u8> {
    let warp = Warp::sample(style, rng);
    let width = uniform(style.width, rng);
    let segments: Vec<(Point, Point)> = template(digit)
        .into_iter()
        .flat_map(|stroke| {
            let pts: Vec<Point> = stroke.into_iter().map(|p| warp.apply(p)).collect();
            pts.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()
        })
        .collect();

    let texture = Normal::new(0.0, style.texture_sd.max(1e-12)).expect("positive sd");
    let side_f = side as f64;
    let mut out = vec![0u8; side * side];
    for r in 0..side {
        for c in 0..side {
            let p = ((c as f64 + 0.5) / side_f, (r as f64 + 0.5) / side_f);
            let d = segments
                .iter()
                .map(|&(a, b)| segment_distance(p, a, b))
                .fold(f64::INFINITY, f64::min);
            let coverage = (0.5 + (width - d) * side_f).clamp(0.0, 1.0);
            if coverage > 0.0 {
                let v = (coverage * (1.0 + texture.sample(rng))).clamp(0.0, 1.0);
                out[r * side + c] = (v * 255.0).round() as u8;
            }
        }
    }
    out
}

/// Unbounded digit source backed by [`render_glyph`], classes uniform on 0..=9.
#[derive(Debug, Clone)]
pub struct SyntheticDigits {
    side: usize,
    style: GlyphStyle,
}

impl SyntheticDigits {
    pub fn new(side: usize) -> Self {
        SyntheticDigits {
            side,
            style: GlyphStyle::default(),
        }
    }

    pub fn with_style(side: usize, style: GlyphStyle) -> Self {
        SyntheticDigits { side, style }
    }
}

impl DigitSource for SyntheticDigits {
    fn image_side(&self) -> usize {
        self.side
    }

    fn capacity(&self) -> Option<usize> {
        None
    }

    fn glyphs(&self, seed: u64, n: usize) -> Result<Vec<Glyph>> {
        Ok((0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng::stream(seed, i as u64, "glyph");
                let digit = rng.random_range(0..10u8);
                let pixels = render_glyph(digit, self.side, &self.style, &mut rng);
                Glyph::new(digit, pixels)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_template_draws_ink() {
        for d in 0..10 {
            let mut rng = rng::stream(1, d as u64, "t");
            let g = render_glyph(d, 16, &GlyphStyle::default(), &mut rng);
            let ink: u32 = g.iter().map(|&v| u32::from(v)).sum();
            assert!(ink > 255 * 5, "digit {d} nearly blank");
        }
    }

    #[test]
    fn glyph_rendering_is_deterministic() {
        let src = SyntheticDigits::new(16);
        let a = src.glyphs(3, 20).unwrap();
        let b = src.glyphs(3, 20).unwrap();
        assert_eq!(a, b);
    }
}
