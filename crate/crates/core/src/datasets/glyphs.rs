//! Procedural handwritten-style digits: each class is a set of polylines in a
//! unit box, drawn with a random affine map, stroke width and point wobble.

use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::derive;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlyphConfig {
    pub size: usize,
    /// Glyph box height in pixels before scaling.
    pub height: f32,
    pub max_rotation_deg: f32,
    pub max_shear: f32,
    pub scale_range: (f32, f32),
    pub max_shift: f32,
    /// Stroke half-width range in pixels.
    pub half_width: (f32, f32),
    /// Per-point jitter in glyph-box units.
    pub wobble: f32,
}

impl Default for GlyphConfig {
    fn default() -> Self {
        Self {
            size: 28,
            height: 19.0,
            max_rotation_deg: 12.0,
            max_shear: 0.25,
            scale_range: (0.85, 1.1),
            max_shift: 1.5,
            half_width: (0.9, 1.6),
            wobble: 0.03,
        }
    }
}

type Stroke = Vec<(f32, f32)>;

fn arc(cx: f32, cy: f32, rx: f32, ry: f32, from: f32, to: f32) -> Stroke {
    let n = 24;
    (0..=n)
        .map(|i| {
            let t = from + (to - from) * i as f32 / n as f32;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn strokes(digit: usize) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.45, 0.5, 0.0, 2.0 * PI)],
        1 => vec![vec![(0.3, 0.22), (0.55, 0.0), (0.55, 1.0)]],
        2 => {
            let mut s = arc(0.5, 0.28, 0.42, 0.28, PI, 2.0 * PI + 0.5);
            s.extend([(0.05, 1.0), (0.95, 1.0)]);
            vec![s]
        }
        3 => vec![
            arc(0.5, 0.27, 0.4, 0.27, 1.1 * PI, 2.5 * PI),
            arc(0.5, 0.73, 0.45, 0.27, -0.5 * PI, 0.9 * PI),
        ],
        4 => vec![vec![(0.7, 1.0), (0.7, 0.0), (0.02, 0.68), (0.98, 0.68)]],
        5 => {
            let mut s = vec![(0.9, 0.0), (0.18, 0.0), (0.12, 0.45)];
            s.extend(arc(0.5, 0.68, 0.42, 0.32, -2.4, 2.6));
            vec![s]
        }
        6 => vec![
            arc(0.5, 0.55, 0.45, 0.55, -1.0, -1.5 * PI - 0.1),
            arc(0.5, 0.7, 0.42, 0.3, 0.0, 2.0 * PI),
        ],
        7 => vec![vec![(0.02, 0.0), (0.98, 0.0), (0.35, 1.0)]],
        8 => vec![
            arc(0.5, 0.26, 0.36, 0.26, 0.0, 2.0 * PI),
            arc(0.5, 0.74, 0.44, 0.26, 0.0, 2.0 * PI),
        ],
        9 => vec![
            arc(0.5, 0.3, 0.42, 0.3, 0.0, 2.0 * PI),
            vec![(0.92, 0.3), (0.7, 1.0)],
        ],
        _ => unreachable!("digit classes are 0..10"),
    }
}

fn segment_distance(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Renders one anti-aliased glyph into `out` (`size²` pixels, row-major).
fn render_one<R: Rng>(digit: usize, cfg: &GlyphConfig, rng: &mut R, out: &mut [f32]) {
    let h = cfg.height;
    let w = 0.62 * h;
    let rot = rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg).to_radians();
    let shear = rng.gen_range(-cfg.max_shear..=cfg.max_shear);
    let scale = rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1);
    let center = cfg.size as f32 / 2.0;
    let shift = (
        center + rng.gen_range(-cfg.max_shift..=cfg.max_shift),
        center + rng.gen_range(-cfg.max_shift..=cfg.max_shift),
    );
    let half = rng.gen_range(cfg.half_width.0..=cfg.half_width.1);
    let (sin, cos) = rot.sin_cos();

    let polylines: Vec<Stroke> = strokes(digit)
        .into_iter()
        .map(|s| {
            s.into_iter()
                .map(|(u, v)| {
                    let u = u + rng.gen_range(-cfg.wobble..=cfg.wobble);
                    let v = v + rng.gen_range(-cfg.wobble..=cfg.wobble);
                    let (x, y) = ((u - 0.5) * w, (v - 0.5) * h);
                    let x = x + shear * y;
                    let (x, y) = (scale * (cos * x - sin * y), scale * (sin * x + cos * y));
                    (x + shift.0, y + shift.1)
                })
                .collect()
        })
        .collect();

    for r in 0..cfg.size {
        for c in 0..cfg.size {
            let p = (c as f32 + 0.5, r as f32 + 0.5);
            let d = polylines
                .iter()
                .flat_map(|s| s.windows(2).map(move |ab| segment_distance(p, ab[0], ab[1])))
                .fold(f32::INFINITY, f32::min);
            out[r * cfg.size + c] = (half + 0.5 - d).clamp(0.0, 1.0);
        }
    }
}

/// `n` glyphs with uniformly drawn classes; returns `[n, size²]` pixels in
/// `[0, 1]` and the digit classes. Image `i` depends only on `(seed, i)`.
pub fn render_digits(n: usize, seed: u64, cfg: &GlyphConfig) -> Result<(Tensor, Vec<usize>)> {
    if cfg.size == 0 || n == 0 {
        return Err(Error::Input("glyph size and count must be positive".into()));
    }
    let px = cfg.size * cfg.size;
    let mut pixels = vec![0.0f32; n * px];
    let mut classes = Vec::with_capacity(n);
    for (i, out) in pixels.chunks_mut(px).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, i as u64));
        let digit = rng.gen_range(0..10);
        render_one(digit, cfg, &mut rng, out);
        classes.push(digit);
    }
    Ok((Tensor::matrix(n, px, pixels)?, classes))
}
