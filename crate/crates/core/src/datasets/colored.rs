//! Two-color digits: each grayscale source appears once with the red channel
//! removed (`y = 0`) and once with the green channel removed (`y = 1`); blue
//! always carries the digit. Features are channel-major (`[R | G | B]`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_noise_rate, flip_labels, render_digits, Dataset, GlyphConfig};
use crate::error::{Error, Result};
use crate::seeds::derive;
use crate::tensor::Tensor;

/// Average-pools a square `side × side` image down to `to × to`.
pub fn downsample(img: &[f32], side: usize, to: usize) -> Result<Vec<f32>> {
    if to == 0 || side % to != 0 {
        return Err(Error::Input(format!("cannot pool {side}x{side} down to {to}x{to}")));
    }
    let f = side / to;
    let norm = (f * f) as f32;
    let mut out = vec![0.0; to * to];
    for r in 0..side {
        for c in 0..side {
            out[(r / f) * to + c / f] += img[r * side + c] / norm;
        }
    }
    Ok(out)
}

/// Channel-major image for one coloring of a grayscale digit.
pub fn colorize(digit: &[f32], y: usize) -> Vec<f32> {
    let zeros = vec![0.0; digit.len()];
    let (r, g) = if y == 0 { (&zeros[..], digit) } else { (digit, &zeros[..]) };
    [r, g, digit].concat()
}

/// Expected image over both colorings: half-intensity red and green, full
/// blue.
pub fn true_marginal(digit: &[f32]) -> Vec<f32> {
    let half: Vec<f32> = digit.iter().map(|v| 0.5 * v).collect();
    [&half[..], &half[..], digit].concat()
}

/// Builds the two-coloring dataset from `[n, side²]` grayscale images. Rows
/// `2i` and `2i + 1` are the two colorings of source `i`. Side columns:
/// `y_clean`, `digit` (class, when given) and `marginal`.
pub fn colorize_and_flip(
    images: &Tensor,
    digits: Option<&[usize]>,
    noise_rate: f64,
    seed: u64,
    downsample_to: Option<usize>,
) -> Result<Dataset> {
    check_noise_rate(noise_rate)?;
    let side = (images.cols() as f64).sqrt().round() as usize;
    if side * side != images.cols() {
        return Err(Error::Input(format!("images of {} pixels are not square", images.cols())));
    }
    if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Input("grayscale pixels must lie in [0, 1]".into()));
    }
    let to = downsample_to.unwrap_or(side);
    let n = images.rows();
    let d = 3 * to * to;
    let (mut x, mut marginal) = (Vec::with_capacity(2 * n * d), Vec::with_capacity(2 * n * d));
    let mut y_clean = Vec::with_capacity(2 * n);
    for i in 0..n {
        let gray = downsample(images.row(i), side, to)?;
        let m = true_marginal(&gray);
        for y in 0..2 {
            x.extend(colorize(&gray, y));
            marginal.extend_from_slice(&m);
            y_clean.push(y);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, 0));
    let y = flip_labels(&y_clean, noise_rate, &mut rng);
    let col = |v: Vec<f32>| Tensor::matrix(2 * n, v.len() / (2 * n).max(1), v);
    let mut ds = Dataset::new(Tensor::matrix(2 * n, d, x)?, y, 2)?
        .with_extra("y_clean", col(y_clean.iter().map(|&v| v as f32).collect())?)?
        .with_extra("marginal", col(marginal)?)?;
    if let Some(dg) = digits {
        if dg.len() != n {
            return Err(Error::Length {
                expected: n,
                found: dg.len(),
            });
        }
        ds = ds.with_extra("digit", col(dg.iter().flat_map(|&c| [c as f32; 2]).collect())?)?;
    }
    Ok(ds)
}

/// Renders `n_sources` synthetic digits and builds the `2·n_sources`-row
/// colored dataset.
pub fn colored_digits(n_sources: usize, noise_rate: f64, seed: u64, downsample_to: Option<usize>) -> Result<Dataset> {
    let (images, digits) = render_digits(n_sources, derive(seed, 1), &GlyphConfig::default())?;
    colorize_and_flip(&images, Some(&digits), noise_rate, seed, downsample_to)
}
