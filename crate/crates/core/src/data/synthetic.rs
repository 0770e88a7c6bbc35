//! Generated datasets: 28×28 stroke glyphs, the informative-pixels oracle task and
//! separable 2-D blobs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::models::InputShape;
use crate::rng::{derive, derive_index, stream, Gaussian};
use crate::tensor::Tensor;

use super::{mixture, Dataset, Normalization, Split};

pub const GLYPH_SIDE: usize = 28;

/// Seven-segment masks `a b c d e f g` per digit.
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],
    [false, true, true, false, false, false, false],
    [true, true, false, true, true, false, true],
    [true, true, true, true, false, false, true],
    [false, true, true, false, false, true, true],
    [true, false, true, true, false, true, true],
    [true, false, true, true, true, true, true],
    [true, true, true, false, false, false, false],
    [true, true, true, true, true, true, true],
    [true, true, true, true, false, true, true],
];

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// One glyph of `digit`, pixels in `[0, 1]`, row-major.
pub fn render_glyph(digit: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed);
    let w = rng.gen_range(9.0..13.0);
    let h = rng.gen_range(15.0..19.0);
    let slant = rng.gen_range(-0.25..0.25);
    let thick = rng.gen_range(1.6..2.6);
    let ink = rng.gen_range(0.75..1.0);
    let x0 = rng.gen_range(5.0..(23.0 - w));
    let y0 = rng.gen_range(4.0..(24.0 - h));
    // corners: top-left, top-right, mid-left, mid-right, bottom-left, bottom-right
    let at = |fx: f64, fy: f64| {
        let y = y0 + fy * h;
        (x0 + fx * w + slant * (y0 + h / 2.0 - y), y)
    };
    let (tl, tr, ml, mr, bl, br) = (
        at(0.0, 0.0),
        at(1.0, 0.0),
        at(0.0, 0.5),
        at(1.0, 0.5),
        at(0.0, 1.0),
        at(1.0, 1.0),
    );
    let segs = [(tl, tr), (tr, mr), (mr, br), (bl, br), (ml, bl), (tl, ml), (ml, mr)];
    let active: Vec<_> = segs
        .iter()
        .zip(SEGMENTS[digit])
        .filter(|(_, on)| *on)
        .map(|(s, _)| *s)
        .collect();
    let mut g = Gaussian::new(rng);
    let mut img = Vec::with_capacity(GLYPH_SIDE * GLYPH_SIDE);
    for r in 0..GLYPH_SIDE {
        for c in 0..GLYPH_SIDE {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            let d = active
                .iter()
                .map(|(a, b)| dist_to_segment(p, *a, *b))
                .fold(f64::INFINITY, f64::min);
            let v = ink * (thick / 2.0 + 0.5 - d).clamp(0.0, 1.0);
            img.push((v + 0.05 * g.sample()).clamp(0.0, 1.0));
        }
    }
    img
}

fn glyph_split(n: usize, seed: u64) -> Result<Split> {
    let mut x = Vec::with_capacity(n * GLYPH_SIDE * GLYPH_SIDE);
    let mut y = Vec::with_capacity(n);
    for j in 0..n {
        let digit = j % 10;
        x.extend(render_glyph(digit, derive_index(seed, j as u64)));
        y.push(digit);
    }
    Ok(Split {
        x: Tensor::new(&[n, GLYPH_SIDE * GLYPH_SIDE], x)?,
        y,
    })
}

/// Ten-class 28×28 grayscale digits drawn as jittered seven-segment strokes.
pub fn glyph_dataset(n_train: usize, n_test: usize, seed: u64) -> Result<Dataset> {
    Ok(Dataset {
        id: "glyphs".into(),
        input: InputShape::image(GLYPH_SIDE, GLYPH_SIDE, 1),
        classes: 10,
        train: glyph_split(n_train, derive(seed, "train"))?,
        test: glyph_split(n_test, derive(seed, "test"))?,
        normalization: Normalization::identity(1),
        informative: None,
    })
}

/// Shape used for a `d`-pixel single-channel task: square when possible, else one row.
pub fn pixel_shape(d: usize) -> InputShape {
    let s = (d as f64).sqrt().round() as usize;
    if s * s == d {
        InputShape::image(s, s, 1)
    } else {
        InputShape::image(1, d, 1)
    }
}

/// Value carried by each informative pixel.
pub const INFORMATIVE_AMPLITUDE: f64 = 2.0;

/// Two classes whose label lives only in `k` fixed pixels.
///
/// With sign `s = ±1` for labels 1 and 0, informative pixel `j` holds
/// `s·a·(+1 for the first half, −1 for the rest)`, so informative pixels add nothing to
/// the image mean. Every other pixel is standard normal noise. `n` examples per split.
pub fn make_informative_pixels_dataset(d: usize, k: usize, n: usize, seed: u64) -> Result<Dataset> {
    if k == 0 || k >= d || n == 0 {
        return Err(Error::invalid(format!(
            "need 0 < k < D and n ≥ 1 (D={d}, k={k}, n={n})"
        )));
    }
    let mut rng = stream(derive(seed, "positions"));
    let mut order: Vec<usize> = (0..d).collect();
    for i in (1..d).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut positions = order[..k].to_vec();
    positions.sort_unstable();
    let split = |purpose: &str| -> Result<Split> {
        let base = derive(seed, purpose);
        let mut x = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for j in 0..n {
            let mut g = Gaussian::from_seed(derive_index(base, j as u64));
            let label = g.rng_mut().gen_range(0..2usize);
            let s = if label == 1 { 1.0 } else { -1.0 };
            let mut row = g.vec(d, 1.0);
            for (q, &p) in positions.iter().enumerate() {
                let sign = if q < k.div_ceil(2) { 1.0 } else { -1.0 };
                row[p] = s * sign * INFORMATIVE_AMPLITUDE;
            }
            x.extend(row);
            y.push(label);
        }
        Ok(Split {
            x: Tensor::new(&[n, d], x)?,
            y,
        })
    };
    Ok(Dataset {
        id: format!("informative:{d}:{k}"),
        input: pixel_shape(d),
        classes: 2,
        train: split("train")?,
        test: split("test")?,
        normalization: Normalization::identity(1),
        informative: Some(positions),
    })
}

/// Two well separated isotropic blobs at `(±2, 0)` with width 0.5.
pub fn blobs_dataset(n_train: usize, n_test: usize, seed: u64) -> Result<Dataset> {
    let comp = |m: f64| {
        vec![mixture::Component {
            mean: vec![m, 0.0],
            sigma: 0.5,
            weight: 1.0,
        }]
    };
    let spec = mixture::GaussianMixtureSpec {
        dim: 2,
        classes: vec![comp(-2.0), comp(2.0)],
    };
    super::mixture_dataset(&spec, n_train, n_test, seed).map(|mut ds| {
        ds.id = "blobs".into();
        ds
    })
}
