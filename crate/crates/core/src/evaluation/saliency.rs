use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::models::{logit_gradients, InputShape, LogitModel};
use crate::tensor::Tensor;

/// Per-pixel relevance: absolute logit-gradient summed over channels.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    /// Row-major, `height·width` non-negative values.
    pub values: Vec<f64>,
}

impl SaliencyMap {
    /// Aggregates one NHWC gradient row.
    pub fn from_gradient(grad: &[f64], shape: InputShape) -> Result<Self> {
        if grad.len() != shape.dim() {
            return Err(Error::invalid(format!(
                "gradient has {} values, shape wants {}",
                grad.len(),
                shape.dim()
            )));
        }
        let values = grad
            .chunks(shape.channels)
            .map(|px| px.iter().map(|v| v.abs()).sum())
            .collect();
        Ok(SaliencyMap {
            height: shape.height,
            width: shape.width,
            values,
        })
    }

    pub fn constant(shape: InputShape, v: f64) -> Self {
        SaliencyMap {
            height: shape.height,
            width: shape.width,
            values: vec![v; shape.pixels()],
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// 8-bit min-max quantisation; a flat map becomes all zeros.
    pub fn quantize(&self) -> Vec<u8> {
        let (lo, hi) = self.min_max();
        if !(hi > lo) {
            return vec![0; self.values.len()];
        }
        self.values
            .iter()
            .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
            .collect()
    }

    /// Inverse of [`quantize`](Self::quantize) given the recorded range.
    pub fn dequantize(height: usize, width: usize, pixels: &[u8], lo: f64, hi: f64) -> Self {
        SaliencyMap {
            height,
            width,
            values: pixels.iter().map(|&q| lo + q as f64 / 255.0 * (hi - lo)).collect(),
        }
    }
}

/// Saliency of `classes[b]` for every row of `x`.
pub fn saliency_maps(
    model: &dyn LogitModel,
    x: &Tensor,
    classes: &[usize],
    shape: InputShape,
) -> Result<Vec<SaliencyMap>> {
    let mut out = Vec::with_capacity(classes.len());
    for start in (0..x.rows()).step_by(128) {
        let idx: Vec<usize> = (start..x.rows().min(start + 128)).collect();
        let cls: Vec<usize> = idx.iter().map(|&i| classes[i]).collect();
        let g = logit_gradients(model, &x.gather_rows(&idx), &cls)?;
        for r in 0..idx.len() {
            out.push(SaliencyMap::from_gradient(g.row(r), shape)?);
        }
    }
    Ok(out)
}

/// Binary PGM (P5, maxval 255).
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::invalid("PGM pixel count does not match its size"));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a P5 PGM with maxval 255: `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(start as u64, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::format(0, "not a binary PGM (P5)"));
    }
    let num = |s: String| {
        s.parse::<usize>()
            .map_err(|_| Error::format(0, format!("bad PGM field `{s}`")))
    };
    let w = num(token()?)?;
    let h = num(token()?)?;
    if num(token()?)? != 255 {
        return Err(Error::format(0, "only maxval 255 PGMs are supported"));
    }
    let start = pos + 1;
    if bytes.len() < start + w * h {
        return Err(Error::format(
            bytes.len() as u64,
            format!("PGM data truncated: want {} bytes", w * h),
        ));
    }
    Ok((w, h, bytes[start..start + w * h].to_vec()))
}

/// Writes `saliency_NNNN.pgm` per image and `saliency.csv` with `file,class,min,max`.
pub fn export_saliency(
    model: &dyn LogitModel,
    images: &Tensor,
    classes: &[usize],
    shape: InputShape,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let maps = saliency_maps(model, images, classes, shape)?;
    let mut sidecar = String::from("file,class,min,max\n");
    let mut paths = Vec::with_capacity(maps.len());
    for (i, map) in maps.iter().enumerate() {
        let name = format!("saliency_{i:04}.pgm");
        let path = dir.join(&name);
        write_pgm(&path, map.width, map.height, &map.quantize())?;
        let (lo, hi) = map.min_max();
        writeln!(sidecar, "{name},{},{lo:e},{hi:e}", classes[i]).unwrap();
        paths.push(path);
    }
    fs::write(dir.join("saliency.csv"), sidecar)?;
    Ok(paths)
}
