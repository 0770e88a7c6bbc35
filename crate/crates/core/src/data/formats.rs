//! IDX (MNIST family) and CIFAR binary readers and writers.
//!
//! Pixels come back as `f64` in `[0, 1]` (byte / 255), images in row-major HWC order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::InputShape;
use crate::tensor::Tensor;

use super::Split;

pub const IDX_UBYTE_1D: u32 = 0x0000_0801;
pub const IDX_UBYTE_3D: u32 = 0x0000_0803;

/// An unsigned-byte IDX array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(buf: &[u8]) -> Result<IdxArray> {
    if buf.len() < 4 {
        return Err(Error::format(0, "IDX header truncated"));
    }
    let magic = u32::from_be_bytes(buf[0..4].try_into().unwrap());
    let rank = match magic {
        IDX_UBYTE_1D => 1,
        IDX_UBYTE_3D => 3,
        other => {
            return Err(Error::format(
                0,
                format!("bad IDX magic {other:#010x} (expected 0x00000801 or 0x00000803)"),
            ))
        }
    };
    let header = 4 + 4 * rank;
    if buf.len() < header {
        return Err(Error::format(buf.len() as u64, "IDX dimension header truncated"));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u32::from_be_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let n: usize = dims.iter().product();
    let body = &buf[header..];
    if body.len() < n {
        return Err(Error::format(
            buf.len() as u64,
            format!(
                "IDX payload truncated: need {n} bytes after the header, found {}",
                body.len()
            ),
        ));
    }
    if body.len() > n {
        return Err(Error::format((header + n) as u64, "trailing bytes after IDX payload"));
    }
    Ok(IdxArray {
        dims,
        data: body.to_vec(),
    })
}

pub fn encode_idx(arr: &IdxArray) -> Vec<u8> {
    let magic = if arr.dims.len() == 1 {
        IDX_UBYTE_1D
    } else {
        IDX_UBYTE_3D
    };
    let mut out = magic.to_be_bytes().to_vec();
    for &d in &arr.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&arr.data);
    out
}

/// Reads an image file (rank 3) and a label file (rank 1) into a split.
pub fn load_idx(images: &Path, labels: &Path) -> Result<(Split, InputShape)> {
    let img = parse_idx(&fs::read(images)?)?;
    let lab = parse_idx(&fs::read(labels)?)?;
    if img.dims.len() != 3 || lab.dims.len() != 1 {
        return Err(Error::format(0, "expected a rank-3 image file and a rank-1 label file"));
    }
    if img.dims[0] != lab.dims[0] {
        return Err(Error::format(
            4,
            format!("{} images but {} labels", img.dims[0], lab.dims[0]),
        ));
    }
    let input = InputShape::image(img.dims[1], img.dims[2], 1);
    let x = Tensor::new(
        &[img.dims[0], input.dim()],
        img.data.iter().map(|&b| b as f64 / 255.0).collect(),
    )?;
    let y = lab.data.iter().map(|&b| b as usize).collect();
    Ok((Split { x, y }, input))
}

/// Label layout of a CIFAR binary record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarVariant {
    /// One label byte, 3073-byte records.
    Cifar10,
    /// Coarse and fine label bytes, 3074-byte records; the fine label is used.
    Cifar100,
}

impl CifarVariant {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + 3 * 1024
    }
}

pub fn parse_cifar(buf: &[u8], variant: CifarVariant) -> Result<Split> {
    let rec = variant.record_len();
    if buf.is_empty() || !buf.len().is_multiple_of(rec) {
        let whole = buf.len() / rec * rec;
        return Err(Error::format(
            whole as u64,
            format!("file size {} is not a multiple of the {rec}-byte record", buf.len()),
        ));
    }
    let n = buf.len() / rec;
    let mut x = Vec::with_capacity(n * 3072);
    let mut y = Vec::with_capacity(n);
    for r in buf.chunks_exact(rec) {
        y.push(r[variant.label_bytes() - 1] as usize);
        let planes = &r[variant.label_bytes()..];
        // channel planes → interleaved HWC
        for p in 0..1024 {
            for c in 0..3 {
                x.push(planes[c * 1024 + p] as f64 / 255.0);
            }
        }
    }
    Ok(Split {
        x: Tensor::new(&[n, 3072], x)?,
        y,
    })
}

pub fn load_cifar_binary(path: &Path, variant: CifarVariant) -> Result<Split> {
    parse_cifar(&fs::read(path)?, variant)
}

pub fn encode_cifar(images: &[[u8; 3072]], labels: &[u8], variant: CifarVariant) -> Vec<u8> {
    let mut out = Vec::with_capacity(images.len() * variant.record_len());
    for (img, &l) in images.iter().zip(labels) {
        if variant == CifarVariant::Cifar100 {
            out.push(0);
        }
        out.push(l);
        out.extend_from_slice(img);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn handcrafted_label_file() {
        let buf = [0, 0, 8, 1, 0, 0, 0, 3, 0, 1, 2];
        let arr = parse_idx(&buf).unwrap();
        assert_eq!(arr.dims, vec![3]);
        assert_eq!(arr.data, vec![0, 1, 2]);
        assert_eq!(encode_idx(&arr), buf);
    }

    #[test]
    fn idx_errors_carry_offsets() {
        assert!(matches!(parse_idx(&[0, 0, 9, 1]), Err(Error::Format { offset: 0, .. })));
        let short = [0, 0, 8, 1, 0, 0, 0, 3, 0, 1];
        assert!(matches!(parse_idx(&short), Err(Error::Format { offset: 10, .. })));
        let long = [0, 0, 8, 1, 0, 0, 0, 1, 7, 7];
        assert!(matches!(parse_idx(&long), Err(Error::Format { offset: 9, .. })));
    }

    #[test]
    fn idx_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = IdxArray {
            dims: vec![2, 2, 3],
            data: (0..12).map(|v| v * 20).collect(),
        };
        let lab = IdxArray {
            dims: vec![2],
            data: vec![4, 9],
        };
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        fs::write(&ip, encode_idx(&img)).unwrap();
        fs::write(&lp, encode_idx(&lab)).unwrap();
        let (split, shape) = load_idx(&ip, &lp).unwrap();
        assert_eq!(shape, InputShape::image(2, 3, 1));
        assert_eq!(split.y, vec![4, 9]);
        let bytes: Vec<u8> = split.x.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(bytes, img.data);
    }

    #[test]
    fn cifar_record_arithmetic() {
        let mut img = [0u8; 3072];
        img[0] = 255; // red plane, pixel 0
        img[1024 + 1] = 51; // green plane, pixel 1
        let buf = encode_cifar(&[img, [7; 3072]], &[3, 8], CifarVariant::Cifar10);
        assert_eq!(buf.len(), 2 * 3073);
        let s = parse_cifar(&buf, CifarVariant::Cifar10).unwrap();
        assert_eq!(s.y, vec![3, 8]);
        assert_eq!(s.x.row(0)[0], 1.0);
        assert_eq!(s.x.row(0)[3 + 1], 0.2);
        assert!(parse_cifar(&buf[..3073 + 5], CifarVariant::Cifar10).is_err());
        let fine = encode_cifar(&[img], &[77], CifarVariant::Cifar100);
        assert_eq!(parse_cifar(&fine, CifarVariant::Cifar100).unwrap().y, vec![77]);
    }
}
