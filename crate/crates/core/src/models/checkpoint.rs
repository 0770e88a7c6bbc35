//! Versioned binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "SGRDCKPT"
//! version      u32      1
//! preset       u32 length + UTF-8 name
//! beta         f64
//! classes      u32
//! input_dim    u32
//! height, width, channels   u32 × 3
//! param_count  u32
//! per param:   u32 name length, name, u32 rank, u64 × rank extents, f64 × product values
//! ```

use std::fs;
use std::path::Path;

use super::{ArchPreset, Architecture, ClassifierModel, InputShape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SGRDCKPT";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_bytes(model: &ClassifierModel) -> Vec<u8> {
    let a = &model.arch;
    let mut out = Vec::with_capacity(64 + 8 * model.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let name = a.preset.name();
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&a.beta.to_le_bytes());
    for v in [
        a.classes,
        a.input.dim(),
        a.input.height,
        a.input.width,
        a.input.channels,
        model.params.len(),
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (name, t) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let at = self.pos as u64;
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::format(at, format!("{what} is not UTF-8")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ClassifierModel> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::format(0, "bad checkpoint magic"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(8, format!("unsupported checkpoint version {version}")));
    }
    let preset_at = r.pos as u64;
    let preset = r.string("preset name")?;
    let preset = ArchPreset::parse(&preset).map_err(|e| Error::format(preset_at, e.to_string()))?;
    let beta = r.f64("beta")?;
    let classes = r.u32("classes")? as usize;
    let dim = r.u32("input dim")? as usize;
    let input = InputShape {
        height: r.u32("height")? as usize,
        width: r.u32("width")? as usize,
        channels: r.u32("channels")? as usize,
    };
    if input.dim() != dim {
        return Err(Error::format(
            r.pos as u64,
            format!("input dim {dim} disagrees with geometry {input:?}"),
        ));
    }
    let arch =
        Architecture::build(preset, input, classes, beta).map_err(|e| Error::format(r.pos as u64, e.to_string()))?;
    let mut model = ClassifierModel::zeros(arch);
    let count = r.u32("param count")? as usize;
    if count != model.params.len() {
        return Err(Error::format(
            r.pos as u64,
            format!("expected {} tensors, header says {count}", model.params.len()),
        ));
    }
    let expected: Vec<(String, Vec<usize>)> = model
        .params
        .iter()
        .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
        .collect();
    let mut values = Vec::with_capacity(count);
    for (want_name, want_shape) in expected {
        let at = r.pos as u64;
        let name = r.string("param name")?;
        if name != want_name {
            return Err(Error::format(at, format!("expected `{want_name}`, found `{name}`")));
        }
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        if shape != want_shape {
            return Err(Error::format(
                at,
                format!("`{name}` has shape {shape:?}, architecture needs {want_shape:?}"),
            ));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(8 * n, "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        values.push(Tensor::new(&shape, data)?);
    }
    if r.pos != buf.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after last tensor"));
    }
    model.params.set_all(values)?;
    Ok(model)
}

pub fn save(model: &ClassifierModel, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ClassifierModel> {
    from_bytes(&fs::read(path)?)
}
