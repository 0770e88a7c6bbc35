//! Datasets: file loaders, synthetic generators and per-channel normalisation.

pub mod formats;
pub mod mixture;
pub mod synthetic;

use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::InputShape;
use crate::rng::derive;
use crate::tensor::Tensor;

pub use formats::{load_cifar_binary, load_idx, CifarVariant};
pub use mixture::{analytic_score, sample_mixture, Component, GaussianMixtureSpec};
pub use synthetic::{blobs_dataset, glyph_dataset, make_informative_pixels_dataset};

/// Inputs `[N, D]` and their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub x: Tensor,
    pub y: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Split {
        Split {
            x: self.x.gather_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// The first `n` examples (or all of them).
    pub fn head(&self, n: usize) -> Split {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// Per-channel affine standardisation `(x − mean) / std`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0) && self.std.iter().all(|&s| s == 1.0)
    }

    /// Statistics of each channel over all pixels of all rows of `x`.
    pub fn fit(x: &Tensor, channels: usize) -> Self {
        let mut sum = vec![0.0; channels];
        let mut count = vec![0usize; channels];
        for (i, v) in x.data().iter().enumerate() {
            sum[i % channels] += v;
            count[i % channels] += 1;
        }
        let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
        let mut ss = vec![0.0; channels];
        for (i, v) in x.data().iter().enumerate() {
            ss[i % channels] += (v - mean[i % channels]).powi(2);
        }
        let std = ss
            .iter()
            .zip(&count)
            .map(|(s, &n)| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Normalization { mean, std }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let c = self.mean.len();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % c]) / self.std[i % c])
            .collect();
        Tensor::new(x.shape(), data).expect("same shape")
    }

    pub fn invert(&self, x: &Tensor) -> Tensor {
        let c = self.mean.len();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % c] + self.mean[i % c])
            .collect();
        Tensor::new(x.shape(), data).expect("same shape")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub id: String,
    pub input: InputShape,
    pub classes: usize,
    pub train: Split,
    pub test: Split,
    /// Statistics already applied to both splits; identity when raw.
    pub normalization: Normalization,
    /// Label-carrying pixel indices, for constructed oracle tasks.
    pub informative: Option<Vec<usize>>,
}

impl Dataset {
    /// Fits per-channel statistics on the training split and applies them to both splits.
    pub fn normalized(mut self) -> Self {
        if !self.normalization.is_identity() {
            return self;
        }
        let norm = Normalization::fit(&self.train.x, self.input.channels);
        self.train.x = norm.apply(&self.train.x);
        self.test.x = norm.apply(&self.test.x);
        self.normalization = norm;
        self
    }

    /// Smallest and largest normalised value a raw pixel range `[lo, hi]` maps to.
    pub fn input_range(&self, lo: f64, hi: f64) -> (f64, f64) {
        let n = &self.normalization;
        let mut out = (f64::INFINITY, f64::NEG_INFINITY);
        for (m, s) in n.mean.iter().zip(&n.std) {
            out.0 = out.0.min((lo - m) / s);
            out.1 = out.1.max((hi - m) / s);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("train", &self.train), ("test", &self.test)] {
            if s.x.rank() != 2 || s.x.row_len() != self.input.dim() || s.x.rows() != s.len() {
                return Err(Error::invalid(format!(
                    "{} {name} split has inconsistent shape",
                    self.id
                )));
            }
            if let Some(&bad) = s.y.iter().find(|&&y| y >= self.classes) {
                return Err(Error::invalid(format!(
                    "{} {name} split has label {bad} ≥ {} classes",
                    self.id, self.classes
                )));
            }
        }
        Ok(())
    }
}

/// Balanced train/test draws from a mixture, `n` per class per split, interleaved by class.
pub fn mixture_dataset(spec: &GaussianMixtureSpec, n_train: usize, n_test: usize, seed: u64) -> Result<Dataset> {
    let c = spec.num_classes();
    let split = |n: usize, purpose: &str| -> Result<Split> {
        let per = n.div_ceil(c);
        let draws: Vec<Tensor> = (0..c)
            .map(|k| sample_mixture(spec, k, per, derive(seed, purpose)))
            .collect::<Result<_>>()?;
        let mut x = Vec::with_capacity(n * spec.dim);
        let mut y = Vec::with_capacity(n);
        for j in 0..n {
            let (k, r) = (j % c, j / c);
            x.extend_from_slice(draws[k].row(r));
            y.push(k);
        }
        Ok(Split {
            x: Tensor::new(&[n, spec.dim], x)?,
            y,
        })
    };
    Ok(Dataset {
        id: "mixture".into(),
        input: InputShape::flat(spec.dim),
        classes: c,
        train: split(n_train, "train")?,
        test: split(n_test, "test")?,
        normalization: Normalization::identity(spec.dim),
        informative: None,
    })
}

/// Where a dataset comes from, as written in configs (`glyphs`, `mixture`,
/// `mixture:<spec file>`, `blobs`, `informative:<D>:<k>`, `mnist:<dir>`, `cifar10:<dir>`,
/// `cifar100:<dir>`).
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Glyphs,
    Mixture(Option<PathBuf>),
    Blobs,
    Informative { dim: usize, k: usize },
    Mnist(PathBuf),
    Cifar(PathBuf, CifarVariant),
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (s, None),
        };
        let usage = || {
            Error::Usage(format!(
                "unknown dataset `{s}` (expected glyphs, mixture[:file], blobs, informative:D:k, \
                 mnist:dir, cifar10:dir or cifar100:dir)"
            ))
        };
        Ok(match (head, rest) {
            ("glyphs", None) => DataSource::Glyphs,
            ("blobs", None) => DataSource::Blobs,
            ("mixture", r) => DataSource::Mixture(r.map(PathBuf::from)),
            ("informative", Some(r)) => {
                let (d, k) = r.split_once(':').ok_or_else(usage)?;
                DataSource::Informative {
                    dim: d.parse().map_err(|_| usage())?,
                    k: k.parse().map_err(|_| usage())?,
                }
            }
            ("mnist", Some(r)) => DataSource::Mnist(r.into()),
            ("cifar10", Some(r)) => DataSource::Cifar(r.into(), CifarVariant::Cifar10),
            ("cifar100", Some(r)) => DataSource::Cifar(r.into(), CifarVariant::Cifar100),
            _ => return Err(usage()),
        })
    }
}

impl std::fmt::Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataSource::Glyphs => write!(f, "glyphs"),
            DataSource::Mixture(None) => write!(f, "mixture"),
            DataSource::Mixture(Some(p)) => write!(f, "mixture:{}", p.display()),
            DataSource::Blobs => write!(f, "blobs"),
            DataSource::Informative { dim, k } => write!(f, "informative:{dim}:{k}"),
            DataSource::Mnist(p) => write!(f, "mnist:{}", p.display()),
            DataSource::Cifar(p, CifarVariant::Cifar10) => write!(f, "cifar10:{}", p.display()),
            DataSource::Cifar(p, CifarVariant::Cifar100) => write!(f, "cifar100:{}", p.display()),
        }
    }
}

impl DataSource {
    /// Builds or loads the dataset. Sizes apply to generated sources only. Image sources
    /// come back normalised; mixtures, blobs and the informative task stay raw.
    pub fn open(&self, n_train: usize, n_test: usize, seed: u64) -> Result<Dataset> {
        let ds = match self {
            DataSource::Glyphs => glyph_dataset(n_train, n_test, seed)?.normalized(),
            DataSource::Mixture(path) => {
                let spec = match path {
                    Some(p) => GaussianMixtureSpec::load(p)?,
                    None => GaussianMixtureSpec::desk_default(),
                };
                mixture_dataset(&spec, n_train, n_test, seed)?
            }
            DataSource::Blobs => blobs_dataset(n_train, n_test, seed)?,
            DataSource::Informative { dim, k } => make_informative_pixels_dataset(*dim, *k, n_train, seed)?,
            DataSource::Mnist(dir) => {
                let (train, input) = load_idx(
                    &dir.join("train-images-idx3-ubyte"),
                    &dir.join("train-labels-idx1-ubyte"),
                )?;
                let (test, _) = load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
                Dataset {
                    id: format!("mnist:{}", dir.display()),
                    input,
                    classes: 10,
                    train,
                    test,
                    normalization: Normalization::identity(1),
                    informative: None,
                }
                .normalized()
            }
            DataSource::Cifar(dir, variant) => {
                let (train, test, classes) = match variant {
                    CifarVariant::Cifar10 => {
                        let mut parts = Vec::new();
                        for i in 1..=5 {
                            parts.push(load_cifar_binary(&dir.join(format!("data_batch_{i}.bin")), *variant)?);
                        }
                        let test = load_cifar_binary(&dir.join("test_batch.bin"), *variant)?;
                        (concat(&parts)?, test, 10)
                    }
                    CifarVariant::Cifar100 => (
                        load_cifar_binary(&dir.join("train.bin"), *variant)?,
                        load_cifar_binary(&dir.join("test.bin"), *variant)?,
                        100,
                    ),
                };
                Dataset {
                    id: format!("cifar:{}", dir.display()),
                    input: InputShape::image(32, 32, 3),
                    classes,
                    train,
                    test,
                    normalization: Normalization::identity(3),
                    informative: None,
                }
                .normalized()
            }
        };
        ds.validate()?;
        Ok(ds)
    }
}

fn concat(parts: &[Split]) -> Result<Split> {
    let d = parts[0].x.row_len();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for p in parts {
        x.extend_from_slice(p.x.data());
        y.extend_from_slice(&p.y);
    }
    Ok(Split {
        x: Tensor::new(&[y.len(), d], x)?,
        y,
    })
}

#[cfg(test)]
mod tests;
