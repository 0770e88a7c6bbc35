//! Class-conditional isotropic Gaussian mixtures with closed-form scores.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kv::{parse_list, KvMap};
use crate::rng::{derive_index, Gaussian};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub mean: Vec<f64>,
    pub sigma: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixtureSpec {
    pub dim: usize,
    /// Components of each class's density.
    pub classes: Vec<Vec<Component>>,
}

impl GaussianMixtureSpec {
    /// Nine components of width 0.25 on the grid `{−1.5, 0, 1.5}²`; component `(r, c)`
    /// belongs to class `(r + c) mod 3`, so every class has one mode per row and column.
    pub fn desk_default() -> Self {
        let grid = [-1.5, 0.0, 1.5];
        let mut classes = vec![Vec::new(); 3];
        for (r, &a) in grid.iter().enumerate() {
            for (c, &b) in grid.iter().enumerate() {
                classes[(r + c) % 3].push(Component {
                    mean: vec![a, b],
                    sigma: 0.25,
                    weight: 1.0 / 3.0,
                });
            }
        }
        GaussianMixtureSpec { dim: 2, classes }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.classes.is_empty() {
            return Err(Error::invalid("mixture needs dim ≥ 1 and at least one class"));
        }
        for (i, comps) in self.classes.iter().enumerate() {
            if comps.is_empty() {
                return Err(Error::invalid(format!("class {i} has no components")));
            }
            let mut total = 0.0;
            for (k, c) in comps.iter().enumerate() {
                if c.mean.len() != self.dim {
                    return Err(Error::invalid(format!(
                        "class {i} component {k}: mean has {} entries, dim is {}",
                        c.mean.len(),
                        self.dim
                    )));
                }
                if !(c.sigma > 0.0 && c.sigma.is_finite()) || !(c.weight > 0.0) {
                    return Err(Error::invalid(format!(
                        "class {i} component {k}: sigma and weight must be positive"
                    )));
                }
                total += c.weight;
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("class {i}: weights sum to {total}, not 1")));
            }
        }
        Ok(())
    }

    fn components(&self, class: usize) -> Result<&[Component]> {
        self.classes
            .get(class)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("class {class} out of range for {} classes", self.num_classes())))
    }

    /// Per-component log of `w_k N(x; μ_k, σ_k² I)`.
    fn log_terms(&self, comps: &[Component], x: &[f64]) -> Vec<f64> {
        let d = self.dim as f64;
        comps
            .iter()
            .map(|c| {
                let sq: f64 = x.iter().zip(&c.mean).map(|(a, m)| (a - m).powi(2)).sum();
                c.weight.ln() - d * c.sigma.ln() - 0.5 * d * (2.0 * PI).ln() - sq / (2.0 * c.sigma * c.sigma)
            })
            .collect()
    }

    pub fn log_density(&self, class: usize, x: &[f64]) -> Result<f64> {
        let terms = self.log_terms(self.components(class)?, x);
        Ok(log_sum_exp(&terms))
    }

    /// `Σ_k γ_k(x)·(μ_k − x)/σ_k²` with responsibilities from a stabilised softmax.
    pub fn score(&self, class: usize, x: &[f64]) -> Result<Vec<f64>> {
        let comps = self.components(class)?;
        let terms = self.log_terms(comps, x);
        let lse = log_sum_exp(&terms);
        let mut out = vec![0.0; self.dim];
        for (c, t) in comps.iter().zip(terms) {
            let gamma = (t - lse).exp();
            for (o, (m, xv)) in out.iter_mut().zip(c.mean.iter().zip(x)) {
                *o += gamma * (m - xv) / (c.sigma * c.sigma);
            }
        }
        Ok(out)
    }

    pub fn parse_kv(text: &str, origin: &str) -> Result<Self> {
        let mut kv = KvMap::parse(text, origin)?;
        let dim: usize = kv.require("dim")?;
        let n_classes: usize = kv.require("classes")?;
        let mut classes = Vec::with_capacity(n_classes);
        for i in 0..n_classes {
            let n: usize = kv.require(&format!("class.{i}.components"))?;
            let mut comps = Vec::with_capacity(n);
            for k in 0..n {
                let key = format!("class.{i}.{k}.mean");
                let raw = kv
                    .take_str(&key)
                    .ok_or_else(|| Error::Usage(format!("{origin}: missing key `{key}`")))?;
                let mean = parse_list::<f64>(&raw).map_err(|e| Error::Usage(format!("{origin}: `{key}`: {e}")))?;
                comps.push(Component {
                    mean,
                    sigma: kv.require(&format!("class.{i}.{k}.sigma"))?,
                    weight: kv.require(&format!("class.{i}.{k}.weight"))?,
                });
            }
            classes.push(comps);
        }
        kv.finish()?;
        let spec = GaussianMixtureSpec { dim, classes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> String {
        let mut s = format!("dim = {}\nclasses = {}\n", self.dim, self.classes.len());
        for (i, comps) in self.classes.iter().enumerate() {
            writeln!(s, "class.{i}.components = {}", comps.len()).unwrap();
            for (k, c) in comps.iter().enumerate() {
                let mean: Vec<String> = c.mean.iter().map(|v| format!("{v:?}")).collect();
                writeln!(s, "class.{i}.{k}.mean = {}", mean.join(",")).unwrap();
                writeln!(s, "class.{i}.{k}.sigma = {:?}", c.sigma).unwrap();
                writeln!(s, "class.{i}.{k}.weight = {:?}", c.weight).unwrap();
            }
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_kv(&fs::read_to_string(path)?, &path.display().to_string())
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `n` i.i.d. draws `[n, D]` from class `class`; draw `j` uses its own derived stream.
pub fn sample_mixture(spec: &GaussianMixtureSpec, class: usize, n: usize, seed: u64) -> Result<Tensor> {
    spec.validate()?;
    let comps = spec.components(class)?;
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let base = derive_index(seed, class as u64);
    let mut data = Vec::with_capacity(n * spec.dim);
    for j in 0..n {
        let mut g = Gaussian::from_seed(derive_index(base, j as u64));
        let u: f64 = g.rng_mut().gen();
        let mut acc = 0.0;
        let mut pick = comps.len() - 1;
        for (k, c) in comps.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = k;
                break;
            }
        }
        let c = &comps[pick];
        data.extend(c.mean.iter().map(|m| m + c.sigma * g.sample()));
    }
    Tensor::new(&[n, spec.dim], data)
}

/// Scores for `[D]` or `[B, D]` input, same shape out.
pub fn analytic_score(spec: &GaussianMixtureSpec, class: usize, x: &Tensor) -> Result<Tensor> {
    let d = spec.dim;
    if x.shape().last() != Some(&d) || x.rank() > 2 {
        return Err(Error::ShapeMismatch {
            op: "analytic_score",
            lhs: x.shape().to_vec(),
            rhs: vec![d],
        });
    }
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(d) {
        out.extend(spec.score(class, row)?);
    }
    Tensor::new(x.shape(), out)
}
