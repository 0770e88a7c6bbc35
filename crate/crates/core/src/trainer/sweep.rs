use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::evaluation::{generate_and_score, SamplerConfig};
use crate::models::LogitModel;
use crate::objectives::RegMode;

use super::{init_model, train_model, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub lambdas: Vec<f64>,
    pub mus: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub lambda: f64,
    pub mu: f64,
    pub accuracy: Option<f64>,
    pub gan_test: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

fn pct(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{:.2}", 100.0 * v))
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,mu,accuracy,gan_test,error\n");
        for c in &self.cells {
            let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
            writeln!(
                s,
                "{},{},{},{},{}",
                c.lambda,
                c.mu,
                opt(c.accuracy),
                opt(c.gan_test),
                c.error.as_deref().unwrap_or("").replace(',', ";")
            )
            .unwrap();
        }
        s
    }

    /// Rows λ, columns μ, cells `accuracy % / GAN-test %`.
    pub fn to_table(&self) -> String {
        let mut lambdas: Vec<f64> = Vec::new();
        let mut mus: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !lambdas.contains(&c.lambda) {
                lambdas.push(c.lambda);
            }
            if !mus.contains(&c.mu) {
                mus.push(c.mu);
            }
        }
        let mut s = String::from("lambda \\ mu");
        for m in &mus {
            write!(s, " | {m:e}").unwrap();
        }
        s.push('\n');
        for l in &lambdas {
            write!(s, "{l:e}").unwrap();
            for m in &mus {
                let cell = self.cells.iter().find(|c| c.lambda == *l && c.mu == *m);
                match cell {
                    Some(c) => write!(s, " | {} / {}", pct(c.accuracy), pct(c.gan_test)).unwrap(),
                    None => s.push_str(" | -"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Trains one model per `(λ, μ)` with `base`'s mode (score matching when `base` has none).
///
/// A failing cell records its error and the sweep moves on. GAN-test is measured only
/// when an evaluator is given, on `gan_samples` chains.
pub fn sweep(
    base: &TrainConfig,
    grid: &SweepGrid,
    evaluator: Option<&dyn LogitModel>,
    sampler: &SamplerConfig,
    gan_samples: usize,
) -> Result<SweepReport> {
    if grid.lambdas.is_empty() || grid.mus.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    let dataset = base
        .data
        .open(base.n_train, base.n_test, crate::rng::derive(base.seed, "data"))?;
    let mut report = SweepReport::default();
    for &lambda in &grid.lambdas {
        for &mu in &grid.mus {
            let mut cfg = base.clone();
            if cfg.reg.mode == RegMode::None {
                cfg.reg.mode = RegMode::ScoreMatching;
            }
            cfg.reg.lambda = lambda;
            cfg.reg.mu = mu;
            if let Some(dir) = &base.checkpoint_dir {
                cfg.checkpoint_dir = Some(dir.join(format!("lambda{lambda:e}_mu{mu:e}")));
            }
            let run = || -> Result<(f64, Option<f64>)> {
                let mut model = init_model(&cfg, &dataset)?;
                let r = train_model(&mut model, &dataset, &cfg, &mut |_, _| Ok(()))?;
                r.check()?;
                let acc = r.final_test_accuracy().unwrap_or(0.0);
                let gan = match evaluator {
                    Some(ev) => Some(
                        generate_and_score(&model, ev, sampler, gan_samples, Some(&dataset.test))?
                            .0
                            .accuracy,
                    ),
                    None => None,
                };
                Ok((acc, gan))
            };
            let cell = match run() {
                Ok((acc, gan)) => SweepCell {
                    lambda,
                    mu,
                    accuracy: Some(acc),
                    gan_test: gan,
                    error: None,
                },
                Err(e) => {
                    log::warn!("sweep cell λ={lambda} μ={mu} failed: {e}");
                    SweepCell {
                        lambda,
                        mu,
                        accuracy: None,
                        gan_test: None,
                        error: Some(format!("{}: {e}", e.category())),
                    }
                }
            };
            report.cells.push(cell);
        }
    }
    Ok(report)
}
