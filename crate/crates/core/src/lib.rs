pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod kv;
pub mod manipulation;
pub mod models;
pub mod objectives;
pub mod rng;
pub mod tensor;
pub mod trace;
pub mod trainer;
pub mod verify;

pub use autodiff::{grad, hvp, no_grad, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
