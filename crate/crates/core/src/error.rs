use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("no root of r(p) = {target} bracketed in p in [0, {limit}]; r is not bell-shaped")]
    NoRoot { target: f64, limit: f64 },

    #[error("step {step}: iteration left the analyzed regime ({reason})")]
    Divergence { step: usize, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("network gradient vanishes; the reparameterization is undefined")]
    DegenerateReparam,

    #[error("{0} is not admitted by the theory checks")]
    NonConforming(String),

    #[error("dense Hessian of order {order} exceeds the limit {limit}")]
    TooLarge { order: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
