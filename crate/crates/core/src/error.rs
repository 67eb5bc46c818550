use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at data row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("stratum {stratum} has no {arm} units")]
    ArmEmpty { stratum: String, arm: &'static str },

    #[error("stratum {stratum} ({arm}) has {count} unit(s); {needed} required")]
    DegenerateStratum {
        stratum: String,
        arm: &'static str,
        count: usize,
        needed: usize,
    },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("lasso did not converge after {iterations} cycles (KKT violation {kkt_violation:.3e})")]
    NonConvergence {
        iterations: usize,
        kkt_violation: f64,
    },

    #[error("degrees of freedom exhausted in stratum {stratum} ({arm}): {count} units, {selected} selected")]
    DfExhausted {
        stratum: String,
        arm: &'static str,
        count: usize,
        selected: usize,
    },

    #[error("estimate carries no selected-covariate counts")]
    MissingSelection,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
