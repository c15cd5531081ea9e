//! Crate-wide error type with a stable exit-code contract for the CLI.

use thiserror::Error;

/// Every failure mode in the crate.
///
/// Errors fall into two classes, reflected by [`Error::exit_code`]:
/// input/validation problems (exit 2) and estimation degeneracies (exit 3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing required column '{0}'")]
    MissingColumn(String),

    #[error("row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("duplicate (unit, period) key: unit {unit}, period {period}")]
    DuplicateKey { unit: String, period: i64 },

    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Dimension(String),

    #[error("operation needs at least {required} periods, dataset has {found}")]
    InsufficientPeriods { required: u32, found: u32 },

    #[error(
        "dataset contains {n_treated_units} treated unit(s); this estimator is identified \
         only on an untreated subsample (filter with untreated_subsample first)"
    )]
    Contamination { n_treated_units: usize },

    #[error("missing treatment variation: {0}")]
    MissingVariation(String),

    #[error("series length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate regressor: {0}")]
    DegenerateRegressor(String),

    #[error(
        "estimated Var[mu] is non-positive (pooled variance {pooled} minus scaled within \
         variance {within_scaled}); the panel is noise-dominated and eta_mu is not identified"
    )]
    NonPositiveMuVariance { pooled: f64, within_scaled: f64 },

    #[error(
        "unstable ratio: treatment effect on actual outcomes is {gamma_actual}, below the \
         precision floor (effect on predicted outcomes was {gamma_predicted})"
    )]
    UnstableRatio {
        gamma_actual: f64,
        gamma_predicted: f64,
    },

    #[error("bootstrap unstable: statistic failed on {failed} of {total} replicates")]
    BootstrapInstability { failed: usize, total: usize },

    #[error("uncorrectable: {0}")]
    Uncorrectable(String),
}

impl Error {
    /// Stable CLI exit code: 2 for input/validation failures, 3 for estimation degeneracy.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateRegressor(_)
            | Error::NonPositiveMuVariance { .. }
            | Error::UnstableRatio { .. }
            | Error::BootstrapInstability { .. }
            | Error::Uncorrectable(_) => 3,
            _ => 2,
        }
    }

    /// Short machine-readable tag used in the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::MissingColumn(_) => "missing_column",
            Error::Parse { .. } => "parse",
            Error::DuplicateKey { .. } => "duplicate_key",
            Error::Validation(_) => "validation",
            Error::Dimension(_) => "dimension",
            Error::InsufficientPeriods { .. } => "insufficient_periods",
            Error::Contamination { .. } => "contamination",
            Error::MissingVariation(_) => "missing_variation",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::DegenerateRegressor(_) => "degenerate_regressor",
            Error::NonPositiveMuVariance { .. } => "non_positive_mu_variance",
            Error::UnstableRatio { .. } => "unstable_ratio",
            Error::BootstrapInstability { .. } => "bootstrap_instability",
            Error::Uncorrectable(_) => "uncorrectable",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
