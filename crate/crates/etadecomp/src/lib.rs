//! Panel-data toolkit for using ML-predicted outcomes in causal analysis.
//!
//! A prediction can fit an outcome through three distinct channels: stable
//! between-unit differences, natural within-unit change over time, and the
//! counterfactual response to treatment. Only the last one determines whether
//! a treatment-effect regression on predicted outcomes recovers the true
//! effect, and it is not observable without experimental variation. This
//! crate estimates the first two channels from a labeled panel (at least two
//! periods), uses the within-unit coefficient as a model-selection diagnostic
//! and as an attenuation correction, and ships a synthetic-data engine that
//! reproduces the full simulation grid behind those claims.
//!
//! Modules:
//! - [`panel`]: validated panel container, CSV ingestion/export, deltas and centering.
//! - [`regress`]: bivariate OLS (with/without intercept), the within
//!   regression, and the cluster bootstrap.
//! - [`eta`]: the three coefficient estimators, the model diagnostic, and the
//!   attenuation correction.
//! - [`sim`]: data-generating process, prediction synthesizer, statistics,
//!   grid sweep, figure tables.
//! - [`cli`]: the `etadecomp` command-line interface.

pub mod cli;
pub mod error;
pub mod eta;
pub mod jsonfmt;
pub mod panel;
pub mod regress;
pub mod sim;

pub use error::{Error, Result};
pub use eta::{
    correct_treatment_effect, diagnose_model, estimate_eta_epsilon, estimate_eta_mu,
    estimate_eta_t, CorrectedEffect, DiagnosticReport, EtaEstimate, EtaKind, EtaMethod,
};
pub use panel::{
    center_panel, export_panel, load_panel, load_panel_path, make_deltas, CenteredObservation,
    DataQuality, DeltaPair, PanelDataset, PanelRecord, PanelSchema, RawRow, UnitId,
};
pub use regress::{
    cluster_bootstrap, ols_no_intercept, ols_with_intercept, within_regression, BootstrapConfig,
    BootstrapResult, RegressionResult,
};
pub use sim::{
    compute_stats, figure_data, run_grid, simulate_actual, simulate_predicted, ActualComponents,
    DgpParams, FigureId, GridSpec, GridTable, MuDistribution, PredictionParams, SimulationStats,
};
