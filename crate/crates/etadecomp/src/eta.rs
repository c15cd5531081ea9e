//! The three decomposition-coefficient estimators and the attenuation
//! correction.
//!
//! `eta_epsilon` (within-unit fit across time) and `eta_mu` (between-unit fit)
//! are identified on an untreated panel; both hard-fail when treated units are
//! present rather than silently filtering. `eta_t` (counterfactual fit) needs
//! treatment variation with both outcomes observed. Estimates outside [0, 1]
//! are reported with a warning, never clipped.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{center_panel, make_deltas, PanelDataset};
use crate::regress::{
    cluster_bootstrap, fe_slope_xy, ols_no_intercept, ols_with_intercept, within_regression,
    BootstrapConfig,
};

/// Which decomposition coefficient an estimate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaKind {
    EtaMu,
    EtaEpsilon,
    EtaT,
}

/// How the estimate was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaMethod {
    DiffSlope,
    FeSlope,
    CovAlgebra2p,
    CovAlgebraTp,
    DualRegressionRatio,
}

impl EtaMethod {
    fn valid_for(self, which: EtaKind) -> bool {
        match self {
            EtaMethod::DiffSlope | EtaMethod::FeSlope => which == EtaKind::EtaEpsilon,
            EtaMethod::CovAlgebra2p | EtaMethod::CovAlgebraTp => which == EtaKind::EtaMu,
            EtaMethod::DualRegressionRatio => which == EtaKind::EtaT,
        }
    }
}

/// Point estimate of one decomposition coefficient.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EtaEstimate {
    pub which: EtaKind,
    pub value: f64,
    pub se: f64,
    pub method: EtaMethod,
    pub n_units: usize,
    pub n_periods: u32,
}

impl EtaEstimate {
    fn new(
        which: EtaKind,
        value: f64,
        se: f64,
        method: EtaMethod,
        n_units: usize,
        n_periods: u32,
    ) -> Self {
        debug_assert!(method.valid_for(which));
        debug_assert!(se >= 0.0 || se.is_nan());
        EtaEstimate {
            which,
            value,
            se,
            method,
            n_units,
            n_periods,
        }
    }

    /// Warning text when the estimate falls outside [0, 1]; such values are
    /// reported as-is because clipping would mask model pathologies.
    pub fn range_warning(&self) -> Option<String> {
        if self.value < 0.0 || self.value > 1.0 {
            Some(format!(
                "{:?} estimate {} lies outside [0, 1]; the prediction decomposition \
                 does not behave like a partial fit on this data",
                self.which, self.value
            ))
        } else {
            None
        }
    }
}

fn require_untreated(data: &PanelDataset) -> Result<()> {
    let n_treated = data
        .unit_ids()
        .filter(|&u| data.unit_has_treatment(u))
        .count();
    if n_treated > 0 {
        return Err(Error::Contamination {
            n_treated_units: n_treated,
        });
    }
    Ok(())
}

fn require_complete_units(data: &PanelDataset, min: usize) -> Result<usize> {
    let n = data.n_complete_units();
    if n < min {
        return Err(Error::Validation(format!(
            "estimator needs at least {min} complete units (all periods, both outcomes), found {n}"
        )));
    }
    Ok(n)
}

/// Diff-vs-diff slope on a two-period panel: through-origin regression of
/// predicted-outcome deltas on actual-outcome deltas.
pub fn eta_epsilon_diff(data: &PanelDataset) -> Result<EtaEstimate> {
    require_untreated(data)?;
    let n_units = require_complete_units(data, 2)?;
    let deltas = make_deltas(data)?;
    let dx: Vec<f64> = deltas.iter().map(|d| d.delta_actual).collect();
    let dy: Vec<f64> = deltas.iter().map(|d| d.delta_predicted).collect();
    let reg = ols_no_intercept(&dx, &dy)?;
    Ok(EtaEstimate::new(
        EtaKind::EtaEpsilon,
        reg.slope,
        reg.slope_se,
        EtaMethod::DiffSlope,
        n_units,
        data.n_periods(),
    ))
}

/// Fixed-effects slope on a centered panel; valid for any T >= 2 and
/// algebraically identical to the diff slope when T = 2.
pub fn eta_epsilon_fe(data: &PanelDataset) -> Result<EtaEstimate> {
    require_untreated(data)?;
    let n_units = require_complete_units(data, 2)?;
    let obs = center_panel(data)?;
    let reg = within_regression(&obs)?;
    Ok(EtaEstimate::new(
        EtaKind::EtaEpsilon,
        reg.slope,
        reg.slope_se,
        EtaMethod::FeSlope,
        n_units,
        data.n_periods(),
    ))
}

/// Estimate the within-unit-across-time coefficient on an untreated panel.
///
/// Dispatches to the diff slope for T = 2 and the fixed-effects slope for
/// T > 2. The standard error comes from the regression.
pub fn estimate_eta_epsilon(data: &PanelDataset) -> Result<EtaEstimate> {
    match data.n_periods() {
        0 | 1 => Err(Error::InsufficientPeriods {
            required: 2,
            found: data.n_periods(),
        }),
        2 => eta_epsilon_diff(data),
        _ => eta_epsilon_fe(data),
    }
}

struct PooledMoments {
    cov: f64,
    var_actual: f64,
    var_predicted: f64,
}

/// Population-style (denominator n) pooled moments over complete units.
fn pooled_moments(data: &PanelDataset) -> Option<PooledMoments> {
    let mut n = 0usize;
    let mut sum_a = 0.0;
    let mut sum_p = 0.0;
    for u in data.unit_ids() {
        if !data.is_complete(u) {
            continue;
        }
        for r in data.unit_records(u) {
            sum_a += r.actual.unwrap();
            sum_p += r.predicted.unwrap();
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    let (mean_a, mean_p) = (sum_a / n as f64, sum_p / n as f64);
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_p = 0.0;
    for u in data.unit_ids() {
        if !data.is_complete(u) {
            continue;
        }
        for r in data.unit_records(u) {
            let da = r.actual.unwrap() - mean_a;
            let dp = r.predicted.unwrap() - mean_p;
            cov += da * dp;
            var_a += da * da;
            var_p += dp * dp;
        }
    }
    let nf = n as f64;
    Some(PooledMoments {
        cov: cov / nf,
        var_actual: var_a / nf,
        var_predicted: var_p / nf,
    })
}

fn eta_mu_from_moments(data: &PanelDataset, k: f64, cov_w: f64, var_w: f64) -> Result<f64> {
    let pooled = pooled_moments(data)
        .ok_or_else(|| Error::Validation("no complete units for moment estimation".into()))?;
    let denom = pooled.var_actual - k * var_w;
    if denom <= 0.0 {
        return Err(Error::NonPositiveMuVariance {
            pooled: pooled.var_actual,
            within_scaled: k * var_w,
        });
    }
    Ok((pooled.cov - k * cov_w) / denom)
}

/// Two-period point estimate: covariance algebra on deltas with k = 1/2.
///
/// Delta moments are raw (uncentered) second moments; within-unit differences
/// have population mean zero by construction, and the raw form makes the T = 2
/// and centered-variable routes agree exactly.
pub fn eta_mu_delta(data: &PanelDataset) -> Result<f64> {
    require_untreated(data)?;
    require_complete_units(data, 2)?;
    let deltas = make_deltas(data)?;
    let n = deltas.len() as f64;
    let cov_w: f64 = deltas
        .iter()
        .map(|d| d.delta_actual * d.delta_predicted)
        .sum::<f64>()
        / n;
    let var_w: f64 = deltas
        .iter()
        .map(|d| d.delta_actual * d.delta_actual)
        .sum::<f64>()
        / n;
    eta_mu_from_moments(data, 0.5, cov_w, var_w)
}

/// Multi-period point estimate: covariance algebra on centered variables with
/// k = T/(T-1), the correction for the variance lost to centering.
pub fn eta_mu_centered(data: &PanelDataset) -> Result<f64> {
    require_untreated(data)?;
    require_complete_units(data, 2)?;
    let obs = center_panel(data)?;
    let t = data.n_periods() as f64;
    let n = obs.len() as f64;
    let cov_w: f64 = obs
        .iter()
        .map(|o| o.centered_actual * o.centered_predicted)
        .sum::<f64>()
        / n;
    let var_w: f64 = obs
        .iter()
        .map(|o| o.centered_actual * o.centered_actual)
        .sum::<f64>()
        / n;
    eta_mu_from_moments(data, t / (t - 1.0), cov_w, var_w)
}

fn eta_mu_point(data: &PanelDataset) -> Result<f64> {
    match data.n_periods() {
        0 | 1 => Err(Error::InsufficientPeriods {
            required: 2,
            found: data.n_periods(),
        }),
        2 => eta_mu_delta(data),
        _ => eta_mu_centered(data),
    }
}

/// Estimate the between-unit coefficient on an untreated panel, with a
/// cluster-bootstrap standard error.
pub fn estimate_eta_mu(data: &PanelDataset, bootstrap: &BootstrapConfig) -> Result<EtaEstimate> {
    let point = eta_mu_point(data)?;
    let boot = cluster_bootstrap(data, eta_mu_point, bootstrap)?;
    let method = if data.n_periods() == 2 {
        EtaMethod::CovAlgebra2p
    } else {
        EtaMethod::CovAlgebraTp
    };
    Ok(EtaEstimate::new(
        EtaKind::EtaMu,
        point,
        boot.se,
        method,
        data.n_complete_units(),
        data.n_periods(),
    ))
}

/// Treatment-effect slopes from the actual and predicted outcome series.
///
/// When treatment is fixed within units the regression is plain OLS on the
/// treatment dummy; when it varies within units the unit fixed effects are
/// absorbed first.
fn treatment_gammas(data: &PanelDataset) -> Result<(f64, f64)> {
    let gamma =
        |select: fn(&crate::panel::PanelRecord) -> Option<f64>, name: &str| -> Result<f64> {
            let mut x = Vec::new();
            let mut y = Vec::new();
            let mut units = Vec::new();
            for r in data.records() {
                if let Some(v) = select(r) {
                    x.push(if r.treated { 1.0 } else { 0.0 });
                    y.push(v);
                    units.push(r.unit.0);
                }
            }
            let any_treated = x.contains(&1.0);
            let any_control = x.contains(&0.0);
            if !any_treated || !any_control {
                return Err(Error::MissingVariation(format!(
                    "estimating the treatment effect on {name} outcomes needs both treated and \
                 untreated observations with that outcome present"
                )));
            }
            if data.treatment_fixed_within_units() {
                Ok(ols_with_intercept(&x, &y)?.slope)
            } else {
                let values: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
                fe_slope_xy(data, &values, &units)
            }
        };
    let gamma_actual = gamma(|r| r.actual, "actual")?;
    let gamma_predicted = gamma(|r| r.predicted, "predicted")?;
    Ok((gamma_actual, gamma_predicted))
}

fn eta_t_point(data: &PanelDataset) -> Result<f64> {
    let (gamma_actual, gamma_predicted) = treatment_gammas(data)?;
    // Relative precision floor: an actual-outcome effect this small cannot
    // anchor a ratio.
    let scale = {
        let vals: Vec<f64> = data.records().iter().filter_map(|r| r.actual).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64).sqrt()
    };
    if gamma_actual.abs() <= 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::UnstableRatio {
            gamma_actual,
            gamma_predicted,
        });
    }
    Ok(gamma_predicted / gamma_actual)
}

/// Estimate the counterfactual-treatment coefficient as the ratio of the two
/// treatment-effect regressions, with a cluster-bootstrap standard error.
pub fn estimate_eta_t(data: &PanelDataset, bootstrap: &BootstrapConfig) -> Result<EtaEstimate> {
    if !data.has_treatment_variation() {
        return Err(Error::MissingVariation(
            "dataset has no treatment variation; eta_t cannot be estimated".into(),
        ));
    }
    let point = eta_t_point(data)?;
    let boot = cluster_bootstrap(data, eta_t_point, bootstrap)?;
    Ok(EtaEstimate::new(
        EtaKind::EtaT,
        point,
        boot.se,
        EtaMethod::DualRegressionRatio,
        data.n_units(),
        data.n_periods(),
    ))
}

/// Fixed text attached to every corrected effect.
pub const ETA_ASSUMPTION_FLAG: &str = "requires eta_T \u{2248} eta_epsilon: the correction is \
     unbiased only when the prediction captures counterfactual treatment variation as well as \
     it captures natural within-unit variation";

/// A treatment effect rescaled by the estimated within-unit coefficient.
#[derive(Debug, Clone, Serialize)]
pub struct CorrectedEffect {
    pub raw_effect: f64,
    pub raw_se: f64,
    pub eta_epsilon_used: EtaEstimate,
    pub corrected_effect: f64,
    pub corrected_se: f64,
    /// Always present in serialized output.
    pub assumption_flag: String,
    pub warnings: Vec<String>,
}

/// Divide a raw treatment effect by the estimated eta_epsilon and propagate
/// both uncertainties by the delta method (the two estimates are treated as
/// independent; they come from disjoint subsamples in the intended workflow).
pub fn correct_treatment_effect(
    raw_effect: f64,
    raw_se: f64,
    eta_eps: &EtaEstimate,
) -> Result<CorrectedEffect> {
    if !raw_effect.is_finite() || !raw_se.is_finite() || raw_se < 0.0 {
        return Err(Error::Validation(format!(
            "raw effect {raw_effect} with standard error {raw_se} is not usable"
        )));
    }
    let e = eta_eps.value;
    if !e.is_finite() || e <= 0.0 {
        return Err(Error::Uncorrectable(format!(
            "eta_epsilon estimate is {e}; a non-positive value means the prediction carries no \
             within-unit signal and cannot recover treatment effects (collect more actual \
             outcomes instead of correcting)"
        )));
    }
    let corrected = raw_effect / e;
    // Delta method for r/e; equals |corrected| * sqrt((raw_se/raw)^2 + (se_e/e)^2)
    // whenever raw != 0, and stays defined at raw = 0.
    let corrected_se = ((raw_se / e).powi(2) + (raw_effect * eta_eps.se / (e * e)).powi(2)).sqrt();

    let mut warnings = Vec::new();
    if e < 0.1 {
        warnings.push(format!(
            "eta_epsilon {e} is below 0.1: the correction divides by a small, noisy estimate \
             and can explode"
        ));
    }
    if let Some(w) = eta_eps.range_warning() {
        warnings.push(w);
    }
    Ok(CorrectedEffect {
        raw_effect,
        raw_se,
        eta_epsilon_used: *eta_eps,
        corrected_effect: corrected,
        corrected_se,
        assumption_flag: ETA_ASSUMPTION_FLAG.to_string(),
        warnings,
    })
}

/// Joint-bootstrap variant of the correction for when the raw effect and
/// eta_epsilon come from overlapping samples: each replicate re-estimates the
/// predicted-outcome treatment effect on the resampled panel and eta_epsilon
/// on its untreated subsample, so the dependence between the two is
/// propagated instead of assumed away.
pub fn correct_treatment_effect_joint(
    data: &PanelDataset,
    bootstrap: &BootstrapConfig,
) -> Result<CorrectedEffect> {
    let eps = estimate_eta_epsilon(&data.untreated_subsample())?;
    if eps.value <= 0.0 {
        return Err(Error::Uncorrectable(format!(
            "eta_epsilon estimate is {}; a non-positive value cannot rescale effects",
            eps.value
        )));
    }

    let raw_stat = |d: &PanelDataset| treatment_gammas(d).map(|(_, gp)| gp);
    let corrected_stat = |d: &PanelDataset| -> Result<f64> {
        let (_, gamma_predicted) = treatment_gammas(d)?;
        let e = estimate_eta_epsilon(&d.untreated_subsample())?;
        if e.value <= 0.0 {
            return Err(Error::Uncorrectable(format!(
                "replicate eta_epsilon {} not positive",
                e.value
            )));
        }
        Ok(gamma_predicted / e.value)
    };
    // same config, hence the same resamples, for both statistics
    let boot_raw = cluster_bootstrap(data, raw_stat, bootstrap)?;
    let boot_corrected = cluster_bootstrap(data, corrected_stat, bootstrap)?;

    let mut warnings = Vec::new();
    if eps.value < 0.1 {
        warnings.push(format!(
            "eta_epsilon {} is below 0.1: the correction divides by a small, noisy estimate \
             and can explode",
            eps.value
        ));
    }
    if let Some(w) = eps.range_warning() {
        warnings.push(w);
    }
    Ok(CorrectedEffect {
        raw_effect: boot_raw.point,
        raw_se: boot_raw.se,
        eta_epsilon_used: eps,
        corrected_effect: boot_corrected.point,
        corrected_se: boot_corrected.se,
        assumption_flag: ETA_ASSUMPTION_FLAG.to_string(),
        warnings,
    })
}

/// Pooled squared correlation between predicted and actual outcomes over
/// complete units. This is the quantity the R-squared decomposition describes.
pub fn prediction_r2(data: &PanelDataset) -> Result<f64> {
    let m = pooled_moments(data)
        .ok_or_else(|| Error::Validation("no complete units for moment estimation".into()))?;
    if m.var_actual <= 0.0 || m.var_predicted <= 0.0 {
        return Err(Error::DegenerateRegressor(format!(
            "prediction R2 undefined: pooled variances are {} (actual) and {} (predicted)",
            m.var_actual, m.var_predicted
        )));
    }
    Ok(((m.cov * m.cov) / (m.var_actual * m.var_predicted)).clamp(0.0, 1.0))
}

/// SD(predicted) / SD(actual) over complete units.
pub fn compression_ratio(data: &PanelDataset) -> Result<f64> {
    let m = pooled_moments(data)
        .ok_or_else(|| Error::Validation("no complete units for moment estimation".into()))?;
    if m.var_actual <= 0.0 {
        return Err(Error::DegenerateRegressor(
            "actual outcomes have zero pooled variance".into(),
        ));
    }
    Ok((m.var_predicted / m.var_actual).sqrt())
}

/// Marker set when overall fit is high while within-unit fit is low.
pub const FLAG_HIGH_R2_LOW_ETA_EPS: &str = "high_r2_low_eta_epsilon";

/// Everything a practitioner needs to judge one prediction model, with
/// estimator failures reported per field instead of failing the report.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticReport {
    pub eta_epsilon: Option<EtaEstimate>,
    pub eta_mu: Option<EtaEstimate>,
    pub r2_pred: Option<f64>,
    pub compression: Option<f64>,
    pub flags: Vec<String>,
    /// Per-field estimator failures, keyed by field name.
    pub errors: std::collections::BTreeMap<String, String>,
    pub n_units: usize,
    pub n_periods: u32,
}

/// Run the full model diagnostic on an untreated labeled panel.
pub fn diagnose_model(data: &PanelDataset, bootstrap: &BootstrapConfig) -> DiagnosticReport {
    let mut errors = std::collections::BTreeMap::new();
    let mut flags = Vec::new();

    let eta_epsilon = match estimate_eta_epsilon(data) {
        Ok(e) => Some(e),
        Err(err) => {
            errors.insert("eta_epsilon".to_string(), err.to_string());
            None
        }
    };
    let eta_mu = match estimate_eta_mu(data, bootstrap) {
        Ok(e) => Some(e),
        Err(err) => {
            errors.insert("eta_mu".to_string(), err.to_string());
            None
        }
    };
    let r2_pred = match prediction_r2(data) {
        Ok(v) => Some(v),
        Err(err) => {
            errors.insert("r2_pred".to_string(), err.to_string());
            None
        }
    };
    let compression = match compression_ratio(data) {
        Ok(v) => Some(v),
        Err(err) => {
            errors.insert("compression".to_string(), err.to_string());
            None
        }
    };

    if let (Some(r2), Some(eps)) = (r2_pred, &eta_epsilon) {
        if r2 > 0.5 && eps.value < 0.2 {
            flags.push(format!(
                "{FLAG_HIGH_R2_LOW_ETA_EPS}: overall R2 {r2:.3} is high but eta_epsilon \
                 {:.3} is low; the model fits primarily to between-unit variation and will \
                 likely miss treatment effects",
                eps.value
            ));
        }
    }
    for est in [&eta_epsilon, &eta_mu].into_iter().flatten() {
        if let Some(w) = est.range_warning() {
            flags.push(w);
        }
    }

    DiagnosticReport {
        eta_epsilon,
        eta_mu,
        r2_pred,
        compression,
        flags,
        errors,
        n_units: data.n_complete_units(),
        n_periods: data.n_periods(),
    }
}

impl DiagnosticReport {
    /// Serialize with the fixed field names of the report interface.
    pub fn to_json(&self) -> serde_json::Value {
        use crate::jsonfmt::json_num_opt;
        let mut map = serde_json::Map::new();
        map.insert(
            "eta_epsilon".into(),
            json_num_opt(self.eta_epsilon.as_ref().map(|e| e.value)),
        );
        map.insert(
            "eta_epsilon_se".into(),
            json_num_opt(self.eta_epsilon.as_ref().map(|e| e.se)),
        );
        map.insert(
            "eta_mu".into(),
            json_num_opt(self.eta_mu.as_ref().map(|e| e.value)),
        );
        map.insert(
            "eta_mu_se".into(),
            json_num_opt(self.eta_mu.as_ref().map(|e| e.se)),
        );
        map.insert("r2_pred".into(), json_num_opt(self.r2_pred));
        map.insert("compression".into(), json_num_opt(self.compression));
        map.insert(
            "flags".into(),
            serde_json::Value::Array(
                self.flags
                    .iter()
                    .map(|f| serde_json::Value::String(f.clone()))
                    .collect(),
            ),
        );
        map.insert(
            "errors".into(),
            serde_json::to_value(&self.errors).unwrap_or(serde_json::Value::Null),
        );
        map.insert("n_units".into(), serde_json::Value::from(self.n_units));
        map.insert("n_periods".into(), serde_json::Value::from(self.n_periods));
        serde_json::Value::Object(map)
    }
}
