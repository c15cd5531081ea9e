//! Synthetic-data engine: the actual-outcome generator, the prediction
//! synthesizer, per-cell statistics, the full parameter-grid sweep, and
//! plot-ready figure tables.
//!
//! Actual outcomes are drawn once per grid run and held fixed; each cell
//! redraws only its prediction noise from a cell-indexed seed, so a grid is
//! bit-reproducible from (params, grid spec, base seed).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eta::{compression_ratio, prediction_r2};
use crate::jsonfmt::fmt_sig12;
use crate::panel::{center_panel, make_deltas, PanelDataset, PanelRecord, UnitId};
use crate::regress::{derive_seed, ols_no_intercept, ols_with_intercept, within_regression};

/// Distribution of the unit effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MuDistribution {
    /// (alpha + mu) is log-normal with arithmetic mean alpha and SD sd_mu;
    /// mimics the fat-tailed between-unit outcomes of real settings.
    LognormalShifted,
    Normal,
}

/// Parameters of the actual-outcome generator.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DgpParams {
    pub alpha: f64,
    pub sd_mu: f64,
    pub sd_eps: f64,
    pub gamma: f64,
    pub p_treat: f64,
    pub n_units: usize,
    pub n_periods: u32,
    pub treatment_fixed_within_unit: bool,
    pub mu_distribution: MuDistribution,
}

impl Default for DgpParams {
    fn default() -> Self {
        DgpParams {
            alpha: 3200.0,
            sd_mu: 1400.0,
            sd_eps: 600.0,
            gamma: 200.0,
            p_treat: 0.5,
            n_units: 10_000,
            n_periods: 2,
            treatment_fixed_within_unit: true,
            mu_distribution: MuDistribution::LognormalShifted,
        }
    }
}

impl DgpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sd_mu >= 0.0 && self.sd_eps >= 0.0) {
            return Err(Error::Validation(
                "sd_mu and sd_eps must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_treat) {
            return Err(Error::Validation(format!(
                "p_treat must lie in [0, 1], got {}",
                self.p_treat
            )));
        }
        if self.n_units < 2 {
            return Err(Error::Validation("n_units must be at least 2".into()));
        }
        if self.n_periods < 2 {
            return Err(Error::Validation("n_periods must be at least 2".into()));
        }
        if self.mu_distribution == MuDistribution::LognormalShifted && self.alpha <= 0.0 {
            return Err(Error::Validation(format!(
                "the log-normal unit-effect distribution needs alpha > 0, got {}; \
                 use the normal distribution for non-positive alpha",
                self.alpha
            )));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("sd_mu", self.sd_mu),
            ("sd_eps", self.sd_eps),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() {
                return Err(Error::Validation(format!("{name} must be finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Parameters of the prediction synthesizer.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct PredictionParams {
    pub eta_mu: f64,
    pub eta_t: f64,
    pub eta_eps: f64,
    /// Noise variance in squared outcome units.
    pub var_nu: f64,
}

impl PredictionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.var_nu >= 0.0 && self.var_nu.is_finite()) {
            return Err(Error::Validation(format!(
                "var_nu must be a non-negative finite variance, got {}",
                self.var_nu
            )));
        }
        for (name, v) in [
            ("eta_mu", self.eta_mu),
            ("eta_t", self.eta_t),
            ("eta_eps", self.eta_eps),
        ] {
            if !v.is_finite() {
                return Err(Error::Validation(format!("{name} must be finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// A simulated actual-outcome panel together with the hidden components the
/// prediction synthesizer reuses. Predictions are left unset here.
#[derive(Debug, Clone)]
pub struct ActualComponents {
    pub panel: PanelDataset,
    pub params: DgpParams,
    /// Per unit.
    pub mu: Vec<f64>,
    /// Record-aligned (unit-major, period order).
    pub eps: Vec<f64>,
}

/// Draw the actual-outcome panel: outcome = alpha + mu_i + gamma * treat + eps.
///
/// Under the log-normal option, (alpha + mu_i) is drawn with log-space
/// parameters sigma^2 = ln(1 + (sd_mu/alpha)^2) and location
/// ln(alpha) - sigma^2/2, so the arithmetic mean is alpha and the arithmetic
/// SD is sd_mu. Deterministic given the seed.
pub fn simulate_actual(params: &DgpParams, seed: u64) -> Result<ActualComponents> {
    params.validate()?;
    let n = params.n_units;
    let t = params.n_periods as usize;

    let mut rng_mu = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mu: Vec<f64> = if params.sd_mu == 0.0 {
        // both distributions degenerate to a point mass; exp(ln(alpha)) would
        // leave rounding residue, so short-circuit to exact zeros
        vec![0.0; n]
    } else {
        match params.mu_distribution {
            MuDistribution::LognormalShifted => {
                let sigma2 = (1.0 + (params.sd_mu / params.alpha).powi(2)).ln();
                let location = params.alpha.ln() - sigma2 / 2.0;
                let dist = LogNormal::new(location, sigma2.sqrt()).map_err(|e| {
                    Error::Validation(format!("log-normal parameters invalid: {e}"))
                })?;
                (0..n)
                    .map(|_| dist.sample(&mut rng_mu) - params.alpha)
                    .collect()
            }
            MuDistribution::Normal => {
                let dist = Normal::new(0.0, params.sd_mu)
                    .map_err(|e| Error::Validation(format!("normal parameters invalid: {e}")))?;
                (0..n).map(|_| dist.sample(&mut rng_mu)).collect()
            }
        }
    };

    let mut rng_treat = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let bern = Bernoulli::new(params.p_treat)
        .map_err(|e| Error::Validation(format!("p_treat invalid: {e}")))?;
    let treat: Vec<bool> = if params.treatment_fixed_within_unit {
        (0..n)
            .flat_map(|_| {
                let b = bern.sample(&mut rng_treat);
                std::iter::repeat_n(b, t)
            })
            .collect()
    } else {
        (0..n * t).map(|_| bern.sample(&mut rng_treat)).collect()
    };

    let mut rng_eps = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let eps_dist = Normal::new(0.0, params.sd_eps)
        .map_err(|e| Error::Validation(format!("sd_eps invalid: {e}")))?;
    let eps: Vec<f64> = (0..n * t).map(|_| eps_dist.sample(&mut rng_eps)).collect();

    let mut records = Vec::with_capacity(n * t);
    for (u, &mu_u) in mu.iter().enumerate() {
        for period in 0..t {
            let idx = u * t + period;
            let treated = treat[idx];
            let actual =
                params.alpha + mu_u + params.gamma * if treated { 1.0 } else { 0.0 } + eps[idx];
            records.push(PanelRecord {
                unit: UnitId(u as u32),
                period: period as u32 + 1,
                treated,
                actual: Some(actual),
                predicted: None,
            });
        }
    }
    let panel = PanelDataset::from_synthetic(records, n, params.n_periods);
    Ok(ActualComponents {
        panel,
        params: *params,
        mu,
        eps,
    })
}

/// Fill predictions from the hidden components:
/// predicted = alpha + eta_mu * mu + eta_t * gamma * treat + eta_eps * eps + nu.
///
/// The actual outcomes are untouched; only nu is redrawn per call.
pub fn simulate_predicted(
    base: &ActualComponents,
    pp: &PredictionParams,
    seed: u64,
) -> Result<PanelDataset> {
    pp.validate()?;
    let t = base.params.n_periods as usize;
    let sd_nu = pp.var_nu.sqrt();
    let mut rng_nu = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4));
    let nu_dist =
        Normal::new(0.0, sd_nu).map_err(|e| Error::Validation(format!("var_nu invalid: {e}")))?;

    let mut panel = base.panel.clone();
    let mut predicted = Vec::with_capacity(panel.n_records());
    {
        let records = panel.records();
        for (idx, r) in records.iter().enumerate() {
            let u = idx / t;
            let nu = if pp.var_nu > 0.0 {
                nu_dist.sample(&mut rng_nu)
            } else {
                0.0
            };
            let value = base.params.alpha
                + pp.eta_mu * base.mu[u]
                + pp.eta_t * base.params.gamma * if r.treated { 1.0 } else { 0.0 }
                + pp.eta_eps * base.eps[idx]
                + nu;
            predicted.push(value);
        }
    }
    panel.set_predicted(&predicted);
    Ok(panel)
}

/// Per-simulation statistics block. Fields that could not be computed hold
/// NaN and contribute an explanatory entry to `flags`.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationStats {
    pub params: PredictionParams,
    pub seed: u64,
    /// Pooled prediction R-squared (squared correlation of predicted with actual).
    pub r2_pred: f64,
    /// Diff-vs-diff slope (T = 2) or within slope (T > 2).
    pub diff_slope: f64,
    pub diff_r2: f64,
    /// SD(predicted) / SD(actual).
    pub compression: f64,
    /// Share of actual-outcome variance carried by persistent unit effects.
    pub fe_var_share: f64,
    /// Treatment-effect slope on actual outcomes.
    pub te_actual: f64,
    /// Treatment-effect slope on predicted outcomes.
    pub te_predicted: f64,
    /// te_predicted / te_actual.
    pub scaled_te: f64,
    /// t-statistic of the predicted-outcome treatment regression.
    pub t_stat_predicted: f64,
    pub flags: Vec<String>,
}

/// Share of actual-outcome variance attributable to persistent unit effects.
///
/// The raw between-unit variance of unit means also carries the averaged
/// time-noise (sd_eps^2 / T); that part is removed with the standard
/// analysis-of-variance correction before taking the share, then the result
/// is clamped to [0, 1].
pub fn fe_var_share(data: &PanelDataset) -> Result<f64> {
    let t = data.n_periods();
    if t < 2 {
        return Err(Error::InsufficientPeriods {
            required: 2,
            found: t,
        });
    }
    let mut unit_means = Vec::new();
    let mut all = Vec::new();
    let mut centered_sq = 0.0;
    for u in data.unit_ids() {
        if !data.is_actual_complete(u) {
            continue;
        }
        let recs = data.unit_records(u);
        let mean = recs.iter().map(|r| r.actual.unwrap()).sum::<f64>() / recs.len() as f64;
        unit_means.push(mean);
        for r in recs {
            let a = r.actual.unwrap();
            all.push(a);
            centered_sq += (a - mean) * (a - mean);
        }
    }
    if unit_means.len() < 2 {
        return Err(Error::Validation(
            "fe_var_share needs at least 2 units with complete actual outcomes".into(),
        ));
    }
    let pop_var = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
    };
    let between = pop_var(&unit_means);
    let total = pop_var(&all);
    if total <= 0.0 {
        return Err(Error::DegenerateRegressor(
            "actual outcomes have zero variance".into(),
        ));
    }
    let tf = t as f64;
    let sigma2_eps = (centered_sq / all.len() as f64) * tf / (tf - 1.0);
    Ok(((between - sigma2_eps / tf) / total).clamp(0.0, 1.0))
}

/// Compute the full statistics block for one simulated panel.
///
/// Degenerate regressions set their fields to NaN and add a flag; the grid
/// sweep is never aborted by a single pathological cell.
pub fn compute_stats(data: &PanelDataset, params: &PredictionParams, seed: u64) -> SimulationStats {
    let mut flags = Vec::new();

    let r2_pred = match prediction_r2(data) {
        Ok(v) => v,
        Err(e) => {
            flags.push(format!("r2_pred: {e}"));
            f64::NAN
        }
    };

    let diff = if data.n_periods() == 2 {
        make_deltas(data).and_then(|deltas| {
            let dx: Vec<f64> = deltas.iter().map(|d| d.delta_actual).collect();
            let dy: Vec<f64> = deltas.iter().map(|d| d.delta_predicted).collect();
            ols_no_intercept(&dx, &dy)
        })
    } else {
        center_panel(data).and_then(|obs| within_regression(&obs))
    };
    let (diff_slope, diff_r2) = match diff {
        Ok(r) => (r.slope, r.r_squared),
        Err(e) => {
            flags.push(format!("diff_slope: {e}"));
            (f64::NAN, f64::NAN)
        }
    };

    let compression = match compression_ratio(data) {
        Ok(v) => v,
        Err(e) => {
            flags.push(format!("compression: {e}"));
            f64::NAN
        }
    };

    let fe_share = match fe_var_share(data) {
        Ok(v) => v,
        Err(e) => {
            flags.push(format!("fe_var_share: {e}"));
            f64::NAN
        }
    };

    let treatment_reg = |select: fn(&PanelRecord) -> Option<f64>| {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for r in data.records() {
            if let Some(v) = select(r) {
                x.push(if r.treated { 1.0 } else { 0.0 });
                y.push(v);
            }
        }
        ols_with_intercept(&x, &y)
    };
    let te_actual = match treatment_reg(|r| r.actual) {
        Ok(r) => r.slope,
        Err(e) => {
            flags.push(format!("te_actual: {e}"));
            f64::NAN
        }
    };
    let (te_predicted, t_stat_predicted) = match treatment_reg(|r| r.predicted) {
        Ok(r) => {
            let t = r.t_stat.unwrap_or_else(|| {
                flags.push("t_stat_predicted: undefined (zero slope standard error)".into());
                f64::NAN
            });
            (r.slope, t)
        }
        Err(e) => {
            flags.push(format!("te_predicted: {e}"));
            (f64::NAN, f64::NAN)
        }
    };

    let actual_sd = {
        let vals: Vec<f64> = data.records().iter().filter_map(|r| r.actual).collect();
        let m = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
        (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len().max(1) as f64).sqrt()
    };
    let scaled_te = if te_actual.is_finite() && te_actual.abs() > 1e-9 * actual_sd.max(1e-300) {
        te_predicted / te_actual
    } else {
        if te_actual.is_finite() {
            flags.push("scaled_te: te_actual below precision floor".into());
        }
        f64::NAN
    };

    SimulationStats {
        params: *params,
        seed,
        r2_pred,
        diff_slope,
        diff_r2,
        compression,
        fe_var_share: fe_share,
        te_actual,
        te_predicted,
        scaled_te,
        t_stat_predicted,
        flags,
    }
}

/// Parameter grid: eta values 0..=1 in `eta_step` increments for each of
/// eta_mu, eta_t, eta_eps, crossed with five noise-variance values evenly
/// spaced on 0..=nu_max.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub eta_step: f64,
    pub nu_max: f64,
    /// Interpret the noise grid values as SD(nu) instead of Var(nu).
    pub nu_grid_is_sd: bool,
    /// Independent prediction draws per cell.
    pub n_reps: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            eta_step: 0.25,
            nu_max: 1000.0,
            nu_grid_is_sd: false,
            n_reps: 1,
        }
    }
}

impl GridSpec {
    pub fn eta_values(&self) -> Vec<f64> {
        let steps = (1.0 / self.eta_step + 1e-9).floor() as usize;
        (0..=steps).map(|i| i as f64 * self.eta_step).collect()
    }

    pub fn nu_values(&self) -> Vec<f64> {
        if self.nu_max <= 0.0 {
            return vec![0.0];
        }
        (0..=4).map(|i| i as f64 * self.nu_max / 4.0).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_step > 0.0 && self.eta_step <= 1.0) {
            return Err(Error::Validation(format!(
                "eta_step must lie in (0, 1], got {}",
                self.eta_step
            )));
        }
        if !(self.nu_max >= 0.0 && self.nu_max.is_finite()) {
            return Err(Error::Validation(format!(
                "nu_max must be non-negative, got {}",
                self.nu_max
            )));
        }
        if self.n_reps == 0 {
            return Err(Error::Validation("n_reps must be at least 1".into()));
        }
        Ok(())
    }

    /// Cell parameter sets in output order.
    pub fn cells(&self) -> Vec<PredictionParams> {
        let etas = self.eta_values();
        let nus = self.nu_values();
        let mut out = Vec::with_capacity(etas.len().pow(3) * nus.len());
        for &eta_mu in &etas {
            for &eta_t in &etas {
                for &eta_eps in &etas {
                    for &nu in &nus {
                        let var_nu = if self.nu_grid_is_sd { nu * nu } else { nu };
                        out.push(PredictionParams {
                            eta_mu,
                            eta_t,
                            eta_eps,
                            var_nu,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Output of a grid sweep.
#[derive(Debug, Clone)]
pub struct GridTable {
    pub rows: Vec<SimulationStats>,
    /// Fixed-effect variance share realized by the shared actual panel.
    pub realized_fe_var_share: f64,
    /// Set when the realized share diverges from the 0.92 calibration target
    /// commonly quoted for the default parameters.
    pub calibration_note: Option<String>,
}

/// Variance-share target the default parameters are often said to hit.
pub const FE_SHARE_CALIBRATION_TARGET: f64 = 0.92;

pub(crate) fn calibration_note_for(realized: f64) -> Option<String> {
    if (realized - FE_SHARE_CALIBRATION_TARGET).abs() > 0.02 {
        Some(format!(
            "realized fixed-effect variance share is {realized:.3}, not the \
             {FE_SHARE_CALIBRATION_TARGET} calibration target quoted for these defaults; \
             component scales of 1400 (between) and 600 (within) imply a share near 0.845"
        ))
    } else {
        None
    }
}

/// Sweep the full cartesian grid over one shared actual-outcome panel.
///
/// Cells run in parallel; row order and all values depend only on
/// (dgp, grid, base_seed).
pub fn run_grid(dgp: &DgpParams, grid: &GridSpec, base_seed: u64) -> Result<GridTable> {
    grid.validate()?;
    let base = simulate_actual(dgp, base_seed)?;
    let cells = grid.cells();

    let mut jobs = Vec::with_capacity(cells.len() * grid.n_reps);
    for params in &cells {
        for _rep in 0..grid.n_reps {
            let cell_seed = derive_seed(base_seed, 1000 + jobs.len() as u64);
            jobs.push((*params, cell_seed));
        }
    }

    let rows: Vec<SimulationStats> = jobs
        .par_iter()
        .map(|(params, cell_seed)| {
            let panel = simulate_predicted(&base, params, *cell_seed)?;
            Ok(compute_stats(&panel, params, *cell_seed))
        })
        .collect::<Result<Vec<_>>>()?;

    let realized = fe_var_share(&base.panel)?;
    Ok(GridTable {
        rows,
        realized_fe_var_share: realized,
        calibration_note: calibration_note_for(realized),
    })
}

/// The six figure layouts reproduced from the grid table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureId {
    /// Prediction R2 vs scaled treatment effect, colored by eta_t.
    F1,
    /// eta_mu vs prediction R2.
    F2,
    /// eta_eps vs prediction R2.
    F3,
    /// Prediction R2 vs treatment t-statistic (extreme |t| removed).
    F4,
    /// Diff slope vs scaled treatment effect, restricted to eta_t = eta_eps.
    F5,
    /// Diff slope vs scaled treatment effect, all cells.
    F6,
}

impl FigureId {
    pub const ALL: [FigureId; 6] = [
        FigureId::F1,
        FigureId::F2,
        FigureId::F3,
        FigureId::F4,
        FigureId::F5,
        FigureId::F6,
    ];

    pub fn file_name(&self) -> &'static str {
        match self {
            FigureId::F1 => "fig1.csv",
            FigureId::F2 => "fig2.csv",
            FigureId::F3 => "fig3.csv",
            FigureId::F4 => "fig4.csv",
            FigureId::F5 => "fig5.csv",
            FigureId::F6 => "fig6.csv",
        }
    }
}

impl std::str::FromStr for FigureId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f1" | "1" => Ok(FigureId::F1),
            "f2" | "2" => Ok(FigureId::F2),
            "f3" | "3" => Ok(FigureId::F3),
            "f4" | "4" => Ok(FigureId::F4),
            "f5" | "5" => Ok(FigureId::F5),
            "f6" | "6" => Ok(FigureId::F6),
            other => Err(Error::Validation(format!("unknown figure id '{other}'"))),
        }
    }
}

/// Cells with |t| above this are dropped from the F4 scatter.
pub const T_STAT_OUTLIER_CUTOFF: f64 = 50.0;

#[derive(Debug, Clone, Copy)]
pub struct FigPoint {
    pub x: f64,
    pub y: f64,
    pub color: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct TrendLine {
    pub slope: f64,
    pub intercept: f64,
}

/// Plot-ready table for one figure.
#[derive(Debug, Clone)]
pub struct FigureData {
    pub figure: FigureId,
    pub points: Vec<FigPoint>,
    pub trendline: Option<TrendLine>,
    /// y = x guide, emitted where the figure calls for it.
    pub reference: Option<TrendLine>,
}

/// Extract the (x, y, color) columns and OLS trendline for one figure.
pub fn figure_data(rows: &[SimulationStats], figure: FigureId) -> FigureData {
    let eq = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let mut points: Vec<FigPoint> = rows
        .iter()
        .filter_map(|r| match figure {
            FigureId::F1 => Some(FigPoint {
                x: r.r2_pred,
                y: r.scaled_te,
                color: Some(r.params.eta_t),
            }),
            FigureId::F2 => Some(FigPoint {
                x: r.params.eta_mu,
                y: r.r2_pred,
                color: None,
            }),
            FigureId::F3 => Some(FigPoint {
                x: r.params.eta_eps,
                y: r.r2_pred,
                color: None,
            }),
            FigureId::F4 => {
                (r.t_stat_predicted.abs() <= T_STAT_OUTLIER_CUTOFF).then_some(FigPoint {
                    x: r.r2_pred,
                    y: r.t_stat_predicted,
                    color: Some(r.params.eta_t),
                })
            }
            FigureId::F5 => eq(r.params.eta_t, r.params.eta_eps).then_some(FigPoint {
                x: r.diff_slope,
                y: r.scaled_te,
                color: Some(r.params.eta_t),
            }),
            FigureId::F6 => Some(FigPoint {
                x: r.diff_slope,
                y: r.scaled_te,
                color: Some(r.params.eta_t),
            }),
        })
        .collect();
    points.retain(|p| p.x.is_finite() && p.y.is_finite());

    let trendline = if points.len() >= 3 {
        let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
        ols_with_intercept(&xs, &ys).ok().map(|r| TrendLine {
            slope: r.slope,
            intercept: r.intercept,
        })
    } else {
        None
    };
    let reference = (figure == FigureId::F5).then_some(TrendLine {
        slope: 1.0,
        intercept: 0.0,
    });

    FigureData {
        figure,
        points,
        trendline,
        reference,
    }
}

const GRID_HEADER: [&str; 15] = [
    "eta_mu",
    "eta_t",
    "eta_epsilon",
    "var_nu",
    "seed",
    "r2_pred",
    "diff_slope",
    "diff_r2",
    "compression",
    "fe_var_share",
    "te_actual",
    "te_predicted",
    "scaled_te",
    "t_stat_predicted",
    "flags",
];

/// Write the grid table: one row per cell, numeric cells at 12 significant
/// digits, NaN as an empty cell.
pub fn write_grid_csv<W: std::io::Write>(writer: W, rows: &[SimulationStats]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    w.write_record(GRID_HEADER)?;
    for r in rows {
        w.write_record([
            fmt_sig12(r.params.eta_mu),
            fmt_sig12(r.params.eta_t),
            fmt_sig12(r.params.eta_eps),
            fmt_sig12(r.params.var_nu),
            r.seed.to_string(),
            fmt_sig12(r.r2_pred),
            fmt_sig12(r.diff_slope),
            fmt_sig12(r.diff_r2),
            fmt_sig12(r.compression),
            fmt_sig12(r.fe_var_share),
            fmt_sig12(r.te_actual),
            fmt_sig12(r.te_predicted),
            fmt_sig12(r.scaled_te),
            fmt_sig12(r.t_stat_predicted),
            r.flags.join("; "),
        ])?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// Read a grid table back (for the figure command).
pub fn read_grid_csv<R: std::io::Read>(reader: R) -> Result<Vec<SimulationStats>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = r.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let idx: Vec<usize> = GRID_HEADER.iter().map(|h| col(h)).collect::<Result<_>>()?;

    let parse_f = |s: &str, row: usize, name: &str| -> Result<f64> {
        let t = s.trim();
        if t.is_empty() {
            return Ok(f64::NAN);
        }
        t.parse::<f64>().map_err(|_| Error::Parse {
            row,
            column: name.to_string(),
            message: format!("unparseable numeric cell '{s}'"),
        })
    };

    let mut out = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let get = |j: usize| record.get(idx[j]).unwrap_or("");
        let f = |j: usize| parse_f(get(j), row, GRID_HEADER[j]);
        let seed: u64 = get(4).trim().parse().map_err(|_| Error::Parse {
            row,
            column: "seed".into(),
            message: format!("unparseable seed '{}'", get(4)),
        })?;
        let flags: Vec<String> = if get(14).trim().is_empty() {
            Vec::new()
        } else {
            get(14).split("; ").map(str::to_string).collect()
        };
        out.push(SimulationStats {
            params: PredictionParams {
                eta_mu: f(0)?,
                eta_t: f(1)?,
                eta_eps: f(2)?,
                var_nu: f(3)?,
            },
            seed,
            r2_pred: f(5)?,
            diff_slope: f(6)?,
            diff_r2: f(7)?,
            compression: f(8)?,
            fe_var_share: f(9)?,
            te_actual: f(10)?,
            te_predicted: f(11)?,
            scaled_te: f(12)?,
            t_stat_predicted: f(13)?,
            flags,
        });
    }
    Ok(out)
}

/// Write one figure table: scatter rows plus trendline/reference rows that
/// carry slope and intercept.
pub fn write_figure_csv<W: std::io::Write>(writer: W, fig: &FigureData) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    w.write_record(["series", "x", "y", "color", "slope", "intercept"])?;
    for p in &fig.points {
        w.write_record([
            "points".to_string(),
            fmt_sig12(p.x),
            fmt_sig12(p.y),
            p.color.map(fmt_sig12).unwrap_or_default(),
            String::new(),
            String::new(),
        ])?;
    }
    if let Some(t) = &fig.trendline {
        w.write_record([
            "trendline".to_string(),
            String::new(),
            String::new(),
            String::new(),
            fmt_sig12(t.slope),
            fmt_sig12(t.intercept),
        ])?;
    }
    if let Some(t) = &fig.reference {
        w.write_record([
            "reference".to_string(),
            String::new(),
            String::new(),
            String::new(),
            fmt_sig12(t.slope),
            fmt_sig12(t.intercept),
        ])?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}
