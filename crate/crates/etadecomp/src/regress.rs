//! Minimal regression core shared by all estimators: no-intercept OLS,
//! intercept OLS, the unit-fixed-effects (within) regression, and the
//! cluster bootstrap.
//!
//! All regressions are pure functions of their inputs. Bootstrap replicates
//! derive their RNG stream from seed + replicate index, so results are
//! independent of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::panel::{CenteredObservation, PanelDataset};

/// Output of a bivariate regression.
///
/// `t_stat` is `None` when the slope standard error is zero (exact fits),
/// where the ratio is undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionResult {
    pub slope: f64,
    /// Zero when the model suppresses the intercept.
    pub intercept: f64,
    pub slope_se: f64,
    pub r_squared: f64,
    pub n_obs: usize,
    pub t_stat: Option<f64>,
}

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(())
}

fn finish(
    slope: f64,
    intercept: f64,
    sxx: f64,
    ssr: f64,
    tss: f64,
    df: f64,
    n: usize,
) -> RegressionResult {
    let sigma2 = if df > 0.0 { ssr / df } else { f64::NAN };
    let slope_se = (sigma2 / sxx).sqrt();
    let r_squared = if tss > 0.0 {
        (1.0 - ssr / tss).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let t_stat = (slope_se > 0.0).then(|| slope / slope_se);
    RegressionResult {
        slope,
        intercept,
        slope_se,
        r_squared,
        n_obs: n,
        t_stat,
    }
}

/// Through-origin OLS of `y` on `x`: slope = Σxy / Σx².
///
/// The reported R² is the uncentered version, 1 − SSR/Σy², the standard
/// definition for regression through the origin.
pub fn ols_no_intercept(x: &[f64], y: &[f64]) -> Result<RegressionResult> {
    check_lengths(x, y)?;
    let n = x.len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "no-intercept OLS needs at least 2 observations, got {n}"
        )));
    }
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateRegressor(
            "regressor has zero sum of squares".into(),
        ));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let slope = sxy / sxx;
    let ssr: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - slope * a;
            e * e
        })
        .sum();
    let tss: f64 = y.iter().map(|v| v * v).sum();
    Ok(finish(slope, 0.0, sxx, ssr, tss, (n - 1) as f64, n))
}

/// Classical bivariate OLS with intercept.
pub fn ols_with_intercept(x: &[f64], y: &[f64]) -> Result<RegressionResult> {
    check_lengths(x, y)?;
    let n = x.len();
    if n < 3 {
        return Err(Error::Validation(format!(
            "OLS with intercept needs at least 3 observations, got {n}"
        )));
    }
    let nf = n as f64;
    let mean_x = x.iter().sum::<f64>() / nf;
    let mean_y = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mean_x) * (v - mean_x)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateRegressor(
            "regressor has zero variance".into(),
        ));
    }
    let sxy: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mean_x) * (b - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ssr: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - intercept - slope * a;
            e * e
        })
        .sum();
    let tss: f64 = y.iter().map(|v| (v - mean_y) * (v - mean_y)).sum();
    Ok(finish(slope, intercept, sxx, ssr, tss, (n - 2) as f64, n))
}

/// Within (unit-fixed-effects) regression of centered predicted on centered
/// actual outcomes.
///
/// The slope is through-origin OLS on the centered series; the standard error
/// uses the within-estimator degrees of freedom n_obs − n_units − 1.
pub fn within_regression(obs: &[CenteredObservation]) -> Result<RegressionResult> {
    let mut unit_counts: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
    for o in obs {
        *unit_counts.entry(o.unit_id.0).or_insert(0) += 1;
    }
    let n_units = unit_counts.len();
    if n_units < 2 {
        return Err(Error::Validation(format!(
            "within regression needs at least 2 units, got {n_units}"
        )));
    }
    if let Some((u, c)) = unit_counts.iter().find(|(_, &c)| c < 2) {
        return Err(Error::Validation(format!(
            "within regression needs at least 2 periods per unit; unit index {u} has {c}"
        )));
    }
    let n = obs.len();
    let sxx: f64 = obs
        .iter()
        .map(|o| o.centered_actual * o.centered_actual)
        .sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateRegressor(
            "centered actual outcomes have zero within-unit variation".into(),
        ));
    }
    let sxy: f64 = obs
        .iter()
        .map(|o| o.centered_actual * o.centered_predicted)
        .sum();
    let slope = sxy / sxx;
    let ssr: f64 = obs
        .iter()
        .map(|o| {
            let e = o.centered_predicted - slope * o.centered_actual;
            e * e
        })
        .sum();
    let tss: f64 = obs
        .iter()
        .map(|o| o.centered_predicted * o.centered_predicted)
        .sum();
    let df = (n - n_units - 1) as f64;
    Ok(finish(slope, 0.0, sxx, ssr, tss, df, n))
}

/// Within-unit slope of `y` on `x` for arbitrary record-aligned series,
/// demeaning both by unit. Used by the treatment-effect estimator when
/// treatment varies within units.
pub(crate) fn fe_slope_xy(
    data: &PanelDataset,
    values: &[(f64, f64)],
    units: &[u32],
) -> Result<f64> {
    debug_assert_eq!(values.len(), units.len());
    let n_units = data.n_units();
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); n_units];
    for (&(x, y), &u) in values.iter().zip(units) {
        let s = &mut sums[u as usize];
        s.0 += x;
        s.1 += y;
        s.2 += 1;
    }
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&(x, y), &u) in values.iter().zip(units) {
        let (sx, sy, c) = sums[u as usize];
        if c < 2 {
            continue;
        }
        let cx = x - sx / c as f64;
        let cy = y - sy / c as f64;
        sxx += cx * cx;
        sxy += cx * cy;
    }
    if sxx <= 0.0 {
        return Err(Error::DegenerateRegressor(
            "regressor has zero within-unit variation".into(),
        ));
    }
    Ok(sxy / sxx)
}

/// Cluster-bootstrap configuration. The default matches the estimators'
/// documented behavior: 1,000 replicates, seed 42.
#[derive(Debug, Clone, Copy)]
pub struct BootstrapConfig {
    pub n_replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_replicates: 1000,
            seed: 42,
        }
    }
}

/// Bootstrap point estimate and standard error.
#[derive(Debug, Clone, Copy)]
pub struct BootstrapResult {
    pub point: f64,
    pub se: f64,
    pub n_replicates: usize,
    pub seed: u64,
}

/// One splitmix64 round; gives well-separated per-replicate seeds.
pub(crate) fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Cluster bootstrap: resample whole units with replacement and report the
/// standard deviation of the replicate statistics.
///
/// Replicates run in parallel; the outcome depends only on (data, statistic,
/// config). Fails if the statistic errors on more than 5% of replicates.
pub fn cluster_bootstrap<F>(
    data: &PanelDataset,
    statistic: F,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult>
where
    F: Fn(&PanelDataset) -> Result<f64> + Sync,
{
    if cfg.n_replicates < 100 {
        return Err(Error::Validation(format!(
            "bootstrap needs at least 100 replicates, got {}",
            cfg.n_replicates
        )));
    }
    let n_units = data.n_units();
    if n_units < 2 {
        return Err(Error::Validation(
            "bootstrap needs at least 2 units to resample".into(),
        ));
    }
    let point = statistic(data)?;

    let replicates: Vec<Option<f64>> = (0..cfg.n_replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, rep as u64 + 1));
            let indices: Vec<u32> = (0..n_units)
                .map(|_| rng.random_range(0..n_units) as u32)
                .collect();
            let resampled = data.resample_units(&indices);
            statistic(&resampled).ok()
        })
        .collect();

    let failed = replicates.iter().filter(|r| r.is_none()).count();
    if failed * 20 > cfg.n_replicates {
        return Err(Error::BootstrapInstability {
            failed,
            total: cfg.n_replicates,
        });
    }
    let values: Vec<f64> = replicates.into_iter().flatten().collect();
    if values.len() < 2 {
        return Err(Error::BootstrapInstability {
            failed,
            total: cfg.n_replicates,
        });
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
    Ok(BootstrapResult {
        point,
        se: var.sqrt(),
        n_replicates: cfg.n_replicates,
        seed: cfg.seed,
    })
}
