//! Command-line front end: ties ingestion, estimation, correction, and the
//! simulation grid into one workflow with structured outputs.
//!
//! Exit codes are a stable contract: 0 success, 2 input/validation error,
//! 3 estimation degeneracy. Failures also emit a machine-readable JSON line
//! on standard error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::{Error, Result};
use crate::eta::{
    correct_treatment_effect, diagnose_model, estimate_eta_epsilon, estimate_eta_mu,
    estimate_eta_t, EtaEstimate, EtaKind, EtaMethod,
};
use crate::jsonfmt::json_num;
use crate::panel::{load_panel_models, load_panel_path, PanelSchema};
use crate::regress::BootstrapConfig;
use crate::sim::{
    figure_data, read_grid_csv, run_grid, write_figure_csv, write_grid_csv, DgpParams, FigureId,
    GridSpec, MuDistribution,
};

#[derive(Parser, Debug)]
#[command(
    name = "etadecomp",
    version,
    about = "Panel diagnostics for ML-predicted outcomes: decomposition-coefficient \
             estimates, attenuation correction, and the synthetic simulation grid"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate eta_epsilon and eta_mu from a panel CSV (plus eta_t when the
    /// panel has treatment variation)
    Estimate(EstimateArgs),
    /// Rank candidate prediction models by within-unit fit
    Diagnose(DiagnoseArgs),
    /// Divide a raw treatment effect by an estimated eta_epsilon
    Correct(CorrectArgs),
    /// Run the synthetic parameter grid and write grid.csv
    Simulate(SimulateArgs),
    /// Derive fig1.csv..fig6.csv from an existing grid.csv
    Figures(FiguresArgs),
}

/// Column-name overrides shared by the panel-reading commands.
#[derive(Args, Debug, Clone)]
pub struct SchemaArgs {
    #[arg(long, default_value = "unit_id")]
    pub col_unit: String,
    #[arg(long, default_value = "period")]
    pub col_period: String,
    #[arg(long, default_value = "treated")]
    pub col_treated: String,
    #[arg(long, default_value = "actual_outcome")]
    pub col_actual: String,
    #[arg(long, default_value = "predicted_outcome")]
    pub col_predicted: String,
}

impl SchemaArgs {
    fn schema(&self) -> PanelSchema {
        PanelSchema {
            unit_id: self.col_unit.clone(),
            period: self.col_period.clone(),
            treated: self.col_treated.clone(),
            actual: self.col_actual.clone(),
            predicted: self.col_predicted.clone(),
        }
    }
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Panel CSV with unit, period, treated, and outcome columns
    #[arg(long)]
    pub input: PathBuf,
    /// Output JSON path; stdout when omitted
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, env = "ETADECOMP_SEED", default_value_t = 42)]
    pub seed: u64,
    /// Bootstrap replicates for eta_mu / eta_t standard errors
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[command(flatten)]
    pub schema: SchemaArgs,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    /// Panel CSV with one or more prediction columns
    /// (predicted_outcome or predicted_outcome_NAME)
    #[arg(long)]
    pub input: PathBuf,
    /// Output JSON path; stdout when omitted
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, env = "ETADECOMP_SEED", default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    /// Restrict the report to one model
    #[arg(long)]
    pub model: Option<String>,
    #[command(flatten)]
    pub schema: SchemaArgs,
}

#[derive(Args, Debug)]
pub struct CorrectArgs {
    /// Treatment effect estimated from predicted outcomes
    #[arg(long, allow_hyphen_values = true)]
    pub raw_effect: f64,
    /// Standard error of the raw effect
    #[arg(long)]
    pub raw_se: f64,
    /// Panel CSV from which to estimate eta_epsilon (untreated units only)
    #[arg(long, conflicts_with = "eta_eps_json")]
    pub input: Option<PathBuf>,
    /// Precomputed eta_epsilon JSON (as written by the estimate command)
    #[arg(long)]
    pub eta_eps_json: Option<PathBuf>,
    /// Output JSON path; stdout when omitted
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, env = "ETADECOMP_SEED", default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub schema: SchemaArgs,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Directory for grid.csv and summary.json
    #[arg(long, default_value = ".")]
    pub output: PathBuf,
    #[arg(long, env = "ETADECOMP_SEED", default_value_t = 42)]
    pub seed: u64,
    /// Units per simulated panel
    #[arg(long, default_value_t = 10_000)]
    pub n_units: usize,
    #[arg(long, default_value_t = 2)]
    pub n_periods: u32,
    #[arg(long, default_value_t = 3200.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1400.0)]
    pub sd_mu: f64,
    #[arg(long, default_value_t = 600.0)]
    pub sd_eps: f64,
    #[arg(long, default_value_t = 200.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub p_treat: f64,
    /// Draw unit effects from a normal instead of the shifted log-normal
    #[arg(long)]
    pub mu_normal: bool,
    /// Redraw the treatment flag every period instead of once per unit
    #[arg(long)]
    pub treatment_varies_within_unit: bool,
    /// Spacing of the eta grid on [0, 1]
    #[arg(long, default_value_t = 0.25)]
    pub grid_eta_step: f64,
    /// Upper end of the five-point prediction-noise grid
    #[arg(long, default_value_t = 1000.0)]
    pub grid_nu_max: f64,
    /// Interpret the noise grid as SD(nu) instead of Var(nu)
    #[arg(long)]
    pub nu_grid_is_sd: bool,
    /// Independent prediction draws per cell
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
}

#[derive(Args, Debug)]
pub struct FiguresArgs {
    /// grid.csv produced by the simulate command
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for fig1.csv .. fig6.csv
    #[arg(long, default_value = ".")]
    pub output: PathBuf,
}

/// Run a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Correct(args) => cmd_correct(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Figures(args) => cmd_figures(args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            let payload = json!({
                "error": err.to_string(),
                "kind": err.kind(),
                "exit_code": err.exit_code(),
            });
            eprintln!("{payload}");
            err.exit_code()
        }
    }
}

fn write_json(output: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = format!("{:#}\n", value);
    match output {
        Some(path) => {
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    fs::create_dir_all(dir)?;
                }
            }
            fs::write(path, text)?;
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn estimate_json(est: &EtaEstimate) -> (serde_json::Value, serde_json::Value) {
    (json_num(est.value), json_num(est.se))
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let schema = args.schema.schema();
    let data = load_panel_path(&args.input, &schema)?;
    let bootstrap = BootstrapConfig {
        n_replicates: args.bootstrap,
        seed: args.seed,
    };

    let untreated = data.untreated_subsample();
    let eps = estimate_eta_epsilon(&untreated)?;
    let mu = estimate_eta_mu(&untreated, &bootstrap)?;
    let eta_t = if data.any_treated() {
        Some(estimate_eta_t(&data, &bootstrap)?)
    } else {
        None
    };

    let mut warnings = Vec::new();
    for est in [Some(&eps), Some(&mu), eta_t.as_ref()]
        .into_iter()
        .flatten()
    {
        if let Some(w) = est.range_warning() {
            warnings.push(w);
        }
    }

    let (eps_v, eps_se) = estimate_json(&eps);
    let (mu_v, mu_se) = estimate_json(&mu);
    let mut out = serde_json::Map::new();
    out.insert("eta_epsilon".into(), eps_v);
    out.insert("eta_epsilon_se".into(), eps_se);
    out.insert("eta_mu".into(), mu_v);
    out.insert("eta_mu_se".into(), mu_se);
    if let Some(t) = &eta_t {
        let (v, se) = estimate_json(t);
        out.insert("eta_t".into(), v);
        out.insert("eta_t_se".into(), se);
    }
    out.insert("n_units".into(), serde_json::Value::from(eps.n_units));
    out.insert(
        "n_periods".into(),
        serde_json::Value::from(data.n_periods()),
    );
    out.insert("data_quality".into(), serde_json::to_value(data.quality())?);
    out.insert(
        "warnings".into(),
        serde_json::Value::Array(
            warnings
                .into_iter()
                .map(serde_json::Value::String)
                .collect(),
        ),
    );
    write_json(args.output.as_deref(), &serde_json::Value::Object(out))
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<()> {
    let schema = args.schema.schema();
    let multi = load_panel_models(fs::File::open(&args.input)?, &schema)?;
    let bootstrap = BootstrapConfig {
        n_replicates: args.bootstrap,
        seed: args.seed,
    };

    let mut reports = Vec::new();
    for (name, panel) in multi.model_names.iter().zip(&multi.panels) {
        if let Some(only) = &args.model {
            if name != only {
                continue;
            }
        }
        let untreated = panel.untreated_subsample();
        let report = diagnose_model(&untreated, &bootstrap);
        reports.push((name.clone(), report));
    }
    if reports.is_empty() {
        return Err(Error::Validation(match &args.model {
            Some(m) => format!("model '{m}' not found in the input columns"),
            None => "no prediction models found".into(),
        }));
    }

    // rank by estimated within-unit fit, unestimable models last
    reports.sort_by(|(_, a), (_, b)| {
        let key = |r: &crate::eta::DiagnosticReport| {
            r.eta_epsilon
                .as_ref()
                .map(|e| e.value)
                .unwrap_or(f64::NEG_INFINITY)
        };
        key(b)
            .partial_cmp(&key(a))
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let models: Vec<serde_json::Value> = reports
        .iter()
        .enumerate()
        .map(|(rank, (name, report))| {
            let mut obj = report.to_json();
            let map = obj.as_object_mut().unwrap();
            map.insert("model".into(), serde_json::Value::String(name.clone()));
            map.insert("rank".into(), serde_json::Value::from(rank + 1));
            obj
        })
        .collect();
    write_json(
        args.output.as_deref(),
        &json!({ "models": serde_json::Value::Array(models) }),
    )
}

fn eta_eps_from_json(path: &Path) -> Result<EtaEstimate> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let get = |key: &str| value.get(key).and_then(|v| v.as_f64());
    let point = get("eta_epsilon").ok_or_else(|| {
        Error::Validation(format!(
            "{} has no numeric 'eta_epsilon' field",
            path.display()
        ))
    })?;
    let se = get("eta_epsilon_se").unwrap_or(0.0);
    let n_units = value.get("n_units").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
    let n_periods = value.get("n_periods").and_then(|v| v.as_u64()).unwrap_or(2) as u32;
    Ok(EtaEstimate {
        which: EtaKind::EtaEpsilon,
        value: point,
        se,
        method: if n_periods > 2 {
            EtaMethod::FeSlope
        } else {
            EtaMethod::DiffSlope
        },
        n_units,
        n_periods,
    })
}

pub fn cmd_correct(args: &CorrectArgs) -> Result<()> {
    let eta_eps = match (&args.input, &args.eta_eps_json) {
        (Some(path), None) => {
            let data = load_panel_path(path, &args.schema.schema())?;
            estimate_eta_epsilon(&data.untreated_subsample())?
        }
        (None, Some(path)) => eta_eps_from_json(path)?,
        (None, None) => {
            return Err(Error::Validation(
                "provide either --input (panel CSV) or --eta-eps-json".into(),
            ));
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with prevents this"),
    };

    let corrected = correct_treatment_effect(args.raw_effect, args.raw_se, &eta_eps)?;
    let out = json!({
        "raw_effect": json_num(corrected.raw_effect),
        "raw_se": json_num(corrected.raw_se),
        "eta_epsilon": json_num(corrected.eta_epsilon_used.value),
        "eta_epsilon_se": json_num(corrected.eta_epsilon_used.se),
        "corrected_effect": json_num(corrected.corrected_effect),
        "corrected_se": json_num(corrected.corrected_se),
        "assumption_flag": corrected.assumption_flag,
        "warnings": corrected.warnings,
    });
    write_json(args.output.as_deref(), &out)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let dgp = DgpParams {
        alpha: args.alpha,
        sd_mu: args.sd_mu,
        sd_eps: args.sd_eps,
        gamma: args.gamma,
        p_treat: args.p_treat,
        n_units: args.n_units,
        n_periods: args.n_periods,
        treatment_fixed_within_unit: !args.treatment_varies_within_unit,
        mu_distribution: if args.mu_normal {
            MuDistribution::Normal
        } else {
            MuDistribution::LognormalShifted
        },
    };
    let grid = GridSpec {
        eta_step: args.grid_eta_step,
        nu_max: args.grid_nu_max,
        nu_grid_is_sd: args.nu_grid_is_sd,
        n_reps: args.reps,
    };

    let table = run_grid(&dgp, &grid, args.seed)?;

    fs::create_dir_all(&args.output)?;
    let grid_path = args.output.join("grid.csv");
    write_grid_csv(fs::File::create(&grid_path)?, &table.rows)?;

    let summary = json!({
        "n_rows": table.rows.len(),
        "seed": args.seed,
        "n_units": args.n_units,
        "realized_fe_var_share": json_num(table.realized_fe_var_share),
        "calibration_note": table.calibration_note,
    });
    write_json(Some(&args.output.join("summary.json")), &summary)?;

    eprintln!(
        "wrote {} rows to {} (realized fe_var_share {:.4})",
        table.rows.len(),
        grid_path.display(),
        table.realized_fe_var_share
    );
    if let Some(note) = &table.calibration_note {
        eprintln!("note: {note}");
    }
    Ok(())
}

pub fn cmd_figures(args: &FiguresArgs) -> Result<()> {
    let rows = read_grid_csv(fs::File::open(&args.input)?)?;
    fs::create_dir_all(&args.output)?;
    for figure in FigureId::ALL {
        let data = figure_data(&rows, figure);
        let path = args.output.join(figure.file_name());
        write_figure_csv(fs::File::create(&path)?, &data)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses_estimate_with_schema_overrides() {
        let cli = Cli::try_parse_from([
            "etadecomp",
            "estimate",
            "--input",
            "panel.csv",
            "--col-unit",
            "id",
            "--seed",
            "7",
        ])
        .unwrap();
        match cli.command {
            Command::Estimate(args) => {
                assert_eq!(args.schema.col_unit, "id");
                assert_eq!(args.seed, 7);
                assert_eq!(args.bootstrap, 1000);
            }
            _ => panic!("wrong subcommand"),
        }
    }

    #[test]
    fn correct_rejects_both_eta_sources() {
        let parsed = Cli::try_parse_from([
            "etadecomp",
            "correct",
            "--raw-effect",
            "100",
            "--raw-se",
            "10",
            "--input",
            "a.csv",
            "--eta-eps-json",
            "b.json",
        ]);
        assert!(parsed.is_err());
    }

    #[test]
    fn simulate_defaults_match_documented_grid() {
        let cli = Cli::try_parse_from(["etadecomp", "simulate"]).unwrap();
        match cli.command {
            Command::Simulate(args) => {
                assert_eq!(args.n_units, 10_000);
                assert_eq!(args.grid_eta_step, 0.25);
                assert_eq!(args.grid_nu_max, 1000.0);
                assert_eq!(args.seed, 42);
            }
            _ => panic!("wrong subcommand"),
        }
    }
}
