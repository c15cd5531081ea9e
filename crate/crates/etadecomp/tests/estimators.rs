//! Cross-module checks of the estimators against simulation oracles: known
//! synthesizer coefficients, Monte-Carlo sampling distributions, and the
//! multi-period generalization.

use etadecomp::panel::PanelDataset;
use etadecomp::regress::{cluster_bootstrap, BootstrapConfig};
use etadecomp::sim::{simulate_actual, simulate_predicted, DgpParams, PredictionParams};
use etadecomp::{diagnose_model, estimate_eta_epsilon, estimate_eta_mu, estimate_eta_t, eta};

fn untreated_dgp(n_units: usize) -> DgpParams {
    DgpParams {
        n_units,
        p_treat: 0.0,
        ..DgpParams::default()
    }
}

fn cell(eta_mu: f64, eta_t: f64, eta_eps: f64, var_nu: f64) -> PredictionParams {
    PredictionParams {
        eta_mu,
        eta_t,
        eta_eps,
        var_nu,
    }
}

fn synth(dgp: &DgpParams, pp: &PredictionParams, seed: u64) -> PanelDataset {
    let base = simulate_actual(dgp, seed).unwrap();
    simulate_predicted(&base, pp, seed.wrapping_add(7919)).unwrap()
}

#[test]
fn eta_epsilon_recovers_truth_at_scale() {
    let dgp = untreated_dgp(10_000);
    for (seed, true_eps) in [(1u64, 0.5), (2, 0.25), (3, 1.0)] {
        let panel = synth(&dgp, &cell(0.5, 0.0, true_eps, 0.0), seed);
        let est = estimate_eta_epsilon(&panel).unwrap();
        assert!(
            (est.value - true_eps).abs() < 0.02,
            "seed {seed}: {} vs {true_eps}",
            est.value
        );
    }
}

#[test]
fn eta_mu_recovers_truth_at_scale() {
    let dgp = untreated_dgp(10_000);
    let cfg = BootstrapConfig {
        n_replicates: 100,
        seed: 42,
    };
    for (seed, true_mu) in [(4u64, 0.75), (5, 0.25)] {
        let panel = synth(&dgp, &cell(true_mu, 0.0, 0.5, 0.0), seed);
        let est = estimate_eta_mu(&panel, &cfg).unwrap();
        assert!(
            (est.value - true_mu).abs() < 0.05,
            "seed {seed}: {} vs {true_mu}",
            est.value
        );
        assert!(est.se > 0.0);
    }
}

#[test]
fn multi_period_estimators_recover_truth() {
    let dgp = DgpParams {
        n_units: 5_000,
        n_periods: 4,
        p_treat: 0.0,
        ..DgpParams::default()
    };
    let panel = synth(&dgp, &cell(0.3, 0.0, 0.6, 0.0), 11);

    let eps = estimate_eta_epsilon(&panel).unwrap();
    assert!(matches!(eps.method, etadecomp::EtaMethod::FeSlope));
    assert!(
        (eps.value - 0.6).abs() < 1e-9,
        "exact for var_nu = 0: {}",
        eps.value
    );

    let mu = eta::eta_mu_centered(&panel).unwrap();
    assert!((mu - 0.3).abs() < 0.05, "{mu}");
}

/// Bootstrap standard error versus the sampling SD over 200 independent
/// simulated panels. The prediction noise makes the slope genuinely random.
#[test]
fn bootstrap_se_matches_monte_carlo_se() {
    let dgp = untreated_dgp(2_000);
    let pp = cell(0.75, 0.0, 0.5, 10_000.0);

    let n_reps = 200;
    let mut estimates = Vec::with_capacity(n_reps);
    for i in 0..n_reps {
        let panel = synth(&dgp, &pp, 5_000 + i as u64);
        estimates.push(estimate_eta_epsilon(&panel).unwrap().value);
    }
    let mean = estimates.iter().sum::<f64>() / n_reps as f64;
    let mc_sd = (estimates
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n_reps - 1) as f64)
        .sqrt();

    let panel = synth(&dgp, &pp, 5_000);
    let boot = cluster_bootstrap(
        &panel,
        |d| estimate_eta_epsilon(d).map(|e| e.value),
        &BootstrapConfig {
            n_replicates: 1000,
            seed: 42,
        },
    )
    .unwrap();
    assert!(
        (boot.se - mc_sd).abs() / mc_sd < 0.25,
        "bootstrap se {} vs Monte-Carlo sd {mc_sd}",
        boot.se
    );

    // the classical regression SE agrees here too (iid prediction noise)
    let reg_se = estimate_eta_epsilon(&panel).unwrap().se;
    assert!(
        (reg_se - mc_sd).abs() / mc_sd < 0.25,
        "regression se {reg_se} vs Monte-Carlo sd {mc_sd}"
    );
}

#[test]
fn eta_t_covers_truth_on_treated_cells() {
    let dgp = DgpParams {
        n_units: 10_000,
        ..DgpParams::default()
    };
    let cfg = BootstrapConfig {
        n_replicates: 200,
        seed: 42,
    };

    // prediction insensitive to treatment: estimate compatible with zero
    let base = simulate_actual(&dgp, 25).unwrap();
    let panel = simulate_predicted(&base, &cell(0.5, 0.0, 0.5, 250.0), 125).unwrap();
    let est = estimate_eta_t(&panel, &cfg).unwrap();
    assert!(
        est.value.abs() <= 2.0 * est.se,
        "eta_t {} with se {}",
        est.value,
        est.se
    );

    // a mid-grid cell: 95% interval covers the synthesized value
    let base = simulate_actual(&dgp, 22).unwrap();
    let panel = simulate_predicted(&base, &cell(0.5, 0.5, 0.5, 250.0), 222).unwrap();
    let est = estimate_eta_t(&panel, &cfg).unwrap();
    assert!(
        (est.value - 0.5).abs() <= 1.96 * est.se,
        "eta_t {} with se {}",
        est.value,
        est.se
    );
}

/// Two synthesized models: A fits between-unit variation almost perfectly, B
/// fits within-unit variation better but predicts with extra noise. A wins on
/// overall fit, B on the within-unit diagnostic.
#[test]
fn diagnostic_prefers_within_unit_fit_over_r2() {
    let dgp = untreated_dgp(5_000);
    let base = simulate_actual(&dgp, 33).unwrap();
    let model_a = simulate_predicted(&base, &cell(1.0, 0.0, 0.25, 0.0), 100).unwrap();
    let model_b = simulate_predicted(&base, &cell(0.5, 0.0, 0.75, 250_000.0), 101).unwrap();

    let cfg = BootstrapConfig {
        n_replicates: 100,
        seed: 42,
    };
    let report_a = diagnose_model(&model_a, &cfg);
    let report_b = diagnose_model(&model_b, &cfg);

    let (r2_a, r2_b) = (report_a.r2_pred.unwrap(), report_b.r2_pred.unwrap());
    let (eps_a, eps_b) = (
        report_a.eta_epsilon.unwrap().value,
        report_b.eta_epsilon.unwrap().value,
    );
    assert!(r2_a > r2_b, "fixture broken: r2 {r2_a} vs {r2_b}");
    assert!(eps_b > eps_a, "ranking wrong: eta_eps {eps_a} vs {eps_b}");
}

#[test]
fn corrected_effect_recovers_truth_when_assumption_holds() {
    // one matched cell: eta_t = eta_eps = 0.5, gamma = 200
    let dgp = DgpParams {
        n_units: 10_000,
        ..DgpParams::default()
    };
    let base = simulate_actual(&dgp, 55).unwrap();
    let panel = simulate_predicted(&base, &cell(0.5, 0.5, 0.5, 250.0), 56).unwrap();

    // raw effect from the predicted-outcome regression on the full sample
    let mut x = Vec::new();
    let mut y = Vec::new();
    for r in panel.records() {
        x.push(if r.treated { 1.0 } else { 0.0 });
        y.push(r.predicted.unwrap());
    }
    let te = etadecomp::ols_with_intercept(&x, &y).unwrap();

    // eta_epsilon from the untreated subsample, as the workflow prescribes
    let eps = estimate_eta_epsilon(&panel.untreated_subsample()).unwrap();
    let corrected = etadecomp::correct_treatment_effect(te.slope, te.slope_se, &eps).unwrap();

    // raw is attenuated to ~100; corrected should sit near 200
    assert!((te.slope - 100.0).abs() < 40.0, "raw {}", te.slope);
    assert!(
        (corrected.corrected_effect - 200.0).abs() <= 3.0 * corrected.corrected_se.max(20.0),
        "corrected {} (se {})",
        corrected.corrected_effect,
        corrected.corrected_se
    );
    assert!(corrected.assumption_flag.contains("eta_T"));
}

#[test]
fn joint_bootstrap_correction_agrees_with_delta_method() {
    let dgp = DgpParams {
        n_units: 4_000,
        ..DgpParams::default()
    };
    let base = simulate_actual(&dgp, 61).unwrap();
    let panel = simulate_predicted(&base, &cell(0.5, 0.5, 0.5, 500.0), 62).unwrap();
    let cfg = BootstrapConfig {
        n_replicates: 300,
        seed: 42,
    };

    let joint = etadecomp::eta::correct_treatment_effect_joint(&panel, &cfg).unwrap();
    assert!(
        (joint.corrected_effect - 200.0).abs() <= 3.0 * joint.corrected_se.max(15.0),
        "joint corrected {} (se {})",
        joint.corrected_effect,
        joint.corrected_se
    );
    assert!(joint.raw_se > 0.0 && joint.corrected_se > 0.0);
    assert!(joint.assumption_flag.contains("eta_T"));

    // determinism of the joint path
    let again = etadecomp::eta::correct_treatment_effect_joint(&panel, &cfg).unwrap();
    assert_eq!(joint.corrected_se.to_bits(), again.corrected_se.to_bits());
}

#[test]
fn estimates_survive_the_csv_roundtrip() {
    let dgp = DgpParams {
        n_units: 2_000,
        ..DgpParams::default()
    };
    let base = simulate_actual(&dgp, 77).unwrap();
    let panel = simulate_predicted(&base, &cell(0.75, 0.5, 0.25, 0.0), 78).unwrap();

    let schema = etadecomp::PanelSchema::default();
    let mut buf = Vec::new();
    etadecomp::export_panel(&mut buf, &panel, &schema).unwrap();
    let reloaded = etadecomp::load_panel(buf.as_slice(), &schema).unwrap();

    let direct = estimate_eta_epsilon(&panel.untreated_subsample()).unwrap();
    let via_csv = estimate_eta_epsilon(&reloaded.untreated_subsample()).unwrap();
    assert_eq!(direct.value.to_bits(), via_csv.value.to_bits());
    assert_eq!(direct.se.to_bits(), via_csv.se.to_bits());
}
