//! End-to-end tests of the `etadecomp` binary: exit codes, JSON outputs,
//! file-format round trips, and byte-level determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use etadecomp::jsonfmt::round_sig12;
use etadecomp::panel::PanelSchema;
use etadecomp::regress::BootstrapConfig;
use etadecomp::sim::{simulate_actual, simulate_predicted, DgpParams, PredictionParams};
use etadecomp::{estimate_eta_epsilon, estimate_eta_mu, estimate_eta_t, export_panel};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_etadecomp"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary should run");
    assert!(
        out.status.success(),
        "command failed: stdout={} stderr={}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr should carry error JSON");
    serde_json::from_str(line).expect("stderr line should be JSON")
}

#[test]
fn estimate_matches_in_process_results_through_the_file_format() {
    let dir = tempfile::tempdir().unwrap();
    let dgp = DgpParams {
        n_units: 1_000,
        ..DgpParams::default()
    };
    let base = simulate_actual(&dgp, 91).unwrap();
    let pp = PredictionParams {
        eta_mu: 0.75,
        eta_t: 0.5,
        eta_eps: 0.25,
        var_nu: 0.0,
    };
    let panel = simulate_predicted(&base, &pp, 92).unwrap();

    let csv_path = dir.path().join("panel.csv");
    export_panel(
        fs::File::create(&csv_path).unwrap(),
        &panel,
        &PanelSchema::default(),
    )
    .unwrap();

    let json_path = dir.path().join("estimates.json");
    run_ok(bin().args([
        "estimate",
        "--input",
        csv_path.to_str().unwrap(),
        "--output",
        json_path.to_str().unwrap(),
        "--seed",
        "42",
        "--bootstrap",
        "200",
    ]));
    let got: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();

    // in-process reference on the same exported data
    let cfg = BootstrapConfig {
        n_replicates: 200,
        seed: 42,
    };
    let untreated = panel.untreated_subsample();
    let eps = estimate_eta_epsilon(&untreated).unwrap();
    let mu = estimate_eta_mu(&untreated, &cfg).unwrap();
    let eta_t = estimate_eta_t(&panel, &cfg).unwrap();

    let field = |name: &str| got.get(name).and_then(|v| v.as_f64()).unwrap();
    assert_eq!(
        field("eta_epsilon").to_bits(),
        round_sig12(eps.value).to_bits()
    );
    assert_eq!(
        field("eta_epsilon_se").to_bits(),
        round_sig12(eps.se).to_bits()
    );
    assert_eq!(field("eta_mu").to_bits(), round_sig12(mu.value).to_bits());
    assert_eq!(field("eta_mu_se").to_bits(), round_sig12(mu.se).to_bits());
    assert_eq!(field("eta_t").to_bits(), round_sig12(eta_t.value).to_bits());
    assert_eq!(got["n_periods"], 2);
    assert!(got["data_quality"]["n_complete_units"].as_u64().unwrap() == 1_000);
}

#[test]
fn estimate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    // duplicate key -> validation failure, exit 2
    let bad = dir.path().join("dup.csv");
    fs::write(
        &bad,
        "unit_id,period,treated,actual_outcome,predicted_outcome\n7,1,0,1,1\n7,1,0,2,2\n",
    )
    .unwrap();
    let out = bin()
        .args(["estimate", "--input", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["kind"], "duplicate_key");
    assert_eq!(err["exit_code"], 2);
    assert!(err["error"].as_str().unwrap().contains('7'));

    // treated units present but no actual outcomes for them -> exit 2 with a
    // missing-variation message
    let missing = dir.path().join("missing.csv");
    let mut text = String::from("unit_id,period,treated,actual_outcome,predicted_outcome\n");
    for u in 0..8 {
        let base = 100.0 + 10.0 * u as f64;
        let delta = 1.0 + 0.2 * u as f64;
        text.push_str(&format!("u{u},1,0,{base},{}\n", 0.8 * base + 3.0));
        text.push_str(&format!(
            "u{u},2,0,{},{}\n",
            base + delta,
            0.8 * (base + delta) + 3.0
        ));
    }
    text.push_str("t1,1,1,,31\nt1,2,1,,33\nt2,1,1,,41\nt2,2,1,,44\n");
    fs::write(&missing, text).unwrap();
    let out = bin()
        .args([
            "estimate",
            "--input",
            missing.to_str().unwrap(),
            "--bootstrap",
            "100",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["kind"], "missing_variation");
}

#[test]
fn correct_from_json_and_from_panel() {
    let dir = tempfile::tempdir().unwrap();

    let eta_json = dir.path().join("eta.json");
    fs::write(
        &eta_json,
        r#"{"eta_epsilon": 0.75, "eta_epsilon_se": 0.05, "n_units": 100, "n_periods": 2}"#,
    )
    .unwrap();
    let out_path = dir.path().join("corrected.json");
    run_ok(bin().args([
        "correct",
        "--raw-effect",
        "150",
        "--raw-se",
        "30",
        "--eta-eps-json",
        eta_json.to_str().unwrap(),
        "--output",
        out_path.to_str().unwrap(),
    ]));
    let got: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(got["corrected_effect"].as_f64().unwrap(), 200.0);
    let expected_se = 200.0 * ((30.0f64 / 150.0).powi(2) + (0.05f64 / 0.75).powi(2)).sqrt();
    assert!((got["corrected_se"].as_f64().unwrap() - expected_se).abs() < 1e-9);
    assert!(got["assumption_flag"].as_str().unwrap().contains("eta_T"));

    // refusal on non-positive eta -> exit 3
    fs::write(
        &eta_json,
        r#"{"eta_epsilon": -0.1, "eta_epsilon_se": 0.05}"#,
    )
    .unwrap();
    let out = bin()
        .args([
            "correct",
            "--raw-effect",
            "150",
            "--raw-se",
            "30",
            "--eta-eps-json",
            eta_json.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["kind"], "uncorrectable");

    // eta from a panel: identity predictions give eta_epsilon = 1
    let panel_csv = dir.path().join("panel.csv");
    fs::write(
        &panel_csv,
        "unit_id,period,treated,actual_outcome,predicted_outcome\n\
         a,1,0,10,10\na,2,0,13,13\nb,1,0,20,20\nb,2,0,21,21\nc,1,0,5,5\nc,2,0,9,9\n",
    )
    .unwrap();
    let out = run_ok(bin().args([
        "correct",
        "--raw-effect",
        "100",
        "--raw-se",
        "10",
        "--input",
        panel_csv.to_str().unwrap(),
    ]));
    let got: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(got["eta_epsilon"].as_f64().unwrap(), 1.0);
    assert_eq!(got["corrected_effect"].as_f64().unwrap(), 100.0);
}

#[test]
fn diagnose_ranks_models_by_within_unit_fit() {
    let dir = tempfile::tempdir().unwrap();
    let dgp = DgpParams {
        n_units: 2_000,
        p_treat: 0.0,
        ..DgpParams::default()
    };
    let base = simulate_actual(&dgp, 44).unwrap();
    let model_a = simulate_predicted(
        &base,
        &PredictionParams {
            eta_mu: 1.0,
            eta_t: 0.0,
            eta_eps: 0.25,
            var_nu: 0.0,
        },
        1,
    )
    .unwrap();
    let model_b = simulate_predicted(
        &base,
        &PredictionParams {
            eta_mu: 0.5,
            eta_t: 0.0,
            eta_eps: 0.75,
            var_nu: 250_000.0,
        },
        2,
    )
    .unwrap();

    // multi-model CSV by hand: shared base columns, one prediction column per model
    let csv_path = dir.path().join("models.csv");
    let mut text = String::from(
        "unit_id,period,treated,actual_outcome,predicted_outcome_a,predicted_outcome_b\n",
    );
    for (ra, rb) in model_a.records().iter().zip(model_b.records()) {
        text.push_str(&format!(
            "u{},{},0,{},{},{}\n",
            ra.unit.0,
            ra.period,
            ra.actual.unwrap(),
            ra.predicted.unwrap(),
            rb.predicted.unwrap()
        ));
    }
    fs::write(&csv_path, text).unwrap();

    let out = run_ok(bin().args([
        "diagnose",
        "--input",
        csv_path.to_str().unwrap(),
        "--bootstrap",
        "100",
        "--seed",
        "42",
    ]));
    let got: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    let models = got["models"].as_array().unwrap();
    assert_eq!(models.len(), 2);
    assert_eq!(models[0]["model"], "b", "within-unit fit should outrank R2");
    assert_eq!(models[0]["rank"], 1);
    let r2_a = models[1]["r2_pred"].as_f64().unwrap();
    let r2_b = models[0]["r2_pred"].as_f64().unwrap();
    assert!(r2_a > r2_b, "fixture should give A the higher R2");

    // single-model restriction
    let out = run_ok(bin().args([
        "diagnose",
        "--input",
        csv_path.to_str().unwrap(),
        "--bootstrap",
        "100",
        "--model",
        "a",
    ]));
    let got: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(got["models"].as_array().unwrap().len(), 1);
    assert_eq!(got["models"][0]["model"], "a");

    let out = bin()
        .args([
            "diagnose",
            "--input",
            csv_path.to_str().unwrap(),
            "--model",
            "nonexistent",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diagnose_single_perfect_model_has_no_flags() {
    let dir = tempfile::tempdir().unwrap();
    let dgp = DgpParams {
        n_units: 500,
        p_treat: 0.0,
        ..DgpParams::default()
    };
    let base = simulate_actual(&dgp, 46).unwrap();
    let perfect = simulate_predicted(
        &base,
        &PredictionParams {
            eta_mu: 1.0,
            eta_t: 1.0,
            eta_eps: 1.0,
            var_nu: 0.0,
        },
        1,
    )
    .unwrap();
    let csv_path = dir.path().join("perfect.csv");
    export_panel(
        fs::File::create(&csv_path).unwrap(),
        &perfect,
        &PanelSchema::default(),
    )
    .unwrap();

    let out = run_ok(bin().args([
        "diagnose",
        "--input",
        csv_path.to_str().unwrap(),
        "--bootstrap",
        "100",
    ]));
    let got: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    let models = got["models"].as_array().unwrap();
    assert_eq!(models.len(), 1);
    assert_eq!(models[0]["rank"], 1);
    assert_eq!(models[0]["eta_epsilon"].as_f64().unwrap(), 1.0);
    assert!(models[0]["flags"].as_array().unwrap().is_empty());
}

#[test]
fn estimate_omits_eta_t_without_treatment() {
    let dir = tempfile::tempdir().unwrap();
    let dgp = DgpParams {
        n_units: 300,
        p_treat: 0.0,
        ..DgpParams::default()
    };
    let base = simulate_actual(&dgp, 47).unwrap();
    let panel = simulate_predicted(
        &base,
        &PredictionParams {
            eta_mu: 0.5,
            eta_t: 0.0,
            eta_eps: 0.5,
            var_nu: 100.0,
        },
        1,
    )
    .unwrap();
    let csv_path = dir.path().join("untreated.csv");
    export_panel(
        fs::File::create(&csv_path).unwrap(),
        &panel,
        &PanelSchema::default(),
    )
    .unwrap();

    let out = run_ok(bin().args([
        "estimate",
        "--input",
        csv_path.to_str().unwrap(),
        "--bootstrap",
        "100",
    ]));
    let got: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert!(got.get("eta_t").is_none());
    assert!(got.get("eta_epsilon").is_some());
}

#[test]
fn diagnose_flags_zero_within_variance_model() {
    let dir = tempfile::tempdir().unwrap();
    let dgp = DgpParams {
        n_units: 1_000,
        p_treat: 0.0,
        ..DgpParams::default()
    };
    let base = simulate_actual(&dgp, 45).unwrap();
    let pathological = simulate_predicted(
        &base,
        &PredictionParams {
            eta_mu: 1.0,
            eta_t: 0.0,
            eta_eps: 0.0,
            var_nu: 0.0,
        },
        1,
    )
    .unwrap();
    let csv_path = dir.path().join("path.csv");
    export_panel(
        fs::File::create(&csv_path).unwrap(),
        &pathological,
        &PanelSchema::default(),
    )
    .unwrap();

    let out = run_ok(bin().args([
        "diagnose",
        "--input",
        csv_path.to_str().unwrap(),
        "--bootstrap",
        "100",
    ]));
    let got: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    let model = &got["models"][0];
    assert_eq!(model["model"], "default");
    assert_eq!(model["eta_epsilon"].as_f64().unwrap(), 0.0);
    assert!(model["flags"]
        .as_array()
        .unwrap()
        .iter()
        .any(|f| f.as_str().unwrap().contains("high_r2_low_eta_epsilon")));
}

fn read_all(dir: &Path, names: &[&str]) -> Vec<Vec<u8>> {
    names
        .iter()
        .map(|n| fs::read(dir.join(n)).unwrap())
        .collect()
}

#[test]
fn simulate_and_figures_are_byte_deterministic() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let grid_args = |out: &Path| {
        vec![
            "simulate".to_string(),
            "--output".into(),
            out.to_str().unwrap().to_string(),
            "--seed".into(),
            "42".into(),
            "--n-units".into(),
            "400".into(),
            "--grid-eta-step".into(),
            "0.5".into(),
        ]
    };
    run_ok(bin().args(grid_args(dir_a.path())));
    run_ok(bin().args(grid_args(dir_b.path())));

    for (a, b) in read_all(dir_a.path(), &["grid.csv", "summary.json"])
        .iter()
        .zip(read_all(dir_b.path(), &["grid.csv", "summary.json"]))
    {
        assert_eq!(*a, b, "simulate outputs must be byte-identical");
    }

    // 3 eta values each, 5 nu values -> 135 rows + header
    let grid_text = fs::read_to_string(dir_a.path().join("grid.csv")).unwrap();
    assert_eq!(grid_text.lines().count(), 27 * 5 + 1);

    let figs = [
        "fig1.csv", "fig2.csv", "fig3.csv", "fig4.csv", "fig5.csv", "fig6.csv",
    ];
    let fig_args = |grid_dir: &Path, out: &Path| {
        vec![
            "figures".to_string(),
            "--input".into(),
            grid_dir.join("grid.csv").to_str().unwrap().to_string(),
            "--output".into(),
            out.to_str().unwrap().to_string(),
        ]
    };
    run_ok(bin().args(fig_args(dir_a.path(), dir_a.path())));
    run_ok(bin().args(fig_args(dir_b.path(), dir_b.path())));
    for (a, b) in read_all(dir_a.path(), &figs)
        .iter()
        .zip(read_all(dir_b.path(), &figs))
    {
        assert_eq!(*a, b, "figure outputs must be byte-identical");
    }

    // seed in the environment is honored when the flag is absent
    let dir_c = tempfile::tempdir().unwrap();
    run_ok(bin().env("ETADECOMP_SEED", "42").args([
        "simulate",
        "--output",
        dir_c.path().to_str().unwrap(),
        "--n-units",
        "400",
        "--grid-eta-step",
        "0.5",
    ]));
    assert_eq!(
        fs::read(dir_a.path().join("grid.csv")).unwrap(),
        fs::read(dir_c.path().join("grid.csv")).unwrap()
    );
}

#[test]
fn figure_five_rows_satisfy_the_diagonal_filter() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(bin().args([
        "simulate",
        "--output",
        dir.path().to_str().unwrap(),
        "--seed",
        "9",
        "--n-units",
        "400",
        "--grid-eta-step",
        "0.5",
    ]));
    run_ok(bin().args([
        "figures",
        "--input",
        dir.path().join("grid.csv").to_str().unwrap(),
        "--output",
        dir.path().to_str().unwrap(),
    ]));

    let fig5 = fs::read_to_string(dir.path().join("fig5.csv")).unwrap();
    let mut lines = fig5.lines();
    assert_eq!(lines.next().unwrap(), "series,x,y,color,slope,intercept");
    let mut saw_reference = false;
    for line in lines {
        let series = line.split(',').next().unwrap();
        if series == "reference" {
            saw_reference = true;
            assert!(line.contains(",1,0") || line.ends_with("1,0"));
        }
    }
    assert!(saw_reference, "fig5 must carry its y = x reference line");

    // points: 3 diagonal eta pairs x 3 eta_mu x 5 nu = 45 scatter rows
    let n_points = fig5.lines().filter(|l| l.starts_with("points,")).count();
    assert_eq!(n_points, 45);
}
