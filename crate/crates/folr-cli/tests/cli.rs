//! End-to-end tests of the command-line surface: flag validation and exit
//! codes, file formats, and determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use folr::basis::{BasisSpec, RawCurve};
use folr::fit::{FitConfig, FitDiagnostics, FitKind, FittedFolr};
use folr::linalg::dot;
use folr::ordinal::{logistic, logit, OrdinalModel, Thresholds};
use folr::persist;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("folr-cli-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        Self(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

fn folr_cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_folr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn arg(path: &Path) -> String {
    path.display().to_string()
}

/// Curves drawn exactly from a spline basis, written in the long CSV format.
fn write_in_space_curves(path: &Path, basis: &BasisSpec, n_curves: usize, n_obs: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_max = basis.domain_end();
    let times: Vec<f64> = (0..n_obs).map(|i| t_max * (i as f64 / (n_obs - 1) as f64)).collect();
    let curves: Vec<RawCurve> = (0..n_curves)
        .map(|i| {
            let coeffs: Vec<f64> =
                (0..basis.size()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let values: Vec<f64> =
                times.iter().map(|&t| dot(&coeffs, &basis.eval(t).unwrap())).collect();
            RawCurve::new(format!("c{i:03}"), times.clone(), values).unwrap()
        })
        .collect();
    persist::write_curves(&curves, path).unwrap();
}

fn write_random_labels(path: &Path, n: usize, k: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<(String, usize)> = (0..n)
        .map(|i| {
            let label = if i < k { i + 1 } else { rng.gen_range(1..=k) };
            (format!("c{i:03}"), label)
        })
        .collect();
    persist::write_labels(&rows, path).unwrap();
}

#[test]
fn smooth_recovers_in_space_curves_to_machine_precision() {
    let dir = TempDir::new("smooth-exact");
    let basis = BasisSpec::bspline_uniform(4, 16, 1.0).unwrap();
    let curves_path = dir.path("curves.csv");
    write_in_space_curves(&curves_path, &basis, 5, 60, 1);

    let out = folr_cmd(&[
        "smooth",
        "--curves",
        &arg(&curves_path),
        "--basis",
        "bspline",
        "--size",
        "16",
        "--order",
        "4",
        "--lambda",
        "0",
        "--out",
        &arg(&dir.path("coeffs.csv")),
    ]);
    assert_exit(&out, 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    for line in stdout.lines().filter(|l| l.starts_with("smoothed")) {
        let rms: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
        assert!(rms < 1e-8, "{line}");
    }
    assert!(dir.path("coeffs.csv").exists());
    assert!(dir.path("coeffs.basis.json").exists());
    let header = fs::read_to_string(dir.path("coeffs.csv")).unwrap();
    assert!(header.starts_with("curve_id,c1,"));
    assert!(header.lines().next().unwrap().ends_with(",c16"));
}

#[test]
fn smooth_size_zero_is_a_usage_error() {
    let dir = TempDir::new("smooth-size0");
    let curves_path = dir.path("curves.csv");
    let basis = BasisSpec::bspline_uniform(2, 3, 1.0).unwrap();
    write_in_space_curves(&curves_path, &basis, 2, 10, 2);
    let out = folr_cmd(&[
        "smooth",
        "--curves",
        &arg(&curves_path),
        "--size",
        "0",
        "--out",
        &arg(&dir.path("coeffs.csv")),
    ]);
    assert_exit(&out, 1);
}

#[test]
fn smooth_missing_input_is_a_data_error() {
    let dir = TempDir::new("smooth-missing");
    let out = folr_cmd(&[
        "smooth",
        "--curves",
        &arg(&dir.path("nope.csv")),
        "--size",
        "4",
        "--out",
        &arg(&dir.path("coeffs.csv")),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn smooth_rank_deficiency_is_a_numerical_failure() {
    // Plenty of observations, all crammed into one knot span.
    let dir = TempDir::new("smooth-rank");
    let times: Vec<f64> = (0..30).map(|i| 0.001 + 0.002 * (i as f64 / 29.0)).collect();
    let values = vec![1.0; 30];
    let curve = RawCurve::new("c0", times, values).unwrap();
    let path = dir.path("curves.csv");
    persist::write_curves(&[curve], &path).unwrap();

    let out = folr_cmd(&[
        "smooth",
        "--curves",
        &arg(&path),
        "--size",
        "16",
        "--order",
        "4",
        "--lambda",
        "0",
        "--domain",
        "1.0",
        "--out",
        &arg(&dir.path("coeffs.csv")),
    ]);
    assert_exit(&out, 3);
}

#[test]
fn smooth_supports_the_wide_penalized_configuration() {
    // 60 spline functions with a 10^{-0.5} roughness penalty over a
    // two-minute window sampled once per second.
    let dir = TempDir::new("smooth-wide");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let times: Vec<f64> = (0..121).map(|i| i as f64).collect();
    let curves: Vec<RawCurve> = (0..4)
        .map(|i| {
            let values: Vec<f64> =
                times.iter().map(|&t| (t / 17.0).sin() + 0.1 * rng.gen_range(-1.0..1.0)).collect();
            RawCurve::new(format!("c{i}"), times.clone(), values).unwrap()
        })
        .collect();
    let path = dir.path("curves.csv");
    persist::write_curves(&curves, &path).unwrap();

    let out = folr_cmd(&[
        "smooth",
        "--curves",
        &arg(&path),
        "--basis",
        "bspline",
        "--size",
        "60",
        "--order",
        "4",
        "--lambda",
        "0.31622776601683794",
        "--out",
        &arg(&dir.path("coeffs.csv")),
    ]);
    assert_exit(&out, 0);
    let coeffs = persist::load_coeffs(dir.path("coeffs.csv")).unwrap();
    assert_eq!(coeffs.len(), 4);
    assert_eq!(coeffs[0].1.len(), 60);
}

/// Smooths a small dataset and returns (coeffs path, basis path, labels path).
fn smoothed_dataset(dir: &TempDir, n: usize, k: usize, seed: u64) -> (PathBuf, PathBuf, PathBuf) {
    let basis = BasisSpec::bspline_uniform(4, 8, 1.0).unwrap();
    let curves_path = dir.path("curves.csv");
    write_in_space_curves(&curves_path, &basis, n, 40, seed);
    let labels_path = dir.path("labels.csv");
    write_random_labels(&labels_path, n, k, seed + 1);

    let out = folr_cmd(&[
        "smooth",
        "--curves",
        &arg(&curves_path),
        "--size",
        "8",
        "--order",
        "4",
        "--lambda",
        "0",
        "--out",
        &arg(&dir.path("coeffs.csv")),
    ]);
    assert_exit(&out, 0);
    (dir.path("coeffs.csv"), dir.path("coeffs.basis.json"), labels_path)
}

#[test]
fn fit_with_monomial_beta_basis_of_two_runs() {
    let dir = TempDir::new("fit-monomial");
    let (coeffs, basis, labels) = smoothed_dataset(&dir, 60, 3, 4);
    let out = folr_cmd(&[
        "fit",
        "--coeffs",
        &arg(&coeffs),
        "--curve-basis",
        &arg(&basis),
        "--labels",
        &arg(&labels),
        "--beta-basis",
        "monomial",
        "--beta-size",
        "2",
        "--no-penalty",
        "--out",
        &arg(&dir.path("model.json")),
    ]);
    assert_exit(&out, 0);
    let model = persist::load_model(dir.path("model.json")).unwrap();
    assert_eq!(model.model().coefficients().len(), 2);
    assert_eq!(model.beta_basis(), &BasisSpec::monomial(2, 1.0).unwrap());
}

#[test]
fn thresholds_only_fit_prints_the_closed_form() {
    let dir = TempDir::new("fit-thresholds");
    let (coeffs, basis, labels) = smoothed_dataset(&dir, 80, 4, 5);
    let out = folr_cmd(&[
        "fit",
        "--coeffs",
        &arg(&coeffs),
        "--curve-basis",
        &arg(&basis),
        "--labels",
        &arg(&labels),
        "--beta-size",
        "0",
        "--no-penalty",
        "--out",
        &arg(&dir.path("model.json")),
    ]);
    assert_exit(&out, 0);

    let labels = persist::load_labels(dir.path("labels.csv"), None).unwrap();
    let n = labels.len() as f64;
    let stdout = String::from_utf8(out.stdout).unwrap();
    let tau_line = stdout.lines().find(|l| l.starts_with("thresholds:")).unwrap();
    let taus: Vec<f64> = tau_line
        .trim_start_matches("thresholds:")
        .split(',')
        .map(|v| v.trim().parse().unwrap())
        .collect();
    assert_eq!(taus.len(), 3);
    let mut cum = 0.0;
    for (j, tau) in taus.iter().enumerate() {
        cum += labels.iter().filter(|(_, y)| *y == j + 1).count() as f64 / n;
        // Printed at 6 decimals; compare through the link at matching precision.
        assert!(
            (logistic(*tau) - cum).abs() <= 2e-6,
            "F({tau}) = {} vs cumulative frequency {cum}",
            logistic(*tau)
        );
        assert!((tau - logit(cum)).abs() <= 2e-5);
    }
}

#[test]
fn oversized_penalty_reports_an_empty_active_set() {
    let dir = TempDir::new("fit-lmax");
    let (coeffs, basis, labels) = smoothed_dataset(&dir, 70, 3, 6);

    // lambda_max computed through the library on the same data.
    let coeff_rows = persist::load_coeffs(&coeffs).unwrap();
    let curve_basis = persist::load_basis(&basis).unwrap();
    let label_rows = persist::load_labels(&labels, None).unwrap();
    let beta_basis = BasisSpec::bspline_uniform(4, 5, 1.0).unwrap();
    let samples: Vec<_> = coeff_rows
        .iter()
        .map(|(_, c)| folr::basis::FunctionalSample::new(curve_basis.clone(), c.clone()).unwrap())
        .collect();
    let design = folr::fit::reduce(&samples, &beta_basis).unwrap();
    let ys: Vec<usize> = label_rows.iter().map(|(_, y)| *y).collect();
    let lmax = folr::fit::lasso_lambda_max(&design, &ys, &FitConfig::default()).unwrap();

    let out = folr_cmd(&[
        "fit",
        "--coeffs",
        &arg(&coeffs),
        "--curve-basis",
        &arg(&basis),
        "--labels",
        &arg(&labels),
        "--beta-size",
        "5",
        "--lasso",
        &format!("{}", 2.0 * lmax),
        "--out",
        &arg(&dir.path("model.json")),
    ]);
    assert_exit(&out, 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("active set (0 of 5): []"), "{stdout}");
    let model = persist::load_model(dir.path("model.json")).unwrap();
    assert!(model.model().coefficients().iter().all(|&b| b == 0.0));
}

#[test]
fn predict_with_zero_coefficients_always_returns_the_interval_of_zero() {
    let dir = TempDir::new("predict-const");
    let curve_basis = BasisSpec::bspline_uniform(4, 8, 1.0).unwrap();
    let beta_basis = BasisSpec::monomial(2, 1.0).unwrap();
    let model = OrdinalModel::new(
        Thresholds::new(vec![-1.0, 0.0, 1.0]).unwrap(),
        vec![0.0, 0.0],
    )
    .unwrap();
    let fitted = FittedFolr::new(
        model,
        &curve_basis,
        &beta_basis,
        FitKind::Mle,
        0.0,
        0,
        FitDiagnostics {
            final_nll: 0.0,
            iterations: 0,
            converged: true,
            active_set: None,
            warnings: vec![],
        },
    )
    .unwrap();
    persist::save_model(&fitted, dir.path("model.json")).unwrap();

    write_in_space_curves(&dir.path("curves.csv"), &curve_basis, 10, 40, 7);
    let out = folr_cmd(&[
        "smooth",
        "--curves",
        &arg(&dir.path("curves.csv")),
        "--size",
        "8",
        "--order",
        "4",
        "--lambda",
        "0",
        "--out",
        &arg(&dir.path("coeffs.csv")),
    ]);
    assert_exit(&out, 0);

    let out = folr_cmd(&[
        "predict",
        "--model",
        &arg(&dir.path("model.json")),
        "--coeffs",
        &arg(&dir.path("coeffs.csv")),
        "--rule",
        "lad",
        "--out",
        &arg(&dir.path("preds.csv")),
    ]);
    assert_exit(&out, 0);
    let text = fs::read_to_string(dir.path("preds.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("curve_id,predicted_class"));
    for line in lines {
        assert!(line.ends_with(",2"), "{line}");
    }
}

#[test]
fn lad_predictions_carry_no_probability_columns_and_match_the_cost_oracle() {
    let dir = TempDir::new("predict-rules");
    let (coeffs, basis, labels) = smoothed_dataset(&dir, 90, 3, 8);
    let out = folr_cmd(&[
        "fit",
        "--coeffs",
        &arg(&coeffs),
        "--curve-basis",
        &arg(&basis),
        "--labels",
        &arg(&labels),
        "--beta-size",
        "4",
        "--no-penalty",
        "--out",
        &arg(&dir.path("model.json")),
    ]);
    assert_exit(&out, 0);

    for (rule, out_name) in [("lad", "lad.csv"), ("mode", "mode.csv")] {
        let out = folr_cmd(&[
            "predict",
            "--model",
            &arg(&dir.path("model.json")),
            "--coeffs",
            &arg(&coeffs),
            "--rule",
            rule,
            "--out",
            &arg(&dir.path(out_name)),
        ]);
        assert_exit(&out, 0);
    }

    let lad_text = fs::read_to_string(dir.path("lad.csv")).unwrap();
    assert_eq!(lad_text.lines().next(), Some("curve_id,predicted_class"));
    assert!(lad_text.lines().all(|l| l.split(',').count() <= 2));

    let mode_text = fs::read_to_string(dir.path("mode.csv")).unwrap();
    assert!(mode_text.lines().next().unwrap().starts_with("curve_id,predicted_class,p1"));

    // Wherever the two rules disagree, each must still minimize its own
    // expected cost under the printed distribution.
    use folr::ordinal::{expected_cost_oracle, ClassDistribution, CostFunction};
    for (lad_line, mode_line) in lad_text.lines().skip(1).zip(mode_text.lines().skip(1)) {
        let lad_class: usize = lad_line.split(',').nth(1).unwrap().parse().unwrap();
        let fields: Vec<&str> = mode_line.split(',').collect();
        let mode_class: usize = fields[1].parse().unwrap();
        let probs: Vec<f64> = fields[2..].iter().map(|p| p.parse().unwrap()).collect();
        let dist = ClassDistribution::new(probs).unwrap();
        let (abs_best, abs_costs) = expected_cost_oracle(&dist, &CostFunction::AbsoluteDifference);
        let (mode_best, _) = expected_cost_oracle(&dist, &CostFunction::ZeroOne);
        assert_eq!(mode_class, mode_best, "{mode_line}");
        // Boundary ties can pick either neighbor; the expected cost must match.
        assert!(
            (abs_costs[lad_class - 1] - abs_costs[abs_best - 1]).abs() <= 1e-9,
            "lad {lad_class} vs oracle {abs_best}: {abs_costs:?}"
        );
    }
}

#[test]
fn crossval_k1_is_a_usage_error() {
    let dir = TempDir::new("cv-k1");
    let out = folr_cmd(&[
        "crossval",
        "--curves",
        &arg(&dir.path("curves.csv")),
        "--labels",
        &arg(&dir.path("labels.csv")),
        "--k",
        "1",
        "--out-dir",
        &arg(&dir.path("cv")),
    ]);
    assert_exit(&out, 1);
}

#[test]
fn crossval_is_deterministic_and_covers_all_three_arms() {
    let dir = TempDir::new("cv-det");
    let basis = BasisSpec::bspline_uniform(4, 8, 1.0).unwrap();
    write_in_space_curves(&dir.path("curves.csv"), &basis, 60, 30, 9);
    write_random_labels(&dir.path("labels.csv"), 60, 3, 10);

    let run = |out_dir: &Path| {
        let out = folr_cmd(&[
            "crossval",
            "--curves",
            &arg(&dir.path("curves.csv")),
            "--labels",
            &arg(&dir.path("labels.csv")),
            "--k",
            "5",
            "--arms",
            "last-value,folr,folr-lasso",
            "--curve-size",
            "8",
            "--beta-size",
            "5",
            "--seed",
            "11",
            "--out-dir",
            &arg(out_dir),
        ]);
        assert_exit(&out, 0);
    };
    run(&dir.path("cv1"));
    run(&dir.path("cv2"));

    let summary = fs::read_to_string(dir.path("cv1").join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "arm,mean_mae,mean_error_rate");
    assert_eq!(lines.len(), 4, "three arms: {summary}");
    assert!(lines[1].starts_with("last-value,"));
    assert!(lines[2].starts_with("folr,"));
    assert!(lines[3].starts_with("folr-lasso,"));

    for name in ["summary.csv", "cv_last-value.csv", "cv_folr.csv", "cv_folr-lasso.csv"] {
        let a = fs::read(dir.path("cv1").join(name)).unwrap();
        let b = fs::read(dir.path("cv2").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn simulate_is_byte_deterministic_and_validates_input() {
    let dir = TempDir::new("simulate");
    let spec = serde_json::json!({
        "n_curves": 30,
        "n_classes": 3,
        "curve_basis": {"b_spline": {"order": 2, "knots": [0.0, 0.0, 0.5, 1.0, 1.0]}},
        "beta_basis": {"b_spline": {"order": 2, "knots": [0.0, 0.0, 0.5, 1.0, 1.0]}},
        "true_beta": [2.0, -1.0, 3.0],
        "true_tau": [-0.5, 0.5],
        "curve_generator": {"random_coefficients": {"mean": [0.0, 0.0, 0.0], "sd": [1.0, 1.0, 1.0]}},
        "noise_sd": 0.1,
        "sampling_times": {"uniform": {"count": 25}},
        "seed": 99
    });
    fs::write(dir.path("spec.json"), serde_json::to_string_pretty(&spec).unwrap()).unwrap();

    let run = |tag: &str| {
        let out = folr_cmd(&[
            "simulate",
            "--spec",
            &arg(&dir.path("spec.json")),
            "--out-curves",
            &arg(&dir.path(&format!("curves-{tag}.csv"))),
            "--out-labels",
            &arg(&dir.path(&format!("labels-{tag}.csv"))),
        ]);
        assert_exit(&out, 0);
    };
    run("a");
    run("b");
    assert_eq!(
        fs::read(dir.path("curves-a.csv")).unwrap(),
        fs::read(dir.path("curves-b.csv")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path("labels-a.csv")).unwrap(),
        fs::read(dir.path("labels-b.csv")).unwrap()
    );

    // Broken spec: beta length mismatch.
    let bad = serde_json::json!({
        "n_curves": 30,
        "n_classes": 3,
        "curve_basis": {"b_spline": {"order": 2, "knots": [0.0, 0.0, 0.5, 1.0, 1.0]}},
        "beta_basis": {"b_spline": {"order": 2, "knots": [0.0, 0.0, 0.5, 1.0, 1.0]}},
        "true_beta": [2.0],
        "true_tau": [-0.5, 0.5],
        "curve_generator": {"random_coefficients": {"mean": [0.0, 0.0, 0.0], "sd": [1.0, 1.0, 1.0]}},
        "noise_sd": 0.1,
        "sampling_times": {"uniform": {"count": 25}},
        "seed": 99
    });
    fs::write(dir.path("bad.json"), serde_json::to_string(&bad).unwrap()).unwrap();
    let out = folr_cmd(&[
        "simulate",
        "--spec",
        &arg(&dir.path("bad.json")),
        "--out-curves",
        &arg(&dir.path("c.csv")),
        "--out-labels",
        &arg(&dir.path("l.csv")),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn bad_label_file_is_a_data_error() {
    let dir = TempDir::new("bad-labels");
    let basis = BasisSpec::bspline_uniform(2, 4, 1.0).unwrap();
    write_in_space_curves(&dir.path("curves.csv"), &basis, 6, 20, 12);
    fs::write(dir.path("labels.csv"), "curve_id,label\nc000,0\n").unwrap();
    let out = folr_cmd(&[
        "crossval",
        "--curves",
        &arg(&dir.path("curves.csv")),
        "--labels",
        &arg(&dir.path("labels.csv")),
        "--k",
        "2",
        "--out-dir",
        &arg(&dir.path("cv")),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn unjoinable_ids_are_a_data_error() {
    let dir = TempDir::new("unjoinable");
    let basis = BasisSpec::bspline_uniform(2, 4, 1.0).unwrap();
    write_in_space_curves(&dir.path("curves.csv"), &basis, 6, 20, 13);
    fs::write(dir.path("labels.csv"), "curve_id,label\nzzz,1\n").unwrap();
    let out = folr_cmd(&[
        "crossval",
        "--curves",
        &arg(&dir.path("curves.csv")),
        "--labels",
        &arg(&dir.path("labels.csv")),
        "--k",
        "2",
        "--out-dir",
        &arg(&dir.path("cv")),
    ]);
    assert_exit(&out, 2);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("zzz"), "offenders listed: {stderr}");
}
