//! Subcommand implementations.

use std::collections::HashMap;

use folr::basis::{BasisSpec, FunctionalSample, RawCurve};
use folr::eval::{
    kfold, last_value_baseline, select_lasso_lambda, simulate as run_simulation, CvReport,
    EvalError, SyntheticSpec,
};
use folr::fit::{
    fit_lasso, fit_mle, fit_ordinal, reduce, reduce_rows, DecisionRule, FitConfig, FitKind,
    FittedFolr, ReducedDesign,
};
use folr::linalg::Mat;
use folr::ordinal::{class_probs, linear_predictor, predict_lad, predict_mode, OrdinalModel};
use folr::persist;

use crate::errors::CliError;
use crate::{
    ArmArg, BasisKindArg, CrossvalArgs, FitArgs, PredictArgs, RuleArg, SimulateArgs, SmoothArgs,
};

impl From<RuleArg> for DecisionRule {
    fn from(rule: RuleArg) -> Self {
        match rule {
            RuleArg::Lad => DecisionRule::Lad,
            RuleArg::Mode => DecisionRule::Mode,
        }
    }
}

fn build_basis(
    kind: BasisKindArg,
    size: usize,
    order: usize,
    t_max: f64,
) -> Result<BasisSpec, CliError> {
    if size == 0 {
        return Err(CliError::usage("basis size must be >= 1"));
    }
    match kind {
        BasisKindArg::Bspline => {
            if order == 0 {
                return Err(CliError::usage("B-spline order must be >= 1"));
            }
            if size < order {
                return Err(CliError::usage(format!(
                    "an order-{order} B-spline basis needs at least {order} functions, got {size}"
                )));
            }
            Ok(BasisSpec::bspline_uniform(order, size, t_max)?)
        }
        BasisKindArg::Monomial => Ok(BasisSpec::monomial(size as u32, t_max)?),
    }
}

fn domain_end(curves: &[RawCurve], requested: Option<f64>) -> Result<f64, CliError> {
    if let Some(t) = requested {
        if !(t > 0.0) || !t.is_finite() {
            return Err(CliError::usage(format!("--domain must be positive and finite, got {t}")));
        }
        return Ok(t);
    }
    let t_max = curves
        .iter()
        .flat_map(|c| c.times().iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    if !(t_max > 0.0) {
        return Err(CliError::Data(format!(
            "cannot infer a positive domain end from the data (largest time {t_max}); pass --domain"
        )));
    }
    Ok(t_max)
}

pub fn smooth(args: SmoothArgs) -> Result<(), CliError> {
    if !(args.lambda >= 0.0) || !args.lambda.is_finite() {
        return Err(CliError::usage(format!("--lambda must be finite and >= 0, got {}", args.lambda)));
    }
    let curves = persist::load_curves(&args.curves)?;
    if curves.is_empty() {
        return Err(CliError::Data(format!("{}: no curves", args.curves.display())));
    }
    let t_max = domain_end(&curves, args.domain)?;
    let spec = build_basis(args.basis, args.size, args.order, t_max)?;

    let mut rows = Vec::with_capacity(curves.len());
    for curve in &curves {
        let fit = folr::basis::smooth(curve, &spec, args.lambda)?;
        println!("smoothed {}: residual rms {:e}", curve.id(), fit.residual_rms);
        if fit.ridge_jitter > 0.0 {
            eprintln!(
                "note: curve {} needed a diagonal jitter of {:e} to factor the normal matrix",
                curve.id(),
                fit.ridge_jitter
            );
        }
        rows.push((curve.id().to_string(), fit.sample.coefficients().to_vec()));
    }
    persist::write_coeffs(&rows, spec.size(), &args.out)?;
    let basis_path = args
        .out_basis
        .clone()
        .unwrap_or_else(|| args.out.with_extension("basis.json"));
    persist::save_basis(&spec, &basis_path)?;
    println!("wrote {} coefficient rows to {}", rows.len(), args.out.display());
    println!("wrote basis to {}", basis_path.display());
    Ok(())
}

/// Joins coefficient rows with labels; both sides must match exactly.
fn join_coeffs_labels(
    coeffs: &[(String, Vec<f64>)],
    labels: &[(String, usize)],
) -> Result<Vec<usize>, CliError> {
    let label_map: HashMap<&str, usize> = labels.iter().map(|(id, y)| (id.as_str(), *y)).collect();
    let coeff_ids: std::collections::BTreeSet<&str> =
        coeffs.iter().map(|(id, _)| id.as_str()).collect();
    let missing_labels: Vec<String> = coeffs
        .iter()
        .map(|(id, _)| id.clone())
        .filter(|id| !label_map.contains_key(id.as_str()))
        .collect();
    let missing_curves: Vec<String> = labels
        .iter()
        .map(|(id, _)| id.clone())
        .filter(|id| !coeff_ids.contains(id.as_str()))
        .collect();
    if !missing_curves.is_empty() || !missing_labels.is_empty() {
        return Err(CliError::Data(format!(
            "coefficients and labels do not join: labels without coefficients {missing_curves:?}, coefficients without labels {missing_labels:?}"
        )));
    }
    Ok(coeffs.iter().map(|(id, _)| label_map[id.as_str()]).collect())
}

pub fn fit(args: FitArgs) -> Result<(), CliError> {
    if args.lasso.is_none() && !args.no_penalty {
        return Err(CliError::usage("choose a penalty: --lasso <WEIGHT> or --no-penalty"));
    }
    if let Some(lambda) = args.lasso {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(CliError::usage(format!("--lasso must be finite and > 0, got {lambda}")));
        }
    }

    let curve_basis = persist::load_basis(&args.curve_basis)?;
    let coeffs = persist::load_coeffs(&args.coeffs)?;
    if coeffs.is_empty() {
        return Err(CliError::Data(format!("{}: no coefficient rows", args.coeffs.display())));
    }
    let labels = persist::load_labels(&args.labels, None)?;
    let ys = join_coeffs_labels(&coeffs, &labels)?;

    let cfg = FitConfig {
        lasso_lambda: args.lasso.unwrap_or(0.0),
        standardize: args.standardize,
        seed: args.seed,
        ..FitConfig::default()
    };

    let fitted = if args.beta_size == 0 {
        // Thresholds-only model: fit on an empty design, persist with a zero
        // coefficient on a trivial basis so prediction still works.
        let xs = Mat::zeros(coeffs.len(), 0);
        let fit = fit_ordinal(&xs, &ys, &cfg)?;
        println!("thresholds: {}", join_floats(fit.model.thresholds().tau()));
        report_fit(&fit.model, &fit.diagnostics);
        let beta_basis = BasisSpec::monomial(1, curve_basis.domain_end())?;
        let model = OrdinalModel::new(fit.model.thresholds().clone(), vec![0.0])?;
        FittedFolr::new(model, &curve_basis, &beta_basis, FitKind::Mle, 0.0, args.seed, fit.diagnostics)?
    } else {
        let beta_basis =
            build_basis(args.beta_basis, args.beta_size, args.beta_order, curve_basis.domain_end())?;
        let samples = coeffs
            .iter()
            .map(|(_, c)| FunctionalSample::new(curve_basis.clone(), c.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let design = reduce(&samples, &beta_basis)?;
        let fitted = match args.lasso {
            Some(_) => fit_lasso(&design, &ys, &cfg)?,
            None => fit_mle(&design, &ys, &cfg)?,
        };
        println!("thresholds: {}", join_floats(fitted.model().thresholds().tau()));
        report_fit(fitted.model(), fitted.diagnostics());
        fitted
    };

    persist::save_model(&fitted, &args.out)?;
    println!("wrote model to {}", args.out.display());
    Ok(())
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", ")
}

fn report_fit(model: &OrdinalModel, diagnostics: &folr::fit::FitDiagnostics) {
    println!(
        "nll {:.6}, iterations {}, converged {}",
        diagnostics.final_nll, diagnostics.iterations, diagnostics.converged
    );
    if let Some(active) = &diagnostics.active_set {
        let names: Vec<String> = active.iter().map(|m| format!("b{}", m + 1)).collect();
        println!(
            "active set ({} of {}): [{}]",
            active.len(),
            model.coefficients().len(),
            names.join(", ")
        );
    }
    for warning in &diagnostics.warnings {
        eprintln!("warning: {warning}");
    }
}

pub fn predict(args: PredictArgs) -> Result<(), CliError> {
    let fitted = persist::load_model(&args.model)?;
    let coeffs = persist::load_coeffs(&args.coeffs)?;
    if coeffs.is_empty() {
        return Err(CliError::Data(format!("{}: no coefficient rows", args.coeffs.display())));
    }
    let ids: Vec<String> = coeffs.iter().map(|(id, _)| id.clone()).collect();
    let samples = coeffs
        .iter()
        .map(|(_, c)| FunctionalSample::new(fitted.curve_basis().clone(), c.clone()))
        .collect::<Result<Vec<_>, _>>()?;

    match args.rule {
        RuleArg::Lad => {
            // The fast path: reduced covariate plus a threshold lookup, no
            // probability evaluation anywhere.
            let classes = samples
                .iter()
                .map(|s| folr::fit::predict_class(&fitted, s, DecisionRule::Lad))
                .collect::<Result<Vec<_>, _>>()?;
            persist::write_predictions(&ids, &classes, None, &args.out)?;
        }
        RuleArg::Mode => {
            let mut classes = Vec::with_capacity(samples.len());
            let mut probs = Vec::with_capacity(samples.len());
            for s in &samples {
                let p = folr::fit::predict(&fitted, s, DecisionRule::Mode)?;
                classes.push(p.class);
                probs.push(p.distribution.probs().to_vec());
            }
            persist::write_predictions(&ids, &classes, Some(&probs), &args.out)?;
        }
    }
    println!("wrote {} predictions to {}", ids.len(), args.out.display());
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.spec)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.spec.display())))?;
    let spec: SyntheticSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: malformed spec: {e}", args.spec.display())))?;
    let (curves, labels) = run_simulation(&spec)?;
    persist::write_curves(&curves, &args.out_curves)?;
    let rows: Vec<(String, usize)> = curves
        .iter()
        .map(|c| c.id().to_string())
        .zip(labels.iter().copied())
        .collect();
    persist::write_labels(&rows, &args.out_labels)?;
    println!(
        "wrote {} curves to {} and labels to {}",
        curves.len(),
        args.out_curves.display(),
        args.out_labels.display()
    );
    Ok(())
}

fn sub_rows(mat: &Mat, rows: &[usize]) -> Mat {
    Mat::from_rows(&rows.iter().map(|&i| mat.row(i).to_vec()).collect::<Vec<_>>())
}

fn predict_from_linear(
    model: &OrdinalModel,
    x: &[f64],
    rule: DecisionRule,
) -> Result<usize, EvalError> {
    let g = linear_predictor(model, x)?;
    Ok(match rule {
        DecisionRule::Lad => predict_lad(model, g),
        DecisionRule::Mode => predict_mode(&class_probs(model, g)?),
    })
}

fn arm_name(arm: ArmArg) -> &'static str {
    match arm {
        ArmArg::LastValue => "last-value",
        ArmArg::Folr => "folr",
        ArmArg::FolrLasso => "folr-lasso",
    }
}

pub fn crossval(args: CrossvalArgs) -> Result<(), CliError> {
    if args.k < 2 {
        return Err(CliError::usage(format!("--k must be >= 2, got {}", args.k)));
    }
    if args.arms.is_empty() {
        return Err(CliError::usage("--arms must name at least one pipeline"));
    }
    if !(args.smooth_lambda >= 0.0) || !args.smooth_lambda.is_finite() {
        return Err(CliError::usage(format!(
            "--smooth-lambda must be finite and >= 0, got {}",
            args.smooth_lambda
        )));
    }
    // Canonical arm order, deduplicated.
    let mut arms = Vec::new();
    for arm in [ArmArg::LastValue, ArmArg::Folr, ArmArg::FolrLasso] {
        if args.arms.contains(&arm) {
            arms.push(arm);
        }
    }

    let curves = persist::load_curves(&args.curves)?;
    let labels = persist::load_labels(&args.labels, None)?;
    let ys = persist::join_curves_labels(&curves, &labels)?;
    let rule: DecisionRule = args.rule.into();

    let needs_functional = arms.iter().any(|a| matches!(a, ArmArg::Folr | ArmArg::FolrLasso));
    let functional_design: Option<ReducedDesign> = if needs_functional {
        let t_max = domain_end(&curves, args.domain)?;
        let curve_basis =
            build_basis(BasisKindArg::Bspline, args.curve_size, args.curve_order, t_max)?;
        let beta_basis =
            build_basis(BasisKindArg::Bspline, args.beta_size, args.beta_order, t_max)?;
        let samples = curves
            .iter()
            .map(|c| folr::basis::smooth(c, &curve_basis, args.smooth_lambda).map(|s| s.sample))
            .collect::<Result<Vec<_>, _>>()?;
        Some(reduce(&samples, &beta_basis)?)
    } else {
        None
    };

    let cfg = FitConfig { standardize: args.standardize, seed: args.seed, ..FitConfig::default() };
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.out_dir.display())))?;

    // Reports are buffered and written together after every arm has
    // completed, so a failing arm leaves no partial result set behind.
    let mut reports: Vec<(&'static str, CvReport)> = Vec::new();
    for arm in arms {
        let report: CvReport = match arm {
            ArmArg::LastValue => {
                let design = last_value_baseline(&curves);
                kfold(&ys, args.k, args.seed, |train, test| {
                    let train_ys: Vec<usize> = train.iter().map(|&i| ys[i]).collect();
                    let fit = fit_ordinal(&sub_rows(&design, train), &train_ys, &cfg)?;
                    test.iter()
                        .map(|&i| predict_from_linear(&fit.model, design.row(i), rule))
                        .collect()
                })?
            }
            ArmArg::Folr => {
                let design = functional_design.as_ref().unwrap();
                kfold(&ys, args.k, args.seed, |train, test| {
                    let train_ys: Vec<usize> = train.iter().map(|&i| ys[i]).collect();
                    let fit = fit_mle(&reduce_rows(design, train), &train_ys, &cfg)?;
                    test.iter()
                        .map(|&i| predict_from_linear(fit.model(), design.xt().row(i), rule))
                        .collect()
                })?
            }
            ArmArg::FolrLasso => {
                let design = functional_design.as_ref().unwrap();
                let inner_seed = args.seed.wrapping_add(1);
                kfold(&ys, args.k, args.seed, |train, test| {
                    let train_ys: Vec<usize> = train.iter().map(|&i| ys[i]).collect();
                    let train_design = reduce_rows(design, train);
                    let lambda =
                        select_lasso_lambda(&train_design, &train_ys, &cfg, rule, 5, inner_seed)?;
                    let fit = fit_lasso(
                        &train_design,
                        &train_ys,
                        &FitConfig { lasso_lambda: lambda, ..cfg.clone() },
                    )?;
                    test.iter()
                        .map(|&i| predict_from_linear(fit.model(), design.xt().row(i), rule))
                        .collect()
                })?
            }
        };
        reports.push((arm_name(arm), report));
    }

    let mut summary: Vec<(String, f64, f64)> = Vec::new();
    for (name, report) in &reports {
        persist::write_cv_report(report, args.out_dir.join(format!("cv_{name}.csv")))?;
        println!(
            "{name}: mean mae {:.6}, mean error rate {:.6}",
            report.mean_mae, report.mean_accuracy_error
        );
        summary.push((name.to_string(), report.mean_mae, report.mean_accuracy_error));
    }
    persist::write_summary(&summary, args.out_dir.join("summary.csv"))?;
    println!("wrote summary to {}", args.out_dir.join("summary.csv").display());
    Ok(())
}
