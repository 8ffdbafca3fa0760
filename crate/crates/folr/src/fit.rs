//! Reduction of the functional model to a multivariate ordinal model, and
//! its (penalized) maximum-likelihood estimation.
//!
//! With curves `X_i = a_i' psi` and a coefficient function `beta = b' phi`,
//! the inner product `<X_i, beta>` collapses to `a_i' R b` through the Gram
//! matrix `R`, so fitting reduces to an ordinary cumulative-logit regression
//! on `x~_i = a_i' R`.
//!
//! Estimation minimizes `NLL(tau, b) + lambda * N * |b|_1`. Thresholds are
//! never penalized. Strict threshold ordering is maintained unconditionally
//! by optimizing `(tau_1, log(tau_2 - tau_1), ...)`.
//!
//! The smooth problem (`lambda = 0`) is solved by damped Newton steps with
//! Armijo backtracking (factor 0.5, c = 1e-4), falling back to ridge-damped
//! directions whenever the transformed Hessian is not positive definite.
//! The L1 problem is solved by proximal (soft-threshold) gradient steps with
//! a Barzilai-Borwein step estimate, safeguarded by backtracking on the
//! quadratic majorization bound. Either way the objective never increases
//! across accepted steps, and convergence is declared on the infinity norm
//! of the minimal-norm subgradient in the original `(tau, b)` coordinates.

use thiserror::Error;

use crate::basis::{gram, BasisError, BasisSpec, FunctionalSample, GramMatrix};
use crate::linalg::{dot, linf_norm, Mat};
use crate::ordinal::{
    class_probs, linear_predictor, logit, neg_log_likelihood, nll_gradient, predict_lad,
    predict_mode, ClassDistribution, OrdinalError, OrdinalModel, Thresholds,
};

#[derive(Error, Debug)]
pub enum FitError {
    #[error(transparent)]
    Basis(#[from] BasisError),

    #[error(transparent)]
    Ordinal(#[from] OrdinalError),

    #[error("samples use mixed curve bases")]
    MixedBases,

    #[error("nothing to fit: empty sample list")]
    EmptyDesign,

    #[error("class {class} of {k} never appears in the labels")]
    MissingClass { class: usize, k: usize },

    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
}

/// Optimizer and penalty settings.
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// L1 penalty weight; the objective adds `lasso_lambda * N * |b|_1` so
    /// the value is comparable across dataset sizes.
    pub lasso_lambda: f64,
    pub max_iters: usize,
    /// Convergence threshold on the minimal-norm subgradient (the plain
    /// gradient when `lasso_lambda = 0`) in the original `(tau, b)`
    /// coordinates, infinity norm.
    pub grad_tol: f64,
    /// Trial step for the very first iteration; later steps come from a
    /// Barzilai-Borwein estimate, always safeguarded by backtracking.
    pub step_init: f64,
    /// Spacing of the fallback equally-spaced threshold initialization, used
    /// only when the empirical cumulative frequencies cannot be inverted.
    pub threshold_init_spread: f64,
    /// Standardize covariate columns to mean 0 / sd 1 before fitting and
    /// back-transform the solution. Off by default; useful when Gram-reduced
    /// covariates have wildly different scales.
    pub standardize: bool,
    /// Recorded in fit metadata; the optimizer itself is deterministic.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lasso_lambda: 0.0,
            max_iters: 10_000,
            grad_tol: 1e-6,
            step_init: 1.0,
            threshold_init_spread: 1.0,
            standardize: false,
            seed: 0,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<(), FitError> {
        if !(self.lasso_lambda >= 0.0) || !self.lasso_lambda.is_finite() {
            return Err(FitError::InvalidConfig(format!(
                "lasso_lambda must be finite and >= 0, got {}",
                self.lasso_lambda
            )));
        }
        for (name, v) in [
            ("grad_tol", self.grad_tol),
            ("step_init", self.step_init),
            ("threshold_init_spread", self.threshold_init_spread),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(FitError::InvalidConfig(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if self.max_iters == 0 {
            return Err(FitError::InvalidConfig("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// The N x M matrix of reduced covariates together with the Gram matrix and
/// the two bases it ties together.
#[derive(Debug, Clone)]
pub struct ReducedDesign {
    xt: Mat,
    gram: GramMatrix,
}

impl ReducedDesign {
    pub fn xt(&self) -> &Mat {
        &self.xt
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn curve_basis(&self) -> &BasisSpec {
        self.gram.row_basis()
    }

    pub fn beta_basis(&self) -> &BasisSpec {
        self.gram.col_basis()
    }

    pub fn n_samples(&self) -> usize {
        self.xt.rows()
    }
}

/// Computes the reduced design `x~_i = a_i' R` for samples sharing one curve
/// basis.
pub fn reduce(samples: &[FunctionalSample], beta_basis: &BasisSpec) -> Result<ReducedDesign, FitError> {
    let first = samples.first().ok_or(FitError::EmptyDesign)?;
    if samples.iter().any(|s| s.basis() != first.basis()) {
        return Err(FitError::MixedBases);
    }
    let gram = gram(first.basis(), beta_basis)?;
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| gram.reduce(s.coefficients())).collect();
    Ok(ReducedDesign { xt: Mat::from_rows(&rows), gram })
}

/// Row subset of a reduced design (for cross-validation splits); the Gram
/// matrix and bases are shared unchanged.
pub fn reduce_rows(design: &ReducedDesign, rows: &[usize]) -> ReducedDesign {
    let picked: Vec<Vec<f64>> = rows.iter().map(|&i| design.xt.row(i).to_vec()).collect();
    ReducedDesign { xt: Mat::from_rows(&picked), gram: design.gram.clone() }
}

/// Which estimator produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Mle,
    Lasso,
}

/// Fit diagnostics reported alongside the parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitDiagnostics {
    pub final_nll: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Indices of nonzero coefficients; present only for L1 fits.
    pub active_set: Option<Vec<usize>>,
    pub warnings: Vec<String>,
}

/// A fitted multivariate ordinal model (no functional structure attached).
#[derive(Debug, Clone)]
pub struct OrdinalFit {
    pub model: OrdinalModel,
    pub diagnostics: FitDiagnostics,
    /// Objective value after every accepted step, kept for invariant checks.
    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) objective_trace: Vec<f64>,
}

/// A fitted functional ordinal model: parameters plus the bases and Gram
/// matrix needed to score new curves.
#[derive(Debug, Clone)]
pub struct FittedFolr {
    model: OrdinalModel,
    gram: GramMatrix,
    kind: FitKind,
    lasso_lambda: f64,
    seed: u64,
    diagnostics: FitDiagnostics,
}

impl FittedFolr {
    pub(crate) fn from_parts(
        model: OrdinalModel,
        gram: GramMatrix,
        kind: FitKind,
        lasso_lambda: f64,
        seed: u64,
        diagnostics: FitDiagnostics,
    ) -> Self {
        Self { model, gram, kind, lasso_lambda, seed, diagnostics }
    }

    /// Assembles a fitted model from externally obtained parameters,
    /// computing the Gram matrix from the two bases and checking that the
    /// coefficient vector matches the coefficient-function basis.
    pub fn new(
        model: OrdinalModel,
        curve_basis: &BasisSpec,
        beta_basis: &BasisSpec,
        kind: FitKind,
        lasso_lambda: f64,
        seed: u64,
        diagnostics: FitDiagnostics,
    ) -> Result<Self, FitError> {
        if model.coefficients().len() != beta_basis.size() {
            return Err(FitError::InvalidConfig(format!(
                "{} coefficients for a beta basis of size {}",
                model.coefficients().len(),
                beta_basis.size()
            )));
        }
        let gram = gram(curve_basis, beta_basis)?;
        Ok(Self::from_parts(model, gram, kind, lasso_lambda, seed, diagnostics))
    }

    pub fn model(&self) -> &OrdinalModel {
        &self.model
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn curve_basis(&self) -> &BasisSpec {
        self.gram.row_basis()
    }

    pub fn beta_basis(&self) -> &BasisSpec {
        self.gram.col_basis()
    }

    pub fn kind(&self) -> FitKind {
        self.kind
    }

    pub fn lasso_lambda(&self) -> f64 {
        self.lasso_lambda
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }

    /// Reduced covariate vector of one sample.
    pub fn reduce_sample(&self, sample: &FunctionalSample) -> Result<Vec<f64>, FitError> {
        if sample.basis() != self.gram.row_basis() {
            return Err(FitError::MixedBases);
        }
        Ok(self.gram.reduce(sample.coefficients()))
    }
}

/// Unpenalized maximum likelihood on a reduced design.
pub fn fit_mle(design: &ReducedDesign, ys: &[usize], cfg: &FitConfig) -> Result<FittedFolr, FitError> {
    if cfg.lasso_lambda != 0.0 {
        return Err(FitError::InvalidConfig(format!(
            "fit_mle requires lasso_lambda = 0, got {}",
            cfg.lasso_lambda
        )));
    }
    let fit = fit_ordinal(design.xt(), ys, cfg)?;
    Ok(FittedFolr::from_parts(fit.model, design.gram().clone(), FitKind::Mle, 0.0, cfg.seed, fit.diagnostics))
}

/// L1-penalized maximum likelihood on a reduced design. Thresholds are not
/// penalized; coefficients shrunk by the soft-threshold step come out as
/// exact zeros and are reported through the active set.
pub fn fit_lasso(design: &ReducedDesign, ys: &[usize], cfg: &FitConfig) -> Result<FittedFolr, FitError> {
    if !(cfg.lasso_lambda > 0.0) {
        return Err(FitError::InvalidConfig(format!(
            "fit_lasso requires lasso_lambda > 0, got {}",
            cfg.lasso_lambda
        )));
    }
    let fit = fit_ordinal(design.xt(), ys, cfg)?;
    Ok(FittedFolr::from_parts(
        fit.model,
        design.gram().clone(),
        FitKind::Lasso,
        cfg.lasso_lambda,
        cfg.seed,
        fit.diagnostics,
    ))
}

/// Warm-started fits along a sequence of penalty weights (typically
/// decreasing from `lambda_max`).
pub fn lasso_path(
    design: &ReducedDesign,
    ys: &[usize],
    lambdas: &[f64],
    cfg: &FitConfig,
) -> Result<Vec<FittedFolr>, FitError> {
    let mut out = Vec::with_capacity(lambdas.len());
    let mut warm: Option<(Vec<f64>, Vec<f64>)> = None;
    for &lambda in lambdas {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(FitError::InvalidConfig(format!("path lambda must be > 0, got {lambda}")));
        }
        let mut step_cfg = cfg.clone();
        step_cfg.lasso_lambda = lambda;
        let fit = fit_ordinal_impl(design.xt(), ys, &step_cfg, warm.clone())?;
        warm = Some(fit.warm_state.clone());
        out.push(FittedFolr::from_parts(
            fit.fit.model,
            design.gram().clone(),
            FitKind::Lasso,
            lambda,
            cfg.seed,
            fit.fit.diagnostics,
        ));
    }
    Ok(out)
}

/// Smallest penalty weight at which every coefficient is exactly zero: the
/// infinity norm of the coefficient gradient at the thresholds-only MLE,
/// divided by N (the KKT bound for the scaled L1 objective).
pub fn lasso_lambda_max(design: &ReducedDesign, ys: &[usize], cfg: &FitConfig) -> Result<f64, FitError> {
    lambda_max_on(design.xt(), ys, cfg)
}

/// `lasso_lambda_max` for a plain design matrix.
pub fn lambda_max_on(xs: &Mat, ys: &[usize], cfg: &FitConfig) -> Result<f64, FitError> {
    let mut thr_cfg = cfg.clone();
    thr_cfg.lasso_lambda = 0.0;
    let empty = Mat::zeros(xs.rows(), 0);
    let thresholds_only = fit_ordinal(&empty, ys, &thr_cfg)?;
    let prepared = PreparedDesign::new(xs, cfg.standardize);
    let model = OrdinalModel::new(
        thresholds_only.model.thresholds().clone(),
        vec![0.0; xs.cols()],
    )?;
    let (_, grad_b) = nll_gradient(&model, &prepared.mat, ys)?;
    Ok(linf_norm(&grad_b) / xs.rows() as f64)
}

/// Fits the cumulative-logit model on a plain design matrix (used directly
/// by scalar-covariate baselines and thresholds-only fits).
pub fn fit_ordinal(xs: &Mat, ys: &[usize], cfg: &FitConfig) -> Result<OrdinalFit, FitError> {
    Ok(fit_ordinal_impl(xs, ys, cfg, None)?.fit)
}

/// Values of `beta(t) = sum_m b_m phi_m(t)` on a grid.
pub fn reconstruct_beta(fit: &FittedFolr, grid: &[f64]) -> Result<Vec<f64>, FitError> {
    let basis = fit.beta_basis();
    let b = fit.model.coefficients();
    grid.iter().map(|&t| Ok(dot(b, &basis.eval(t)?))).collect()
}

/// Decision rule used for prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionRule {
    /// Most probable class (optimal under 0-1 cost).
    Mode,
    /// Threshold-interval lookup (optimal under absolute-difference cost).
    Lad,
}

/// Predicted class plus the class distribution for reporting.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub class: usize,
    pub distribution: ClassDistribution,
}

/// Predicted class only. The LAD branch computes the reduced covariate and a
/// threshold lookup, never touching probabilities.
pub fn predict_class(fit: &FittedFolr, sample: &FunctionalSample, rule: DecisionRule) -> Result<usize, FitError> {
    let xt = fit.reduce_sample(sample)?;
    let g = linear_predictor(&fit.model, &xt)?;
    Ok(match rule {
        DecisionRule::Lad => predict_lad(&fit.model, g),
        DecisionRule::Mode => predict_mode(&class_probs(&fit.model, g)?),
    })
}

/// Predicted class together with the full class distribution.
pub fn predict(fit: &FittedFolr, sample: &FunctionalSample, rule: DecisionRule) -> Result<Prediction, FitError> {
    let class = predict_class(fit, sample, rule)?;
    let xt = fit.reduce_sample(sample)?;
    let g = linear_predictor(&fit.model, &xt)?;
    Ok(Prediction { class, distribution: class_probs(&fit.model, g)? })
}

/// Soft-threshold operator `sign(v) * max(|v| - t, 0)`, the proximal map of
/// `t * |.|`.
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Optimizer internals
// ---------------------------------------------------------------------------

struct PreparedDesign {
    mat: Mat,
    mean: Vec<f64>,
    scale: Vec<f64>,
    standardized: bool,
}

impl PreparedDesign {
    fn new(xs: &Mat, standardize: bool) -> Self {
        let (n, m) = (xs.rows(), xs.cols());
        if !standardize || n == 0 || m == 0 {
            return Self {
                mat: xs.clone(),
                mean: vec![0.0; m],
                scale: vec![1.0; m],
                standardized: false,
            };
        }
        let mut mean = vec![0.0; m];
        for i in 0..n {
            for (mu, &x) in mean.iter_mut().zip(xs.row(i)) {
                *mu += x;
            }
        }
        for mu in &mut mean {
            *mu /= n as f64;
        }
        let mut var = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                let d = xs.get(i, j) - mean[j];
                var[j] += d * d;
            }
        }
        let scale: Vec<f64> = var
            .iter()
            .map(|v| {
                let sd = (v / n as f64).sqrt();
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect();
        let mut mat = Mat::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                mat.set(i, j, (xs.get(i, j) - mean[j]) / scale[j]);
            }
        }
        Self { mat, mean, scale, standardized: true }
    }

    /// Maps a solution in standardized coordinates back to the original ones.
    fn back_transform(&self, tau: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        if !self.standardized {
            return (tau.to_vec(), b.to_vec());
        }
        let shift: f64 = b
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(bs, (mu, sd))| bs * mu / sd)
            .sum();
        let tau_orig = tau.iter().map(|t| t + shift).collect();
        let b_orig = b.iter().zip(&self.scale).map(|(bs, sd)| bs / sd).collect();
        (tau_orig, b_orig)
    }
}

/// Threshold reparameterization `theta = (tau_1, log(tau_2 - tau_1), ...)`.
fn theta_from_tau(tau: &[f64]) -> Vec<f64> {
    let mut theta = Vec::with_capacity(tau.len());
    theta.push(tau[0]);
    for w in tau.windows(2) {
        theta.push((w[1] - w[0]).ln());
    }
    theta
}

/// Inverse map; `None` when the result would not be strictly increasing and
/// finite (oversized trial steps land here and get backtracked).
fn tau_from_theta(theta: &[f64]) -> Option<Vec<f64>> {
    let mut tau = Vec::with_capacity(theta.len());
    let mut t = theta[0];
    if !t.is_finite() {
        return None;
    }
    tau.push(t);
    for &th in &theta[1..] {
        let gap = th.exp();
        if !(gap > 0.0) || !gap.is_finite() {
            return None;
        }
        t += gap;
        if !t.is_finite() || t <= *tau.last().unwrap() {
            return None;
        }
        tau.push(t);
    }
    Some(tau)
}

/// Pulls a gradient in `tau` back to `theta` coordinates: `theta_1` moves
/// every threshold, `theta_j` moves `tau_j..` by `exp(theta_j)`.
fn chain_to_theta(grad_tau: &[f64], theta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grad_tau.len()];
    let mut suffix = 0.0;
    for j in (0..grad_tau.len()).rev() {
        suffix += grad_tau[j];
        out[j] = if j == 0 { suffix } else { theta[j].exp() * suffix };
    }
    out
}

struct ImplFit {
    fit: OrdinalFit,
    /// `(theta, b)` in prepared (possibly standardized) coordinates, for
    /// warm-starting path fits.
    warm_state: (Vec<f64>, Vec<f64>),
}

/// Hessian of the NLL in `(tau, b)` coordinates.
///
/// Writing `u1 = tau_y - g` and `u0 = tau_{y-1} - g` for one observation and
/// using `f = F(1-F)`, `f' = f(1-2F)` for the logistic density, each term
/// `-log(F(u1) - F(u0))` contributes
/// `A du1 du1' + B du0 du0' + C (du1 du0' + du0 du1')` with
/// `A = -f1'/pi + (f1/pi)^2`, `B = f0'/pi + (f0/pi)^2`, `C = -f1 f0 / pi^2`.
/// Boundary labels contribute nothing through the infinite threshold since
/// its density terms are zero.
fn nll_hessian(model: &OrdinalModel, xs: &Mat, ys: &[usize]) -> Mat {
    let tau = model.thresholds().tau();
    let k = model.n_classes();
    let m = model.coefficients().len();
    let dim = (k - 1) + m;
    let mut h = Mat::zeros(dim, dim);

    for (i, &y) in ys.iter().enumerate() {
        let row = xs.row(i);
        let g = dot(row, model.coefficients());
        let (big_f1, f1, f1p) = if y == k {
            (1.0, 0.0, 0.0)
        } else {
            let big_f = crate::ordinal::logistic(tau[y - 1] - g);
            let f = big_f * (1.0 - big_f);
            (big_f, f, f * (1.0 - 2.0 * big_f))
        };
        let (big_f0, f0, f0p) = if y == 1 {
            (0.0, 0.0, 0.0)
        } else {
            let big_f = crate::ordinal::logistic(tau[y - 2] - g);
            let f = big_f * (1.0 - big_f);
            (big_f, f, f * (1.0 - 2.0 * big_f))
        };
        let pi = (big_f1 - big_f0).max(1e-300);
        let a = -f1p / pi + (f1 / pi) * (f1 / pi);
        let bb = f0p / pi + (f0 / pi) * (f0 / pi);
        let c = -f1 * f0 / (pi * pi);

        let hi = (y < k).then(|| y - 1);
        let lo = (y > 1).then(|| y - 2);
        if let Some(hi) = hi {
            h.set(hi, hi, h.get(hi, hi) + a);
        }
        if let Some(lo) = lo {
            h.set(lo, lo, h.get(lo, lo) + bb);
        }
        if let (Some(hi), Some(lo)) = (hi, lo) {
            h.set(hi, lo, h.get(hi, lo) + c);
            h.set(lo, hi, h.get(lo, hi) + c);
        }

        // Cross block: row tau_y picks up (A + C)(-x), row tau_{y-1} (B + C)(-x).
        for (j, &x) in row.iter().enumerate() {
            let col = (k - 1) + j;
            if let Some(hi) = hi {
                let v = (a + c) * -x;
                h.set(hi, col, h.get(hi, col) + v);
                h.set(col, hi, h.get(col, hi) + v);
            }
            if let Some(lo) = lo {
                let v = (bb + c) * -x;
                h.set(lo, col, h.get(lo, col) + v);
                h.set(col, lo, h.get(col, lo) + v);
            }
        }

        // Coefficient block: (A + B + 2C) x x'.
        let w = a + bb + 2.0 * c;
        if w != 0.0 {
            for (j1, &x1) in row.iter().enumerate() {
                if x1 == 0.0 {
                    continue;
                }
                for (j2, &x2) in row.iter().enumerate() {
                    let (r, s) = ((k - 1) + j1, (k - 1) + j2);
                    h.set(r, s, h.get(r, s) + w * x1 * x2);
                }
            }
        }
    }
    h
}

/// Candidate descent directions at escalating Levenberg damping levels,
/// ending in plain steepest descent. The caller line-searches each in turn;
/// escalation is what keeps near-singular Hessians from producing wildly
/// scaled steps that no step size can rescue.
fn damped_directions(hessian: &Mat, grad: &[f64]) -> Vec<Vec<f64>> {
    let dim = hessian.rows();
    let trace: f64 = (0..dim).map(|i| hessian.get(i, i)).sum::<f64>().max(1e-12);
    let mut out = Vec::new();
    for ridge in [0.0, 1e-8, 1e-4, 1e-1, 10.0] {
        let mut damped = hessian.clone();
        let mu = ridge * trace / dim as f64;
        for i in 0..dim {
            damped.set(i, i, damped.get(i, i) + mu);
        }
        if let Some(l) = crate::linalg::cholesky(&damped, 1e-14) {
            let d = crate::linalg::cholesky_solve(&l, grad);
            out.push(d.iter().map(|v| -v).collect());
        }
    }
    out.push(grad.iter().map(|g| -g).collect());
    out
}

/// Pulls the `(tau, b)` Hessian back to `(theta, b)` coordinates:
/// `H_theta = J' H J + D` on the threshold block, where `J` is the Jacobian
/// of the reparameterization and `D` its curvature weighted by the tau
/// gradient.
fn hessian_in_theta(
    model: &OrdinalModel,
    xs: &Mat,
    ys: &[usize],
    theta: &[f64],
    grad_tau: &[f64],
) -> Result<Mat, FitError> {
    let h = nll_hessian(model, xs, ys);
    let kk = theta.len();
    let m = model.coefficients().len();
    let dim = kk + m;

    // J[l][0] = 1; J[l][j] = exp(theta_j) for l >= j (j >= 1).
    let jac = {
        let mut jac = Mat::zeros(kk, kk);
        for l in 0..kk {
            jac.set(l, 0, 1.0);
            for j in 1..=l {
                jac.set(l, j, theta[j].exp());
            }
        }
        jac
    };

    let mut out = Mat::zeros(dim, dim);
    // Threshold block: J' H_tt J + D.
    for p in 0..kk {
        for q in 0..kk {
            let mut acc = 0.0;
            for l in 0..kk {
                if jac.get(l, p) == 0.0 {
                    continue;
                }
                for r in 0..kk {
                    acc += jac.get(l, p) * h.get(l, r) * jac.get(r, q);
                }
            }
            out.set(p, q, acc);
        }
    }
    for j in 1..kk {
        let suffix: f64 = grad_tau[j..].iter().sum();
        out.set(j, j, out.get(j, j) + theta[j].exp() * suffix);
    }
    // Cross block: J' H_tb, coefficient block copied through.
    for p in 0..kk {
        for q in 0..m {
            let mut acc = 0.0;
            for l in 0..kk {
                acc += jac.get(l, p) * h.get(l, kk + q);
            }
            out.set(p, kk + q, acc);
            out.set(kk + q, p, acc);
        }
    }
    for p in 0..m {
        for q in 0..m {
            out.set(kk + p, kk + q, h.get(kk + p, kk + q));
        }
    }
    Ok(out)
}

fn fit_ordinal_impl(
    xs: &Mat,
    ys: &[usize],
    cfg: &FitConfig,
    warm: Option<(Vec<f64>, Vec<f64>)>,
) -> Result<ImplFit, FitError> {
    cfg.validate()?;
    let n = xs.rows();
    let m = xs.cols();
    if n == 0 || ys.len() != n {
        return Err(FitError::EmptyDesign);
    }
    let k = *ys.iter().max().unwrap();
    if k < 2 {
        return Err(FitError::InvalidConfig("labels must cover at least 2 classes".into()));
    }
    let mut counts = vec![0usize; k];
    for &y in ys {
        if y < 1 {
            return Err(OrdinalError::LabelOutOfRange { label: y, k }.into());
        }
        counts[y - 1] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(FitError::MissingClass { class: missing + 1, k });
    }

    let mut warnings = Vec::new();
    if n <= m + k - 1 {
        warnings.push(format!(
            "only {n} observations for {} free parameters; estimates will be unstable",
            m + k - 1
        ));
    }

    let prepared = PreparedDesign::new(xs, cfg.standardize);
    let lambda_n = cfg.lasso_lambda * n as f64;

    // Initialization: thresholds from the empirical cumulative frequencies
    // (the exact thresholds-only MLE), coefficients at zero.
    let (mut theta, mut b) = match warm {
        Some((theta, b)) if theta.len() == k - 1 && b.len() == m => (theta, b),
        _ => {
            let mut cum = 0.0;
            let mut tau = Vec::with_capacity(k - 1);
            for &c in counts.iter().take(k - 1) {
                cum += c as f64;
                tau.push(logit(cum / n as f64));
            }
            if tau.iter().any(|t| !t.is_finite()) || tau.windows(2).any(|w| w[0] >= w[1]) {
                let spread = cfg.threshold_init_spread;
                tau = (0..k - 1).map(|j| spread * (j as f64 - (k - 2) as f64 / 2.0)).collect();
            }
            (theta_from_tau(&tau), vec![0.0; m])
        }
    };

    // NLL as a function of the working parameters; +inf for infeasible points.
    let objective_nll = |theta: &[f64], b: &[f64]| -> f64 {
        let Some(tau) = tau_from_theta(theta) else { return f64::INFINITY };
        let Ok(thresholds) = Thresholds::new(tau) else { return f64::INFINITY };
        let Ok(model) = OrdinalModel::new(thresholds, b.to_vec()) else {
            return f64::INFINITY;
        };
        neg_log_likelihood(&model, &prepared.mat, ys).unwrap_or(f64::INFINITY)
    };
    let penalty = |b: &[f64]| -> f64 { lambda_n * b.iter().map(|v| v.abs()).sum::<f64>() };

    let gradient = |theta: &[f64], b: &[f64]| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), FitError> {
        let tau = tau_from_theta(theta).expect("gradient evaluated at a feasible point");
        let model = OrdinalModel::new(Thresholds::new(tau)?, b.to_vec())?;
        let (grad_tau, grad_b) = nll_gradient(&model, &prepared.mat, ys)?;
        Ok((chain_to_theta(&grad_tau, theta), grad_tau, grad_b))
    };

    // Minimal-norm subgradient of NLL + lambda_n |b|_1 in the original
    // (tau, b) coordinates; the convergence measure.
    let kkt_residual = |grad_tau: &[f64], grad_b: &[f64], b: &[f64]| -> f64 {
        let mut r = linf_norm(grad_tau);
        for (gb, &bv) in grad_b.iter().zip(b) {
            let res = if lambda_n == 0.0 {
                gb.abs()
            } else if bv != 0.0 {
                (gb + lambda_n * bv.signum()).abs()
            } else {
                (gb.abs() - lambda_n).max(0.0)
            };
            r = r.max(res);
        }
        r
    };

    let mut nll = objective_nll(&theta, &b);
    if !nll.is_finite() {
        return Err(FitError::InvalidConfig("initial point has infinite negative log-likelihood".into()));
    }
    let (mut g_theta, mut g_tau, mut g_b) = gradient(&theta, &b)?;

    let mut objective_trace = vec![nll + penalty(&b)];
    let mut iterations = 0usize;
    let mut converged = false;
    let mut step = cfg.step_init;
    let mut prev_point: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut prev_grad: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut prox_support: Vec<usize> = Vec::new();
    let mut prox_streak = 0usize;
    let mut prox_since_polish = 0usize;

    while iterations < cfg.max_iters {
        if kkt_residual(&g_tau, &g_b, &b) <= cfg.grad_tol {
            converged = true;
            break;
        }

        let mut accepted = false;
        if lambda_n == 0.0 {
            // Damped Newton step in (theta, b), escalating the damping when
            // a ridge level yields no acceptable step.
            let tau = tau_from_theta(&theta).expect("iterate is feasible");
            let model = OrdinalModel::new(Thresholds::new(tau)?, b.to_vec())?;
            let h_theta = hessian_in_theta(&model, &prepared.mat, ys, &theta, &g_tau)?;
            let mut grad_full = Vec::with_capacity(h_theta.rows());
            grad_full.extend_from_slice(&g_theta);
            grad_full.extend_from_slice(&g_b);

            'directions: for direction in damped_directions(&h_theta, &grad_full) {
                let slope = dot(&grad_full, &direction);
                if !(slope < 0.0) {
                    continue;
                }
                let mut alpha = 1.0;
                for _ in 0..40 {
                    let trial_theta: Vec<f64> = theta
                        .iter()
                        .zip(&direction[..theta.len()])
                        .map(|(t, d)| t + alpha * d)
                        .collect();
                    let trial_b: Vec<f64> = b
                        .iter()
                        .zip(&direction[theta.len()..])
                        .map(|(v, d)| v + alpha * d)
                        .collect();
                    let trial_nll = objective_nll(&trial_theta, &trial_b);
                    // Armijo sufficient decrease along the damped direction.
                    if trial_nll <= nll + 1e-4 * alpha * slope {
                        theta = trial_theta;
                        b = trial_b;
                        nll = trial_nll;
                        let (gt, gtau, gb) = gradient(&theta, &b)?;
                        g_theta = gt;
                        g_tau = gtau;
                        g_b = gb;
                        accepted = true;
                        break 'directions;
                    }
                    alpha *= 0.5;
                    if alpha < 1e-18 {
                        break;
                    }
                }
            }
        } else {
            // Proximal gradient with a Barzilai-Borwein step estimate from
            // the last accepted move.
            if let (Some((pt, pb)), Some((gt_prev, gb_prev))) = (&prev_point, &prev_grad) {
                let mut ss = 0.0;
                let mut sy = 0.0;
                for ((&cur, &old), (&gc, &go)) in
                    theta.iter().zip(pt).zip(g_theta.iter().zip(gt_prev))
                {
                    let s = cur - old;
                    ss += s * s;
                    sy += s * (gc - go);
                }
                for ((&cur, &old), (&gc, &go)) in b.iter().zip(pb).zip(g_b.iter().zip(gb_prev)) {
                    let s = cur - old;
                    ss += s * s;
                    sy += s * (gc - go);
                }
                if sy > 0.0 && ss > 0.0 {
                    step = (ss / sy).clamp(1e-16, 1e16);
                }
            }

            for _ in 0..80 {
                let trial_theta: Vec<f64> =
                    theta.iter().zip(&g_theta).map(|(t, g)| t - step * g).collect();
                let trial_b: Vec<f64> = b
                    .iter()
                    .zip(&g_b)
                    .map(|(v, g)| soft_threshold(v - step * g, step * lambda_n))
                    .collect();
                let trial_nll = objective_nll(&trial_theta, &trial_b);

                // Quadratic majorization bound of proximal gradient; implies
                // a non-increasing penalized objective.
                let mut lin = 0.0;
                let mut sq = 0.0;
                for ((tt, t), g) in trial_theta.iter().zip(&theta).zip(&g_theta) {
                    let d = tt - t;
                    lin += g * d;
                    sq += d * d;
                }
                for ((tb, v), g) in trial_b.iter().zip(&b).zip(&g_b) {
                    let d = tb - v;
                    lin += g * d;
                    sq += d * d;
                }
                if trial_nll.is_finite() && trial_nll <= nll + lin + sq / (2.0 * step) {
                    prev_point = Some((theta.clone(), b.clone()));
                    prev_grad = Some((g_theta.clone(), g_b.clone()));
                    theta = trial_theta;
                    b = trial_b;
                    nll = trial_nll;
                    let (gt, gtau, gb) = gradient(&theta, &b)?;
                    g_theta = gt;
                    g_tau = gtau;
                    g_b = gb;
                    accepted = true;
                    break;
                }
                step *= 0.5;
                if step < 1e-18 {
                    break;
                }
            }

            // Once the soft-threshold steps stop changing the active set
            // (or periodically, when it keeps churning), polish with
            // sign-restricted Newton steps: on a fixed orthant the penalty
            // is linear and the problem smooth, which removes the slow
            // first-order tail near the optimum.
            if accepted {
                let support: Vec<usize> =
                    b.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect();
                if support == prox_support {
                    prox_streak += 1;
                } else {
                    prox_support = support;
                    prox_streak = 0;
                }
                prox_since_polish += 1;
                if prox_streak >= 4 || prox_since_polish >= 40 {
                    prox_streak = 0;
                    prox_since_polish = 0;
                    iterations += 1;
                    objective_trace.push(nll + penalty(&b));

                    let mut support = prox_support.clone();
                    let mut signs: Vec<f64> = support.iter().map(|&m| b[m].signum()).collect();
                    let kk = theta.len();
                    // Ill-conditioned endgames (quasi-separated fits) can
                    // drag restricted Newton out; after a bounded budget the
                    // soft-threshold phase takes over again.
                    let mut polish_budget = 50usize;
                    'polish: while iterations < cfg.max_iters && polish_budget > 0 {
                        polish_budget -= 1;
                        // Restricted stationarity: thresholds plus the fixed
                        // orthant's shifted coefficient gradient.
                        let mut restricted = linf_norm(&g_tau);
                        for (&m, &s) in support.iter().zip(&signs) {
                            restricted = restricted.max((g_b[m] + lambda_n * s).abs());
                        }
                        if restricted <= 0.5 * cfg.grad_tol {
                            break 'polish;
                        }

                        let tau = tau_from_theta(&theta).expect("iterate is feasible");
                        let model = OrdinalModel::new(Thresholds::new(tau)?, b.clone())?;
                        let h_full = hessian_in_theta(&model, &prepared.mat, ys, &theta, &g_tau)?;
                        let idx: Vec<usize> =
                            (0..kk).chain(support.iter().map(|&m| kk + m)).collect();
                        let dim = idx.len();
                        let mut h_sub = Mat::zeros(dim, dim);
                        for (p, &ip) in idx.iter().enumerate() {
                            for (q, &iq) in idx.iter().enumerate() {
                                h_sub.set(p, q, h_full.get(ip, iq));
                            }
                        }
                        let mut grad_sub = Vec::with_capacity(dim);
                        grad_sub.extend_from_slice(&g_theta);
                        for (&m, &s) in support.iter().zip(&signs) {
                            grad_sub.push(g_b[m] + lambda_n * s);
                        }

                        let mut polish_accepted = false;
                        let mut boundary_blocked = false;
                        'restricted_directions: for direction in
                            damped_directions(&h_sub, &grad_sub)
                        {
                            let slope = dot(&grad_sub, &direction);
                            if !(slope < 0.0) {
                                continue;
                            }
                            // Largest step keeping every active coefficient
                            // strictly inside its orthant.
                            let mut alpha_cap = f64::INFINITY;
                            for (pos, &m) in support.iter().enumerate() {
                                let d = direction[kk + pos];
                                if d * signs[pos] < 0.0 {
                                    alpha_cap = alpha_cap.min(-b[m] / d);
                                }
                            }
                            if alpha_cap <= 1e-12 {
                                boundary_blocked = true;
                                continue;
                            }
                            let mut alpha = (0.99 * alpha_cap).min(1.0);
                            for _ in 0..40 {
                                let trial_theta: Vec<f64> = theta
                                    .iter()
                                    .zip(&direction[..kk])
                                    .map(|(t, d)| t + alpha * d)
                                    .collect();
                                let mut trial_b = b.clone();
                                for (pos, &m) in support.iter().enumerate() {
                                    trial_b[m] += alpha * direction[kk + pos];
                                }
                                let trial_nll = objective_nll(&trial_theta, &trial_b);
                                let trial_obj = trial_nll + penalty(&trial_b);
                                let cur_obj = nll + penalty(&b);
                                if trial_obj <= cur_obj + 1e-4 * alpha * slope {
                                    theta = trial_theta;
                                    b = trial_b;
                                    nll = trial_nll;
                                    let (gt, gtau, gb) = gradient(&theta, &b)?;
                                    g_theta = gt;
                                    g_tau = gtau;
                                    g_b = gb;
                                    polish_accepted = true;
                                    break 'restricted_directions;
                                }
                                alpha *= 0.5;
                                if alpha < 1e-18 {
                                    break;
                                }
                            }
                        }

                        if !polish_accepted && boundary_blocked {
                            // Every usable direction drives some coefficient
                            // straight across zero: evict the boundary
                            // coefficients (they are numerically zero anyway)
                            // instead of bouncing back and forth with the
                            // soft-threshold phase.
                            let scale = linf_norm(&b).max(1.0);
                            let blocked: Vec<usize> = support
                                .iter()
                                .enumerate()
                                .filter(|&(_, &m)| b[m].abs() <= 1e-10 * scale)
                                .map(|(pos, _)| pos)
                                .collect();
                            if !blocked.is_empty() {
                                let saved_b = b.clone();
                                for &pos in &blocked {
                                    b[support[pos]] = 0.0;
                                }
                                let trial_nll = objective_nll(&theta, &b);
                                let cur_obj = nll + penalty(&saved_b);
                                if trial_nll + penalty(&b)
                                    <= cur_obj + 1e-10 * cur_obj.abs().max(1.0)
                                {
                                    for &pos in blocked.iter().rev() {
                                        support.remove(pos);
                                        signs.remove(pos);
                                    }
                                    nll = trial_nll;
                                    let (gt, gtau, gb) = gradient(&theta, &b)?;
                                    g_theta = gt;
                                    g_tau = gtau;
                                    g_b = gb;
                                    continue 'polish;
                                }
                                b = saved_b;
                            }
                        }
                        if !polish_accepted {
                            break 'polish;
                        }
                        iterations += 1;
                        objective_trace.push(nll + penalty(&b));
                    }

                    // The BB memory refers to the pre-polish landscape.
                    prev_point = None;
                    prev_grad = None;
                    continue;
                }
            }
        }

        if !accepted {
            // No acceptable step left at the floor of the line search; treat
            // the current iterate as final.
            break;
        }
        iterations += 1;
        objective_trace.push(nll + penalty(&b));
    }
    if kkt_residual(&g_tau, &g_b, &b) <= cfg.grad_tol {
        converged = true;
    }

    let tau_std = tau_from_theta(&theta).expect("final iterate is feasible");
    let (tau, b_orig) = prepared.back_transform(&tau_std, &b);
    let model = OrdinalModel::new(Thresholds::new(tau)?, b_orig)?;
    let final_nll = neg_log_likelihood(&model, xs, ys)?;

    if linf_norm(model.coefficients()) > 1e4 {
        warnings.push(
            "coefficient norm exceeds 1e4; the classes may be perfectly separated".to_string(),
        );
    }
    let active_set = (cfg.lasso_lambda > 0.0).then(|| {
        b.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect::<Vec<_>>()
    });

    Ok(ImplFit {
        fit: OrdinalFit {
            model,
            diagnostics: FitDiagnostics { final_nll, iterations, converged, active_set, warnings },
            objective_trace,
        },
        warm_state: (theta, b),
    })
}
