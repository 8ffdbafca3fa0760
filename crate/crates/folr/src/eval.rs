//! Synthetic data generation, stratified k-fold cross-validation, and the
//! two generalization metrics: mean absolute error and misclassification
//! rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, BasisSpec, RawCurve};
use crate::fit::FitError;
use crate::linalg::{dot, Mat};
use crate::ordinal::{OrdinalError, Thresholds};

#[derive(Error, Debug)]
pub enum EvalError {
    #[error(transparent)]
    Basis(#[from] BasisError),

    #[error(transparent)]
    Ordinal(#[from] OrdinalError),

    #[error(transparent)]
    Fit(#[from] FitError),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("cross-validation needs k >= 2, got {0}")]
    TooFewFolds(usize),

    #[error("class {class} has only {count} samples; every training split of a {k}-fold partition must still see it")]
    ClassTooSmall { class: usize, count: usize, k: usize },

    #[error("dataset size mismatch: {curves} curves vs {labels} labels")]
    SizeMismatch { curves: usize, labels: usize },

    #[error("labels must lie in 1..={k}, found {label}")]
    LabelOutOfRange { label: usize, k: usize },
}

/// How curve coefficients are drawn.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveGenerator {
    /// Independent Gaussian coefficients, one mean/sd pair per basis
    /// function.
    RandomCoefficients { mean: Vec<f64>, sd: Vec<f64> },
    /// A Gaussian bump of width `sd` around one of several prototype
    /// coefficient vectors, drawn uniformly.
    ClassMeans { means: Vec<Vec<f64>>, sd: f64 },
}

/// Sampling grid of the emitted raw curves.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingTimes {
    /// `count` points spread uniformly over the curve-basis domain.
    Uniform { count: usize },
    Explicit(Vec<f64>),
}

/// Everything needed to draw a reproducible synthetic dataset from the
/// latent-variable model: curves on a basis, `Y* = <X, beta> + eps` with
/// standard-logistic noise, labels by thresholding `Y*`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_curves: usize,
    pub n_classes: usize,
    pub curve_basis: BasisSpec,
    pub beta_basis: BasisSpec,
    /// Coefficients of the true coefficient function on `beta_basis`.
    pub true_beta: Vec<f64>,
    pub true_tau: Thresholds,
    pub curve_generator: CurveGenerator,
    /// Observation noise added to the sampled curve values.
    pub noise_sd: f64,
    pub sampling_times: SamplingTimes,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        self.curve_basis.validate()?;
        self.beta_basis.validate()?;
        if self.n_curves == 0 {
            return Err(EvalError::InvalidSpec("n_curves must be >= 1".into()));
        }
        if self.n_classes < 2 {
            return Err(EvalError::InvalidSpec("n_classes must be >= 2".into()));
        }
        if self.true_tau.n_classes() != self.n_classes {
            return Err(EvalError::InvalidSpec(format!(
                "{} thresholds do not make {} classes",
                self.true_tau.tau().len(),
                self.n_classes
            )));
        }
        if self.true_beta.len() != self.beta_basis.size() {
            return Err(EvalError::InvalidSpec(format!(
                "true_beta has {} coefficients for a beta basis of size {}",
                self.true_beta.len(),
                self.beta_basis.size()
            )));
        }
        if self.curve_basis.domain_end() != self.beta_basis.domain_end() {
            return Err(EvalError::InvalidSpec("curve and beta bases live on different domains".into()));
        }
        let r = self.curve_basis.size();
        match &self.curve_generator {
            CurveGenerator::RandomCoefficients { mean, sd } => {
                if mean.len() != r || sd.len() != r {
                    return Err(EvalError::InvalidSpec(format!(
                        "generator mean/sd must have length {r}"
                    )));
                }
                if sd.iter().any(|s| *s < 0.0) {
                    return Err(EvalError::InvalidSpec("generator sd must be >= 0".into()));
                }
            }
            CurveGenerator::ClassMeans { means, sd } => {
                if means.is_empty() || means.iter().any(|m| m.len() != r) {
                    return Err(EvalError::InvalidSpec(format!(
                        "class means must be nonempty vectors of length {r}"
                    )));
                }
                if *sd < 0.0 {
                    return Err(EvalError::InvalidSpec("generator sd must be >= 0".into()));
                }
            }
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(EvalError::InvalidSpec("noise_sd must be finite and >= 0".into()));
        }
        let times = self.resolve_times();
        if times.len() < 2 {
            return Err(EvalError::InvalidSpec("sampling grid needs at least 2 points".into()));
        }
        let t_max = self.curve_basis.domain_end();
        if times.iter().any(|&t| !(0.0..=t_max).contains(&t)) {
            return Err(EvalError::InvalidSpec("sampling grid leaves the basis domain".into()));
        }
        Ok(())
    }

    fn resolve_times(&self) -> Vec<f64> {
        match &self.sampling_times {
            SamplingTimes::Uniform { count } => {
                let t_max = self.curve_basis.domain_end();
                let n = (*count).max(2);
                (0..n).map(|i| t_max * (i as f64 / (n - 1) as f64)).collect()
            }
            SamplingTimes::Explicit(v) => v.clone(),
        }
    }
}

/// Standard-normal draw by Box-Muller; two uniforms per call keeps the
/// stream layout independent of any library sampler details.
fn draw_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Standard-logistic draw by inverse CDF.
fn draw_logistic(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    (u / (1.0 - u)).ln()
}

/// Draws curves and labels from the generative model. Fully deterministic
/// given the spec (including its seed).
pub fn simulate(spec: &SyntheticSpec) -> Result<(Vec<RawCurve>, Vec<usize>), EvalError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let times = spec.resolve_times();
    let gram = crate::basis::gram(&spec.curve_basis, &spec.beta_basis)?;
    let r = spec.curve_basis.size();

    let width = (spec.n_curves.max(2) - 1).ilog10() as usize + 1;
    let mut curves = Vec::with_capacity(spec.n_curves);
    let mut labels = Vec::with_capacity(spec.n_curves);
    for i in 0..spec.n_curves {
        let coeffs: Vec<f64> = match &spec.curve_generator {
            CurveGenerator::RandomCoefficients { mean, sd } => (0..r)
                .map(|j| mean[j] + sd[j] * draw_normal(&mut rng))
                .collect(),
            CurveGenerator::ClassMeans { means, sd } => {
                let pick = rng.gen_range(0..means.len());
                means[pick].iter().map(|m| m + sd * draw_normal(&mut rng)).collect()
            }
        };
        let g = dot(&gram.reduce(&coeffs), &spec.true_beta);
        let y_star = g + draw_logistic(&mut rng);
        labels.push(spec.true_tau.interval_class(y_star));

        let values: Vec<f64> = times
            .iter()
            .map(|&t| {
                let exact = dot(&coeffs, &spec.curve_basis.eval_unchecked(t));
                exact + spec.noise_sd * draw_normal(&mut rng)
            })
            .collect();
        curves.push(RawCurve::new(format!("c{i:0width$}"), times.clone(), values)?);
    }
    Ok((curves, labels))
}

/// Design matrix of the scalar baseline: the final observed value of each
/// curve, one column.
pub fn last_value_baseline(curves: &[RawCurve]) -> Mat {
    Mat::from_rows(&curves.iter().map(|c| vec![c.last_value()]).collect::<Vec<_>>())
}

/// Held-out metrics of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    /// Mean absolute difference between predicted and true labels.
    pub mae: f64,
    /// Fraction of held-out points predicted into the wrong class.
    pub accuracy_error: f64,
}

/// Per-fold metrics plus their across-fold means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub per_fold: Vec<FoldMetrics>,
    pub mean_mae: f64,
    pub mean_accuracy_error: f64,
    pub n_folds: usize,
}

impl CvReport {
    pub fn from_folds(per_fold: Vec<FoldMetrics>) -> Self {
        let n = per_fold.len();
        let mean_mae = per_fold.iter().map(|f| f.mae).sum::<f64>() / n as f64;
        let mean_accuracy_error = per_fold.iter().map(|f| f.accuracy_error).sum::<f64>() / n as f64;
        Self { per_fold, mean_mae, mean_accuracy_error, n_folds: n }
    }
}

/// Seeded stratified fold assignment: indices of each class are shuffled and
/// dealt round-robin, so per-class test counts differ by at most one across
/// folds.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 {
        return Err(EvalError::TooFewFolds(k));
    }
    if labels.is_empty() {
        return Err(EvalError::SizeMismatch { curves: 0, labels: 0 });
    }
    let n_classes = *labels.iter().max().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next_fold = 0usize;
    for class in 1..=n_classes {
        let mut members: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        // Any class that fits entirely inside one test fold would vanish
        // from that fold's training split.
        if members.len() < 2 {
            return Err(EvalError::ClassTooSmall { class, count: members.len(), k });
        }
        // Fisher-Yates with the shared seeded stream.
        for i in (1..members.len()).rev() {
            let j = rng.gen_range(0..=i);
            members.swap(i, j);
        }
        for idx in members {
            folds[next_fold].push(idx);
            next_fold = (next_fold + 1) % k;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Runs k-fold cross-validation. `run_fold(train, test)` fits on the
/// training indices and returns one predicted label per test index; this
/// function owns the partitioning and the metric bookkeeping.
pub fn kfold<F>(labels: &[usize], k: usize, seed: u64, mut run_fold: F) -> Result<CvReport, EvalError>
where
    F: FnMut(&[usize], &[usize]) -> Result<Vec<usize>, EvalError>,
{
    let folds = stratified_folds(labels, k, seed)?;
    let mut per_fold = Vec::with_capacity(k);
    for fold in &folds {
        let test = fold.clone();
        let train: Vec<usize> = (0..labels.len()).filter(|i| !test.contains(i)).collect();
        let predictions = run_fold(&train, &test)?;
        debug_assert_eq!(predictions.len(), test.len());
        let mut abs_sum = 0.0;
        let mut wrong = 0usize;
        for (&idx, &pred) in test.iter().zip(&predictions) {
            abs_sum += (pred as f64 - labels[idx] as f64).abs();
            if pred != labels[idx] {
                wrong += 1;
            }
        }
        per_fold.push(FoldMetrics {
            mae: abs_sum / test.len() as f64,
            accuracy_error: wrong as f64 / test.len() as f64,
        });
    }
    Ok(CvReport::from_folds(per_fold))
}

/// The 20-point logarithmic penalty grid running from `lambda_max` down to
/// `lambda_max / 1000`.
pub fn lambda_grid(lambda_max: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points)
        .map(|i| lambda_max * 1e-3f64.powf(i as f64 / (points - 1) as f64))
        .collect()
}

/// Picks the penalty weight by inner cross-validated MAE over
/// [`lambda_grid`], warm-starting fits along the path within each inner
/// fold.
///
/// Selection follows the one-standard-error convention: among the grid, the
/// largest (sparsest) penalty whose mean MAE stays within one standard error
/// of the minimum wins. A plain argmin is too noisy when the MAE curve goes
/// flat, routinely dragging pure-noise covariates into the active set.
pub fn select_lasso_lambda(
    design: &crate::fit::ReducedDesign,
    ys: &[usize],
    cfg: &crate::fit::FitConfig,
    rule: crate::fit::DecisionRule,
    inner_k: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    use crate::fit::{lasso_path, reduce_rows, DecisionRule};
    let lmax = crate::fit::lasso_lambda_max(design, ys, cfg)?;
    let grid = lambda_grid(lmax, 20);
    let folds = stratified_folds(ys, inner_k, seed)?;

    // Inner-fold fits only steer the choice of lambda; a looser tolerance
    // and iteration cap keep the selection cheap without touching the
    // precision of the final fit at the chosen value.
    let mut inner_cfg = cfg.clone();
    inner_cfg.grad_tol = cfg.grad_tol.max(1e-3);
    inner_cfg.max_iters = cfg.max_iters.min(500);

    // fold_mae[slot][fold]
    let mut fold_mae = vec![Vec::with_capacity(folds.len()); grid.len()];
    for fold in &folds {
        let test = fold;
        let train: Vec<usize> = (0..ys.len()).filter(|i| !test.contains(i)).collect();
        let train_design = reduce_rows(design, &train);
        let train_ys: Vec<usize> = train.iter().map(|&i| ys[i]).collect();
        let fits = lasso_path(&train_design, &train_ys, &grid, &inner_cfg)?;
        for (slot, fit) in fits.iter().enumerate() {
            let mut abs_sum = 0.0;
            for &i in test {
                let g = dot(design.xt().row(i), fit.model().coefficients());
                let pred = match rule {
                    DecisionRule::Lad => crate::ordinal::predict_lad(fit.model(), g),
                    DecisionRule::Mode => {
                        crate::ordinal::predict_mode(&crate::ordinal::class_probs(fit.model(), g)?)
                    }
                };
                abs_sum += (pred as f64 - ys[i] as f64).abs();
            }
            fold_mae[slot].push(abs_sum / test.len() as f64);
        }
    }

    let stats: Vec<(f64, f64)> = fold_mae
        .iter()
        .map(|maes| {
            let n = maes.len() as f64;
            let mean = maes.iter().sum::<f64>() / n;
            let var = maes.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
            (mean, (var / n).sqrt())
        })
        .collect();
    let best = stats
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .map(|(i, _)| i)
        .unwrap();
    let cutoff = stats[best].0 + stats[best].1;
    // The grid descends, so the first qualifying slot is the largest penalty.
    let chosen = stats.iter().position(|(mean, _)| *mean <= cutoff).unwrap_or(best);
    Ok(grid[chosen])
}
