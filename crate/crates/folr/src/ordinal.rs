//! The cumulative-link ordinal model with a standard-logistic link.
//!
//! A latent variable `Y* = g(x) + eps` with logistic noise is cut at ordered
//! thresholds into K classes, so `P(Y <= j) = F(tau_j - g)`. This module
//! provides the class probabilities, the exact negative log-likelihood and
//! its analytic gradient, and the two decision rules of interest: the
//! most-probable class (optimal under 0-1 cost) and the threshold-interval
//! lookup (optimal under absolute-difference cost), together with a
//! brute-force expected-cost minimizer used as the optimality oracle.
//!
//! Classes are 1-based throughout: labels live in `{1, ..., K}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, Mat};

/// Probabilities below this are treated as zero; log-likelihood terms hit by
/// the clamp return the +infinity sentinel instead of NaN.
const PROB_FLOOR: f64 = 1e-300;

#[derive(Error, Debug)]
pub enum OrdinalError {
    #[error("thresholds must be strictly increasing, got {0:?}")]
    ThresholdsNotIncreasing(Vec<f64>),

    #[error("thresholds must be finite, got {0:?}")]
    ThresholdsNotFinite(Vec<f64>),

    #[error("a model with {k} classes needs at least one threshold")]
    TooFewClasses { k: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("label {label} is outside 1..={k}")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("invalid class distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid cost function: {0}")]
    InvalidCost(String),

    #[error("coefficients must be finite")]
    NonFiniteCoefficients,

    #[error("linear predictor must be finite, got {0}")]
    NonFinitePredictor(f64),
}

/// Standard logistic CDF.
#[inline]
pub fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Logit, the inverse of [`logistic`].
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Logistic density, written as `F(u) * (1 - F(u))`.
#[inline]
fn logistic_density(u: f64) -> f64 {
    let f = logistic(u);
    f * (1.0 - f)
}

/// Strictly increasing cut points `tau_1 < ... < tau_{K-1}`; the implied
/// `tau_0 = -inf` and `tau_K = +inf` are never stored.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Thresholds {
    tau: Vec<f64>,
}

impl Thresholds {
    pub fn new(tau: Vec<f64>) -> Result<Self, OrdinalError> {
        if tau.is_empty() {
            return Err(OrdinalError::TooFewClasses { k: 1 });
        }
        if tau.iter().any(|t| !t.is_finite()) {
            return Err(OrdinalError::ThresholdsNotFinite(tau));
        }
        if tau.windows(2).any(|w| w[0] >= w[1]) {
            return Err(OrdinalError::ThresholdsNotIncreasing(tau));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    /// Number of classes `K`.
    pub fn n_classes(&self) -> usize {
        self.tau.len() + 1
    }

    /// The class whose threshold interval `(tau_{j-1}, tau_j]` contains `v`.
    pub(crate) fn interval_class(&self, v: f64) -> usize {
        1 + self.tau.iter().filter(|&&t| t < v).count()
    }
}

impl<'de> Deserialize<'de> for Thresholds {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let tau = Vec::<f64>::deserialize(deserializer)?;
        Thresholds::new(tau).map_err(serde::de::Error::custom)
    }
}

/// Parameters of the cumulative-logit model: ordered thresholds plus a
/// coefficient vector (possibly empty for a thresholds-only model). The link
/// is fixed to the standard logistic CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalModel {
    thresholds: Thresholds,
    coefficients: Vec<f64>,
}

impl OrdinalModel {
    pub fn new(thresholds: Thresholds, coefficients: Vec<f64>) -> Result<Self, OrdinalError> {
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(OrdinalError::NonFiniteCoefficients);
        }
        Ok(Self { thresholds, coefficients })
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn n_classes(&self) -> usize {
        self.thresholds.n_classes()
    }
}

/// A probability vector over the K classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    /// Validates entries in `[0, 1]`, total mass 1 (within 1e-12) and
    /// nondecreasing cumulative sums (automatic for nonnegative entries).
    pub fn new(probs: Vec<f64>) -> Result<Self, OrdinalError> {
        if probs.len() < 2 {
            return Err(OrdinalError::InvalidDistribution(format!(
                "needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(OrdinalError::InvalidDistribution(format!(
                "entries outside [0, 1]: {probs:?}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(OrdinalError::InvalidDistribution(format!(
                "mass sums to {total}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_classes(&self) -> usize {
        self.probs.len()
    }
}

/// Cost of predicting class `predicted` when the truth is `actual`.
#[derive(Debug, Clone, PartialEq)]
pub enum CostFunction {
    /// 1 for any wrong class, 0 otherwise.
    ZeroOne,
    /// `|predicted - actual|`.
    AbsoluteDifference,
    /// Arbitrary nonnegative K x K matrix with a zero diagonal, indexed
    /// `[predicted - 1][actual - 1]`.
    Custom(Mat),
}

impl CostFunction {
    /// Validates a custom cost matrix.
    pub fn custom(matrix: Mat) -> Result<Self, OrdinalError> {
        if matrix.rows() != matrix.cols() {
            return Err(OrdinalError::InvalidCost(format!(
                "cost matrix must be square, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        for i in 0..matrix.rows() {
            if matrix.get(i, i) != 0.0 {
                return Err(OrdinalError::InvalidCost(format!(
                    "diagonal entry ({i},{i}) is {}, must be 0",
                    matrix.get(i, i)
                )));
            }
            for j in 0..matrix.cols() {
                if !(matrix.get(i, j) >= 0.0) {
                    return Err(OrdinalError::InvalidCost(format!(
                        "entry ({i},{j}) is {}, must be >= 0",
                        matrix.get(i, j)
                    )));
                }
            }
        }
        Ok(CostFunction::Custom(matrix))
    }

    /// `C(predicted, actual)` with 1-based classes.
    pub fn cost(&self, predicted: usize, actual: usize) -> f64 {
        match self {
            CostFunction::ZeroOne => {
                if predicted == actual {
                    0.0
                } else {
                    1.0
                }
            }
            CostFunction::AbsoluteDifference => (predicted as f64 - actual as f64).abs(),
            CostFunction::Custom(m) => m.get(predicted - 1, actual - 1),
        }
    }
}

/// The linear predictor `g = <x, b>`.
pub fn linear_predictor(model: &OrdinalModel, x: &[f64]) -> Result<f64, OrdinalError> {
    if x.len() != model.coefficients.len() {
        return Err(OrdinalError::DimensionMismatch {
            expected: model.coefficients.len(),
            got: x.len(),
        });
    }
    Ok(dot(x, &model.coefficients))
}

/// Class probabilities at linear predictor value `g`:
/// `pi_j = F(tau_j - g) - F(tau_{j-1} - g)` with the boundary CDF values
/// pinned to 0 and 1, so the vector always sums to one.
pub fn class_probs(model: &OrdinalModel, g: f64) -> Result<ClassDistribution, OrdinalError> {
    if !g.is_finite() {
        return Err(OrdinalError::NonFinitePredictor(g));
    }
    let tau = model.thresholds.tau();
    let k = model.n_classes();
    let mut probs = Vec::with_capacity(k);
    let mut prev = 0.0;
    for j in 0..k {
        let cum = if j + 1 == k { 1.0 } else { logistic(tau[j] - g) };
        probs.push((cum - prev).max(0.0));
        prev = cum;
    }
    ClassDistribution::new(probs)
}

fn check_data(model: &OrdinalModel, xs: &Mat, ys: &[usize]) -> Result<(), OrdinalError> {
    if xs.cols() != model.coefficients.len() {
        return Err(OrdinalError::DimensionMismatch {
            expected: model.coefficients.len(),
            got: xs.cols(),
        });
    }
    if xs.rows() != ys.len() {
        return Err(OrdinalError::DimensionMismatch { expected: xs.rows(), got: ys.len() });
    }
    let k = model.n_classes();
    for &y in ys {
        if y < 1 || y > k {
            return Err(OrdinalError::LabelOutOfRange { label: y, k });
        }
    }
    Ok(())
}

/// Per-observation cumulative CDF bracket `(F_hi, F_lo)` for label `y`.
#[inline]
fn label_bracket(tau: &[f64], k: usize, y: usize, g: f64) -> (f64, f64) {
    let hi = if y == k { 1.0 } else { logistic(tau[y - 1] - g) };
    let lo = if y == 1 { 0.0 } else { logistic(tau[y - 2] - g) };
    (hi, lo)
}

/// Negative log-likelihood `-sum_i log pi_{y_i}(g(x_i))`.
///
/// Returns `+inf` (never NaN) as soon as one observation's probability
/// underflows the clamp.
pub fn neg_log_likelihood(model: &OrdinalModel, xs: &Mat, ys: &[usize]) -> Result<f64, OrdinalError> {
    check_data(model, xs, ys)?;
    let tau = model.thresholds.tau();
    let k = model.n_classes();
    let mut nll = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        let g = dot(xs.row(i), &model.coefficients);
        let (hi, lo) = label_bracket(tau, k, y, g);
        let pi = hi - lo;
        if !(pi >= PROB_FLOOR) {
            return Ok(f64::INFINITY);
        }
        nll -= pi.ln();
    }
    Ok(nll)
}

/// Analytic gradient of the negative log-likelihood with respect to the
/// thresholds and the coefficients, using `f = F(1-F)` for the logistic
/// density.
pub fn nll_gradient(
    model: &OrdinalModel,
    xs: &Mat,
    ys: &[usize],
) -> Result<(Vec<f64>, Vec<f64>), OrdinalError> {
    check_data(model, xs, ys)?;
    let tau = model.thresholds.tau();
    let k = model.n_classes();
    let mut grad_tau = vec![0.0; k - 1];
    let mut grad_b = vec![0.0; model.coefficients.len()];
    for (i, &y) in ys.iter().enumerate() {
        let row = xs.row(i);
        let g = dot(row, &model.coefficients);
        let (hi, lo) = label_bracket(tau, k, y, g);
        let pi = (hi - lo).max(PROB_FLOOR);
        let dens_hi = if y == k { 0.0 } else { logistic_density(tau[y - 1] - g) };
        let dens_lo = if y == 1 { 0.0 } else { logistic_density(tau[y - 2] - g) };
        if y < k {
            grad_tau[y - 1] -= dens_hi / pi;
        }
        if y > 1 {
            grad_tau[y - 2] += dens_lo / pi;
        }
        let dg = (dens_hi - dens_lo) / pi;
        for (gb, &x) in grad_b.iter_mut().zip(row) {
            *gb += dg * x;
        }
    }
    Ok((grad_tau, grad_b))
}

/// The most probable class; ties go to the smallest index.
pub fn predict_mode(dist: &ClassDistribution) -> usize {
    let mut best = 0;
    for (j, &p) in dist.probs.iter().enumerate() {
        if p > dist.probs[best] {
            best = j;
        }
    }
    best + 1
}

/// The class whose threshold interval contains `g`: the unique `j` with
/// `tau_{j-1} < g <= tau_j`. Needs no probability evaluation at all, which
/// is the point of this rule on constrained hardware.
pub fn predict_lad(model: &OrdinalModel, g: f64) -> usize {
    model.thresholds.interval_class(g)
}

/// Brute-force expected-cost minimizer: `costs[j] = sum_y C(j+1, y) pi_y`,
/// returning the smallest minimizing class and the full cost vector.
pub fn expected_cost_oracle(dist: &ClassDistribution, cost: &CostFunction) -> (usize, Vec<f64>) {
    let k = dist.n_classes();
    let costs: Vec<f64> = (1..=k)
        .map(|predicted| {
            dist.probs
                .iter()
                .enumerate()
                .map(|(idx, &p)| cost.cost(predicted, idx + 1) * p)
                .sum()
        })
        .collect();
    let mut best = 0;
    for (j, &c) in costs.iter().enumerate() {
        if c < costs[best] {
            best = j;
        }
    }
    (best + 1, costs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(tau: Vec<f64>, b: Vec<f64>) -> OrdinalModel {
        OrdinalModel::new(Thresholds::new(tau).unwrap(), b).unwrap()
    }

    #[test]
    fn thresholds_must_strictly_increase() {
        assert!(Thresholds::new(vec![0.0, 0.0]).is_err());
        assert!(Thresholds::new(vec![1.0, 0.0]).is_err());
        assert!(Thresholds::new(vec![]).is_err());
        assert!(Thresholds::new(vec![f64::NAN]).is_err());
        assert_eq!(Thresholds::new(vec![0.0]).unwrap().n_classes(), 2);
    }

    #[test]
    fn linear_predictor_examples() {
        let m = model(vec![0.0], vec![1.0, 2.0]);
        assert_eq!(linear_predictor(&m, &[3.0, 4.0]).unwrap(), 11.0);

        let m0 = model(vec![0.0], vec![]);
        assert_eq!(linear_predictor(&m0, &[]).unwrap(), 0.0);

        let mc = model(vec![0.0], vec![0.5, -0.5]);
        assert_eq!(linear_predictor(&mc, &[2.0, 2.0]).unwrap(), 0.0);

        assert!(matches!(
            linear_predictor(&m, &[1.0]),
            Err(OrdinalError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn class_probs_symmetric_case() {
        // F(-1) = 1/(1+e) and the middle class takes the rest.
        let m = model(vec![-1.0, 1.0], vec![]);
        let d = class_probs(&m, 0.0).unwrap();
        let edge = 1.0 / (1.0 + std::f64::consts::E);
        assert!((d.probs()[0] - edge).abs() < 1e-15);
        assert!((d.probs()[2] - edge).abs() < 1e-15);
        assert!((d.probs()[1] - (1.0 - 2.0 * edge)).abs() < 1e-15);
        assert!((d.probs()[0] - 0.268941).abs() < 1e-6);
        assert!((d.probs()[1] - 0.462117).abs() < 1e-6);
    }

    #[test]
    fn class_probs_two_class_midpoint() {
        let m = model(vec![0.0], vec![]);
        let d = class_probs(&m, 0.0).unwrap();
        assert_eq!(d.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn class_probs_saturates_for_large_predictor() {
        let m = model(vec![-1.0, 1.0], vec![]);
        let d = class_probs(&m, 40.0).unwrap();
        assert!(d.probs()[2] > 1.0 - 1e-15);
    }

    #[test]
    fn class_probs_valid_across_extreme_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let k = rng.gen_range(2..=8);
            let mut tau: Vec<f64> = (0..k - 1).map(|_| rng.gen_range(-700.0..700.0)).collect();
            tau.sort_by(f64::total_cmp);
            tau.dedup();
            if tau.len() < k - 1 {
                continue;
            }
            let g: f64 = rng.gen_range(-700.0..700.0);
            let m = model(tau, vec![]);
            let d = class_probs(&m, g).unwrap();
            let sum: f64 = d.probs().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            assert!(d.probs().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn nll_known_values_and_additivity() {
        let m = model(vec![0.0], vec![]);
        let xs1 = Mat::zeros(1, 0);
        let nll1 = neg_log_likelihood(&m, &xs1, &[1]).unwrap();
        assert!((nll1 - std::f64::consts::LN_2).abs() < 1e-15);

        let xs2 = Mat::zeros(2, 0);
        let nll2 = neg_log_likelihood(&m, &xs2, &[1, 1]).unwrap();
        assert!((nll2 - 2.0 * nll1).abs() < 1e-15);
    }

    #[test]
    fn nll_matches_naive_formula() {
        // Independent oracle: literal -sum log(F(tau_y - g) - F(tau_{y-1} - g))
        // written with no shared helpers.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let k = rng.gen_range(2..=5);
            let m_cov = rng.gen_range(0..=3);
            let mut tau: Vec<f64> = Vec::new();
            let mut t = rng.gen_range(-2.0..-1.0);
            for _ in 0..k - 1 {
                tau.push(t);
                t += rng.gen_range(0.3..1.5);
            }
            let b: Vec<f64> = (0..m_cov).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = rng.gen_range(1..=20);
            let rows: Vec<Vec<f64>> =
                (0..n).map(|_| (0..m_cov).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let ys: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=k)).collect();
            let xs = Mat::from_rows(&rows);

            let mdl = model(tau.clone(), b.clone());
            let got = neg_log_likelihood(&mdl, &xs, &ys).unwrap();

            let mut want = 0.0;
            for i in 0..n {
                let g: f64 = rows[i].iter().zip(&b).map(|(x, bb)| x * bb).sum();
                let cdf = |u: f64| 1.0 / (1.0 + (-u).exp());
                let hi = if ys[i] == k { 1.0 } else { cdf(tau[ys[i] - 1] - g) };
                let lo = if ys[i] == 1 { 0.0 } else { cdf(tau[ys[i] - 2] - g) };
                want -= (hi - lo).ln();
            }
            assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn nll_returns_infinity_sentinel_on_underflow() {
        let m = model(vec![0.0, 1.0], vec![]);
        // g = 700 pushes P(Y=1) to an exact 0 after clamping.
        let xs = Mat::from_rows(&[vec![700.0]]);
        let m_b = model(vec![0.0, 1.0], vec![1.0]);
        let nll = neg_log_likelihood(&m_b, &xs, &[1]).unwrap();
        assert!(nll.is_infinite() && nll > 0.0);
        drop(m);
    }

    /// Central finite differences of the NLL in (tau, b), the gradient oracle.
    fn fd_gradient(m: &OrdinalModel, xs: &Mat, ys: &[usize], h: f64) -> (Vec<f64>, Vec<f64>) {
        let tau = m.thresholds().tau().to_vec();
        let b = m.coefficients().to_vec();
        let eval = |tau: Vec<f64>, b: Vec<f64>| -> f64 {
            let mm = model(tau, b);
            neg_log_likelihood(&mm, xs, ys).unwrap()
        };
        let mut gt = vec![0.0; tau.len()];
        for j in 0..tau.len() {
            let mut up = tau.clone();
            let mut dn = tau.clone();
            up[j] += h;
            dn[j] -= h;
            gt[j] = (eval(up, b.clone()) - eval(dn, b.clone())) / (2.0 * h);
        }
        let mut gb = vec![0.0; b.len()];
        for j in 0..b.len() {
            let mut up = b.clone();
            let mut dn = b.clone();
            up[j] += h;
            dn[j] -= h;
            gb[j] = (eval(tau.clone(), up) - eval(tau.clone(), dn)) / (2.0 * h);
        }
        (gt, gb)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rel = |a: f64, fd: f64| (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
        for trial in 0..100 {
            let k = rng.gen_range(2..=6);
            let m_cov = rng.gen_range(0..=5);
            let mut tau = Vec::new();
            let mut t = rng.gen_range(-2.5..-1.0);
            for _ in 0..k - 1 {
                tau.push(t);
                t += rng.gen_range(0.4..1.2);
            }
            let b: Vec<f64> = (0..m_cov).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let n = 30;
            let rows: Vec<Vec<f64>> =
                (0..n).map(|_| (0..m_cov).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let ys: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=k)).collect();
            let xs = Mat::from_rows(&rows);
            let mdl = model(tau, b);

            let (gt, gb) = nll_gradient(&mdl, &xs, &ys).unwrap();
            let (ft, fb) = fd_gradient(&mdl, &xs, &ys, 1e-5);
            for (a, f) in gt.iter().zip(&ft).chain(gb.iter().zip(&fb)) {
                assert!(rel(*a, *f) <= 1e-6, "trial {trial}: {a} vs {f}");
            }
        }
    }

    #[test]
    fn gradient_in_coefficients_vanishes_for_zero_covariates() {
        let m = model(vec![-0.5, 0.5], vec![0.7]);
        let xs = Mat::from_rows(&[vec![0.0], vec![0.0], vec![0.0]]);
        let (_, gb) = nll_gradient(&m, &xs, &[1, 2, 3]).unwrap();
        assert_eq!(gb, vec![0.0]);
    }

    #[test]
    fn predict_mode_examples() {
        let d = ClassDistribution::new(vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(predict_mode(&d), 2);
        let tie = ClassDistribution::new(vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(predict_mode(&tie), 1);
        let m = model(vec![-1.0, 1.0], vec![]);
        assert_eq!(predict_mode(&class_probs(&m, 0.0).unwrap()), 2);
    }

    #[test]
    fn predict_lad_interval_lookup() {
        let m = model(vec![-1.0, 0.0, 1.0], vec![]);
        assert_eq!(predict_lad(&m, 0.5), 3);
        // Upper bound inclusive: g exactly on tau_2 maps to class 2.
        assert_eq!(predict_lad(&m, 0.0), 2);
        assert_eq!(predict_lad(&m, -5.0), 1);
        assert_eq!(predict_lad(&m, 5.0), 4);
    }

    #[test]
    fn expected_cost_oracle_examples() {
        let uniform = ClassDistribution::new(vec![0.25; 4]).unwrap();
        let (class, costs) = expected_cost_oracle(&uniform, &CostFunction::AbsoluteDifference);
        assert_eq!(class, 2);
        let want = [1.5, 1.0, 1.0, 1.5];
        for (c, w) in costs.iter().zip(&want) {
            assert!((c - w).abs() < 1e-15);
        }

        // Degenerate mass on class k picks k for any zero-diagonal cost.
        for k in 1..=4 {
            let mut p = vec![0.0; 4];
            p[k - 1] = 1.0;
            let d = ClassDistribution::new(p).unwrap();
            assert_eq!(expected_cost_oracle(&d, &CostFunction::AbsoluteDifference).0, k);
            assert_eq!(expected_cost_oracle(&d, &CostFunction::ZeroOne).0, k);
        }
    }

    #[test]
    fn zero_one_oracle_agrees_with_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let k = rng.gen_range(2..=8);
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let d = ClassDistribution::new(raw.iter().map(|r| r / total).collect());
            let d = match d {
                Ok(d) => d,
                Err(_) => continue,
            };
            assert_eq!(predict_mode(&d), expected_cost_oracle(&d, &CostFunction::ZeroOne).0);
        }
    }

    #[test]
    fn lad_agrees_with_absolute_cost_oracle_off_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..2000 {
            let k = rng.gen_range(2..=8);
            let mut tau = Vec::new();
            let mut t = rng.gen_range(-3.0..0.0);
            for _ in 0..k - 1 {
                tau.push(t);
                t += rng.gen_range(0.2..1.5);
            }
            let lo = tau[0] - 2.0;
            let hi = tau[k - 2] + 2.0;
            let mut g: f64 = rng.gen_range(lo..hi);
            if tau.iter().any(|&t| (g - t).abs() < 1e-9) {
                g += 1e-6;
            }
            let m = model(tau, vec![]);
            let lad = predict_lad(&m, g);
            let dist = class_probs(&m, g).unwrap();
            let (best, costs) = expected_cost_oracle(&dist, &CostFunction::AbsoluteDifference);
            assert_eq!(
                lad, best,
                "k={k} g={g} costs={costs:?} tau={:?}",
                m.thresholds().tau()
            );
        }
    }

    #[test]
    fn custom_cost_validation() {
        let ok = Mat::from_rows(&[vec![0.0, 2.0], vec![1.0, 0.0]]);
        assert!(CostFunction::custom(ok).is_ok());
        let bad_diag = Mat::from_rows(&[vec![0.5, 2.0], vec![1.0, 0.0]]);
        assert!(CostFunction::custom(bad_diag).is_err());
        let negative = Mat::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]);
        assert!(CostFunction::custom(negative).is_err());
    }

    #[test]
    fn distribution_invariants_enforced() {
        assert!(ClassDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(ClassDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(ClassDistribution::new(vec![1.0]).is_err());
        assert!(ClassDistribution::new(vec![0.25, 0.75]).is_ok());
    }
}
