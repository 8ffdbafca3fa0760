//! Function bases on `[0, T]`: evaluation, Gram matrices, curve smoothing.
//!
//! Two families are supported: clamped B-splines of arbitrary order and
//! constant-free monomial bases. A [`GramMatrix`] holds the pairwise L2 inner
//! products between two bases; it is the object that later collapses the
//! functional regression into an ordinary multivariate one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, Mat};
use crate::quad::GaussLegendre;

#[derive(Error, Debug)]
pub enum BasisError {
    #[error("invalid basis: {0}")]
    InvalidSpec(String),

    #[error("t = {t} is outside the basis domain [0, {t_max}]")]
    OutOfDomain { t: f64, t_max: f64 },

    #[error("bases live on different domains: [0, {left}] vs [0, {right}]")]
    DomainMismatch { left: f64, right: f64 },

    #[error("invalid curve '{id}': {reason}")]
    InvalidCurve { id: String, reason: String },

    #[error("coefficient vector has length {got} but the basis has {expected} functions")]
    CoefficientLength { expected: usize, got: usize },

    #[error(
        "smoothing curve '{id}' without a roughness penalty needs at least {needed} observations, got {got}"
    )]
    TooFewObservations { id: String, needed: usize, got: usize },

    #[error("smoothing normal matrix is singular: {0}")]
    RankDeficient(String),
}

/// A finite family of real functions on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSpec {
    /// B-splines of the given order (order = degree + 1) over a nondecreasing
    /// knot vector whose first and last entries are 0 and T.
    BSpline { order: usize, knots: Vec<f64> },
    /// Monomials `t^d` for a strictly increasing list of degrees >= 1. The
    /// constant is deliberately excluded: together with free thresholds it
    /// would make the ordinal model unidentifiable.
    Monomial { degrees: Vec<u32>, t_max: f64 },
}

impl BasisSpec {
    /// Clamped B-spline basis with `size` functions and uniform interior
    /// knots on `[0, t_max]`.
    pub fn bspline_uniform(order: usize, size: usize, t_max: f64) -> Result<Self, BasisError> {
        if order < 1 {
            return Err(BasisError::InvalidSpec("B-spline order must be >= 1".into()));
        }
        if size < order {
            return Err(BasisError::InvalidSpec(format!(
                "a clamped order-{order} B-spline basis needs at least {order} functions, got {size}"
            )));
        }
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(BasisError::InvalidSpec(format!(
                "domain end must be positive and finite, got {t_max}"
            )));
        }
        let n_interior = size - order;
        let n_spans = n_interior + 1;
        let mut knots = Vec::with_capacity(size + order);
        knots.extend(std::iter::repeat(0.0).take(order));
        for i in 1..=n_interior {
            knots.push(t_max * i as f64 / n_spans as f64);
        }
        knots.extend(std::iter::repeat(t_max).take(order));
        let spec = BasisSpec::BSpline { order, knots };
        spec.validate()?;
        Ok(spec)
    }

    /// B-spline basis over a caller-supplied knot vector.
    pub fn bspline_with_knots(order: usize, knots: Vec<f64>) -> Result<Self, BasisError> {
        let spec = BasisSpec::BSpline { order, knots };
        spec.validate()?;
        Ok(spec)
    }

    /// Monomial basis `t, t^2, ..., t^max_degree`.
    pub fn monomial(max_degree: u32, t_max: f64) -> Result<Self, BasisError> {
        Self::monomial_with_degrees((1..=max_degree).collect(), t_max)
    }

    pub fn monomial_with_degrees(degrees: Vec<u32>, t_max: f64) -> Result<Self, BasisError> {
        let spec = BasisSpec::Monomial { degrees, t_max };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks every structural invariant; used by constructors and when
    /// deserializing untrusted files.
    pub fn validate(&self) -> Result<(), BasisError> {
        match self {
            BasisSpec::BSpline { order, knots } => {
                let order = *order;
                if order < 1 {
                    return Err(BasisError::InvalidSpec("B-spline order must be >= 1".into()));
                }
                if knots.len() < order + 1 {
                    return Err(BasisError::InvalidSpec(format!(
                        "knot vector of length {} cannot support an order-{order} basis",
                        knots.len()
                    )));
                }
                if knots.iter().any(|k| !k.is_finite()) {
                    return Err(BasisError::InvalidSpec("knot vector contains non-finite values".into()));
                }
                if knots.windows(2).any(|w| w[0] > w[1]) {
                    return Err(BasisError::InvalidSpec("knot vector is not nondecreasing".into()));
                }
                if knots[0] != 0.0 {
                    return Err(BasisError::InvalidSpec(format!(
                        "first knot must be 0, got {}",
                        knots[0]
                    )));
                }
                let t_max = *knots.last().unwrap();
                if !(t_max > 0.0) {
                    return Err(BasisError::InvalidSpec(format!(
                        "last knot must be positive, got {t_max}"
                    )));
                }
                let size = knots.len() - order;
                for i in 0..size {
                    if knots[i + order] <= knots[i] {
                        return Err(BasisError::InvalidSpec(format!(
                            "knot multiplicity exceeds the order near knot {}: basis function {i} would vanish",
                            knots[i]
                        )));
                    }
                }
                Ok(())
            }
            BasisSpec::Monomial { degrees, t_max } => {
                if degrees.is_empty() {
                    return Err(BasisError::InvalidSpec("monomial basis needs at least one degree".into()));
                }
                if degrees[0] < 1 {
                    return Err(BasisError::InvalidSpec(
                        "monomial degrees start at 1 (no constant term)".into(),
                    ));
                }
                if degrees.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(BasisError::InvalidSpec("monomial degrees must be strictly increasing".into()));
                }
                if !(t_max > &0.0) || !t_max.is_finite() {
                    return Err(BasisError::InvalidSpec(format!(
                        "domain end must be positive and finite, got {t_max}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Number of basis functions.
    pub fn size(&self) -> usize {
        match self {
            BasisSpec::BSpline { order, knots } => knots.len() - order,
            BasisSpec::Monomial { degrees, .. } => degrees.len(),
        }
    }

    /// Right end `T` of the domain `[0, T]`.
    pub fn domain_end(&self) -> f64 {
        match self {
            BasisSpec::BSpline { knots, .. } => *knots.last().unwrap(),
            BasisSpec::Monomial { t_max, .. } => *t_max,
        }
    }

    /// Interval outside which basis function `m` is identically zero.
    pub fn support(&self, m: usize) -> (f64, f64) {
        match self {
            BasisSpec::BSpline { order, knots } => (knots[m], knots[m + order]),
            BasisSpec::Monomial { t_max, .. } => (0.0, *t_max),
        }
    }

    /// Polynomial breakpoints of the basis, including both domain endpoints.
    fn breakpoints(&self) -> Vec<f64> {
        match self {
            BasisSpec::BSpline { knots, .. } => {
                let mut pts: Vec<f64> = Vec::with_capacity(knots.len());
                for &k in knots {
                    if pts.last() != Some(&k) {
                        pts.push(k);
                    }
                }
                pts
            }
            BasisSpec::Monomial { t_max, .. } => vec![0.0, *t_max],
        }
    }

    /// Maximal polynomial degree on any one piece.
    fn piecewise_degree(&self) -> usize {
        match self {
            BasisSpec::BSpline { order, .. } => order - 1,
            BasisSpec::Monomial { degrees, .. } => *degrees.last().unwrap() as usize,
        }
    }

    fn check_domain(&self, t: f64) -> Result<(), BasisError> {
        let t_max = self.domain_end();
        if !t.is_finite() || t < 0.0 || t > t_max {
            return Err(BasisError::OutOfDomain { t, t_max });
        }
        Ok(())
    }

    /// Evaluates every basis function at `t`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>, BasisError> {
        self.check_domain(t)?;
        Ok(self.eval_unchecked(t))
    }

    /// Evaluates the `deriv`-th derivative of every basis function at `t`.
    pub fn eval_deriv(&self, t: f64, deriv: usize) -> Result<Vec<f64>, BasisError> {
        self.check_domain(t)?;
        Ok(self.eval_deriv_unchecked(t, deriv))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> Vec<f64> {
        match self {
            BasisSpec::BSpline { order, knots } => bspline_values(knots, order - 1, t),
            BasisSpec::Monomial { degrees, .. } => {
                degrees.iter().map(|&d| t.powi(d as i32)).collect()
            }
        }
    }

    pub(crate) fn eval_deriv_unchecked(&self, t: f64, deriv: usize) -> Vec<f64> {
        match self {
            BasisSpec::BSpline { order, knots } => bspline_derivatives(knots, order - 1, t, deriv),
            BasisSpec::Monomial { degrees, .. } => degrees
                .iter()
                .map(|&d| {
                    let d = d as usize;
                    if deriv > d {
                        return 0.0;
                    }
                    let factor: f64 = (d - deriv + 1..=d).map(|k| k as f64).product();
                    factor * t.powi((d - deriv) as i32)
                })
                .collect(),
        }
    }
}

/// Index of the knot span containing `t`: the rightmost `i` with
/// `knots[i] <= t < knots[i+1]`, collapsing onto the last non-empty span at
/// the right boundary.
fn find_interval(knots: &[f64], t: f64) -> usize {
    let last = knots.len() - 1;
    if t >= knots[last] {
        let mut i = last - 1;
        while i > 0 && knots[i] == knots[last] {
            i -= 1;
        }
        return i;
    }
    let (mut lo, mut hi) = (0usize, last);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if knots[mid] <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// All B-spline basis values at `t`, via the banded span-local recursion:
/// only `degree + 1` functions are nonzero on a span, and the triangular
/// update touches exactly those.
fn bspline_values(knots: &[f64], degree: usize, t: f64) -> Vec<f64> {
    let size = knots.len() - degree - 1;
    let span = find_interval(knots, t);
    if span < degree || span >= size + degree {
        // Outside the full-support region of an unclamped knot vector; the
        // dense recursion handles the truncated neighborhood correctly.
        return dense_bspline_table(knots, degree, t);
    }
    let mut values = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    values[0] = 1.0;
    for j in 1..=degree {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = values[r] / (right[r + 1] + left[j - r]);
            values[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        values[j] = saved;
    }
    let mut out = vec![0.0; size];
    for (r, v) in values.into_iter().enumerate() {
        let idx = span - degree + r;
        if idx < size {
            out[idx] = v;
        }
    }
    out
}

/// Dense Cox–de Boor table: builds every function of every degree up from
/// the indicator functions. Quadratic in the basis size but needed only off
/// the fast path.
fn dense_bspline_table(knots: &[f64], degree: usize, t: f64) -> Vec<f64> {
    let mut vals = vec![0.0; knots.len() - 1];
    vals[find_interval(knots, t)] = 1.0;
    for d in 1..=degree {
        let nfun = knots.len() - 1 - d;
        for i in 0..nfun {
            let left_den = knots[i + d] - knots[i];
            let right_den = knots[i + d + 1] - knots[i + 1];
            let a = if left_den > 0.0 { (t - knots[i]) / left_den * vals[i] } else { 0.0 };
            let b = if right_den > 0.0 {
                (knots[i + d + 1] - t) / right_den * vals[i + 1]
            } else {
                0.0
            };
            vals[i] = a + b;
        }
        vals.truncate(nfun);
    }
    vals
}

/// All values of the `deriv`-th derivative, by applying the derivative
/// recurrence on top of the lower-degree basis.
fn bspline_derivatives(knots: &[f64], degree: usize, t: f64, deriv: usize) -> Vec<f64> {
    let size = knots.len() - degree - 1;
    if deriv == 0 {
        return bspline_values(knots, degree, t);
    }
    if deriv > degree {
        return vec![0.0; size];
    }
    let lower = bspline_derivatives(knots, degree - 1, t, deriv - 1);
    let p = degree as f64;
    (0..size)
        .map(|i| {
            let den_l = knots[i + degree] - knots[i];
            let den_r = knots[i + degree + 1] - knots[i + 1];
            let a = if den_l > 0.0 { lower[i] / den_l } else { 0.0 };
            let b = if den_r > 0.0 { lower[i + 1] / den_r } else { 0.0 };
            p * (a - b)
        })
        .collect()
}

/// The coefficient vector of one curve expressed in a basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample {
    basis: BasisSpec,
    coefficients: Vec<f64>,
}

impl FunctionalSample {
    pub fn new(basis: BasisSpec, coefficients: Vec<f64>) -> Result<Self, BasisError> {
        if coefficients.len() != basis.size() {
            return Err(BasisError::CoefficientLength {
                expected: basis.size(),
                got: coefficients.len(),
            });
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(BasisError::InvalidSpec("sample coefficients must be finite".into()));
        }
        Ok(Self { basis, coefficients })
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Reconstructed curve value at `t`.
    pub fn value_at(&self, t: f64) -> Result<f64, BasisError> {
        Ok(dot(&self.coefficients, &self.basis.eval(t)?))
    }
}

/// A discretely observed curve: strictly increasing times with one value per
/// time point.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCurve {
    id: String,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl RawCurve {
    /// Builds a curve, sorting observations by time. Duplicate time points or
    /// fewer than two observations are rejected.
    pub fn new(id: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Result<Self, BasisError> {
        let id = id.into();
        if times.len() != values.len() {
            return Err(BasisError::InvalidCurve {
                id,
                reason: format!("{} times but {} values", times.len(), values.len()),
            });
        }
        if times.len() < 2 {
            return Err(BasisError::InvalidCurve {
                id,
                reason: format!("needs at least 2 observations, got {}", times.len()),
            });
        }
        if times.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(BasisError::InvalidCurve { id, reason: "non-finite entry".into() });
        }
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
        let times_sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
        let values_sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        if times_sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(BasisError::InvalidCurve { id, reason: "duplicate time points".into() });
        }
        Ok(Self { id, times: times_sorted, values: values_sorted })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn last_value(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// Matrix of pairwise L2 inner products between two bases.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: Mat,
    row_basis: BasisSpec,
    col_basis: BasisSpec,
}

impl GramMatrix {
    pub fn entries(&self) -> &Mat {
        &self.entries
    }

    pub fn row_basis(&self) -> &BasisSpec {
        &self.row_basis
    }

    pub fn col_basis(&self) -> &BasisSpec {
        &self.col_basis
    }

    /// The reduction `a' * R`: projects curve coefficients onto inner
    /// products with every column-basis function.
    pub fn reduce(&self, coefficients: &[f64]) -> Vec<f64> {
        self.entries.left_mul(coefficients)
    }
}

/// Gram matrix `R[i][j] = integral of row_i(s) * col_j(s) over [0, T]`.
///
/// The integral is a Gauss–Legendre sum over every polynomial piece with the
/// node count chosen from the combined degree, so it is exact (to rounding)
/// for the piecewise-polynomial bases built here.
pub fn gram(row: &BasisSpec, col: &BasisSpec) -> Result<GramMatrix, BasisError> {
    let entries = gram_with_derivatives(row, col, 0, 0)?;
    Ok(GramMatrix { entries, row_basis: row.clone(), col_basis: col.clone() })
}

/// Penalty matrix of integrated products of second derivatives,
/// `P[i][j] = integral of phi_i''(s) * phi_j''(s)`.
pub fn roughness_penalty_matrix(spec: &BasisSpec) -> Result<Mat, BasisError> {
    gram_with_derivatives(spec, spec, 2, 2)
}

fn gram_with_derivatives(
    row: &BasisSpec,
    col: &BasisSpec,
    row_deriv: usize,
    col_deriv: usize,
) -> Result<Mat, BasisError> {
    row.validate()?;
    col.validate()?;
    if row.domain_end() != col.domain_end() {
        return Err(BasisError::DomainMismatch { left: row.domain_end(), right: col.domain_end() });
    }

    let mut cuts = row.breakpoints();
    cuts.extend(col.breakpoints());
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let deg_row = row.piecewise_degree().saturating_sub(row_deriv);
    let deg_col = col.piecewise_degree().saturating_sub(col_deriv);
    let n_nodes = (deg_row + deg_col + 1).div_ceil(2) + 1;
    let rule = GaussLegendre::new(n_nodes);

    let mut entries = Mat::zeros(row.size(), col.size());
    for seg in cuts.windows(2) {
        if seg[1] <= seg[0] {
            continue;
        }
        for (x, w) in rule.mapped(seg[0], seg[1]) {
            let rv = row.eval_deriv_unchecked(x, row_deriv);
            let cv = col.eval_deriv_unchecked(x, col_deriv);
            for (i, &ri) in rv.iter().enumerate() {
                if ri == 0.0 {
                    continue;
                }
                let out = entries.row_mut(i);
                for (j, &cj) in cv.iter().enumerate() {
                    out[j] += w * ri * cj;
                }
            }
        }
    }
    Ok(entries)
}

/// Result of penalized least-squares smoothing of one curve.
#[derive(Debug, Clone)]
pub struct SmoothFit {
    pub sample: FunctionalSample,
    /// Root mean square of the observation residuals.
    pub residual_rms: f64,
    /// Diagonal jitter that had to be added to factor the normal matrix;
    /// zero when the plain factorization succeeded.
    pub ridge_jitter: f64,
}

/// Fits basis coefficients to a raw curve by minimizing the sum of squared
/// residuals plus `roughness_lambda` times the integrated squared second
/// derivative of the fit.
pub fn smooth(
    curve: &RawCurve,
    spec: &BasisSpec,
    roughness_lambda: f64,
) -> Result<SmoothFit, BasisError> {
    if !(roughness_lambda >= 0.0) || !roughness_lambda.is_finite() {
        return Err(BasisError::InvalidSpec(format!(
            "roughness lambda must be finite and >= 0, got {roughness_lambda}"
        )));
    }
    let m = spec.size();
    let n = curve.times.len();
    if roughness_lambda == 0.0 && n < m {
        return Err(BasisError::TooFewObservations {
            id: curve.id.clone(),
            needed: m,
            got: n,
        });
    }

    let mut design = Mat::zeros(n, m);
    for (k, &t) in curve.times.iter().enumerate() {
        let row = spec.eval(t)?;
        design.row_mut(k).copy_from_slice(&row);
    }

    // Normal equations (Phi'Phi + lambda P) a = Phi'y.
    let mut normal = Mat::zeros(m, m);
    let mut rhs = vec![0.0; m];
    for k in 0..n {
        let row = design.row(k);
        let y = curve.values[k];
        for i in 0..m {
            if row[i] == 0.0 {
                continue;
            }
            rhs[i] += row[i] * y;
            let out = normal.row_mut(i);
            for j in 0..m {
                out[j] += row[i] * row[j];
            }
        }
    }
    if roughness_lambda > 0.0 {
        let penalty = roughness_penalty_matrix(spec)?;
        for i in 0..m {
            for j in 0..m {
                normal.set(i, j, normal.get(i, j) + roughness_lambda * penalty.get(i, j));
            }
        }
    }

    // With lambda = 0 a failed factorization means a genuinely rank-deficient
    // design and must surface as an error; with a penalty the one-shot ridge
    // jitter retry applies.
    let retry_jitter = if roughness_lambda == 0.0 { 0.0 } else { 1e-10 };
    let (coeffs, jitter) = crate::linalg::spd_solve(&normal, &rhs, retry_jitter).ok_or_else(|| {
        if roughness_lambda == 0.0 {
            BasisError::RankDeficient(format!(
                "curve '{}' does not determine all {m} coefficients (rank-deficient design with lambda = 0)",
                curve.id
            ))
        } else {
            BasisError::RankDeficient(format!(
                "penalized normal matrix for curve '{}' is singular even after jitter",
                curve.id
            ))
        }
    })?;

    let mut ss = 0.0;
    for k in 0..n {
        let fitted = dot(design.row(k), &coeffs);
        let r = curve.values[k] - fitted;
        ss += r * r;
    }
    let sample = FunctionalSample::new(spec.clone(), coeffs)?;
    Ok(SmoothFit { sample, residual_rms: (ss / n as f64).sqrt(), ridge_jitter: jitter })
}
