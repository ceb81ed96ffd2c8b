//! Estimation of the unit-norm index direction `β` in `pr(D=1|x) = π(x'β)`.
//!
//! Two estimators are provided. [`logistic_mle`] fits a logistic regression
//! with intercept by safeguarded Newton-Raphson and keeps the normalized
//! slope. [`sse_fit`] is the simple score estimator: directions are
//! parameterized by spherical angles and the estimate is the approximate
//! zero of the empirical score built from the isotonic fit along each
//! candidate direction.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::ContinuousCDF;

use crate::data::ObservationSet;
use crate::error::{Error, Result};
use crate::isotonic::StepPropensity;
use crate::link::{logistic, standard_normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum IndexMethod {
    LogisticMle,
    Sse,
    Supplied,
}

/// An estimated index direction with unit norm and positive leading
/// component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexFit {
    pub beta: Vec<f64>,
    pub method: IndexMethod,
    /// Log-likelihood per Newton iteration, or the best score norm reached
    /// from each start of the SSE search.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl IndexFit {
    /// Wraps a caller-supplied direction, normalized and sign-fixed.
    pub fn supplied(beta: &[f64]) -> Result<Self> {
        Ok(Self {
            beta: normalize_direction(beta)?,
            method: IndexMethod::Supplied,
            objective_trace: Vec::new(),
            converged: true,
        })
    }

    fn trivial(method: IndexMethod) -> Self {
        Self {
            beta: vec![1.0],
            method,
            objective_trace: Vec::new(),
            converged: true,
        }
    }
}

/// Scales to unit norm and flips the sign so the first component exceeding
/// 1e-12 in magnitude is positive.
pub fn normalize_direction(beta: &[f64]) -> Result<Vec<f64>> {
    let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
    if beta.is_empty() || !norm.is_finite() || norm == 0.0 {
        return Err(Error::InvalidArgument(
            "index direction must be finite and nonzero".into(),
        ));
    }
    let sign = match beta.iter().find(|b| b.abs() / norm > 1e-12) {
        Some(&b) if b < 0.0 => -1.0,
        _ => 1.0,
    };
    Ok(beta.iter().map(|b| sign * b / norm).collect())
}

/// Angle in radians between two directions, ignoring sign.
pub fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        diff += (x / na - y / nb).powi(2);
        sum += (x / na + y / nb).powi(2);
    }
    // 2 atan2(|u - v|, |u + v|) stays accurate near 0 and π
    let angle = 2.0 * diff.sqrt().atan2(sum.sqrt());
    angle.min(std::f64::consts::PI - angle)
}

/// Spherical coordinates of a point on the unit sphere in `R^d`.
///
/// The first `d - 2` angles lie in `[0, π]`, the last in `[0, 2π)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SphericalPoint {
    zeta: Vec<f64>,
}

impl SphericalPoint {
    pub fn new(zeta: Vec<f64>) -> Result<Self> {
        let Some((last, head)) = zeta.split_last() else {
            return Err(Error::InvalidArgument("need at least one angle".into()));
        };
        let pi = std::f64::consts::PI;
        if head.iter().any(|z| !(0.0..=pi).contains(z)) || !(0.0..=2.0 * pi).contains(last) {
            return Err(Error::InvalidArgument(format!(
                "angles {zeta:?} outside [0, π]^(d-2) x [0, 2π]"
            )));
        }
        Ok(Self { zeta })
    }

    /// Angles of a nonzero direction (normalized first, sign kept).
    pub fn from_direction(beta: &[f64]) -> Result<Self> {
        let d = beta.len();
        if d < 2 {
            return Err(Error::InvalidArgument("spherical angles need d >= 2".into()));
        }
        let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidArgument("zero direction".into()));
        }
        let mut zeta = Vec::with_capacity(d - 1);
        for k in 0..d - 2 {
            let tail = beta[k + 1..].iter().map(|b| b * b).sum::<f64>().sqrt();
            zeta.push(tail.atan2(beta[k]));
        }
        let mut last = beta[d - 1].atan2(beta[d - 2]);
        if last < 0.0 {
            last += 2.0 * std::f64::consts::PI;
        }
        zeta.push(last);
        Ok(Self { zeta })
    }

    pub fn angles(&self) -> &[f64] {
        &self.zeta
    }

    pub fn dim(&self) -> usize {
        self.zeta.len() + 1
    }
}

/// The map from `d - 1` angles to the unit sphere in `R^d`:
/// `(cos ζ1, sin ζ1 cos ζ2, ..., sin ζ1...sin ζ_{d-2} cos ζ_{d-1},
/// sin ζ1...sin ζ_{d-1})`. Defined for any real angles.
pub fn spherical_map(zeta: &[f64]) -> Vec<f64> {
    let d = zeta.len() + 1;
    let mut out = Vec::with_capacity(d);
    let mut sin_prod = 1.0;
    for &z in zeta {
        out.push(sin_prod * z.cos());
        sin_prod *= z.sin();
    }
    out.push(sin_prod);
    out
}

/// Jacobian `∂S/∂ζ` as a `d x (d-1)` matrix.
pub fn spherical_jacobian(zeta: &[f64]) -> DMatrix<f64> {
    let m = zeta.len();
    let d = m + 1;
    let (sin, cos): (Vec<f64>, Vec<f64>) = zeta.iter().map(|z| z.sin_cos()).unzip();
    DMatrix::from_fn(d, m, |k, j| {
        // S_k = prod_{i<k} sin ζ_i * (cos ζ_k if k < m else 1)
        if j > k {
            return 0.0;
        }
        let mut v = 1.0;
        for i in 0..k.min(m) {
            v *= if i == j { cos[i] } else { sin[i] };
        }
        if k < m {
            v *= if j == k { -sin[k] } else { cos[k] };
        }
        v
    })
}

/// Logistic regression of `D` on `(1, X)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogisticFit {
    pub intercept: f64,
    pub slopes: Vec<f64>,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub trace: Vec<f64>,
}

impl LogisticFit {
    pub fn linear_predictor(&self, data: &ObservationSet) -> Vec<f64> {
        data.index_values(&self.slopes)
            .into_iter()
            .map(|t| t + self.intercept)
            .collect()
    }

    pub fn probabilities(&self, data: &ObservationSet) -> Vec<f64> {
        self.linear_predictor(data).into_iter().map(logistic).collect()
    }
}

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_SCORE_TOL: f64 = 1e-10;
const SEPARATION_NORM: f64 = 1e6;

fn log_likelihood(eta: &[f64], d: &[bool]) -> f64 {
    // log p = -log(1 + e^{-η}), log(1 - p) = -log(1 + e^{η})
    eta.iter()
        .zip(d)
        .map(|(&t, &treated)| {
            let s = if treated { -t } else { t };
            -softplus(s)
        })
        .sum()
}

fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

fn perfectly_classified(eta: &[f64], d: &[bool]) -> bool {
    eta.iter()
        .zip(d)
        .all(|(&t, &treated)| if treated { t > 0.0 } else { t < 0.0 })
}

/// Fits `logit pr(D=1|x) = α + x'b` by Newton-Raphson with step halving.
///
/// Converges when the largest score component is below 1e-10. Data that a
/// hyperplane separates exactly, or a coefficient norm above 1e6, is
/// reported as [`Error::Separation`].
pub fn logistic_regression(data: &ObservationSet) -> Result<LogisticFit> {
    let n = data.n();
    let p = data.dim() + 1;
    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { data.row(i)[j - 1] });
    let d = data.d();
    let target = DVector::from_iterator(n, d.iter().map(|&t| f64::from(u8::from(t))));

    if solve_spd(design.tr_mul(&design), &DVector::zeros(p)).is_none() {
        return Err(Error::RankDeficient);
    }

    let mut coef = DVector::<f64>::zeros(p);
    let mut eta = vec![0.0; n];
    let mut ll = log_likelihood(&eta, d);
    let mut trace = vec![ll];

    for iter in 0..NEWTON_MAX_ITER {
        let probs = DVector::from_iterator(n, eta.iter().map(|&t| logistic(t)));
        let score = design.tr_mul(&(&target - &probs));
        if score.amax() < NEWTON_SCORE_TOL {
            if perfectly_classified(&eta, d) {
                return Err(Error::Separation);
            }
            return Ok(LogisticFit {
                intercept: coef[0],
                slopes: coef.as_slice()[1..].to_vec(),
                iterations: iter,
                log_likelihood: ll,
                trace,
            });
        }
        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= probs[i] * (1.0 - probs[i]);
        }
        let hessian = design.tr_mul(&weighted);
        let step = solve_spd(hessian, &score).ok_or_else(|| {
            if perfectly_classified(&eta, d) {
                Error::Separation
            } else {
                Error::RankDeficient
            }
        })?;

        let mut scale = 1.0;
        let (next, next_eta, next_ll) = loop {
            let cand = &coef + &step * scale;
            let cand_eta: Vec<f64> = (&design * &cand).iter().copied().collect();
            let cand_ll = log_likelihood(&cand_eta, d);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) || scale < 1e-10 {
                break (cand, cand_eta, cand_ll);
            }
            scale *= 0.5;
        };
        let moved = (&next - &coef).amax();
        coef = next;
        eta = next_eta;
        ll = next_ll;
        trace.push(ll);
        if coef.norm() > SEPARATION_NORM || perfectly_classified(&eta, d) {
            return Err(Error::Separation);
        }
        if moved == 0.0 {
            // no representable progress; accept if the score is at rounding level
            let probs = DVector::from_iterator(n, eta.iter().map(|&t| logistic(t)));
            let score = design.tr_mul(&(&target - &probs));
            if score.amax() < NEWTON_SCORE_TOL * 1e3 {
                return Ok(LogisticFit {
                    intercept: coef[0],
                    slopes: coef.as_slice()[1..].to_vec(),
                    iterations: iter + 1,
                    log_likelihood: ll,
                    trace,
                });
            }
            return Err(Error::NonConvergence { iterations: iter + 1 });
        }
    }
    Err(Error::NonConvergence {
        iterations: NEWTON_MAX_ITER,
    })
}

fn solve_spd(matrix: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = matrix.cholesky()?;
    let l = chol.l_dirty();
    let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)]).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if min.is_nan() || min <= 1e-7 * max {
        return None;
    }
    Some(chol.solve(rhs))
}

/// Index direction from the logistic MLE slope, intercept discarded.
pub fn logistic_mle(data: &ObservationSet) -> Result<IndexFit> {
    if data.dim() == 1 {
        return Ok(IndexFit::trivial(IndexMethod::LogisticMle));
    }
    let fit = logistic_regression(data)?;
    Ok(IndexFit {
        beta: normalize_direction(&fit.slopes)?,
        method: IndexMethod::LogisticMle,
        objective_trace: fit.trace,
        converged: true,
    })
}

/// Empirical score `P_n[J(ζ)' X (D - π̂_S(ζ)(X'S(ζ)))]`.
///
/// The isotonic fit is computed along the direction `S(ζ)`; the average is
/// accumulated in index order, so row permutations of tie-free data give
/// bitwise identical output.
pub fn sse_objective(data: &ObservationSet, zeta: &[f64]) -> Result<Vec<f64>> {
    if zeta.len() + 1 != data.dim() {
        return Err(Error::InvalidArgument(format!(
            "{} angles for {} covariates",
            zeta.len(),
            data.dim()
        )));
    }
    let gamma = spherical_map(zeta);
    let step = StepPropensity::fit_on_key(data, &data.index_values(&gamma))?;
    let d = data.d();
    let mut moment = vec![0.0; data.dim()];
    for (rank, &unit) in step.perm.order.iter().enumerate() {
        let resid = f64::from(u8::from(d[unit])) - step.fitted[rank];
        for (m, x) in moment.iter_mut().zip(data.row(unit)) {
            *m += x * resid;
        }
    }
    let n = data.n() as f64;
    let moment = DVector::from_iterator(moment.len(), moment.into_iter().map(|m| m / n));
    let jac = spherical_jacobian(zeta);
    Ok(jac.tr_mul(&moment).iter().copied().collect())
}

/// Search settings for [`sse_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct SseOptions {
    /// A fit is flagged converged when `‖φ_n(ζ̂)‖ <= tol_constant / sqrt(n)`.
    pub tol_constant: f64,
    /// Initial simplex edge, in radians.
    pub initial_step: f64,
    /// Simplex diameter at which a search stops, in radians.
    pub xtol: f64,
    /// Objective evaluations per start and per angle.
    pub max_evals_per_angle: usize,
    /// Quasi-random starts added after the logistic warm start.
    pub quasi_random_starts: usize,
}

impl Default for SseOptions {
    fn default() -> Self {
        Self {
            tol_constant: 1.0,
            initial_step: 0.25,
            xtol: 1e-7,
            max_evals_per_angle: 150,
            quasi_random_starts: 9,
        }
    }
}

/// Default start list: the logistic direction (when it can be fitted)
/// followed by Halton points on the positive hemisphere.
pub fn default_starts(
    data: &ObservationSet,
    warm: Option<&IndexFit>,
    options: &SseOptions,
) -> Result<Vec<SphericalPoint>> {
    let d = data.dim();
    let mut starts = Vec::with_capacity(options.quasi_random_starts + 1);
    let warm = match warm {
        Some(fit) => Some(fit.beta.clone()),
        None => logistic_mle(data).ok().map(|f| f.beta),
    };
    if let Some(beta) = warm {
        starts.push(SphericalPoint::from_direction(&beta)?);
    }
    let normal = standard_normal();
    for i in 1..=options.quasi_random_starts {
        let g: Vec<f64> = (0..d)
            .map(|j| normal.inverse_cdf(halton(i as u64, PRIMES[j % PRIMES.len()])))
            .collect();
        starts.push(SphericalPoint::from_direction(&normalize_direction(&g)?)?);
    }
    Ok(starts)
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Simple score estimator of the index direction.
///
/// Minimizes `‖φ_n(ζ)‖²` by Nelder-Mead from every start; the best end
/// point wins, ties going to the earlier start.
pub fn sse_fit(data: &ObservationSet, starts: &[SphericalPoint], options: &SseOptions) -> Result<IndexFit> {
    let d = data.dim();
    if d == 1 {
        return Ok(IndexFit::trivial(IndexMethod::Sse));
    }
    if starts.is_empty() {
        return Err(Error::InvalidArgument("sse_fit needs at least one start".into()));
    }
    if let Some(bad) = starts.iter().find(|s| s.dim() != d) {
        return Err(Error::InvalidArgument(format!(
            "start of dimension {} for {d} covariates",
            bad.dim()
        )));
    }
    let objective = |z: &[f64]| -> f64 {
        match sse_objective(data, z) {
            Ok(phi) => phi.iter().map(|v| v * v).sum(),
            Err(_) => f64::INFINITY,
        }
    };
    let max_evals = options.max_evals_per_angle * (d - 1);

    let mut trace = Vec::with_capacity(starts.len());
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut any_descent = false;
    for start in starts {
        let f0 = objective(start.angles());
        let (z, fz) = nelder_mead(
            &objective,
            start.angles(),
            options.initial_step,
            options.xtol,
            max_evals,
        );
        if fz < f0 {
            any_descent = true;
        }
        trace.push(fz.sqrt());
        if best.as_ref().is_none_or(|(_, fb)| fz < *fb) {
            best = Some((z, fz));
        }
    }
    let (zeta, value) = best.expect("at least one start");
    let tol = options.tol_constant / (data.n() as f64).sqrt();
    let converged = value.sqrt() <= tol;
    if !value.is_finite() || (!any_descent && !converged) {
        return Err(Error::NoDescent);
    }
    Ok(IndexFit {
        beta: normalize_direction(&spherical_map(&zeta))?,
        method: IndexMethod::Sse,
        objective_trace: trace,
        converged,
    })
}

/// Nelder-Mead minimization with standard coefficients. Returns the best
/// vertex and its value.
fn nelder_mead<F>(f: &F, x0: &[f64], step: f64, xtol: f64, max_evals: usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let m = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(m + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for j in 0..m {
        let mut x = x0.to_vec();
        x[j] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let mut evals = m + 1;

    let blend = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect() };

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if diameter < xtol {
            break;
        }
        let centroid: Vec<f64> = (0..m)
            .map(|j| simplex[..m].iter().map(|(x, _)| x[j]).sum::<f64>() / m as f64)
            .collect();
        let (worst, f_worst) = simplex[m].clone();
        let f_best = simplex[0].1;
        let f_second = simplex[m - 1].1;

        let reflected = blend(&centroid, &worst, -1.0);
        let f_reflected = f(&reflected);
        evals += 1;
        if f_reflected < f_best {
            let expanded = blend(&centroid, &worst, -2.0);
            let f_expanded = f(&expanded);
            evals += 1;
            simplex[m] = if f_expanded < f_reflected {
                (expanded, f_expanded)
            } else {
                (reflected, f_reflected)
            };
        } else if f_reflected < f_second {
            simplex[m] = (reflected, f_reflected);
        } else {
            let (contracted, f_contracted) = if f_reflected < f_worst {
                let c = blend(&centroid, &reflected, 0.5);
                let fc = f(&c);
                (c, fc)
            } else {
                let c = blend(&centroid, &worst, 0.5);
                let fc = f(&c);
                (c, fc)
            };
            evals += 1;
            if f_contracted < f_worst.min(f_reflected) {
                simplex[m] = (contracted, f_contracted);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x = blend(&best, &vertex.0, 0.5);
                    let fx = f(&x);
                    *vertex = (x, fx);
                }
                evals += m;
            }
        }
    }
    simplex
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty simplex")
}
