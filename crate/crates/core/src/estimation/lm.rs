//! Bounded Levenberg-Marquardt least squares with finite-difference
//! Jacobians.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One free parameter with box bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub init: f64,
    pub lower: f64,
    pub upper: f64,
    /// Typical magnitude, used for finite-difference steps when `init` is
    /// near zero.
    pub scale: f64,
}

impl Param {
    pub fn new(name: impl Into<String>, init: f64) -> Self {
        Param {
            name: name.into(),
            init,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            scale: init.abs().max(1e-300),
        }
    }

    pub fn bounded(mut self, lower: f64, upper: f64) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }
}

/// How the parameter covariance is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceScaling {
    /// (J^T J)^-1 times the reduced chi-square 2 cost / (m - n).
    #[default]
    ResidualVariance,
    /// (J^T J)^-1 as is: residuals are already divided by their true
    /// standard deviations.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative cost reduction below which the fit stops.
    pub ftol: f64,
    /// Relative step size below which the fit stops.
    pub xtol: f64,
    /// Largest cosine between residual vector and Jacobian columns.
    pub gtol: f64,
    pub covariance: CovarianceScaling,
    pub record_trace: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 200,
            ftol: 1e-14,
            xtol: 1e-12,
            gtol: 1e-12,
            covariance: CovarianceScaling::ResidualVariance,
            record_trace: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    ExactFit,
    CostConverged,
    StepConverged,
    GradientConverged,
    NoFurtherReduction,
    MaxIterations,
}

impl FitStatus {
    pub fn is_converged(self) -> bool {
        !matches!(self, FitStatus::MaxIterations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub cost: f64,
    pub lambda: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub uncertainties: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub residual_norm: f64,
    /// Half the sum of squared (weighted) residuals.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub status: FitStatus,
    pub at_bound: Vec<bool>,
    pub gradient_norm: f64,
    pub trace: Vec<TraceEntry>,
}

impl FitResult {
    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.values[i])
    }

    pub fn uncertainty(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.uncertainties[i])
    }

    pub fn is_at_bound(&self, name: &str) -> bool {
        self.index(name).is_some_and(|i| self.at_bound[i])
    }

    /// Reduced chi-square 2 cost / (m - n).
    pub fn reduced_chi_square(&self) -> f64 {
        let dof = self.residuals.len().saturating_sub(self.values.len()).max(1);
        2.0 * self.cost / dof as f64
    }
}

const EPS: f64 = f64::EPSILON;

fn evaluate<F>(f: &F, p: &[f64], m: Option<usize>) -> Result<DVector<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let r = f(p)?;
    if let Some(m) = m {
        if r.len() != m {
            return Err(Error::invalid("residuals", "residual length changed between evaluations"));
        }
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("residual function returned a non-finite value".into()));
    }
    Ok(DVector::from_vec(r))
}

/// Finite-difference Jacobian of the residual vector. Central differences
/// with step sqrt(eps) max(|p|, scale); second-order one-sided differences
/// where a central step would leave the box.
pub fn jacobian<F>(f: &F, p: &[f64], params: &[Param], r0: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let m = r0.len();
    let n = p.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut x = p.to_vec();
    for j in 0..n {
        let h = EPS.sqrt() * p[j].abs().max(params[j].scale);
        let up = p[j] + h <= params[j].upper;
        let down = p[j] - h >= params[j].lower;
        let col = if up && down {
            x[j] = p[j] + h;
            let rp = evaluate(f, &x, Some(m))?;
            x[j] = p[j] - h;
            let rm = evaluate(f, &x, Some(m))?;
            (rp - rm) / (2.0 * h)
        } else {
            let s = if up { h } else { -h };
            let far = p[j] + 2.0 * s;
            if !(up || down) || far > params[j].upper || far < params[j].lower {
                return Err(Error::invalid(
                    params[j].name.clone(),
                    "bounds too narrow for a finite-difference step",
                ));
            }
            x[j] = p[j] + s;
            let r1 = evaluate(f, &x, Some(m))?;
            x[j] = p[j] + 2.0 * s;
            let r2 = evaluate(f, &x, Some(m))?;
            (r1 * 4.0 - r2 - r0 * 3.0) / (2.0 * s)
        };
        jac.set_column(j, &col);
        x[j] = p[j];
    }
    Ok(jac)
}

/// Ratio threshold of the smallest to largest eigenvalue of the
/// column-normalised normal matrix below which the problem is declared
/// rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-12;

fn check_rank(jac: &DMatrix<f64>, params: &[Param]) -> Result<()> {
    let n = jac.ncols();
    let mut norms = Vec::with_capacity(n);
    for (j, p) in params.iter().enumerate() {
        let c = jac.column(j).norm();
        if c == 0.0 || !c.is_finite() {
            return Err(Error::RankDeficient(format!(
                "residuals do not depend on parameter '{}'",
                p.name
            )));
        }
        norms.push(c);
    }
    let mut scaled = jac.clone();
    for (j, c) in norms.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / c);
    }
    let ev = SymmetricEigen::new(scaled.transpose() * &scaled).eigenvalues;
    let max = ev.max();
    let min = ev.min();
    if min <= RANK_TOLERANCE * max {
        let names: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
        return Err(Error::RankDeficient(format!(
            "normal matrix is singular (eigenvalue ratio {:.2e}) for parameters {:?}",
            min / max,
            names
        )));
    }
    Ok(())
}

fn clamp(p: &mut [f64], params: &[Param]) {
    for (v, q) in p.iter_mut().zip(params) {
        *v = v.clamp(q.lower, q.upper);
    }
}

/// Components whose bound is active and whose descent direction points out
/// of the box.
fn active_set(p: &[f64], grad: &DVector<f64>, params: &[Param]) -> Vec<bool> {
    p.iter()
        .zip(params)
        .enumerate()
        .map(|(j, (&v, q))| (v <= q.lower && grad[j] > 0.0) || (v >= q.upper && grad[j] < 0.0))
        .collect()
}

/// Minimise 0.5 |r(p)|^2 over the box defined by `params`.
///
/// `residuals` returns weighted residuals (model minus data divided by the
/// standard deviation, or unweighted differences).
pub fn least_squares_fit<F>(residuals: F, params: &[Param], options: &FitOptions) -> Result<FitResult>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = params.len();
    if n == 0 {
        return Err(Error::invalid("params", "at least one parameter required"));
    }
    for q in params {
        if !q.init.is_finite() {
            return Err(Error::invalid(q.name.clone(), "initial value must be finite"));
        }
        if !(q.lower <= q.upper) || q.init < q.lower || q.init > q.upper {
            return Err(Error::invalid(q.name.clone(), "initial value outside bounds"));
        }
        if !(q.scale > 0.0) {
            return Err(Error::invalid(q.name.clone(), "scale must be > 0"));
        }
    }
    let mut p: Vec<f64> = params.iter().map(|q| q.init).collect();
    let mut r = evaluate(&residuals, &p, None)?;
    let m = r.len();
    if m < n {
        return Err(Error::invalid(
            "data",
            format!("{m} residuals for {n} parameters"),
        ));
    }
    let mut cost = 0.5 * r.norm_squared();
    let mut jac = jacobian(&residuals, &p, params, &r)?;
    check_rank(&jac, params)?;

    let mut lambda = 0.0;
    let mut nu = 2.0;
    let mut trace = Vec::new();
    let mut status = FitStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        if cost == 0.0 {
            status = FitStatus::ExactFit;
            break;
        }
        let grad = jac.transpose() * &r;
        let active = active_set(&p, &grad, params);
        let rnorm = r.norm();
        let cosine = (0..n)
            .filter(|&j| !active[j])
            .map(|j| {
                let c = jac.column(j).norm();
                if c == 0.0 {
                    0.0
                } else {
                    grad[j].abs() / (c * rnorm)
                }
            })
            .fold(0.0, f64::max);
        if cosine <= options.gtol {
            status = FitStatus::GradientConverged;
            break;
        }

        let jtj = jac.transpose() * &jac;
        let mut accepted = false;
        // inner loop: raise damping until a step reduces the cost
        for _ in 0..60 {
            let mut a = jtj.clone();
            for j in 0..n {
                let d = jtj[(j, j)].max(1e-300);
                a[(j, j)] += lambda * d;
                if active[j] {
                    // freeze components pinned at a bound
                    for k in 0..n {
                        a[(j, k)] = 0.0;
                        a[(k, j)] = 0.0;
                    }
                    a[(j, j)] = 1.0;
                }
            }
            let mut rhs = -grad.clone();
            for j in 0..n {
                if active[j] {
                    rhs[j] = 0.0;
                }
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => {
                    lambda = if lambda == 0.0 { 1e-3 } else { lambda * nu };
                    nu *= 2.0;
                    continue;
                }
            };
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            clamp(&mut trial, params);
            let delta = DVector::from_iterator(n, trial.iter().zip(&p).map(|(a, b)| a - b));
            let predicted_r = &r + &jac * &delta;
            let predicted = cost - 0.5 * predicted_r.norm_squared();
            let outcome = evaluate(&residuals, &trial, Some(m));
            let (new_r, new_cost) = match outcome {
                Ok(v) => {
                    let c = 0.5 * v.norm_squared();
                    (Some(v), c)
                }
                Err(Error::Domain(_)) => (None, f64::INFINITY),
                Err(e) => return Err(e),
            };
            let actual = cost - new_cost;
            let rho = if predicted > 0.0 { actual / predicted } else { -1.0 };
            if options.record_trace {
                trace.push(TraceEntry {
                    iteration: iterations + 1,
                    cost: new_cost.min(cost),
                    lambda,
                    accepted: rho > 1e-4,
                });
            }
            if rho > 1e-4 {
                let pnorm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                p = trial;
                r = new_r.expect("accepted step has residuals");
                let old_cost = cost;
                cost = new_cost;
                lambda *= f64::max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0).powi(3));
                nu = 2.0;
                accepted = true;
                if cost == 0.0 {
                    status = FitStatus::ExactFit;
                } else if actual <= options.ftol * old_cost && predicted <= options.ftol * old_cost {
                    status = FitStatus::CostConverged;
                } else if delta.norm() <= options.xtol * (pnorm + options.xtol) {
                    status = FitStatus::StepConverged;
                }
                break;
            }
            if predicted <= 10.0 * EPS * cost || delta.norm() == 0.0 {
                status = FitStatus::NoFurtherReduction;
                break;
            }
            lambda = if lambda == 0.0 { 1e-3 } else { lambda * nu };
            nu *= 2.0;
        }
        iterations += 1;
        if accepted {
            jac = jacobian(&residuals, &p, params, &r)?;
        }
        if status != FitStatus::MaxIterations {
            break;
        }
        if !accepted {
            status = FitStatus::NoFurtherReduction;
            break;
        }
    }

    check_rank(&jac, params)?;
    let grad = jac.transpose() * &r;
    let jtj = jac.transpose() * &jac;
    let inv = jtj
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("normal matrix not invertible at the solution".into()))?;
    let scale = match options.covariance {
        CovarianceScaling::Absolute => 1.0,
        CovarianceScaling::ResidualVariance => {
            if m > n {
                2.0 * cost / (m - n) as f64
            } else {
                1.0
            }
        }
    };
    let cov = inv * scale;
    let cov = (&cov + cov.transpose()) * 0.5;
    let covariance: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| cov[(i, j)]).collect()).collect();
    let uncertainties = (0..n).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let at_bound = p
        .iter()
        .zip(params)
        .map(|(&v, q)| v <= q.lower || v >= q.upper)
        .collect();
    Ok(FitResult {
        names: params.iter().map(|q| q.name.clone()).collect(),
        values: p,
        uncertainties,
        covariance,
        residual_norm: r.norm(),
        residuals: r.iter().copied().collect(),
        cost,
        iterations,
        converged: status.is_converged(),
        status,
        at_bound,
        gradient_norm: grad.norm(),
        trace,
    })
}

/// Weighted curve fit of `model(x, p)` to `(x, y)` with standard deviations
/// `sigma` (unweighted if `None`).
pub fn curve_fit<M>(
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
    model: M,
    params: &[Param],
    options: &FitOptions,
) -> Result<FitResult>
where
    M: Fn(f64, &[f64]) -> f64,
{
    if x.len() != y.len() || sigma.is_some_and(|s| s.len() != y.len()) {
        return Err(Error::invalid("data", "x, y and sigma lengths differ"));
    }
    if let Some(s) = sigma {
        if s.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("sigma", "standard deviations must be > 0"));
        }
    }
    least_squares_fit(
        |p| {
            Ok(x.iter()
                .zip(y)
                .enumerate()
                .map(|(i, (&xi, &yi))| {
                    let w = sigma.map_or(1.0, |s| s[i]);
                    (model(xi, p) - yi) / w
                })
                .collect())
        },
        params,
        options,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_model_one_step() {
        let x: Vec<f64> = (1..=10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let fit = curve_fit(&x, &y, None, |x, p| p[0] * x, &[Param::new("a", 1.0)], &FitOptions::default()).unwrap();
        assert!((fit.values[0] - 2.0).abs() < 1e-12);
        assert_eq!(fit.uncertainties[0], 0.0);
        assert_eq!(fit.iterations, 1);
        assert!(fit.converged);
    }

    #[test]
    fn rosenbrock_from_far() {
        let fit = least_squares_fit(
            |p| Ok(vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]]),
            &[Param::new("x", -1.2), Param::new("y", 1.0)],
            &FitOptions::default(),
        )
        .unwrap();
        assert!(fit.converged);
        assert!((fit.values[0] - 1.0).abs() < 1e-9 && (fit.values[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bound_is_respected_and_flagged() {
        // minimum at x = 3 but x <= 2
        let fit = least_squares_fit(
            |p| Ok(vec![p[0] - 3.0, 0.5 * (p[0] - 3.0), p[1] - 1.0]),
            &[Param::new("x", 0.0).bounded(-5.0, 2.0).with_scale(1.0), Param::new("y", 0.0).with_scale(1.0)],
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(fit.values[0], 2.0);
        assert!(fit.is_at_bound("x") && !fit.is_at_bound("y"));
        assert!((fit.values[1] - 1.0).abs() < 1e-10);
        assert!(fit.converged);
    }

    #[test]
    fn redundant_parameters_are_rank_deficient() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let err = curve_fit(
            &x,
            &y,
            None,
            |x, p| (p[0] + p[1]) * x,
            &[Param::new("a", 1.0), Param::new("b", 1.0)],
            &FitOptions::default(),
        );
        assert!(matches!(err, Err(Error::RankDeficient(_))));
        let err = curve_fit(
            &x,
            &y,
            None,
            |x, p| p[0] * x,
            &[Param::new("a", 1.0), Param::new("unused", 1.0)],
            &FitOptions::default(),
        );
        assert!(matches!(err, Err(Error::RankDeficient(m)) if m.contains("unused")));
    }

    #[test]
    fn iteration_limit_reports_non_convergence() {
        let opts = FitOptions {
            max_iterations: 2,
            ..FitOptions::default()
        };
        let fit = least_squares_fit(
            |p| Ok(vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]]),
            &[Param::new("x", -1.2), Param::new("y", 1.0)],
            &opts,
        )
        .unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.status, FitStatus::MaxIterations);
        assert!(!fit.trace.is_empty());
    }

    #[test]
    fn covariance_of_straight_line() {
        // closed form: Var(slope) = s^2 / Sxx with s^2 = RSS/(m-2)
        let x: Vec<f64> = (0..8).map(f64::from).collect();
        let noise = [0.1, -0.2, 0.05, 0.3, -0.1, -0.15, 0.2, -0.05];
        let y: Vec<f64> = x.iter().zip(noise).map(|(x, e)| 1.0 + 0.5 * x + e).collect();
        let fit = curve_fit(
            &x,
            &y,
            None,
            |x, p| p[0] + p[1] * x,
            &[Param::new("c", 0.0).with_scale(1.0), Param::new("m", 0.0).with_scale(1.0)],
            &FitOptions::default(),
        )
        .unwrap();
        let n = x.len() as f64;
        let xm = x.iter().sum::<f64>() / n;
        let ym = y.iter().sum::<f64>() / n;
        let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum();
        let slope = sxy / sxx;
        let icpt = ym - slope * xm;
        let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
        let var_slope = rss / (n - 2.0) / sxx;
        assert!((fit.values[1] - slope).abs() < 1e-10);
        assert!((fit.uncertainties[1] / var_slope.sqrt() - 1.0).abs() < 1e-6);
        let c = &fit.covariance;
        assert!((c[0][1] - c[1][0]).abs() == 0.0);
        assert!(c[0][0] * c[1][1] - c[0][1] * c[1][0] > 0.0);
    }

    #[test]
    fn jacobian_matches_five_point_stencil() {
        let f = |p: &[f64]| -> Result<Vec<f64>> {
            Ok((0..6)
                .map(|i| {
                    let x = i as f64 * 0.3;
                    p[0] * (-p[1] * x).exp() + (p[2] * x).sin()
                })
                .collect())
        };
        let p = [1.3, 0.7, 2.1];
        let params: Vec<Param> = p.iter().enumerate().map(|(i, &v)| Param::new(format!("p{i}"), v)).collect();
        let r0 = DVector::from_vec(f(&p).unwrap());
        let jac = jacobian(&f, &p, &params, &r0).unwrap();
        for j in 0..3 {
            let h = 1e-3;
            let at = |d: f64| {
                let mut q = p;
                q[j] += d;
                f(&q).unwrap()
            };
            let (a, b, c, d) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
            for i in 0..6 {
                let five = (-a[i] + 8.0 * b[i] - 8.0 * c[i] + d[i]) / (12.0 * h);
                assert!((jac[(i, j)] - five).abs() < 1e-7 * (1.0 + five.abs()), "{i},{j}");
            }
        }
    }

    #[test]
    fn one_sided_jacobian_at_bound() {
        let f = |p: &[f64]| -> Result<Vec<f64>> { Ok(vec![p[0] * p[0], p[0].exp()]) };
        let params = [Param::new("x", 1.0).bounded(1.0, 2.0)];
        let r0 = DVector::from_vec(f(&[1.0]).unwrap());
        let jac = jacobian(&f, &[1.0], &params, &r0).unwrap();
        assert!((jac[(0, 0)] - 2.0).abs() < 1e-7);
        assert!((jac[(1, 0)] - 1f64.exp()).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn quadratic_bowl_reaches_minimum(
            x0 in -50.0f64..50.0, y0 in -50.0f64..50.0,
            cx in -5.0f64..5.0, cy in -5.0f64..5.0,
        ) {
            let fit = least_squares_fit(
                |p| Ok(vec![2.0 * (p[0] - cx), p[1] - cy, 0.5 * (p[0] + p[1] - cx - cy)]),
                &[Param::new("x", x0).with_scale(1.0), Param::new("y", y0).with_scale(1.0)],
                &FitOptions::default(),
            ).unwrap();
            prop_assert!(fit.converged);
            prop_assert!((fit.values[0] - cx).abs() < 1e-8);
            prop_assert!((fit.values[1] - cy).abs() < 1e-8);
        }
    }
}
