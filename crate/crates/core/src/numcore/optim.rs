//! Maximum-likelihood optimization: simplex search to find a basin, then
//! BFGS with central finite-difference gradients.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OptConfig {
    /// Convergence threshold on the infinity norm of the numerical gradient.
    pub grad_tol: f64,
    /// Total objective evaluations across both stages.
    pub max_evals: usize,
    /// Evaluation budget for the simplex stage; 0 means `200 * (dim + 1)`.
    pub simplex_evals: usize,
    /// Simplex stage stops once the spread of vertex values falls below
    /// `simplex_ftol * (1 + |best|)`.
    pub simplex_ftol: f64,
    /// Initial simplex edge, relative to `max(1, |x_i|)`.
    pub simplex_scale: f64,
    /// Skip the Hessian check at the optimum.
    pub skip_hessian: bool,
    /// Give up (unconverged) once this many consecutive BFGS iterations
    /// together improve the objective by less than `stall_ftol * (1 + |f|)`.
    /// 0 disables the rule.
    pub stall_window: usize,
    pub stall_ftol: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            grad_tol: 1e-8,
            max_evals: 50_000,
            simplex_evals: 0,
            simplex_ftol: 1e-10,
            simplex_scale: 0.1,
            skip_hessian: false,
            stall_window: 0,
            stall_ftol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub argmax: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub n_evals: usize,
    /// Numerical Hessian at `argmax` is negative definite.
    pub hessian_ok: bool,
    /// Infinity norm of the numerical gradient at `argmax`.
    pub grad_norm: f64,
}

/// Per-parameter standard error; `valid` is false when the Hessian was not
/// negative definite or the variance came out non-positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StdErr {
    pub value: f64,
    pub valid: bool,
}

#[derive(Debug, Clone)]
pub struct Uncertainty {
    pub covariance: Option<DMatrix<f64>>,
    pub se: Vec<StdErr>,
}

impl Uncertainty {
    /// Inverts an observed information matrix (negative Hessian of the
    /// log-likelihood).
    pub fn from_information(info: &DMatrix<f64>) -> Self {
        let n = info.nrows();
        let invalid = || Uncertainty {
            covariance: None,
            se: vec![
                StdErr {
                    value: f64::NAN,
                    valid: false
                };
                n
            ],
        };
        if info.iter().any(|v| !v.is_finite()) {
            return invalid();
        }
        let sym = (info + info.transpose()) * 0.5;
        let Some(chol) = sym.cholesky() else {
            return invalid();
        };
        let cov = chol.inverse();
        let se = (0..n)
            .map(|i| {
                let v = cov[(i, i)];
                if v.is_finite() && v > 0.0 {
                    StdErr {
                        value: v.sqrt(),
                        valid: true,
                    }
                } else {
                    StdErr {
                        value: f64::NAN,
                        valid: false,
                    }
                }
            })
            .collect();
        Uncertainty {
            covariance: Some(cov),
            se,
        }
    }
}

type GradFn<'a> = &'a dyn Fn(&[f64]) -> Option<Vec<f64>>;

impl Uncertainty {
    /// As [`from_information`](Self::from_information), but parameters whose
    /// information diagonal is below `min_info` (flat directions, e.g. a
    /// probability driven to 0 or 1) are left out of the inversion. Their
    /// standard errors are invalid and their covariance rows and columns
    /// are zero, so they act as fixed in delta-method calculations.
    pub fn from_information_partial(info: &DMatrix<f64>, min_info: f64) -> Self {
        let n = info.nrows();
        let keep: Vec<usize> = (0..n).filter(|&i| info[(i, i)] >= min_info).collect();
        if keep.len() == n {
            return Self::from_information(info);
        }
        let sub = DMatrix::from_fn(keep.len(), keep.len(), |a, b| info[(keep[a], keep[b])]);
        let inner = Self::from_information(&sub);
        let mut se = vec![
            StdErr {
                value: f64::NAN,
                valid: false
            };
            n
        ];
        for (a, &i) in keep.iter().enumerate() {
            se[i] = inner.se[a];
        }
        let covariance = inner.covariance.map(|c| {
            let mut full = DMatrix::zeros(n, n);
            for (a, &i) in keep.iter().enumerate() {
                for (b, &j) in keep.iter().enumerate() {
                    full[(i, j)] = c[(a, b)];
                }
            }
            full
        });
        Uncertainty { covariance, se }
    }
}

struct Counted<'a, F> {
    f: F,
    /// Analytic gradient of the objective; finite differences when absent
    /// or when it returns `None`.
    gradient: Option<GradFn<'a>>,
    evals: usize,
}

impl<F: Fn(&[f64]) -> f64> Counted<'_, F> {
    /// Minimization form: -f, with NaN mapped to +inf.
    fn cost(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    }

    fn grad(&mut self, x: &[f64]) -> Vec<f64> {
        if let Some(g) = self.gradient {
            self.evals += 1;
            if let Some(v) = g(x).filter(|v| v.iter().all(|e| e.is_finite())) {
                return v.into_iter().map(|e| -e).collect();
            }
        }
        let mut xp = x.to_vec();
        (0..x.len())
            .map(|i| {
                let h = fd_step(x[i]);
                xp[i] = x[i] + h;
                let up = self.cost(&xp);
                xp[i] = x[i] - h;
                let down = self.cost(&xp);
                xp[i] = x[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }
}

#[inline]
fn fd_step(x: f64) -> f64 {
    (1e-6 * x.abs()).max(1e-6)
}

/// Central finite-difference gradient of `f`, step `max(1e-6, 1e-6 |x_i|)`.
pub fn numerical_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = fd_step(x[i]);
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Hessian, step `1e-4 * max(1, |x_i|)`.
pub fn numerical_hessian(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let f0 = f(x);
    let mut hess = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + h[i];
        let up = f(&xp);
        xp[i] = x[i] - h[i];
        let down = f(&xp);
        xp[i] = x[i];
        hess[(i, i)] = (up - 2.0 * f0 + down) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                xp[i] = x[i] + si * h[i];
                xp[j] = x[j] + sj * h[j];
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Hessian by central differences of an analytic gradient, symmetrized.
/// `None` if the gradient fails anywhere in the stencil.
pub fn hessian_from_gradient(
    gradient: impl Fn(&[f64]) -> Option<Vec<f64>>,
    x: &[f64],
) -> Option<DMatrix<f64>> {
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for i in 0..n {
        let h = 1e-5 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let up = gradient(&xp)?;
        xp[i] = x[i] - h;
        let down = gradient(&xp)?;
        xp[i] = x[i];
        for j in 0..n {
            hess[(j, i)] = (up[j] - down[j]) / (2.0 * h);
        }
    }
    Some((&hess + hess.transpose()) * 0.5)
}

/// Standard errors from the inverse of the negative numerical Hessian.
pub fn standard_errors(objective: impl Fn(&[f64]) -> f64, argmax: &[f64]) -> Uncertainty {
    let hess = numerical_hessian(objective, argmax);
    Uncertainty::from_information(&(-hess))
}

/// Maximize `objective` starting from `init`.
///
/// Errors only when the objective is not finite at `init`; an exhausted
/// budget or a stalled line search returns the best point found with
/// `converged = false`.
pub fn optimize_mle(
    objective: impl Fn(&[f64]) -> f64,
    init: &[f64],
    config: &OptConfig,
) -> Result<OptResult> {
    optimize(objective, None, init, config)
}

/// As [`optimize_mle`] with an analytic gradient of the objective. Each
/// gradient call counts as one evaluation against the budget.
pub fn optimize_mle_with_gradient(
    objective: impl Fn(&[f64]) -> f64,
    gradient: impl Fn(&[f64]) -> Option<Vec<f64>>,
    init: &[f64],
    config: &OptConfig,
) -> Result<OptResult> {
    optimize(objective, Some(&gradient), init, config)
}

fn optimize(
    objective: impl Fn(&[f64]) -> f64,
    gradient: Option<GradFn<'_>>,
    init: &[f64],
    config: &OptConfig,
) -> Result<OptResult> {
    let f0 = objective(init);
    if !f0.is_finite() {
        return Err(Error::NonFiniteAtInit);
    }
    let mut obj = Counted {
        f: &objective,
        gradient,
        evals: 1,
    };
    let dim = init.len();
    if dim == 0 {
        return Ok(OptResult {
            argmax: vec![],
            loglik: f0,
            converged: true,
            n_evals: 1,
            hessian_ok: true,
            grad_norm: 0.0,
        });
    }

    let (mut x, mut fx) = nelder_mead(&mut obj, init, -f0, config);

    // BFGS on the cost (-objective).
    let mut g = obj.grad(&x);
    let mut hinv = DMatrix::<f64>::identity(dim, dim);
    let mut fresh = true;
    let mut converged = false;
    let mut history: std::collections::VecDeque<f64> = std::collections::VecDeque::new();
    while obj.evals < config.max_evals {
        if inf_norm(&g) <= config.grad_tol {
            converged = true;
            break;
        }
        let gv = DVector::from_column_slice(&g);
        let mut p = -(&hinv * &gv);
        let mut slope = p.dot(&gv);
        if !(slope < 0.0) {
            hinv = DMatrix::identity(dim, dim);
            fresh = true;
            p = -gv.clone();
            slope = p.dot(&gv);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(p.iter()).map(|(a, b)| a + alpha * b).collect();
            let fxn = obj.cost(&xn);
            if fxn.is_finite() && fxn <= fx + 1e-4 * alpha * slope {
                accepted = Some((xn, fxn));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fxn)) = accepted else {
            if fresh {
                break;
            }
            hinv = DMatrix::identity(dim, dim);
            fresh = true;
            continue;
        };
        let gn = obj.grad(&xn);
        let s = DVector::from_iterator(dim, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(dim, gn.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if fresh {
                hinv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(dim, dim);
            let left = &eye - rho * &s * y.transpose();
            let right = &eye - rho * &y * s.transpose();
            hinv = &left * &hinv * &right + rho * &s * s.transpose();
            fresh = false;
        }
        let improved = fx - fxn;
        x = xn;
        fx = fxn;
        g = gn;
        if improved == 0.0 && alpha < 1e-12 {
            break;
        }
        if config.stall_window > 0 {
            history.push_back(fx);
            if history.len() > config.stall_window {
                let old = history.pop_front().expect("non-empty");
                if old - fx < config.stall_ftol * (1.0 + fx.abs()) && inf_norm(&g) > config.grad_tol {
                    break;
                }
            }
        }
    }
    let grad_norm = inf_norm(&g);
    if !converged && grad_norm <= config.grad_tol {
        converged = true;
    }

    let hessian_ok = if config.skip_hessian {
        false
    } else {
        let h = numerical_hessian(&objective, &x);
        obj.evals += 1 + 2 * dim * dim;
        let neg = -(&h + h.transpose()) * 0.5;
        neg.iter().all(|v| v.is_finite()) && neg.cholesky().is_some()
    };

    Ok(OptResult {
        argmax: x,
        loglik: -fx,
        converged,
        n_evals: obj.evals,
        hessian_ok,
        grad_norm,
    })
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(
        0.0f64,
        |m, x| if x.is_nan() { f64::INFINITY } else { m.max(x.abs()) },
    )
}

/// Adaptive-coefficient Nelder-Mead on the cost. Returns the best vertex.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    obj: &mut Counted<'_, F>,
    init: &[f64],
    f_init: f64,
    config: &OptConfig,
) -> (Vec<f64>, f64) {
    let n = init.len();
    let budget = if config.simplex_evals == 0 {
        200 * (n + 1)
    } else {
        config.simplex_evals
    }
    .min(config.max_evals);
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = if n > 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((init.to_vec(), f_init));
    for i in 0..n {
        let mut v = init.to_vec();
        v[i] += config.simplex_scale * init[i].abs().max(1.0);
        let fv = obj.cost(&v);
        simplex.push((v, fv));
    }
    let start = obj.evals;

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if obj.evals - start >= budget
            || (worst.is_finite() && worst - best <= config.simplex_ftol * (1.0 + best.abs()))
        {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v.0[j]).sum::<f64>() / nf)
            .collect();
        let toward = |coef: f64, from: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(from)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };
        let xr = toward(alpha, &simplex[n].0);
        let fr = obj.cost(&xr);
        if fr < simplex[0].1 {
            let xe = toward(alpha * gamma, &simplex[n].0);
            let fe = obj.cost(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = toward(alpha * rho, &simplex[n].0);
            let fc = obj.cost(&xc);
            (xc, fc)
        } else {
            let xc = toward(-rho, &simplex[n].0);
            let fc = obj.cost(&xc);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best_x = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            for (xj, bj) in v.0.iter_mut().zip(&best_x) {
                *xj = bj + sigma * (*xj - bj);
            }
            v.1 = obj.cost(&v.0);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_maximum() {
        let r = optimize_mle(|x| -(x[0] - 3.0).powi(2), &[0.0], &OptConfig::default()).unwrap();
        assert!((r.argmax[0] - 3.0).abs() < 1e-8, "{:?}", r.argmax);
        assert!(r.converged);
        assert!(r.hessian_ok);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let r = optimize_mle(f, &[-1.2, 1.0], &OptConfig::default()).unwrap();
        assert!((r.argmax[0] - 1.0).abs() < 1e-4, "{:?}", r);
        assert!((r.argmax[1] - 1.0).abs() < 1e-4, "{:?}", r);
        assert!(r.loglik >= f(&[-1.2, 1.0]));
    }

    #[test]
    fn non_finite_init() {
        let r = optimize_mle(|x| x[0].ln(), &[-1.0], &OptConfig::default());
        assert!(matches!(r, Err(Error::NonFiniteAtInit)));
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let f = |x: &[f64]| -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let cfg = OptConfig {
            max_evals: 30,
            ..OptConfig::default()
        };
        let r = optimize_mle(f, &[-1.2, 1.0], &cfg).unwrap();
        assert!(!r.converged);
        assert!(r.loglik >= f(&[-1.2, 1.0]));
    }

    #[test]
    fn unit_and_variance_four_quadratics() {
        let u = standard_errors(|x| -x[0] * x[0] / 2.0, &[0.0]);
        assert!((u.se[0].value - 1.0).abs() < 1e-6);
        assert!(u.se[0].valid);
        let u = standard_errors(|x| -x[0] * x[0] / 8.0, &[0.0]);
        assert!((u.se[0].value - 2.0).abs() < 1e-6);
    }

    #[test]
    fn saddle_flags_invalid() {
        let u = standard_errors(|x| -x[0] * x[0] + x[1] * x[1], &[0.0, 0.0]);
        assert!(u.se.iter().all(|s| !s.valid));
        assert!(u.covariance.is_none());
    }
}
