//! Log-likelihood gradient on the working scale by forward-backward:
//! emission terms weighted by state posteriors, transition terms by pair
//! posteriors. Only for a free initial distribution.

use rayon::prelude::*;
use statrs::function::gamma::digamma;

use super::fit::WorkingLayout;
use super::{HmmData, HmmModel, InitialPolicy, Obs};
use crate::error::{Error, Result};
use crate::numcore::bessel_ratio_i1_i0;

struct Offsets {
    n: usize,
    block: usize,
    mu: bool,
    trans: usize,
    k1: usize,
    delta: usize,
}

impl Offsets {
    fn new(l: &WorkingLayout) -> Self {
        let n = l.n_states;
        let block = 3 + usize::from(l.estimate_mu) + l.obs_covariates.len();
        let k1 = l.transition_covariates.len() + 1;
        let trans = n * block;
        Offsets {
            n,
            block,
            mu: l.estimate_mu,
            trans,
            k1,
            delta: trans + n * (n - 1) * k1,
        }
    }

    fn tr(&self, i: usize, j: usize, c: usize) -> usize {
        let jj = if j < i { j } else { j - 1 };
        self.trans + (i * (self.n - 1) + jj) * self.k1 + c
    }

    fn slopes(&self, i: usize) -> usize {
        i * self.block + 3 + usize::from(self.mu)
    }
}

/// Emission log-density of state `i` and its derivatives with respect to
/// (log mean, log sd, log kappa, mu).
fn emission_with_grad(model: &HmmModel, i: usize, o: &Obs) -> (f64, [f64; 4]) {
    let s = &model.states[i];
    let sd = s.step.sd();
    let mean = if s.mean_slopes.is_empty() {
        s.step.mean()
    } else {
        (s.step.mean().ln() + s.mean_slopes.iter().zip(&o.xo).map(|(b, x)| b * x).sum::<f64>()).exp()
    };
    let k = mean * mean / (sd * sd);
    let r = mean / (sd * sd);
    let ln_r = r.ln();
    let mut lp = k * ln_r - statrs::function::gamma::ln_gamma(k) + (k - 1.0) * o.ln_l - r * o.l;
    let a = ln_r - digamma(k) + o.ln_l;
    let du = 2.0 * k * a + k - r * o.l;
    let dv = -2.0 * k * a - 2.0 * (k - r * o.l);
    let (mut dk, mut dmu) = (0.0, 0.0);
    if o.turn.is_some() {
        let kappa = s.angle.kappa();
        let (sm, cm) = s.angle.mu().sin_cos();
        let cos_d = o.cos_t * cm + o.sin_t * sm;
        let sin_d = o.sin_t * cm - o.cos_t * sm;
        lp += s.angle.logpdf(s.angle.mu()) - kappa + kappa * cos_d;
        dk = kappa * (cos_d - bessel_ratio_i1_i0(kappa));
        dmu = kappa * sin_d;
    }
    (lp, [du, dv, dk, dmu])
}

fn burst_grad(model: &HmmModel, off: &Offsets, burst: &[Obs], grad: &mut [f64]) -> Result<f64> {
    let t_len = burst.len();
    if t_len == 0 {
        return Ok(0.0);
    }
    let n = off.n;
    let varying = !model.transition_covariates.is_empty();
    let mut lp = vec![0.0; t_len * n];
    let mut dem = vec![[0.0; 4]; t_len * n];
    let mut m = vec![0.0; t_len];
    for (t, o) in burst.iter().enumerate() {
        let mut mx = f64::NEG_INFINITY;
        for i in 0..n {
            let (v, d) = emission_with_grad(model, i, o);
            lp[t * n + i] = v;
            dem[t * n + i] = d;
            mx = mx.max(v);
        }
        if !mx.is_finite() {
            return Err(Error::DomainError(
                "emission density is zero for every state".into(),
            ));
        }
        m[t] = mx;
    }
    let e: Vec<f64> = (0..t_len * n).map(|idx| (lp[idx] - m[idx / n]).exp()).collect();

    // Gamma_t drives t -> t+1.
    let n_gamma = if varying {
        t_len.saturating_sub(1).max(1)
    } else {
        1
    };
    let mut gam = vec![0.0; n_gamma * n * n];
    for (t, g) in gam.chunks_mut(n * n).enumerate() {
        model.fill_transition(&burst[t].xt, g);
    }
    let g_at = |t: usize| {
        let t = if varying { t } else { 0 };
        &gam[t * n * n..(t + 1) * n * n]
    };

    let mut alpha = vec![0.0; t_len * n];
    let mut s = vec![0.0; t_len];
    let mut ll = 0.0;
    for t in 0..t_len {
        let mut tot = 0.0;
        for j in 0..n {
            let prior = if t == 0 {
                model.delta[j]
            } else {
                let g = g_at(t - 1);
                (0..n).map(|i| alpha[(t - 1) * n + i] * g[i * n + j]).sum()
            };
            let a = prior * e[t * n + j];
            alpha[t * n + j] = a;
            tot += a;
        }
        if !(tot > 0.0) {
            return Err(Error::DomainError("forward pass underflowed".into()));
        }
        for a in &mut alpha[t * n..(t + 1) * n] {
            *a /= tot;
        }
        s[t] = tot;
        ll += tot.ln() + m[t];
    }

    let mut beta = vec![1.0; t_len * n];
    for t in (0..t_len - 1).rev() {
        let g = g_at(t);
        for i in 0..n {
            beta[t * n + i] = (0..n)
                .map(|j| g[i * n + j] * e[(t + 1) * n + j] * beta[(t + 1) * n + j])
                .sum::<f64>()
                / s[t + 1];
        }
    }

    for t in 0..t_len {
        let o = &burst[t];
        for i in 0..n {
            let w = alpha[t * n + i] * beta[t * n + i];
            let d = &dem[t * n + i];
            let base = i * off.block;
            grad[base] += w * d[0];
            grad[base + 1] += w * d[1];
            grad[base + 2] += w * d[2];
            if off.mu {
                grad[base + 3] += w * d[3];
            }
            let sl = off.slopes(i);
            for (c, x) in o.xo.iter().enumerate() {
                grad[sl + c] += w * d[0] * x;
            }
        }
        if t + 1 < t_len {
            let g = g_at(t);
            for i in 0..n {
                let gamma_i = alpha[t * n + i] * beta[t * n + i];
                for j in (0..n).filter(|j| *j != i) {
                    let xi = alpha[t * n + i] * g[i * n + j] * e[(t + 1) * n + j] * beta[(t + 1) * n + j]
                        / s[t + 1];
                    let v = xi - gamma_i * g[i * n + j];
                    grad[off.tr(i, j, 0)] += v;
                    for (c, x) in o.xt.iter().enumerate() {
                        grad[off.tr(i, j, c + 1)] += v * x;
                    }
                }
            }
        }
    }
    for k in 1..n {
        grad[off.delta + k - 1] += alpha[k] * beta[k] - model.delta[k];
    }
    Ok(ll)
}

/// Log-likelihood and its gradient with respect to the working vector of
/// `layout`.
pub(crate) fn data_loglik_grad(
    model: &HmmModel,
    layout: &WorkingLayout,
    data: &HmmData,
) -> Result<(f64, Vec<f64>)> {
    if model.initial != InitialPolicy::Free {
        return Err(Error::InvalidParameter(
            "analytic gradient needs a free initial distribution".into(),
        ));
    }
    let off = Offsets::new(layout);
    let parts: Vec<Result<(f64, Vec<f64>)>> = data
        .bursts
        .par_iter()
        .map(|b| {
            let mut g = vec![0.0; layout.len()];
            burst_grad(model, &off, b, &mut g).map(|ll| (ll, g))
        })
        .collect();
    let mut ll = 0.0;
    let mut grad = vec![0.0; layout.len()];
    for p in parts {
        let (l, g) = p?;
        ll += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((ll, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::Point;
    use crate::numcore::{numerical_gradient, Rng};
    use crate::track::{Step, StepSeries};

    fn series(t: usize, bursts: usize, rng: &mut Rng) -> StepSeries {
        let steps = (0..t)
            .map(|i| {
                let b = i * bursts / t;
                let first = i == 0 || (i - 1) * bursts / t != b;
                let turn = (!first).then(|| rng.uniform_range(-3.0, 3.0));
                Step {
                    burst: b,
                    t_start: i as i64,
                    t_end: i as i64 + 1,
                    start: Point::default(),
                    end: Point::default(),
                    length: rng.uniform_range(0.1, 8.0),
                    heading: Some(0.0),
                    prev_heading: turn.map(|_| 0.0),
                    turn,
                    covariates: vec![Some(rng.normal()), Some(rng.uniform())],
                }
            })
            .collect();
        StepSeries {
            covariate_names: vec!["a".into(), "b".into()],
            burst_ids: (0..bursts).map(|b| b.to_string()).collect(),
            steps,
        }
    }

    #[test]
    fn matches_finite_differences() {
        let mut rng = Rng::new(3);
        for (n, tc, oc, mu) in [
            (1, vec![], vec![], false),
            (2, vec!["a"], vec![], false),
            (3, vec!["a", "b"], vec!["b"], true),
            (3, vec![], vec![], true),
        ] {
            let tc: Vec<String> = tc.into_iter().map(String::from).collect();
            let oc: Vec<String> = oc.into_iter().map(String::from).collect();
            let steps = series(60, 3, &mut rng);
            let data = HmmData::prepare(&steps, &tc, &oc).unwrap();
            let layout = WorkingLayout {
                n_states: n,
                transition_covariates: tc,
                obs_covariates: oc,
                estimate_mu: mu,
                initial: InitialPolicy::Free,
            };
            // 5 random points per layout, 20 in all
            for _ in 0..5 {
                let w: Vec<f64> = (0..layout.len())
                    .map(|i| {
                        if i % 7 == 0 {
                            rng.uniform_range(0.5, 1.5)
                        } else {
                            rng.uniform_range(-1.0, 1.0)
                        }
                    })
                    .collect();
                let model = layout.unpack(&w).unwrap();
                let (ll, g) = data_loglik_grad(&model, &layout, &data).unwrap();
                let f = |x: &[f64]| super::super::data_loglik(&layout.unpack(x).unwrap(), &data).unwrap();
                assert!((ll - f(&w)).abs() < 1e-9 * ll.abs());
                let fd = numerical_gradient(f, &w);
                for (k, (a, b)) in g.iter().zip(&fd).enumerate() {
                    assert!(
                        (a - b).abs() < 1e-4 * b.abs().max(1e-2),
                        "n={n} param {k}: {a} vs {b}"
                    );
                }
            }
        }
    }
}
