//! Step-length and turn-angle distributions.

use std::f64::consts::{PI, TAU};

use statrs::function::gamma::ln_gamma;

use super::rng::Rng;
use crate::error::{Error, Result};

/// Reduce an angle to (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Gamma distribution parameterized by mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    mean: f64,
    sd: f64,
}

impl GammaParams {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(mean.is_finite() && mean > 0.0 && sd.is_finite() && sd > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma needs finite mean > 0 and sd > 0, got mean {mean}, sd {sd}"
            )));
        }
        let p = GammaParams { mean, sd };
        if !(p.shape().is_finite() && p.shape() > 0.0 && p.rate().is_finite() && p.rate() > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma shape/rate not representable for mean {mean}, sd {sd}"
            )));
        }
        Ok(p)
    }

    pub fn from_shape_rate(shape: f64, rate: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0 && rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma needs shape > 0 and rate > 0, got {shape}, {rate}"
            )));
        }
        GammaParams::new(shape / rate, shape.sqrt() / rate)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sd(&self) -> f64 {
        self.sd
    }

    pub fn shape(&self) -> f64 {
        (self.mean / self.sd).powi(2)
    }

    pub fn rate(&self) -> f64 {
        self.mean / (self.sd * self.sd)
    }

    pub fn logpdf(&self, x: f64) -> Result<f64> {
        gamma_logpdf(x, self)
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        sample_gamma(self, rng)
    }
}

/// Von Mises distribution on the circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VonMisesParams {
    mu: f64,
    kappa: f64,
}

impl VonMisesParams {
    /// `mu` is wrapped into (-pi, pi].
    pub fn new(mu: f64, kappa: f64) -> Result<Self> {
        if !(mu.is_finite() && kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "von Mises needs finite mu and kappa >= 0, got mu {mu}, kappa {kappa}"
            )));
        }
        Ok(VonMisesParams {
            mu: wrap_angle(mu),
            kappa,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn logpdf(&self, theta: f64) -> f64 {
        vonmises_logpdf(theta, self)
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        sample_vonmises(self, rng)
    }
}

pub fn gamma_logpdf(x: f64, p: &GammaParams) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::DomainError(format!("gamma density needs x > 0, got {x}")));
    }
    let shape = p.shape();
    let rate = p.rate();
    Ok(shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x)
}

pub fn vonmises_logpdf(theta: f64, p: &VonMisesParams) -> f64 {
    p.kappa * (theta - p.mu).cos() - TAU.ln() - ln_bessel_i0(p.kappa)
}

/// log I0(x) for x >= 0: power series below 20, large-argument expansion above.
pub fn ln_bessel_i0(x: f64) -> f64 {
    let x = x.abs();
    if x < 20.0 {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
            k += 1.0;
        }
        sum.ln()
    } else {
        // I0(x) ~ e^x / sqrt(2 pi x) * sum_k ((2k-1)!!)^2 / (k! (8x)^k)
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..30 {
            let kf = k as f64;
            term *= (2.0 * kf - 1.0).powi(2) / (kf * 8.0 * x);
            sum += term;
            if term < 1e-17 {
                break;
            }
        }
        x - 0.5 * (TAU * x).ln() + sum.ln()
    }
}

/// I1(x) / I0(x) for x >= 0, the derivative of `ln I0`. Backward
/// recurrence on `I_{v+1} / I_v` up to 500, asymptotic series above.
pub fn bessel_ratio_i1_i0(x: f64) -> f64 {
    let x = x.abs();
    if x == 0.0 {
        return 0.0;
    }
    if x > 500.0 {
        let u = 1.0 / x;
        return 1.0 - u * (0.5 + u * (0.125 + u * (0.125 + u * (25.0 / 128.0 + u * 13.0 / 32.0))));
    }
    let mut r = 0.0;
    for v in (0..(x.ceil() as usize + 40)).rev() {
        r = 1.0 / (2.0 * (v as f64 + 1.0) / x + r);
    }
    r
}

/// Marsaglia-Tsang squeeze method; shape < 1 uses the `U^(1/a)` boost.
pub fn sample_gamma(p: &GammaParams, rng: &mut Rng) -> f64 {
    let shape = p.shape();
    let rate = p.rate();
    if shape < 1.0 {
        let boosted = standard_gamma(shape + 1.0, rng);
        let u = rng.uniform_open();
        return boosted * u.powf(1.0 / shape) / rate;
    }
    standard_gamma(shape, rng) / rate
}

fn standard_gamma(shape: f64, rng: &mut Rng) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.normal();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.uniform_open();
        if u < 1.0 - 0.0331 * x.powi(4) {
            return d * v;
        }
        if u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Best-Fisher rejection sampler. Result wrapped into (-pi, pi].
pub fn sample_vonmises(p: &VonMisesParams, rng: &mut Rng) -> f64 {
    let kappa = p.kappa;
    if kappa < 1e-8 {
        return wrap_angle(PI * (2.0 * rng.uniform() - 1.0));
    }
    if kappa > 1e6 {
        return wrap_angle(p.mu + rng.normal() / kappa.sqrt());
    }
    let s = 0.5 / kappa;
    let r = s + (1.0 + s * s).sqrt();
    let w = loop {
        let z = (PI * rng.uniform()).cos();
        let w = (1.0 + r * z) / (r + z);
        let y = kappa * (r - w);
        let v = rng.uniform_open();
        if y * (2.0 - y) - v >= 0.0 || (y / v).ln() + 1.0 - y >= 0.0 {
            break w;
        }
    };
    let mut theta = w.clamp(-1.0, 1.0).acos();
    if rng.uniform() < 0.5 {
        theta = -theta;
    }
    wrap_angle(theta + p.mu)
}
