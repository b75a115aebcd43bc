//! Numerical foundations: seeded random streams, step/turn distributions,
//! maximum-likelihood optimization and standard errors.

pub mod dist;
pub mod optim;
pub mod rng;

pub use dist::{
    bessel_ratio_i1_i0, gamma_logpdf, ln_bessel_i0, sample_gamma, sample_vonmises, vonmises_logpdf,
    wrap_angle, GammaParams, VonMisesParams,
};
pub use optim::{
    hessian_from_gradient, numerical_gradient, numerical_hessian, optimize_mle, optimize_mle_with_gradient,
    standard_errors, OptConfig, OptResult, StdErr, Uncertainty,
};
pub use rng::Rng;
