//! Multilevel Monte Carlo for invariant measures of overdamped Langevin SDEs.
//!
//! The engine estimates π(g) = ∫ g dπ for targets π ∝ exp(U) by coupling
//! discretizations of dX = ∇U(X) dt + √2 dW across geometric step sizes
//! h_ℓ = h0 2^{-ℓ} *and* growing horizons T_ℓ. Each level correction pairs a
//! fine chain (two steps of h_ℓ) with a coarse chain (one step of h_{ℓ-1})
//! driven by the same Gaussian increments, after giving the fine chain a solo
//! head start of length T_ℓ − T_{ℓ-1}; strong concavity of U then contracts
//! the pair, so the correction variance stays bounded uniformly in time.
//!
//! On top of the coupled sampler sit a Giles-style adaptive estimator
//! ([`estimator::run_mlmc`]), a randomized-truncation layer that removes the
//! discretization bias entirely ([`estimator::run_unbiased`]), and a
//! stochastic-gradient variant for large-dataset Bayesian inference in which
//! the minibatches of fine and coarse chains are coupled as well
//! ([`integrator::couple_subsample`]).
//!
//! Entry points:
//! - [`model`]: gradient models (Ornstein-Uhlenbeck, quartic, Bayesian
//!   logistic regression with MAP solver and dataset fixtures).
//! - [`integrator`]: explicit/implicit Euler and SGLD one-step operators.
//! - [`coupling`]: level plans, the shifted coupling, contraction probes.
//! - [`estimator`]: streaming level statistics, sample allocation, the
//!   adaptive driver, unbiasing, rate fits.
//! - [`cli`]: the `ergodic-mlmc` command-line experiment runner.
//!
//! The runnable examples under `examples/` demonstrate one capability each;
//! start with `ou_invariant_measure`.

pub mod cli;
pub mod coupling;
pub mod error;
pub mod estimator;
pub mod integrator;
mod kahan;
mod linalg;
pub mod model;
pub mod output;
pub mod rng;

pub use error::{Error, Result};
