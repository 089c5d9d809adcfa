//! Target distributions defined through their log-density gradients.
//!
//! The sampler sees a target `π ∝ exp(U)` only through `∇U` (and, for
//! minibatch schemes, through the per-datum split `c(x, i)` of that gradient).
//! Implementations here: an Ornstein-Uhlenbeck potential, a quartic
//! non-Lipschitz potential, and the Bayesian logistic-regression posterior
//! with its MAP solver.

mod logreg;
mod ou;
mod quartic;

pub use logreg::{
    generate_logreg_fixture, map_newton, LogRegFixture, LogRegModel, PriorPrecision,
    MAP_DEFAULT_MAX_ITER, MAP_DEFAULT_TOL,
};
pub use ou::OuModel;
pub use quartic::QuarticModel;

use crate::error::{Error, Result};

/// Chain position in R^d. Entries are finite by construction and the step
/// operators re-check finiteness on every state they return.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    coords: Vec<f64>,
}

impl State {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                context: "state construction",
            });
        }
        Ok(State { coords })
    }

    pub fn zeros(dim: usize) -> Self {
        State {
            coords: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    /// Wrap raw coordinates after checking finiteness; `context` names the
    /// producing operation for the error message.
    pub(crate) fn from_computed(coords: Vec<f64>, context: &'static str) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { context });
        }
        Ok(State { coords })
    }
}

/// A target distribution seen through its log-density gradient.
///
/// `grad_into` computes the full drift `∇U(x)`. Models backed by a dataset
/// additionally expose the per-datum terms `c(x, i)` (`i = 0` is the prior
/// term) satisfying `∇U(x) = c(x,0) + Σ_{i=1..n_data} c(x,i)`.
pub trait GradientModel: Send + Sync {
    fn dim(&self) -> usize;

    /// out = ∇U(x). `out.len() == dim()`.
    fn grad_into(&self, x: &[f64], out: &mut [f64]);

    /// U(x) up to an additive constant.
    fn potential(&self, x: &[f64]) -> f64;

    /// Number of data terms behind the gradient (0 when there is no split).
    fn n_data(&self) -> usize {
        0
    }

    fn has_grad_terms(&self) -> bool {
        false
    }

    /// out = c(x, i) with i = 0 the prior term and i in 1..=n_data() a datum.
    fn grad_term_into(&self, _x: &[f64], _i: usize, _out: &mut [f64]) -> Result<()> {
        Err(Error::NoGradientTerms)
    }

    /// One-sided Lipschitz constant m > 0:
    /// <∇U(y) − ∇U(x), y − x> <= −m |x − y|^2.
    fn strong_convexity(&self) -> f64;

    /// Global Lipschitz constant of ∇U; `None` for polynomial drifts.
    fn lipschitz(&self) -> Option<f64>;

    /// out = ∇²U(x), row-major d x d. Returns false when the model cannot
    /// supply it (implicit solver then falls back to finite differences).
    fn hessian_into(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// Cost of one full-gradient evaluation in units of one per-datum
    /// gradient-term evaluation (n_data + 1 for term-split models, 1 without).
    fn grad_unit_cost(&self) -> f64 {
        if self.has_grad_terms() {
            (self.n_data() + 1) as f64
        } else {
            1.0
        }
    }

    /// Allocating convenience wrapper around `grad_into` with a dimension check.
    fn grad_full(&self, x: &State) -> Result<Vec<f64>> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        let mut out = vec![0.0; self.dim()];
        self.grad_into(x.coords(), &mut out);
        Ok(out)
    }

    /// Allocating convenience wrapper around `grad_term_into` with checks.
    fn grad_term(&self, x: &State, i: usize) -> Result<Vec<f64>> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        if i > self.n_data() {
            return Err(Error::IndexOutOfRange {
                index: i,
                max: self.n_data(),
            });
        }
        let mut out = vec![0.0; self.dim()];
        self.grad_term_into(x.coords(), i, &mut out)?;
        Ok(out)
    }
}

/// Numerically stable logistic function f(z) = 1 / (1 + exp(-z)).
pub(crate) fn sigmoid(z: f64) -> f64 {
    let t = (-z.abs()).exp();
    if z >= 0.0 {
        1.0 / (1.0 + t)
    } else {
        t / (1.0 + t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_rejects_non_finite() {
        assert!(State::new(vec![1.0, f64::NAN]).is_err());
        assert!(State::new(vec![1.0, f64::INFINITY]).is_err());
        assert!(State::new(vec![1.0, -2.0]).is_ok());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-700.0) > 0.0);
        assert!(sigmoid(-700.0) < 1e-300);
        // Far past the underflow threshold the tail flushes to zero, not NaN.
        assert_eq!(sigmoid(-800.0), 0.0);
        // Frozen high-precision value of f(-10).
        assert!((sigmoid(-10.0) - 4.5397868702434395e-5).abs() < 1e-19);
    }

    #[test]
    fn grad_full_checks_dimension() {
        let m = OuModel::new(0.4, 2).unwrap();
        let x = State::zeros(3);
        assert!(matches!(
            m.grad_full(&x),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
