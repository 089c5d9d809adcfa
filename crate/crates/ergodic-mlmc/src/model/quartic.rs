use super::GradientModel;
use crate::error::{Error, Result};

/// Quartic potential U(x) = Σ_j (-x_j⁴/4 - x_j²/2).
///
/// The drift ∇U(x) = -x³ - x is one-sided Lipschitz with m = 1 but not
/// globally Lipschitz; it is the stock example that requires the implicit
/// integrator.
#[derive(Debug, Clone)]
pub struct QuarticModel {
    dim: usize,
}

impl QuarticModel {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        Ok(QuarticModel { dim })
    }
}

impl GradientModel for QuarticModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(x) {
            *o = -v * v * v - v;
        }
    }

    fn potential(&self, x: &[f64]) -> f64 {
        x.iter().map(|&v| -0.25 * v.powi(4) - 0.5 * v * v).sum()
    }

    fn strong_convexity(&self) -> f64 {
        1.0
    }

    fn lipschitz(&self) -> Option<f64> {
        None
    }

    fn hessian_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        let d = self.dim;
        out.fill(0.0);
        for (i, &v) in x.iter().enumerate() {
            out[i * d + i] = -3.0 * v * v - 1.0;
        }
        true
    }
}
