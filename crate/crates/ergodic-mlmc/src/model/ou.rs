use super::GradientModel;
use crate::error::{Error, Result};

/// Ornstein-Uhlenbeck potential U(x) = -κ|x|²/2, so ∇U(x) = -κx and the
/// invariant measure is N(0, κ⁻¹ I).
#[derive(Debug, Clone)]
pub struct OuModel {
    kappa: f64,
    dim: usize,
}

impl OuModel {
    pub fn new(kappa: f64, dim: usize) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::invalid("kappa", format!("must be positive, got {kappa}")));
        }
        if dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        Ok(OuModel { kappa, dim })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

impl GradientModel for OuModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = -self.kappa * xi;
        }
    }

    fn potential(&self, x: &[f64]) -> f64 {
        -0.5 * self.kappa * x.iter().map(|v| v * v).sum::<f64>()
    }

    fn strong_convexity(&self) -> f64 {
        self.kappa
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.kappa)
    }

    fn hessian_into(&self, _x: &[f64], out: &mut [f64]) -> bool {
        let d = self.dim;
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = -self.kappa;
        }
        true
    }
}
