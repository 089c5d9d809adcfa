//! Compensated vector accumulation.
//!
//! Drift sums accumulate per-datum gradient terms in index order with Kahan
//! compensation, which keeps the full-batch minibatch drift bit-identical to
//! the full-gradient drift.

pub struct KahanVec {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl KahanVec {
    pub fn zeros(dim: usize) -> Self {
        KahanVec {
            sum: vec![0.0; dim],
            comp: vec![0.0; dim],
        }
    }

    pub fn reset(&mut self) {
        self.sum.fill(0.0);
        self.comp.fill(0.0);
    }

    /// Accumulate `weight * term` componentwise.
    pub fn add_scaled(&mut self, term: &[f64], weight: f64) {
        for ((s, c), &t) in self.sum.iter_mut().zip(self.comp.iter_mut()).zip(term) {
            let y = weight * t - *c;
            let next = *s + y;
            *c = (next - *s) - y;
            *s = next;
        }
    }

    pub fn value(&self) -> &[f64] {
        &self.sum
    }

    pub fn write_to(&self, out: &mut [f64]) {
        out.copy_from_slice(&self.sum);
    }
}
