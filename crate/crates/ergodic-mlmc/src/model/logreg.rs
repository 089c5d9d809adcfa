use super::{sigmoid, GradientModel, State};
use crate::error::{Error, Result};
use crate::kahan::KahanVec;
use crate::linalg::{self, matvec};
use crate::output::format_float17;
use crate::rng::{Lane, Streams};
use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;

/// Prior precision matrix C0⁻¹ of the Gaussian prior N(0, C0).
#[derive(Debug, Clone)]
pub enum PriorPrecision {
    Identity,
    /// Row-major d x d symmetric positive-definite matrix.
    Dense(Vec<f64>),
}

/// Bayesian logistic-regression posterior
/// π(x) ∝ exp(-|x|²_{C0}/2) Π_i f(y_i xᵀι_i) with f(z) = 1/(1+exp(-z)).
///
/// The per-datum gradient split is c(x,0) = -C0⁻¹x for the prior and
/// c(x,i) = y_i f(-y_i xᵀι_i) ι_i for datum i.
#[derive(Debug, Clone)]
pub struct LogRegModel {
    covariates: Vec<f64>, // row-major n_data x dim
    labels: Vec<f64>,     // entries in {-1, +1}
    prior: PriorPrecision,
    n_data: usize,
    dim: usize,
    strong_convexity: f64,
    lipschitz: f64,
}

impl LogRegModel {
    pub fn new(
        covariates: Vec<f64>,
        labels: Vec<f64>,
        dim: usize,
        prior: PriorPrecision,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        let n_data = labels.len();
        if covariates.len() != n_data * dim {
            return Err(Error::invalid(
                "covariates",
                format!("expected {} entries, got {}", n_data * dim, covariates.len()),
            ));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::invalid("labels", "entries must be -1 or +1"));
        }
        let (prior_min, prior_max) = match &prior {
            PriorPrecision::Identity => (1.0, 1.0),
            PriorPrecision::Dense(m) => {
                if m.len() != dim * dim {
                    return Err(Error::invalid("prior", "precision matrix shape mismatch"));
                }
                let (lo, hi) = linalg::sym_eigen_extremes(m, dim)?;
                if lo <= 0.0 {
                    return Err(Error::invalid("prior", "precision must be positive definite"));
                }
                (lo, hi)
            }
        };
        // Each likelihood term has gradient Lipschitz constant |ι_i|²/4
        // (the logistic derivative is at most 1/4).
        let lik_lipschitz: f64 = covariates
            .chunks_exact(dim)
            .map(|row| 0.25 * row.iter().map(|v| v * v).sum::<f64>())
            .sum();
        Ok(LogRegModel {
            covariates,
            labels,
            prior,
            n_data,
            dim,
            strong_convexity: prior_min,
            lipschitz: prior_max + lik_lipschitz,
        })
    }

    pub fn covariate_row(&self, i: usize) -> &[f64] {
        &self.covariates[(i - 1) * self.dim..i * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i - 1]
    }

    fn prior_grad_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.prior {
            PriorPrecision::Identity => {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = -xi;
                }
            }
            PriorPrecision::Dense(m) => {
                matvec(m, x, out);
                for o in out.iter_mut() {
                    *o = -*o;
                }
            }
        }
    }
}

impl GradientModel for LogRegModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        // Same index-ordered compensated accumulation as the minibatch drift,
        // so a full-batch minibatch pass reproduces this bit for bit.
        let mut acc = KahanVec::zeros(self.dim);
        let mut term = vec![0.0; self.dim];
        for i in 0..=self.n_data {
            self.grad_term_into(x, i, &mut term)
                .expect("index in range by construction");
            acc.add_scaled(&term, 1.0);
        }
        acc.write_to(out);
    }

    fn potential(&self, x: &[f64]) -> f64 {
        let prior = match &self.prior {
            PriorPrecision::Identity => -0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            PriorPrecision::Dense(m) => {
                let mut px = vec![0.0; self.dim];
                matvec(m, x, &mut px);
                -0.5 * linalg::dot(x, &px)
            }
        };
        // log f(z) = -ln(1 + exp(-z)), evaluated stably.
        let likelihood: f64 = (1..=self.n_data)
            .map(|i| {
                let z = self.label(i) * linalg::dot(x, self.covariate_row(i));
                if z > 0.0 {
                    -(-z).exp().ln_1p()
                } else {
                    z - z.exp().ln_1p()
                }
            })
            .sum();
        prior + likelihood
    }

    fn n_data(&self) -> usize {
        self.n_data
    }

    fn has_grad_terms(&self) -> bool {
        true
    }

    fn grad_term_into(&self, x: &[f64], i: usize, out: &mut [f64]) -> Result<()> {
        if i > self.n_data {
            return Err(Error::IndexOutOfRange {
                index: i,
                max: self.n_data,
            });
        }
        if i == 0 {
            self.prior_grad_into(x, out);
        } else {
            let row = self.covariate_row(i);
            let y = self.label(i);
            let z = linalg::dot(x, row);
            let w = y * sigmoid(-y * z);
            for (o, &r) in out.iter_mut().zip(row) {
                *o = w * r;
            }
        }
        Ok(())
    }

    fn strong_convexity(&self) -> f64 {
        self.strong_convexity
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.lipschitz)
    }

    fn hessian_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        let d = self.dim;
        match &self.prior {
            PriorPrecision::Identity => {
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = -1.0;
                }
            }
            PriorPrecision::Dense(m) => {
                for (o, &v) in out.iter_mut().zip(m) {
                    *o = -v;
                }
            }
        }
        for i in 1..=self.n_data {
            let row = self.covariate_row(i);
            let z = self.label(i) * linalg::dot(x, row);
            let w = sigmoid(z) * sigmoid(-z);
            for a in 0..d {
                for b in 0..d {
                    out[a * d + b] -= w * row[a] * row[b];
                }
            }
        }
        true
    }
}

/// Newton-Raphson ascent to the posterior mode.
///
/// Halves the step while it decreases the log posterior. Returns the MAP
/// point with `|∇U(x*)| <= tol`, or a non-convergence error carrying the last
/// iterate and residual.
pub fn map_newton(
    model: &dyn GradientModel,
    x_init: &State,
    tol: f64,
    max_iter: usize,
) -> Result<State> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    if x_init.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: x_init.dim(),
        });
    }
    let d = model.dim();
    let mut x = x_init.coords().to_vec();
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    let mut step = vec![0.0; d];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        model.grad_into(&x, &mut grad);
        residual = linalg::norm2(&grad);
        if residual <= tol {
            return State::from_computed(x, "map_newton");
        }
        if !model.hessian_into(&x, &mut hess) {
            return Err(Error::invalid("model", "Newton MAP solve needs a Hessian"));
        }
        step.copy_from_slice(&grad);
        linalg::solve_in_place(&mut hess, &mut step, "map_newton Hessian solve")?;
        // Ascent direction is -H⁻¹∇U for the negative-definite Hessian.
        let current = model.potential(&x);
        let mut t = 1.0;
        let mut candidate = vec![0.0; d];
        for _ in 0..60 {
            for j in 0..d {
                candidate[j] = x[j] - t * step[j];
            }
            if model.potential(&candidate) >= current || t < 1e-12 {
                break;
            }
            t *= 0.5;
        }
        x.copy_from_slice(&candidate);
    }
    Err(Error::SolverNonConvergence {
        solver: "map_newton",
        iterations: max_iter,
        residual,
        last: x,
    })
}

pub const MAP_DEFAULT_TOL: f64 = 1e-10;
pub const MAP_DEFAULT_MAX_ITER: usize = 100;

/// A reproducible logistic-regression dataset: covariates with standard-normal
/// entries (last column all ones) and labels sampled from the model at a fixed
/// true parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegFixture {
    pub seed: u64,
    pub x_true: Vec<f64>,
    /// Row-major n_data x dim.
    pub covariates: Vec<f64>,
    pub labels: Vec<f64>,
    pub n_data: usize,
    pub dim: usize,
}

/// Deterministic dataset for `seed`; labels are drawn from the model at
/// x_true = (1, -1, 0.5) (pattern cycled for other dimensions).
pub fn generate_logreg_fixture(seed: u64, n_data: usize, dim: usize) -> LogRegFixture {
    let pattern = [1.0, -1.0, 0.5];
    let x_true: Vec<f64> = (0..dim).map(|j| pattern[j % 3]).collect();
    let mut rng = Streams::new(seed).stream(0, 0, 0, Lane::Fixture);
    let mut covariates = vec![0.0; n_data * dim];
    for row in covariates.chunks_exact_mut(dim) {
        for v in row.iter_mut().take(dim - 1) {
            *v = StandardNormal.sample(&mut rng);
        }
        row[dim - 1] = 1.0;
    }
    let labels: Vec<f64> = covariates
        .chunks_exact(dim)
        .map(|row| {
            let z = linalg::dot(&x_true, row);
            let u: f64 = rng.random_range(0.0..1.0);
            if u < sigmoid(z) {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    LogRegFixture {
        seed,
        x_true,
        covariates,
        labels,
        n_data,
        dim,
    }
}

impl LogRegFixture {
    /// Build the posterior model with the identity prior.
    pub fn to_model(&self) -> Result<LogRegModel> {
        LogRegModel::new(
            self.covariates.clone(),
            self.labels.clone(),
            self.dim,
            PriorPrecision::Identity,
        )
    }

    /// Serialize as `{seed, x_true, iota, labels}` with 17-significant-digit
    /// floats so the round trip is bit-exact.
    pub fn to_json(&self) -> String {
        let floats = |v: &[f64]| {
            v.iter()
                .map(|x| format_float17(*x))
                .collect::<Vec<_>>()
                .join(",")
        };
        let labels = self
            .labels
            .iter()
            .map(|y| ((*y) as i64).to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "{{\"seed\":{},\"x_true\":[{}],\"iota\":[{}],\"labels\":[{}]}}\n",
            self.seed,
            floats(&self.x_true),
            floats(&self.covariates),
            labels
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(serde::Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            seed: u64,
            x_true: Vec<f64>,
            iota: Vec<f64>,
            labels: Vec<i64>,
        }
        let raw: Raw =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("fixture JSON: {e}")))?;
        let n_data = raw.labels.len();
        if n_data == 0 || raw.iota.len() % n_data != 0 {
            return Err(Error::Config("fixture JSON: iota/labels shape mismatch".into()));
        }
        let dim = raw.iota.len() / n_data;
        if raw.x_true.len() != dim {
            return Err(Error::Config("fixture JSON: x_true length mismatch".into()));
        }
        Ok(LogRegFixture {
            seed: raw.seed,
            x_true: raw.x_true,
            covariates: raw.iota,
            labels: raw.labels.iter().map(|&y| y as f64).collect(),
            n_data,
            dim,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_datum_model() -> LogRegModel {
        LogRegModel::new(vec![1.0], vec![1.0], 1, PriorPrecision::Identity).unwrap()
    }

    #[test]
    fn grad_term_at_zero_is_half_label_covariate() {
        let fx = generate_logreg_fixture(3, 20, 3);
        let model = fx.to_model().unwrap();
        let zero = State::zeros(3);
        for i in 1..=20 {
            let t = model.grad_term(&zero, i).unwrap();
            for (j, &tj) in t.iter().enumerate() {
                assert_relative_eq!(
                    tj,
                    0.5 * model.label(i) * model.covariate_row(i)[j],
                    max_relative = 1e-15
                );
            }
        }
        // Prior term at the mode vanishes.
        let p = model.grad_term(&zero, 0).unwrap();
        assert_eq!(p, vec![0.0; 3]);
    }

    #[test]
    fn grad_term_is_stable_for_large_scores() {
        let model = single_datum_model();
        let x = State::new(vec![10.0]).unwrap();
        let t = model.grad_term(&x, 1).unwrap();
        // f(-10), frozen from a high-precision evaluation.
        assert_relative_eq!(t[0], 4.5397868702434395e-5, max_relative = 1e-12);
        // No overflow far out in the tail.
        let far = State::new(vec![1000.0]).unwrap();
        assert!(model.grad_term(&far, 1).unwrap()[0].is_finite());
    }

    #[test]
    fn grad_term_index_out_of_range() {
        let model = single_datum_model();
        let x = State::zeros(1);
        assert!(matches!(
            model.grad_term(&x, 2),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn grad_full_is_sum_of_terms() {
        use rand::RngExt;
        let fx = generate_logreg_fixture(9, 50, 3);
        let model = fx.to_model().unwrap();
        let mut rng = Streams::new(4).stream(0, 0, 0, Lane::Fixture);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let state = State::new(x).unwrap();
            let full = model.grad_full(&state).unwrap();
            let mut sum = vec![0.0; 3];
            for i in 0..=model.n_data() {
                let t = model.grad_term(&state, i).unwrap();
                for (s, v) in sum.iter_mut().zip(&t) {
                    *s += v;
                }
            }
            for (f, s) in full.iter().zip(&sum) {
                assert_relative_eq!(f, s, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn grad_matches_finite_differences_of_potential() {
        use rand::RngExt;
        let fx = generate_logreg_fixture(12, 30, 3);
        let model = fx.to_model().unwrap();
        let mut rng = Streams::new(8).stream(0, 0, 0, Lane::Fixture);
        let h = 1e-5;
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut grad = vec![0.0; 3];
            model.grad_into(&x, &mut grad);
            for j in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (model.potential(&xp) - model.potential(&xm)) / (2.0 * h);
                assert_relative_eq!(grad[j], fd, max_relative = 1e-4, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn one_sided_lipschitz_with_prior_eigenvalue() {
        use rand::RngExt;
        let fx = generate_logreg_fixture(21, 40, 3);
        let model = fx.to_model().unwrap();
        assert_eq!(model.strong_convexity(), 1.0);
        let mut rng = Streams::new(13).stream(0, 0, 0, Lane::Fixture);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut gx = vec![0.0; 3];
            let mut gy = vec![0.0; 3];
            model.grad_into(&x, &mut gx);
            model.grad_into(&y, &mut gy);
            let lhs: f64 = (0..3).map(|i| (gy[i] - gx[i]) * (y[i] - x[i])).sum();
            let dist2: f64 = (0..3).map(|i| (y[i] - x[i]).powi(2)).sum();
            assert!(lhs <= -model.strong_convexity() * dist2 + 1e-10);
        }
    }

    #[test]
    fn map_of_prior_only_model_is_origin() {
        let model = LogRegModel::new(vec![], vec![], 2, PriorPrecision::Identity).unwrap();
        let x = map_newton(&model, &State::new(vec![3.0, -4.0]).unwrap(), 1e-10, 100).unwrap();
        for v in x.coords() {
            assert!(v.abs() <= 1e-10);
        }
    }

    #[test]
    fn map_single_datum_matches_bisection_oracle() {
        // x* solves x = f(-x); bisection to 1e-12 gives 0.401058137541547.
        let model = single_datum_model();
        let x = map_newton(&model, &State::zeros(1), 1e-12, 100).unwrap();
        assert_relative_eq!(x.coords()[0], 0.401058137541547, max_relative = 1e-10);
        let g = model.grad_full(&x).unwrap();
        assert!(g[0].abs() <= 1e-8);
    }

    #[test]
    fn map_gradient_norm_meets_tolerance() {
        let fx = generate_logreg_fixture(1, 100, 3);
        let model = fx.to_model().unwrap();
        let x = map_newton(&model, &State::zeros(3), 1e-10, 100).unwrap();
        let g = model.grad_full(&x).unwrap();
        assert!(linalg::norm2(&g) <= 1e-8);
    }

    #[test]
    fn map_point_is_a_local_maximum() {
        use rand::RngExt;
        let fx = generate_logreg_fixture(1, 100, 3);
        let model = fx.to_model().unwrap();
        let x = map_newton(&model, &State::zeros(3), 1e-10, 100).unwrap();
        let mut h = vec![0.0; 9];
        assert!(model.hessian_into(x.coords(), &mut h));
        let mut rng = Streams::new(77).stream(0, 0, 0, Lane::Fixture);
        for _ in 0..20 {
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut hv = vec![0.0; 3];
            matvec(&h, &v, &mut hv);
            assert!(linalg::dot(&v, &hv) < 0.0);
        }
    }

    #[test]
    fn fixture_is_deterministic_and_well_shaped() {
        let a = generate_logreg_fixture(1, 100, 3);
        let b = generate_logreg_fixture(1, 100, 3);
        assert_eq!(a, b);
        assert_eq!(a.covariates.len(), 300);
        for row in a.covariates.chunks_exact(3) {
            assert_eq!(row[2], 1.0);
        }
        assert!(a.labels.iter().all(|&y| y == 1.0 || y == -1.0));
        assert_eq!(a.x_true, vec![1.0, -1.0, 0.5]);
        let c = generate_logreg_fixture(2, 100, 3);
        assert_ne!(a.covariates, c.covariates);
    }

    #[test]
    fn fixture_json_round_trip_is_exact() {
        let a = generate_logreg_fixture(5, 37, 3);
        let b = LogRegFixture::from_json(&a.to_json()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(LogRegModel::new(vec![1.0], vec![2.0], 1, PriorPrecision::Identity).is_err());
    }
}
