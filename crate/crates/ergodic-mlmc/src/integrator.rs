//! One-step transition operators S_{h,ξ}(x) and minibatch machinery.
//!
//! All operators share the same noise convention: a step of size h consumes a
//! Gaussian increment √(2h)·ξ with ξ ~ N(0, I). Internally every operator
//! takes the precomputed increment vector, which lets the coupled pair step
//! hand the coarse level the exact sum of the two fine increments.

use crate::error::{Error, Result};
use crate::kahan::KahanVec;
use crate::linalg;
use crate::model::{GradientModel, State};
use crate::rng::fill_standard_normal;
use rand::distr::{Distribution, Uniform};
use rand::{Rng, RngExt};

/// A standard-normal vector ξ ~ N(0, I_d).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDraw {
    values: Vec<f64>,
}

impl GaussianDraw {
    pub fn new(values: Vec<f64>) -> Self {
        GaussianDraw { values }
    }

    pub fn zeros(dim: usize) -> Self {
        GaussianDraw {
            values: vec![0.0; dim],
        }
    }

    pub fn standard<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Self {
        let mut values = vec![0.0; dim];
        fill_standard_normal(rng, &mut values);
        GaussianDraw { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Minibatch τ: data indices in 1..=n_data, drawn with replacement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subsample {
    indices: Vec<usize>,
}

impl Subsample {
    pub fn new(indices: Vec<usize>, n_data: usize) -> Result<Self> {
        if indices.iter().any(|&i| i == 0 || i > n_data) {
            return Err(Error::invalid("subsample", "indices must lie in 1..=n_data"));
        }
        Ok(Subsample { indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// How the coarse step's minibatch τ^C is built from the two fine minibatches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingMode {
    /// Fresh draw, ignoring the fine batches.
    Independent,
    /// s draws without replacement from the pooled multiset (τ^{F,1}, τ^{F,2}).
    Union,
    /// s/2 draws without replacement from each fine batch, concatenated.
    Stratified,
}

/// Newton parameters for the implicit step equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImplicitSolverParams {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ImplicitSolverParams {
    fn default() -> Self {
        ImplicitSolverParams {
            tol: 1e-12,
            max_iter: 50,
        }
    }
}

/// The one-step transition operator family.
#[derive(Debug, Clone, PartialEq)]
pub enum StepScheme {
    ExplicitEuler,
    ImplicitEuler(ImplicitSolverParams),
    Sgld {
        batch_size: usize,
        coupling: CouplingMode,
    },
}

impl StepScheme {
    pub fn sgld(batch_size: usize, coupling: CouplingMode) -> Self {
        StepScheme::Sgld {
            batch_size,
            coupling,
        }
    }

    pub fn batch_size(&self) -> Option<usize> {
        match self {
            StepScheme::Sgld { batch_size, .. } => Some(*batch_size),
            _ => None,
        }
    }

    /// Check the scheme against a model before running a simulation.
    pub fn validate<M: GradientModel + ?Sized>(&self, model: &M) -> Result<()> {
        match self {
            StepScheme::Sgld {
                batch_size,
                coupling,
            } => {
                if !model.has_grad_terms() {
                    return Err(Error::NoGradientTerms);
                }
                if *batch_size == 0 {
                    return Err(Error::invalid("batch_size", "must be at least 1"));
                }
                if *batch_size > model.n_data() {
                    return Err(Error::invalid(
                        "batch_size",
                        format!(
                            "batch size {} exceeds data size {}",
                            batch_size,
                            model.n_data()
                        ),
                    ));
                }
                if *coupling == CouplingMode::Stratified && batch_size % 2 != 0 {
                    return Err(Error::OddStratifiedBatch(*batch_size));
                }
                Ok(())
            }
            StepScheme::ImplicitEuler(p) => {
                if !(p.tol > 0.0) {
                    return Err(Error::invalid("solver_tol", "must be positive"));
                }
                Ok(())
            }
            StepScheme::ExplicitEuler => Ok(()),
        }
    }
}

/// Reusable buffers for the in-place step kernels.
pub(crate) struct Scratch {
    grad: Vec<f64>,
    term: Vec<f64>,
    kahan: KahanVec,
    resid: Vec<f64>,
    jac: Vec<f64>,
    jac_work: Vec<f64>,
    direction: Vec<f64>,
    trial: Vec<f64>,
    grad_hi: Vec<f64>,
    grad_lo: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(dim: usize) -> Self {
        Scratch {
            grad: vec![0.0; dim],
            term: vec![0.0; dim],
            kahan: KahanVec::zeros(dim),
            resid: vec![0.0; dim],
            jac: vec![0.0; dim * dim],
            jac_work: vec![0.0; dim * dim],
            direction: vec![0.0; dim],
            trial: vec![0.0; dim],
            grad_hi: vec![0.0; dim],
            grad_lo: vec![0.0; dim],
        }
    }
}

/// Advance `x` by one step of size `h` with noise increment `inc` (already
/// scaled: inc = √(2h)·ξ). Returns the cost in gradient-term units; Gaussian
/// draws are accounted by the caller who made them.
pub(crate) fn advance<M: GradientModel + ?Sized>(
    model: &M,
    scheme: &StepScheme,
    x: &mut [f64],
    h: f64,
    inc: &[f64],
    tau: Option<&[usize]>,
    scratch: &mut Scratch,
) -> Result<f64> {
    let cost = match scheme {
        StepScheme::ExplicitEuler => {
            model.grad_into(x, &mut scratch.grad);
            for (xi, (g, i)) in x.iter_mut().zip(scratch.grad.iter().zip(inc)) {
                *xi += h * g + i;
            }
            model.grad_unit_cost()
        }
        StepScheme::Sgld { batch_size, .. } => {
            let tau = tau.ok_or(Error::NoGradientTerms)?;
            debug_assert_eq!(tau.len(), *batch_size);
            let weight = model.n_data() as f64 / tau.len() as f64;
            scratch.kahan.reset();
            model.grad_term_into(x, 0, &mut scratch.term)?;
            scratch.kahan.add_scaled(&scratch.term, 1.0);
            for &i in tau {
                model.grad_term_into(x, i, &mut scratch.term)?;
                scratch.kahan.add_scaled(&scratch.term, weight);
            }
            let drift = scratch.kahan.value();
            for (xi, (g, i)) in x.iter_mut().zip(drift.iter().zip(inc)) {
                *xi += h * g + i;
            }
            (tau.len() + 1) as f64
        }
        StepScheme::ImplicitEuler(params) => solve_implicit(model, x, h, inc, params, scratch)?,
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState {
            context: "integrator step",
        });
    }
    Ok(cost)
}

/// Solve y - h ∇U(y) = x + inc by Newton iteration with backtracking, writing
/// y into `x`. Falls back to a damped fixed-point direction when the Jacobian
/// solve fails. Returns the cost of the gradient/Hessian work.
fn solve_implicit<M: GradientModel + ?Sized>(
    model: &M,
    x: &mut [f64],
    h: f64,
    inc: &[f64],
    params: &ImplicitSolverParams,
    scratch: &mut Scratch,
) -> Result<f64> {
    let d = x.len();
    let unit = model.grad_unit_cost();
    let mut cost = 0.0;
    // rhs kept in `trial` until the loop takes over that buffer.
    let mut rhs = vec![0.0; d];
    for (r, (xi, i)) in rhs.iter_mut().zip(x.iter().zip(inc)) {
        *r = xi + i;
    }
    let mut y = x.to_vec();
    let mut residual_norm = f64::INFINITY;
    for _ in 0..params.max_iter {
        model.grad_into(&y, &mut scratch.grad);
        cost += unit;
        for i in 0..d {
            scratch.resid[i] = y[i] - h * scratch.grad[i] - rhs[i];
        }
        residual_norm = linalg::norm2(&scratch.resid);
        if residual_norm <= params.tol {
            x.copy_from_slice(&y);
            return Ok(cost);
        }

        // Jacobian I - h ∇²U(y), analytic when the model has one.
        if model.hessian_into(&y, &mut scratch.jac) {
            cost += unit;
            for v in scratch.jac.iter_mut() {
                *v = -h * *v;
            }
            for i in 0..d {
                scratch.jac[i * d + i] += 1.0;
            }
        } else {
            for j in 0..d {
                let delta = 1e-7 * (1.0 + y[j].abs());
                let orig = y[j];
                y[j] = orig + delta;
                model.grad_into(&y, &mut scratch.grad_hi);
                y[j] = orig - delta;
                model.grad_into(&y, &mut scratch.grad_lo);
                y[j] = orig;
                cost += 2.0 * unit;
                for i in 0..d {
                    let dgrad = (scratch.grad_hi[i] - scratch.grad_lo[i]) / (2.0 * delta);
                    scratch.jac[i * d + j] = if i == j { 1.0 } else { 0.0 } - h * dgrad;
                }
            }
        }

        scratch.direction.copy_from_slice(&scratch.resid);
        scratch.jac_work.copy_from_slice(&scratch.jac);
        if linalg::solve_in_place(&mut scratch.jac_work, &mut scratch.direction, "implicit step")
            .is_err()
        {
            // Damped fixed-point direction -resid.
            scratch.direction.copy_from_slice(&scratch.resid);
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            for (tr, (yi, dir)) in scratch
                .trial
                .iter_mut()
                .zip(y.iter().zip(scratch.direction.iter()))
            {
                *tr = yi - t * dir;
            }
            model.grad_into(&scratch.trial, &mut scratch.grad);
            cost += unit;
            let mut trial_norm_sq = 0.0;
            for i in 0..d {
                let r = scratch.trial[i] - h * scratch.grad[i] - rhs[i];
                trial_norm_sq += r * r;
            }
            if trial_norm_sq.sqrt() <= (1.0 - 1e-4 * t) * residual_norm {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        y.copy_from_slice(&scratch.trial);
    }
    Err(Error::SolverNonConvergence {
        solver: "implicit Euler",
        iterations: params.max_iter,
        residual: residual_norm,
        last: y,
    })
}

fn check_step_inputs<M: GradientModel + ?Sized>(
    model: &M,
    x: &State,
    h: f64,
    xi: &GaussianDraw,
) -> Result<()> {
    if x.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: x.dim(),
        });
    }
    if xi.values().len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: xi.values().len(),
        });
    }
    if !(h >= 0.0) || !h.is_finite() {
        return Err(Error::invalid("h", format!("must be nonnegative, got {h}")));
    }
    Ok(())
}

pub(crate) fn noise_increment(h: f64, xi: &[f64], inc: &mut [f64]) {
    let scale = (2.0 * h).sqrt();
    for (o, &v) in inc.iter_mut().zip(xi) {
        *o = scale * v;
    }
}

/// Explicit Euler: x + h ∇U(x) + √(2h) ξ.
pub fn euler_step(
    model: &dyn GradientModel,
    x: &State,
    h: f64,
    xi: &GaussianDraw,
) -> Result<State> {
    check_step_inputs(model, x, h, xi)?;
    let mut coords = x.coords().to_vec();
    let mut inc = vec![0.0; coords.len()];
    noise_increment(h, xi.values(), &mut inc);
    let mut scratch = Scratch::new(coords.len());
    advance(
        model,
        &StepScheme::ExplicitEuler,
        &mut coords,
        h,
        &inc,
        None,
        &mut scratch,
    )?;
    State::from_computed(coords, "euler_step")
}

/// Implicit Euler: the y solving y - h ∇U(y) = x + √(2h) ξ.
pub fn implicit_euler_step(
    model: &dyn GradientModel,
    x: &State,
    h: f64,
    xi: &GaussianDraw,
    params: &ImplicitSolverParams,
) -> Result<State> {
    check_step_inputs(model, x, h, xi)?;
    let mut coords = x.coords().to_vec();
    let mut inc = vec![0.0; coords.len()];
    noise_increment(h, xi.values(), &mut inc);
    let mut scratch = Scratch::new(coords.len());
    advance(
        model,
        &StepScheme::ImplicitEuler(*params),
        &mut coords,
        h,
        &inc,
        None,
        &mut scratch,
    )?;
    State::from_computed(coords, "implicit_euler_step")
}

/// SGLD: x + h (c(x,0) + (N/s) Σ_j c(x, τ_j)) + √(2h) ξ.
pub fn sgld_step(
    model: &dyn GradientModel,
    x: &State,
    h: f64,
    xi: &GaussianDraw,
    tau: &Subsample,
) -> Result<State> {
    check_step_inputs(model, x, h, xi)?;
    if !model.has_grad_terms() {
        return Err(Error::NoGradientTerms);
    }
    let mut coords = x.coords().to_vec();
    let mut inc = vec![0.0; coords.len()];
    noise_increment(h, xi.values(), &mut inc);
    let mut scratch = Scratch::new(coords.len());
    let scheme = StepScheme::sgld(tau.len(), CouplingMode::Independent);
    advance(
        model,
        &scheme,
        &mut coords,
        h,
        &inc,
        Some(tau.indices()),
        &mut scratch,
    )?;
    State::from_computed(coords, "sgld_step")
}

/// s i.i.d. uniform draws from {1, ..., n_data} (sampling with replacement).
pub fn draw_subsample<R: Rng + ?Sized>(
    s: usize,
    n_data: usize,
    rng: &mut R,
) -> Result<Subsample> {
    if s == 0 {
        return Err(Error::invalid("s", "batch size must be at least 1"));
    }
    if n_data == 0 {
        return Err(Error::invalid("n_data", "must be at least 1"));
    }
    let dist = index_sampler(n_data);
    let indices = (0..s).map(|_| dist.sample(rng)).collect();
    Ok(Subsample { indices })
}

/// Precomputed uniform sampler over 1..=n_data; hoisted out of step loops.
pub(crate) fn index_sampler(n_data: usize) -> Uniform<usize> {
    Uniform::new_inclusive(1, n_data).expect("n_data >= 1")
}

pub(crate) fn draw_subsample_into<R: Rng + ?Sized>(
    out: &mut [usize],
    dist: &Uniform<usize>,
    rng: &mut R,
) {
    for v in out.iter_mut() {
        *v = dist.sample(rng);
    }
}

/// Build the coarse minibatch from the two fine minibatches. All modes leave
/// the one-dimensional marginal law of the output equal to a fresh uniform
/// draw, which is what keeps the telescoping identity intact.
pub fn couple_subsample<R: Rng + ?Sized>(
    tau_f1: &Subsample,
    tau_f2: &Subsample,
    mode: CouplingMode,
    n_data: usize,
    rng: &mut R,
) -> Result<Subsample> {
    if tau_f1.len() != tau_f2.len() {
        return Err(Error::invalid(
            "subsample",
            "fine batches must have equal size",
        ));
    }
    let s = tau_f1.len();
    let mut out = vec![0usize; s];
    couple_subsample_into(
        tau_f1.indices(),
        tau_f2.indices(),
        mode,
        &index_sampler(n_data),
        rng,
        &mut out,
        &mut vec![0usize; 2 * s],
    )?;
    Ok(Subsample { indices: out })
}

/// In-place coupling kernel; `pool` is a scratch buffer of length 2s.
pub(crate) fn couple_subsample_into<R: Rng + ?Sized>(
    tau_f1: &[usize],
    tau_f2: &[usize],
    mode: CouplingMode,
    dist: &Uniform<usize>,
    rng: &mut R,
    out: &mut [usize],
    pool: &mut [usize],
) -> Result<()> {
    let s = tau_f1.len();
    debug_assert_eq!(out.len(), s);
    match mode {
        CouplingMode::Independent => {
            draw_subsample_into(out, dist, rng);
        }
        CouplingMode::Union => {
            pool[..s].copy_from_slice(tau_f1);
            pool[s..2 * s].copy_from_slice(tau_f2);
            partial_shuffle(&mut pool[..2 * s], s, rng);
            out.copy_from_slice(&pool[..s]);
        }
        CouplingMode::Stratified => {
            if s % 2 != 0 {
                return Err(Error::OddStratifiedBatch(s));
            }
            let half = s / 2;
            pool[..s].copy_from_slice(tau_f1);
            partial_shuffle(&mut pool[..s], half, rng);
            out[..half].copy_from_slice(&pool[..half]);
            pool[..s].copy_from_slice(tau_f2);
            partial_shuffle(&mut pool[..s], half, rng);
            out[half..].copy_from_slice(&pool[..half]);
        }
    }
    Ok(())
}

/// Fisher-Yates on the first `take` positions: afterwards `items[..take]` is a
/// uniform draw without replacement from the multiset `items`.
fn partial_shuffle<R: Rng + ?Sized>(items: &mut [usize], take: usize, rng: &mut R) {
    let n = items.len();
    for k in 0..take {
        let j = rng.random_range(k..n);
        items.swap(k, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_logreg_fixture, OuModel, QuarticModel};
    use crate::rng::{Lane, Streams};
    use approx::assert_relative_eq;

    fn ou(kappa: f64) -> OuModel {
        OuModel::new(kappa, 1).unwrap()
    }

    #[test]
    fn euler_examples() {
        let m = ou(0.4);
        let x = State::new(vec![1.0]).unwrap();
        let out = euler_step(&m, &x, 0.5, &GaussianDraw::zeros(1)).unwrap();
        assert_relative_eq!(out.coords()[0], 0.8, max_relative = 1e-15);

        let x = State::zeros(1);
        let out = euler_step(&m, &x, 0.5, &GaussianDraw::new(vec![1.0])).unwrap();
        assert_relative_eq!(out.coords()[0], 1.0, max_relative = 1e-15);

        // Fixed point: zero drift, zero noise.
        let q = QuarticModel::new(1).unwrap();
        let out = euler_step(&q, &State::zeros(1), 0.25, &GaussianDraw::zeros(1)).unwrap();
        assert_eq!(out.coords()[0], 0.0);
    }

    #[test]
    fn euler_contraction_factor_is_exact() {
        let m = ou(0.4);
        let h = 0.5;
        let xi = GaussianDraw::new(vec![0.7]);
        let a = euler_step(&m, &State::new(vec![2.0]).unwrap(), h, &xi).unwrap();
        let b = euler_step(&m, &State::new(vec![-1.0]).unwrap(), h, &xi).unwrap();
        let expected = (1.0 - 0.4 * h) * (2.0 - -1.0);
        assert_relative_eq!(a.coords()[0] - b.coords()[0], expected, max_relative = 1e-14);
    }

    #[test]
    fn implicit_solves_linear_drift_in_closed_form() {
        let m = ou(0.4);
        let p = ImplicitSolverParams::default();
        let out = implicit_euler_step(&m, &State::new(vec![1.0]).unwrap(), 0.5, &GaussianDraw::zeros(1), &p)
            .unwrap();
        assert_relative_eq!(out.coords()[0], 1.0 / 1.2, max_relative = 1e-12);

        let m1 = ou(1.0);
        let out = implicit_euler_step(&m1, &State::new(vec![2.0]).unwrap(), 1.0, &GaussianDraw::zeros(1), &p)
            .unwrap();
        assert_relative_eq!(out.coords()[0], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn implicit_matches_ou_closed_form_over_random_inputs() {
        use rand::RngExt;
        let p = ImplicitSolverParams::default();
        let mut rng = Streams::new(17).stream(0, 0, 0, Lane::Fixture);
        for _ in 0..1000 {
            let kappa = rng.random_range(0.1..3.0);
            let m = ou(kappa);
            let x = rng.random_range(-4.0..4.0);
            let xi = rng.random_range(-3.0..3.0);
            let h = rng.random_range(1e-3..1.0);
            let out = implicit_euler_step(
                &m,
                &State::new(vec![x]).unwrap(),
                h,
                &GaussianDraw::new(vec![xi]),
                &p,
            )
            .unwrap();
            let expected = (x + (2.0 * h).sqrt() * xi) / (1.0 + kappa * h);
            assert!((out.coords()[0] - expected).abs() <= 1e-10);
        }
    }

    #[test]
    fn implicit_contraction_factor_on_ou() {
        let m = ou(0.8);
        let p = ImplicitSolverParams::default();
        let h = 0.7;
        let xi = GaussianDraw::new(vec![-0.3]);
        let a = implicit_euler_step(&m, &State::new(vec![1.5]).unwrap(), h, &xi, &p).unwrap();
        let b = implicit_euler_step(&m, &State::new(vec![-0.5]).unwrap(), h, &xi, &p).unwrap();
        let expected = (1.5 - -0.5) / (1.0 + 0.8 * h);
        assert_relative_eq!(a.coords()[0] - b.coords()[0], expected, max_relative = 1e-10);
    }

    #[test]
    fn implicit_quartic_fixed_point_and_fd_jacobian() {
        let q = QuarticModel::new(1).unwrap();
        let p = ImplicitSolverParams::default();
        let out = implicit_euler_step(&q, &State::zeros(1), 0.5, &GaussianDraw::zeros(1), &p).unwrap();
        assert_eq!(out.coords()[0], 0.0);

        // A wrapper that hides the Hessian exercises the finite-difference path.
        struct NoHessian(QuarticModel);
        impl GradientModel for NoHessian {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn grad_into(&self, x: &[f64], out: &mut [f64]) {
                self.0.grad_into(x, out)
            }
            fn potential(&self, x: &[f64]) -> f64 {
                self.0.potential(x)
            }
            fn strong_convexity(&self) -> f64 {
                self.0.strong_convexity()
            }
            fn lipschitz(&self) -> Option<f64> {
                None
            }
        }
        let nh = NoHessian(QuarticModel::new(1).unwrap());
        let x = State::new(vec![1.7]).unwrap();
        let xi = GaussianDraw::new(vec![0.9]);
        let a = implicit_euler_step(&q, &x, 1.0, &xi, &p).unwrap();
        let b = implicit_euler_step(&nh, &x, 1.0, &xi, &p).unwrap();
        assert_relative_eq!(a.coords()[0], b.coords()[0], max_relative = 1e-9);
        // Residual postcondition.
        let rhs = 1.7 + (2.0f64).sqrt() * 0.9;
        let y = a.coords()[0];
        assert!((y - 1.0 * (-y * y * y - y) - rhs).abs() <= 1e-12);
    }

    #[test]
    fn sgld_full_batch_reproduces_euler_bitwise() {
        let fx = generate_logreg_fixture(2, 25, 3);
        let model = fx.to_model().unwrap();
        let x = State::new(vec![0.3, -0.2, 0.9]).unwrap();
        let xi = GaussianDraw::new(vec![0.5, -1.1, 0.2]);
        let h = 0.01;
        let full = Subsample::new((1..=25).collect(), 25).unwrap();
        let a = sgld_step(&model, &x, h, &xi, &full).unwrap();
        let b = euler_step(&model, &x, h, &xi).unwrap();
        assert_eq!(a.coords(), b.coords());
    }

    #[test]
    fn sgld_zero_step_is_identity() {
        let fx = generate_logreg_fixture(2, 10, 3);
        let model = fx.to_model().unwrap();
        let x = State::new(vec![0.3, -0.2, 0.9]).unwrap();
        let tau = Subsample::new(vec![1, 5, 7], 10).unwrap();
        let out = sgld_step(&model, &x, 0.0, &GaussianDraw::zeros(3), &tau).unwrap();
        assert_eq!(out.coords(), x.coords());
    }

    #[test]
    fn sgld_repeated_index_drift() {
        let fx = generate_logreg_fixture(6, 10, 3);
        let model = fx.to_model().unwrap();
        let x = State::zeros(3);
        let h = 0.01;
        let i = 4;
        let tau = Subsample::new(vec![i; 10], 10).unwrap();
        let out = sgld_step(&model, &x, h, &GaussianDraw::zeros(3), &tau).unwrap();
        // Drift at x=0 is c(0,0) + N c(0,i) = 0 + N * 0.5 * y_i ι_i.
        for (j, v) in out.coords().iter().enumerate() {
            let expected = h * 10.0 * 0.5 * model.label(i) * model.covariate_row(i)[j];
            assert_relative_eq!(v, &expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn sgld_requires_grad_terms() {
        let m = ou(1.0);
        let tau = Subsample::new(vec![1], 1).unwrap();
        let r = sgld_step(
            &m,
            &State::zeros(1),
            0.1,
            &GaussianDraw::zeros(1),
            &tau,
        );
        assert!(matches!(r, Err(Error::NoGradientTerms)));
    }

    #[test]
    fn subsample_single_atom_and_determinism() {
        let streams = Streams::new(3);
        let mut rng = streams.stream(0, 0, 0, Lane::CoupledBatch);
        let tau = draw_subsample(8, 1, &mut rng).unwrap();
        assert_eq!(tau.indices(), &[1; 8]);

        let mut r1 = streams.stream(2, 5, 0, Lane::CoupledBatch);
        let mut r2 = streams.stream(2, 5, 0, Lane::CoupledBatch);
        assert_eq!(
            draw_subsample(16, 37, &mut r1).unwrap(),
            draw_subsample(16, 37, &mut r2).unwrap()
        );
    }

    #[test]
    fn subsample_frequencies_are_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut rng = Streams::new(10).stream(0, 0, 0, Lane::CoupledBatch);
        let n_data = 10;
        let tau = draw_subsample(100_000, n_data, &mut rng).unwrap();
        let mut counts = vec![0usize; n_data];
        for &i in tau.indices() {
            counts[i - 1] += 1;
        }
        let expected = tau.len() as f64 / n_data as f64;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let p = 1.0 - ChiSquared::new((n_data - 1) as f64).unwrap().cdf(stat);
        assert!(p > 1e-3, "chi-square statistic {stat}, p {p}");
    }

    #[test]
    fn union_coupling_respects_pool_support() {
        let mut rng = Streams::new(4).stream(0, 0, 0, Lane::CoupledBatch);
        let f1 = Subsample::new(vec![1, 2], 4).unwrap();
        let f2 = Subsample::new(vec![3, 4], 4).unwrap();
        for _ in 0..200 {
            let c = couple_subsample(&f1, &f2, CouplingMode::Union, 4, &mut rng).unwrap();
            let mut seen = c.indices().to_vec();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), c.indices().len(), "no duplicates possible here");
            assert!(c.indices().iter().all(|i| (1..=4).contains(i)));
        }
    }

    #[test]
    fn stratified_coupling_takes_halves_in_order() {
        let mut rng = Streams::new(4).stream(0, 1, 0, Lane::CoupledBatch);
        let f1 = Subsample::new(vec![5, 5], 9).unwrap();
        let f2 = Subsample::new(vec![7, 9], 9).unwrap();
        for _ in 0..100 {
            let c = couple_subsample(&f1, &f2, CouplingMode::Stratified, 9, &mut rng).unwrap();
            assert_eq!(c.indices()[0], 5);
            assert!(c.indices()[1] == 7 || c.indices()[1] == 9);
        }
    }

    #[test]
    fn stratified_rejects_odd_batch() {
        let mut rng = Streams::new(4).stream(0, 2, 0, Lane::CoupledBatch);
        let f1 = Subsample::new(vec![1, 2, 3], 4).unwrap();
        let f2 = Subsample::new(vec![2, 3, 4], 4).unwrap();
        assert!(matches!(
            couple_subsample(&f1, &f2, CouplingMode::Stratified, 4, &mut rng),
            Err(Error::OddStratifiedBatch(3))
        ));
    }

    #[test]
    fn coupled_marginals_stay_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let n_data = 10;
        let s = 4;
        let trials = 100_000;
        for mode in [
            CouplingMode::Independent,
            CouplingMode::Union,
            CouplingMode::Stratified,
        ] {
            let mut rng = Streams::new(99).stream(0, 0, 0, Lane::CoupledBatch);
            let mut counts = vec![vec![0usize; n_data]; s];
            for _ in 0..trials {
                let f1 = draw_subsample(s, n_data, &mut rng).unwrap();
                let f2 = draw_subsample(s, n_data, &mut rng).unwrap();
                let c = couple_subsample(&f1, &f2, mode, n_data, &mut rng).unwrap();
                for (k, &i) in c.indices().iter().enumerate() {
                    counts[k][i - 1] += 1;
                }
            }
            let expected = trials as f64 / n_data as f64;
            let chi2 = ChiSquared::new((n_data - 1) as f64).unwrap();
            for (k, coord) in counts.iter().enumerate() {
                let stat: f64 = coord
                    .iter()
                    .map(|&c| (c as f64 - expected).powi(2) / expected)
                    .sum();
                let p = 1.0 - chi2.cdf(stat);
                assert!(
                    p > 1e-3,
                    "{mode:?} coordinate {k}: chi-square {stat:.2}, p {p:.5}"
                );
            }
        }
    }

    #[test]
    fn scheme_validation() {
        let fx = generate_logreg_fixture(1, 10, 3);
        let model = fx.to_model().unwrap();
        assert!(StepScheme::sgld(20, CouplingMode::Union)
            .validate(&model)
            .is_err());
        assert!(StepScheme::sgld(10, CouplingMode::Union)
            .validate(&model)
            .is_ok());
        assert!(StepScheme::sgld(5, CouplingMode::Stratified)
            .validate(&model)
            .is_err());
        let ou_model = ou(1.0);
        assert!(StepScheme::sgld(1, CouplingMode::Union)
            .validate(&ou_model)
            .is_err());
        assert!(StepScheme::ExplicitEuler.validate(&ou_model).is_ok());
    }
}
