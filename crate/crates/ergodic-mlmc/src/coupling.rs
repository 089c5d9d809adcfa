//! Level-correction samples Δ_ℓ via the shifted coupling.
//!
//! A level-ℓ sample runs the fine chain alone over the head start
//! [0, T_ℓ − T_{ℓ−1}] and then evolves fine and coarse chains synchronously
//! over the remaining T_{ℓ−1}: two fine steps of h_ℓ against one coarse step
//! of h_{ℓ−1} = 2 h_ℓ, the coarse step consuming the sum of the two fine
//! Gaussian increments. Both endpoints then carry their own terminal-time
//! laws while staying close pathwise, which is what makes Var[Δ_ℓ] small.

use crate::error::{Error, Result};
use crate::integrator::{
    advance, couple_subsample_into, draw_subsample_into, index_sampler, noise_increment,
    GaussianDraw, Scratch, StepScheme, Subsample,
};
use crate::model::{GradientModel, State};
use crate::rng::{fill_standard_normal, Lane, Streams};
use std::sync::Arc;

/// Time-horizon schedule T_ℓ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// T_ℓ = (ln2 / 2m) ρ (ℓ+1), ρ > 1: the contraction-matched choice.
    TheoreticalRho { m: f64, rho: f64 },
    /// T_ℓ = (β / Kζ)(ℓ ln2 − ln h0): balances the e^{-KζT} and h^β terms.
    OptimalKZeta { k: f64, zeta: f64, beta: f64 },
    /// T_ℓ = a ℓ + b.
    Linear { a: f64, b: f64 },
}

impl Schedule {
    fn validate(&self) -> Result<()> {
        match *self {
            Schedule::TheoreticalRho { m, rho } => {
                if !(rho > 1.0) {
                    return Err(Error::invalid("rho", format!("must exceed 1, got {rho}")));
                }
                if !(m > 0.0) {
                    return Err(Error::invalid("m", format!("must be positive, got {m}")));
                }
            }
            Schedule::OptimalKZeta { k, zeta, beta } => {
                if !(k > 0.0) {
                    return Err(Error::invalid("k", format!("must be positive, got {k}")));
                }
                if !(zeta > 0.0 && zeta < 1.0) {
                    return Err(Error::invalid("zeta", format!("must lie in (0,1), got {zeta}")));
                }
                if !(beta > 0.0) {
                    return Err(Error::invalid("beta", format!("must be positive, got {beta}")));
                }
            }
            Schedule::Linear { a, b } => {
                if !(a > 0.0) || !(b > 0.0) {
                    return Err(Error::invalid("linear schedule", "a and b must be positive"));
                }
            }
        }
        Ok(())
    }

    fn raw_horizon(&self, level: u32, h0: f64) -> f64 {
        let l = level as f64;
        match *self {
            Schedule::TheoreticalRho { m, rho } => (2.0f64.ln() / (2.0 * m)) * rho * (l + 1.0),
            Schedule::OptimalKZeta { k, zeta, beta } => {
                (beta / (k * zeta)) * (l * 2.0f64.ln() - h0.ln())
            }
            Schedule::Linear { a, b } => a * l + b,
        }
    }
}

/// Discretization and horizon parameters shared by all levels of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelConfig {
    pub h0: f64,
    pub schedule: Schedule,
    pub scheme: StepScheme,
}

/// Per-level plan: step sizes, horizons and integral step counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPlan {
    level: u32,
    h_fine: f64,
    h_coarse: Option<f64>,
    t_end: f64,
    t_coupled: f64,
    burn_steps: u64,
    coupled_steps: u64,
    scheme: StepScheme,
}

impl LevelPlan {
    pub fn level(&self) -> u32 {
        self.level
    }
    pub fn h_fine(&self) -> f64 {
        self.h_fine
    }
    pub fn h_coarse(&self) -> Option<f64> {
        self.h_coarse
    }
    pub fn t_end(&self) -> f64 {
        self.t_end
    }
    pub fn t_coupled(&self) -> f64 {
        self.t_coupled
    }
    pub fn burn_steps(&self) -> u64 {
        self.burn_steps
    }
    pub fn coupled_steps(&self) -> u64 {
        self.coupled_steps
    }
    pub fn scheme(&self) -> &StepScheme {
        &self.scheme
    }

    /// Plan with explicit step counts, mainly for oracle-driven tests.
    pub fn with_counts(
        level: u32,
        h0: f64,
        burn_steps: u64,
        coupled_steps: u64,
        scheme: StepScheme,
    ) -> Result<Self> {
        if !(h0 > 0.0) {
            return Err(Error::invalid("h0", "must be positive"));
        }
        let h_fine = h0 * 2.0f64.powi(-(level as i32));
        if level == 0 {
            if coupled_steps != 0 {
                return Err(Error::invalid("coupled_steps", "level 0 has no coarse chain"));
            }
            return Ok(LevelPlan {
                level,
                h_fine,
                h_coarse: None,
                t_end: burn_steps as f64 * h_fine,
                t_coupled: 0.0,
                burn_steps,
                coupled_steps,
                scheme,
            });
        }
        let h_coarse = 2.0 * h_fine;
        Ok(LevelPlan {
            level,
            h_fine,
            h_coarse: Some(h_coarse),
            t_end: burn_steps as f64 * h_fine + coupled_steps as f64 * h_coarse,
            t_coupled: coupled_steps as f64 * h_coarse,
            burn_steps,
            coupled_steps,
            scheme,
        })
    }
}

/// Coarse-grid step count covering `raw` (rounded up, exact multiples kept).
fn grid_count(raw: f64, grid: f64) -> u64 {
    let q = raw / grid;
    let r = q.round();
    let k = if (q - r).abs() <= 1e-9 * q.abs().max(1.0) {
        r
    } else {
        q.ceil()
    };
    k.max(0.0) as u64
}

/// Build the plan for `level`: the schedule horizon is rounded up to the
/// coarse grid so that both step counts come out integral, and horizons are
/// forced strictly increasing across levels.
pub fn make_level_plan(level: u32, config: &LevelConfig) -> Result<LevelPlan> {
    config.schedule.validate()?;
    if !(config.h0 > 0.0) || !config.h0.is_finite() {
        return Err(Error::invalid("h0", format!("must be positive, got {}", config.h0)));
    }
    // March up the levels tracking M_j = T_j / h_j.
    let mut m_prev: u64 = 0;
    for j in 0..=level {
        let coarse = config.h0 * 2.0f64.powi(-(j.saturating_sub(1) as i32));
        let raw = config.schedule.raw_horizon(j, config.h0);
        let k = if j == 0 {
            grid_count(raw, coarse).max(1)
        } else {
            grid_count(raw, coarse).max(m_prev + 1)
        };
        let m_j = if j == 0 { k } else { 2 * k };
        if j == level {
            return if j == 0 {
                LevelPlan::with_counts(0, config.h0, k, 0, config.scheme.clone())
            } else {
                LevelPlan::with_counts(
                    level,
                    config.h0,
                    m_j - 2 * m_prev,
                    m_prev,
                    config.scheme.clone(),
                )
            };
        }
        m_prev = m_j;
    }
    unreachable!("loop returns at j == level")
}

/// One realization of the level correction Δ_ℓ.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSample {
    /// g(fine) − g(coarse), or g(path endpoint) at level 0.
    pub delta: f64,
    /// Work in cost units: gradient-term evaluations plus Gaussian draws.
    pub cost: f64,
    pub fine_g: f64,
    /// Absent at level 0.
    pub coarse_g: Option<f64>,
}

/// The quantity of interest g: R^d -> R.
#[derive(Clone)]
pub struct Observable {
    g: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    lipschitz_hint: Option<f64>,
}

impl Observable {
    pub fn new(g: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Observable {
            g: Arc::new(g),
            lipschitz_hint: None,
        }
    }

    pub fn with_hint(mut self, lipschitz: f64) -> Self {
        self.lipschitz_hint = Some(lipschitz);
        self
    }

    pub fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz_hint
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.g)(x)
    }

    /// g(x) = x_j².
    pub fn coordinate_squared(j: usize) -> Self {
        Observable::new(move |x: &[f64]| x[j] * x[j])
    }

    /// g(x) = |x|².
    pub fn squared_norm() -> Self {
        Observable::new(|x: &[f64]| x.iter().map(|v| v * v).sum())
    }

    /// g(x) = |x − center|².
    pub fn squared_distance_from(center: Vec<f64>) -> Self {
        Observable::new(move |x: &[f64]| {
            x.iter()
                .zip(&center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
    }

    pub fn constant(c: f64) -> Self {
        Observable::new(move |_: &[f64]| c)
    }
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Observable")
            .field("lipschitz_hint", &self.lipschitz_hint)
            .finish()
    }
}

/// One row of the coupled-phase trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub t: f64,
    pub fine: Vec<f64>,
    pub coarse: Vec<f64>,
    pub sq_distance: f64,
}

/// One coupled step: the fine chain advances twice with h = h_coarse/2 and
/// increments from ξ1 then ξ2; the coarse chain advances once with the sum of
/// the two fine increments (= √(2 h_coarse)(ξ1+ξ2)/√2). For SGLD the fine
/// half-steps use τ^{F,1}, τ^{F,2} and the coarse step τ^C.
pub fn coupled_pair_step<M: GradientModel + ?Sized>(
    model: &M,
    xf: &State,
    xc: &State,
    h_coarse: f64,
    xi1: &GaussianDraw,
    xi2: &GaussianDraw,
    scheme: &StepScheme,
    taus: Option<(&Subsample, &Subsample, &Subsample)>,
) -> Result<(State, State)> {
    if !(h_coarse > 0.0) {
        return Err(Error::invalid("h_coarse", "must be positive"));
    }
    let d = model.dim();
    for len in [xf.dim(), xc.dim(), xi1.values().len(), xi2.values().len()] {
        if len != d {
            return Err(Error::DimensionMismatch { expected: d, got: len });
        }
    }
    let mut fine = xf.coords().to_vec();
    let mut coarse = xc.coords().to_vec();
    let mut scratch = Scratch::new(d);
    let mut work = PairWork::new(d);
    let taus_slices = taus.map(|(a, b, c)| (a.indices(), b.indices(), c.indices()));
    pair_step_in_place(
        model,
        scheme,
        &mut fine,
        &mut coarse,
        h_coarse,
        xi1.values(),
        xi2.values(),
        taus_slices,
        &mut scratch,
        &mut work,
    )?;
    Ok((
        State::from_computed(fine, "coupled_pair_step")?,
        State::from_computed(coarse, "coupled_pair_step")?,
    ))
}

pub(crate) struct PairWork {
    inc1: Vec<f64>,
    inc2: Vec<f64>,
    inc_coarse: Vec<f64>,
}

impl PairWork {
    pub(crate) fn new(dim: usize) -> Self {
        PairWork {
            inc1: vec![0.0; dim],
            inc2: vec![0.0; dim],
            inc_coarse: vec![0.0; dim],
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn pair_step_in_place<M: GradientModel + ?Sized>(
    model: &M,
    scheme: &StepScheme,
    xf: &mut [f64],
    xc: &mut [f64],
    h_coarse: f64,
    xi1: &[f64],
    xi2: &[f64],
    taus: Option<(&[usize], &[usize], &[usize])>,
    scratch: &mut Scratch,
    work: &mut PairWork,
) -> Result<f64> {
    let h_fine = 0.5 * h_coarse;
    noise_increment(h_fine, xi1, &mut work.inc1);
    noise_increment(h_fine, xi2, &mut work.inc2);
    // Exact identity: the coarse increment is the sum of the fine increments.
    for (c, (a, b)) in work.inc_coarse.iter_mut().zip(work.inc1.iter().zip(&work.inc2)) {
        *c = a + b;
    }
    let (tau_f1, tau_f2, tau_c) = match taus {
        Some((a, b, c)) => (Some(a), Some(b), Some(c)),
        None => (None, None, None),
    };
    let mut cost = advance(model, scheme, xf, h_fine, &work.inc1, tau_f1, scratch)?;
    cost += advance(model, scheme, xf, h_fine, &work.inc2, tau_f2, scratch)?;
    cost += advance(model, scheme, xc, h_coarse, &work.inc_coarse, tau_c, scratch)?;
    Ok(cost)
}

/// Draw one Δ_ℓ sample for `(plan.level, replica)`.
///
/// Level 0 runs a single path to T_0 and returns g(endpoint); levels ℓ ≥ 1 run
/// the shifted coupling and return g(fine) − g(coarse). All randomness comes
/// from substreams keyed by (seed, level, replica, attempt, lane), so samples
/// are reproducible regardless of scheduling, and the coupled-phase draws do
/// not depend on the burn length.
pub fn simulate_delta<M: GradientModel + ?Sized>(
    plan: &LevelPlan,
    model: &M,
    observable: &Observable,
    x0: &State,
    streams: &Streams,
    replica: u64,
) -> Result<DeltaSample> {
    simulate_delta_impl(plan, model, observable, x0, streams, replica, 0, None)
}

/// `simulate_delta` that also records the coupled-phase trajectory.
pub fn simulate_delta_traced<M: GradientModel + ?Sized>(
    plan: &LevelPlan,
    model: &M,
    observable: &Observable,
    x0: &State,
    streams: &Streams,
    replica: u64,
) -> Result<(DeltaSample, Vec<TraceRow>)> {
    let mut trace = Vec::new();
    let sample = simulate_delta_impl(
        plan,
        model,
        observable,
        x0,
        streams,
        replica,
        0,
        Some(&mut trace),
    )?;
    Ok((sample, trace))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn simulate_delta_impl<M: GradientModel + ?Sized>(
    plan: &LevelPlan,
    model: &M,
    observable: &Observable,
    x0: &State,
    streams: &Streams,
    replica: u64,
    attempt: u32,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<DeltaSample> {
    plan.scheme.validate(model)?;
    let d = model.dim();
    if x0.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x0.dim() });
    }
    let level = plan.level;
    let batch = plan.scheme.batch_size().unwrap_or(0);
    let n_data = model.n_data();

    let mut scratch = Scratch::new(d);
    let mut xi = vec![0.0; d];
    let mut inc = vec![0.0; d];
    let mut tau = vec![0usize; batch];
    let sampler = if batch > 0 { Some(index_sampler(n_data)) } else { None };
    let mut cost = 0.0;

    // Solo fine phase over [0, T_ℓ − T_{ℓ−1}] (all of [0, T_0] at level 0).
    let mut fine = x0.coords().to_vec();
    {
        let mut noise = streams.stream(level, replica, attempt, Lane::BurnNoise);
        let mut batch_rng = streams.stream(level, replica, attempt, Lane::BurnBatch);
        for _ in 0..plan.burn_steps {
            fill_standard_normal(&mut noise, &mut xi);
            cost += 1.0;
            noise_increment(plan.h_fine, &xi, &mut inc);
            let tau_ref = if let Some(dist) = &sampler {
                draw_subsample_into(&mut tau, dist, &mut batch_rng);
                Some(tau.as_slice())
            } else {
                None
            };
            cost += advance(model, &plan.scheme, &mut fine, plan.h_fine, &inc, tau_ref, &mut scratch)?;
        }
    }

    if level == 0 {
        let g = observable.eval(&fine);
        if !g.is_finite() {
            return Err(Error::NonFiniteState { context: "observable" });
        }
        return Ok(DeltaSample {
            delta: g,
            cost,
            fine_g: g,
            coarse_g: None,
        });
    }

    // Coupled phase over the remaining T_{ℓ−1}.
    let h_coarse = plan.h_coarse.expect("level >= 1 has a coarse step");
    let mut coarse = x0.coords().to_vec();
    let mut xi2 = vec![0.0; d];
    let mut tau2 = vec![0usize; batch];
    let mut tau_c = vec![0usize; batch];
    let mut pool = vec![0usize; 2 * batch];
    let mut work = PairWork::new(d);
    let mut noise = streams.stream(level, replica, attempt, Lane::CoupledNoise);
    let mut batch_rng = streams.stream(level, replica, attempt, Lane::CoupledBatch);

    if let Some(t) = trace.as_deref_mut() {
        t.push(trace_row(0, 0.0, &fine, &coarse));
    }
    for k in 0..plan.coupled_steps {
        fill_standard_normal(&mut noise, &mut xi);
        fill_standard_normal(&mut noise, &mut xi2);
        cost += 2.0;
        let taus = if let (StepScheme::Sgld { coupling, .. }, Some(dist)) =
            (&plan.scheme, &sampler)
        {
            draw_subsample_into(&mut tau, dist, &mut batch_rng);
            draw_subsample_into(&mut tau2, dist, &mut batch_rng);
            couple_subsample_into(
                &tau,
                &tau2,
                *coupling,
                dist,
                &mut batch_rng,
                &mut tau_c,
                &mut pool,
            )?;
            Some((tau.as_slice(), tau2.as_slice(), tau_c.as_slice()))
        } else {
            None
        };
        cost += pair_step_in_place(
            model,
            &plan.scheme,
            &mut fine,
            &mut coarse,
            h_coarse,
            &xi,
            &xi2,
            taus,
            &mut scratch,
            &mut work,
        )?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(trace_row(k + 1, (k + 1) as f64 * h_coarse, &fine, &coarse));
        }
    }

    let fine_g = observable.eval(&fine);
    let coarse_g = observable.eval(&coarse);
    if !fine_g.is_finite() || !coarse_g.is_finite() {
        return Err(Error::NonFiniteState { context: "observable" });
    }
    Ok(DeltaSample {
        delta: fine_g - coarse_g,
        cost,
        fine_g,
        coarse_g: Some(coarse_g),
    })
}

fn trace_row(step: u64, t: f64, fine: &[f64], coarse: &[f64]) -> TraceRow {
    let sq: f64 = fine
        .iter()
        .zip(coarse)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    TraceRow {
        step,
        t,
        fine: fine.to_vec(),
        coarse: coarse.to_vec(),
        sq_distance: sq,
    }
}

/// Evolve two chains from x0 and y0 with identical noise (and identical
/// minibatches for SGLD) and return the squared-distance trajectory
/// |X_k − Y_k|² for k = 0..=n_steps.
#[allow(clippy::too_many_arguments)]
pub fn contraction_probe<M: GradientModel + ?Sized>(
    model: &M,
    x0: &State,
    y0: &State,
    scheme: &StepScheme,
    h: f64,
    n_steps: usize,
    streams: &Streams,
    replica: u64,
) -> Result<Vec<f64>> {
    scheme.validate(model)?;
    if !(h > 0.0) {
        return Err(Error::invalid("h", "must be positive"));
    }
    let d = model.dim();
    for len in [x0.dim(), y0.dim()] {
        if len != d {
            return Err(Error::DimensionMismatch { expected: d, got: len });
        }
    }
    let batch = scheme.batch_size().unwrap_or(0);
    let mut x = x0.coords().to_vec();
    let mut y = y0.coords().to_vec();
    let mut xi = vec![0.0; d];
    let mut inc = vec![0.0; d];
    let mut tau = vec![0usize; batch];
    let sampler = if batch > 0 { Some(index_sampler(model.n_data())) } else { None };
    let mut scratch = Scratch::new(d);
    let mut noise = streams.stream(0, replica, 0, Lane::BurnNoise);
    let mut batch_rng = streams.stream(0, replica, 0, Lane::BurnBatch);
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(sq(&x, &y));
    for _ in 0..n_steps {
        fill_standard_normal(&mut noise, &mut xi);
        noise_increment(h, &xi, &mut inc);
        let tau_ref = if let Some(dist) = &sampler {
            draw_subsample_into(&mut tau, dist, &mut batch_rng);
            Some(tau.as_slice())
        } else {
            None
        };
        advance(model, scheme, &mut x, h, &inc, tau_ref, &mut scratch)?;
        advance(model, scheme, &mut y, h, &inc, tau_ref, &mut scratch)?;
        out.push(sq(&x, &y));
    }
    Ok(out)
}
