//! Multilevel estimation engine.
//!
//! Per-level streaming moments (mergeable across workers), the √(V/C) sample
//! allocation, an adaptive driver targeting a root-mean-square error ε with
//! the split ε²/2 variance + ε²/2 squared bias, the randomized unbiasing
//! layer, and empirical rate fitting.

use crate::coupling::{
    make_level_plan, simulate_delta_impl, DeltaSample, LevelConfig, LevelPlan, Observable,
};
use crate::error::{Error, Result};
use crate::model::{GradientModel, State};
use crate::rng::{Lane, Streams};
use rand::{Rng, RngExt};
use rayon::prelude::*;

/// Mergeable streaming moments of the Δ samples at one level, with cost and
/// failure accounting. Central moments up to fourth order follow the
/// pairwise-update formulas, so merging partial aggregates from parallel
/// workers reproduces the sequential result up to rounding.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LevelStats {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
    total_cost: f64,
    n_failed: u64,
}

impl LevelStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, sample: &DeltaSample) {
        self.push(sample.delta, sample.cost);
    }

    pub fn push(&mut self, delta: f64, cost: f64) {
        let n0 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let d = delta - self.mean;
        let dn = d / n;
        let dn2 = dn * dn;
        let term1 = d * dn * n0;
        self.mean += dn;
        self.m4 += term1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * self.m2 - 4.0 * dn * self.m3;
        self.m3 += term1 * dn * (n - 2.0) - 3.0 * dn * self.m2;
        self.m2 += term1;
        self.total_cost += cost;
    }

    pub fn record_failures(&mut self, count: u64) {
        self.n_failed += count;
    }

    pub fn merge(&self, other: &LevelStats) -> LevelStats {
        if self.n == 0 {
            let mut out = other.clone();
            out.n_failed += self.n_failed;
            out.total_cost += self.total_cost;
            return out;
        }
        if other.n == 0 {
            let mut out = self.clone();
            out.n_failed += other.n_failed;
            out.total_cost += other.total_cost;
            return out;
        }
        let na = self.n as f64;
        let nb = other.n as f64;
        let n = na + nb;
        let d = other.mean - self.mean;
        let d2 = d * d;
        let d3 = d2 * d;
        let d4 = d2 * d2;
        let mean = self.mean + d * nb / n;
        let m2 = self.m2 + other.m2 + d2 * na * nb / n;
        let m3 = self.m3
            + other.m3
            + d3 * na * nb * (na - nb) / (n * n)
            + 3.0 * d * (na * other.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + other.m4
            + d4 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * d * (na * other.m3 - nb * self.m3) / n;
        LevelStats {
            n: self.n + other.n,
            mean,
            m2,
            m3,
            m4,
            total_cost: self.total_cost + other.total_cost,
            n_failed: self.n_failed + other.n_failed,
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn m2(&self) -> f64 {
        self.m2
    }

    /// Unbiased sample variance (0 before two samples arrive).
    pub fn variance(&self) -> f64 {
        if self.n >= 2 {
            (self.m2 / (self.n as f64 - 1.0)).max(0.0)
        } else {
            0.0
        }
    }

    /// Plain moment-ratio kurtosis n·m4/m2² (3 for a Gaussian).
    pub fn kurtosis(&self) -> f64 {
        if self.n >= 2 && self.m2 > 0.0 {
            self.n as f64 * self.m4 / (self.m2 * self.m2)
        } else {
            0.0
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n >= 2 {
            (self.variance() / self.n as f64).sqrt()
        } else {
            f64::INFINITY
        }
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn mean_cost(&self) -> f64 {
        if self.n > 0 {
            self.total_cost / self.n as f64
        } else {
            0.0
        }
    }

    pub fn n_failed(&self) -> u64 {
        self.n_failed
    }
}

/// Optimal sample counts N_ℓ = ⌈2 ε⁻² √(V_ℓ/C_ℓ) Σ_k √(V_k C_k)⌉.
///
/// `levels` holds (variance, cost-per-sample) pairs. When every variance is
/// zero there is nothing to allocate from and each level gets `min_samples`.
pub fn allocate_samples(levels: &[(f64, f64)], eps: f64, min_samples: u64) -> Vec<u64> {
    assert!(eps > 0.0, "eps must be positive");
    if levels.iter().all(|&(v, _)| v <= 0.0) {
        return vec![min_samples; levels.len()];
    }
    let s: f64 = levels.iter().map(|&(v, c)| (v * c).sqrt()).sum();
    levels
        .iter()
        .map(|&(v, c)| {
            let n = 2.0 * eps.powi(-2) * (v / c).sqrt() * s;
            n.ceil() as u64
        })
        .collect()
}

/// Configuration of the adaptive multilevel run.
#[derive(Debug, Clone)]
pub struct MlmcConfig {
    pub level: LevelConfig,
    pub x0: State,
    /// Samples drawn at each level before the first allocation.
    pub warmup_samples: u64,
    /// Highest level of the warm-up set (levels 0..=warmup_levels).
    pub warmup_levels: u32,
    pub max_level: u32,
    /// Weak rate α for the Richardson bias estimate.
    pub weak_rate: f64,
}

impl MlmcConfig {
    pub fn new(level: LevelConfig, x0: State) -> Self {
        MlmcConfig {
            level,
            x0,
            warmup_samples: 1000,
            warmup_levels: 2,
            max_level: 20,
            weak_rate: 1.0,
        }
    }
}

/// Result of an adaptive multilevel run.
#[derive(Debug, Clone)]
pub struct MlmcEstimate {
    /// Σ_ℓ mean Δ_ℓ.
    pub value: f64,
    pub levels: Vec<LevelStats>,
    pub plans: Vec<LevelPlan>,
    pub max_level_used: u32,
    pub eps: f64,
    pub total_cost: f64,
    pub bias_estimate: f64,
    /// True when the level cap stopped the bias loop early (best effort).
    pub hit_level_cap: bool,
}

const FAILURE_RATE_THRESHOLD: f64 = 0.01;
const MAX_ATTEMPTS_PER_SAMPLE: u32 = 64;
const MAX_ADAPTIVE_ROUNDS: usize = 1000;

/// Draw the Δ samples `replicas` for one level in parallel and fold them in
/// replica order. Failed samples (integrator divergence) are redrawn with a
/// fresh attempt substream and counted; the batch errors out when the failure
/// rate crosses 1%.
pub fn sample_level<M: GradientModel + ?Sized>(
    plan: &LevelPlan,
    model: &M,
    observable: &Observable,
    x0: &State,
    streams: &Streams,
    replicas: std::ops::Range<u64>,
) -> Result<LevelStats> {
    let start = replicas.start;
    let count = (replicas.end - replicas.start) as usize;
    let results: Vec<Result<(DeltaSample, u64)>> = (0..count)
        .into_par_iter()
        .with_min_len(32)
        .map(|k| draw_with_retries(plan, model, observable, x0, streams, start + k as u64))
        .collect();
    let mut stats = LevelStats::new();
    for r in results {
        let (sample, failures) = r?;
        stats.update(&sample);
        stats.record_failures(failures);
    }
    let attempts = stats.n() + stats.n_failed();
    if attempts > 0 && stats.n_failed() as f64 / attempts as f64 > FAILURE_RATE_THRESHOLD {
        return Err(Error::ExcessiveFailures {
            level: plan.level(),
            rate: stats.n_failed() as f64 / attempts as f64,
            threshold: FAILURE_RATE_THRESHOLD,
        });
    }
    Ok(stats)
}

fn draw_with_retries<M: GradientModel + ?Sized>(
    plan: &LevelPlan,
    model: &M,
    observable: &Observable,
    x0: &State,
    streams: &Streams,
    replica: u64,
) -> Result<(DeltaSample, u64)> {
    let mut failures = 0u64;
    for attempt in 0..MAX_ATTEMPTS_PER_SAMPLE {
        match simulate_delta_impl(plan, model, observable, x0, streams, replica, attempt, None) {
            Ok(sample) => return Ok((sample, failures)),
            Err(Error::NonFiniteState { .. }) | Err(Error::SolverNonConvergence { .. }) => {
                failures += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::ExcessiveFailures {
        level: plan.level(),
        rate: 1.0,
        threshold: FAILURE_RATE_THRESHOLD,
    })
}

/// Richardson-style remaining-bias estimate from the last two level means,
/// assuming |E Δ_ℓ| decays like 2^{-αℓ}.
fn bias_estimate(levels: &[LevelStats], alpha: f64) -> f64 {
    let denom = 2.0f64.powf(alpha) - 1.0;
    let last = levels.len() - 1;
    let tail = levels[last].mean().abs() / denom;
    if last >= 1 {
        let prev = levels[last - 1].mean().abs() / (2.0f64.powf(alpha) * denom);
        tail.max(prev)
    } else {
        tail
    }
}

/// Adaptive multilevel estimator: warm up, allocate by √(V/C), extend levels
/// until the Richardson bias estimate fits in the ε/√2 budget.
pub fn run_mlmc<M: GradientModel + ?Sized>(
    config: &MlmcConfig,
    model: &M,
    observable: &Observable,
    eps: f64,
    streams: &Streams,
) -> Result<MlmcEstimate> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", "must be positive"));
    }
    config.level.scheme.validate(model)?;
    let warm_top = config.warmup_levels.min(config.max_level);
    let mut plans: Vec<LevelPlan> = (0..=warm_top)
        .map(|l| make_level_plan(l, &config.level))
        .collect::<Result<_>>()?;
    let mut stats: Vec<LevelStats> = Vec::new();
    for plan in &plans {
        stats.push(sample_level(
            plan,
            model,
            observable,
            &config.x0,
            streams,
            0..config.warmup_samples,
        )?);
    }

    let bias_budget = eps / 2.0f64.sqrt();
    let mut hit_level_cap = false;
    for _round in 0..MAX_ADAPTIVE_ROUNDS {
        let vc: Vec<(f64, f64)> = stats
            .iter()
            .map(|s| (s.variance(), s.mean_cost().max(f64::MIN_POSITIVE)))
            .collect();
        let targets = allocate_samples(&vc, eps, config.warmup_samples);

        let mut drew = false;
        for (level, (&target, plan)) in targets.iter().zip(plans.iter()).enumerate() {
            let have = stats[level].n();
            if target > have {
                let extra = sample_level(
                    plan,
                    model,
                    observable,
                    &config.x0,
                    streams,
                    have..target,
                )?;
                stats[level] = stats[level].merge(&extra);
                drew = true;
            }
        }
        if drew {
            continue;
        }

        let bias = bias_estimate(&stats, config.weak_rate);
        if bias <= bias_budget {
            break;
        }
        let next_level = plans.len() as u32;
        if next_level > config.max_level {
            hit_level_cap = true;
            break;
        }
        let plan = make_level_plan(next_level, &config.level)?;
        stats.push(sample_level(
            &plan,
            model,
            observable,
            &config.x0,
            streams,
            0..config.warmup_samples,
        )?);
        plans.push(plan);
    }

    let value: f64 = stats.iter().map(|s| s.mean()).sum();
    let total_cost: f64 = stats.iter().map(|s| s.total_cost()).sum();
    let bias = bias_estimate(&stats, config.weak_rate);
    Ok(MlmcEstimate {
        value,
        max_level_used: plans.len() as u32 - 1,
        plans,
        eps,
        total_cost,
        bias_estimate: bias,
        hit_level_cap,
        levels: stats,
    })
}

/// Geometric randomization law for the truncation level J:
/// P(J ≥ j) = r^j. Finite expected cost needs r < 2^{-γ} with γ = 1; finite
/// variance of the reweighted sum needs r > 2^{-β}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomizationLaw {
    ratio: f64,
}

impl RandomizationLaw {
    pub fn geometric(ratio: f64, variance_rate: f64) -> Result<Self> {
        let lo = 2.0f64.powf(-variance_rate);
        let hi = 0.5;
        if !(ratio > lo && ratio < hi) {
            return Err(Error::invalid(
                "ratio",
                format!("needs 2^(-beta) < r < 2^(-1), i.e. ({lo:.6}, {hi}); got {ratio}"),
            ));
        }
        Ok(RandomizationLaw { ratio })
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// P(J ≥ j) = r^j.
    pub fn survival(&self, j: u32) -> f64 {
        self.ratio.powi(j as i32)
    }

    /// Draw J with P(J ≥ j) = r^j.
    pub fn sample_level<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = 1.0 - rng.random_range(0.0..1.0); // u in (0, 1]
        if u >= 1.0 {
            return 0;
        }
        (u.ln() / self.ratio.ln()).floor() as u32
    }
}

/// Result of the randomized (bias-free) estimator.
#[derive(Debug, Clone)]
pub struct UnbiasedEstimate {
    pub mean: f64,
    pub variance: f64,
    pub mean_cost: f64,
    pub n_replicas: u64,
    /// Moments of the single-replica estimator Z.
    pub z_stats: LevelStats,
    /// Per-level Δ statistics across the replicas that reached each level.
    pub levels: Vec<LevelStats>,
    pub law: RandomizationLaw,
}

impl UnbiasedEstimate {
    pub fn std_error(&self) -> f64 {
        (self.variance / self.n_replicas as f64).sqrt()
    }
}

/// Randomized multilevel estimator: each replica draws a truncation level J
/// from `law` and returns Z = Σ_{j=0..=J} Δ_j / P(J ≥ j), which is unbiased
/// for the invariant-measure expectation.
pub fn run_unbiased<M: GradientModel + ?Sized>(
    config: &MlmcConfig,
    model: &M,
    observable: &Observable,
    law: &RandomizationLaw,
    n_replicas: u64,
    streams: &Streams,
) -> Result<UnbiasedEstimate> {
    config.level.scheme.validate(model)?;
    struct Replica {
        z: f64,
        cost: f64,
        deltas: Vec<DeltaSample>,
    }
    let results: Vec<Result<Replica>> = (0..n_replicas as usize)
        .into_par_iter()
        .with_min_len(16)
        .map(|replica| {
            let replica = replica as u64;
            let mut rng = streams.stream(0, replica, 0, Lane::Randomization);
            let top = law.sample_level(&mut rng);
            let mut z = 0.0;
            let mut cost = 0.0;
            let mut deltas = Vec::with_capacity(top as usize + 1);
            for j in 0..=top {
                let plan = make_level_plan(j, &config.level)?;
                let (sample, _failures) = draw_with_retries(
                    &plan,
                    model,
                    observable,
                    &config.x0,
                    streams,
                    replica,
                )?;
                z += sample.delta / law.survival(j);
                cost += sample.cost;
                deltas.push(sample);
            }
            Ok(Replica { z, cost, deltas })
        })
        .collect();

    let mut z_stats = LevelStats::new();
    let mut levels: Vec<LevelStats> = Vec::new();
    for r in results {
        let replica = r?;
        z_stats.push(replica.z, replica.cost);
        for (j, d) in replica.deltas.iter().enumerate() {
            if levels.len() <= j {
                levels.resize(j + 1, LevelStats::new());
            }
            levels[j].update(d);
        }
    }
    Ok(UnbiasedEstimate {
        mean: z_stats.mean(),
        variance: z_stats.variance(),
        mean_cost: z_stats.mean_cost(),
        n_replicas,
        z_stats,
        levels,
        law: *law,
    })
}

/// Fitted decay rates of the level means and variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    /// Weak rate: −slope of log₂|mean Δ_ℓ| against ℓ.
    pub alpha_hat: f64,
    /// Variance rate: −slope of log₂ Var Δ_ℓ against ℓ.
    pub beta_hat: f64,
    /// R² of the variance regression.
    pub r2: f64,
    pub levels_used: usize,
}

/// Least-squares rates over levels ℓ ≥ 1; zero-variance levels are excluded.
pub fn fit_rates(levels: &[LevelStats]) -> Result<RateFit> {
    let var_points: Vec<(f64, f64)> = levels
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, s)| s.variance() > 0.0)
        .map(|(l, s)| (l as f64, s.variance().log2()))
        .collect();
    if var_points.len() < 3 {
        return Err(Error::invalid(
            "levels",
            "rate fit needs at least 3 usable levels beyond level 0",
        ));
    }
    let (_, var_slope, r2) = linear_fit(&var_points);
    let mean_points: Vec<(f64, f64)> = levels
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, s)| s.mean().abs() > 0.0)
        .map(|(l, s)| (l as f64, s.mean().abs().log2()))
        .collect();
    let alpha_hat = if mean_points.len() >= 2 {
        let (_, slope, _) = linear_fit(&mean_points);
        -slope
    } else {
        f64::NAN
    };
    Ok(RateFit {
        alpha_hat,
        beta_hat: -var_slope,
        r2,
        levels_used: var_points.len(),
    })
}

/// (intercept, slope, r²) of the least-squares line through `points`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let mx = sx / n;
    let my = sy / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (intercept, slope, r2)
}
