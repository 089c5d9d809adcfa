//! Measure how the level-correction mean and variance decay with the level.
//!
//! The coupled Euler scheme on an OU target decays at the strong rate β = 2;
//! the minibatch (SGLD) coupling pays for subsampling with β = 1. Both fits
//! come from fixed-sample-count statistics at levels 0..=5.
//!
//! Run with: cargo run --release --example level_rates [samples_per_level]

use ergodic_mlmc::coupling::{make_level_plan, LevelConfig, Observable, Schedule};
use ergodic_mlmc::estimator::{fit_rates, sample_level, LevelStats};
use ergodic_mlmc::integrator::{CouplingMode, StepScheme};
use ergodic_mlmc::model::{generate_logreg_fixture, map_newton, GradientModel, State};
use ergodic_mlmc::model::OuModel;
use ergodic_mlmc::rng::Streams;
use std::time::Instant;

fn run_study(
    name: &str,
    config: &LevelConfig,
    model: &dyn GradientModel,
    observable: &Observable,
    x0: &State,
    n: u64,
    max_level: u32,
) -> ergodic_mlmc::Result<()> {
    let streams = Streams::new(123);
    let start = Instant::now();
    let mut stats: Vec<LevelStats> = Vec::new();
    println!("{name}:");
    println!(
        "{:>6} {:>10} {:>8} {:>13} {:>13} {:>12}",
        "level", "h", "T", "mean", "variance", "mean cost"
    );
    for level in 0..=max_level {
        let plan = make_level_plan(level, config)?;
        let s = sample_level(&plan, model, observable, x0, &streams, 0..n)?;
        println!(
            "{:>6} {:>10.6} {:>8.2} {:>13.4e} {:>13.4e} {:>12.1}",
            level,
            plan.h_fine(),
            plan.t_end(),
            s.mean(),
            s.variance(),
            s.mean_cost()
        );
        stats.push(s);
    }
    let fit = fit_rates(&stats)?;
    println!(
        "fitted: beta_hat {:.3} (r2 {:.4}), alpha_hat {:.3}  [{} samples/level, {:.1}s]\n",
        fit.beta_hat,
        fit.r2,
        fit.alpha_hat,
        n,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn main() -> ergodic_mlmc::Result<()> {
    let n: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10_000);

    let ou = OuModel::new(0.4, 1)?;
    run_study(
        "OU, coupled explicit Euler, g(x) = x^2",
        &LevelConfig {
            h0: 0.5,
            schedule: Schedule::TheoreticalRho { m: 0.4, rho: 2.0 },
            scheme: StepScheme::ExplicitEuler,
        },
        &ou,
        &Observable::coordinate_squared(0),
        &State::zeros(1),
        n,
        5,
    )?;

    let fixture = generate_logreg_fixture(1, 100, 3);
    let model = fixture.to_model()?;
    let map = map_newton(&model, &State::zeros(3), 1e-10, 100)?;
    run_study(
        "logistic regression, coupled SGLD (s = 20, union), g(x) = |x - MAP|^2",
        &LevelConfig {
            h0: 0.02,
            schedule: Schedule::Linear { a: 3.0, b: 3.0 },
            scheme: StepScheme::sgld(20, CouplingMode::Union),
        },
        &model,
        &Observable::squared_distance_from(map.coords().to_vec()),
        &map,
        n,
        5,
    )?;
    Ok(())
}
