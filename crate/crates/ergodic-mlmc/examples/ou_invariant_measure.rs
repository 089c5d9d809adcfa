//! Estimate the invariant variance of an Ornstein-Uhlenbeck process.
//!
//! dX = -κX dt + √2 dW has invariant measure N(0, κ⁻¹); with g(x) = x² the
//! multilevel estimator should recover κ⁻¹ = 2.5 for κ = 0.4 at any accuracy.
//!
//! Run with: cargo run --release --example ou_invariant_measure

use ergodic_mlmc::coupling::{LevelConfig, Observable, Schedule};
use ergodic_mlmc::estimator::{run_mlmc, MlmcConfig};
use ergodic_mlmc::integrator::StepScheme;
use ergodic_mlmc::model::{OuModel, State};
use ergodic_mlmc::rng::Streams;

fn main() -> ergodic_mlmc::Result<()> {
    let kappa = 0.4;
    let model = OuModel::new(kappa, 1)?;
    let config = MlmcConfig::new(
        LevelConfig {
            h0: 0.5,
            schedule: Schedule::TheoreticalRho { m: kappa, rho: 2.0 },
            scheme: StepScheme::ExplicitEuler,
        },
        State::zeros(1),
    );
    let observable = Observable::coordinate_squared(0);
    let streams = Streams::new(7);

    println!("target: 1/kappa = {}", 1.0 / kappa);
    println!("{:>8} {:>12} {:>12} {:>6} {:>14}", "eps", "estimate", "bias_est", "L", "cost");
    for eps in [0.1, 0.05, 0.025] {
        let est = run_mlmc(&config, &model, &observable, eps, &streams)?;
        println!(
            "{:>8} {:>12.6} {:>12.6} {:>6} {:>14.3e}",
            eps, est.value, est.bias_estimate, est.max_level_used, est.total_cost
        );
        for (plan, stats) in est.plans.iter().zip(&est.levels) {
            println!(
                "    level {}: h {:>9.5}, T {:>6.2}, n {:>8}, mean {:>12.3e}, var {:>10.3e}",
                plan.level(),
                plan.h_fine(),
                plan.t_end(),
                stats.n(),
                stats.mean(),
                stats.variance()
            );
        }
    }
    Ok(())
}
