//! Bayesian logistic regression with multilevel SGLD.
//!
//! Generates the 100-point, 3-dimensional dataset, finds the posterior mode
//! by Newton-Raphson, then estimates the posterior mean squared distance from
//! the mode with minibatch (s = 20) chains whose fine and coarse subsamples
//! are coupled. All three subsample couplings estimate the same quantity.
//!
//! Run with: cargo run --release --example logreg_sgld

use ergodic_mlmc::coupling::{LevelConfig, Observable, Schedule};
use ergodic_mlmc::estimator::{run_mlmc, MlmcConfig};
use ergodic_mlmc::integrator::{CouplingMode, StepScheme};
use ergodic_mlmc::model::{generate_logreg_fixture, map_newton, State};
use ergodic_mlmc::rng::Streams;

fn main() -> ergodic_mlmc::Result<()> {
    let fixture = generate_logreg_fixture(1, 100, 3);
    let model = fixture.to_model()?;
    let map = map_newton(&model, &State::zeros(3), 1e-10, 100)?;
    println!("MAP: {:?}", map.coords());
    println!("x_true: {:?}", fixture.x_true);

    let observable = Observable::squared_distance_from(map.coords().to_vec());
    let streams = Streams::new(11);
    let eps = 0.05;
    for coupling in [
        CouplingMode::Independent,
        CouplingMode::Union,
        CouplingMode::Stratified,
    ] {
        let config = MlmcConfig::new(
            LevelConfig {
                h0: 0.02,
                schedule: Schedule::Linear { a: 3.0, b: 3.0 },
                scheme: StepScheme::sgld(20, coupling),
            },
            map.clone(),
        );
        let est = run_mlmc(&config, &model, &observable, eps, &streams)?;
        println!(
            "{:?} coupling: E|x - MAP|^2 = {:.5} (L {}, cost {:.3e})",
            coupling, est.value, est.max_level_used, est.total_cost
        );
    }
    Ok(())
}
