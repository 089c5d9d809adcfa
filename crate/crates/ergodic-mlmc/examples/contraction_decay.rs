//! Watch synchronously coupled chains contract.
//!
//! Two chains driven by identical noise from different starts approach each
//! other exponentially when the potential is strongly concave. On OU the
//! per-step factor is exactly (1 - κh) for explicit Euler and 1/(1 + κh) for
//! implicit Euler; on the logistic posterior the decay shows up in the Monte
//! Carlo average.
//!
//! Run with: cargo run --release --example contraction_decay

use ergodic_mlmc::coupling::contraction_probe;
use ergodic_mlmc::integrator::{CouplingMode, ImplicitSolverParams, StepScheme};
use ergodic_mlmc::model::{generate_logreg_fixture, map_newton, OuModel, State};
use ergodic_mlmc::rng::Streams;

fn main() -> ergodic_mlmc::Result<()> {
    let streams = Streams::new(5);
    let kappa = 0.4;
    let h = 0.5;
    let ou = OuModel::new(kappa, 1)?;
    let x0 = State::new(vec![3.0])?;
    let y0 = State::new(vec![-2.0])?;

    println!("OU, |X_k - Y_k|^2 against the exact factors:");
    let explicit = contraction_probe(&ou, &x0, &y0, &StepScheme::ExplicitEuler, h, 8, &streams, 0)?;
    let implicit = contraction_probe(
        &ou,
        &x0,
        &y0,
        &StepScheme::ImplicitEuler(ImplicitSolverParams::default()),
        h,
        8,
        &streams,
        0,
    )?;
    println!("{:>4} {:>14} {:>14} {:>14} {:>14}", "k", "explicit", "(1-kh)^2k", "implicit", "1/(1+kh)^2k");
    let d0 = 25.0;
    for k in 0..=8 {
        println!(
            "{:>4} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}",
            k,
            explicit[k],
            (1.0 - kappa * h).powi(2 * k as i32) * d0,
            implicit[k],
            d0 / (1.0 + kappa * h).powi(2 * k as i32),
        );
    }

    // Logistic posterior with SGLD: average the squared distance over replicas.
    let fixture = generate_logreg_fixture(1, 100, 3);
    let model = fixture.to_model()?;
    let map = map_newton(&model, &State::zeros(3), 1e-10, 100)?;
    let h = 0.02;
    let n_steps = 150; // T = 3
    let replicas = 200;
    let far = State::new(map.coords().iter().map(|v| v + 1.0).collect())?;
    let mut mean_sq = vec![0.0; n_steps + 1];
    for r in 0..replicas {
        let traj = contraction_probe(
            &model,
            &map,
            &far,
            &StepScheme::sgld(20, CouplingMode::Union),
            h,
            n_steps,
            &streams,
            r,
        )?;
        for (acc, v) in mean_sq.iter_mut().zip(&traj) {
            *acc += v / replicas as f64;
        }
    }
    println!("\nlogistic posterior, SGLD pair from MAP and MAP+1 (mean over {replicas} replicas):");
    for k in [0, 10, 25, 50, 75, 100, 125, 150] {
        println!("  t {:>5.2}: mean |X-Y|^2 = {:.5e}", k as f64 * h, mean_sq[k]);
    }
    Ok(())
}
