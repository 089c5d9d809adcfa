//! Implicit Euler on a non-Lipschitz drift.
//!
//! The quartic potential U(x) = -x⁴/4 - x²/2 has drift -x³ - x, which blows
//! explicit Euler up at moderate step sizes while the implicit step stays
//! stable for any h. The long-run average of x² is compared against the
//! quadrature value ∫x²e^U / ∫e^U = 0.46791991697366519.
//!
//! Run with: cargo run --release --example implicit_stiff

use ergodic_mlmc::integrator::{
    euler_step, implicit_euler_step, GaussianDraw, ImplicitSolverParams,
};
use ergodic_mlmc::model::{QuarticModel, State};
use ergodic_mlmc::rng::Streams;

const QUADRATURE_SECOND_MOMENT: f64 = 0.46791991697366519;

fn main() -> ergodic_mlmc::Result<()> {
    let model = QuarticModel::new(1)?;
    let streams = Streams::new(3);
    let params = ImplicitSolverParams::default();

    // Explicit Euler at h = 1 from a moderate start: the cubic drift
    // overshoots and the state explodes within a few steps.
    let mut rng = streams.stream(0, 0, 0, ergodic_mlmc::rng::Lane::BurnNoise);
    let mut x = State::new(vec![2.5])?;
    let mut exploded_at = None;
    for k in 0..50 {
        match euler_step(&model, &x, 1.0, &GaussianDraw::standard(&mut rng, 1)) {
            Ok(next) => x = next,
            Err(_) => {
                exploded_at = Some(k);
                break;
            }
        }
        if x.coords()[0].abs() > 1e100 {
            exploded_at = Some(k);
            break;
        }
    }
    match exploded_at {
        Some(k) => println!("explicit Euler at h=1: diverged after {k} steps"),
        None => println!("explicit Euler at h=1: survived (unusual draw)"),
    }

    // Implicit Euler at the same step size runs an ergodic average instead.
    let mut rng = streams.stream(0, 1, 0, ergodic_mlmc::rng::Lane::BurnNoise);
    for h in [1.0, 0.25, 0.05] {
        let n_steps = (2e5 / h) as usize;
        let burn = n_steps / 10;
        let mut x = State::new(vec![2.5])?;
        let mut acc = 0.0;
        let mut count = 0u64;
        for k in 0..n_steps {
            x = implicit_euler_step(&model, &x, h, &GaussianDraw::standard(&mut rng, 1), &params)?;
            if k >= burn {
                acc += x.coords()[0].powi(2);
                count += 1;
            }
        }
        println!(
            "implicit Euler h={h}: time-average of x^2 = {:.5} (quadrature {:.5})",
            acc / count as f64,
            QUADRATURE_SECOND_MOMENT
        );
    }
    Ok(())
}
