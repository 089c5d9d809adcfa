use super::Runtime;
use crate::coupling::{make_level_plan, simulate_delta_traced, LevelPlan, TraceRow};
use crate::error::{Error, Result};
use crate::estimator::{
    fit_rates, run_mlmc, run_unbiased, sample_level, LevelStats, MlmcEstimate, RandomizationLaw,
    RateFit,
};
use crate::linalg;
use crate::output::{CsvField, CsvWriter};
use crate::rng::Streams;
use serde_json::json;
use std::path::Path;
use std::time::Instant;

fn write_level_table(path: &Path, plans: &[LevelPlan], stats: &[LevelStats]) -> Result<()> {
    let mut w = CsvWriter::new(&[
        "level",
        "h",
        "t",
        "n_samples",
        "mean",
        "variance",
        "cost",
        "kurtosis",
    ]);
    for (plan, s) in plans.iter().zip(stats) {
        w.row(&[
            CsvField::Uint(plan.level() as u64),
            CsvField::Float(plan.h_fine()),
            CsvField::Float(plan.t_end()),
            CsvField::Uint(s.n()),
            CsvField::Float(s.mean()),
            CsvField::Float(s.variance()),
            CsvField::Float(s.mean_cost()),
            CsvField::Float(s.kurtosis()),
        ]);
    }
    w.write_to(path)
}

fn write_summary_json(
    path: &Path,
    eps: f64,
    est: &MlmcEstimate,
    rates: Option<&RateFit>,
) -> Result<()> {
    let doc = json!({
        "eps": eps,
        "value": est.value,
        "bias_estimate": est.bias_estimate,
        "total_cost": est.total_cost,
        "max_level": est.max_level_used,
        "hit_level_cap": est.hit_level_cap,
        "alpha_hat": rates.map(|r| r.alpha_hat).filter(|v| v.is_finite()),
        "beta_hat": rates.map(|r| r.beta_hat),
    });
    std::fs::write(path, format!("{}\n", serde_json::to_string_pretty(&doc)?))?;
    Ok(())
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(format!("JSON serialization: {e}"))
    }
}

fn write_trace_csv(path: &Path, trace: &[TraceRow], dim: usize) -> Result<()> {
    let mut header: Vec<String> = vec!["step".into(), "t".into()];
    for j in 0..dim {
        header.push(format!("fine_{j}"));
    }
    for j in 0..dim {
        header.push(format!("coarse_{j}"));
    }
    header.push("sq_distance".into());
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut w = CsvWriter::new(&refs);
    for row in trace {
        let mut fields: Vec<CsvField> = vec![CsvField::Uint(row.step), CsvField::Float(row.t)];
        fields.extend(row.fine.iter().map(|&v| CsvField::Float(v)));
        fields.extend(row.coarse.iter().map(|&v| CsvField::Float(v)));
        fields.push(CsvField::Float(row.sq_distance));
        w.row(&fields);
    }
    w.write_to(path)
}

/// Fixed-sample-count statistics at levels 0..=L plus fitted decay rates.
pub fn cmd_rates(rt: &Runtime) -> Result<()> {
    let streams = Streams::new(rt.config.seed);
    let cfg = rt.level_config();
    let n = rt.config.rates.samples_per_level;
    let mut plans = Vec::new();
    let mut stats = Vec::new();
    for level in 0..=rt.config.rates.levels {
        let plan = make_level_plan(level, &cfg)?;
        let s = sample_level(&plan, rt.model.as_ref(), &rt.observable, &rt.x0, &streams, 0..n)?;
        plans.push(plan);
        stats.push(s);
    }
    write_level_table(&rt.out_dir.join("levels.csv"), &plans, &stats)?;

    let fit = fit_rates(&stats)?;
    let doc = json!({
        "seed": rt.config.seed,
        "samples_per_level": n,
        "alpha_hat": if fit.alpha_hat.is_finite() { Some(fit.alpha_hat) } else { None },
        "beta_hat": fit.beta_hat,
        "r2": fit.r2,
        "levels_used": fit.levels_used,
    });
    std::fs::write(
        rt.out_dir.join("rates.json"),
        format!("{}\n", serde_json::to_string_pretty(&doc)?),
    )?;

    if rt.trace {
        for plan in plans.iter().skip(1) {
            let (_, trace) = simulate_delta_traced(
                plan,
                rt.model.as_ref(),
                &rt.observable,
                &rt.x0,
                &streams,
                0,
            )?;
            let path = rt.out_dir.join(format!("trace_l{}.csv", plan.level()));
            write_trace_csv(&path, &trace, rt.model.dim())?;
        }
    }
    eprintln!(
        "rates: beta_hat {:.3}, alpha_hat {:.3}, r2 {:.4} ({} levels x {} samples)",
        fit.beta_hat,
        fit.alpha_hat,
        fit.r2,
        plans.len(),
        n
    );
    Ok(())
}

fn eps_list(rt: &Runtime) -> Result<Vec<f64>> {
    if rt.config.eps.is_empty() {
        return Err(Error::Config(
            "this command needs a non-empty eps list (config `eps` or --eps)".into(),
        ));
    }
    Ok(rt.config.eps.clone())
}

/// Adaptive multilevel estimates for every ε in the list.
pub fn cmd_estimate(rt: &Runtime) -> Result<()> {
    let streams = Streams::new(rt.config.seed);
    let config = rt.mlmc_config();
    let mut table = CsvWriter::new(&["eps", "value", "cost", "cost_eps2"]);
    for (k, &eps) in eps_list(rt)?.iter().enumerate() {
        let start = Instant::now();
        let est = run_mlmc(&config, rt.model.as_ref(), &rt.observable, eps, &streams)?;
        let secs = start.elapsed().as_secs_f64();
        table.row(&[
            CsvField::Float(eps),
            CsvField::Float(est.value),
            CsvField::Float(est.total_cost),
            CsvField::Float(est.total_cost * eps * eps),
        ]);
        write_level_table(
            &rt.out_dir.join(format!("levels_eps{k}.csv")),
            &est.plans,
            &est.levels,
        )?;
        let fit = fit_rates(&est.levels).ok();
        write_summary_json(
            &rt.out_dir.join(format!("summary_eps{k}.json")),
            eps,
            &est,
            fit.as_ref(),
        )?;
        eprintln!(
            "estimate: eps {eps} -> value {:.6}, cost {:.3e}, L {}, {:.2}s",
            est.value, est.total_cost, est.max_level_used, secs
        );
    }
    table.write_to(&rt.out_dir.join("estimates.csv"))?;
    Ok(())
}

/// Randomized-truncation estimator: unbiased mean with confidence interval
/// and cost accounting.
pub fn cmd_unbiased(rt: &Runtime) -> Result<()> {
    let streams = Streams::new(rt.config.seed);
    let section = rt.config.unbiased;
    let law = RandomizationLaw::geometric(section.ratio, section.variance_rate)?;
    let config = rt.mlmc_config();
    let est = run_unbiased(
        &config,
        rt.model.as_ref(),
        &rt.observable,
        &law,
        section.replicas,
        &streams,
    )?;
    let se = est.std_error();
    // Expected replica cost Σ_j c_j P(J ≥ j) from the measured per-level costs.
    let expected_cost: f64 = est
        .levels
        .iter()
        .enumerate()
        .map(|(j, s)| s.mean_cost() * law.survival(j as u32))
        .sum();
    let doc = json!({
        "replicas": est.n_replicas,
        "ratio": law.ratio(),
        "variance_rate": section.variance_rate,
        "mean": est.mean,
        "variance": est.variance,
        "std_error": se,
        "ci_4se": [est.mean - 4.0 * se, est.mean + 4.0 * se],
        "mean_cost_per_replica": est.mean_cost,
        "expected_cost_from_levels": expected_cost,
        "max_level_reached": est.levels.len().saturating_sub(1),
    });
    std::fs::write(
        rt.out_dir.join("unbiased.json"),
        format!("{}\n", serde_json::to_string_pretty(&doc)?),
    )?;

    let plans: Vec<LevelPlan> = (0..est.levels.len() as u32)
        .map(|l| make_level_plan(l, &rt.level_config()))
        .collect::<Result<_>>()?;
    write_level_table(&rt.out_dir.join("unbiased_levels.csv"), &plans, &est.levels)?;
    eprintln!(
        "unbiased: mean {:.6} +- {:.6} (4 SE), mean cost {:.1}",
        est.mean,
        4.0 * se,
        est.mean_cost
    );
    Ok(())
}

/// Logistic-regression study: fixture, MAP, MLMC-SGLD estimates of the mean
/// squared distance from the MAP, coupling-distance traces, and the
/// (machine-dependent) wall-time table.
pub fn cmd_logreg(rt: &Runtime) -> Result<()> {
    let fixture = rt
        .fixture
        .as_ref()
        .ok_or_else(|| Error::Config("logreg command needs a logreg model".into()))?;
    let map = rt.map_point.as_ref().expect("logreg runtime carries the MAP");
    fixture.save(&rt.out_dir.join("fixture.json"))?;

    let grad_norm = {
        let g = rt.model.grad_full(map)?;
        linalg::norm2(&g)
    };
    let doc = json!({
        "x_map": map.coords(),
        "grad_norm": grad_norm,
        "x_true": fixture.x_true,
        "fixture_seed": fixture.seed,
        "n_data": fixture.n_data,
        "dim": fixture.dim,
    });
    std::fs::write(
        rt.out_dir.join("map.json"),
        format!("{}\n", serde_json::to_string_pretty(&doc)?),
    )?;

    let streams = Streams::new(rt.config.seed);
    let config = rt.mlmc_config();
    let mut table = CsvWriter::new(&["eps", "value", "cost", "cost_eps2"]);
    let mut timing = CsvWriter::new(&["eps", "wall_seconds", "wall_seconds_eps2"]);
    for (k, &eps) in eps_list(rt)?.iter().enumerate() {
        let start = Instant::now();
        let est = run_mlmc(&config, rt.model.as_ref(), &rt.observable, eps, &streams)?;
        let secs = start.elapsed().as_secs_f64();
        table.row(&[
            CsvField::Float(eps),
            CsvField::Float(est.value),
            CsvField::Float(est.total_cost),
            CsvField::Float(est.total_cost * eps * eps),
        ]);
        timing.row(&[
            CsvField::Float(eps),
            CsvField::Float(secs),
            CsvField::Float(secs * eps * eps),
        ]);
        write_level_table(
            &rt.out_dir.join(format!("levels_eps{k}.csv")),
            &est.plans,
            &est.levels,
        )?;
        let fit = fit_rates(&est.levels).ok();
        write_summary_json(
            &rt.out_dir.join(format!("summary_eps{k}.json")),
            eps,
            &est,
            fit.as_ref(),
        )?;
        eprintln!(
            "logreg: eps {eps} -> value {:.6}, cost {:.3e}, L {}, {:.2}s",
            est.value, est.total_cost, est.max_level_used, secs
        );
    }
    table.write_to(&rt.out_dir.join("estimates.csv"))?;
    timing.write_to(&rt.out_dir.join("cpu_time.csv"))?;

    // Coupling-distance decay: mean |fine - coarse|² per coupled step.
    let trace_cfg = rt.config.trace;
    let plan = make_level_plan(trace_cfg.level, &rt.level_config())?;
    let mut sums: Vec<f64> = Vec::new();
    for replica in 0..trace_cfg.replicas {
        let (_, trace) = simulate_delta_traced(
            &plan,
            rt.model.as_ref(),
            &rt.observable,
            &rt.x0,
            &streams,
            replica,
        )?;
        if sums.is_empty() {
            sums = vec![0.0; trace.len()];
        }
        for (acc, row) in sums.iter_mut().zip(&trace) {
            *acc += row.sq_distance;
        }
        if rt.trace && replica < 3 {
            let path = rt
                .out_dir
                .join(format!("trace_l{}_r{replica}.csv", plan.level()));
            write_trace_csv(&path, &trace, rt.model.dim())?;
        }
    }
    let h_coarse = plan.h_coarse().unwrap_or(plan.h_fine());
    let mut w = CsvWriter::new(&["step", "t", "mean_sq_distance"]);
    for (k, acc) in sums.iter().enumerate() {
        w.row(&[
            CsvField::Uint(k as u64),
            CsvField::Float(k as f64 * h_coarse),
            CsvField::Float(acc / trace_cfg.replicas as f64),
        ]);
    }
    w.write_to(&rt.out_dir.join("coupling_trace.csv"))?;
    Ok(())
}
