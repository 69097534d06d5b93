//! Subcommand implementations.

use std::fs;
use std::path::Path;
use std::time::Instant;

use forecache_core::{
    analysis, build_pipeline, replay_policy, run_reference, run_sampling, Error, Pipeline,
    PolicySpec, Result, RunOptions, RunResult, SchedulerSpec, Trace,
};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::output;

fn seed_stem(out_dir: &Path, seed: u64) -> std::path::PathBuf {
    out_dir.join(format!("run_seed{}", seed))
}

/// Runs every seed, writing metrics CSV, a JSON summary, the final latent,
/// and optionally a trace per seed.
pub fn cmd_run(config: &ExperimentConfig, record_trace: bool, no_cache: bool) -> Result<()> {
    fs::create_dir_all(&config.out_dir)?;
    let pipeline = build_pipeline(&config.pipeline)?;
    for &seed in &config.seeds {
        let stem = seed_stem(&config.out_dir, seed);
        if no_cache {
            let latent = run_reference(&pipeline, seed)?;
            output::write_latent(&stem.with_extension("latent.json"), latent.data())?;
            println!(
                "seed {}: reference run, no caching, latent written to {}",
                seed,
                stem.with_extension("latent.json").display()
            );
            continue;
        }
        let result = run_one(&pipeline, config, seed, record_trace)?;
        output::write_metrics_csv(&stem.with_extension("metrics.csv"), &result.steps)?;
        output::write_run_summary(
            &stem.with_extension("summary.json"),
            &output::RunSummary {
                policy: &config.policy.label(),
                scheduler: &config.scheduler.label(),
                seed,
                nfc: result.nfc(),
                full_compute_log: result.scheduler.full_compute_log(),
                mean_eps_in: result.mean_eps_in(),
                mean_eps_out: result.mean_eps_out(),
            },
        )?;
        output::write_latent(
            &stem.with_extension("latent.json"),
            result.final_latent.data(),
        )?;
        if let Some(trace) = &result.trace {
            trace.write(&stem.with_extension("trace.jsonl"))?;
        }
        println!(
            "seed {}: nfc {} mean_eps_out {}",
            seed,
            result.nfc(),
            result
                .mean_eps_out()
                .map(|v| format!("{:.6e}", v))
                .unwrap_or_else(|| "-".into())
        );
    }
    Ok(())
}

fn run_one(
    pipeline: &Pipeline,
    config: &ExperimentConfig,
    seed: u64,
    record_trace: bool,
) -> Result<RunResult> {
    run_sampling(
        pipeline,
        &config.policy,
        &config.scheduler,
        seed,
        RunOptions {
            ghost_reference: config.ghost_reference,
            record_trace,
        },
    )
}

/// Sweeps the accumulation threshold over a grid, averaging per-seed NFC
/// and errors; the table is sorted by threshold.
pub fn cmd_sweep_tau(config: &ExperimentConfig, taus: &[f64]) -> Result<()> {
    if taus.len() < 2 {
        return Err(Error::InvalidConfig(
            "sweep needs at least two grid points".into(),
        ));
    }
    let scope = match config.scheduler {
        SchedulerSpec::Rcs { scope, .. } => scope,
        _ => forecache_core::RcsScope::FirstModule,
    };
    fs::create_dir_all(&config.out_dir)?;
    let pipeline = build_pipeline(&config.pipeline)?;
    let mut grid = taus.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite taus"));

    let mut rows = Vec::with_capacity(grid.len());
    for &tau in &grid {
        if tau < 0.0 {
            return Err(Error::InvalidConfig("tau must be non-negative".into()));
        }
        let scheduler = SchedulerSpec::Rcs { tau, scope };
        let mut nfc_sum = 0.0;
        let (mut eps_out_acc, mut eps_in_acc) = (MeanAcc::new(), MeanAcc::new());
        for &seed in &config.seeds {
            let result = run_sampling(
                &pipeline,
                &config.policy,
                &scheduler,
                seed,
                RunOptions {
                    ghost_reference: config.ghost_reference,
                    record_trace: false,
                },
            )?;
            nfc_sum += result.nfc() as f64;
            eps_out_acc.push_opt(result.mean_eps_out());
            eps_in_acc.push_opt(result.mean_eps_in());
        }
        let nfc_mean = nfc_sum / config.seeds.len() as f64;
        rows.push((tau, nfc_mean, eps_out_acc.mean(), eps_in_acc.mean()));
        println!("tau {:<8} nfc_mean {:.2}", tau, nfc_mean);
    }
    output::write_sweep_csv(&config.out_dir.join("sweep_tau.csv"), &rows)?;
    Ok(())
}

struct MeanAcc {
    sum: f64,
    n: usize,
}

impl MeanAcc {
    fn new() -> Self {
        Self { sum: 0.0, n: 0 }
    }

    fn push_opt(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.sum += v;
            self.n += 1;
        }
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// Compares policies under one scheduler; with a target NFC, tunes each
/// policy's scheduler (threshold or interval) until the mean NFC lands
/// within 0.5 of the target.
pub fn cmd_compare(
    config: &ExperimentConfig,
    policies: &[PolicySpec],
    target_nfc: Option<f64>,
) -> Result<()> {
    if policies.len() < 2 {
        return Err(Error::InvalidConfig(
            "compare needs at least two policies".into(),
        ));
    }
    fs::create_dir_all(&config.out_dir)?;
    let pipeline = build_pipeline(&config.pipeline)?;
    // error measurement needs the ghost reference regardless of the config
    let mut rows = Vec::with_capacity(policies.len());
    for policy in policies {
        let start = Instant::now();
        let scheduler = match target_nfc {
            Some(target) => tune_scheduler(&pipeline, config, policy, target)?,
            None => config.scheduler,
        };
        let mut nfc_sum = 0.0;
        let (mut eps_out_acc, mut eps_in_acc) = (MeanAcc::new(), MeanAcc::new());
        for &seed in &config.seeds {
            let result = run_sampling(
                &pipeline,
                policy,
                &scheduler,
                seed,
                RunOptions {
                    ghost_reference: true,
                    record_trace: false,
                },
            )?;
            nfc_sum += result.nfc() as f64;
            eps_out_acc.push_opt(result.mean_eps_out());
            eps_in_acc.push_opt(result.mean_eps_in());
        }
        rows.push(output::ComparisonRow {
            policy: policy.label(),
            scheduler: scheduler.label(),
            nfc_mean: nfc_sum / config.seeds.len() as f64,
            mean_eps_out: eps_out_acc.mean(),
            mean_eps_in: eps_in_acc.mean(),
            wall_secs: start.elapsed().as_secs_f64(),
        });
    }
    output::print_comparison(&rows);
    output::write_comparison_csv(&config.out_dir.join("compare.csv"), &rows)?;
    Ok(())
}

fn mean_nfc(
    pipeline: &Pipeline,
    config: &ExperimentConfig,
    policy: &PolicySpec,
    scheduler: &SchedulerSpec,
) -> Result<f64> {
    let mut sum = 0.0;
    for &seed in &config.seeds {
        let result = run_sampling(pipeline, policy, scheduler, seed, RunOptions::default())?;
        sum += result.nfc() as f64;
    }
    Ok(sum / config.seeds.len() as f64)
}

/// NFC is monotone non-increasing in the threshold, so a bisection over
/// `[0, 10]` homes in on the target; fixed intervals are scanned directly.
fn tune_scheduler(
    pipeline: &Pipeline,
    config: &ExperimentConfig,
    policy: &PolicySpec,
    target: f64,
) -> Result<SchedulerSpec> {
    const TOLERANCE: f64 = 0.5;
    const MAX_ITERS: usize = 30;
    match config.scheduler {
        SchedulerSpec::Rcs { scope, .. } => {
            let (mut lo, mut hi) = (0.0f64, 10.0f64);
            let probe = |tau: f64| -> Result<f64> {
                mean_nfc(pipeline, config, policy, &SchedulerSpec::Rcs { tau, scope })
            };
            let nfc_lo = probe(lo)?;
            let nfc_hi = probe(hi)?;
            if (nfc_lo - target).abs() <= TOLERANCE {
                return Ok(SchedulerSpec::Rcs { tau: lo, scope });
            }
            if (nfc_hi - target).abs() <= TOLERANCE {
                return Ok(SchedulerSpec::Rcs { tau: hi, scope });
            }
            if target > nfc_lo || target < nfc_hi {
                return Err(Error::BisectionFailed(format!(
                    "target nfc {} outside achievable range [{}, {}]",
                    target, nfc_hi, nfc_lo
                )));
            }
            for _ in 0..MAX_ITERS {
                let mid = 0.5 * (lo + hi);
                let nfc = probe(mid)?;
                if (nfc - target).abs() <= TOLERANCE {
                    return Ok(SchedulerSpec::Rcs { tau: mid, scope });
                }
                if nfc > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Err(Error::BisectionFailed(format!(
                "no threshold within {} of nfc {} after {} iterations",
                TOLERANCE, target, MAX_ITERS
            )))
        }
        _ => {
            for n in 1..=config.pipeline.t_steps {
                let candidate = SchedulerSpec::FixedInterval { n };
                if (mean_nfc(pipeline, config, policy, &candidate)? - target).abs() <= TOLERANCE {
                    return Ok(candidate);
                }
            }
            Err(Error::BisectionFailed(format!(
                "no fixed interval reaches nfc {}",
                target
            )))
        }
    }
}

/// Reads a trace, emits the diagnostic tables, and, when a policy and
/// scheduler are configured, replays them against the trace.
pub fn cmd_analyze(
    trace_path: &Path,
    out_dir: &Path,
    replay: Option<(&PolicySpec, &SchedulerSpec)>,
) -> Result<()> {
    let trace = Trace::read(trace_path)?;
    fs::create_dir_all(out_dir)?;
    let tables = analysis::analysis_tables(&trace)?;
    let mut summary = json!({
        "n_modules": trace.n_modules(),
        "timesteps": trace.timesteps().len(),
        "rsd": tables.rsd,
        "r2_input": tables.r2_input,
        "r2_timestep": tables.r2_timestep,
        "consistency_input": tables.consistency_input,
        "consistency_output": tables.consistency_output,
    });

    if let Some((policy, scheduler)) = replay {
        let report = replay_policy(&trace, policy, scheduler)?;
        output::write_metrics_csv(&out_dir.join("replay.metrics.csv"), &report.steps)?;
        let profile = analysis::interval_profile(std::slice::from_ref(&report.full_compute_log))?;
        summary["replay"] = json!({
            "policy": policy.label(),
            "scheduler": scheduler.label(),
            "nfc": report.nfc,
            "full_compute_log": report.full_compute_log,
            "intervals": report.intervals,
            "interval_profile": profile,
            "mean_eps_out": report.mean_eps_out(),
            "mean_eps_in": report.mean_eps_in(),
        });
    }

    output::write_json(&out_dir.join("analysis.json"), &summary)?;
    output::write_l2_series_csv(
        &out_dir.join("l2_series.csv"),
        &tables.l2_input,
        &tables.l2_output,
    )?;
    println!(
        "analysis written to {} ({} modules, {} steps)",
        out_dir.display(),
        trace.n_modules(),
        trace.timesteps().len()
    );
    Ok(())
}
