//! Offline replay: runs any policy/scheduler combination against the ground
//! truth stored in a trace, without touching the pipeline.
//!
//! At full-compute steps the caches ingest the recorded features; at
//! predicted steps the policy forecasts from the caches and its error is
//! measured against the recorded output. A replay of the trace a run
//! recorded reproduces that run's decisions and output-error series.

use crate::error::Result;
use crate::feature::rel_l1_error;
use crate::policy::{predict_output, ModuleCache, PolicySpec};
use crate::sampling::StepMetrics;
use crate::scheduler::{
    observe_and_decide, predict_input, warmup_steps, SchedulerSpec, SchedulerState, StepAction,
};
use crate::trace::{Stream, Trace};

/// Replay outcome: the per-step series plus scheduler aggregates.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub steps: Vec<StepMetrics>,
    pub nfc: usize,
    pub full_compute_log: Vec<i64>,
    /// Gaps between successive full computes, in steps.
    pub intervals: Vec<i64>,
}

impl MetricsReport {
    pub fn mean_eps_out(&self) -> Option<f64> {
        mean_of(self.steps.iter().filter_map(|s| s.eps_out_mean))
    }

    pub fn mean_eps_in(&self) -> Option<f64> {
        mean_of(self.steps.iter().filter_map(|s| s.eps_in))
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Simulates the caching decisions against recorded ground truth.
///
/// With an all-modules adaptive scope the trigger is re-evaluated from the
/// recorded inputs; at steps the original run computed in full those inputs
/// came from the full pass rather than a predicted sweep, so agreement with
/// an online run is exact only for the first-module scope.
pub fn replay_policy(
    trace: &Trace,
    policy: &PolicySpec,
    scheduler: &SchedulerSpec,
) -> Result<MetricsReport> {
    let n_modules = trace.n_modules();
    let timesteps = trace.timesteps().to_vec();
    let t_total = timesteps[0];
    let warmup = warmup_steps(policy.samples_needed(), scheduler);
    let input_order = policy.order().max(1);

    let mut caches: Vec<ModuleCache> = (0..n_modules)
        .map(|m| ModuleCache::new(m, warmup))
        .collect();
    let mut state = SchedulerState::new(warmup);
    let mut steps = Vec::with_capacity(timesteps.len());

    for (i, &t) in timesteps.iter().enumerate() {
        let last_step = i + 1 == timesteps.len();
        let first_input = trace.get(t, 0, Stream::Input)?;

        let eps_in = if caches[0].in_history().is_empty() {
            None
        } else {
            let forecast = predict_input(&caches[0], t, input_order)?;
            Some(rel_l1_error(first_input, &forecast)?)
        };

        let observed: Vec<_> = if scheduler.wants_all_modules() {
            (0..n_modules)
                .map(|m| trace.get(t, m, Stream::Input).cloned())
                .collect::<Result<_>>()?
        } else {
            vec![first_input.clone()]
        };

        let decision = observe_and_decide(
            &mut state,
            scheduler,
            &observed,
            &caches,
            t,
            input_order,
            last_step,
        )?;

        let eps_out_mean = match decision.action {
            StepAction::FullCompute => {
                for (m, cache) in caches.iter_mut().enumerate() {
                    cache.on_full_compute(
                        t,
                        trace.get(t, m, Stream::Input)?.clone(),
                        trace.get(t, m, Stream::Output)?.clone(),
                    )?;
                }
                Some(0.0)
            }
            StepAction::Predict => {
                let mut total = 0.0;
                for (m, cache) in caches.iter().enumerate() {
                    let input = trace.get(t, m, Stream::Input)?;
                    let truth = trace.get(t, m, Stream::Output)?;
                    let predicted = predict_output(policy, cache, input, t, t_total)?;
                    total += rel_l1_error(truth, &predicted)?;
                }
                Some(total / n_modules as f64)
            }
        };

        steps.push(StepMetrics {
            t,
            action: decision.action,
            trigger_value: decision.trigger_value,
            eps_in,
            eps_out_mean,
        });
    }

    let log = state.full_compute_log().to_vec();
    let intervals = log.windows(2).map(|w| w[0] - w[1]).collect();
    Ok(MetricsReport {
        steps,
        nfc: state.nfc(),
        full_compute_log: log,
        intervals,
    })
}
