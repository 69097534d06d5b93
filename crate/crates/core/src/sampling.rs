//! Online sampling runs: walks the reverse process step by step, letting the
//! scheduler choose between full computation and prediction, and records
//! per-step metrics and (optionally) a ground-truth trace.

use crate::error::Result;
use crate::feature::{rel_l1_error, FeatureVec};
use crate::pipeline::{block_expensive_op, block_pre_op, ddim_step, Pipeline};
use crate::policy::{predict_output, ModuleCache, PolicySpec};
use crate::scheduler::{
    observe_and_decide, predict_input, warmup_steps, SchedulerSpec, SchedulerState, StepAction,
};
use crate::trace::{Stream, Trace};

/// Optional instrumentation for a run.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Compute, at every predicted step, what each expensive op would have
    /// produced on the step's actual inputs, and report per-step output
    /// prediction error against it. Does not affect the trajectory.
    pub ghost_reference: bool,
    /// Record a `(t, module, stream)` trace of inputs and ground-truth
    /// outputs. Implies the ghost reference, which supplies the outputs at
    /// predicted steps.
    pub record_trace: bool,
}

/// What happened at one denoising step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub t: i64,
    pub action: StepAction,
    /// The quantity the scheduler compared against its threshold.
    pub trigger_value: f64,
    /// Relative L1 error of the first module's input forecast, when the
    /// cache held at least one sample.
    pub eps_in: Option<f64>,
    /// Mean over modules of the relative L1 output prediction error; zero
    /// at full computes, present at predicted steps only with the ghost
    /// reference.
    pub eps_out_mean: Option<f64>,
}

/// Everything a run produces.
#[derive(Debug)]
pub struct RunResult {
    pub final_latent: FeatureVec,
    pub steps: Vec<StepMetrics>,
    pub scheduler: SchedulerState,
    pub trace: Option<Trace>,
}

impl RunResult {
    /// Number of full computations, warmup included.
    pub fn nfc(&self) -> usize {
        self.scheduler.nfc()
    }

    /// Mean of the recorded output errors (full computes count as zero).
    pub fn mean_eps_out(&self) -> Option<f64> {
        mean_of(self.steps.iter().filter_map(|s| s.eps_out_mean))
    }

    /// Mean of the recorded input forecast errors.
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

/// One step's per-module features under prediction: inputs come from the
/// cheap pre-ops, outputs from the policy, with the hidden state propagated
/// through the predicted outputs.
struct PredictPass {
    inputs: Vec<FeatureVec>,
    outputs: Vec<FeatureVec>,
    hidden: FeatureVec,
}

fn forward_predict(
    pipeline: &Pipeline,
    caches: &[ModuleCache],
    policy: &PolicySpec,
    x_t: &FeatureVec,
    t: i64,
    t_total: i64,
) -> Result<PredictPass> {
    let mut hidden = x_t.clone();
    let mut inputs = Vec::with_capacity(caches.len());
    let mut outputs = Vec::with_capacity(caches.len());
    for (m, (block, kind)) in pipeline.modules().into_iter().enumerate() {
        let params = &pipeline.blocks()[block];
        let input = block_pre_op(&hidden, t, params.pre_op_params(kind));
        let output = predict_output(policy, &caches[m], &input, t, t_total)?;
        hidden = hidden.add(&output)?;
        inputs.push(input);
        outputs.push(output);
    }
    Ok(PredictPass {
        inputs,
        outputs,
        hidden,
    })
}

/// Runs the reverse process from `t = T` down to `t = 1` under the given
/// policy and scheduler. Deterministic in `(pipeline config, policy,
/// scheduler, seed)`.
pub fn run_sampling(
    pipeline: &Pipeline,
    policy: &PolicySpec,
    scheduler: &SchedulerSpec,
    seed: u64,
    opts: RunOptions,
) -> Result<RunResult> {
    let ghost = opts.ghost_reference || opts.record_trace;
    let t_total = pipeline.config().t_steps as i64;
    let n_modules = pipeline.n_modules();
    let warmup = warmup_steps(policy.samples_needed(), scheduler);
    let input_order = policy.order().max(1);

    let mut caches: Vec<ModuleCache> = (0..n_modules)
        .map(|m| ModuleCache::new(m, warmup))
        .collect();
    let mut state = SchedulerState::new(warmup);
    let mut latent = pipeline.init_latent(seed);
    let timesteps: Vec<i64> = (1..=t_total).rev().collect();
    let mut trace = if opts.record_trace {
        Some(Trace::new(
            n_modules,
            pipeline.latent_shape(),
            timesteps.clone(),
        )?)
    } else {
        None
    };
    let mut steps = Vec::with_capacity(timesteps.len());

    for (i, &t) in timesteps.iter().enumerate() {
        let last_step = i + 1 == timesteps.len();
        let in_warmup = state.warmup_remaining() > 0;
        let first_params = pipeline.blocks()[0].pre_op_params(pipeline.modules()[0].1);
        let first_input = block_pre_op(&latent.x, t, first_params);

        let eps_in = if caches[0].in_history().is_empty() {
            None
        } else {
            let forecast = predict_input(&caches[0], t, input_order)?;
            Some(rel_l1_error(&first_input, &forecast)?)
        };

        // The all-modules trigger needs every module's input, which only a
        // predicted sweep can supply before the decision is made.
        let mut sweep: Option<PredictPass> = None;
        let observed: Vec<FeatureVec> = if scheduler.wants_all_modules() && !in_warmup {
            let pass = forward_predict(pipeline, &caches, policy, &latent.x, t, t_total)?;
            let inputs = pass.inputs.clone();
            sweep = Some(pass);
            inputs
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

        let (inputs, trace_outputs, hidden, eps_out_mean) = match decision.action {
            StepAction::FullCompute => {
                let pass = pipeline.forward_full(&latent.x, t)?;
                for (m, cache) in caches.iter_mut().enumerate() {
                    cache.on_full_compute(t, pass.inputs[m].clone(), pass.outputs[m].clone())?;
                }
                // a full compute has zero prediction error by definition,
                // but the series only exists when a reference is tracked
                let eps = ghost.then_some(0.0);
                (pass.inputs, pass.outputs, pass.hidden, eps)
            }
            StepAction::Predict => {
                let pass = match sweep {
                    Some(pass) => pass,
                    None => forward_predict(pipeline, &caches, policy, &latent.x, t, t_total)?,
                };
                let (reference, eps) = if ghost {
                    let mut refs = Vec::with_capacity(n_modules);
                    let mut total = 0.0;
                    for (m, (block, kind)) in pipeline.modules().into_iter().enumerate() {
                        let truth =
                            block_expensive_op(&pass.inputs[m], &pipeline.blocks()[block], kind)?;
                        total += rel_l1_error(&truth, &pass.outputs[m])?;
                        refs.push(truth);
                    }
                    (refs, Some(total / n_modules as f64))
                } else {
                    (pass.outputs, None)
                };
                (pass.inputs, reference, pass.hidden, eps)
            }
        };

        if let Some(trace) = trace.as_mut() {
            for m in 0..n_modules {
                trace.set(t, m, Stream::Input, inputs[m].clone())?;
                trace.set(t, m, Stream::Output, trace_outputs[m].clone())?;
            }
        }

        let eps_pred = pipeline.noise_head(&hidden);
        latent.x = ddim_step(&latent.x, &eps_pred, t, pipeline.schedule())?;
        latent.t = t - 1;

        steps.push(StepMetrics {
            t,
            action: decision.action,
            trigger_value: decision.trigger_value,
            eps_in,
            eps_out_mean,
        });
    }

    Ok(RunResult {
        final_latent: latent.x,
        steps,
        scheduler: state,
        trace,
    })
}

/// Reference run with no caching machinery at all: every step computes every
/// module. Serves as the independent check that a degenerate scheduler
/// reproduces plain inference exactly.
pub fn run_reference(pipeline: &Pipeline, seed: u64) -> Result<FeatureVec> {
    let t_total = pipeline.config().t_steps as i64;
    let mut latent = pipeline.init_latent(seed);
    for t in (1..=t_total).rev() {
        let pass = pipeline.forward_full(&latent.x, t)?;
        let eps_pred = pipeline.noise_head(&pass.hidden);
        latent.x = ddim_step(&latent.x, &eps_pred, t, pipeline.schedule())?;
        latent.t = t - 1;
    }
    Ok(latent.x)
}
