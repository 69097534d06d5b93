//! Step-level decision logic: at each denoising step, run full computation
//! or predict from the caches.
//!
//! Three strategies are provided: a fixed interval, a distance trigger on
//! the first module's input drift, and an adaptive trigger that accumulates
//! the relative L1 error of the input prediction and refreshes once it
//! crosses a threshold.

use crate::error::{Error, Result};
use crate::feature::{newton_predict_recent, rel_l1_error, FeatureVec};
use crate::policy::ModuleCache;

/// Which modules feed the accumulated-error trigger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcsScope {
    /// The first module's input error stands in for the whole step.
    FirstModule,
    /// Input errors are summed over every module.
    AllModules,
}

/// Scheduling strategy with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchedulerSpec {
    /// Full compute every `n` steps; the final step always refreshes.
    FixedInterval { n: usize },
    /// Full compute when the first module's input drifts from the last
    /// cached input by more than `delta` in relative L1.
    InputDistance { delta: f64 },
    /// Full compute when the accumulated input prediction error exceeds
    /// `tau`.
    Rcs { tau: f64, scope: RcsScope },
}

impl SchedulerSpec {
    /// Parses a scheduler name: `fixed:N=<int>`, `distance:delta=<float>`,
    /// `rcs:tau=<float>[,scope=first|all]`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidConfig(format!("scheduler '{}': {}", s, msg));
        let (kind, args) = s
            .split_once(':')
            .ok_or_else(|| bad("expected kind:params"))?;
        match kind {
            "fixed" => {
                let n: usize = args
                    .strip_prefix("N=")
                    .ok_or_else(|| bad("expected N=<int>"))?
                    .parse()
                    .map_err(|_| bad("interval must be an integer"))?;
                if n < 1 {
                    return Err(bad("interval must be positive"));
                }
                Ok(SchedulerSpec::FixedInterval { n })
            }
            "distance" => {
                let delta: f64 = args
                    .strip_prefix("delta=")
                    .ok_or_else(|| bad("expected delta=<float>"))?
                    .parse()
                    .map_err(|_| bad("delta must be a number"))?;
                if !delta.is_finite() || delta <= 0.0 {
                    return Err(bad("delta must be positive"));
                }
                Ok(SchedulerSpec::InputDistance { delta })
            }
            "rcs" => {
                let mut tau: Option<f64> = None;
                let mut scope = RcsScope::FirstModule;
                for part in args.split(',') {
                    if let Some(v) = part.strip_prefix("tau=") {
                        tau = Some(v.parse().map_err(|_| bad("tau must be a number"))?);
                    } else if let Some(v) = part.strip_prefix("scope=") {
                        scope = match v {
                            "first" => RcsScope::FirstModule,
                            "all" => RcsScope::AllModules,
                            _ => return Err(bad("scope must be first or all")),
                        };
                    } else {
                        return Err(bad("expected tau=<float>[,scope=first|all]"));
                    }
                }
                let tau = tau.ok_or_else(|| bad("missing tau"))?;
                if tau.is_nan() || tau < 0.0 {
                    return Err(bad("tau must be non-negative"));
                }
                Ok(SchedulerSpec::Rcs { tau, scope })
            }
            _ => Err(bad("unknown scheduler kind")),
        }
    }

    /// Short canonical name for tables and file output.
    pub fn label(&self) -> String {
        match self {
            SchedulerSpec::FixedInterval { n } => format!("fixed:N={}", n),
            SchedulerSpec::InputDistance { delta } => format!("distance:delta={}", delta),
            SchedulerSpec::Rcs { tau, scope } => {
                let scope = match scope {
                    RcsScope::FirstModule => "first",
                    RcsScope::AllModules => "all",
                };
                format!("rcs:tau={},scope={}", tau, scope)
            }
        }
    }

    /// True when the strategy needs per-step input forecasts.
    pub fn is_adaptive(&self) -> bool {
        matches!(self, SchedulerSpec::Rcs { .. })
    }

    /// True when the trigger wants inputs from every module, not just the
    /// first.
    pub fn wants_all_modules(&self) -> bool {
        matches!(
            self,
            SchedulerSpec::Rcs {
                scope: RcsScope::AllModules,
                ..
            }
        )
    }
}

impl std::fmt::Display for SchedulerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// The action chosen for one step plus the value that was compared against
/// the threshold, kept for offline analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecision {
    pub action: StepAction,
    pub trigger_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepAction {
    FullCompute,
    Predict,
}

/// Per-run scheduler bookkeeping.
///
/// `accumulated_error` and `steps_since_full` reset to zero on every full
/// compute; `full_compute_log` records the timestep of each full compute in
/// strictly decreasing order.
#[derive(Debug, Clone)]
pub struct SchedulerState {
    accumulated_error: f64,
    steps_since_full: usize,
    full_compute_log: Vec<i64>,
    warmup_remaining: usize,
}

impl SchedulerState {
    /// Fresh state with `warmup` unconditional full-compute steps ahead.
    pub fn new(warmup: usize) -> Self {
        Self {
            accumulated_error: 0.0,
            steps_since_full: 0,
            full_compute_log: Vec::new(),
            warmup_remaining: warmup,
        }
    }

    pub fn accumulated_error(&self) -> f64 {
        self.accumulated_error
    }

    pub fn steps_since_full(&self) -> usize {
        self.steps_since_full
    }

    pub fn full_compute_log(&self) -> &[i64] {
        &self.full_compute_log
    }

    pub fn warmup_remaining(&self) -> usize {
        self.warmup_remaining
    }

    /// Number of full computations in the run so far, warmup included.
    pub fn nfc(&self) -> usize {
        self.full_compute_log.len()
    }

    fn mark_full(&mut self, t: i64) {
        if let Some(last) = self.full_compute_log.last() {
            assert!(t < *last, "full-compute log must strictly decrease");
        }
        self.full_compute_log.push(t);
        self.accumulated_error = 0.0;
        self.steps_since_full = 0;
        if self.warmup_remaining > 0 {
            self.warmup_remaining -= 1;
        }
    }
}

/// Forecasts a module's input at `target_t` with an order-`m` polynomial
/// over its cached input history. The relational magnitude correction is
/// deliberately not applied here; it has no second stream to draw on.
pub fn predict_input(cache: &ModuleCache, target_t: i64, m: usize) -> Result<FeatureVec> {
    newton_predict_recent(cache.in_history(), m + 1, target_t)
}

/// Decides whether step `t` runs full computation or prediction, updating
/// `state` in place.
///
/// `observed_inputs` carries the freshly computed cheap inputs for the
/// scoped modules: the first module only, or all modules when the spec asks
/// for them. `order` is the forecast order used for input prediction.
/// `last_step` marks the final denoising step, which a fixed-interval
/// schedule always recomputes in full.
pub fn observe_and_decide(
    state: &mut SchedulerState,
    spec: &SchedulerSpec,
    observed_inputs: &[FeatureVec],
    caches: &[ModuleCache],
    t: i64,
    order: usize,
    last_step: bool,
) -> Result<StepDecision> {
    if state.warmup_remaining > 0 {
        state.mark_full(t);
        return Ok(StepDecision {
            action: StepAction::FullCompute,
            trigger_value: 0.0,
        });
    }

    let (full, trigger_value) = match spec {
        SchedulerSpec::FixedInterval { n } => {
            let count = (state.steps_since_full + 1) as f64;
            (state.steps_since_full + 1 >= *n || last_step, count)
        }
        SchedulerSpec::InputDistance { delta } => {
            let observed = observed_inputs
                .first()
                .ok_or_else(|| Error::InvalidConfig("no observed input".into()))?;
            let cached = caches[0]
                .in_history()
                .latest()
                .ok_or(Error::InsufficientHistory { needed: 1, have: 0 })?;
            let d = rel_l1_error(observed, &cached.value)?;
            (d > *delta, d)
        }
        SchedulerSpec::Rcs { tau, scope } => {
            let scoped: &[FeatureVec] = match scope {
                RcsScope::FirstModule => &observed_inputs[..1],
                RcsScope::AllModules => {
                    if observed_inputs.len() != caches.len() {
                        return Err(Error::InvalidConfig(format!(
                            "all-modules trigger got {} observed inputs for {} modules",
                            observed_inputs.len(),
                            caches.len()
                        )));
                    }
                    observed_inputs
                }
            };
            let mut step_error = 0.0;
            for (observed, cache) in scoped.iter().zip(caches) {
                if cache.in_history().len() < 2 {
                    return Err(Error::InsufficientHistory {
                        needed: 2,
                        have: cache.in_history().len(),
                    });
                }
                let predicted = predict_input(cache, t, order)?;
                step_error += rel_l1_error(observed, &predicted)?;
            }
            state.accumulated_error += step_error;
            (state.accumulated_error > *tau, state.accumulated_error)
        }
    };

    if full {
        state.mark_full(t);
        Ok(StepDecision {
            action: StepAction::FullCompute,
            trigger_value,
        })
    } else {
        state.steps_since_full += 1;
        Ok(StepDecision {
            action: StepAction::Predict,
            trigger_value,
        })
    }
}

/// Unconditional full-compute steps required before order-`m` forecasts are
/// defined: the policy needs `policy_samples` cached points, and an adaptive
/// scheduler needs at least two input samples for its own forecast.
pub fn warmup_steps(policy_samples: usize, spec: &SchedulerSpec) -> usize {
    if spec.is_adaptive() {
        policy_samples.max(2)
    } else {
        policy_samples
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(data: &[f64]) -> FeatureVec {
        FeatureVec::from_flat(data.to_vec()).unwrap()
    }

    #[test]
    fn parse_scheduler_specs() {
        assert_eq!(
            SchedulerSpec::parse("fixed:N=4").unwrap(),
            SchedulerSpec::FixedInterval { n: 4 }
        );
        assert_eq!(
            SchedulerSpec::parse("distance:delta=0.1").unwrap(),
            SchedulerSpec::InputDistance { delta: 0.1 }
        );
        assert_eq!(
            SchedulerSpec::parse("rcs:tau=0.2").unwrap(),
            SchedulerSpec::Rcs {
                tau: 0.2,
                scope: RcsScope::FirstModule
            }
        );
        assert_eq!(
            SchedulerSpec::parse("rcs:tau=0.5,scope=all").unwrap(),
            SchedulerSpec::Rcs {
                tau: 0.5,
                scope: RcsScope::AllModules
            }
        );
        for bad in [
            "fixed",
            "fixed:N=0",
            "distance:delta=-1",
            "rcs:tau=-0.1",
            "rcs:scope=all",
        ] {
            assert!(SchedulerSpec::parse(bad).is_err(), "accepted {:?}", bad);
        }
    }

    /// Drives the scheduler over a synthetic run where the first module's
    /// observed inputs follow the given per-step values.
    fn drive(
        spec: SchedulerSpec,
        warmup: usize,
        t_start: i64,
        steps: usize,
        input_at: impl Fn(i64) -> f64,
    ) -> (SchedulerState, Vec<StepDecision>) {
        let mut state = SchedulerState::new(warmup);
        let mut cache = ModuleCache::new(0, 2);
        let mut decisions = Vec::new();
        for i in 0..steps {
            let t = t_start - i as i64;
            let observed = fv(&[input_at(t), 1.0]);
            let decision = observe_and_decide(
                &mut state,
                &spec,
                std::slice::from_ref(&observed),
                std::slice::from_ref(&cache),
                t,
                1,
                i + 1 == steps,
            )
            .unwrap();
            if decision.action == StepAction::FullCompute {
                // output stream is irrelevant to the scheduler
                cache.on_full_compute(t, observed, fv(&[0.0, 0.0])).unwrap();
            }
            decisions.push(decision);
        }
        (state, decisions)
    }

    #[test]
    fn warmup_forces_full_computes() {
        let (state, decisions) = drive(SchedulerSpec::FixedInterval { n: 4 }, 2, 50, 5, |t| {
            t as f64
        });
        assert_eq!(decisions[0].action, StepAction::FullCompute);
        assert_eq!(decisions[1].action, StepAction::FullCompute);
        assert_eq!(decisions[2].action, StepAction::Predict);
        assert_eq!(decisions[3].action, StepAction::Predict);
        // the run's final step always refreshes under a fixed interval
        assert_eq!(state.full_compute_log(), &[50, 49, 46]);
    }

    #[test]
    fn fixed_interval_modular_schedule() {
        // 12 post-warmup steps at N=4: refreshes 4, 8, and 12 steps after
        // the last warmup full compute.
        let (state, decisions) = drive(SchedulerSpec::FixedInterval { n: 4 }, 2, 50, 14, |t| {
            t as f64
        });
        let fulls: Vec<i64> = state.full_compute_log().to_vec();
        assert_eq!(fulls, vec![50, 49, 45, 41, 37]);
        assert_eq!(
            decisions
                .iter()
                .filter(|d| d.action == StepAction::FullCompute)
                .count(),
            5
        );
    }

    #[test]
    fn fixed_interval_count_formula() {
        for &t_total in &[20usize, 50] {
            for n in 2..=9usize {
                for warmup in [1usize, 2, 3] {
                    let (state, _) = drive(
                        SchedulerSpec::FixedInterval { n },
                        warmup,
                        t_total as i64,
                        t_total,
                        |t| t as f64,
                    );
                    let expected = warmup + (t_total - warmup).div_ceil(n);
                    assert_eq!(
                        state.nfc(),
                        expected,
                        "T={} N={} warmup={}",
                        t_total,
                        n,
                        warmup
                    );
                }
            }
        }
    }

    #[test]
    fn accumulation_trigger_hand_case() {
        // Per-step input error 0.10 then 0.15 against tau = 0.2: the first
        // step predicts (0.10 <= 0.2), the second refreshes (0.25 > 0.2).
        let mut state = SchedulerState::new(0);
        let mut cache = ModuleCache::new(0, 2);
        cache.on_full_compute(52, fv(&[1.0]), fv(&[0.0])).unwrap();
        cache.on_full_compute(51, fv(&[1.0]), fv(&[0.0])).unwrap();
        let spec = SchedulerSpec::Rcs {
            tau: 0.2,
            scope: RcsScope::FirstModule,
        };
        // Constant history, so the forecast input is exactly 1.0; observed
        // values are chosen to make the relative errors exactly 0.10 and
        // 0.15 against their own norms.
        let first = observe_and_decide(
            &mut state,
            &spec,
            &[fv(&[1.0 / 0.90])],
            std::slice::from_ref(&cache),
            50,
            1,
            false,
        )
        .unwrap();
        assert_eq!(first.action, StepAction::Predict);
        assert!((first.trigger_value - 0.10).abs() <= 1e-12);

        let second = observe_and_decide(
            &mut state,
            &spec,
            &[fv(&[1.0 / 0.85])],
            std::slice::from_ref(&cache),
            49,
            1,
            false,
        )
        .unwrap();
        assert_eq!(second.action, StepAction::FullCompute);
        assert!((second.trigger_value - 0.25).abs() <= 1e-12);
        assert_eq!(state.accumulated_error(), 0.0);
        assert_eq!(state.steps_since_full(), 0);
    }

    #[test]
    fn zero_threshold_triggers_every_step() {
        let (state, _) = drive(
            SchedulerSpec::Rcs {
                tau: 0.0,
                scope: RcsScope::FirstModule,
            },
            2,
            50,
            10,
            |t| (t as f64) * 0.9 + (t % 3) as f64 * 0.05,
        );
        assert_eq!(state.nfc(), 10);
    }

    #[test]
    fn infinite_threshold_never_triggers_after_warmup() {
        let (state, _) = drive(
            SchedulerSpec::Rcs {
                tau: 1e9,
                scope: RcsScope::FirstModule,
            },
            2,
            50,
            20,
            |t| (t as f64) * 0.9 + (t % 3) as f64 * 0.05,
        );
        assert_eq!(state.nfc(), 2);
    }

    #[test]
    fn adaptive_trigger_without_history_is_an_error() {
        let mut state = SchedulerState::new(0);
        let cache = ModuleCache::new(0, 2);
        let spec = SchedulerSpec::Rcs {
            tau: 0.2,
            scope: RcsScope::FirstModule,
        };
        let err = observe_and_decide(
            &mut state,
            &spec,
            &[fv(&[1.0])],
            std::slice::from_ref(&cache),
            50,
            1,
            false,
        );
        assert!(matches!(err, Err(Error::InsufficientHistory { .. })));
    }

    #[test]
    fn input_distance_trigger() {
        let mut state = SchedulerState::new(0);
        let mut cache = ModuleCache::new(0, 2);
        cache
            .on_full_compute(50, fv(&[1.0, 1.0]), fv(&[0.0, 0.0]))
            .unwrap();
        let spec = SchedulerSpec::InputDistance { delta: 0.1 };

        let near = observe_and_decide(
            &mut state,
            &spec,
            &[fv(&[1.1, 1.0])],
            std::slice::from_ref(&cache),
            49,
            1,
            false,
        )
        .unwrap();
        assert_eq!(near.action, StepAction::Predict);

        let far = observe_and_decide(
            &mut state,
            &spec,
            &[fv(&[1.5, 1.0])],
            std::slice::from_ref(&cache),
            48,
            1,
            false,
        )
        .unwrap();
        assert_eq!(far.action, StepAction::FullCompute);
    }

    #[test]
    fn input_forecast_cases() {
        // stride 4, latest input [1,0] with previous difference [0.5,0]
        let mut cache = ModuleCache::new(0, 2);
        cache
            .on_full_compute(14, fv(&[0.5, 0.0]), fv(&[0.0, 0.0]))
            .unwrap();
        cache
            .on_full_compute(10, fv(&[1.0, 0.0]), fv(&[0.0, 0.0]))
            .unwrap();
        let p = predict_input(&cache, 8, 1).unwrap();
        assert_eq!(p.data(), &[1.25, 0.0]);

        // constant inputs forecast as themselves
        let mut flat = ModuleCache::new(0, 2);
        flat.on_full_compute(14, fv(&[2.0, -1.0]), fv(&[0.0, 0.0]))
            .unwrap();
        flat.on_full_compute(10, fv(&[2.0, -1.0]), fv(&[0.0, 0.0]))
            .unwrap();
        let p = predict_input(&flat, 6, 1).unwrap();
        assert_eq!(p.data(), &[2.0, -1.0]);

        // inputs linear in t are forecast exactly at first order
        let line = |t: i64| vec![0.5 * t as f64 + 1.0, -0.25 * t as f64];
        let mut linear = ModuleCache::new(0, 2);
        linear
            .on_full_compute(20, fv(&line(20)), fv(&[0.0, 0.0]))
            .unwrap();
        linear
            .on_full_compute(15, fv(&line(15)), fv(&[0.0, 0.0]))
            .unwrap();
        let p = predict_input(&linear, 11, 1).unwrap();
        for (a, b) in p.data().iter().zip(&line(11)) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn all_modules_scope_sums_errors() {
        let mut state = SchedulerState::new(0);
        let mut caches = vec![ModuleCache::new(0, 2), ModuleCache::new(1, 2)];
        for cache in &mut caches {
            cache.on_full_compute(52, fv(&[1.0]), fv(&[0.0])).unwrap();
            cache.on_full_compute(51, fv(&[1.0]), fv(&[0.0])).unwrap();
        }
        let spec = SchedulerSpec::Rcs {
            tau: 0.15,
            scope: RcsScope::AllModules,
        };
        // per-module errors 0.10 and 0.10 sum past the threshold at once
        let d = observe_and_decide(
            &mut state,
            &spec,
            &[fv(&[1.0 / 0.90]), fv(&[1.0 / 0.90])],
            &caches,
            50,
            1,
            false,
        )
        .unwrap();
        assert_eq!(d.action, StepAction::FullCompute);
        assert!((d.trigger_value - 0.20).abs() <= 1e-12);
    }
}
