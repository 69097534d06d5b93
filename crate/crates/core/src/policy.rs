//! Output-prediction policies and the per-module cache state they share.
//!
//! Four policies are provided: direct reuse of the last cached output,
//! weighted linear extrapolation, polynomial forecasting over the cached
//! output history, and relational forecasting, which rescales the forecast
//! delta so its magnitude tracks the observed input change.

use crate::error::{Error, Result};
use crate::feature::{finite_difference, newton_predict_recent, FeatureVec, SampleHistory};

/// Weight schedule for the linear-extrapolation policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WSchedule {
    /// Fixed weight applied at every step.
    Constant(f64),
    /// Weight ramps linearly from zero at `t = 0` to one at `t = T`.
    LinearRamp,
}

/// Which prediction policy to run, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySpec {
    /// Return the latest cached output unchanged.
    DirectReuse,
    /// Latest output plus a weighted first-order extrapolation.
    LinearW { schedule: WSchedule },
    /// Polynomial forecast of order `m` over the cached output history.
    Taylor { m: usize },
    /// Polynomial forecast direction, magnitude rescaled from the input
    /// change via the cached output/input change ratio.
    Rfe { m: usize },
}

impl PolicySpec {
    /// Parses a policy name: `reuse`, `linear:w=<c>|ramp`, `taylor:m=<int>`,
    /// `rfe:m=<int>`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidConfig(format!("policy '{}': {}", s, msg));
        let (kind, args) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        match kind {
            "reuse" => {
                if args.is_some() {
                    return Err(bad("takes no arguments"));
                }
                Ok(PolicySpec::DirectReuse)
            }
            "linear" => {
                let args = args.ok_or_else(|| bad("expected w=<c> or w=ramp"))?;
                let val = args
                    .strip_prefix("w=")
                    .ok_or_else(|| bad("expected w=<c> or w=ramp"))?;
                let schedule = if val == "ramp" {
                    WSchedule::LinearRamp
                } else {
                    let c: f64 = val.parse().map_err(|_| bad("weight must be a number"))?;
                    if !c.is_finite() || c <= 0.0 {
                        return Err(bad("constant weight must be positive"));
                    }
                    WSchedule::Constant(c)
                };
                Ok(PolicySpec::LinearW { schedule })
            }
            "taylor" | "rfe" => {
                let args = args.ok_or_else(|| bad("expected m=<int>"))?;
                let val = args
                    .strip_prefix("m=")
                    .ok_or_else(|| bad("expected m=<int>"))?;
                let m: usize = val.parse().map_err(|_| bad("order must be an integer"))?;
                if m < 1 {
                    return Err(bad("order must be at least 1"));
                }
                if kind == "taylor" {
                    Ok(PolicySpec::Taylor { m })
                } else {
                    Ok(PolicySpec::Rfe { m })
                }
            }
            _ => Err(bad("unknown policy kind")),
        }
    }

    /// Degree of the extrapolation polynomial this policy builds.
    pub fn order(&self) -> usize {
        match self {
            PolicySpec::DirectReuse => 0,
            PolicySpec::LinearW { .. } => 1,
            PolicySpec::Taylor { m } | PolicySpec::Rfe { m } => *m,
        }
    }

    /// Number of cached samples the policy needs before predicting.
    pub fn samples_needed(&self) -> usize {
        self.order() + 1
    }

    /// Short canonical name for tables and file output.
    pub fn label(&self) -> String {
        match self {
            PolicySpec::DirectReuse => "reuse".to_string(),
            PolicySpec::LinearW { schedule } => match schedule {
                WSchedule::Constant(c) => format!("linear:w={}", c),
                WSchedule::LinearRamp => "linear:w=ramp".to_string(),
            },
            PolicySpec::Taylor { m } => format!("taylor:m={}", m),
            PolicySpec::Rfe { m } => format!("rfe:m={}", m),
        }
    }
}

impl std::fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// Change-magnitude ratio between paired output and input differences:
/// `||out_diff||_2 / ||in_diff||_2`, absent when the input change is zero.
pub fn compute_s_ratio(in_diff: &FeatureVec, out_diff: &FeatureVec) -> Option<f64> {
    let denom = in_diff.l2_norm();
    if denom == 0.0 {
        return None;
    }
    Some(out_diff.l2_norm() / denom)
}

/// Per-module cache state: paired input/output histories of the most recent
/// full computes, the latest output/input change ratio, and the latest
/// full-compute interval.
#[derive(Debug, Clone)]
pub struct ModuleCache {
    module_id: usize,
    out_history: SampleHistory,
    in_history: SampleHistory,
    s_ratio: Option<f64>,
    last_interval: Option<i64>,
}

impl ModuleCache {
    /// Creates an empty cache retaining `capacity` full-compute samples.
    pub fn new(module_id: usize, capacity: usize) -> Self {
        Self {
            module_id,
            out_history: SampleHistory::new(capacity),
            in_history: SampleHistory::new(capacity),
            s_ratio: None,
            last_interval: None,
        }
    }

    pub fn module_id(&self) -> usize {
        self.module_id
    }

    pub fn out_history(&self) -> &SampleHistory {
        &self.out_history
    }

    pub fn in_history(&self) -> &SampleHistory {
        &self.in_history
    }

    /// Output/input change ratio measured between the two most recent full
    /// computes; absent until two samples exist or when the input change
    /// has zero norm.
    pub fn s_ratio(&self) -> Option<f64> {
        self.s_ratio
    }

    /// Gap between the two most recent full computes.
    pub fn last_interval(&self) -> Option<i64> {
        self.last_interval
    }

    /// Timestep of the most recent full compute.
    pub fn last_full_t(&self) -> Option<i64> {
        self.out_history.latest().map(|p| p.t)
    }

    pub fn len(&self) -> usize {
        self.out_history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.out_history.is_empty()
    }

    /// Records a full compute: appends `(t, input)` and `(t, output)` to the
    /// paired histories and refreshes the change ratio and interval.
    pub fn on_full_compute(&mut self, t: i64, input: FeatureVec, output: FeatureVec) -> Result<()> {
        if let Some(latest) = self.in_history.latest() {
            latest.value.check_same_shape(&input)?;
        }
        if let Some(latest) = self.out_history.latest() {
            latest.value.check_same_shape(&output)?;
        }
        self.in_history.push(t, input);
        self.out_history.push(t, output);
        self.last_interval = self.out_history.latest_interval();
        self.s_ratio = if self.out_history.len() >= 2 {
            let in_diff = finite_difference(&self.in_history, 1)?;
            let out_diff = finite_difference(&self.out_history, 1)?;
            compute_s_ratio(&in_diff, &out_diff)
        } else {
            None
        };
        Ok(())
    }
}

/// Latest cached output, unchanged.
pub fn predict_direct_reuse(cache: &ModuleCache) -> Result<FeatureVec> {
    cache
        .out_history
        .latest()
        .map(|p| p.value.clone())
        .ok_or(Error::InsufficientHistory { needed: 1, have: 0 })
}

/// Weighted linear extrapolation from the two most recent cached outputs:
/// latest output plus `w(t) * k * (diff / interval)` where `k` is the number
/// of steps past the last full compute.
pub fn predict_linear_w(
    cache: &ModuleCache,
    k: i64,
    t_now: i64,
    t_total: i64,
    schedule: WSchedule,
) -> Result<FeatureVec> {
    assert!(k >= 1, "prediction offset must be positive");
    if cache.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            have: cache.len(),
        });
    }
    let w = match schedule {
        WSchedule::Constant(c) => c,
        WSchedule::LinearRamp => (t_now as f64 / t_total as f64).clamp(0.0, 1.0),
    };
    let latest = cache.out_history.latest().expect("len checked");
    let diff = finite_difference(&cache.out_history, 1)?;
    let interval = cache.last_interval.expect("len checked") as f64;
    // Scale as w*k first, then per-element diff/interval: with w == 1 this
    // reproduces the order-1 polynomial forecast bit for bit.
    let scale = w * k as f64;
    let data: Vec<f64> = latest
        .value
        .data()
        .iter()
        .zip(diff.data())
        .map(|(o, d)| o + scale * (d / interval))
        .collect();
    Ok(FeatureVec::unchecked(data, latest.value.shape().to_vec()))
}

/// Polynomial forecast of order `m` over the cached outputs, evaluated at
/// `target_t`. Degrades gracefully: with `h` cached samples the effective
/// degree is `min(m, h - 1)`.
pub fn predict_taylor(cache: &ModuleCache, target_t: i64, m: usize) -> Result<FeatureVec> {
    newton_predict_recent(&cache.out_history, m + 1, target_t)
}

/// Relational forecast: keeps the direction of the polynomial forecast delta
/// but sets its magnitude to `s * ||current_input - latest cached input||_2`,
/// where `s` is the cached output/input change ratio.
///
/// Falls back to the plain polynomial forecast when the ratio is absent, and
/// to the latest cached output when the forecast delta is zero.
pub fn predict_rfe(
    cache: &ModuleCache,
    current_input: &FeatureVec,
    target_t: i64,
    m: usize,
) -> Result<FeatureVec> {
    let taylor = predict_taylor(cache, target_t, m)?;
    let s = match cache.s_ratio {
        Some(s) => s,
        None => return Ok(taylor),
    };
    let latest_in = &cache
        .in_history
        .latest()
        .expect("ratio implies samples")
        .value;
    current_input.check_same_shape(latest_in)?;
    let latest_out = &cache
        .out_history
        .latest()
        .expect("ratio implies samples")
        .value;

    let delta = taylor.sub(latest_out)?;
    let dir = delta.normalized_l2();
    if dir.l2_norm() == 0.0 {
        return Ok(latest_out.clone());
    }
    let magnitude = s * current_input.sub(latest_in)?.l2_norm();
    latest_out.add(&dir.scale(magnitude))
}

/// Dispatches the configured policy. `current_input` is the freshly computed
/// cheap input for the module at `t_now`; only the relational policy uses it.
pub fn predict_output(
    policy: &PolicySpec,
    cache: &ModuleCache,
    current_input: &FeatureVec,
    t_now: i64,
    t_total: i64,
) -> Result<FeatureVec> {
    match policy {
        PolicySpec::DirectReuse => predict_direct_reuse(cache),
        PolicySpec::LinearW { schedule } => {
            let last = cache
                .last_full_t()
                .ok_or(Error::InsufficientHistory { needed: 2, have: 0 })?;
            predict_linear_w(cache, last - t_now, t_now, t_total, *schedule)
        }
        PolicySpec::Taylor { m } => predict_taylor(cache, t_now, *m),
        PolicySpec::Rfe { m } => predict_rfe(cache, current_input, t_now, *m),
    }
}
