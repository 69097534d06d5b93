//! Feature-cache forecasting engine for iterative denoising pipelines.
//!
//! The crate provides, bottom up:
//!
//! - [`feature`]: feature-vector values, norms, finite differences, and
//!   polynomial extrapolation over timestep histories;
//! - [`policy`]: the output-prediction policies (direct reuse, weighted
//!   linear extrapolation, polynomial forecasting, relational forecasting)
//!   and the per-module cache they share;
//! - [`scheduler`]: fixed-interval, input-distance, and accumulated-error
//!   scheduling of full computes;
//! - [`pipeline`] and [`sampling`]: a deterministic toy denoising stack and
//!   the online cached sampling loop, with an optional ghost reference that
//!   measures prediction error without disturbing the trajectory;
//! - [`synthetic`]: trajectory families with closed-form structure, used as
//!   oracles;
//! - [`trace`], [`replay`], and [`analysis`]: the trace file format, offline
//!   policy replay against recorded ground truth, and the diagnostic
//!   statistics.

pub mod analysis;
pub mod error;
pub mod feature;
pub mod pipeline;
pub mod policy;
pub mod replay;
pub mod sampling;
pub mod scheduler;
pub mod synthetic;
pub mod trace;

pub use error::{Error, Result};
pub use feature::{
    finite_difference, newton_predict, newton_predict_recent, rel_l1_error, FeatureVec,
    SampleHistory, SamplePoint,
};
pub use pipeline::{
    build_pipeline, ddim_step, forward_noise, AlphaSchedule, AlphaScheduleKind, Pipeline,
    PipelineConfig,
};
pub use policy::{
    compute_s_ratio, predict_direct_reuse, predict_linear_w, predict_output, predict_rfe,
    predict_taylor, ModuleCache, PolicySpec, WSchedule,
};
pub use replay::{replay_policy, MetricsReport};
pub use sampling::{run_reference, run_sampling, RunOptions, RunResult, StepMetrics};
pub use scheduler::{
    observe_and_decide, predict_input, warmup_steps, RcsScope, SchedulerSpec, SchedulerState,
    StepAction, StepDecision,
};
pub use synthetic::{synthetic_trajectory, SyntheticConfig, SyntheticKind};
pub use trace::{Stream, Trace};
