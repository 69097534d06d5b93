//! Offline diagnostics over recorded traces: change-magnitude series, the
//! invariance of the output/input change ratio, windowed linearity fits,
//! directional consistency of feature changes, and full-compute interval
//! profiles.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::feature::FeatureVec;
use crate::trace::{Stream, Trace};

/// Ridge guard applied to the normal equations; short windows in high
/// dimensions are rank-deficient without it.
const RIDGE: f64 = 1e-8;

/// L2 distances between consecutive samples of one stream, min-max
/// normalized to `[0, 1]`. An all-equal raw series normalizes to all zeros.
pub fn consecutive_l2_series(trace: &Trace, module: usize, stream: Stream) -> Result<Vec<f64>> {
    let ts = trace.timesteps();
    if ts.len() < 2 {
        return Err(Error::InsufficientData(
            "need at least two timesteps for a distance series".into(),
        ));
    }
    let mut raw = Vec::with_capacity(ts.len() - 1);
    for pair in ts.windows(2) {
        let a = trace.get(pair[0], module, stream)?;
        let b = trace.get(pair[1], module, stream)?;
        raw.push(b.sub(a)?.l2_norm());
    }
    Ok(min_max_normalize(&raw))
}

fn min_max_normalize(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // A spread at rounding-noise level is an all-equal series; normalizing
    // it would amplify noise into [0, 1], so it maps to zeros instead.
    if max - min <= 1e-12 * max.abs().max(f64::MIN_POSITIVE) {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|v| (v - min) / (max - min)).collect()
}

/// Relative standard deviation of the output/input change ratio at anchor
/// `t`, taken over offsets `k = 1..=k_max`.
pub fn s_ratio_rsd(trace: &Trace, module: usize, t: i64, k_max: usize) -> Result<f64> {
    assert!(k_max >= 2, "ratio spread needs at least two offsets");
    let i_t = trace.get(t, module, Stream::Input)?;
    let o_t = trace.get(t, module, Stream::Output)?;
    let mut ratios = Vec::with_capacity(k_max);
    for k in 1..=k_max as i64 {
        let in_diff = trace.get(t - k, module, Stream::Input)?.sub(i_t)?;
        let out_diff = trace.get(t - k, module, Stream::Output)?.sub(o_t)?;
        let denom = in_diff.l2_norm();
        if denom == 0.0 {
            return Err(Error::UndefinedRatio { module, t, k });
        }
        ratios.push(out_diff.l2_norm() / denom);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    if mean == 0.0 {
        return Err(Error::UndefinedRatio { module, t, k: 0 });
    }
    let var = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / ratios.len() as f64;
    Ok(var.sqrt() / mean)
}

/// Mean windowed R-squared of a joint affine fit from input features to
/// output features, over sliding windows of `window` consecutive samples.
pub fn linearity_r2(trace: &Trace, module: usize, window: usize) -> Result<f64> {
    windowed_r2(trace, module, window, Regressor::InputFeatures)
}

/// Mean windowed R-squared of an affine fit from the scalar timestep to the
/// output features. On trajectories whose magnitude profile is irregular
/// this sits well below the input-feature fit.
pub fn timestep_r2(trace: &Trace, module: usize, window: usize) -> Result<f64> {
    windowed_r2(trace, module, window, Regressor::Timestep)
}

enum Regressor {
    InputFeatures,
    Timestep,
}

fn windowed_r2(trace: &Trace, module: usize, window: usize, regressor: Regressor) -> Result<f64> {
    if window < 3 {
        return Err(Error::InvalidConfig("fit window must be at least 3".into()));
    }
    let ts = trace.timesteps();
    if ts.len() < window {
        return Err(Error::InsufficientData(format!(
            "trace has {} steps, fit window needs {}",
            ts.len(),
            window
        )));
    }
    let mut scores = Vec::with_capacity(ts.len() - window + 1);
    for start in 0..=(ts.len() - window) {
        let steps = &ts[start..start + window];
        let y_rows: Vec<&FeatureVec> = steps
            .iter()
            .map(|&t| trace.get(t, module, Stream::Output))
            .collect::<Result<_>>()?;
        let r2 = match regressor {
            Regressor::InputFeatures => {
                let x_rows: Vec<&FeatureVec> = steps
                    .iter()
                    .map(|&t| trace.get(t, module, Stream::Input))
                    .collect::<Result<_>>()?;
                let x: Vec<Vec<f64>> = x_rows.iter().map(|v| v.data().to_vec()).collect();
                let y: Vec<Vec<f64>> = y_rows.iter().map(|v| v.data().to_vec()).collect();
                fit_r2(&x, &y, steps[0])?
            }
            Regressor::Timestep => {
                let x: Vec<Vec<f64>> = steps.iter().map(|&t| vec![t as f64]).collect();
                let y: Vec<Vec<f64>> = y_rows.iter().map(|v| v.data().to_vec()).collect();
                fit_r2(&x, &y, steps[0])?
            }
        };
        scores.push(r2);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Centers both sides, applies the ridge-guarded affine fit, and returns
/// the pooled coefficient of determination. A window with constant outputs
/// fits perfectly by the intercept alone.
///
/// The fitted values of the ridge regression depend on the regressors only
/// through the window-by-window Gram matrix (`X (XᵀX + λI)⁻¹ Xᵀ` equals
/// `(XXᵀ + λI)⁻¹ XXᵀ`), so the solve stays at window size regardless of the
/// feature dimension.
fn fit_r2(x_rows: &[Vec<f64>], y_rows: &[Vec<f64>], window_t: i64) -> Result<f64> {
    let n = x_rows.len();
    let p = x_rows[0].len();
    let q = y_rows[0].len();
    let x_mean: Vec<f64> = (0..p)
        .map(|j| x_rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let y_mean: Vec<f64> = (0..q)
        .map(|j| y_rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let xc = DMatrix::from_fn(n, p, |i, j| x_rows[i][j] - x_mean[j]);
    let yc = DMatrix::from_fn(n, q, |i, j| y_rows[i][j] - y_mean[j]);

    let ss_tot = yc.iter().map(|v| v * v).sum::<f64>();
    if ss_tot == 0.0 {
        return Ok(1.0);
    }
    let gram = &xc * xc.transpose();
    let mut guarded = gram.clone();
    for d in 0..n {
        guarded[(d, d)] += RIDGE;
    }
    let chol = guarded
        .cholesky()
        .ok_or(Error::SingularFit { t: window_t })?;
    let fitted = chol.solve(&(gram * &yc));
    let residual = fitted - yc;
    let ss_res = residual.iter().map(|v| v * v).sum::<f64>();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean pairwise cosine similarity among the change directions
/// `{F(t-k) - F(t)}` for `k = 1..=k_max`, averaged over every anchor `t`
/// whose offsets are all present, for one stream of one module.
///
/// Depends only on directions: rescaling any difference by a positive
/// factor leaves the score unchanged.
pub fn directional_consistency(
    trace: &Trace,
    module: usize,
    stream: Stream,
    k_max: usize,
) -> Result<f64> {
    assert!(k_max >= 2, "pairwise similarity needs at least two offsets");
    let ts = trace.timesteps();
    let mut anchor_scores = Vec::new();
    for (i, &t) in ts.iter().enumerate() {
        if i + k_max >= ts.len() {
            break;
        }
        // offsets must be exactly t-1..t-k_max
        if ts[i + k_max] != t - k_max as i64 {
            continue;
        }
        let anchor = trace.get(t, module, stream)?;
        let mut dirs = Vec::with_capacity(k_max);
        for k in 1..=k_max as i64 {
            let diff = trace.get(t - k, module, stream)?.sub(anchor)?;
            if diff.l2_norm() == 0.0 {
                return Err(Error::UndefinedDirection { module, t, k });
            }
            dirs.push(diff.normalized_l2());
        }
        let mut total = 0.0;
        let mut pairs = 0usize;
        for a in 0..dirs.len() {
            for b in (a + 1)..dirs.len() {
                total += dirs[a]
                    .data()
                    .iter()
                    .zip(dirs[b].data())
                    .map(|(x, y)| x * y)
                    .sum::<f64>();
                pairs += 1;
            }
        }
        anchor_scores.push(total / pairs as f64);
    }
    if anchor_scores.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no anchor covers {} consecutive offsets",
            k_max
        )));
    }
    Ok(anchor_scores.iter().sum::<f64>() / anchor_scores.len() as f64)
}

/// Position-wise mean interval between successive full computes, averaged
/// across runs. Position `i` averages `log[i] - log[i+1]` over every run
/// whose log reaches it.
pub fn interval_profile(logs: &[Vec<i64>]) -> Result<Vec<f64>> {
    let max_intervals = logs
        .iter()
        .map(|log| log.len().saturating_sub(1))
        .max()
        .unwrap_or(0);
    if max_intervals == 0 {
        return Err(Error::InsufficientData(
            "no run has two or more full computes".into(),
        ));
    }
    let mut profile = Vec::with_capacity(max_intervals);
    for i in 0..max_intervals {
        let mut sum = 0.0;
        let mut n = 0usize;
        for log in logs {
            if i + 1 < log.len() {
                sum += (log[i] - log[i + 1]) as f64;
                n += 1;
            }
        }
        profile.push(sum / n as f64);
    }
    Ok(profile)
}

/// Per-module diagnostic tables computed from one trace.
#[derive(Debug, Clone)]
pub struct AnalysisTables {
    /// Mean ratio-invariance RSD over all valid anchors, per module.
    pub rsd: Vec<f64>,
    /// Windowed input-to-output linearity, per module.
    pub r2_input: Vec<f64>,
    /// Windowed timestep-to-output linearity, per module.
    pub r2_timestep: Vec<f64>,
    /// Directional consistency of input changes, per module.
    pub consistency_input: Vec<f64>,
    /// Directional consistency of output changes, per module.
    pub consistency_output: Vec<f64>,
    /// Normalized consecutive-distance series per module, input stream.
    pub l2_input: Vec<Vec<f64>>,
    /// Normalized consecutive-distance series per module, output stream.
    pub l2_output: Vec<Vec<f64>>,
}

/// Standard offsets for the ratio-invariance statistic.
pub const RSD_K_MAX: usize = 9;
/// Standard window for the linearity fits.
pub const FIT_WINDOW: usize = 5;
/// Standard offsets for directional consistency.
pub const CONSISTENCY_K_MAX: usize = 4;

/// Computes the full diagnostic set with the standard parameters, shrinking
/// them when the trace is too short.
pub fn analysis_tables(trace: &Trace) -> Result<AnalysisTables> {
    let len = trace.timesteps().len();
    let k_rsd = RSD_K_MAX.min(len.saturating_sub(1)).max(2);
    let window = FIT_WINDOW.min(len).max(3);
    let k_cons = CONSISTENCY_K_MAX.min(len.saturating_sub(1)).max(2);

    let n = trace.n_modules();
    let mut tables = AnalysisTables {
        rsd: Vec::with_capacity(n),
        r2_input: Vec::with_capacity(n),
        r2_timestep: Vec::with_capacity(n),
        consistency_input: Vec::with_capacity(n),
        consistency_output: Vec::with_capacity(n),
        l2_input: Vec::with_capacity(n),
        l2_output: Vec::with_capacity(n),
    };
    for module in 0..n {
        tables.rsd.push(mean_rsd(trace, module, k_rsd)?);
        tables.r2_input.push(linearity_r2(trace, module, window)?);
        tables.r2_timestep.push(timestep_r2(trace, module, window)?);
        tables.consistency_input.push(directional_consistency(
            trace,
            module,
            Stream::Input,
            k_cons,
        )?);
        tables.consistency_output.push(directional_consistency(
            trace,
            module,
            Stream::Output,
            k_cons,
        )?);
        tables
            .l2_input
            .push(consecutive_l2_series(trace, module, Stream::Input)?);
        tables
            .l2_output
            .push(consecutive_l2_series(trace, module, Stream::Output)?);
    }
    Ok(tables)
}

/// Ratio-invariance RSD averaged over every anchor that covers `k_max`
/// consecutive offsets.
pub fn mean_rsd(trace: &Trace, module: usize, k_max: usize) -> Result<f64> {
    let ts = trace.timesteps();
    let mut scores = Vec::new();
    for (i, &t) in ts.iter().enumerate() {
        if i + k_max >= ts.len() {
            break;
        }
        if ts[i + k_max] != t - k_max as i64 {
            continue;
        }
        scores.push(s_ratio_rsd(trace, module, t, k_max)?);
    }
    if scores.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no anchor covers {} consecutive offsets",
            k_max
        )));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
