//! Deterministic file writers: metrics CSV, JSON summaries, comparison and
//! analysis tables. Nothing time-dependent goes into a file; wall-clock
//! readings are printed to stdout only.

use std::fs;
use std::path::Path;

use forecache_core::{Error, Result, StepAction, StepMetrics};
use serde_json::json;

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

fn action_name(action: StepAction) -> &'static str {
    match action {
        StepAction::FullCompute => "full",
        StepAction::Predict => "predict",
    }
}

/// One row per step: `t,decision,trigger_value,eps_in,eps_out_mean`.
pub fn write_metrics_csv(path: &Path, steps: &[StepMetrics]) -> Result<()> {
    let mut text = String::from("t,decision,trigger_value,eps_in,eps_out_mean\n");
    for s in steps {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            s.t,
            action_name(s.action),
            s.trigger_value,
            fmt_opt(s.eps_in),
            fmt_opt(s.eps_out_mean),
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Run summary: identifies the experiment and carries the scheduler
/// aggregates plus mean errors.
pub struct RunSummary<'a> {
    pub policy: &'a str,
    pub scheduler: &'a str,
    pub seed: u64,
    pub nfc: usize,
    pub full_compute_log: &'a [i64],
    pub mean_eps_in: Option<f64>,
    pub mean_eps_out: Option<f64>,
}

pub fn write_run_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    let value = json!({
        "policy": summary.policy,
        "scheduler": summary.scheduler,
        "seed": summary.seed,
        "nfc": summary.nfc,
        "full_compute_log": summary.full_compute_log,
        "mean_eps_in": summary.mean_eps_in,
        "mean_eps_out": summary.mean_eps_out,
    });
    write_json(path, &value)
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Final latent dump for exact comparison between runs.
pub fn write_latent(path: &Path, data: &[f64]) -> Result<()> {
    write_json(path, &json!({ "final_latent": data }))
}

/// One comparison row.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub policy: String,
    pub scheduler: String,
    pub nfc_mean: f64,
    pub mean_eps_out: Option<f64>,
    pub mean_eps_in: Option<f64>,
    pub wall_secs: f64,
}

/// Quotes a field when it embeds a comma or quote, per the usual CSV rules.
fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes the on-disk table; wall-clock stays out of the file so outputs
/// are byte-reproducible.
pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut text = String::from("policy,scheduler,nfc_mean,mean_eps_out,mean_eps_in\n");
    for row in rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(&row.policy),
            csv_field(&row.scheduler),
            row.nfc_mean,
            fmt_opt(row.mean_eps_out),
            fmt_opt(row.mean_eps_in),
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn print_comparison(rows: &[ComparisonRow]) {
    println!(
        "{:<14} {:<24} {:>8} {:>14} {:>14} {:>10}",
        "policy", "scheduler", "nfc", "mean_eps_out", "mean_eps_in", "wall_s"
    );
    for row in rows {
        println!(
            "{:<14} {:<24} {:>8.2} {:>14} {:>14} {:>10.3}",
            row.policy,
            row.scheduler,
            row.nfc_mean,
            row.mean_eps_out
                .map(|v| format!("{:.6e}", v))
                .unwrap_or_else(|| "-".into()),
            row.mean_eps_in
                .map(|v| format!("{:.6e}", v))
                .unwrap_or_else(|| "-".into()),
            row.wall_secs,
        );
    }
}

/// Per-τ sweep table: `tau,nfc_mean,mean_eps_out,mean_eps_in`.
pub fn write_sweep_csv(path: &Path, rows: &[(f64, f64, Option<f64>, Option<f64>)]) -> Result<()> {
    let mut text = String::from("tau,nfc_mean,mean_eps_out,mean_eps_in\n");
    for (tau, nfc, eps_out, eps_in) in rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            tau,
            nfc,
            fmt_opt(*eps_out),
            fmt_opt(*eps_in),
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Plot-ready per-module distance series: one row per (module, index).
pub fn write_l2_series_csv(
    path: &Path,
    l2_input: &[Vec<f64>],
    l2_output: &[Vec<f64>],
) -> Result<()> {
    let mut text = String::from("module,index,l2_input,l2_output\n");
    for (module, (ins, outs)) in l2_input.iter().zip(l2_output).enumerate() {
        for (index, (a, b)) in ins.iter().zip(outs).enumerate() {
            text.push_str(&format!("{},{},{},{}\n", module, index, a, b));
        }
    }
    fs::write(path, text)?;
    Ok(())
}
