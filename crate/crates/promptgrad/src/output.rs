//! Files written into a run's output directory.

use std::fs;
use std::path::{Path, PathBuf};

use promptgrad_core::gateway::GatewayStats;
use promptgrad_core::lab::{RateStudy, Trace};
use promptgrad_core::report::RunReport;
use serde::Serialize;

use crate::config::FileConfig;
use crate::error::{Error, Result};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Runtime(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Runtime(format!("{}: {e}", path.display())))?;
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::Runtime(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct IterationRow<'a> {
    iteration: u32,
    base_prompt: &'a str,
    selected_prompt: &'a str,
    gradients: usize,
    conflicts: usize,
    fused: usize,
    candidates_generated: usize,
    candidates_kept: usize,
    probes_spent: u64,
    probe_budget: u64,
    validation_score: Option<f64>,
    best_score: f64,
    gradient_calls: u64,
    fusion_calls: u64,
    apply_calls: u64,
    paraphrase_calls: u64,
    task_calls: u64,
    pool_hash: &'a str,
    failed: bool,
}

/// `config.json`, `report.json`, `summary.txt`, `best_prompt.txt`,
/// `iterations.csv` and `gateway_stats.json` in `dir`. Returns the report
/// path.
pub fn write_run(dir: &Path, config: &FileConfig, report: &RunReport, stats: &GatewayStats) -> Result<PathBuf> {
    ensure_dir(dir)?;
    write_json(&dir.join("config.json"), config)?;
    let report_path = dir.join("report.json");
    write_json(&report_path, report)?;
    write_text(&dir.join("summary.txt"), &report.summary())?;
    let mut best = report.best_prompt.text().to_string();
    best.push('\n');
    write_text(&dir.join("best_prompt.txt"), &best)?;
    let rows: Vec<IterationRow> = report
        .iterations
        .iter()
        .map(|r| IterationRow {
            iteration: r.iteration,
            base_prompt: &r.base_prompt_id,
            selected_prompt: r.selected_prompt_id.as_deref().unwrap_or(""),
            gradients: r.gradients_generated,
            conflicts: r.conflicts,
            fused: r.fused_count,
            candidates_generated: r.candidates_generated,
            candidates_kept: r.candidates_kept,
            probes_spent: r.probes_spent,
            probe_budget: r.probe_budget,
            validation_score: r.validation_score,
            best_score: r.best_score,
            gradient_calls: r.calls.gradient,
            fusion_calls: r.calls.fusion,
            apply_calls: r.calls.apply,
            paraphrase_calls: r.calls.paraphrase,
            task_calls: r.calls.task,
            pool_hash: &r.pool_hash,
            failed: r.failed,
        })
        .collect();
    write_csv(&dir.join("iterations.csv"), &rows)?;
    write_json(&dir.join("gateway_stats.json"), stats)?;
    Ok(report_path)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub setting: String,
    pub initial_score: f64,
    pub best_score: f64,
    pub best_iteration: u32,
    pub iterations_run: usize,
    pub converged_at: Option<u32>,
    pub llm_calls: u64,
    pub probes_spent: u64,
    /// Hash of the candidate pool that entered selection in iteration 1.
    pub first_pool_hash: String,
    pub aborted: bool,
}

impl AblationRow {
    pub fn from_report(setting: &str, report: &RunReport) -> Self {
        Self {
            setting: setting.to_string(),
            initial_score: report.initial_score.value(),
            best_score: report.best_score.value(),
            best_iteration: report.best_iteration,
            iterations_run: report.iterations.len(),
            converged_at: report.converged_at,
            llm_calls: report.total_llm_calls,
            probes_spent: report.iterations.iter().map(|r| r.probes_spent).sum(),
            first_pool_hash: report
                .iterations
                .first()
                .map(|r| r.pool_hash.clone())
                .unwrap_or_default(),
            aborted: report.aborted.is_some(),
        }
    }
}

pub fn ablation_markdown(axis: &str, metric: &str, rows: &[AblationRow]) -> String {
    let mut s = format!(
        "| {axis} | initial {metric} | best {metric} | best iteration | iterations | LLM calls | probes |\n|---|---|---|---|---|---|---|\n"
    );
    for r in rows {
        s.push_str(&format!(
            "| {}{} | {:.4} | {:.4} | {} | {} | {} | {} |\n",
            r.setting,
            if r.aborted { " (aborted)" } else { "" },
            r.initial_score,
            r.best_score,
            r.best_iteration,
            r.iterations_run,
            r.llm_calls,
            r.probes_spent
        ));
    }
    s
}

/// `ablation_<axis>.md` and `ablation_<axis>.csv`.
pub fn write_ablation(dir: &Path, axis: &str, metric: &str, rows: &[AblationRow]) -> Result<()> {
    ensure_dir(dir)?;
    write_text(
        &dir.join(format!("ablation_{axis}.md")),
        &ablation_markdown(axis, metric, rows),
    )?;
    write_csv(&dir.join(format!("ablation_{axis}.csv")), rows)
}

#[derive(Serialize)]
struct TraceRow {
    step: usize,
    value: f64,
    grad_norm_sq: f64,
    dist_to_opt: f64,
}

pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    let rows: Vec<TraceRow> = (0..trace.values.len())
        .map(|t| TraceRow {
            step: t + 1,
            value: trace.values[t],
            grad_norm_sq: trace.grad_norm_sq[t],
            dist_to_opt: trace.dist_to_opt[t],
        })
        .collect();
    write_csv(path, &rows)
}

#[derive(Serialize)]
struct HorizonRow {
    horizon: usize,
    step_size: f64,
    mean_measured: f64,
    mean_regret: f64,
    regret_bound: Option<f64>,
    descent_violations: usize,
    bound_checks: usize,
    bound_failures: usize,
    monotone_runs: usize,
}

/// `lab_<name>.json` (the whole study) and `lab_<name>.csv` (one row per
/// horizon).
pub fn write_study(dir: &Path, name: &str, study: &RateStudy) -> Result<()> {
    ensure_dir(dir)?;
    write_json(&dir.join(format!("lab_{name}.json")), study)?;
    let rows: Vec<HorizonRow> = study
        .horizons
        .iter()
        .map(|h| HorizonRow {
            horizon: h.horizon,
            step_size: h.step_size,
            mean_measured: h.mean_measured,
            mean_regret: h.mean_regret,
            regret_bound: h.regret_bound,
            descent_violations: h.step_violations,
            bound_checks: h.bound_checks,
            bound_failures: h.bound_failures,
            monotone_runs: h.monotone_runs,
        })
        .collect();
    write_csv(&dir.join(format!("lab_{name}.csv")), &rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct PredictionRow {
    pub text: String,
    pub gold: String,
    pub prediction: Option<String>,
    pub correct: bool,
    pub error: Option<String>,
}
