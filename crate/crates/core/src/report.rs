//! Run reports.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;
use serde::{Deserialize, Serialize};

use crate::gateway::parse::AgentRole;
use crate::metrics::Score;
use crate::optimizer::RunConfig;
use crate::prompt::Prompt;

/// Completions requested per pipeline stage, cache hits included.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCalls {
    pub gradient: u64,
    pub fusion: u64,
    pub apply: u64,
    pub paraphrase: u64,
    /// Extra applications spent measuring per-gradient scores.
    pub score_probe: u64,
    pub task: u64,
}

impl StageCalls {
    /// Generation calls, excluding task predictions and score probes.
    pub fn generation(&self) -> u64 {
        self.gradient + self.fusion + self.apply + self.paraphrase
    }

    pub fn total(&self) -> u64 {
        self.generation() + self.score_probe + self.task
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamEntry {
    pub prompt_id: String,
    pub text: String,
    pub mean_reward: f64,
    pub pulls: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub base_prompt_id: String,
    pub gradients_generated: usize,
    pub gradients_per_role: BTreeMap<AgentRole, usize>,
    pub agent_failures: Vec<String>,
    pub diverse_fallbacks: usize,
    pub parse_warnings: usize,
    pub conflicts: usize,
    pub fused_count: usize,
    /// Member count of each cluster, in cluster order.
    pub cluster_sizes: Vec<usize>,
    pub fusion_fallbacks: usize,
    pub coordinator_degraded: bool,
    pub variants_applied: usize,
    pub candidates_generated: usize,
    pub candidates_filtered: usize,
    pub candidates_truncated: usize,
    pub candidates_kept: usize,
    /// Content hash of the candidate pool handed to selection.
    pub pool_hash: String,
    pub beam: Vec<BeamEntry>,
    pub selected_prompt_id: Option<String>,
    pub validation_score: Option<f64>,
    pub best_score: f64,
    /// Dev examples consumed by bandit probes.
    pub probes_spent: u64,
    pub probe_budget: u64,
    /// Predictions made during the iteration (inference, probes, validation).
    pub eval_examples: u64,
    pub unpredictable: usize,
    pub calls: StageCalls,
    pub failures: Vec<String>,
    /// Nothing usable came out of the iteration.
    pub failed: bool,
    pub expansion_degraded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub provider_id: String,
    pub encoder_id: String,
    pub config: RunConfig,
    pub initial_prompt: Prompt,
    pub initial_score: Score,
    pub best_prompt: Prompt,
    pub best_score: Score,
    /// 0 when the initial prompt was never beaten.
    pub best_iteration: u32,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub converged_at: Option<u32>,
    pub total_llm_calls: u64,
    pub total_eval_examples: u64,
    pub aborted: Option<String>,
}

impl RunReport {
    /// Best score after each iteration, starting with the initial score.
    pub fn best_score_history(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.iterations.len() + 1);
        out.push(self.initial_score.value());
        out.extend(self.iterations.iter().map(|r| r.best_score));
        out
    }

    /// Plain-text summary for terminals and logs.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let metric = self.best_score.metric_name();
        let _ = writeln!(s, "provider: {}  encoder: {}", self.provider_id, self.encoder_id);
        let _ = writeln!(
            s,
            "initial {metric}: {:.4}  best {metric}: {:.4} (iteration {})",
            self.initial_score.value(),
            self.best_score.value(),
            self.best_iteration
        );
        let _ = writeln!(
            s,
            "iterations run: {}  converged: {}  llm calls: {}  eval examples: {}",
            self.iterations.len(),
            match self.converged_at {
                Some(t) => format!("yes (iteration {t})"),
                None => String::from("no"),
            },
            self.total_llm_calls,
            self.total_eval_examples
        );
        if let Some(cause) = &self.aborted {
            let _ = writeln!(s, "aborted: {cause}");
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "iter  grads  fused  cands  probes  val      best");
        for r in &self.iterations {
            let val = r
                .validation_score
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| String::from("-"));
            let _ = writeln!(
                s,
                "{:>4}  {:>5}  {:>5}  {:>5}  {:>6}  {:<7}  {:.4}{}",
                r.iteration,
                r.gradients_generated,
                r.fused_count,
                r.candidates_kept,
                r.probes_spent,
                val,
                r.best_score,
                if r.failed { "  (failed)" } else { "" }
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "best prompt ({}):", self.best_prompt.id());
        let _ = writeln!(s, "{}", self.best_prompt.text());
        s
    }
}
