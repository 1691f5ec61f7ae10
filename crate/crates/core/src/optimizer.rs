//! The outer optimization loop.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::Cell;
use serde::{Deserialize, Serialize};

use crate::agents::{
    generate_agent_gradients, synchronize_agents, AgentSpec, GradientContext, GradientSet, DEFAULT_ERROR_CAP,
    DEFAULT_FEEDBACK_COUNT, DEFAULT_GRADIENT_TEMPERATURE,
};
use crate::coordinator::{coordinate_and_fuse, CoordinatorConfig, FusedGradient};
use crate::embedding::Encoder;
use crate::error::{invalid, Error, Result};
use crate::expansion::{apply_gradient, expand_prompts, ExpansionConfig};
use crate::gateway::parse::AgentRole;
use crate::gateway::template::ids;
use crate::gateway::{Completer, GatewayStats};
use crate::hash::{derive_seed, ContentHash};
use crate::metrics::{Metric, Score};
use crate::prompt::{CandidatePrompt, LabeledExample, Prompt, PromptRegistry};
use crate::report::{BeamEntry, IterationRecord, RunReport, StageCalls};
use crate::selection::{
    bandit_select, estimate_reward, monte_carlo_select, SearchMode, Selection, SelectionBudget, Strategy,
};
use crate::tasks::{evaluate_prompt, sample_minibatch, Predictor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSettings {
    pub roles: Vec<AgentRole>,
    pub error_cap: usize,
    pub feedback_count: usize,
    pub temperature: f64,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            roles: AgentRole::ALL.to_vec(),
            error_cap: DEFAULT_ERROR_CAP,
            feedback_count: DEFAULT_FEEDBACK_COUNT,
            temperature: DEFAULT_GRADIENT_TEMPERATURE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub strategy: Strategy,
    pub rounds: usize,
    pub minibatch_size: usize,
    pub beam_width: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        let b = SelectionBudget::default();
        Self {
            strategy: Strategy::Ucb1,
            rounds: b.rounds,
            minibatch_size: b.minibatch_size,
            beam_width: b.beam_width,
        }
    }
}

impl SelectionConfig {
    pub fn budget(&self) -> SelectionBudget {
        SelectionBudget {
            rounds: self.rounds,
            minibatch_size: self.minibatch_size,
            beam_width: self.beam_width,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub iterations: u32,
    /// Training examples shown to the agents per iteration.
    pub train_minibatch_size: usize,
    pub seed: u64,
    pub agents: AgentSettings,
    pub coordinator: CoordinatorConfig,
    pub expansion: ExpansionConfig,
    pub selection: SelectionConfig,
    pub search_mode: SearchMode,
    pub patience: usize,
    pub epsilon: f64,
    /// Score each raw gradient with a one-rewrite probe to weight fusion.
    pub probe_gradient_scores: bool,
    pub metric: Metric,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            train_minibatch_size: 16,
            seed: 0,
            agents: AgentSettings::default(),
            coordinator: CoordinatorConfig::default(),
            expansion: ExpansionConfig::default(),
            selection: SelectionConfig::default(),
            search_mode: SearchMode::Beam,
            patience: 3,
            epsilon: 1e-4,
            probe_gradient_scores: false,
            metric: Metric::Accuracy,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("iterations must be at least 1"));
        }
        if self.train_minibatch_size == 0 {
            return Err(invalid("train_minibatch_size must be positive"));
        }
        if self.agents.roles.is_empty() {
            return Err(invalid("at least one agent role is required"));
        }
        let mut roles = self.agents.roles.clone();
        roles.sort();
        roles.dedup();
        if roles.len() != self.agents.roles.len() {
            return Err(invalid("agent roles must be unique"));
        }
        if self.agents.error_cap == 0 || self.agents.feedback_count == 0 {
            return Err(invalid("error_cap and feedback_count must be positive"));
        }
        if self.patience == 0 {
            return Err(invalid("patience must be at least 1"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon must be a nonnegative number"));
        }
        self.coordinator.validate()?;
        self.expansion.validate()?;
        self.selection.budget().validate()
    }
}

/// True when the running best has improved by less than `epsilon` over
/// each of the last `patience` steps.
pub fn converged(history: &[f64], patience: usize, epsilon: f64) -> bool {
    if patience == 0 || history.len() <= patience {
        return false;
    }
    let mut best = Vec::with_capacity(history.len());
    let mut m = f64::NEG_INFINITY;
    for &h in history {
        m = m.max(h);
        best.push(m);
    }
    best.windows(2).rev().take(patience).all(|w| w[1] - w[0] < epsilon)
}

/// External services the loop talks to.
pub struct Services<'a> {
    pub completer: &'a dyn Completer,
    pub encoder: &'a dyn Encoder,
    pub predictor: &'a dyn Predictor,
    /// Recorded in the report.
    pub provider_id: &'a str,
}

#[derive(Debug)]
pub enum RunError {
    /// The run could not start.
    Setup(Error),
    /// The run stopped early; the report covers the iterations completed.
    Aborted { report: Box<RunReport>, cause: Error },
}

impl core::fmt::Display for RunError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            RunError::Setup(e) => write!(f, "run setup failed: {e}"),
            RunError::Aborted { cause, report } => {
                write!(f, "run aborted after {} iterations: {cause}", report.iterations.len())
            }
        }
    }
}

impl core::error::Error for RunError {}

struct Counting<'a> {
    inner: &'a dyn Predictor,
    count: Cell<u64>,
}

impl Predictor for Counting<'_> {
    fn predict(&self, prompt: &str, example: &LabeledExample) -> Result<String> {
        self.count.set(self.count.get() + 1);
        self.inner.predict(prompt, example)
    }
}

fn stage_calls(delta: &GatewayStats, score_probe: u64) -> StageCalls {
    StageCalls {
        gradient: delta.requested_matching(|id| AgentRole::from_template_id(id).is_some()),
        fusion: delta.requested_for(ids::FUSE),
        apply: delta.requested_for(ids::APPLY) - score_probe,
        paraphrase: delta.requested_for(ids::PARAPHRASE),
        score_probe,
        task: delta.requested_for(ids::TASK),
    }
}

fn pool_hash(candidates: &[CandidatePrompt]) -> String {
    format!(
        "{}",
        ContentHash::of_fields(candidates.iter().map(|c| c.text().as_bytes()))
    )
}

/// Score each flattened gradient by the reward change of a single rewrite on
/// a dev minibatch.
fn probe_scores(
    base: &Prompt,
    gradients: &GradientSet,
    iteration: u32,
    config: &RunConfig,
    dev: &[LabeledExample],
    services: &Services<'_>,
    registry: &mut PromptRegistry,
    seed: u64,
) -> Result<BTreeMap<usize, f64>> {
    let b = config.selection.minibatch_size.min(dev.len());
    let batch = sample_minibatch(dev, b, derive_seed(seed, "score-probe", 0))?;
    let base_reward = estimate_reward(base.text(), &batch, services.predictor)?.reward;
    let mut scores = BTreeMap::new();
    for (i, block) in gradients.flatten().into_iter().enumerate() {
        let single = FusedGradient {
            text: block,
            member_indices: alloc::vec![i],
            member_weights: alloc::vec![1.0],
            cluster_id: i,
            fused: false,
        };
        let generated = apply_gradient(
            base,
            &single,
            1,
            iteration,
            config.expansion.apply_temperature,
            services.completer,
            registry,
        )?;
        if let Some(c) = generated.candidates.first() {
            if let Ok(r) = estimate_reward(c.text(), &batch, services.predictor) {
                scores.insert(i, r.reward - base_reward);
            }
        }
    }
    Ok(scores)
}

struct IterationOutcome {
    record: IterationRecord,
    selected: Option<(Prompt, Score)>,
}

#[allow(clippy::too_many_arguments)]
fn run_iteration(
    t: u32,
    base: &Prompt,
    agents: &[AgentSpec],
    config: &RunConfig,
    train: &[LabeledExample],
    dev: &[LabeledExample],
    services: &Services<'_>,
    registry: &mut PromptRegistry,
    best_so_far: f64,
) -> IterationOutcome {
    let seed = derive_seed(config.seed, "iteration", t as u64);
    let before = services.completer.stats();
    let mut record = IterationRecord {
        iteration: t,
        base_prompt_id: base.id().to_string(),
        gradients_generated: 0,
        gradients_per_role: BTreeMap::new(),
        agent_failures: Vec::new(),
        diverse_fallbacks: 0,
        parse_warnings: 0,
        conflicts: 0,
        fused_count: 0,
        cluster_sizes: Vec::new(),
        fusion_fallbacks: 0,
        coordinator_degraded: false,
        variants_applied: 0,
        candidates_generated: 0,
        candidates_filtered: 0,
        candidates_truncated: 0,
        candidates_kept: 0,
        pool_hash: String::new(),
        beam: Vec::new(),
        selected_prompt_id: None,
        validation_score: None,
        best_score: best_so_far,
        probes_spent: 0,
        probe_budget: config.selection.budget().total_probes(),
        eval_examples: 0,
        unpredictable: 0,
        calls: StageCalls::default(),
        failures: Vec::new(),
        failed: false,
        expansion_degraded: false,
    };
    let mut score_probe_calls = 0;
    let mut selected = None;
    let result = (|| -> Result<()> {
        let minibatch = sample_minibatch(
            train,
            config.train_minibatch_size.min(train.len()),
            derive_seed(seed, "minibatch", 0),
        )?;
        let ctx = GradientContext {
            iteration: t,
            seed,
            temperature: config.agents.temperature,
        };
        let gradients = generate_agent_gradients(
            agents,
            &minibatch,
            services.predictor,
            services.completer,
            services.encoder,
            &ctx,
        )?;
        record.gradients_generated = gradients.len();
        record.gradients_per_role = gradients.entries.iter().map(|(r, v)| (*r, v.len())).collect();
        record.agent_failures = gradients
            .failures
            .iter()
            .map(|f| format!("{}: {}", f.role, f.message))
            .collect();
        record.diverse_fallbacks = gradients.fallback_count;
        record.parse_warnings = gradients.parse_warnings;
        record.unpredictable += gradients.unpredictable;

        let scores = if config.probe_gradient_scores {
            let apply_before = services.completer.stats().requested_for(ids::APPLY);
            let s = probe_scores(base, &gradients, t, config, dev, services, registry, seed)?;
            score_probe_calls = services.completer.stats().requested_for(ids::APPLY) - apply_before;
            Some(s)
        } else {
            None
        };
        let mut coord_config = config.coordinator.clone();
        coord_config.seed = derive_seed(config.coordinator.seed, "kmeans", t as u64);
        let coordination = coordinate_and_fuse(
            &gradients,
            &coord_config,
            scores.as_ref(),
            services.completer,
            services.encoder,
        )?;
        record.conflicts = coordination.conflicts.len();
        record.fused_count = coordination.fused.len();
        record.cluster_sizes = coordination.fused.iter().map(|f| f.member_indices.len()).collect();
        record.fusion_fallbacks = coordination.fusion_fallbacks;
        record.coordinator_degraded = coordination.degraded;

        let expansion = expand_prompts(
            base,
            &coordination.fused,
            &config.expansion,
            t,
            services.completer,
            services.encoder,
            registry,
        )?;
        record.variants_applied = expansion.applied;
        record.candidates_generated = expansion.generated;
        record.candidates_filtered = expansion.filtered_out;
        record.candidates_truncated = expansion.truncated;
        record.candidates_kept = expansion.candidates.len();
        record.pool_hash = pool_hash(&expansion.candidates);
        record.failures.extend(expansion.failures.iter().cloned());
        if expansion.degraded {
            record.expansion_degraded = true;
            return Err(Error::Iteration("expansion produced no candidates".into()));
        }

        let budget = config.selection.budget();
        let select_seed = derive_seed(seed, "select", 0);
        let selection: Selection = match config.search_mode {
            SearchMode::Beam => bandit_select(
                &expansion.candidates,
                dev,
                &budget,
                config.selection.strategy,
                select_seed,
                services.predictor,
            )?,
            SearchMode::MonteCarlo => {
                monte_carlo_select(&expansion.candidates, dev, &budget, select_seed, services.predictor)?
            }
        };
        record.probes_spent = selection.run.state.probes();
        record.unpredictable += selection.unpredictable;
        record.beam = selection
            .run
            .beam
            .iter()
            .map(|&i| {
                let c = &expansion.candidates[i];
                let arm = &selection.run.state.arms[i];
                BeamEntry {
                    prompt_id: c.id().to_string(),
                    text: c.text().to_string(),
                    mean_reward: arm.mean().unwrap_or(0.0),
                    pulls: arm.pulls,
                }
            })
            .collect();
        let best = selection.best(&expansion.candidates).prompt.clone();
        let validation = evaluate_prompt(services.predictor, best.text(), dev, &config.metric)?;
        record.unpredictable += validation.unpredictable;
        record.selected_prompt_id = Some(best.id().to_string());
        record.validation_score = Some(validation.score.value());
        selected = Some((best, validation.score));
        Ok(())
    })();
    if let Err(e) = result {
        record.failed = true;
        record.failures.push(format!("{e}"));
    }
    let delta = services.completer.stats().since(&before);
    record.calls = stage_calls(&delta, score_probe_calls);
    IterationOutcome { record, selected }
}

/// Run the optimization loop from `initial_prompt`.
///
/// Each iteration samples a training minibatch, collects agent gradients on
/// the current prompt, fuses them, expands candidates, and selects the next
/// prompt on the dev set. The returned best prompt is the highest full-dev
/// score among the initial prompt and every selected prompt.
pub fn run(
    config: &RunConfig,
    initial_prompt: &str,
    train: &[LabeledExample],
    dev: &[LabeledExample],
    services: &Services<'_>,
) -> core::result::Result<RunReport, RunError> {
    config.validate().map_err(RunError::Setup)?;
    if train.is_empty() || dev.is_empty() {
        return Err(RunError::Setup(invalid("train and dev sets must be nonempty")));
    }
    if config.selection.minibatch_size > dev.len() {
        return Err(RunError::Setup(invalid(format!(
            "probe minibatch size {} exceeds dev set size {}",
            config.selection.minibatch_size,
            dev.len()
        ))));
    }
    let counting = Counting {
        inner: services.predictor,
        count: Cell::new(0),
    };
    let services = Services {
        completer: services.completer,
        encoder: services.encoder,
        predictor: &counting,
        provider_id: services.provider_id,
    };
    let start_stats = services.completer.stats();
    let mut registry = PromptRegistry::new();
    let p0 = registry
        .root(initial_prompt, "initial prompt")
        .map_err(RunError::Setup)?;
    let initial = evaluate_prompt(services.predictor, p0.text(), dev, &config.metric).map_err(RunError::Setup)?;

    let mut agents: Vec<AgentSpec> = config
        .agents
        .roles
        .iter()
        .map(|&r| AgentSpec::new(r, p0.text(), config.agents.error_cap, config.agents.feedback_count))
        .collect::<Result<_>>()
        .map_err(RunError::Setup)?;

    let mut report = RunReport {
        provider_id: services.provider_id.to_string(),
        encoder_id: services.encoder.id().to_string(),
        config: config.clone(),
        initial_prompt: p0.clone(),
        initial_score: initial.score.clone(),
        best_prompt: p0.clone(),
        best_score: initial.score.clone(),
        best_iteration: 0,
        iterations: Vec::new(),
        converged: false,
        converged_at: None,
        total_llm_calls: 0,
        total_eval_examples: 0,
        aborted: None,
    };
    let mut base = p0;
    let mut history = alloc::vec![initial.score.value()];
    let mut consecutive_failures = 0;
    let mut abort: Option<Error> = None;

    for t in 1..=config.iterations {
        let evals_before = counting.count.get();
        let outcome = run_iteration(
            t,
            &base,
            &agents,
            config,
            train,
            dev,
            &services,
            &mut registry,
            report.best_score.value(),
        );
        let mut record = outcome.record;
        record.eval_examples = counting.count.get() - evals_before;
        if let Some((prompt, score)) = outcome.selected {
            consecutive_failures = 0;
            if score.value() > report.best_score.value() {
                report.best_prompt = prompt.clone();
                report.best_score = score;
                report.best_iteration = t;
            }
            record.best_score = report.best_score.value();
            synchronize_agents(&mut agents, prompt.text());
            base = prompt;
        } else {
            consecutive_failures += 1;
        }
        let failed = record.failed;
        let cause = record.failures.last().cloned();
        report.iterations.push(record);
        history.push(report.best_score.value());
        if failed && consecutive_failures >= 2 {
            abort = Some(Error::Iteration(format!(
                "two consecutive iterations failed; last: {}",
                cause.unwrap_or_default()
            )));
            break;
        }
        if report.best_score.value() >= 1.0 || converged(&history, config.patience, config.epsilon) {
            report.converged = true;
            report.converged_at = Some(t);
            break;
        }
    }

    let delta = services.completer.stats().since(&start_stats);
    report.total_llm_calls = delta.total_requested();
    report.total_eval_examples = counting.count.get();
    match abort {
        Some(cause) => {
            report.aborted = Some(format!("{cause}"));
            Err(RunError::Aborted {
                report: Box::new(report),
                cause,
            })
        }
        None => Ok(report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_rule_examples() {
        assert!(converged(&[0.5, 0.5, 0.5], 2, 1e-6));
        assert!(!converged(&[0.1, 0.2, 0.3, 0.4], 2, 1e-3));
        assert!(converged(&[0.5, 0.5004, 0.5006], 2, 1e-3));
        assert!(!converged(&[0.5, 0.5], 2, 1e-3));
        // A drop does not reset the running best.
        assert!(converged(&[0.6, 0.4, 0.5], 2, 1e-3));
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        let mut c = RunConfig::default();
        c.iterations = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.agents.roles = alloc::vec![AgentRole::Style, AgentRole::Style];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.expansion.diversity_margin = 1.0;
        assert!(c.validate().is_err());
    }
}
