//! A deterministic provider for offline runs and tests.
//!
//! Every completion is a pure function of `(seed, template id, bindings,
//! sample index)`. The mock recognises the built-in template ids:
//!
//! * `gradient_<role>`: role-tagged canned reasons in the fenced block
//!   format, chosen by a hash of the error examples;
//! * `fuse`: one block built from the `lead_reason` / `lead_edit` bindings;
//! * `apply`: the base prompt with a bracketed `[edit: ...]` marker;
//! * `paraphrase`: the prompt with a `[paraphrase N: tag]` suffix;
//! * `task`: an answer whose last line is a label (see [`MockTask`]).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use super::parse::{format_block, AgentRole};
use super::template::ids;
use super::{Provider, ProviderCall, ProviderError};
use crate::hash::ContentHash;
use crate::metrics::normalize_label;

/// How the mock answers `task` requests.
#[derive(Clone, Debug, PartialEq)]
pub enum MockTask {
    /// Fixed answers per input. Inputs not listed get `fallback`, or a label
    /// picked by hash when there is none.
    Scripted {
        answers: BTreeMap<String, String>,
        fallback: Option<String>,
    },
    /// A model whose accuracy depends on the prompt.
    Simulated(SimulatedTask),
}

impl Default for MockTask {
    fn default() -> Self {
        MockTask::Scripted {
            answers: BTreeMap::new(),
            fallback: None,
        }
    }
}

impl MockTask {
    /// Always answer with the gold label.
    pub fn echo<'a>(examples: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        MockTask::Scripted {
            answers: examples
                .into_iter()
                .map(|(i, g)| (i.to_string(), g.to_string()))
                .collect(),
            fallback: None,
        }
    }
}

/// Simulated task model: each applied `[edit` marker in the prompt raises
/// accuracy by `gain_per_edit`, capped at `max_accuracy`, plus a per-prompt
/// jitter in `[-jitter/2, jitter/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedTask {
    pub gold: BTreeMap<String, String>,
    pub base_accuracy: f64,
    pub gain_per_edit: f64,
    pub max_accuracy: f64,
    pub jitter: f64,
}

impl SimulatedTask {
    pub fn new<'a>(examples: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self {
            gold: examples
                .into_iter()
                .map(|(i, g)| (i.to_string(), g.to_string()))
                .collect(),
            base_accuracy: 0.55,
            gain_per_edit: 0.06,
            max_accuracy: 0.95,
            jitter: 0.1,
        }
    }

    pub fn accuracy_for(&self, seed: u64, prompt: &str) -> f64 {
        let edits = prompt.matches("[edit").count() as f64;
        let jitter = (unit(seed, &["jitter", prompt]) - 0.5) * self.jitter;
        (self.base_accuracy + self.gain_per_edit * edits + jitter).clamp(0.0, self.max_accuracy)
    }
}

fn unit(seed: u64, parts: &[&str]) -> f64 {
    hash_parts(seed, parts).as_unit()
}

fn hash_parts(seed: u64, parts: &[&str]) -> ContentHash {
    let seed = seed.to_le_bytes();
    ContentHash::of_fields(core::iter::once(&seed[..]).chain(parts.iter().map(|p| p.as_bytes())))
}

const CLARITY: &[(&str, &str)] = &[
    (
        "The instruction never states the criterion that separates the labels, so borderline inputs are decided by guesswork.",
        "State the deciding criterion for each label in one explicit sentence.",
    ),
    (
        "Key terms in the task description are left undefined, and the model reads them more broadly than intended.",
        "Define the central terms of the task before asking for a decision.",
    ),
    (
        "The task scope is ambiguous about whether partial matches count, which flips several predictions.",
        "Say explicitly how partially matching inputs must be labelled.",
    ),
    (
        "The instruction mixes the goal with background information, hiding what decision is actually required.",
        "Move the decision request to the first line and keep background after it.",
    ),
    (
        "Negated or sarcastic inputs are not addressed, so the literal wording drives the label.",
        "Instruct the model to judge the intended meaning rather than the surface wording.",
    ),
    (
        "The prompt does not say what to do when evidence is insufficient.",
        "Add a rule for inputs that do not contain enough evidence.",
    ),
];

const EXAMPLES: &[(&str, &str)] = &[
    (
        "There are no demonstrations of the hard cases that were misclassified.",
        "Add two short demonstrations that mirror the misclassified inputs.",
    ),
    (
        "The only demonstration is an easy positive case, which biases predictions toward that label.",
        "Balance the demonstrations with one example per label.",
    ),
    (
        "Demonstrations appear after the instruction and are easy to skip.",
        "Place the demonstrations immediately before the input to classify.",
    ),
    (
        "Demonstrations lack a short justification, so the model copies the label without the reasoning.",
        "Give each demonstration a one-line justification before its label.",
    ),
    (
        "No demonstration contains the ambiguous phrasing that appears in the failures.",
        "Include a demonstration with ambiguous phrasing and its correct label.",
    ),
    (
        "The demonstrations are long and dilute the instruction.",
        "Shorten each demonstration to a single sentence of input and its label.",
    ),
];

const FORMAT: &[(&str, &str)] = &[
    (
        "The prompt does not require the label on its own final line, so answers are buried in prose.",
        "Require the final line to contain only the label.",
    ),
    (
        "The allowed labels are not listed verbatim, and the model invents near-synonyms.",
        "List the allowed labels verbatim and forbid any other wording.",
    ),
    (
        "Answers sometimes include several labels when the model hedges.",
        "Demand exactly one label and no hedging in the answer line.",
    ),
    (
        "The expected structure of the reply is never described.",
        "Describe the reply structure: brief reasoning, then the label line.",
    ),
    (
        "Capitalisation of labels is inconsistent across answers.",
        "Ask for labels in exactly the capitalisation shown in the list.",
    ),
    (
        "Long explanations push the answer past the token limit.",
        "Limit the reasoning to two sentences before the label.",
    ),
];

const STYLE: &[(&str, &str)] = &[
    (
        "The tone is conversational, which invites chatty and uncertain answers.",
        "Use a concise, neutral, professional register.",
    ),
    (
        "The prompt is verbose and repeats itself, diluting the important constraints.",
        "Remove repeated sentences and keep each constraint once.",
    ),
    (
        "No persona is set, so the model answers as a generic assistant rather than an expert reviewer.",
        "Open with a one-line expert persona suited to the task.",
    ),
    (
        "Hedging language in the prompt encourages hedged answers.",
        "Replace tentative phrasing with direct imperative sentences.",
    ),
    (
        "The register shifts between formal and casual phrasing mid-prompt.",
        "Keep one consistent formal register throughout.",
    ),
    (
        "Emphasis markers are overused, so none of them stand out.",
        "Reserve emphasis for the single most important rule.",
    ),
];

fn role_pool(role: AgentRole) -> &'static [(&'static str, &'static str)] {
    match role {
        AgentRole::Clarity => CLARITY,
        AgentRole::Examples => EXAMPLES,
        AgentRole::Format => FORMAT,
        AgentRole::Style => STYLE,
    }
}

#[derive(Debug)]
pub struct MockProvider {
    id: String,
    seed: u64,
    task: MockTask,
    failing_templates: BTreeSet<String>,
    malformed_templates: BTreeSet<String>,
    failing_inputs: BTreeSet<String>,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn new(seed: u64) -> Self {
        Self {
            id: format!("mock:{seed}"),
            seed,
            task: MockTask::default(),
            failing_templates: BTreeSet::new(),
            malformed_templates: BTreeSet::new(),
            failing_inputs: BTreeSet::new(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_task(mut self, task: MockTask) -> Self {
        self.task = task;
        self
    }

    /// Every call to `template_id` fails with a transport error.
    pub fn fail_template(mut self, template_id: &str) -> Self {
        self.failing_templates.insert(template_id.to_string());
        self
    }

    /// Every call to `template_id` returns an unusable body.
    pub fn malformed_template(mut self, template_id: &str) -> Self {
        self.malformed_templates.insert(template_id.to_string());
        self
    }

    /// `task` calls for this input fail with a transport error.
    pub fn fail_input(mut self, input: &str) -> Self {
        self.failing_inputs.insert(input.to_string());
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn task(&self) -> &MockTask {
        &self.task
    }

    /// Provider invocations so far (cache hits never reach the provider).
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn binding<'a>(call: &'a ProviderCall<'_>, name: &str) -> &'a str {
        call.bindings.get(name).map(String::as_str).unwrap_or("")
    }

    fn gradient(&self, role: AgentRole, call: &ProviderCall<'_>) -> String {
        let m: usize = Self::binding(call, "feedback_count").trim().parse().unwrap_or(1).max(1);
        let pool = role_pool(role);
        let sample = format!("{}", call.sample_index);
        let start = hash_parts(self.seed, &[call.template_id, Self::binding(call, "examples"), &sample]).as_u64()
            as usize
            % pool.len();
        let mut out = format!("Suggestions for the {} dimension:\n\n", role.as_str());
        for j in 0..m {
            let (reason, edit) = pool[(start + j) % pool.len()];
            out.push_str(&format_block(reason, edit));
            out.push_str("\n\n");
        }
        out
    }

    fn fuse(&self, call: &ProviderCall<'_>) -> String {
        let n = Self::binding(call, "member_count");
        format_block(
            &format!(
                "Combined direction from {n} related suggestions: {}",
                Self::binding(call, "lead_reason")
            ),
            Self::binding(call, "lead_edit"),
        )
    }

    fn apply(&self, call: &ProviderCall<'_>) -> String {
        let prompt = Self::binding(call, "prompt").trim();
        let edit = Self::binding(call, "edit").trim();
        if call.sample_index == 0 {
            format!("{prompt}\n[edit: {edit}]")
        } else {
            format!("{prompt}\n[edit v{}: {edit}]", call.sample_index + 1)
        }
    }

    fn paraphrase(&self, call: &ProviderCall<'_>) -> String {
        let prompt = Self::binding(call, "prompt").trim();
        let sample = format!("{}", call.sample_index);
        let tag = hash_parts(self.seed, &["paraphrase", prompt, &sample]).as_u64() & 0xffff_ffff;
        format!("{prompt}\n[paraphrase {}: {tag:08x}]", call.sample_index + 1)
    }

    fn task_answer(&self, call: &ProviderCall<'_>) -> String {
        let input = Self::binding(call, "input");
        let prompt = Self::binding(call, "prompt");
        let labels: Vec<&str> = Self::binding(call, "labels")
            .split(',')
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let hashed_label = || {
            if labels.is_empty() {
                "unknown".to_string()
            } else {
                let i = hash_parts(self.seed, &["label", prompt, input]).as_u64() as usize;
                labels[i % labels.len()].to_string()
            }
        };
        let answer = match &self.task {
            MockTask::Scripted { answers, fallback } => answers
                .get(input)
                .or(fallback.as_ref())
                .cloned()
                .unwrap_or_else(hashed_label),
            MockTask::Simulated(sim) => match sim.gold.get(input) {
                Some(gold) => {
                    let acc = sim.accuracy_for(self.seed, prompt);
                    if unit(self.seed, &["correct", prompt, input]) < acc {
                        gold.clone()
                    } else {
                        let g = normalize_label(gold);
                        labels
                            .iter()
                            .find(|l| normalize_label(l) != g)
                            .map(|l| l.to_string())
                            .unwrap_or_else(|| "unknown".to_string())
                    }
                }
                None => hashed_label(),
            },
        };
        format!("Considering the input against the instructions.\nAnswer:\n{answer}")
    }
}

impl Provider for MockProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, call: &ProviderCall<'_>) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if self.failing_templates.contains(call.template_id) {
            return Err(ProviderError::Transport(format!(
                "injected failure for {}",
                call.template_id
            )));
        }
        if self.malformed_templates.contains(call.template_id) {
            return Err(ProviderError::Malformed(format!(
                "injected malformed body for {}",
                call.template_id
            )));
        }
        if call.template_id == ids::TASK && self.failing_inputs.contains(Self::binding(call, "input")) {
            return Err(ProviderError::Transport("injected input failure".to_string()));
        }
        let text = if let Some(role) = AgentRole::from_template_id(call.template_id) {
            self.gradient(role, call)
        } else {
            match call.template_id {
                ids::FUSE => self.fuse(call),
                ids::APPLY => self.apply(call),
                ids::PARAPHRASE => self.paraphrase(call),
                ids::TASK => self.task_answer(call),
                other => {
                    let sample = format!("{}", call.sample_index);
                    format!(
                        "mock {} {}",
                        other,
                        hash_parts(self.seed, &[other, call.rendered, &sample])
                    )
                }
            }
        };
        Ok(text)
    }
}
