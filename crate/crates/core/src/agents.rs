//! Role-specialized agents that turn minibatch errors into textual gradients.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{embed_batch, normalize, Encoder};
use crate::error::{invalid, Error, Result};
use crate::gateway::parse::{parse_gradient_blocks, AgentRole, GradientBlock};
use crate::gateway::{Completer, CompletionRequest};
use crate::hash::derive_seed;
use crate::math::dist_sq;
use crate::metrics::labels_match;
use crate::prompt::LabeledExample;
use crate::tasks::Predictor;

pub const DEFAULT_ERROR_CAP: usize = 4;
pub const DEFAULT_FEEDBACK_COUNT: usize = 4;
pub const DEFAULT_GRADIENT_TEMPERATURE: f64 = 0.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub role: AgentRole,
    pub current_prompt: String,
    /// Most errors shown to the agent (e).
    pub error_cap: usize,
    /// Most gradient blocks kept from the agent (m).
    pub feedback_count: usize,
}

impl AgentSpec {
    pub fn new(role: AgentRole, prompt: &str, error_cap: usize, feedback_count: usize) -> Result<Self> {
        if error_cap == 0 || feedback_count == 0 {
            return Err(invalid("error_cap and feedback_count must be positive"));
        }
        Ok(Self {
            role,
            current_prompt: prompt.to_string(),
            error_cap,
            feedback_count,
        })
    }

    /// One agent per role, all starting from `prompt`.
    pub fn team(prompt: &str, error_cap: usize, feedback_count: usize) -> Result<Vec<Self>> {
        AgentRole::ALL
            .iter()
            .map(|&r| Self::new(r, prompt, error_cap, feedback_count))
            .collect()
    }
}

/// Point every agent at the same prompt.
pub fn synchronize_agents(agents: &mut [AgentSpec], prompt: &str) {
    for a in agents {
        a.current_prompt = prompt.to_string();
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedPair {
    pub example: LabeledExample,
    pub prediction: String,
}

impl PredictedPair {
    pub fn is_error(&self) -> bool {
        !labels_match(&self.prediction, &self.example.gold_label)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Inference {
    pub pairs: Vec<PredictedPair>,
    /// Examples whose prediction failed; they are not in `pairs`.
    pub unpredictable: usize,
}

pub fn infer_and_label(
    agent: &AgentSpec,
    minibatch: &[LabeledExample],
    predictor: &dyn Predictor,
) -> Result<Inference> {
    if minibatch.is_empty() {
        return Err(invalid("minibatch is empty"));
    }
    let mut out = Inference::default();
    for example in minibatch {
        match predictor.predict(&agent.current_prompt, example) {
            Ok(prediction) => out.pairs.push(PredictedPair {
                example: example.clone(),
                prediction,
            }),
            Err(_) => out.unpredictable += 1,
        }
    }
    Ok(out)
}

/// The first `cap` mispredicted pairs, in minibatch order.
pub fn select_errors(pairs: &[PredictedPair], cap: usize) -> Result<Vec<PredictedPair>> {
    if cap == 0 {
        return Err(invalid("error cap must be positive"));
    }
    Ok(pairs.iter().filter(|p| p.is_error()).take(cap).cloned().collect())
}

fn diverse_indices(texts: &[&str], cap: usize, seed: u64, encoder: &dyn Encoder) -> Result<Vec<usize>> {
    let n = texts.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..n);
    farthest_point(texts, cap.min(n), start, encoder)
}

fn farthest_point(texts: &[&str], cap: usize, start: usize, encoder: &dyn Encoder) -> Result<Vec<usize>> {
    let vectors: Vec<Vec<f64>> = embed_batch(encoder, texts)?
        .iter()
        .map(|v| normalize(&v.values))
        .collect::<Result<_>>()?;
    let mut chosen = Vec::with_capacity(cap);
    chosen.push(start);
    let mut min_d: Vec<f64> = vectors.iter().map(|v| dist_sq(v, &vectors[start])).collect();
    while chosen.len() < cap {
        let mut best = None;
        let mut best_d = -1.0;
        for (i, d) in min_d.iter().enumerate() {
            if !chosen.contains(&i) && *d > best_d {
                best = Some(i);
                best_d = *d;
            }
        }
        let next = best.expect("cap is at most the number of points");
        chosen.push(next);
        for (i, v) in vectors.iter().enumerate() {
            min_d[i] = min_d[i].min(dist_sq(v, &vectors[next]));
        }
    }
    Ok(chosen)
}

/// Greedy farthest-point selection over input embeddings, starting from a
/// seeded random example. `cap` at or above the minibatch size returns a
/// permutation of the whole minibatch.
pub fn diverse_samples(
    minibatch: &[LabeledExample],
    cap: usize,
    seed: u64,
    encoder: &dyn Encoder,
) -> Result<Vec<LabeledExample>> {
    if cap == 0 {
        return Err(invalid("diverse sample cap must be positive"));
    }
    if minibatch.is_empty() {
        return Err(invalid("minibatch is empty"));
    }
    let texts: Vec<&str> = minibatch.iter().map(|e| e.input.as_str()).collect();
    Ok(diverse_indices(&texts, cap, seed, encoder)?
        .into_iter()
        .map(|i| minibatch[i].clone())
        .collect())
}

fn format_examples(pairs: &[PredictedPair]) -> String {
    let mut out = String::new();
    for (i, p) in pairs.iter().enumerate() {
        let _ = write!(
            out,
            "Example {}\nInput: {}\nPredicted: {}\nExpected: {}\n\n",
            i + 1,
            p.example.input.trim(),
            p.prediction.trim(),
            p.example.gold_label.trim()
        );
    }
    out.truncate(out.trim_end().len());
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentFailure {
    pub role: AgentRole,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientSet {
    pub entries: BTreeMap<AgentRole, Vec<GradientBlock>>,
    pub iteration: u32,
    pub failures: Vec<AgentFailure>,
    /// Agents that saw no errors and used diverse samples instead.
    pub fallback_count: usize,
    pub parse_warnings: usize,
    pub unpredictable: usize,
}

impl GradientSet {
    /// All blocks, role order then block order.
    pub fn flatten(&self) -> Vec<GradientBlock> {
        self.entries.values().flatten().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientContext {
    pub iteration: u32,
    pub seed: u64,
    pub temperature: f64,
}

/// Run every agent on the minibatch and collect its gradient blocks.
///
/// An agent whose call or parse fails is recorded in `failures` and has no
/// entry. The whole set fails only when no agent succeeds.
pub fn generate_agent_gradients(
    agents: &[AgentSpec],
    minibatch: &[LabeledExample],
    predictor: &dyn Predictor,
    completer: &dyn Completer,
    encoder: &dyn Encoder,
    ctx: &GradientContext,
) -> Result<GradientSet> {
    if agents.is_empty() {
        return Err(invalid("no agents"));
    }
    let roles: BTreeSet<AgentRole> = agents.iter().map(|a| a.role).collect();
    if roles.len() != agents.len() {
        return Err(invalid("agent roles must be unique"));
    }
    if minibatch.is_empty() {
        return Err(invalid("minibatch is empty"));
    }

    // Synchronized agents share a prompt, so infer once per distinct prompt.
    let mut inferred: BTreeMap<&str, Inference> = BTreeMap::new();
    let mut set = GradientSet {
        entries: BTreeMap::new(),
        iteration: ctx.iteration,
        failures: Vec::new(),
        fallback_count: 0,
        parse_warnings: 0,
        unpredictable: 0,
    };
    for agent in agents {
        if !inferred.contains_key(agent.current_prompt.as_str()) {
            let inf = infer_and_label(agent, minibatch, predictor)?;
            set.unpredictable += inf.unpredictable;
            inferred.insert(&agent.current_prompt, inf);
        }
        let inference = &inferred[agent.current_prompt.as_str()];
        let fail = |set: &mut GradientSet, message: String| {
            set.failures.push(AgentFailure {
                role: agent.role,
                message,
            })
        };
        if inference.pairs.is_empty() {
            fail(&mut set, "every prediction failed".into());
            continue;
        }
        let mut shown = select_errors(&inference.pairs, agent.error_cap)?;
        if shown.is_empty() {
            set.fallback_count += 1;
            let texts: Vec<&str> = inference.pairs.iter().map(|p| p.example.input.as_str()).collect();
            let seed = derive_seed(ctx.seed, "diverse", agent.role as u64);
            match diverse_indices(&texts, agent.error_cap, seed, encoder) {
                Ok(idx) => {
                    shown = idx
                        .into_iter()
                        .take(agent.error_cap)
                        .map(|i| inference.pairs[i].clone())
                        .collect()
                }
                Err(e) => {
                    fail(&mut set, format!("{e}"));
                    continue;
                }
            }
        }
        let request = CompletionRequest::new(agent.role.template_id())
            .bind("prompt", agent.current_prompt.as_str())
            .bind("examples", format_examples(&shown))
            .bind("feedback_count", format!("{}", agent.feedback_count))
            .temperature(ctx.temperature);
        let raw = match completer.complete(&request) {
            Ok(mut v) if !v.is_empty() => v.swap_remove(0),
            Ok(_) => {
                fail(&mut set, "empty completion".into());
                continue;
            }
            Err(e) => {
                fail(&mut set, format!("{e}"));
                continue;
            }
        };
        match parse_gradient_blocks(&raw, agent.role, agent.feedback_count) {
            Ok(parsed) => {
                set.parse_warnings += parsed.warnings;
                set.entries.insert(agent.role, parsed.blocks);
            }
            Err(e) => {
                if let Error::EmptyGradient { warnings } = e {
                    set.parse_warnings += warnings;
                }
                fail(&mut set, format!("{e}"));
            }
        }
    }
    if set.entries.is_empty() {
        return Err(Error::Iteration(format!(
            "all {} agents failed to produce gradients",
            agents.len()
        )));
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::MockEncoder;
    use crate::gateway::mock::{MockProvider, MockTask};
    use crate::gateway::template::TemplateSet;
    use crate::gateway::Gateway;
    use crate::tasks::GatewayPredictor;
    use alloc::vec;

    fn pairs(flags: &[bool]) -> Vec<PredictedPair> {
        flags
            .iter()
            .enumerate()
            .map(|(i, &correct)| PredictedPair {
                example: LabeledExample::new(format!("x{i}"), "a").unwrap(),
                prediction: if correct { "a".into() } else { "b".into() },
            })
            .collect()
    }

    #[test]
    fn select_errors_truncates_in_order() {
        assert!(select_errors(&pairs(&[true, true]), 3).unwrap().is_empty());
        let p = pairs(&[false, true, false, false, false, false]);
        let e = select_errors(&p, 3).unwrap();
        let names: Vec<&str> = e.iter().map(|p| p.example.input.as_str()).collect();
        assert_eq!(names, ["x0", "x2", "x3"]);
        assert_eq!(select_errors(&pairs(&[false, true, false]), 3).unwrap().len(), 2);
        assert!(select_errors(&p, 0).is_err());
    }

    fn ex(inputs: &[&str]) -> Vec<LabeledExample> {
        inputs.iter().map(|i| LabeledExample::new(*i, "a").unwrap()).collect()
    }

    #[test]
    fn diverse_cap_one_is_seeded_start() {
        let enc = MockEncoder::new(1);
        let mb = ex(&["alpha", "beta", "gamma", "delta"]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let start = rng.random_range(0..4);
        assert_eq!(diverse_samples(&mb, 1, 9, &enc).unwrap(), vec![mb[start].clone()]);
    }

    #[test]
    fn diverse_includes_distinct_example() {
        let enc = MockEncoder::new(1);
        let mb = ex(&["the same words here", "completely different!", "the same words here"]);
        for seed in 0..30 {
            let got = diverse_samples(&mb, 2, seed, &enc).unwrap();
            assert!(got.iter().any(|e| e.input == "completely different!"));
        }
    }

    #[test]
    fn diverse_full_cap_is_permutation() {
        let enc = MockEncoder::new(1);
        let mb = ex(&["one", "two", "three", "four", "five"]);
        let mut got: Vec<String> = diverse_samples(&mb, 9, 3, &enc)
            .unwrap()
            .into_iter()
            .map(|e| e.input)
            .collect();
        got.sort();
        let mut want: Vec<String> = mb.into_iter().map(|e| e.input).collect();
        want.sort();
        assert_eq!(got, want);
    }

    fn setup(task: MockTask) -> (Vec<LabeledExample>, Gateway<MockProvider>) {
        let mb: Vec<LabeledExample> = (0..8)
            .map(|i| LabeledExample::new(format!("sample input {i}"), if i % 2 == 0 { "yes" } else { "no" }).unwrap())
            .collect();
        let gw = Gateway::new(MockProvider::new(5).with_task(task), TemplateSet::builtin());
        (mb, gw)
    }

    fn ctx() -> GradientContext {
        GradientContext {
            iteration: 1,
            seed: 11,
            temperature: DEFAULT_GRADIENT_TEMPERATURE,
        }
    }

    #[test]
    fn perfect_predictor_uses_fallback_for_every_agent() {
        let (mb, _) = setup(MockTask::default());
        let task = MockTask::echo(mb.iter().map(|e| (e.input.as_str(), e.gold_label.as_str())));
        let (_, gw) = setup(task);
        let predictor = GatewayPredictor::new(&gw, ["yes", "no"].iter().map(|s| s.to_string()).collect());
        let agents = AgentSpec::team("Say yes or no.", 4, 4).unwrap();
        let set = generate_agent_gradients(&agents, &mb, &predictor, &gw, &MockEncoder::new(1), &ctx()).unwrap();
        assert_eq!(set.fallback_count, 4);
        assert_eq!(set.entries.len(), 4);
        for (role, blocks) in &set.entries {
            assert!(!blocks.is_empty() && blocks.len() <= 4);
            assert!(blocks.iter().all(|b| b.agent_role == *role));
        }
    }

    #[test]
    fn failing_agent_is_recorded() {
        let (mb, _) = setup(MockTask::default());
        let gw = Gateway::new(
            MockProvider::new(5).fail_template("gradient_format"),
            TemplateSet::builtin(),
        )
        .with_max_retries(0);
        let predictor = GatewayPredictor::new(&gw, ["yes", "no"].iter().map(|s| s.to_string()).collect());
        let agents = AgentSpec::team("Say yes or no.", 4, 4).unwrap();
        let set = generate_agent_gradients(&agents, &mb, &predictor, &gw, &MockEncoder::new(1), &ctx()).unwrap();
        assert_eq!(set.entries.len(), 3);
        assert!(!set.entries.contains_key(&AgentRole::Format));
        assert_eq!(set.failures.len(), 1);
        assert_eq!(set.failures[0].role, AgentRole::Format);
    }

    #[test]
    fn all_agents_failing_is_iteration_error() {
        let (mb, _) = setup(MockTask::default());
        let mut provider = MockProvider::new(5);
        for r in AgentRole::ALL {
            provider = provider.fail_template(r.template_id());
        }
        let gw = Gateway::new(provider, TemplateSet::builtin()).with_max_retries(0);
        let predictor = GatewayPredictor::new(&gw, ["yes", "no"].iter().map(|s| s.to_string()).collect());
        let agents = AgentSpec::team("p", 4, 4).unwrap();
        assert!(matches!(
            generate_agent_gradients(&agents, &mb, &predictor, &gw, &MockEncoder::new(1), &ctx()),
            Err(Error::Iteration(_))
        ));
    }

    #[test]
    fn agent_order_does_not_matter() {
        let (mb, gw) = setup(MockTask::default());
        let predictor = GatewayPredictor::new(&gw, ["yes", "no"].iter().map(|s| s.to_string()).collect());
        let agents = AgentSpec::team("Say yes or no.", 3, 2).unwrap();
        let mut reversed = agents.clone();
        reversed.reverse();
        let enc = MockEncoder::new(1);
        let a = generate_agent_gradients(&agents, &mb, &predictor, &gw, &enc, &ctx()).unwrap();
        let b = generate_agent_gradients(&reversed, &mb, &predictor, &gw, &enc, &ctx()).unwrap();
        assert_eq!(a, b);
        assert!(a.entries.values().all(|v| v.len() <= 2));
    }

    #[test]
    fn duplicate_roles_rejected() {
        let (mb, gw) = setup(MockTask::default());
        let predictor = GatewayPredictor::new(&gw, ["yes", "no"].iter().map(|s| s.to_string()).collect());
        let a = AgentSpec::new(AgentRole::Style, "p", 1, 1).unwrap();
        assert!(generate_agent_gradients(&[a.clone(), a], &mb, &predictor, &gw, &MockEncoder::new(1), &ctx()).is_err());
    }
}
