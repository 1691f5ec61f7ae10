//! Candidate generation: apply fused gradients to the base prompt, add
//! paraphrases, drop near-duplicates, and cap the pool.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::coordinator::FusedGradient;
use crate::embedding::{cosine, embed_batch, Encoder};
use crate::error::{invalid, Result};
use crate::gateway::template::ids;
use crate::gateway::{Completer, CompletionRequest};
use crate::prompt::{CandidateOrigin, CandidatePrompt, Prompt, PromptRegistry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConfig {
    /// Most candidates kept (S).
    pub successor_cap: usize,
    /// Paraphrases per applied variant.
    pub mc_samples: usize,
    /// Candidates closer than `1 - diversity_margin` in cosine are dropped.
    pub diversity_margin: f64,
    /// Rewrites requested per fused gradient (s).
    pub variants_per_gradient: usize,
    pub apply_temperature: f64,
    pub paraphrase_temperature: f64,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            successor_cap: 8,
            mc_samples: 1,
            diversity_margin: 0.02,
            variants_per_gradient: 2,
            apply_temperature: 0.0,
            paraphrase_temperature: 0.9,
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.successor_cap == 0 {
            return Err(invalid("successor_cap must be at least 1"));
        }
        if self.variants_per_gradient == 0 {
            return Err(invalid("variants_per_gradient must be at least 1"));
        }
        if !(self.diversity_margin > 0.0 && self.diversity_margin < 1.0) {
            return Err(invalid("diversity_margin must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Candidates from one generation step plus any provider failures.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Generated {
    pub candidates: Vec<CandidatePrompt>,
    pub failures: Vec<String>,
}

/// Strip whitespace and a wrapping pair of triple quotes or code fences.
fn clean_rewrite(text: &str) -> &str {
    let mut t = text.trim();
    for fence in ["\"\"\"", "```"] {
        if t.len() >= 2 * fence.len() && t.starts_with(fence) && t.ends_with(fence) {
            t = t[fence.len()..t.len() - fence.len()].trim();
        }
    }
    t
}

fn register_all(
    texts: Vec<String>,
    parent: &Prompt,
    iteration: u32,
    registry: &mut PromptRegistry,
    origin: impl Fn(usize) -> (CandidateOrigin, String),
    out: &mut Generated,
) {
    for (i, text) in texts.iter().enumerate() {
        let (origin, provenance) = origin(i);
        match registry.derive(parent.id(), clean_rewrite(text), iteration, &provenance) {
            Ok(prompt) => out.candidates.push(CandidatePrompt { prompt, origin }),
            Err(e) => out.failures.push(format!("{provenance}: {e}")),
        }
    }
}

/// Ask for `s` rewrites of `base` that follow `gradient`.
pub fn apply_gradient(
    base: &Prompt,
    gradient: &FusedGradient,
    s: usize,
    iteration: u32,
    temperature: f64,
    completer: &dyn Completer,
    registry: &mut PromptRegistry,
) -> Result<Generated> {
    if s == 0 {
        return Err(invalid("at least one variant is required"));
    }
    let request = CompletionRequest::new(ids::APPLY)
        .bind("prompt", base.text())
        .bind("reason", gradient.text.reason.as_str())
        .bind("edit", gradient.text.suggested_edit.as_str())
        .temperature(temperature)
        .samples(s as u32);
    let mut out = Generated::default();
    match completer.complete(&request) {
        Ok(texts) => register_all(
            texts,
            base,
            iteration,
            registry,
            |v| {
                (
                    CandidateOrigin::Applied {
                        cluster_id: gradient.cluster_id,
                        variant: v,
                    },
                    format!("fused-gradient #{}, variant {}", gradient.cluster_id, v),
                )
            },
            &mut out,
        ),
        Err(e) => out
            .failures
            .push(format!("apply gradient #{}: {e}", gradient.cluster_id)),
    }
    Ok(out)
}

/// `n_mc` paraphrases of `candidate`, each a child of it.
pub fn paraphrase_mc(
    candidate: &CandidatePrompt,
    n_mc: usize,
    iteration: u32,
    temperature: f64,
    completer: &dyn Completer,
    registry: &mut PromptRegistry,
) -> Result<Generated> {
    let mut out = Generated::default();
    if n_mc == 0 {
        return Ok(out);
    }
    let (cluster_id, variant) = match candidate.origin {
        CandidateOrigin::Applied { cluster_id, variant }
        | CandidateOrigin::Paraphrase {
            cluster_id, variant, ..
        } => (cluster_id, variant),
        CandidateOrigin::BaseFallback => (usize::MAX, 0),
    };
    let request = CompletionRequest::new(ids::PARAPHRASE)
        .bind("prompt", candidate.text())
        .temperature(temperature)
        .samples(n_mc as u32);
    match completer.complete(&request) {
        Ok(texts) => register_all(
            texts,
            &candidate.prompt,
            iteration,
            registry,
            |i| {
                (
                    CandidateOrigin::Paraphrase {
                        cluster_id,
                        variant,
                        index: i,
                    },
                    format!("paraphrase {} of {}", i, candidate.id()),
                )
            },
            &mut out,
        ),
        Err(e) => out.failures.push(format!("paraphrase {}: {e}", candidate.id())),
    }
    Ok(out)
}

/// Greedy scan in order: keep a candidate when its cosine similarity to
/// every kept one is below `1 - delta`.
pub fn semantic_filter(
    candidates: Vec<CandidatePrompt>,
    delta: f64,
    encoder: &dyn Encoder,
) -> Result<Vec<CandidatePrompt>> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("diversity margin must be in (0, 1)"));
    }
    if candidates.is_empty() {
        return Ok(candidates);
    }
    let texts: Vec<&str> = candidates.iter().map(CandidatePrompt::text).collect();
    let vectors = embed_batch(encoder, &texts)?;
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..candidates.len() {
        let mut keep = true;
        for &j in &kept {
            if cosine(&vectors[i].values, &vectors[j].values)? >= 1.0 - delta {
                keep = false;
                break;
            }
        }
        if keep {
            kept.push(i);
        }
    }
    let mut slots: Vec<Option<CandidatePrompt>> = candidates.into_iter().map(Some).collect();
    Ok(kept.into_iter().filter_map(|i| slots[i].take()).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expansion {
    pub candidates: Vec<CandidatePrompt>,
    /// Rewrites registered from gradient applications.
    pub applied: usize,
    /// Pool size before filtering and truncation.
    pub generated: usize,
    pub filtered_out: usize,
    pub truncated: usize,
    pub failures: Vec<String>,
    /// Nothing survived and the base prompt was returned instead.
    pub degraded: bool,
}

/// Apply every fused gradient, paraphrase each variant, filter, and keep
/// the first `successor_cap` candidates in generation order.
pub fn expand_prompts(
    base: &Prompt,
    fused: &[FusedGradient],
    config: &ExpansionConfig,
    iteration: u32,
    completer: &dyn Completer,
    encoder: &dyn Encoder,
    registry: &mut PromptRegistry,
) -> Result<Expansion> {
    config.validate()?;
    if fused.is_empty() {
        return Err(invalid("no fused gradients to expand"));
    }
    let mut pool = Vec::new();
    let mut failures = Vec::new();
    let mut applied_count = 0;
    for gradient in fused {
        let applied = apply_gradient(
            base,
            gradient,
            config.variants_per_gradient,
            iteration,
            config.apply_temperature,
            completer,
            registry,
        )?;
        failures.extend(applied.failures);
        applied_count += applied.candidates.len();
        for variant in applied.candidates {
            let para = paraphrase_mc(
                &variant,
                config.mc_samples,
                iteration,
                config.paraphrase_temperature,
                completer,
                registry,
            )?;
            failures.extend(para.failures);
            pool.push(variant);
            pool.extend(para.candidates);
        }
    }
    let generated = pool.len();
    let mut kept = semantic_filter(pool, config.diversity_margin, encoder)?;
    let filtered_out = generated - kept.len();
    let truncated = kept.len().saturating_sub(config.successor_cap);
    kept.truncate(config.successor_cap);
    let degraded = kept.is_empty();
    if degraded {
        kept.push(CandidatePrompt {
            prompt: base.clone(),
            origin: CandidateOrigin::BaseFallback,
        });
    }
    Ok(Expansion {
        candidates: kept,
        applied: applied_count,
        generated,
        filtered_out,
        truncated,
        failures,
        degraded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::MockEncoder;
    use crate::gateway::mock::MockProvider;
    use crate::gateway::parse::{AgentRole, GradientBlock};
    use crate::gateway::template::TemplateSet;
    use crate::gateway::Gateway;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn fused(i: usize, edit: &str) -> FusedGradient {
        FusedGradient {
            text: GradientBlock {
                agent_role: AgentRole::Clarity,
                reason: format!("reason {i}"),
                suggested_edit: edit.to_string(),
                raw_source: String::new(),
            },
            member_indices: vec![i],
            member_weights: vec![1.0],
            cluster_id: i,
            fused: false,
        }
    }

    fn base(reg: &mut PromptRegistry) -> Prompt {
        reg.root("Classify the statement as true or false.", "initial").unwrap()
    }

    #[test]
    fn apply_produces_s_marked_variants() {
        let gw = Gateway::new(MockProvider::new(1), TemplateSet::builtin());
        let mut reg = PromptRegistry::new();
        let b = base(&mut reg);
        let out = apply_gradient(&b, &fused(0, "Name the criterion."), 2, 1, 0.0, &gw, &mut reg).unwrap();
        assert_eq!(out.candidates.len(), 2);
        for c in &out.candidates {
            assert!(c.text().starts_with(b.text()));
            assert!(c.text().contains("[edit"));
            assert_eq!(c.prompt.parent_id(), Some(b.id()));
        }
        let one = apply_gradient(&b, &fused(0, "x"), 1, 1, 0.0, &gw, &mut reg).unwrap();
        assert_eq!(one.candidates.len(), 1);
    }

    #[test]
    fn failed_apply_is_empty_with_record() {
        let gw = Gateway::new(MockProvider::new(1).fail_template("apply"), TemplateSet::builtin()).with_max_retries(0);
        let mut reg = PromptRegistry::new();
        let b = base(&mut reg);
        let out = apply_gradient(&b, &fused(0, "x"), 2, 1, 0.0, &gw, &mut reg).unwrap();
        assert!(out.candidates.is_empty());
        assert_eq!(out.failures.len(), 1);
    }

    #[test]
    fn paraphrases_point_at_parent() {
        let gw = Gateway::new(MockProvider::new(1), TemplateSet::builtin());
        let mut reg = PromptRegistry::new();
        let b = base(&mut reg);
        let parent = apply_gradient(&b, &fused(3, "x"), 1, 1, 0.0, &gw, &mut reg)
            .unwrap()
            .candidates
            .remove(0);
        assert!(paraphrase_mc(&parent, 0, 1, 0.9, &gw, &mut reg)
            .unwrap()
            .candidates
            .is_empty());
        let out = paraphrase_mc(&parent, 3, 1, 0.9, &gw, &mut reg).unwrap();
        assert_eq!(out.candidates.len(), 3);
        for (i, c) in out.candidates.iter().enumerate() {
            assert_eq!(c.prompt.parent_id(), Some(parent.id()));
            assert!(c.text().contains(&format!("[paraphrase {}:", i + 1)));
        }
    }

    #[test]
    fn clean_rewrite_strips_fences() {
        assert_eq!(clean_rewrite("  \"\"\"\nhello\n\"\"\" "), "hello");
        assert_eq!(clean_rewrite("```\nhi\n```"), "hi");
        assert_eq!(clean_rewrite("plain"), "plain");
    }

    fn candidates(texts: &[&str]) -> Vec<CandidatePrompt> {
        let mut reg = PromptRegistry::new();
        let root = reg.root("root", "r").unwrap();
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| CandidatePrompt {
                prompt: reg.derive(root.id(), t, 1, "t").unwrap(),
                origin: CandidateOrigin::Applied {
                    cluster_id: i,
                    variant: 0,
                },
            })
            .collect()
    }

    #[test]
    fn duplicates_keep_first_only() {
        let enc = MockEncoder::new(1);
        let kept = semantic_filter(candidates(&["same text", "same text", "same text"]), 0.01, &enc).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(
            kept[0].origin,
            CandidateOrigin::Applied {
                cluster_id: 0,
                variant: 0
            }
        );
    }

    /// Encoder that maps text "e<i>" to the i-th standard basis vector.
    struct Basis;
    impl Encoder for Basis {
        fn id(&self) -> &str {
            "basis"
        }
        fn dimension(&self) -> usize {
            8
        }
        fn encode(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
            Ok(texts
                .iter()
                .map(|t| {
                    let i: usize = t[1..].parse().unwrap();
                    let mut v = vec![0.0; 8];
                    v[i] = 1.0;
                    v
                })
                .collect())
        }
    }

    #[test]
    fn orthogonal_candidates_all_kept() {
        let kept = semantic_filter(candidates(&["e0", "e1", "e2", "e3"]), 0.5, &Basis).unwrap();
        assert_eq!(kept.len(), 4);
    }

    proptest! {
        #[test]
        fn filter_is_idempotent_and_separating(
            words in proptest::collection::vec(0usize..6, 1..12),
            delta in 0.01f64..0.6,
        ) {
            let vocab = ["alpha beta", "alpha gamma", "delta", "beta beta", "omega", "alpha beta!"];
            let texts: Vec<&str> = words.iter().map(|&w| vocab[w]).collect();
            let enc = MockEncoder::new(2);
            let once = semantic_filter(candidates(&texts), delta, &enc).unwrap();
            let twice = semantic_filter(once.clone(), delta, &enc).unwrap();
            prop_assert_eq!(&once, &twice);
            let t: Vec<&str> = once.iter().map(|c| c.text()).collect();
            let v = embed_batch(&enc, &t).unwrap();
            for a in 0..v.len() {
                for b in a + 1..v.len() {
                    prop_assert!(cosine(&v[a].values, &v[b].values).unwrap() < 1.0 - delta);
                }
            }
        }
    }

    #[test]
    fn expansion_counts_and_order() {
        let gw = Gateway::new(MockProvider::new(1), TemplateSet::builtin());
        let mut reg = PromptRegistry::new();
        let b = base(&mut reg);
        let grads: Vec<FusedGradient> = (0..8)
            .map(|i| {
                fused(
                    i,
                    &format!(
                        "Apply change number {i} with its own distinct wording {}",
                        "x".repeat(i)
                    ),
                )
            })
            .collect();
        let config = ExpansionConfig {
            successor_cap: 10,
            mc_samples: 1,
            variants_per_gradient: 2,
            ..Default::default()
        };
        let out = expand_prompts(&b, &grads, &config, 1, &gw, &MockEncoder::new(1), &mut reg).unwrap();
        assert_eq!(out.generated, 32);
        assert!(out.candidates.len() <= 10);
        assert_eq!(gw.stats().requested_for("apply"), 16);
        assert_eq!(gw.stats().requested_for("paraphrase"), 16);
        // Generation order: cluster ids never decrease.
        let clusters: Vec<usize> = out
            .candidates
            .iter()
            .map(|c| match c.origin {
                CandidateOrigin::Applied { cluster_id, .. } | CandidateOrigin::Paraphrase { cluster_id, .. } => {
                    cluster_id
                }
                CandidateOrigin::BaseFallback => unreachable!(),
            })
            .collect();
        assert!(clusters.windows(2).all(|w| w[0] <= w[1]));
        for c in &out.candidates {
            assert_eq!(reg.lineage(c.id()).last(), Some(&b.id()));
        }
    }

    #[test]
    fn cap_one_keeps_first_survivor() {
        let gw = Gateway::new(MockProvider::new(1), TemplateSet::builtin());
        let mut reg = PromptRegistry::new();
        let b = base(&mut reg);
        let config = ExpansionConfig {
            successor_cap: 1,
            ..Default::default()
        };
        let out = expand_prompts(
            &b,
            &[fused(0, "e"), fused(1, "f")],
            &config,
            1,
            &gw,
            &MockEncoder::new(1),
            &mut reg,
        )
        .unwrap();
        assert_eq!(out.candidates.len(), 1);
        assert_eq!(
            out.candidates[0].origin,
            CandidateOrigin::Applied {
                cluster_id: 0,
                variant: 0
            }
        );
    }

    #[test]
    fn all_failures_fall_back_to_base() {
        let gw = Gateway::new(
            MockProvider::new(1).fail_template("apply").fail_template("paraphrase"),
            TemplateSet::builtin(),
        )
        .with_max_retries(0);
        let mut reg = PromptRegistry::new();
        let b = base(&mut reg);
        let out = expand_prompts(
            &b,
            &[fused(0, "e")],
            &ExpansionConfig::default(),
            1,
            &gw,
            &MockEncoder::new(1),
            &mut reg,
        )
        .unwrap();
        assert!(out.degraded);
        assert_eq!(out.candidates.len(), 1);
        assert_eq!(out.candidates[0].origin, CandidateOrigin::BaseFallback);
        assert_eq!(out.candidates[0].text(), b.text());
    }
}
