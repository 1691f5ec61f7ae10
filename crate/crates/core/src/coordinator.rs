//! Gradient coordination: embed reasons, find conflicting pairs, cluster
//! related gradients, and fuse each cluster into one direction.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;
use serde::{Deserialize, Serialize};

use crate::agents::GradientSet;
use crate::embedding::{cosine, embed_batch, kmeans, normalize, Encoder, DEFAULT_MAX_ITER};
use crate::error::{invalid, Result};
use crate::gateway::parse::{parse_fusion, AgentRole, GradientBlock};
use crate::gateway::template::ids;
use crate::gateway::{Completer, CompletionRequest};
use crate::math;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoordinatorConfig {
    /// Pairs with cosine similarity below `-conflict_threshold` conflict.
    pub conflict_threshold: f64,
    pub max_clusters: usize,
    /// Softmax sharpness applied to gradient scores.
    pub fusion_sharpness: f64,
    pub seed: u64,
    pub kmeans_max_iter: usize,
    pub fusion_temperature: f64,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        Self {
            conflict_threshold: 0.3,
            max_clusters: 8,
            fusion_sharpness: 1.0,
            seed: 0,
            kmeans_max_iter: DEFAULT_MAX_ITER,
            fusion_temperature: 0.0,
        }
    }
}

impl CoordinatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.conflict_threshold > 0.0 && self.conflict_threshold < 1.0) {
            return Err(invalid("conflict_threshold must be in (0, 1)"));
        }
        if self.max_clusters == 0 {
            return Err(invalid("max_clusters must be at least 1"));
        }
        if !(self.fusion_sharpness > 0.0 && self.fusion_sharpness.is_finite()) {
            return Err(invalid("fusion_sharpness must be positive"));
        }
        if self.kmeans_max_iter == 0 {
            return Err(invalid("kmeans_max_iter must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictPair {
    pub reason_a_index: usize,
    pub reason_b_index: usize,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedGradient {
    pub text: GradientBlock,
    /// Indices into the flattened gradient list, by descending weight.
    pub member_indices: Vec<usize>,
    pub member_weights: Vec<f64>,
    pub cluster_id: usize,
    /// True when the text came from a fusion call rather than a member.
    pub fused: bool,
}

/// Every unordered pair `(a, b)`, `a < b`, with similarity below `-theta`.
pub fn detect_conflicts<V: AsRef<[f64]>>(vectors: &[V], theta: f64) -> Result<Vec<ConflictPair>> {
    if vectors.len() < 2 {
        return Err(invalid("conflict detection needs at least two vectors"));
    }
    let mut out = Vec::new();
    for a in 0..vectors.len() {
        for b in a + 1..vectors.len() {
            let similarity = cosine(vectors[a].as_ref(), vectors[b].as_ref())?;
            if similarity < -theta {
                out.push(ConflictPair {
                    reason_a_index: a,
                    reason_b_index: b,
                    similarity,
                });
            }
        }
    }
    Ok(out)
}

/// Softmax of `lambda * scores`, shifted by the maximum for stability.
pub fn fusion_weights(scores: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(invalid("fusion weights need at least one score"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid("lambda must be positive and finite"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(invalid("scores must be finite"));
    }
    let scaled: Vec<f64> = scores.iter().map(|s| lambda * s).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| math::exp(s - max)).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coordination {
    pub fused: Vec<FusedGradient>,
    pub conflicts: Vec<ConflictPair>,
    /// Cluster of each flattened gradient.
    pub cluster_labels: Vec<usize>,
    pub fusion_calls: usize,
    pub fusion_fallbacks: usize,
    pub fusion_warnings: usize,
    /// Every fusion attempt failed and members were passed through.
    pub degraded: bool,
}

fn describe(block: &GradientBlock) -> String {
    format!(
        "reason: {}\n   edit: {}",
        block.reason.trim(),
        block.suggested_edit.trim()
    )
}

fn dominant_role(blocks: &[GradientBlock], members: &[usize], weights: &[f64]) -> AgentRole {
    let mut totals: BTreeMap<AgentRole, f64> = BTreeMap::new();
    for (&m, &w) in members.iter().zip(weights) {
        *totals.entry(blocks[m].agent_role).or_insert(0.0) += w;
    }
    let mut best = blocks[members[0]].agent_role;
    let mut best_w = f64::NEG_INFINITY;
    for (role, w) in totals {
        if w > best_w {
            best = role;
            best_w = w;
        }
    }
    best
}

/// Flatten, embed, detect conflicts, cluster into `min(max_clusters, G)`
/// groups, and fuse every multi-member group with the `fuse` template.
///
/// `dev_scores` maps flattened gradient index to a score; without it the
/// weights inside each cluster are uniform. Missing entries score 0.
pub fn coordinate_and_fuse(
    gradients: &GradientSet,
    config: &CoordinatorConfig,
    dev_scores: Option<&BTreeMap<usize, f64>>,
    completer: &dyn Completer,
    encoder: &dyn Encoder,
) -> Result<Coordination> {
    config.validate()?;
    let blocks = gradients.flatten();
    let g = blocks.len();
    if g == 0 {
        return Err(invalid("no gradients to coordinate"));
    }
    let reasons: Vec<&str> = blocks.iter().map(|b| b.reason.as_str()).collect();
    let vectors = embed_batch(encoder, &reasons)?;
    let conflicts = if g >= 2 {
        detect_conflicts(&vectors, config.conflict_threshold)?
    } else {
        Vec::new()
    };
    let unit: Vec<Vec<f64>> = vectors.iter().map(|v| normalize(&v.values)).collect::<Result<_>>()?;
    let k = config.max_clusters.min(g);
    let assignment = kmeans(&unit, k, config.seed, config.kmeans_max_iter)?;

    // Number clusters by their first member so output order follows input.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&c| assignment.labels.iter().position(|&l| l == c));
    let mut relabel = alloc::vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    let cluster_labels: Vec<usize> = assignment.labels.iter().map(|&l| relabel[l]).collect();

    let mut out = Coordination {
        fused: Vec::with_capacity(k),
        conflicts,
        cluster_labels,
        fusion_calls: 0,
        fusion_fallbacks: 0,
        fusion_warnings: 0,
        degraded: false,
    };
    for cluster_id in 0..k {
        let mut members: Vec<usize> = (0..g).filter(|&i| out.cluster_labels[i] == cluster_id).collect();
        let scores: Vec<f64> = members
            .iter()
            .map(|i| dev_scores.and_then(|s| s.get(i)).copied().unwrap_or(0.0))
            .collect();
        let weights = fusion_weights(&scores, config.fusion_sharpness)?;
        let mut ranked: Vec<(usize, f64)> = members.iter().copied().zip(weights).collect();
        // Descending weight, then ascending index.
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        members = ranked.iter().map(|r| r.0).collect();
        let weights: Vec<f64> = ranked.iter().map(|r| r.1).collect();
        let lead = &blocks[members[0]];

        if members.len() == 1 {
            out.fused.push(FusedGradient {
                text: lead.clone(),
                member_indices: members,
                member_weights: weights,
                cluster_id,
                fused: false,
            });
            continue;
        }

        let position = |i: usize| members.iter().position(|&m| m == i);
        let mut member_list = String::new();
        for (rank, (&m, w)) in members.iter().zip(&weights).enumerate() {
            let _ = writeln!(
                member_list,
                "{}. [weight {:.3}, {}] {}",
                rank + 1,
                w,
                blocks[m].agent_role,
                describe(&blocks[m])
            );
        }
        let mut inside = String::new();
        let mut advisory = String::new();
        for c in &out.conflicts {
            match (position(c.reason_a_index), position(c.reason_b_index)) {
                (Some(a), Some(b)) => {
                    let _ = writeln!(
                        inside,
                        "- suggestion {} vs suggestion {} (similarity {:.2})",
                        a + 1,
                        b + 1,
                        c.similarity
                    );
                }
                (Some(a), None) | (None, Some(a)) => {
                    let other = if position(c.reason_a_index).is_some() {
                        c.reason_b_index
                    } else {
                        c.reason_a_index
                    };
                    let _ = writeln!(
                        advisory,
                        "- suggestion {} conflicts with \"{}\" (similarity {:.2})",
                        a + 1,
                        blocks[other].reason.trim(),
                        c.similarity
                    );
                }
                (None, None) => {}
            }
        }
        let none = |s: String| {
            if s.is_empty() {
                String::from("none")
            } else {
                String::from(s.trim_end())
            }
        };
        let request = CompletionRequest::new(ids::FUSE)
            .bind("members", member_list.trim_end())
            .bind("conflicts", none(inside))
            .bind("advisory", none(advisory))
            .bind("member_count", format!("{}", members.len()))
            .bind("lead_reason", lead.reason.as_str())
            .bind("lead_edit", lead.suggested_edit.as_str())
            .temperature(config.fusion_temperature);
        out.fusion_calls += 1;
        let role = dominant_role(&blocks, &members, &weights);
        let parsed = completer
            .complete(&request)
            .and_then(|v| parse_fusion(v.first().map(String::as_str).unwrap_or(""), role));
        let (text, fused) = match parsed {
            Ok(p) => {
                out.fusion_warnings += p.warnings;
                (p.block, true)
            }
            Err(_) => {
                out.fusion_fallbacks += 1;
                (lead.clone(), false)
            }
        };
        out.fused.push(FusedGradient {
            text,
            member_indices: members,
            member_weights: weights,
            cluster_id,
            fused,
        });
    }
    out.degraded = out.fusion_calls > 0 && out.fusion_fallbacks == out.fusion_calls;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::MockEncoder;
    use crate::gateway::mock::MockProvider;
    use crate::gateway::template::TemplateSet;
    use crate::gateway::Gateway;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn antipodal_and_orthogonal() {
        let c = detect_conflicts(&[vec![1.0, 0.0], vec![-1.0, 0.0]], 0.3).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].similarity, -1.0);
        assert_eq!((c[0].reason_a_index, c[0].reason_b_index), (0, 1));
        assert!(detect_conflicts(&[vec![1.0, 0.0], vec![0.0, 1.0]], 0.3)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn conflicts_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for theta in [0.99, 0.5, 0.1] {
            let vs: Vec<Vec<f64>> = (0..16)
                .map(|_| {
                    let v: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                    normalize(&v).unwrap()
                })
                .collect();
            let got = detect_conflicts(&vs, theta).unwrap();
            let mut want = Vec::new();
            for a in 0..16 {
                for b in 0..16 {
                    let dot: f64 = vs[a].iter().zip(&vs[b]).map(|(x, y)| x * y).sum();
                    if a < b && dot < -theta {
                        want.push((a, b));
                    }
                }
            }
            let got: Vec<(usize, usize)> = got.iter().map(|c| (c.reason_a_index, c.reason_b_index)).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(fusion_weights(&[3.0, 3.0], 1.0).unwrap(), vec![0.5, 0.5]);
        let w = fusion_weights(&[0.0, libm::log(3.0)], 1.0).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-12 && (w[1] - 0.75).abs() < 1e-12);
        let w = fusion_weights(&[0.0, 1.0], 1e4).unwrap();
        assert!(w[0] < 1e-12 && (w[1] - 1.0).abs() < 1e-12);
        assert!(fusion_weights(&[f64::NAN], 1.0).is_err());
        assert!(fusion_weights(&[1.0], 0.0).is_err());
        assert!(fusion_weights(&[], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn softmax_shift_and_scale_invariant(
            scores in proptest::collection::vec(-5.0f64..5.0, 1..10),
            shift in -100.0f64..100.0,
            c in 0.1f64..10.0,
            lambda in 0.1f64..5.0,
        ) {
            let w = fusion_weights(&scores, lambda).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let ws = fusion_weights(&shifted, lambda).unwrap();
            let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
            let wc = fusion_weights(&scaled, lambda / c).unwrap();
            for i in 0..w.len() {
                prop_assert!((w[i] - ws[i]).abs() < 1e-12);
                prop_assert!((w[i] - wc[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn conflicts_are_symmetric(
            vs in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 2..10)
                .prop_filter("nonzero", |vs| vs.iter().all(|v| math::norm(v) > 1e-3)),
            theta in 0.01f64..0.99,
        ) {
            for c in detect_conflicts(&vs, theta).unwrap() {
                prop_assert!(c.reason_a_index < c.reason_b_index);
                prop_assert!(cosine(&vs[c.reason_b_index], &vs[c.reason_a_index]).unwrap() < -theta);
            }
        }
    }

    fn gradient_set(blocks: &[(AgentRole, &str, &str)]) -> GradientSet {
        let mut entries: BTreeMap<AgentRole, Vec<GradientBlock>> = BTreeMap::new();
        for (role, reason, edit) in blocks {
            entries.entry(*role).or_default().push(GradientBlock {
                agent_role: *role,
                reason: (*reason).into(),
                suggested_edit: (*edit).into(),
                raw_source: String::new(),
            });
        }
        GradientSet {
            entries,
            iteration: 0,
            failures: vec![],
            fallback_count: 0,
            parse_warnings: 0,
            unpredictable: 0,
        }
    }

    #[test]
    fn single_gradient_passes_through() {
        let gw = Gateway::new(MockProvider::new(1), TemplateSet::builtin());
        let set = gradient_set(&[(AgentRole::Clarity, "vague", "be specific")]);
        let out = coordinate_and_fuse(&set, &CoordinatorConfig::default(), None, &gw, &MockEncoder::new(1)).unwrap();
        assert_eq!(out.fused.len(), 1);
        assert_eq!(out.fused[0].text, set.flatten()[0]);
        assert_eq!(out.fused[0].member_weights, vec![1.0]);
        assert_eq!(out.fusion_calls, 0);
        assert_eq!(gw.stats().total_requested(), 0);
    }

    #[test]
    fn uniform_weights_without_scores_and_partition() {
        let gw = Gateway::new(MockProvider::new(1), TemplateSet::builtin());
        let reasons: Vec<String> = (0..10).map(|i| format!("reason number {i} about things")).collect();
        let blocks: Vec<(AgentRole, &str, &str)> = reasons
            .iter()
            .enumerate()
            .map(|(i, r)| (AgentRole::ALL[i % 4], r.as_str(), "edit"))
            .collect();
        let set = gradient_set(&blocks);
        let config = CoordinatorConfig {
            max_clusters: 3,
            ..Default::default()
        };
        let out = coordinate_and_fuse(&set, &config, None, &gw, &MockEncoder::new(1)).unwrap();
        assert_eq!(out.fused.len(), 3);
        let mut seen = [0; 10];
        for f in &out.fused {
            let n = f.member_indices.len() as f64;
            assert!(f.member_weights.iter().all(|w| (w - 1.0 / n).abs() < 1e-12));
            for &i in &f.member_indices {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn fusion_failure_falls_back_to_top_weight_member() {
        let gw = Gateway::new(MockProvider::new(1).malformed_template("fuse"), TemplateSet::builtin());
        let set = gradient_set(&[
            (AgentRole::Clarity, "the instruction is vague", "a"),
            (AgentRole::Style, "the instruction is vague indeed", "b"),
        ]);
        let config = CoordinatorConfig {
            max_clusters: 1,
            ..Default::default()
        };
        let mut scores = BTreeMap::new();
        scores.insert(1, 2.0);
        let out = coordinate_and_fuse(&set, &config, Some(&scores), &gw, &MockEncoder::new(1)).unwrap();
        assert_eq!(out.fused.len(), 1);
        assert_eq!(out.fused[0].member_indices, vec![1, 0]);
        assert_eq!(out.fused[0].text.suggested_edit, "b");
        assert!(out.degraded);
        assert_eq!(out.fusion_fallbacks, 1);
    }
}
