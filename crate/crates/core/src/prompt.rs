//! Prompts, their lineage, and labeled examples.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PromptId(pub u64);

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// A natural-language prompt: the optimization variable.
///
/// Prompts are only minted by a [`PromptRegistry`], which guarantees the text
/// is nonempty and that `parent_id` names a prompt created earlier.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prompt {
    id: PromptId,
    text: String,
    parent_id: Option<PromptId>,
    iteration_born: u32,
    provenance: String,
}

impl Prompt {
    pub fn id(&self) -> PromptId {
        self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn parent_id(&self) -> Option<PromptId> {
        self.parent_id
    }

    pub fn iteration_born(&self) -> u32 {
        self.iteration_born
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }
}

/// Mints prompt ids and keeps every prompt created during a run.
#[derive(Clone, Debug, Default)]
pub struct PromptRegistry {
    prompts: BTreeMap<PromptId, Prompt>,
    next: u64,
}

impl PromptRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a prompt with no parent.
    pub fn root(&mut self, text: &str, provenance: &str) -> Result<Prompt> {
        self.insert(text, None, 0, provenance)
    }

    /// Register a successor of `parent`.
    pub fn derive(&mut self, parent: PromptId, text: &str, iteration: u32, provenance: &str) -> Result<Prompt> {
        if !self.prompts.contains_key(&parent) {
            return Err(invalid(format!("unknown parent prompt {parent}")));
        }
        self.insert(text, Some(parent), iteration, provenance)
    }

    fn insert(
        &mut self,
        text: &str,
        parent_id: Option<PromptId>,
        iteration_born: u32,
        provenance: &str,
    ) -> Result<Prompt> {
        let text = text.trim();
        if text.is_empty() {
            return Err(invalid("prompt text is empty"));
        }
        let prompt = Prompt {
            id: PromptId(self.next),
            text: text.to_string(),
            parent_id,
            iteration_born,
            provenance: provenance.to_string(),
        };
        self.next += 1;
        self.prompts.insert(prompt.id, prompt.clone());
        Ok(prompt)
    }

    pub fn get(&self, id: PromptId) -> Option<&Prompt> {
        self.prompts.get(&id)
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// Ids from `id` back to its root, inclusive.
    pub fn lineage(&self, id: PromptId) -> Vec<PromptId> {
        let mut chain = Vec::new();
        let mut cursor = Some(id);
        while let Some(cur) = cursor {
            match self.prompts.get(&cur) {
                Some(p) => {
                    chain.push(cur);
                    cursor = p.parent_id;
                }
                None => break,
            }
        }
        chain
    }
}

/// One `(input, gold label)` pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledExample {
    pub input: String,
    pub gold_label: String,
    /// Extra fields carried through untouched.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl LabeledExample {
    pub fn new(input: impl Into<String>, gold_label: impl Into<String>) -> Result<Self> {
        let input = input.into();
        let gold_label = gold_label.into();
        if input.trim().is_empty() {
            return Err(invalid("example input is empty"));
        }
        if gold_label.trim().is_empty() {
            return Err(invalid("example label is empty"));
        }
        Ok(Self {
            input,
            gold_label,
            metadata: BTreeMap::new(),
        })
    }
}

/// How a candidate was produced.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CandidateOrigin {
    Applied {
        cluster_id: usize,
        variant: usize,
    },
    Paraphrase {
        cluster_id: usize,
        variant: usize,
        index: usize,
    },
    /// The base prompt itself, used when expansion yields nothing.
    BaseFallback,
}

/// A successor prompt waiting to be scored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePrompt {
    pub prompt: Prompt,
    pub origin: CandidateOrigin,
}

impl CandidatePrompt {
    pub fn text(&self) -> &str {
        self.prompt.text()
    }

    pub fn id(&self) -> PromptId {
        self.prompt.id()
    }
}
