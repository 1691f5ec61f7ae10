//! Datasets, minibatch sampling, and the predictor that runs a prompt on an
//! example.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gateway::template::ids;
use crate::gateway::{Completer, CompletionRequest};
use crate::metrics::{normalize_label, Metric, Score};
use crate::prompt::LabeledExample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    name: String,
    examples: Vec<LabeledExample>,
    label_vocabulary: BTreeSet<String>,
}

impl Dataset {
    /// Build a dataset whose vocabulary is the set of gold labels seen.
    pub fn new(name: &str, examples: Vec<LabeledExample>) -> Result<Self> {
        let vocab = examples.iter().map(|e| e.gold_label.clone()).collect();
        Self::with_vocabulary(name, examples, vocab)
    }

    pub fn with_vocabulary(
        name: &str,
        examples: Vec<LabeledExample>,
        label_vocabulary: BTreeSet<String>,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(invalid(format!("dataset {name} is empty")));
        }
        if let Some(e) = examples.iter().find(|e| !label_vocabulary.contains(&e.gold_label)) {
            return Err(invalid(format!(
                "label {:?} is not in the vocabulary of {name}",
                e.gold_label
            )));
        }
        Ok(Self {
            name: name.to_string(),
            examples,
            label_vocabulary,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn label_vocabulary(&self) -> &BTreeSet<String> {
        &self.label_vocabulary
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Draw `b` examples without replacement.
pub fn sample_minibatch(examples: &[LabeledExample], b: usize, seed: u64) -> Result<Vec<LabeledExample>> {
    if b == 0 || b > examples.len() {
        return Err(invalid(format!("minibatch size {b} must be in 1..={}", examples.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, examples.len(), b)
        .into_iter()
        .map(|i| examples[i].clone())
        .collect())
}

/// Runs a prompt on one example and returns the predicted label.
pub trait Predictor {
    fn predict(&self, prompt: &str, example: &LabeledExample) -> Result<String>;
}

impl<T: Predictor + ?Sized> Predictor for &T {
    fn predict(&self, prompt: &str, example: &LabeledExample) -> Result<String> {
        (**self).predict(prompt, example)
    }
}

/// Maps raw model output to a label.
pub trait LabelExtractor {
    fn extract(&self, output: &str, vocabulary: &BTreeSet<String>) -> String;
}

/// Takes the last nonempty line and matches it case-insensitively against
/// the vocabulary. Unmatched lines come back verbatim (trimmed).
#[derive(Clone, Copy, Debug, Default)]
pub struct LastLineExtractor;

impl LabelExtractor for LastLineExtractor {
    fn extract(&self, output: &str, vocabulary: &BTreeSet<String>) -> String {
        let line = output
            .lines()
            .rev()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .unwrap_or("");
        let key = normalize_label(line);
        vocabulary
            .iter()
            .find(|v| normalize_label(v) == key)
            .cloned()
            .unwrap_or_else(|| line.to_string())
    }
}

/// Predictor backed by the `task` template at temperature 0.
pub struct GatewayPredictor<'a> {
    completer: &'a dyn Completer,
    vocabulary: BTreeSet<String>,
    labels: String,
    extractor: Box<dyn LabelExtractor + 'a>,
}

impl<'a> GatewayPredictor<'a> {
    pub fn new(completer: &'a dyn Completer, vocabulary: BTreeSet<String>) -> Self {
        let labels = vocabulary.iter().cloned().collect::<Vec<_>>().join(", ");
        Self {
            completer,
            vocabulary,
            labels,
            extractor: Box::new(LastLineExtractor),
        }
    }

    pub fn with_extractor(mut self, extractor: impl LabelExtractor + 'a) -> Self {
        self.extractor = Box::new(extractor);
        self
    }
}

impl Predictor for GatewayPredictor<'_> {
    fn predict(&self, prompt: &str, example: &LabeledExample) -> Result<String> {
        let request = CompletionRequest::new(ids::TASK)
            .bind("prompt", prompt)
            .bind("input", example.input.as_str())
            .bind("labels", self.labels.as_str())
            .temperature(0.0);
        let out = self
            .completer
            .complete(&request)
            .map_err(|e| Error::PredictionUnavailable(format!("{e}")))?;
        let text = out
            .first()
            .ok_or_else(|| Error::PredictionUnavailable("empty completion".into()))?;
        Ok(self.extractor.extract(text, &self.vocabulary))
    }
}

/// A prompt's score on a set of examples. Examples whose prediction failed
/// are left out and counted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub score: Score,
    pub unpredictable: usize,
}

pub fn evaluate_prompt(
    predictor: &dyn Predictor,
    prompt: &str,
    examples: &[LabeledExample],
    metric: &Metric,
) -> Result<Evaluation> {
    let mut predictions = Vec::with_capacity(examples.len());
    let mut golds = Vec::with_capacity(examples.len());
    let mut unpredictable = 0;
    for example in examples {
        match predictor.predict(prompt, example) {
            Ok(p) => {
                predictions.push(p);
                golds.push(example.gold_label.clone());
            }
            Err(Error::PredictionUnavailable(_)) => unpredictable += 1,
            Err(e) => return Err(e),
        }
    }
    if predictions.is_empty() {
        return Err(Error::PredictionUnavailable(format!(
            "all {} predictions failed",
            examples.len()
        )));
    }
    Ok(Evaluation {
        score: metric.evaluate(&predictions, &golds)?,
        unpredictable,
    })
}
