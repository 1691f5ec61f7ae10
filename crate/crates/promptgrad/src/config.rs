//! Run configuration files (TOML or JSON).
//!
//! ```toml
//! [run]                 # optimizer settings; every key optional
//! iterations = 3
//! seed = 7
//! [run.selection]
//! strategy = "ucb1"
//!
//! [data]
//! train = "train.jsonl"  # relative to this file
//! dev = "dev.jsonl"
//!
//! [prompt]
//! file = "prompt.txt"
//!
//! [provider]
//! kind = "mock"          # or "http"
//! mock_task = "simulated"
//!
//! [lab]
//! horizons = [100, 1000, 10000]
//! seeds = 50
//! [lab.nonconvex]
//! step_scale = 0.5
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use promptgrad_core::lab::{LabConfig, DEFAULT_HORIZONS, DEFAULT_STUDY_SEEDS};
use promptgrad_core::optimizer::RunConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::Format;
use crate::error::{Error, Result};
use crate::http::{Endpoint, DEFAULT_API_KEY_ENV};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockTaskKind {
    /// Accuracy grows with the edits applied to the prompt.
    #[default]
    Simulated,
    /// Always answers with the gold label.
    Echo,
    /// Answers from `mock_answers`.
    Scripted,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub format: Option<Format>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub text: Option<String>,
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Mock seed; defaults to the run seed.
    pub seed: Option<u64>,
    pub mock_task: MockTaskKind,
    pub mock_answers: Option<PathBuf>,
    /// Template ids the mock provider fails on, for exercising error paths.
    pub mock_fail_templates: Vec<String>,
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            seed: None,
            mock_task: MockTaskKind::Simulated,
            mock_answers: None,
            mock_fail_templates: Vec::new(),
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

impl ProviderConfig {
    pub fn endpoint(&self, model: &str) -> Endpoint {
        Endpoint::from_env(
            &self.base_url,
            model,
            &self.api_key_env,
            Duration::from_secs(self.timeout_secs),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: ProviderKind,
    pub seed: Option<u64>,
    pub dimension: usize,
    /// Embedding model for the HTTP encoder; endpoint and auth are shared
    /// with the provider.
    pub model: String,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            seed: None,
            dimension: 64,
            model: "text-embedding-3-small".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabSection {
    pub horizons: Vec<usize>,
    pub seeds: usize,
    pub convex: LabConfig,
    pub nonconvex: LabConfig,
}

impl Default for LabSection {
    fn default() -> Self {
        Self {
            horizons: DEFAULT_HORIZONS.to_vec(),
            seeds: DEFAULT_STUDY_SEEDS,
            convex: LabConfig::convex(),
            nonconvex: LabConfig::nonconvex(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    run: RunConfig,
    data: DataConfig,
    prompt: PromptConfig,
    provider: ProviderConfig,
    encoder: EncoderConfig,
    templates_dir: Option<PathBuf>,
    extraction_regex: Option<String>,
    /// Partial overrides; merged onto [`LabSection::default`].
    lab: Value,
}

/// A loaded config with relative paths resolved against the file's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileConfig {
    pub run: RunConfig,
    pub data: DataConfig,
    pub prompt: PromptConfig,
    pub provider: ProviderConfig,
    pub encoder: EncoderConfig,
    pub templates_dir: Option<PathBuf>,
    pub extraction_regex: Option<String>,
    pub lab: LabSection,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self::from_raw(RawConfig::default(), Path::new(".")).expect("default config is valid")
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let value: Value = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            _ => toml::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        let parsed: RawConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_raw(parsed, dir)
    }

    fn from_raw(raw: RawConfig, dir: &Path) -> Result<Self> {
        let mut lab = serde_json::to_value(LabSection::default()).expect("lab section serializes");
        if !raw.lab.is_null() {
            if !raw.lab.is_object() {
                return Err(Error::Config("[lab] must be a table".into()));
            }
            merge(&mut lab, &raw.lab);
        }
        let lab: LabSection = serde_json::from_value(lab).map_err(|e| Error::Config(format!("lab: {e}")))?;
        let resolve = |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { dir.join(p) });
        let cfg = FileConfig {
            run: raw.run,
            data: DataConfig {
                train: resolve(raw.data.train),
                dev: resolve(raw.data.dev),
                format: raw.data.format,
            },
            prompt: PromptConfig {
                text: raw.prompt.text,
                file: resolve(raw.prompt.file),
            },
            provider: ProviderConfig {
                mock_answers: resolve(raw.provider.mock_answers.clone()),
                ..raw.provider
            },
            encoder: raw.encoder,
            templates_dir: resolve(raw.templates_dir),
            extraction_regex: raw.extraction_regex,
            lab,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate().map_err(|e| Error::Config(format!("run: {e}")))?;
        self.lab
            .convex
            .validate()
            .map_err(|e| Error::Config(format!("lab.convex: {e}")))?;
        self.lab
            .nonconvex
            .validate()
            .map_err(|e| Error::Config(format!("lab.nonconvex: {e}")))?;
        if self.lab.seeds == 0 || self.lab.horizons.len() < 3 || self.lab.horizons.contains(&0) {
            return Err(Error::Config(
                "lab needs seeds >= 1 and at least three positive horizons".into(),
            ));
        }
        if self.provider.mock_task == MockTaskKind::Scripted && self.provider.mock_answers.is_none() {
            return Err(Error::Config("mock_task = \"scripted\" needs mock_answers".into()));
        }
        if self.encoder.dimension == 0 {
            return Err(Error::Config("encoder dimension must be positive".into()));
        }
        Ok(())
    }

    /// Apply `--seed`: sets the run seed and both lab seeds.
    pub fn set_seed(&mut self, seed: u64) {
        self.run.seed = seed;
        self.lab.convex.seed = seed;
        self.lab.nonconvex.seed = seed;
    }

    pub fn provider_seed(&self) -> u64 {
        self.provider.seed.unwrap_or(self.run.seed)
    }

    pub fn encoder_seed(&self) -> u64 {
        self.encoder.seed.unwrap_or(self.provider_seed())
    }

    /// Initial prompt from `prompt.text` or `prompt.file`.
    pub fn initial_prompt(&self) -> Result<Option<String>> {
        match (&self.prompt.text, &self.prompt.file) {
            (Some(_), Some(_)) => Err(Error::Config("set prompt.text or prompt.file, not both".into())),
            (Some(t), None) => Ok(Some(t.clone())),
            (None, Some(p)) => fs::read_to_string(p)
                .map(Some)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
            (None, None) => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use promptgrad_core::selection::Strategy;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = write(
            dir.path(),
            "c.toml",
            "[run]\niterations = 2\n[run.selection]\nstrategy = \"thompson\"\n[data]\ntrain = \"t.jsonl\"\n[lab.nonconvex]\nstep_scale = 0.25\n",
        );
        let j = write(
            dir.path(),
            "c.json",
            r#"{"run": {"iterations": 2, "selection": {"strategy": "thompson"}}, "data": {"train": "t.jsonl"}, "lab": {"nonconvex": {"step_scale": 0.25}}}"#,
        );
        let a = FileConfig::load(&t).unwrap();
        assert_eq!(a, FileConfig::load(&j).unwrap());
        assert_eq!(a.run.iterations, 2);
        assert_eq!(a.run.selection.strategy, Strategy::Thompson);
        assert_eq!(a.data.train, Some(dir.path().join("t.jsonl")));
        assert_eq!(a.lab.nonconvex.step_scale, 0.25);
        // Untouched lab fields keep the nonconvex defaults.
        assert_eq!(a.lab.nonconvex.alignment, LabConfig::nonconvex().alignment);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        for body in [
            "[run]\niterationz = 2\n",
            "[run]\niterations = 0\n",
            "bogus = 1\n",
            "[provider]\nmock_task = \"scripted\"\n",
            "[lab]\nhorizons = [10, 100]\n",
            "[lab.convex]\nalignment = 2.0\n",
            "not toml [",
        ] {
            let p = write(dir.path(), "c.toml", body);
            assert!(matches!(FileConfig::load(&p), Err(Error::Config(_))), "{body}");
        }
    }

    #[test]
    fn seeds_cascade() {
        let mut c = FileConfig::default();
        c.set_seed(42);
        assert_eq!(c.provider_seed(), 42);
        assert_eq!(c.encoder_seed(), 42);
        assert_eq!(c.lab.convex.seed, 42);
        c.provider.seed = Some(1);
        assert_eq!(c.encoder_seed(), 1);
    }
}
