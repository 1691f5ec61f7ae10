//! The `promptgrad` command line.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use promptgrad_core::embedding::{Encoder, MockEncoder};
use promptgrad_core::gateway::mock::{MockProvider, MockTask, SimulatedTask};
use promptgrad_core::gateway::{CacheKey, Completer, CompletionCache, Gateway, MemoryCache, Provider, TemplateSet};
use promptgrad_core::lab::{rate_study, simulate, study_seed, LabConfig};
use promptgrad_core::metrics::{labels_match, Metric};
use promptgrad_core::optimizer::{run, RunError, Services};
use promptgrad_core::prompt::LabeledExample;
use promptgrad_core::report::RunReport;
use promptgrad_core::selection::{SearchMode, Strategy};
use promptgrad_core::tasks::{Dataset, GatewayPredictor, Predictor};

use crate::cache::FileCache;
use crate::config::{FileConfig, MockTaskKind, ProviderKind};
use crate::dataset::{load_answers, load_dataset};
use crate::error::{Error, Result};
use crate::extract::RegexExtractor;
use crate::http::{HttpEncoder, HttpProvider, SleepBackoff};
use crate::output::{self, AblationRow, PredictionRow};
use crate::templates::load_templates_dir;

#[derive(Parser, Debug)]
#[command(
    name = "promptgrad",
    version,
    about = "Prompt optimization with multi-agent textual gradients"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run config (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long, default_value = "promptgrad-out")]
    pub out: PathBuf,
    /// Overrides the run and lab seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub provider: Option<ProviderKind>,
    /// Persist completions here and reuse them on later runs.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Optimize a prompt on the configured train/dev sets.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// File holding the initial prompt.
        #[arg(long, conflicts_with = "prompt_text")]
        prompt: Option<PathBuf>,
        #[arg(long)]
        prompt_text: Option<String>,
    },
    /// Rerun the same seeded pipeline once per setting on one axis.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        prompt: Option<PathBuf>,
    },
    /// Run the convergence rate study.
    Lab {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "both")]
        objective: LabObjective,
    },
    /// Score one prompt on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        prompt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "accuracy")]
        metric: MetricName,
        /// Positive class for `--metric f1`.
        #[arg(long)]
        positive_label: Option<String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// UCB1, Thompson sampling and greedy selection.
    Bandit,
    /// Beam search against uniform Monte-Carlo sampling.
    Search,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LabObjective {
    Convex,
    Nonconvex,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricName {
    Accuracy,
    F1,
    MacroF1,
}

enum AnyCache {
    Memory(MemoryCache),
    File(FileCache),
}

impl CompletionCache for AnyCache {
    fn get(&self, key: &CacheKey) -> Option<String> {
        match self {
            AnyCache::Memory(c) => c.get(key),
            AnyCache::File(c) => c.get(key),
        }
    }
    fn put(&self, key: &CacheKey, text: &str) {
        match self {
            AnyCache::Memory(c) => c.put(key, text),
            AnyCache::File(c) => c.put(key, text),
        }
    }
}

type AnyGateway = Gateway<Box<dyn Provider>, AnyCache, SleepBackoff>;

/// Gateway, encoder and answer extraction built from a config.
pub struct Backend {
    gateway: AnyGateway,
    encoder: Box<dyn Encoder>,
    provider_id: String,
    vocabulary: BTreeSet<String>,
    extractor: Option<RegexExtractor>,
}

impl Backend {
    /// `examples` feed the mock task model; they are ignored for HTTP.
    pub fn build(
        cfg: &FileConfig,
        cache_dir: Option<&Path>,
        examples: &[LabeledExample],
        vocabulary: BTreeSet<String>,
    ) -> Result<Self> {
        let provider: Box<dyn Provider> = match cfg.provider.kind {
            ProviderKind::Mock => {
                let pairs = examples.iter().map(|e| (e.input.as_str(), e.gold_label.as_str()));
                let task = match cfg.provider.mock_task {
                    MockTaskKind::Simulated => MockTask::Simulated(SimulatedTask::new(pairs)),
                    MockTaskKind::Echo => MockTask::echo(pairs),
                    MockTaskKind::Scripted => {
                        let path = cfg.provider.mock_answers.as_ref().expect("validated");
                        MockTask::Scripted {
                            answers: load_answers(path)?,
                            fallback: None,
                        }
                    }
                };
                let mut p = MockProvider::new(cfg.provider_seed()).with_task(task);
                for t in &cfg.provider.mock_fail_templates {
                    p = p.fail_template(t);
                }
                Box::new(p)
            }
            ProviderKind::Http => Box::new(HttpProvider::new(cfg.provider.endpoint(&cfg.provider.model))),
        };
        let encoder: Box<dyn Encoder> = match cfg.encoder.kind {
            ProviderKind::Mock => Box::new(MockEncoder::with_dimension(cfg.encoder_seed(), cfg.encoder.dimension)),
            ProviderKind::Http => Box::new(HttpEncoder::new(
                cfg.provider.endpoint(&cfg.encoder.model),
                cfg.encoder.dimension,
            )?),
        };
        let templates = match &cfg.templates_dir {
            Some(dir) => load_templates_dir(dir)?,
            None => TemplateSet::builtin(),
        };
        let cache = match cache_dir {
            Some(dir) => AnyCache::File(FileCache::open_dir(dir)?),
            None => AnyCache::Memory(MemoryCache::new()),
        };
        let extractor = cfg.extraction_regex.as_deref().map(RegexExtractor::new).transpose()?;
        let provider_id = provider.id().to_string();
        let backoff = SleepBackoff {
            base: Duration::from_millis(cfg.provider.backoff_ms),
            max: Duration::from_secs(30),
        };
        let gateway = Gateway::new(provider, templates)
            .with_cache(cache)
            .with_backoff(backoff)
            .with_max_retries(cfg.provider.max_retries);
        Ok(Self {
            gateway,
            encoder,
            provider_id,
            vocabulary,
            extractor,
        })
    }

    pub fn predictor(&self) -> GatewayPredictor<'_> {
        let p = GatewayPredictor::new(&self.gateway, self.vocabulary.clone());
        match &self.extractor {
            Some(x) => p.with_extractor(x.clone()),
            None => p,
        }
    }

    pub fn gateway(&self) -> &dyn Completer {
        &self.gateway
    }
}

fn load_config(common: &Common) -> Result<FileConfig> {
    let mut cfg = match &common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(kind) = common.provider {
        cfg.provider.kind = kind;
        cfg.encoder.kind = kind;
    }
    Ok(cfg)
}

struct Data {
    train: Dataset,
    dev: Dataset,
    vocabulary: BTreeSet<String>,
}

impl Data {
    fn all_examples(&self) -> Vec<LabeledExample> {
        self.train
            .examples()
            .iter()
            .chain(self.dev.examples())
            .cloned()
            .collect()
    }
}

fn load_data(cfg: &FileConfig) -> Result<Data> {
    let train = cfg
        .data
        .train
        .as_ref()
        .ok_or_else(|| Error::Config("data.train is not set".into()))?;
    let dev = cfg
        .data
        .dev
        .as_ref()
        .ok_or_else(|| Error::Config("data.dev is not set".into()))?;
    let train = load_dataset(train, cfg.data.format)?;
    let dev = load_dataset(dev, cfg.data.format)?;
    let vocabulary = train
        .label_vocabulary()
        .union(dev.label_vocabulary())
        .cloned()
        .collect();
    Ok(Data { train, dev, vocabulary })
}

fn read_prompt(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn initial_prompt(cfg: &FileConfig, file: Option<&Path>, text: Option<&str>) -> Result<String> {
    let p = match (file, text) {
        (Some(f), _) => read_prompt(f)?,
        (None, Some(t)) => t.to_string(),
        (None, None) => cfg
            .initial_prompt()?
            .ok_or_else(|| Error::Config("no initial prompt: pass --prompt or set [prompt]".into()))?,
    };
    if p.trim().is_empty() {
        return Err(Error::Config("initial prompt is empty".into()));
    }
    Ok(p)
}

enum RunOutcome {
    Finished(RunReport),
    Aborted(RunReport, String),
}

fn run_once(
    cfg: &FileConfig,
    common: &Common,
    data: &Data,
    prompt: &str,
) -> Result<(RunOutcome, promptgrad_core::gateway::GatewayStats)> {
    let backend = Backend::build(
        cfg,
        common.cache_dir.as_deref(),
        &data.all_examples(),
        data.vocabulary.clone(),
    )?;
    let predictor = backend.predictor();
    let services = Services {
        completer: backend.gateway(),
        encoder: backend.encoder.as_ref(),
        predictor: &predictor,
        provider_id: &backend.provider_id,
    };
    let outcome = match run(&cfg.run, prompt, data.train.examples(), data.dev.examples(), &services) {
        Ok(report) => RunOutcome::Finished(report),
        Err(RunError::Aborted { report, cause }) => RunOutcome::Aborted(*report, cause.to_string()),
        Err(RunError::Setup(e)) => return Err(e.into()),
    };
    Ok((outcome, backend.gateway().stats()))
}

fn print_stats(stats: &promptgrad_core::gateway::GatewayStats) {
    println!(
        "llm: {} requested, {} provider calls, {} cache hits, {} retries",
        stats.total_requested(),
        stats.provider_calls,
        stats.cache_hits,
        stats.retries
    );
}

fn cmd_optimize(common: &Common, prompt: Option<&Path>, prompt_text: Option<&str>) -> Result<i32> {
    let cfg = load_config(common)?;
    let data = load_data(&cfg)?;
    let prompt = initial_prompt(&cfg, prompt, prompt_text)?;
    let (outcome, stats) = run_once(&cfg, common, &data, &prompt)?;
    match outcome {
        RunOutcome::Finished(report) => {
            let path = output::write_run(&common.out, &cfg, &report, &stats)?;
            print!("{}", report.summary());
            print_stats(&stats);
            println!("report: {}", path.display());
            Ok(0)
        }
        RunOutcome::Aborted(report, cause) => {
            let path = output::write_run(&common.out, &cfg, &report, &stats)?;
            print!("{}", report.summary());
            print_stats(&stats);
            eprintln!("run aborted: {cause}");
            eprintln!("partial report: {}", path.display());
            Ok(3)
        }
    }
}

fn cmd_ablate(common: &Common, axis: Axis, prompt: Option<&Path>) -> Result<i32> {
    let cfg = load_config(common)?;
    let data = load_data(&cfg)?;
    let prompt = initial_prompt(&cfg, prompt, None)?;
    let settings: Vec<(String, FileConfig)> = match axis {
        Axis::Bandit => Strategy::ALL
            .iter()
            .map(|&s| {
                let mut c = cfg.clone();
                c.run.selection.strategy = s;
                (s.as_str().to_string(), c)
            })
            .collect(),
        Axis::Search => [(SearchMode::Beam, "beam"), (SearchMode::MonteCarlo, "monte_carlo")]
            .into_iter()
            .map(|(m, name)| {
                let mut c = cfg.clone();
                c.run.search_mode = m;
                (name.to_string(), c)
            })
            .collect(),
    };
    let axis_name = match axis {
        Axis::Bandit => "bandit",
        Axis::Search => "search",
    };
    let mut rows = Vec::new();
    let mut aborted = false;
    for (name, c) in &settings {
        let (outcome, stats) = run_once(c, common, &data, &prompt)?;
        let report = match outcome {
            RunOutcome::Finished(r) => r,
            RunOutcome::Aborted(r, cause) => {
                eprintln!("{name}: run aborted: {cause}");
                aborted = true;
                r
            }
        };
        output::write_run(&common.out.join(name), c, &report, &stats)?;
        rows.push(AblationRow::from_report(name, &report));
    }
    let metric = cfg.run.metric.name();
    output::write_ablation(&common.out, axis_name, metric, &rows)?;
    print!("{}", output::ablation_markdown(axis_name, metric, &rows));
    let pools: BTreeSet<&str> = rows.iter().map(|r| r.first_pool_hash.as_str()).collect();
    println!(
        "first-iteration candidate pools: {}",
        if pools.len() == 1 {
            "identical across settings"
        } else {
            "differ"
        }
    );
    println!(
        "tables: {}",
        common.out.join(format!("ablation_{axis_name}.md")).display()
    );
    Ok(if aborted { 3 } else { 0 })
}

fn cmd_lab(common: &Common, objective: LabObjective) -> Result<i32> {
    let cfg = load_config(common)?;
    output::ensure_dir(&common.out)?;
    let mut chosen: Vec<(&str, &LabConfig)> = Vec::new();
    if objective != LabObjective::Nonconvex {
        chosen.push(("convex", &cfg.lab.convex));
    }
    if objective != LabObjective::Convex {
        chosen.push(("nonconvex", &cfg.lab.nonconvex));
    }
    for (name, lab) in chosen {
        let study = rate_study(lab, &cfg.lab.horizons, cfg.lab.seeds)?;
        output::write_study(&common.out, name, &study)?;
        for &h in &cfg.lab.horizons {
            let trace = simulate(&LabConfig {
                horizon: h,
                seed: study_seed(lab, 0),
                ..lab.clone()
            })?;
            output::write_trace(&common.out.join(format!("trace_{name}_T{h}.csv")), &trace)?;
        }
        let runs = cfg.lab.horizons.len() * cfg.lab.seeds;
        let monotone: usize = study.horizons.iter().map(|h| h.monotone_runs).sum();
        let checks: usize = study.horizons.iter().map(|h| h.bound_checks).sum();
        println!(
            "{name}: exponent {:.3} window [{}, {}] {}; descent-inequality violations {}; bound held {}/{}; monotone runs {monotone}/{runs}{}",
            study.exponent,
            study.window.0,
            study.window.1,
            if study.exponent_in_window() { "PASS" } else { "FAIL" },
            study.step_violations(),
            checks - study.bound_failures(),
            checks,
            if monotone == runs { " (monotone)" } else { "" }
        );
    }
    println!("output: {}", common.out.display());
    Ok(0)
}

fn cmd_eval(
    common: &Common,
    prompt: &Path,
    dataset: &Path,
    metric: MetricName,
    positive_label: Option<&str>,
) -> Result<i32> {
    let cfg = load_config(common)?;
    let metric = match (metric, positive_label) {
        (MetricName::Accuracy, _) => Metric::Accuracy,
        (MetricName::MacroF1, _) => Metric::MacroF1,
        (MetricName::F1, Some(p)) => Metric::F1 {
            positive_label: p.to_string(),
        },
        (MetricName::F1, None) => return Err(Error::Config("--metric f1 needs --positive-label".into())),
    };
    let prompt = read_prompt(prompt)?;
    let data = load_dataset(dataset, None)?;
    let backend = Backend::build(
        &cfg,
        common.cache_dir.as_deref(),
        data.examples(),
        data.label_vocabulary().clone(),
    )?;
    let predictor = backend.predictor();
    let mut rows = Vec::with_capacity(data.len());
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for e in data.examples() {
        match predictor.predict(&prompt, e) {
            Ok(p) => {
                rows.push(PredictionRow {
                    text: e.input.clone(),
                    gold: e.gold_label.clone(),
                    correct: labels_match(&p, &e.gold_label),
                    prediction: Some(p.clone()),
                    error: None,
                });
                preds.push(p);
                golds.push(e.gold_label.clone());
            }
            Err(err) => rows.push(PredictionRow {
                text: e.input.clone(),
                gold: e.gold_label.clone(),
                prediction: None,
                correct: false,
                error: Some(err.to_string()),
            }),
        }
    }
    output::ensure_dir(&common.out)?;
    output::write_csv(&common.out.join("predictions.csv"), &rows)?;
    let stats = backend.gateway().stats();
    if preds.is_empty() {
        print_stats(&stats);
        return Err(Error::Runtime("no example could be predicted".into()));
    }
    let score = metric.evaluate(&preds, &golds)?;
    println!(
        "{}: {:.4} (n={}, unpredictable {})",
        score.metric_name(),
        score.value(),
        score.n_evaluated(),
        data.len() - preds.len()
    );
    print_stats(&stats);
    println!("predictions: {}", common.out.join("predictions.csv").display());
    Ok(0)
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Optimize {
            common,
            prompt,
            prompt_text,
        } => cmd_optimize(common, prompt.as_deref(), prompt_text.as_deref()),
        Command::Ablate { common, axis, prompt } => cmd_ablate(common, *axis, prompt.as_deref()),
        Command::Lab { common, objective } => cmd_lab(common, *objective),
        Command::Eval {
            common,
            prompt,
            dataset,
            metric,
            positive_label,
        } => cmd_eval(common, prompt, dataset, *metric, positive_label.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
