//! Budgeted candidate selection with multi-armed bandits.
//!
//! Each candidate prompt is an arm. Pulling an arm scores it on a fresh
//! seeded dev minibatch of size `b`; the reward is the fraction of correct
//! predictions. After `rounds` pulls the arms are ranked by mean reward.

use alloc::format;
use alloc::vec::Vec;
use rand::distr::Distribution;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Beta;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hash::derive_seed;
use crate::math;
use crate::metrics::labels_match;
use crate::prompt::{CandidatePrompt, LabeledExample};
use crate::tasks::{sample_minibatch, Predictor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Ucb1,
    Thompson,
    Greedy,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Ucb1, Strategy::Thompson, Strategy::Greedy];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Ucb1 => "ucb1",
            Strategy::Thompson => "thompson",
            Strategy::Greedy => "greedy",
        }
    }
}

/// How the pull budget is spent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Arms chosen by the bandit strategy.
    Beam,
    /// Arms chosen uniformly at random.
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub pulls: u64,
    pub reward_sum: f64,
    /// Set after a failed probe; frozen arms are never chosen again.
    pub frozen: bool,
}

impl ArmStats {
    pub fn mean(&self) -> Option<f64> {
        (self.pulls > 0).then(|| self.reward_sum / self.pulls as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    pub arms: Vec<ArmStats>,
    /// Total pulls so far.
    pub t: u64,
    /// Examples scored per pull.
    pub batch_size: usize,
}

impl BanditState {
    pub fn new(n_arms: usize, batch_size: usize) -> Self {
        Self {
            arms: (0..n_arms)
                .map(|_| ArmStats {
                    pulls: 0,
                    reward_sum: 0.0,
                    frozen: false,
                })
                .collect(),
            t: 0,
            batch_size,
        }
    }

    pub fn record(&mut self, arm: usize, reward: f64) {
        let a = &mut self.arms[arm];
        a.pulls += 1;
        a.reward_sum += reward;
        self.t += 1;
    }

    pub fn freeze(&mut self, arm: usize) {
        self.arms[arm].frozen = true;
    }

    /// Examples consumed by successful pulls.
    pub fn probes(&self) -> u64 {
        self.t * self.batch_size as u64
    }

    fn live(&self) -> impl Iterator<Item = (usize, &ArmStats)> {
        self.arms.iter().enumerate().filter(|(_, a)| !a.frozen)
    }

    fn first_unpulled(&self) -> Option<usize> {
        self.live().find(|(_, a)| a.pulls == 0).map(|(i, _)| i)
    }

    fn check(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(invalid("no arms"));
        }
        if self.live().next().is_none() {
            return Err(Error::RewardUnavailable("every arm is frozen".into()));
        }
        Ok(())
    }

    /// Ranking: pulled arms by mean descending, then unpulled, index breaking
    /// ties.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.arms.len()).collect();
        idx.sort_by(|&a, &b| {
            let ma = self.arms[a].mean();
            let mb = self.arms[b].mean();
            match (ma, mb) {
                (Some(x), Some(y)) => y.total_cmp(&x).then(a.cmp(&b)),
                (Some(_), None) => core::cmp::Ordering::Less,
                (None, Some(_)) => core::cmp::Ordering::Greater,
                (None, None) => a.cmp(&b),
            }
        });
        idx
    }
}

fn argmax(values: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best = None;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values {
        if best.is_none() || v > best_v {
            best = Some(i);
            best_v = v;
        }
    }
    best
}

/// UCB1: unpulled arms first, then the largest `mean + sqrt(2 ln t / n)`.
pub fn ucb_select(state: &BanditState) -> Result<usize> {
    state.check()?;
    if let Some(i) = state.first_unpulled() {
        return Ok(i);
    }
    let ln_t = math::ln(state.t as f64);
    Ok(argmax(state.live().map(|(i, a)| {
        let n = a.pulls as f64;
        (i, a.reward_sum / n + math::sqrt(2.0 * ln_t / n))
    }))
    .unwrap())
}

/// Thompson sampling with Beta pseudo-counts: each pull contributes
/// `reward * b` successes and `(1 - reward) * b` failures.
pub fn thompson_select(state: &BanditState, rng: &mut dyn RngCore) -> Result<usize> {
    state.check()?;
    let b = state.batch_size as f64;
    let mut draws = Vec::new();
    for (i, a) in state.live() {
        let successes = a.reward_sum * b;
        let failures = (a.pulls as f64 * b - successes).max(0.0);
        let beta = Beta::new(1.0 + successes, 1.0 + failures).map_err(|e| invalid(format!("beta parameters: {e}")))?;
        draws.push((i, beta.sample(rng)));
    }
    Ok(argmax(draws.into_iter()).unwrap())
}

/// Unpulled arms first, then the best mean.
pub fn greedy_select(state: &BanditState) -> Result<usize> {
    state.check()?;
    if let Some(i) = state.first_unpulled() {
        return Ok(i);
    }
    Ok(argmax(state.live().map(|(i, a)| (i, a.reward_sum / a.pulls as f64))).unwrap())
}

/// Source of rewards for arm pulls.
pub trait ArmProber {
    /// Reward in `[0, 1]` for pulling `arm` in `round`. A
    /// [`Error::RewardUnavailable`] freezes the arm; other errors abort.
    fn probe(&mut self, arm: usize, round: usize) -> Result<f64>;
}

/// Synthetic arms with Bernoulli rewards.
pub struct BernoulliArms {
    probabilities: Vec<f64>,
    rng: ChaCha8Rng,
}

impl BernoulliArms {
    pub fn new(probabilities: Vec<f64>, seed: u64) -> Self {
        Self {
            probabilities,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl ArmProber for BernoulliArms {
    fn probe(&mut self, arm: usize, _round: usize) -> Result<f64> {
        Ok(if self.rng.random::<f64>() < self.probabilities[arm] {
            1.0
        } else {
            0.0
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionBudget {
    pub rounds: usize,
    pub minibatch_size: usize,
    pub beam_width: usize,
}

impl Default for SelectionBudget {
    fn default() -> Self {
        Self {
            rounds: 30,
            minibatch_size: 8,
            beam_width: 3,
        }
    }
}

impl SelectionBudget {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.minibatch_size == 0 || self.beam_width == 0 {
            return Err(invalid("rounds, minibatch_size and beam_width must be positive"));
        }
        Ok(())
    }

    pub fn total_probes(&self) -> u64 {
        self.rounds as u64 * self.minibatch_size as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditRun {
    pub state: BanditState,
    /// Arm chosen in each round.
    pub choices: Vec<usize>,
    pub failed_probes: usize,
    /// Top arms by final mean, best first.
    pub beam: Vec<usize>,
    pub best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BanditConfig {
    pub rounds: usize,
    pub batch_size: usize,
    pub beam_width: usize,
    pub mode: SearchMode,
    pub strategy: Strategy,
    pub seed: u64,
}

impl BanditConfig {
    /// One-example pulls, beam of one.
    pub fn simple(rounds: usize, mode: SearchMode, strategy: Strategy, seed: u64) -> Self {
        Self {
            rounds,
            batch_size: 1,
            beam_width: 1,
            mode,
            strategy,
            seed,
        }
    }
}

/// Spend `config.rounds` pulls choosing arms by mode and strategy.
pub fn run_bandit(n_arms: usize, config: &BanditConfig, prober: &mut dyn ArmProber) -> Result<BanditRun> {
    let BanditConfig {
        rounds,
        batch_size,
        beam_width,
        mode,
        strategy,
        seed,
    } = *config;
    if n_arms == 0 {
        return Err(invalid("no arms"));
    }
    let mut state = BanditState::new(n_arms, batch_size);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "bandit", mode as u64));
    let mut choices = Vec::with_capacity(rounds);
    let mut failed_probes = 0;
    for round in 0..rounds {
        if state.live().next().is_none() {
            break;
        }
        let arm = match mode {
            SearchMode::MonteCarlo => {
                let live: Vec<usize> = state.live().map(|(i, _)| i).collect();
                live[rng.random_range(0..live.len())]
            }
            SearchMode::Beam => match strategy {
                Strategy::Ucb1 => ucb_select(&state)?,
                Strategy::Thompson => thompson_select(&state, &mut rng)?,
                Strategy::Greedy => greedy_select(&state)?,
            },
        };
        choices.push(arm);
        match prober.probe(arm, round) {
            Ok(r) => state.record(arm, r.clamp(0.0, 1.0)),
            Err(Error::RewardUnavailable(_)) => {
                failed_probes += 1;
                state.freeze(arm);
            }
            Err(e) => return Err(e),
        }
    }
    if state.t == 0 {
        return Err(Error::RewardUnavailable("no arm produced a reward".into()));
    }
    let ranking = state.ranking();
    let beam: Vec<usize> = ranking.into_iter().take(beam_width.min(n_arms)).collect();
    Ok(BanditRun {
        best: beam[0],
        beam,
        state,
        choices,
        failed_probes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardEstimate {
    pub reward: f64,
    pub unpredictable: usize,
}

/// Fraction of correctly predicted examples. Failed predictions are left
/// out; if every one fails the reward is unavailable.
pub fn estimate_reward(
    prompt: &str,
    minibatch: &[LabeledExample],
    predictor: &dyn Predictor,
) -> Result<RewardEstimate> {
    if minibatch.is_empty() {
        return Err(invalid("minibatch is empty"));
    }
    let mut correct = 0usize;
    let mut scored = 0usize;
    for e in minibatch {
        if let Ok(p) = predictor.predict(prompt, e) {
            scored += 1;
            correct += usize::from(labels_match(&p, &e.gold_label));
        }
    }
    if scored == 0 {
        return Err(Error::RewardUnavailable(format!(
            "all {} predictions failed",
            minibatch.len()
        )));
    }
    Ok(RewardEstimate {
        reward: correct as f64 / scored as f64,
        unpredictable: minibatch.len() - scored,
    })
}

/// Probes candidates on seeded dev minibatches.
pub struct DevProber<'a> {
    pub candidates: &'a [CandidatePrompt],
    pub dev: &'a [LabeledExample],
    pub batch_size: usize,
    pub seed: u64,
    pub predictor: &'a dyn Predictor,
    pub unpredictable: usize,
}

impl ArmProber for DevProber<'_> {
    fn probe(&mut self, arm: usize, round: usize) -> Result<f64> {
        let batch = sample_minibatch(self.dev, self.batch_size, derive_seed(self.seed, "probe", round as u64))?;
        let est = estimate_reward(self.candidates[arm].text(), &batch, self.predictor)?;
        self.unpredictable += est.unpredictable;
        Ok(est.reward)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub run: BanditRun,
    /// The budget covered every candidate on every dev example, so each
    /// candidate was scored once on the whole dev set.
    pub exhaustive: bool,
    pub unpredictable: usize,
}

impl Selection {
    pub fn best<'a>(&self, candidates: &'a [CandidatePrompt]) -> &'a CandidatePrompt {
        &candidates[self.run.best]
    }

    pub fn beam<'a>(&self, candidates: &'a [CandidatePrompt]) -> Vec<&'a CandidatePrompt> {
        self.run.beam.iter().map(|&i| &candidates[i]).collect()
    }
}

fn select(
    candidates: &[CandidatePrompt],
    dev: &[LabeledExample],
    budget: &SelectionBudget,
    mode: SearchMode,
    strategy: Strategy,
    seed: u64,
    predictor: &dyn Predictor,
) -> Result<Selection> {
    budget.validate()?;
    if candidates.is_empty() {
        return Err(invalid("no candidates to select from"));
    }
    if dev.is_empty() {
        return Err(invalid("dev set is empty"));
    }
    if budget.minibatch_size > dev.len() {
        return Err(invalid(format!(
            "probe minibatch size {} exceeds dev set size {}",
            budget.minibatch_size,
            dev.len()
        )));
    }
    let exhaustive = mode == SearchMode::Beam
        && candidates.len() > 1
        && budget.total_probes() >= (candidates.len() * dev.len()) as u64;
    if exhaustive {
        let mut state = BanditState::new(candidates.len(), dev.len());
        let mut unpredictable = 0;
        let mut failed_probes = 0;
        for (i, c) in candidates.iter().enumerate() {
            match estimate_reward(c.text(), dev, predictor) {
                Ok(est) => {
                    unpredictable += est.unpredictable;
                    state.record(i, est.reward);
                }
                Err(Error::RewardUnavailable(_)) => {
                    failed_probes += 1;
                    state.freeze(i);
                }
                Err(e) => return Err(e),
            }
        }
        if state.t == 0 {
            return Err(Error::RewardUnavailable("no candidate could be scored".into()));
        }
        let beam: Vec<usize> = state
            .ranking()
            .into_iter()
            .take(budget.beam_width.min(candidates.len()))
            .collect();
        return Ok(Selection {
            run: BanditRun {
                best: beam[0],
                beam,
                choices: (0..candidates.len()).collect(),
                failed_probes,
                state,
            },
            exhaustive: true,
            unpredictable,
        });
    }
    let mut prober = DevProber {
        candidates,
        dev,
        batch_size: budget.minibatch_size,
        seed: derive_seed(seed, "dev", 0),
        predictor,
        unpredictable: 0,
    };
    let config = BanditConfig {
        rounds: budget.rounds,
        batch_size: budget.minibatch_size,
        beam_width: budget.beam_width,
        mode,
        strategy,
        seed,
    };
    let run = run_bandit(candidates.len(), &config, &mut prober)?;
    Ok(Selection {
        run,
        exhaustive: false,
        unpredictable: prober.unpredictable,
    })
}

/// Bandit-driven beam selection. When there are several candidates and the
/// budget is large enough to score each on the whole dev set, that is done
/// instead.
pub fn bandit_select(
    candidates: &[CandidatePrompt],
    dev: &[LabeledExample],
    budget: &SelectionBudget,
    strategy: Strategy,
    seed: u64,
    predictor: &dyn Predictor,
) -> Result<Selection> {
    select(candidates, dev, budget, SearchMode::Beam, strategy, seed, predictor)
}

/// Same probe budget, arms drawn uniformly at random.
pub fn monte_carlo_select(
    candidates: &[CandidatePrompt],
    dev: &[LabeledExample],
    budget: &SelectionBudget,
    seed: u64,
    predictor: &dyn Predictor,
) -> Result<Selection> {
    select(
        candidates,
        dev,
        budget,
        SearchMode::MonteCarlo,
        Strategy::Ucb1,
        seed,
        predictor,
    )
}
