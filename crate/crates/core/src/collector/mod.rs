//! Training-data collection: feature subsets paired with their downstream
//! utility.
//!
//! [`collect`] runs one DQN agent per feature. Each environment step a random
//! group of agents participates; each participant chooses select/deselect
//! for its own feature, the resulting subset is scored, and the score is
//! split equally among the participants. [`random_collect`] draws subsets
//! uniformly instead and serves as the experimental control.

mod dqn;

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_ab, Dataset};
use crate::error::{Error, Result};
use crate::eval::{fit_predict_score, ModelKind, UtilityScore};
use crate::rng::{derive_seed, seeded, Rng};
use crate::vocab::{subset_to_sequence, FeatureTokenVocab, TokenSequence};

pub use dqn::{dqn_update, AgentState, QNetwork, ReplayBuffer, Transition, N_ACTIONS};

/// Dimension of [`state_repr`] output: 5 x 5 descriptor summary plus the
/// selected fraction.
pub const STATE_DIM: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Rl,
    Random,
    Augmented,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub tokens: TokenSequence,
    pub utility: f64,
    pub origin: Origin,
}

impl CorpusRecord {
    pub fn new(tokens: TokenSequence, utility: f64, origin: Origin) -> Result<Self> {
        if !(0.0..=1.0).contains(&utility) {
            return Err(Error::Corpus(format!("utility {utility} outside [0,1]")));
        }
        Ok(CorpusRecord {
            tokens,
            utility,
            origin,
        })
    }

    pub fn feature_set(&self) -> BTreeSet<usize> {
        self.tokens.interior().iter().copied().collect()
    }
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    tokens: Vec<usize>,
    utility: f64,
    origin: Origin,
}

/// Writes one JSON object per line; SOS/EOS are not serialized.
pub fn write_corpus<W: Write>(records: &[CorpusRecord], writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for r in records {
        let wire = WireRecord {
            tokens: r.tokens.interior().to_vec(),
            utility: r.utility,
            origin: r.origin,
        };
        serde_json::to_writer(&mut w, &wire)?;
        w.write_all(b"\n").map_err(|e| Error::io("<corpus>", e))?;
    }
    w.flush().map_err(|e| Error::io("<corpus>", e))
}

/// Parses JSON Lines written by [`write_corpus`]. RL and random records
/// must be canonical; augmented ones may be in any order.
pub fn read_corpus<R: BufRead>(reader: R, vocab: &FeatureTokenVocab) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Corpus(format!("line {}: {e}", i + 1)))?;
        let tokens = TokenSequence::from_interior(vocab, &wire.tokens)
            .map_err(|e| Error::Corpus(format!("line {}: {e}", i + 1)))?;
        if wire.origin != Origin::Augmented && !tokens.is_canonical() {
            return Err(Error::Corpus(format!("line {}: tokens not canonical", i + 1)));
        }
        out.push(CorpusRecord::new(tokens, wire.utility, wire.origin)?);
    }
    Ok(out)
}

pub fn save_corpus(records: &[CorpusRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus(records, f)
}

pub fn load_corpus(path: impl AsRef<Path>, vocab: &FeatureTokenVocab) -> Result<Vec<CorpusRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(f), vocab)
}

/// Five descriptors of a column: mean, std, min, max, median.
fn describe(values: &mut [f64]) -> [f64; 5] {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    values.sort_by(f64::total_cmp);
    let min = values[0];
    let max = values[values.len() - 1];
    let mid = values.len() / 2;
    let median = if values.len() % 2 == 0 {
        (values[mid - 1] + values[mid]) / 2.0
    } else {
        values[mid]
    };
    [mean, std, min, max, median]
}

/// Environment state for a selection: per-column descriptors of the
/// selected submatrix, summarized again by the same five descriptors across
/// columns (25 values, descriptor-major), followed by the selected fraction.
/// The empty selection maps to the zero vector.
pub fn state_repr(dataset: &Dataset, selected: &BTreeSet<usize>) -> Vec<f64> {
    StateEncoder::new(dataset).encode(selected)
}

/// [`state_repr`] with the per-column descriptors computed once.
#[derive(Debug, Clone)]
pub struct StateEncoder {
    columns: Vec<[f64; 5]>,
}

impl StateEncoder {
    pub fn new(dataset: &Dataset) -> Self {
        let columns = dataset
            .features()
            .columns()
            .into_iter()
            .map(|c| describe(&mut c.to_vec()))
            .collect();
        StateEncoder { columns }
    }

    pub fn encode(&self, selected: &BTreeSet<usize>) -> Vec<f64> {
        let mut out = vec![0.0; STATE_DIM];
        if selected.is_empty() {
            return out;
        }
        for d in 0..5 {
            let mut row: Vec<f64> = selected.iter().map(|&j| self.columns[j][d]).collect();
            out[d * 5..d * 5 + 5].copy_from_slice(&describe(&mut row));
        }
        out[25] = selected.len() as f64 / self.columns.len() as f64;
        out
    }
}

/// Equal split of `total_reward` over the participating agents; everyone
/// else gets exactly zero.
pub fn assign_rewards(total_reward: f64, participating: &BTreeSet<usize>, all_agents: usize) -> Result<Vec<f64>> {
    if participating.is_empty() {
        return Err(Error::Config("no participating agents".into()));
    }
    if let Some(&i) = participating.iter().find(|&&i| i >= all_agents) {
        return Err(Error::Config(format!("agent {i} out of range")));
    }
    let share = total_reward / participating.len() as f64;
    let mut rewards = vec![0.0; all_agents];
    for &i in participating {
        rewards[i] = share;
    }
    Ok(rewards)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectorConfig {
    pub p_participate: f64,
    pub buffer_capacity: usize,
    pub minibatch: usize,
    pub discount: f64,
    pub target_sync: usize,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    pub epsilon_decay: f64,
    pub hidden: usize,
    pub learning_rate: f64,
    /// Train share of the internal train/validation split of subset A.
    pub internal_ratio: f64,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        CollectorConfig {
            p_participate: 0.5,
            buffer_capacity: 2000,
            minibatch: 32,
            discount: 0.9,
            target_sync: 20,
            epsilon_start: 0.9,
            epsilon_min: 0.05,
            epsilon_decay: 0.99,
            hidden: 64,
            learning_rate: 1e-3,
            internal_ratio: 0.75,
        }
    }
}

impl CollectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("collector: {m}")));
        if !(self.p_participate > 0.0 && self.p_participate <= 1.0) {
            return bad("p_participate must be in (0,1]");
        }
        if self.minibatch == 0 || self.buffer_capacity < self.minibatch {
            return bad("need 1 <= minibatch <= buffer_capacity");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must be in [0,1)");
        }
        if !(0.0 <= self.epsilon_min && self.epsilon_min <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return bad("need 0 <= epsilon_min <= epsilon_start <= 1");
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return bad("epsilon_decay must be in (0,1]");
        }
        if self.hidden == 0 || self.target_sync == 0 || self.learning_rate <= 0.0 {
            return bad("hidden, target_sync and learning_rate must be positive");
        }
        if !(self.internal_ratio > 0.0 && self.internal_ratio < 1.0) {
            return bad("internal_ratio must be in (0,1)");
        }
        Ok(())
    }
}

/// Fixed train/validation split of subset A used for every utility label
/// of a run, with a memo of already-scored subsets.
pub struct SubsetScorer<'a> {
    train: Dataset,
    valid: Dataset,
    model: &'a ModelKind,
    seed: u64,
    cache: HashMap<BTreeSet<usize>, UtilityScore>,
}

impl<'a> SubsetScorer<'a> {
    pub fn new(data_a: &Dataset, internal_ratio: f64, model: &'a ModelKind, seed: u64) -> Result<Self> {
        model.validate()?;
        let (train, valid) = split_ab(data_a, internal_ratio, derive_seed(seed, 0x5_11_7))?;
        Ok(SubsetScorer {
            train,
            valid,
            model,
            seed: derive_seed(seed, 0x5_c0_4e),
            cache: HashMap::new(),
        })
    }

    pub fn score(&mut self, subset: &BTreeSet<usize>) -> Result<UtilityScore> {
        if let Some(s) = self.cache.get(subset) {
            return Ok(*s);
        }
        let s = fit_predict_score(&self.train, &self.valid, subset, self.model, self.seed)?;
        self.cache.insert(subset.clone(), s);
        Ok(s)
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    pub fn valid(&self) -> &Dataset {
        &self.valid
    }
}

/// Per-step diagnostics of an RL collection run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectTrace {
    pub epsilon: Vec<f64>,
    pub participants: Vec<usize>,
    /// Steps whose subset came out empty and got one random feature forced in.
    pub repaired_steps: Vec<usize>,
    /// Mean pre-step DQN loss over the agents that updated, per step.
    pub mean_loss: Vec<Option<f64>>,
}

fn record_for(vocab: &FeatureTokenVocab, subset: &BTreeSet<usize>, score: &UtilityScore, origin: Origin) -> Result<CorpusRecord> {
    CorpusRecord::new(subset_to_sequence(vocab, subset)?, score.value, origin)
}

/// Runs the multi-agent explorer for `epochs` environment steps and returns
/// one record per step. See [`collect_with_trace`].
pub fn collect(data_a: &Dataset, epochs: usize, model: &ModelKind, seed: u64, config: &CollectorConfig) -> Result<Vec<CorpusRecord>> {
    collect_with_trace(data_a, epochs, model, seed, config).map(|(r, _)| r)
}

pub fn collect_with_trace(
    data_a: &Dataset,
    epochs: usize,
    model: &ModelKind,
    seed: u64,
    config: &CollectorConfig,
) -> Result<(Vec<CorpusRecord>, CollectTrace)> {
    if epochs == 0 {
        return Err(Error::Config("collector epochs must be >= 1".into()));
    }
    config.validate()?;
    let n = data_a.n_features();
    let vocab = FeatureTokenVocab::new(n);
    let mut scorer = SubsetScorer::new(data_a, config.internal_ratio, model, seed)?;
    let encoder = StateEncoder::new(data_a);

    let mut init_rng = seeded(derive_seed(seed, 1));
    let mut agents: Vec<AgentState> = (0..n)
        .map(|_| {
            AgentState::new(
                STATE_DIM,
                config.hidden,
                config.buffer_capacity,
                config.epsilon_start,
                config.learning_rate,
                &mut init_rng,
            )
        })
        .collect();
    let mut env_rng = seeded(derive_seed(seed, 2));
    let mut act_rng = seeded(derive_seed(seed, 3));
    let mut replay_rng = seeded(derive_seed(seed, 4));

    let mut selected: Vec<bool> = (0..n).map(|_| env_rng.random_bool(0.5)).collect();
    if !selected.iter().any(|&s| s) {
        selected[env_rng.random_range(0..n)] = true;
    }
    let mut subset: BTreeSet<usize> = (0..n).filter(|&i| selected[i]).collect();
    let mut state = Arc::new(encoder.encode(&subset));

    let mut records = Vec::with_capacity(epochs);
    let mut trace = CollectTrace::default();
    for step in 0..epochs {
        let mut participating: BTreeSet<usize> =
            (0..n).filter(|_| env_rng.random_bool(config.p_participate)).collect();
        if participating.is_empty() {
            participating.insert(env_rng.random_range(0..n));
        }
        let mut actions: Vec<usize> = selected.iter().map(|&s| usize::from(s)).collect();
        for &i in &participating {
            actions[i] = agents[i].act(&state, &mut act_rng);
            selected[i] = actions[i] == 1;
        }
        if !selected.iter().any(|&s| s) {
            let forced = env_rng.random_range(0..n);
            selected[forced] = true;
            actions[forced] = 1;
            trace.repaired_steps.push(step);
        }
        subset = (0..n).filter(|&i| selected[i]).collect();
        let score = scorer.score(&subset)?;
        records.push(record_for(&vocab, &subset, &score, Origin::Rl)?);

        let rewards = assign_rewards(score.value, &participating, n)?;
        let next_state = Arc::new(encoder.encode(&subset));
        let mut losses = Vec::new();
        for (i, agent) in agents.iter_mut().enumerate() {
            // Only agents that acted have a transition to learn from. Logging
            // a kept status with reward 0 for the others would teach every
            // agent that staying selected is worthless.
            if participating.contains(&i) {
                agent.buffer.push(Transition {
                    state: Arc::clone(&state),
                    action: actions[i],
                    reward: rewards[i],
                    next_state: Arc::clone(&next_state),
                });
                if let Some(batch) = agent.buffer.sample(config.minibatch, &mut replay_rng) {
                    let batch: Vec<Transition> = batch.into_iter().cloned().collect();
                    let refs: Vec<&Transition> = batch.iter().collect();
                    losses.push(dqn_update(agent, &refs, config.discount));
                }
            }
            agent.epsilon = (agent.epsilon * config.epsilon_decay).max(config.epsilon_min);
        }
        if (step + 1) % config.target_sync == 0 {
            agents.iter_mut().for_each(AgentState::sync_target);
        }
        trace.epsilon.push(agents[0].epsilon);
        trace.participants.push(participating.len());
        trace.mean_loss.push(if losses.is_empty() {
            None
        } else {
            Some(losses.iter().sum::<f64>() / losses.len() as f64)
        });
        state = next_state;
    }
    Ok((records, trace))
}

/// `n` records from subsets where each feature is included independently
/// with probability 1/2 (redrawn if empty), scored like [`collect`].
pub fn random_collect(data_a: &Dataset, n: usize, model: &ModelKind, seed: u64, internal_ratio: f64) -> Result<Vec<CorpusRecord>> {
    if n == 0 {
        return Err(Error::Config("random collector needs n >= 1".into()));
    }
    let p = data_a.n_features();
    let vocab = FeatureTokenVocab::new(p);
    let mut scorer = SubsetScorer::new(data_a, internal_ratio, model, seed)?;
    let mut rng: Rng = seeded(derive_seed(seed, 5));
    (0..n)
        .map(|_| {
            let subset = random_subset(p, &mut rng);
            let score = scorer.score(&subset)?;
            record_for(&vocab, &subset, &score, Origin::Random)
        })
        .collect()
}

/// Bernoulli(1/2) inclusion per feature, redrawn until non-empty.
pub fn random_subset(n_features: usize, rng: &mut Rng) -> BTreeSet<usize> {
    loop {
        let s: BTreeSet<usize> = (0..n_features).filter(|_| rng.random_bool(0.5)).collect();
        if !s.is_empty() {
            return s;
        }
    }
}

/// Mean utility of the best `ceil(len/10)` records.
pub fn top_decile_mean(records: &[CorpusRecord]) -> f64 {
    let mut u: Vec<f64> = records.iter().map(|r| r.utility).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let k = u.len().div_ceil(10).max(1).min(u.len());
    u[..k].iter().sum::<f64>() / k as f64
}
