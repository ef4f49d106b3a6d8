//! Gradient-steered search in the latent space and decoding back to
//! feature subsets.
//!
//! The best corpus sequences are encoded, pushed uphill along the
//! evaluator's gradient, decoded greedily until EOS, and the decoded sets
//! are re-scored with the downstream model on subset A.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::collector::{CorpusRecord, SubsetScorer};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{ModelKind, UtilityScore};
use crate::vae::{LatentPoint, SubsetVae};
use crate::vocab::{FeatureTokenVocab, Token, TokenSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Number of corpus sequences to start from.
    pub top_k: usize,
    /// Ascent step size.
    pub eta: f64,
    /// Ascent iterations per seed.
    pub n_steps: usize,
    /// Cap on the decoded wire length; `None` means `n_features + 2`.
    pub max_decode_len: Option<usize>,
    /// Start from the encoder mean (`epsilon = 0`) instead of a sample.
    pub use_mean_latent: bool,
    /// Halve the step (up to 5 times) instead of accepting a decrease.
    pub safeguard: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            top_k: 25,
            eta: 0.05,
            n_steps: 10,
            max_decode_len: None,
            use_mean_latent: true,
            safeguard: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::Config("eta must be > 0".into()));
        }
        if self.max_decode_len.is_some_and(|l| l < 2) {
            return Err(Error::Config("max_decode_len must be >= 2".into()));
        }
        Ok(())
    }
}

/// Something with a value and gradient over latent space. The trained
/// evaluator is the real one; tests plug in closed forms.
pub trait UtilityField {
    fn value_and_gradient(&self, e: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl UtilityField for SubsetVae {
    fn value_and_gradient(&self, e: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.utility_and_gradient(e)
    }
}

/// `w . e + b`.
#[derive(Debug, Clone)]
pub struct LinearField {
    pub w: Vec<f64>,
    pub b: f64,
}

impl UtilityField for LinearField {
    fn value_and_gradient(&self, e: &[f64]) -> Result<(f64, Vec<f64>)> {
        if e.len() != self.w.len() {
            return Err(Error::LengthMismatch(e.len(), self.w.len()));
        }
        let v = self.w.iter().zip(e).map(|(w, x)| w * x).sum::<f64>() + self.b;
        Ok((v, self.w.clone()))
    }
}

/// How an ascent went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentTrace {
    pub start_value: f64,
    pub end_value: f64,
    /// Accepted steps.
    pub steps_taken: usize,
    /// Total number of step halvings.
    pub halvings: usize,
    /// The ascent stopped early because no halved step improved.
    pub stalled: bool,
}

const MAX_HALVINGS: usize = 5;

/// Iterates `e <- e + eta * grad(e)` for `config.n_steps` steps. With the
/// safeguard on, a step that would lower the value is retried at half the
/// size up to five times and otherwise abandoned, so the returned value
/// never drops below the start.
pub fn ascend(field: &impl UtilityField, latent: &LatentPoint, config: &SearchConfig) -> Result<(LatentPoint, AscentTrace)> {
    let mut e = latent.e_star.clone();
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("starting latent".into()));
    }
    let (start, mut grad) = field.value_and_gradient(&e)?;
    let mut trace = AscentTrace {
        start_value: start,
        end_value: start,
        steps_taken: 0,
        halvings: 0,
        stalled: false,
    };
    let mut value = start;
    for _ in 0..config.n_steps {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("evaluator gradient".into()));
        }
        let mut eta = config.eta;
        let mut accepted = None;
        for attempt in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = e.iter().zip(&grad).map(|(x, g)| x + eta * g).collect();
            let (v, g) = field.value_and_gradient(&cand)?;
            if !config.safeguard || v >= value {
                accepted = Some((cand, v, g));
                break;
            }
            if attempt < MAX_HALVINGS {
                eta *= 0.5;
                trace.halvings += 1;
            }
        }
        match accepted {
            Some((cand, v, g)) => {
                e = cand;
                value = v;
                grad = g;
                trace.steps_taken += 1;
            }
            None => {
                // The same gradient would be tried again; nothing left to do.
                trace.stalled = true;
                break;
            }
        }
    }
    trace.end_value = value;
    Ok((LatentPoint { e_star: e }, trace))
}

/// Result of greedy decoding: the raw token stream and the set it denotes.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// Tokens produced after SOS, including EOS if one was produced.
    pub raw: Vec<Token>,
    pub sequence: TokenSequence,
}

/// Applies the autostop rule to a raw decode: cut at the first EOS, drop
/// special tokens, sort and deduplicate.
pub fn truncate_decoded(vocab: &FeatureTokenVocab, raw: &[Token]) -> Result<TokenSequence> {
    let kept: BTreeSet<Token> = raw
        .iter()
        .take_while(|&&t| t != vocab.eos())
        .copied()
        .filter(|&t| vocab.is_feature(t))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyGeneration);
    }
    let interior: Vec<Token> = kept.into_iter().collect();
    TokenSequence::from_interior(vocab, &interior)
}

/// Greedy decoding from SOS until EOS or until the sequence reaches
/// `max_len` wire tokens.
pub fn generate(model: &SubsetVae, latent: &LatentPoint, max_len: usize) -> Result<Generated> {
    let vocab = model.vocab();
    let max_len = max_len.min(vocab.max_len());
    let mut prefix = vec![vocab.sos()];
    let mut raw = Vec::new();
    while prefix.len() < max_len {
        let p = model.decode_step(latent, &prefix)?;
        let mut best = 0;
        for (t, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = t;
            }
        }
        raw.push(best);
        if best == vocab.eos() {
            break;
        }
        prefix.push(best);
    }
    let sequence = truncate_decoded(vocab, &raw)?;
    Ok(Generated { raw, sequence })
}

/// Share of the corpus's distinct subsets that decode back to exactly the
/// same set from their mean latent. Decodes that fail to form a valid
/// sequence count as misses.
pub fn reconstruction_rate(model: &SubsetVae, corpus: &[CorpusRecord]) -> Result<f64> {
    let distinct: BTreeSet<BTreeSet<usize>> = corpus.iter().map(|r| r.feature_set()).collect();
    if distinct.is_empty() {
        return Err(Error::Corpus("cannot measure reconstruction on an empty corpus".into()));
    }
    let vocab = model.vocab().clone();
    let mut hits = 0;
    for set in &distinct {
        let seq = crate::vocab::subset_to_sequence(&vocab, set)?;
        let latent = model.encode(&seq)?.mean();
        if let Ok(g) = generate(model, &latent, vocab.max_len()) {
            if crate::vocab::sequence_to_subset(&vocab, &g.sequence)? == *set {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / distinct.len() as f64)
}

/// Highest-utility distinct subsets of the corpus, best first. Duplicate
/// sets keep their best utility; ties prefer smaller sets, then the
/// lexicographically smaller token list.
pub fn select_seeds(corpus: &[CorpusRecord], k: usize) -> Result<Vec<(TokenSequence, f64)>> {
    if corpus.is_empty() {
        return Err(Error::Corpus("cannot pick seeds from an empty corpus".into()));
    }
    let mut best: BTreeMap<Vec<Token>, (TokenSequence, f64)> = BTreeMap::new();
    for r in corpus {
        let canon = r.tokens.canonical();
        let key = canon.interior().to_vec();
        match best.get_mut(&key) {
            Some(entry) if entry.1 >= r.utility => {}
            Some(entry) => entry.1 = r.utility,
            None => {
                best.insert(key, (canon, r.utility));
            }
        }
    }
    let mut seeds: Vec<(TokenSequence, f64)> = best.into_values().collect();
    seeds.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(a.0.interior().len().cmp(&b.0.interior().len()))
            .then_with(|| a.0.interior().cmp(b.0.interior()))
    });
    seeds.truncate(k);
    Ok(seeds)
}

/// One seed's trip through ascent, decoding and scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub seed_set: Vec<usize>,
    pub seed_utility: f64,
    pub ascended_latent: Vec<f64>,
    /// Raw greedy decode (after SOS).
    pub generated: Vec<Token>,
    pub decoded_set: Vec<usize>,
    pub score: UtilityScore,
    pub predicted_before: f64,
    pub predicted_after: f64,
    pub ascent: AscentTrace,
}

/// A seed that produced no candidate, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSeed {
    pub seed_set: Vec<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: CandidateResult,
    pub candidates: Vec<CandidateResult>,
    pub skipped: Vec<SkippedSeed>,
}

fn better(a: &CandidateResult, b: &CandidateResult) -> bool {
    match a.score.value.total_cmp(&b.score.value) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => {
            (a.decoded_set.len(), &a.decoded_set) < (b.decoded_set.len(), &b.decoded_set)
        }
    }
}

/// Full search: seeds, ascent, decoding, and selection by downstream score
/// on the internal split of `data_a` (same split and seed convention as
/// the collector, so scores are comparable to corpus labels).
pub fn select_best(
    model: &SubsetVae,
    corpus: &[CorpusRecord],
    data_a: &Dataset,
    model_kind: &ModelKind,
    config: &SearchConfig,
    internal_ratio: f64,
    seed: u64,
) -> Result<SearchOutcome> {
    config.validate()?;
    if data_a.n_features() != model.vocab().n_features() {
        return Err(Error::ArtifactMismatch(format!(
            "dataset has {} features, model vocabulary {}",
            data_a.n_features(),
            model.vocab().n_features()
        )));
    }
    let seeds = select_seeds(corpus, config.top_k)?;
    let mut scorer = SubsetScorer::new(data_a, internal_ratio, model_kind, seed)?;
    let mut noise_rng = crate::rng::seeded(crate::rng::derive_seed(seed, 0x5ea4c));
    let max_len = config.max_decode_len.unwrap_or(model.vocab().max_len());

    let mut candidates = Vec::new();
    let mut skipped = Vec::new();
    for (seq, utility) in seeds {
        let seed_set = seq.interior().to_vec();
        let dist = model.encode(&seq)?;
        let start = if config.use_mean_latent {
            dist.mean()
        } else {
            let eps = model.sample_epsilon(1, &mut noise_rng);
            crate::vae::reparameterize(&dist, eps.as_slice().expect("row"))?
        };
        let attempt = ascend(model, &start, config).and_then(|(point, trace)| {
            let generated = generate(model, &point, max_len)?;
            Ok((point, trace, generated))
        });
        let (point, trace, generated) = match attempt {
            Ok(x) => x,
            Err(e @ (Error::NonFinite(_) | Error::EmptyGeneration)) => {
                skipped.push(SkippedSeed {
                    seed_set,
                    reason: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let decoded: BTreeSet<usize> = generated.sequence.interior().iter().copied().collect();
        let score = scorer.score(&decoded)?;
        candidates.push(CandidateResult {
            seed_set,
            seed_utility: utility,
            ascended_latent: point.e_star,
            generated: generated.raw,
            decoded_set: decoded.into_iter().collect(),
            score,
            predicted_before: trace.start_value,
            predicted_after: trace.end_value,
            ascent: trace,
        });
    }
    let best = candidates
        .iter()
        .fold(None::<&CandidateResult>, |acc, c| match acc {
            Some(b) if !better(c, b) => Some(b),
            _ => Some(c),
        })
        .cloned()
        .ok_or_else(|| {
            Error::Search("no seed decoded to a non-empty subset; inspect the corpus and the trained model".into())
        })?;
    Ok(SearchOutcome {
        best,
        candidates,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collector::Origin;
    use crate::vocab::subset_to_sequence;

    fn rec(v: &FeatureTokenVocab, s: &[usize], u: f64) -> CorpusRecord {
        let set: BTreeSet<usize> = s.iter().copied().collect();
        CorpusRecord::new(subset_to_sequence(v, &set).unwrap(), u, Origin::Rl).unwrap()
    }

    #[test]
    fn seeds_rank_and_dedupe() {
        let v = FeatureTokenVocab::new(6);
        let corpus = vec![rec(&v, &[0, 1, 2], 0.8), rec(&v, &[3], 0.9), rec(&v, &[4, 5], 0.8)];
        let s = select_seeds(&corpus, 2).unwrap();
        assert_eq!(s[0].0.interior(), &[3]);
        assert_eq!(s[1].0.interior(), &[4, 5]);

        let dup = vec![
            rec(&v, &[1, 2], 0.7),
            CorpusRecord::new(TokenSequence::from_interior(&v, &[2, 1]).unwrap(), 0.9, Origin::Augmented).unwrap(),
        ];
        let s = select_seeds(&dup, 25).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].0.interior(), s[0].1), (&[1usize, 2][..], 0.9));
        assert!(select_seeds(&[], 3).is_err());
    }

    #[test]
    fn linear_field_single_step_is_exact() {
        let f = LinearField {
            w: vec![1.0, -2.0, 0.5],
            b: 0.1,
        };
        let e = LatentPoint {
            e_star: vec![0.3, 0.2, -0.1],
        };
        let cfg = SearchConfig {
            n_steps: 1,
            ..SearchConfig::default()
        };
        let (out, tr) = ascend(&f, &e, &cfg).unwrap();
        let expect: Vec<f64> = e.e_star.iter().zip(&f.w).map(|(x, w)| x + 0.05 * w).collect();
        assert_eq!(out.e_star, expect);
        assert_eq!(tr.steps_taken, 1);
        let cfg0 = SearchConfig {
            n_steps: 0,
            ..SearchConfig::default()
        };
        assert_eq!(ascend(&f, &e, &cfg0).unwrap().0, e);
    }

    /// `-(x - 1)^2`: overshooting steps must be halved.
    struct Bowl;
    impl UtilityField for Bowl {
        fn value_and_gradient(&self, e: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((-(e[0] - 1.0).powi(2), vec![-2.0 * (e[0] - 1.0)]))
        }
    }

    #[test]
    fn safeguard_never_decreases() {
        let e = LatentPoint { e_star: vec![0.0] };
        let cfg = SearchConfig {
            eta: 5.0,
            n_steps: 20,
            ..SearchConfig::default()
        };
        let (out, tr) = ascend(&Bowl, &e, &cfg).unwrap();
        assert!(tr.end_value >= tr.start_value);
        assert!(tr.halvings > 0);
        assert!((out.e_star[0] - 1.0).abs() < 1.0);
        let loose = SearchConfig {
            safeguard: false,
            ..cfg
        };
        let (_, tr) = ascend(&Bowl, &e, &loose).unwrap();
        assert!(tr.end_value < tr.start_value);
    }

    #[test]
    fn autostop_rules() {
        let v = FeatureTokenVocab::new(10);
        let s = truncate_decoded(&v, &[2, 6, 5, v.eos(), 8]).unwrap();
        assert_eq!(s.interior(), &[2, 5, 6]);
        assert_eq!(truncate_decoded(&v, &[3, 3, v.eos()]).unwrap().interior(), &[3]);
        assert_eq!(truncate_decoded(&v, &[4, 1, 7]).unwrap().interior(), &[1, 4, 7]);
        assert!(matches!(truncate_decoded(&v, &[v.eos(), 1]), Err(Error::EmptyGeneration)));
        assert!(matches!(truncate_decoded(&v, &[v.sos(), v.pad()]), Err(Error::EmptyGeneration)));
    }
}
