//! Shuffle augmentation and the joint training loop.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::SliceRandom;

use super::checkpoint::{ModelCheckpoint, TrainingMeta};
use super::model::{Example, Hyperparams, LossParts, SubsetVae};
use crate::collector::{CorpusRecord, Origin};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::vocab::{FeatureTokenVocab, TokenSequence};

/// Each record followed by `n_shuffles` random permutations of its interior
/// tokens, carrying the same utility and tagged [`Origin::Augmented`].
pub fn augment(corpus: &[CorpusRecord], n_shuffles: usize, seed: u64) -> Result<Vec<CorpusRecord>> {
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(corpus.len() * (n_shuffles + 1));
    for r in corpus {
        out.push(r.clone());
        let mut interior = r.tokens.interior().to_vec();
        for _ in 0..n_shuffles {
            interior.shuffle(&mut rng);
            let tokens = r.tokens.permuted(&interior);
            out.push(CorpusRecord::new(tokens, r.utility, Origin::Augmented)?);
        }
    }
    Ok(out)
}

/// Adam with the usual moment constants.
struct Adam {
    lr: f64,
    t: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(vae: &SubsetVae, lr: f64) -> Adam {
        let zeros: Vec<Array2<f64>> = vae.params().iter().map(|(_, a)| Array2::zeros(a.dim())).collect();
        Adam {
            lr,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, vae: &mut SubsetVae, grads: &[Option<Array2<f64>>]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (i, p) in vae.params_mut().values_mut().enumerate() {
            // A parameter the batch did not touch still decays its moments.
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            match &grads[i] {
                Some(g) => {
                    m.zip_mut_with(g, |m, &g| *m = Self::B1 * *m + (1.0 - Self::B1) * g);
                    v.zip_mut_with(g, |v, &g| *v = Self::B2 * *v + (1.0 - Self::B2) * g * g);
                }
                None => {
                    m.mapv_inplace(|m| Self::B1 * m);
                    v.mapv_inplace(|v| Self::B2 * v);
                }
            }
            let lr = self.lr;
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + Self::EPS);
            });
        }
    }
}

/// What one call to [`train_model`] produced.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: SubsetVae,
    /// Mean losses per epoch.
    pub history: Vec<LossParts>,
}

fn examples(corpus: &[CorpusRecord]) -> Vec<Example> {
    corpus
        .iter()
        .map(|r| Example {
            seq: r.tokens.clone(),
            utility: r.utility,
        })
        .collect()
}

/// Trains a fresh model on `corpus` (augment first if wanted).
pub fn train_model(corpus: &[CorpusRecord], n_features: usize, hp: &Hyperparams, seed: u64) -> Result<Trained> {
    train_model_with(corpus, n_features, hp, seed, |_, _| {})
}

/// [`train_model`] with a callback invoked after every epoch with the
/// epoch index and its mean losses.
pub fn train_model_with(
    corpus: &[CorpusRecord],
    n_features: usize,
    hp: &Hyperparams,
    seed: u64,
    mut on_epoch: impl FnMut(usize, &LossParts),
) -> Result<Trained> {
    if corpus.is_empty() {
        return Err(Error::Corpus("cannot train on an empty corpus".into()));
    }
    let vocab = FeatureTokenVocab::new(n_features);
    let distinct: BTreeSet<&[usize]> = corpus.iter().map(|r| r.tokens.tokens()).collect();
    if distinct.len() < 2 {
        return Err(Error::Corpus("training needs at least 2 distinct sequences".into()));
    }
    if let Some(r) = corpus.iter().find(|r| r.tokens.interior().iter().any(|&t| !vocab.is_feature(t))) {
        return Err(Error::ArtifactMismatch(format!(
            "corpus sequence {:?} does not fit a {n_features}-feature vocabulary",
            r.tokens.interior()
        )));
    }
    let mut model = SubsetVae::new(n_features, hp, derive_seed(seed, 0))?;
    let data = examples(corpus);
    let mut adam = Adam::new(&model, hp.learning_rate);
    let mut order_rng = seeded(derive_seed(seed, 1));
    let mut eps_rng = seeded(derive_seed(seed, 2));
    let mut drop_rng = seeded(derive_seed(seed, 3));
    let batch_size = hp.batch_size.min(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(hp.epochs);

    for epoch in 0..hp.epochs {
        order.shuffle(&mut order_rng);
        let mut sums = [0.0; 4];
        for chunk in order.chunks(batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| data[i].clone()).collect();
            let eps = model.sample_epsilon(batch.len(), &mut eps_rng);
            let (parts, grads) = model.loss_and_grads_with(&batch, &eps, Some(&mut drop_rng))?;
            if !parts.total.is_finite() {
                return Err(Error::NonFinite(format!("training loss diverged in epoch {}", epoch + 1)));
            }
            adam.step(&mut model, &grads);
            let w = batch.len() as f64;
            for (s, v) in sums.iter_mut().zip([parts.total, parts.rec, parts.evt, parts.kl]) {
                *s += w * v;
            }
        }
        let n = data.len() as f64;
        let mean = LossParts {
            total: sums[0] / n,
            rec: sums[1] / n,
            evt: sums[2] / n,
            kl: sums[3] / n,
        };
        on_epoch(epoch, &mean);
        history.push(mean);
    }
    Ok(Trained { model, history })
}

/// Trains and packages the result as a checkpoint.
pub fn train(corpus: &[CorpusRecord], n_features: usize, hp: &Hyperparams, seed: u64) -> Result<ModelCheckpoint> {
    let t = train_model(corpus, n_features, hp, seed)?;
    Ok(t.model.to_checkpoint(TrainingMeta {
        seed,
        epochs_run: hp.epochs,
        config_hash: None,
        vocab_hash: None,
        history: t.history,
    }))
}

/// Mean squared error of the evaluator on the corpus at the mean latents.
pub fn evaluator_mse(model: &SubsetVae, corpus: &[CorpusRecord]) -> Result<f64> {
    let seqs: Vec<&TokenSequence> = corpus.iter().map(|r| &r.tokens).collect();
    let mut total = 0.0;
    for (chunk, recs) in seqs.chunks(256).zip(corpus.chunks(256)) {
        for (m, r) in model.encode_means(chunk)?.into_iter().zip(recs) {
            let (v, _) = model.utility_and_gradient(&m)?;
            total += (v - r.utility) * (v - r.utility);
        }
    }
    Ok(total / corpus.len() as f64)
}
