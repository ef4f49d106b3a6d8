//! Gradient ascent in the learned latent space: encode the best corpus
//! subsets, climb the utility predictor, decode, and re-score on subset A.
//!
//! ```text
//! cargo run --release --example latent_search
//! ```

use genfs::collector::{collect, CollectorConfig};
use genfs::dataset::{make_synthetic_planted, split_ab, SyntheticSpec};
use genfs::eval::ModelKind;
use genfs::search::{ascend, select_best, LinearField, SearchConfig};
use genfs::vae::{augment, train_model, Hyperparams, LatentPoint};

fn main() -> genfs::Result<()> {
    // The ascent rule on a field with a known gradient.
    let field = LinearField { w: vec![1.0, -2.0], b: 0.0 };
    let config = SearchConfig { n_steps: 3, eta: 0.1, ..SearchConfig::default() };
    let (end, trace) = ascend(&field, &LatentPoint { e_star: vec![0.0, 0.0] }, &config)?;
    println!("linear field: {:?} -> {:?}, value {:.2} -> {:.2}", [0.0, 0.0], end.e_star, trace.start_value, trace.end_value);

    let planted = make_synthetic_planted(&SyntheticSpec::new(4, 12, 500, 0.1, 9))?;
    let (a, _) = split_ab(&planted.dataset, 0.8, 9)?;
    let model_kind = ModelKind::default();
    let corpus = collect(&a, 120, &model_kind, 9, &CollectorConfig::default())?;
    let hp = Hyperparams { epochs: 10, ..Hyperparams::desk() };
    let vae = train_model(&augment(&corpus, hp.n_shuffles, 9)?, 16, &hp, 9)?.model;

    let search = SearchConfig { top_k: 8, ..SearchConfig::default() };
    let outcome = select_best(&vae, &corpus, &a, &model_kind, &search, 0.75, 9)?;
    println!("{:<44} {:>7}   {:<44} {:>7} {:>15}", "seed subset", "score", "decoded subset", "score", "predicted");
    for c in &outcome.candidates {
        println!(
            "{:<44} {:>7.4}   {:<44} {:>7.4} {:>7.4}->{:.4}",
            format!("{:?}", c.seed_set),
            c.seed_utility,
            format!("{:?}", c.decoded_set),
            c.score.value,
            c.predicted_before,
            c.predicted_after
        );
    }
    for s in &outcome.skipped {
        println!("skipped {:?}: {}", s.seed_set, s.reason);
    }
    println!("best: {:?} (planted {:?})", outcome.best.decoded_set, planted.informative);
    Ok(())
}
