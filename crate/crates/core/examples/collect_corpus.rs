//! Explore subsets with the multi-agent Q-learning collector and compare
//! the resulting corpus with random exploration of the same size.
//!
//! ```text
//! cargo run --release --example collect_corpus [steps]
//! ```

use genfs::collector::{collect_with_trace, random_collect, top_decile_mean, write_corpus, CollectorConfig};
use genfs::dataset::{make_synthetic_planted, split_ab, SyntheticSpec};
use genfs::eval::ModelKind;

fn main() -> genfs::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let planted = make_synthetic_planted(&SyntheticSpec::new(5, 25, 600, 0.1, 3))?;
    let (a, _b) = split_ab(&planted.dataset, 0.8, 3)?;
    let model = ModelKind::default();
    let config = CollectorConfig::default();

    let (rl, trace) = collect_with_trace(&a, steps, &model, 3, &config)?;
    let random = random_collect(&a, rl.len(), &model, 3, config.internal_ratio)?;
    println!("{} records each", rl.len());
    println!("top-decile utility: agents {:.4}, random {:.4}", top_decile_mean(&rl), top_decile_mean(&random));
    println!(
        "exploration rate {:.3} -> {:.3}; {} empty selections repaired",
        trace.epsilon.first().copied().unwrap_or(0.0),
        trace.epsilon.last().copied().unwrap_or(0.0),
        trace.repaired_steps.len()
    );

    let best = rl.iter().max_by(|x, y| x.utility.total_cmp(&y.utility)).expect("non-empty corpus");
    let hits = best.feature_set().intersection(&planted.informative).count();
    println!("best subset: {:?} (utility {:.4}, {hits}/5 planted)", best.feature_set(), best.utility);

    let mut jsonl = Vec::new();
    write_corpus(&rl[..3], &mut jsonl)?;
    print!("first records as JSON Lines:\n{}", String::from_utf8_lossy(&jsonl));
    Ok(())
}
