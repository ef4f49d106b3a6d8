//! Score feature subsets with each downstream model: the planted columns,
//! the full table and the noise columns alone.
//!
//! ```text
//! cargo run --release --example downstream_models
//! ```

use std::collections::BTreeSet;

use genfs::dataset::{make_synthetic_planted, split_ab, SyntheticSpec};
use genfs::eval::{fit_predict_score, ModelKind};

fn main() -> genfs::Result<()> {
    let planted = make_synthetic_planted(&SyntheticSpec::new(4, 16, 600, 0.1, 7))?;
    let (a, b) = split_ab(&planted.dataset, 0.8, 7)?;
    let all: BTreeSet<usize> = (0..20).collect();
    let noise: BTreeSet<usize> = all.difference(&planted.informative).copied().collect();

    let models = [
        ("random forest (50 trees)", ModelKind::default()),
        ("single tree", ModelKind::SingleTree { max_depth: 8, min_leaf: 2 }),
        ("7 nearest neighbours", ModelKind::KNearest { k: 7 }),
    ];
    println!("{:<26} {:>9} {:>9} {:>9}", "model", "planted", "all", "noise");
    for (label, m) in &models {
        let score = |s: &BTreeSet<usize>| fit_predict_score(&a, &b, s, m, 0).map(|u| u.raw);
        println!(
            "{:<26} {:>9.4} {:>9.4} {:>9.4}",
            label,
            score(&planted.informative)?,
            score(&all)?,
            score(&noise)?
        );
    }
    println!("(1 - relative absolute error on subset B; higher is better)");
    Ok(())
}
