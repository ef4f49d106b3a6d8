//! Generate a planted-feature dataset, export it as CSV, split it into
//! subsets A and B, and see how a correlation filter ranks the columns.
//!
//! ```text
//! cargo run --release --example planted_data
//! ```

use std::collections::BTreeSet;

use genfs::dataset::{load_csv, make_synthetic_planted, save_csv, split_ab, SyntheticSpec, TaskKind};
use genfs::eval::kbest_baseline;

fn main() -> genfs::Result<()> {
    let planted = make_synthetic_planted(&SyntheticSpec::new(5, 45, 1000, 0.1, 42))?;
    let ds = &planted.dataset;
    println!("{} rows x {} features, target `{}`", ds.n_samples(), ds.n_features(), ds.target_name());
    println!("informative columns: {:?}", planted.informative);
    println!("weights {:?}, interaction {:.3}", planted.weights, planted.interaction_weight);

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("planted.csv");
    save_csv(ds, &path)?;
    let back = load_csv(&path, &"y".into(), TaskKind::Regression)?;
    println!("CSV round trip equal: {}", back.features() == ds.features() && back.target() == ds.target());

    let (a, b) = split_ab(ds, 0.8, 42)?;
    println!("subset A: {} rows, subset B: {} rows", a.n_samples(), b.n_samples());

    let top: BTreeSet<usize> = kbest_baseline(&a, 5)?;
    let hits = top.intersection(&planted.informative).count();
    println!("top-5 by |correlation| on A: {top:?} ({hits}/5 informative)");
    Ok(())
}
