//! Train the sequence model on a small corpus, with and without shuffle
//! augmentation, and compare how well each reconstructs its training
//! subsets. Also round-trips the checkpoint through a file.
//!
//! ```text
//! cargo run --release --example train_subset_model
//! ```

use genfs::collector::random_collect;
use genfs::dataset::{make_synthetic_planted, split_ab, SyntheticSpec};
use genfs::eval::ModelKind;
use genfs::search::reconstruction_rate;
use genfs::vae::{augment, evaluator_mse, load_checkpoint, save_checkpoint, train_model_with, Hyperparams, SubsetVae, TrainingMeta};

fn main() -> genfs::Result<()> {
    let planted = make_synthetic_planted(&SyntheticSpec::new(3, 9, 300, 0.1, 5))?;
    let (a, _) = split_ab(&planted.dataset, 0.8, 5)?;
    let corpus = random_collect(&a, 120, &ModelKind::default(), 5, 0.75)?;

    for n_shuffles in [0, 25] {
        let hp = Hyperparams { n_shuffles, epochs: 15, ..Hyperparams::desk() };
        let data = augment(&corpus, n_shuffles, 5)?;
        println!("n_shuffles = {n_shuffles}: {} training sequences", data.len());
        let trained = train_model_with(&data, 12, &hp, 5, |epoch, l| {
            if epoch % 5 == 4 {
                println!("  epoch {:>2}: total {:.3} rec {:.3} evt {:.4} kl {:.3}", epoch + 1, l.total, l.rec, l.evt, l.kl);
            }
        })?;
        println!(
            "  exact reconstruction {:.1}%, evaluator mse {:.4}",
            100.0 * reconstruction_rate(&trained.model, &corpus)?,
            evaluator_mse(&trained.model, &corpus)?
        );

        let dir = tempfile::tempdir().expect("temp dir");
        let path = dir.path().join("model.ckpt");
        let meta = TrainingMeta { seed: 5, epochs_run: hp.epochs, history: trained.history, ..TrainingMeta::default() };
        save_checkpoint(&trained.model.to_checkpoint(meta), &path)?;
        let restored = SubsetVae::from_checkpoint(&load_checkpoint(&path)?)?;
        println!(
            "  checkpoint: {} bytes, reconstruction after reload {:.1}%",
            std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0),
            100.0 * reconstruction_rate(&restored, &corpus)?
        );
    }
    Ok(())
}
