//! Cross-module properties checked over many random inputs.

use std::collections::BTreeSet;

use proptest::prelude::*;

use genfs::collector::{read_corpus, write_corpus, CorpusRecord, Origin};
use genfs::dataset::{make_synthetic_planted, split_ab, SyntheticSpec};
use genfs::eval::{fit_predict_score, ModelKind};
use genfs::vae::augment;
use genfs::vocab::{sequence_to_subset, subset_to_sequence, FeatureTokenVocab};

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn split_is_an_exact_partition(n in 4usize..120, ratio in 0.05f64..0.95, seed in any::<u64>()) {
        let p = make_synthetic_planted(&SyntheticSpec::new(1, 1, n, 0.1, seed)).unwrap();
        if let Ok((a, b)) = split_ab(&p.dataset, ratio, seed) {
            let ra: BTreeSet<usize> = a.row_ids().iter().copied().collect();
            let rb: BTreeSet<usize> = b.row_ids().iter().copied().collect();
            prop_assert!(ra.is_disjoint(&rb));
            prop_assert_eq!(ra.len() + rb.len(), n);
            prop_assert_eq!(ra.len(), (ratio * n as f64).floor() as usize);
            prop_assert_eq!(ra.union(&rb).copied().collect::<Vec<_>>(), (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn corpus_survives_augmentation_and_a_file_round_trip(
        sets in prop::collection::vec(prop::collection::btree_set(0usize..9, 1..9), 1..6),
        utility in 0.0f64..=1.0,
        shuffles in 0usize..4,
        seed in any::<u64>(),
    ) {
        let vocab = FeatureTokenVocab::new(9);
        let corpus: Vec<CorpusRecord> = sets
            .iter()
            .map(|s| CorpusRecord::new(subset_to_sequence(&vocab, s).unwrap(), utility, Origin::Rl).unwrap())
            .collect();
        let augmented = augment(&corpus, shuffles, seed).unwrap();
        prop_assert_eq!(augmented.len(), corpus.len() * (shuffles + 1));
        let mut bytes = Vec::new();
        write_corpus(&augmented, &mut bytes).unwrap();
        let back = read_corpus(bytes.as_slice(), &vocab).unwrap();
        prop_assert_eq!(&back, &augmented);
        for (i, r) in back.iter().enumerate() {
            let set = sequence_to_subset(&vocab, &r.tokens).unwrap();
            prop_assert_eq!(&set, &sets[i / (shuffles + 1)]);
        }
    }
}

#[test]
fn informative_columns_beat_fake_columns_without_noise() {
    let p = make_synthetic_planted(&SyntheticSpec::new(3, 6, 300, 0.0, 11)).unwrap();
    let (a, b) = split_ab(&p.dataset, 0.7, 11).unwrap();
    let fake: BTreeSet<usize> = (0..9).filter(|i| !p.informative.contains(i)).collect();
    let model = ModelKind::default();
    let real = fit_predict_score(&a, &b, &p.informative, &model, 0).unwrap();
    let noise = fit_predict_score(&a, &b, &fake, &model, 0).unwrap();
    assert!(real.raw > noise.raw, "{} <= {}", real.raw, noise.raw);
}
