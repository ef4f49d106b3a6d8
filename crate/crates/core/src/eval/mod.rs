//! Downstream models and the utility score they define for a feature subset.

mod knn;
mod metrics;
mod tree;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TaskKind};
use crate::error::{Error, Result};

pub use knn::KNearest;
pub use metrics::{f1_weighted, one_minus_rae, pearson};
pub use tree::{DecisionTree, ForestParams, MaxFeatures, RandomForest, Target, TreeParams};

/// Downstream predictor used to score feature subsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// Bagged CART trees with per-split feature subsampling
    /// (`ceil(sqrt(p))` for classification, `ceil(p/3)` for regression).
    TreeEnsemble {
        n_trees: usize,
        max_depth: usize,
        min_leaf: usize,
    },
    SingleTree {
        max_depth: usize,
        min_leaf: usize,
    },
    KNearest {
        k: usize,
    },
}

impl Default for ModelKind {
    fn default() -> Self {
        ModelKind::TreeEnsemble {
            n_trees: 50,
            max_depth: 12,
            min_leaf: 2,
        }
    }
}

impl ModelKind {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ModelKind::TreeEnsemble {
                n_trees, max_depth, ..
            } => n_trees >= 1 && max_depth >= 1,
            ModelKind::SingleTree { max_depth, .. } => max_depth >= 1,
            ModelKind::KNearest { k } => k >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid model parameters: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    F1Weighted,
    OneMinusRae,
}

impl Metric {
    pub fn for_task(task: TaskKind) -> Metric {
        match task {
            TaskKind::Classification => Metric::F1Weighted,
            TaskKind::Regression => Metric::OneMinusRae,
        }
    }
}

/// Score of a subset. `raw` is the metric as computed; `value` is `raw`
/// clamped to `[0, 1]` for use as a corpus label, and `clamped` records
/// whether that changed anything.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityScore {
    pub value: f64,
    pub raw: f64,
    pub metric: Metric,
    pub clamped: bool,
}

impl UtilityScore {
    pub fn new(raw: f64, metric: Metric) -> Self {
        let value = raw.clamp(0.0, 1.0);
        UtilityScore {
            value,
            raw,
            metric,
            clamped: value != raw,
        }
    }
}

fn target_kind(ds: &Dataset) -> Target {
    match ds.task() {
        TaskKind::Regression => Target::Regression,
        TaskKind::Classification => Target::Classification {
            n_classes: ds.n_classes(),
        },
    }
}

/// Trains `model` on `train` restricted to `selected` and scores it on
/// `test` with the task's metric. The column order is always ascending, so
/// the result depends on `selected` only as a set.
pub fn fit_predict_score(
    train: &Dataset,
    test: &Dataset,
    selected: &BTreeSet<usize>,
    model: &ModelKind,
    seed: u64,
) -> Result<UtilityScore> {
    if selected.is_empty() {
        return Err(Error::InvalidSubset("empty selection".into()));
    }
    if train.n_features() != test.n_features() || train.task() != test.task() {
        return Err(Error::InvalidDataset(
            "train and test disagree on features or task".into(),
        ));
    }
    if let Some(&i) = selected.iter().find(|&&i| i >= train.n_features()) {
        return Err(Error::InvalidSubset(format!("feature index {i} out of range")));
    }
    if train.n_samples() < 2 {
        return Err(Error::InvalidDataset("training set needs at least 2 rows".into()));
    }
    model.validate()?;
    check_nondegenerate(train)?;

    let cols: Vec<usize> = selected.iter().copied().collect();
    let x_train = train.columns(&cols);
    let x_test = test.columns(&cols);
    let target = target_kind(train);
    let pred = match *model {
        ModelKind::TreeEnsemble {
            n_trees,
            max_depth,
            min_leaf,
        } => {
            let max_features = match train.task() {
                TaskKind::Classification => MaxFeatures::Sqrt,
                TaskKind::Regression => MaxFeatures::Third,
            };
            let params = ForestParams {
                n_trees,
                tree: TreeParams {
                    max_depth,
                    min_leaf,
                    max_features,
                },
                bootstrap: true,
            };
            RandomForest::fit(&x_train, train.target(), target, params, seed).predict(&x_test)
        }
        ModelKind::SingleTree {
            max_depth,
            min_leaf,
        } => {
            let params = TreeParams {
                max_depth,
                min_leaf,
                max_features: MaxFeatures::All,
            };
            let rows: Vec<usize> = (0..train.n_samples()).collect();
            DecisionTree::fit(&x_train, train.target(), &rows, target, params, seed).predict(&x_test)
        }
        ModelKind::KNearest { k } => {
            KNearest::fit(&x_train, train.target(), target, k).predict(&x_test)
        }
    };
    let metric = Metric::for_task(test.task());
    let raw = match metric {
        Metric::F1Weighted => {
            let p: Vec<usize> = pred.iter().map(|&v| v as usize).collect();
            f1_weighted(&test.labels(), &p)?
        }
        Metric::OneMinusRae => one_minus_rae(test.target(), &pred)?,
    };
    Ok(UtilityScore::new(raw, metric))
}

fn check_nondegenerate(train: &Dataset) -> Result<()> {
    let y = train.target();
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::DegenerateTarget(match train.task() {
            TaskKind::Classification => "training labels hold a single class".into(),
            TaskKind::Regression => "training target has zero variance".into(),
        }));
    }
    Ok(())
}

/// Filter baseline: the `k` columns with the largest absolute Pearson
/// correlation to the target (class index used as a number). Ties go to
/// the lower column index.
pub fn kbest_baseline(dataset: &Dataset, k: usize) -> Result<BTreeSet<usize>> {
    let p = dataset.n_features();
    if k == 0 || k > p {
        return Err(Error::Config(format!("k={k} outside 1..={p}")));
    }
    let x = dataset.features();
    let mut scored: Vec<(f64, usize)> = (0..p)
        .map(|j| (pearson(x.column(j).iter().copied(), dataset.target()).abs(), j))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, j)| j).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_synthetic_planted, split_ab, SyntheticSpec};
    use ndarray::{array, Array2};

    fn planted(noise: f64, seed: u64) -> crate::dataset::PlantedDataset {
        make_synthetic_planted(&SyntheticSpec::new(5, 45, 400, noise, seed)).unwrap()
    }

    #[test]
    fn truth_beats_fakes() {
        let p = planted(0.1, 3);
        let (a, b) = split_ab(&p.dataset, 0.75, 1).unwrap();
        let model = ModelKind::TreeEnsemble {
            n_trees: 20,
            max_depth: 8,
            min_leaf: 2,
        };
        let truth = fit_predict_score(&a, &b, &p.informative, &model, 9).unwrap();
        let fakes: BTreeSet<usize> = (0..50).filter(|i| !p.informative.contains(i)).take(5).collect();
        let fake = fit_predict_score(&a, &b, &fakes, &model, 9).unwrap();
        assert!(truth.raw > fake.raw, "{} vs {}", truth.raw, fake.raw);
    }

    #[test]
    fn permutation_invariant_scores() {
        let p = planted(0.1, 4);
        let (a, b) = split_ab(&p.dataset, 0.75, 2).unwrap();
        let s1: BTreeSet<usize> = [4, 1].into_iter().collect();
        let s2: BTreeSet<usize> = [1, 4].into_iter().collect();
        for m in [
            ModelKind::default(),
            ModelKind::SingleTree { max_depth: 4, min_leaf: 2 },
            ModelKind::KNearest { k: 5 },
        ] {
            let x = fit_predict_score(&a, &b, &s1, &m, 5).unwrap();
            let y = fit_predict_score(&a, &b, &s2, &m, 5).unwrap();
            assert_eq!(x.raw.to_bits(), y.raw.to_bits());
        }
    }

    #[test]
    fn degenerate_training_labels_rejected() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let train = Dataset::new(
            x.clone(),
            vec![0.0, 0.0, 1.0, 1.0],
            TaskKind::Classification,
            vec!["a".into()],
            "y",
        )
        .unwrap();
        let one_class = train.select_rows(&[0, 1]);
        let sel: BTreeSet<usize> = [0].into_iter().collect();
        let err = fit_predict_score(&one_class, &train, &sel, &ModelKind::default(), 0);
        assert!(matches!(err, Err(Error::DegenerateTarget(_))));
        let empty = BTreeSet::new();
        assert!(fit_predict_score(&train, &train, &empty, &ModelKind::default(), 0).is_err());
    }

    #[test]
    fn single_tree_equals_unbagged_one_tree_forest() {
        let p = planted(0.1, 6);
        let (a, b) = split_ab(&p.dataset, 0.5, 3).unwrap();
        let cols: Vec<usize> = (0..8).collect();
        let (xa, xb) = (a.columns(&cols), b.columns(&cols));
        let tp = TreeParams {
            max_depth: 6,
            min_leaf: 2,
            max_features: MaxFeatures::All,
        };
        let forest = RandomForest::fit(
            &xa,
            a.target(),
            Target::Regression,
            ForestParams {
                n_trees: 1,
                tree: tp,
                bootstrap: false,
            },
            17,
        );
        let rows: Vec<usize> = (0..a.n_samples()).collect();
        let tree = DecisionTree::fit(&xa, a.target(), &rows, Target::Regression, tp, 99);
        assert_eq!(forest.predict(&xb), tree.predict(&xb));
        let single = fit_predict_score(
            &a,
            &b,
            &cols.iter().copied().collect(),
            &ModelKind::SingleTree {
                max_depth: 6,
                min_leaf: 2,
            },
            0,
        )
        .unwrap();
        let direct = one_minus_rae(b.target(), &tree.predict(&xb)).unwrap();
        assert_eq!(single.raw, direct);
    }

    #[test]
    fn kbest_recovers_linear_truth() {
        let mut spec = SyntheticSpec::new(5, 45, 1000, 0.0, 21);
        spec.interaction = false;
        let p = make_synthetic_planted(&spec).unwrap();
        assert_eq!(kbest_baseline(&p.dataset, 5).unwrap(), p.informative);
        assert_eq!(kbest_baseline(&p.dataset, 50).unwrap().len(), 50);
        assert!(kbest_baseline(&p.dataset, 0).is_err());
        assert!(kbest_baseline(&p.dataset, 51).is_err());
    }

    #[test]
    fn kbest_constant_column_ranks_last() {
        let x = Array2::from_shape_fn((6, 3), |(i, j)| match j {
            0 => 1.0,
            1 => i as f64,
            _ => (i % 2) as f64,
        });
        let ds = Dataset::new(
            x,
            (0..6).map(|i| i as f64).collect(),
            TaskKind::Regression,
            vec!["c".into(), "lin".into(), "alt".into()],
            "y",
        )
        .unwrap();
        assert_eq!(kbest_baseline(&ds, 2).unwrap(), [1, 2].into_iter().collect());
    }

    #[test]
    fn clamp_flag() {
        let s = UtilityScore::new(-0.3, Metric::OneMinusRae);
        assert_eq!((s.value, s.clamped), (0.0, true));
        let s = UtilityScore::new(0.4, Metric::OneMinusRae);
        assert_eq!((s.value, s.clamped), (0.4, false));
    }
}
