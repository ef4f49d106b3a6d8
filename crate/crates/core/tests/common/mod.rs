//! Small run configurations shared by the integration tests.

#![allow(dead_code)]

use genfs::dataset::SyntheticSpec;
use genfs::eval::ModelKind;
use genfs::pipeline::RunConfig;
use genfs::vae::Hyperparams;

/// A complete run that finishes in well under a second.
pub fn tiny_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        model: ModelKind::TreeEnsemble {
            n_trees: 8,
            max_depth: 5,
            min_leaf: 2,
        },
        ..RunConfig::default()
    };
    cfg.data.synthetic = Some(SyntheticSpec::new(2, 6, 120, 0.1, seed));
    cfg.collect.epochs = 30;
    cfg.train = Hyperparams {
        token_embed_dim: 8,
        n_heads: 2,
        ffn_dim: 16,
        latent_dim: 4,
        evaluator_hidden: 8,
        epochs: 2,
        n_shuffles: 2,
        ..Hyperparams::desk()
    };
    cfg.search.top_k = 4;
    cfg
}

pub const TINY_TOML: &str = r#"
seed = 5

[model]
kind = "tree_ensemble"
n_trees = 8
max_depth = 5
min_leaf = 2

[data.synthetic]
n_real = 2
n_fake = 6
n_samples = 120
noise_std = 0.1
seed = 5

[collect]
epochs = 30

[train]
token_embed_dim = 8
n_heads = 2
ffn_dim = 16
latent_dim = 4
evaluator_hidden = 8
epochs = 2
n_shuffles = 2

[search]
top_k = 4
"#;
