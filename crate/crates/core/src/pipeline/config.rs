//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collector::CollectorConfig;
use crate::dataset::{SyntheticSpec, TaskKind};
use crate::error::{Error, Result};
use crate::eval::ModelKind;
use crate::search::SearchConfig;
use crate::vae::Hyperparams;

/// Environment variable that overrides the output directory of the config
/// file (a `--out-dir` flag still wins).
pub const OUT_DIR_ENV: &str = "GENFS_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectorKind {
    Rl,
    Random,
}

impl std::str::FromStr for CollectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rl" => Ok(CollectorKind::Rl),
            "random" => Ok(CollectorKind::Random),
            other => Err(Error::Config(format!("unknown collector `{other}` (expected rl or random)"))),
        }
    }
}

/// Where the data comes from: a CSV file or the planted-feature generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Target column name, or `#<index>` for a zero-based column index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            target: None,
            task: None,
            synthetic: Some(SyntheticSpec::new(5, 45, 1000, 0.1, 0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectSection {
    pub kind: CollectorKind,
    /// Environment steps for the RL collector, records for the random one.
    pub epochs: usize,
    #[serde(flatten)]
    pub dqn: CollectorConfig,
}

impl Default for CollectSection {
    fn default() -> Self {
        CollectSection {
            kind: CollectorKind::Rl,
            epochs: 300,
            dqn: CollectorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Also run the whole pipeline on a random-collector corpus and report
    /// its subset-B score as a control.
    pub random_control: bool,
}

/// Everything a run needs. Defaults reproduce the planted-feature case
/// study with the desk-scale model profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Not part of the config hash; see [`RunConfig::resolve_out_dir`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Share of rows in subset A.
    pub ratio_a: f64,
    pub model: ModelKind,
    pub data: DataConfig,
    pub collect: CollectSection,
    /// Keys given here override a base profile: the desk profile, or the
    /// full-size defaults with `profile = "full"`.
    #[serde(deserialize_with = "train_section")]
    pub train: Hyperparams,
    pub search: SearchConfig,
    pub report: ReportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: None,
            ratio_a: 0.8,
            model: ModelKind::default(),
            data: DataConfig::default(),
            collect: CollectSection::default(),
            train: Hyperparams::desk(),
            search: SearchConfig::default(),
            report: ReportSection::default(),
        }
    }
}

fn train_section<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Hyperparams, D::Error> {
    use serde::de::Error as _;
    let mut table = serde_json::Map::<String, serde_json::Value>::deserialize(d)?;
    let base = match table.remove("profile") {
        None => Hyperparams::desk(),
        Some(serde_json::Value::String(p)) if p == "desk" => Hyperparams::desk(),
        Some(serde_json::Value::String(p)) if p == "full" => Hyperparams::default(),
        Some(other) => return Err(D::Error::custom(format!("unknown train profile {other} (expected \"desk\" or \"full\")"))),
    };
    let serde_json::Value::Object(mut merged) = serde_json::to_value(base).map_err(D::Error::custom)? else {
        unreachable!("hyperparameters serialize to an object")
    };
    merged.extend(table);
    serde_json::from_value(serde_json::Value::Object(merged)).map_err(D::Error::custom)
}

/// Per-stage configuration hashes (see [`RunConfig::stage_keys`]).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageKeys {
    pub data: String,
    pub collect: String,
    pub train: String,
}

fn digest(value: &impl Serialize) -> String {
    // serde_json maps are sorted, so equal configs give equal bytes.
    let canonical = serde_json::to_value(value).expect("config serializes");
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

/// Values given on the command line; `None` leaves the file value alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    pub target: Option<String>,
    pub task: Option<TaskKind>,
    pub collector: Option<CollectorKind>,
    pub n: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // Relative data paths are relative to the config file.
        if let (Some(p), Some(dir)) = (&cfg.data.path, path.parent()) {
            if p.is_relative() {
                cfg.data.path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies flag overrides. A dataset path replaces a synthetic source.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.dataset {
            self.data.path = Some(p.clone());
            self.data.synthetic = None;
        }
        if let Some(t) = &o.target {
            self.data.target = Some(t.clone());
        }
        if let Some(t) = o.task {
            self.data.task = Some(t);
        }
        if let Some(c) = o.collector {
            self.collect.kind = c;
        }
        if let Some(n) = o.n {
            self.collect.epochs = n;
        }
    }

    /// Output directory: the `--out-dir` flag, then the environment
    /// variable, then the file value, then `./genfs-out`.
    pub fn resolve_out_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(f) = flag {
            return f.to_path_buf();
        }
        if let Some(env) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(env);
        }
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("genfs-out"))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio_a > 0.0 && self.ratio_a < 1.0) {
            return Err(Error::Config("ratio_a must lie in (0, 1)".into()));
        }
        self.model.validate()?;
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => return Err(Error::Config("set either data.path or data.synthetic, not both".into())),
            (None, None) => return Err(Error::Config("no data source: set data.path or data.synthetic".into())),
            (Some(p), None) => {
                if self.data.target.is_none() {
                    return Err(Error::Config("data.target is required with data.path".into()));
                }
                if self.data.task.is_none() {
                    return Err(Error::Config("data.task is required with data.path".into()));
                }
                if !p.is_file() {
                    return Err(Error::Config(format!("dataset {} does not exist", p.display())));
                }
            }
            (None, Some(s)) => s.validate()?,
        }
        if self.collect.epochs == 0 {
            return Err(Error::Config("collect.epochs must be >= 1".into()));
        }
        self.collect.dqn.validate()?;
        self.train.validate()?;
        self.search.validate()
    }

    /// SHA-256 over the canonical JSON of the config without `out_dir`.
    /// Stored in every artifact so stale or foreign files are caught.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        digest(&c)
    }

    /// Hashes of the config sections each artifact depends on. A corpus is
    /// reusable as long as its `collect` key matches, even if training or
    /// search settings changed since.
    pub fn stage_keys(&self) -> StageKeys {
        let data = digest(&serde_json::json!({
            "seed": self.seed,
            "ratio_a": self.ratio_a,
            "data": self.data,
        }));
        let collect = digest(&serde_json::json!({
            "upstream": data,
            "model": self.model,
            "collect": self.collect,
        }));
        let train = digest(&serde_json::json!({
            "upstream": collect,
            "train": self.train,
        }));
        StageKeys { data, collect, train }
    }

    /// The config as echoed into reports (no output directory).
    pub fn echo(&self) -> RunConfig {
        RunConfig {
            out_dir: None,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_run_settings() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.collect.epochs, 300);
        assert_eq!(cfg.search.top_k, 25);
        let hp = Hyperparams::default();
        assert_eq!(
            (hp.token_embed_dim, hp.n_layers_enc, hp.n_layers_dec, hp.n_heads, hp.ffn_dim, hp.latent_dim),
            (64, 2, 2, 8, 256, 64)
        );
        assert_eq!(hp.evaluator_hidden, 200);
        assert_eq!((hp.alpha, hp.beta, hp.gamma), (0.8, 0.2, 0.001));
        assert_eq!((hp.batch_size, hp.epochs, hp.learning_rate, hp.n_shuffles), (1024, 100, 1e-4, 25));
        // The desk profile only rescales; loss weights and augmentation stay.
        let desk = Hyperparams::desk();
        assert_eq!((desk.alpha, desk.beta, desk.gamma, desk.n_shuffles), (0.8, 0.2, 0.001, 25));
    }

    #[test]
    fn parses_partial_file_with_defaults() {
        let cfg = RunConfig::from_toml(
            r#"
            seed = 7
            [collect]
            kind = "random"
            epochs = 40
            p_participate = 0.3
            [train]
            epochs = 3
            [data.synthetic]
            n_real = 3
            n_fake = 7
            n_samples = 100
            noise_std = 0.1
            seed = 2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.collect.kind, CollectorKind::Random);
        assert_eq!(cfg.collect.dqn.p_participate, 0.3);
        assert_eq!(cfg.collect.dqn.buffer_capacity, 2000);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.token_embed_dim, Hyperparams::desk().token_embed_dim);
        assert_eq!(cfg.data.synthetic.as_ref().unwrap().n_fake, 7);
        cfg.validate().unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn train_section_overlays_a_profile() {
        let desk = RunConfig::from_toml("[train]\nepochs = 3").unwrap().train;
        assert_eq!(desk, Hyperparams { epochs: 3, ..Hyperparams::desk() });
        let full = RunConfig::from_toml("[train]\nprofile = \"full\"\ndropout = 0.0").unwrap().train;
        assert_eq!(full, Hyperparams { dropout: 0.0, ..Hyperparams::default() });
        assert!(RunConfig::from_toml("[train]\nprofile = \"huge\"").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(RunConfig::from_toml("[train]\nepoch = 3").is_err());
    }

    #[test]
    fn flags_override_and_hash_ignores_out_dir() {
        let mut cfg = RunConfig::default();
        let h = cfg.hash();
        cfg.out_dir = Some("elsewhere".into());
        assert_eq!(cfg.hash(), h);
        cfg.apply(&Overrides {
            seed: Some(9),
            collector: Some(CollectorKind::Random),
            n: Some(12),
            ..Overrides::default()
        });
        assert_eq!((cfg.seed, cfg.collect.kind, cfg.collect.epochs), (9, CollectorKind::Random, 12));
        assert_ne!(cfg.hash(), h);
        let keys = cfg.stage_keys();
        let mut later = cfg.clone();
        later.train.epochs += 1;
        later.search.eta = 0.1;
        assert_eq!(later.stage_keys().collect, keys.collect);
        assert_ne!(later.stage_keys().train, keys.train);
        cfg.apply(&Overrides {
            dataset: Some("x.csv".into()),
            ..Overrides::default()
        });
        assert!(cfg.data.synthetic.is_none());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn out_dir_precedence() {
        let cfg = RunConfig {
            out_dir: Some("from-file".into()),
            ..RunConfig::default()
        };
        assert_eq!(cfg.resolve_out_dir(Some(Path::new("flag"))), PathBuf::from("flag"));
        // The environment is process-global; only assert the flag-free path
        // when the variable is unset.
        if std::env::var_os(OUT_DIR_ENV).is_none() {
            assert_eq!(cfg.resolve_out_dir(None), PathBuf::from("from-file"));
        }
    }
}
