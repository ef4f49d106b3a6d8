//! End-to-end orchestration: collect → train → select, with every artifact
//! on disk so stages can run separately and be resumed.
//!
//! Each stage reads its inputs from the output directory and checks them
//! against the current configuration before use. A staged run and a
//! one-shot [`Workspace::pipeline`] run therefore produce the same report
//! bytes (apart from the `timings` object).

mod audit;
mod config;
mod inspect;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use audit::{rows_digest, AccessEvent, RowAudit, SealedSplit, SplitRecord};
pub use inspect::inspect;
pub use config::{CollectSection, CollectorKind, DataConfig, Overrides, ReportSection, RunConfig, StageKeys, OUT_DIR_ENV};
pub use report::{
    mask_timings, ChosenSubset, CorpusSummary, DatasetSummary, KBestControl, RunReport, ScoresB, SubsetScore,
    TrainingSummary, TruthRecovery,
};

use crate::collector::{collect, load_corpus, random_collect, save_corpus, top_decile_mean, CorpusRecord};
use crate::dataset::{load_csv, make_synthetic_planted, split_ab, Dataset, TargetColumn};
use crate::error::{Error, Result};
use crate::eval::{fit_predict_score, kbest_baseline, Metric};
use crate::search::select_best;
use crate::vae::{augment, load_checkpoint, save_checkpoint, train_model_with, LossParts, ModelCheckpoint, SubsetVae, TrainingMeta};
use crate::vocab::FeatureTokenVocab;

/// File names inside the output directory.
pub mod files {
    pub const SPLIT: &str = "split.json";
    pub const CORPUS: &str = "corpus.jsonl";
    pub const CORPUS_META: &str = "corpus.meta.json";
    pub const CHECKPOINT: &str = "model.ckpt";
    pub const LOSS_HISTORY: &str = "loss_history.csv";
    pub const REPORT: &str = "report.json";
    /// Subdirectory holding the random-collector control run.
    pub const CONTROL_DIR: &str = "control";
}

/// Pipeline stage, used to tag failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Data,
    Collect,
    Train,
    Select,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Data => "data",
            Stage::Collect => "collect",
            Stage::Train => "train",
            Stage::Select => "select",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Stage> {
        match s {
            "collect" => Ok(Stage::Collect),
            "train" => Ok(Stage::Train),
            "select" => Ok(Stage::Select),
            other => Err(Error::Config(format!("unknown stage `{other}` (expected collect, train or select)"))),
        }
    }
}

/// A failure tagged with the stage it happened in.
#[derive(Debug, thiserror::Error)]
#[error("{} stage failed: {source}", stage.name())]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    /// Process exit code: 2 config, 3 data, 4 collect, 5 train, 6 select,
    /// 7 inconsistent or foreign artifacts.
    pub fn exit_code(&self) -> i32 {
        match (&self.source, self.stage) {
            (Error::ArtifactMismatch(_), _) => 7,
            (Error::Config(_), _) | (_, Stage::Config) => 2,
            (_, Stage::Data) => 3,
            (_, Stage::Collect) => 4,
            (_, Stage::Train) => 5,
            (_, Stage::Select) => 6,
        }
    }
}

trait Tag<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> Tag<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

/// The dataset a run works on, plus the planted truth when synthetic.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub truth: Option<BTreeSet<usize>>,
    /// `synthetic` or the CSV path as configured.
    pub source: String,
}

fn parse_target(s: &str) -> TargetColumn {
    match s.strip_prefix('#').and_then(|i| i.parse().ok()) {
        Some(i) => TargetColumn::Index(i),
        None => TargetColumn::Name(s.to_string()),
    }
}

/// Loads (or generates) the configured dataset.
pub fn load_data(cfg: &RunConfig) -> Result<LoadedData> {
    match (&cfg.data.path, &cfg.data.synthetic) {
        (None, Some(spec)) => {
            let p = make_synthetic_planted(spec)?;
            Ok(LoadedData {
                dataset: p.dataset,
                truth: Some(p.informative),
                source: "synthetic".into(),
            })
        }
        (Some(path), None) => {
            let target = cfg.data.target.as_deref().ok_or_else(|| Error::Config("data.target missing".into()))?;
            let task = cfg.data.task.ok_or_else(|| Error::Config("data.task missing".into()))?;
            Ok(LoadedData {
                dataset: load_csv(path, &parse_target(target), task)?,
                truth: None,
                source: path.display().to_string(),
            })
        }
        _ => Err(Error::Config("exactly one of data.path and data.synthetic must be set".into())),
    }
}

/// Identifies the feature vocabulary by count and column names, so a
/// corpus or model built on a different table is caught even when the
/// column count happens to agree.
pub fn vocab_hash(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(dataset.n_features().to_string().as_bytes());
    for name in dataset.feature_names() {
        h.update(b"\n");
        h.update(name.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Sidecar written next to the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    /// Collect-stage key of the configuration that produced the corpus.
    pub config_hash: String,
    pub seed: u64,
    pub vocab_hash: String,
    pub n_features: usize,
    pub collector: CollectorKind,
    pub n_records: usize,
    /// Row reads made while collecting.
    pub access: Vec<AccessEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectSummary {
    pub records: usize,
    pub top_decile_mean: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub corpus_records: usize,
    pub augmented_records: usize,
    pub history: Vec<LossParts>,
    pub seconds: f64,
}

/// Data split and sealed subsets for one stage.
struct Prepared {
    data: LoadedData,
    split: SealedSplit,
    vocab_hash: String,
}

/// A configured run bound to an output directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    config: RunConfig,
    out_dir: PathBuf,
    keys: StageKeys,
    verbose: bool,
}

impl Workspace {
    /// Validates the configuration and creates the output directory.
    pub fn new(config: RunConfig, out_dir: impl Into<PathBuf>) -> StageResult<Workspace> {
        config.validate().at(Stage::Config)?;
        let out_dir = out_dir.into();
        fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e)).at(Stage::Config)?;
        Ok(Workspace {
            keys: config.stage_keys(),
            config,
            out_dir,
            verbose: false,
        })
    }

    /// Print progress to stderr.
    pub fn verbose(mut self, on: bool) -> Self {
        self.verbose = on;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }

    fn say(&self, msg: impl FnOnce() -> String) {
        if self.verbose {
            eprintln!("{}", msg());
        }
    }

    /// Loads data, splits it and checks the split against `split.json`
    /// (writing it on first use).
    fn prepare(&self) -> StageResult<Prepared> {
        let data = load_data(&self.config).at(Stage::Data)?;
        let (a, b) = split_ab(&data.dataset, self.config.ratio_a, self.config.seed).at(Stage::Data)?;
        let split = SealedSplit::new(a, b).at(Stage::Data)?;
        let record = split.record(&self.keys.data, self.config.seed);
        let path = self.path(files::SPLIT);
        if path.exists() {
            let on_disk: SplitRecord = read_json(&path).at(Stage::Data)?;
            if on_disk.config_hash != self.keys.data || !on_disk.same_partition(&record) {
                return Err(Error::ArtifactMismatch(format!(
                    "{} was written for a different data configuration",
                    path.display()
                )))
                .at(Stage::Data);
            }
        } else {
            write_json(&path, &record).at(Stage::Data)?;
        }
        Ok(Prepared {
            vocab_hash: vocab_hash(&data.dataset),
            data,
            split,
        })
    }

    /// Collects a corpus on subset A and writes `corpus.jsonl` plus its
    /// sidecar.
    pub fn collect(&self) -> StageResult<CollectSummary> {
        let mut p = self.prepare()?;
        let cfg = &self.config;
        let start = Instant::now();
        self.say(|| format!("collect: {:?} collector, {} steps", cfg.collect.kind, cfg.collect.epochs));
        let a = p.split.a_for(Stage::Collect.name());
        let corpus = match cfg.collect.kind {
            CollectorKind::Rl => collect(a, cfg.collect.epochs, &cfg.model, cfg.seed, &cfg.collect.dqn),
            CollectorKind::Random => {
                random_collect(a, cfg.collect.epochs, &cfg.model, cfg.seed, cfg.collect.dqn.internal_ratio)
            }
        }
        .at(Stage::Collect)?;
        let meta = CorpusMeta {
            config_hash: self.keys.collect.clone(),
            seed: cfg.seed,
            vocab_hash: p.vocab_hash.clone(),
            n_features: p.data.dataset.n_features(),
            collector: cfg.collect.kind,
            n_records: corpus.len(),
            access: p.split.events().to_vec(),
        };
        let corpus_path = self.path(files::CORPUS);
        atomic(&corpus_path, |tmp| save_corpus(&corpus, tmp)).at(Stage::Collect)?;
        write_json(&self.path(files::CORPUS_META), &meta).at(Stage::Collect)?;
        let summary = CollectSummary {
            records: corpus.len(),
            top_decile_mean: top_decile_mean(&corpus),
            seconds: start.elapsed().as_secs_f64(),
        };
        self.say(|| {
            format!(
                "collect: {} records, top-decile utility {:.4} ({:.1}s)",
                summary.records, summary.top_decile_mean, summary.seconds
            )
        });
        Ok(summary)
    }

    /// Reads the corpus after checking its sidecar against this run.
    fn read_corpus(&self, p: &Prepared, stage: Stage) -> StageResult<(Vec<CorpusRecord>, CorpusMeta)> {
        let meta_path = self.path(files::CORPUS_META);
        let meta: CorpusMeta = read_json(&meta_path).at(stage)?;
        if meta.config_hash != self.keys.collect || meta.seed != self.config.seed {
            return Err(Error::ArtifactMismatch(format!(
                "corpus in {} comes from a different collect configuration or seed",
                self.out_dir.display()
            )))
            .at(stage);
        }
        if meta.vocab_hash != p.vocab_hash {
            return Err(Error::ArtifactMismatch("corpus vocabulary does not match the dataset".into())).at(stage);
        }
        let vocab = FeatureTokenVocab::new(p.data.dataset.n_features());
        let corpus = load_corpus(self.path(files::CORPUS), &vocab).at(stage)?;
        if corpus.len() != meta.n_records {
            return Err(Error::ArtifactMismatch(format!(
                "corpus has {} records, sidecar says {}",
                corpus.len(),
                meta.n_records
            )))
            .at(stage);
        }
        Ok((corpus, meta))
    }

    /// Trains the model on the augmented corpus and writes the checkpoint
    /// and loss history.
    pub fn train(&self) -> StageResult<TrainSummary> {
        let p = self.prepare()?;
        let (corpus, _) = self.read_corpus(&p, Stage::Train)?;
        let cfg = &self.config;
        let start = Instant::now();
        let augmented = augment(&corpus, cfg.train.n_shuffles, cfg.seed).at(Stage::Train)?;
        self.say(|| {
            format!(
                "train: {} records x{} after augmentation = {}, {} epochs",
                corpus.len(),
                cfg.train.n_shuffles + 1,
                augmented.len(),
                cfg.train.epochs
            )
        });
        let n_features = p.data.dataset.n_features();
        let trained = train_model_with(&augmented, n_features, &cfg.train, cfg.seed, |e, l| {
            self.say(|| {
                format!(
                    "  epoch {:>3}: total {:.4}  rec {:.4}  evt {:.5}  kl {:.4}",
                    e + 1,
                    l.total,
                    l.rec,
                    l.evt,
                    l.kl
                )
            })
        })
        .at(Stage::Train)?;
        let ckpt = trained.model.to_checkpoint(TrainingMeta {
            seed: cfg.seed,
            epochs_run: cfg.train.epochs,
            config_hash: Some(self.keys.train.clone()),
            vocab_hash: Some(p.vocab_hash.clone()),
            history: trained.history.clone(),
        });
        atomic(&self.path(files::CHECKPOINT), |tmp| save_checkpoint(&ckpt, tmp)).at(Stage::Train)?;
        atomic(&self.path(files::LOSS_HISTORY), |tmp| {
            write_loss_history(tmp, &self.keys.train, cfg.seed, &trained.history)
        })
        .at(Stage::Train)?;
        let summary = TrainSummary {
            corpus_records: corpus.len(),
            augmented_records: augmented.len(),
            history: trained.history,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.say(|| format!("train: done ({:.1}s)", summary.seconds));
        Ok(summary)
    }

    fn read_checkpoint(&self, p: &Prepared) -> StageResult<ModelCheckpoint> {
        let ckpt = load_checkpoint(self.path(files::CHECKPOINT)).at(Stage::Select)?;
        if ckpt.meta.config_hash.as_deref() != Some(self.keys.train.as_str()) || ckpt.meta.seed != self.config.seed {
            return Err(Error::ArtifactMismatch(
                "checkpoint comes from a different train configuration or seed".into(),
            ))
            .at(Stage::Select);
        }
        if ckpt.meta.vocab_hash.as_deref() != Some(p.vocab_hash.as_str()) || ckpt.n_features != p.data.dataset.n_features() {
            return Err(Error::ArtifactMismatch("checkpoint vocabulary does not match the dataset".into())).at(Stage::Select);
        }
        Ok(ckpt)
    }

    /// Searches for the best subset on A, scores it and the controls once
    /// on B, and writes `report.json`. `timings` from earlier stages of the
    /// same invocation are merged into the report.
    pub fn select(&self, mut timings: BTreeMap<String, f64>) -> StageResult<RunReport> {
        let mut p = self.prepare()?;
        let (corpus, meta) = self.read_corpus(&p, Stage::Select)?;
        let ckpt = self.read_checkpoint(&p)?;
        let cfg = &self.config;
        let start = Instant::now();
        // Collection ran in its own invocation; its logged reads must be of
        // exactly this run's subset A.
        let a_digest = rows_digest(p.split.a_row_ids());
        if meta.access.iter().any(|e| e.b_rows_read > 0 || e.rows_digest != a_digest) {
            return Err(Error::Protocol("corpus was collected on rows other than subset A".into())).at(Stage::Select);
        }
        p.split.import(&meta.access).at(Stage::Select)?;

        let model = SubsetVae::from_checkpoint(&ckpt).at(Stage::Select)?;
        self.say(|| format!("select: {} seeds, {} ascent steps of {}", cfg.search.top_k, cfg.search.n_steps, cfg.search.eta));
        let a = p.split.a_for(Stage::Select.name());
        let outcome = select_best(&model, &corpus, a, &cfg.model, &cfg.search, cfg.collect.dqn.internal_ratio, cfg.seed)
            .at(Stage::Select)?;
        timings.insert("select".into(), start.elapsed().as_secs_f64());

        let control = if cfg.report.random_control {
            let t = Instant::now();
            let a = p.split.a_for("random_control");
            let set = self.random_control(a, corpus.len())?;
            timings.insert("random_control".into(), t.elapsed().as_secs_f64());
            Some(set)
        } else {
            None
        };

        let t = Instant::now();
        let chosen: BTreeSet<usize> = outcome.best.decoded_set.iter().copied().collect();
        let (a, b) = p.split.unseal("final_scoring").at(Stage::Select)?;
        let score_b = |set: &BTreeSet<usize>| fit_predict_score(a, b, set, &cfg.model, cfg.seed).at(Stage::Select);
        let all: BTreeSet<usize> = (0..a.n_features()).collect();
        let kbest = kbest_baseline(a, chosen.len()).at(Stage::Select)?;
        let scores_b = ScoresB {
            metric: Metric::for_task(a.task()),
            chosen: score_b(&chosen)?,
            full: score_b(&all)?,
            kbest: KBestControl {
                indices: kbest.iter().copied().collect(),
                score: score_b(&kbest)?,
            },
            random_control: match control {
                Some(set) => Some(SubsetScore {
                    score: score_b(&set)?,
                    indices: set.into_iter().collect(),
                }),
                None => None,
            },
        };
        timings.insert("final_scoring".into(), t.elapsed().as_secs_f64());

        let names = p.data.dataset.feature_names();
        let report = RunReport {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            stage_keys: self.keys.clone(),
            dataset: DatasetSummary {
                source: p.data.source.clone(),
                n_samples: p.data.dataset.n_samples(),
                n_features: p.data.dataset.n_features(),
                task: p.data.dataset.task(),
                target: p.data.dataset.target_name().to_string(),
            },
            chosen: ChosenSubset {
                indices: chosen.iter().copied().collect(),
                names: chosen.iter().map(|&i| names[i].clone()).collect(),
                score_a: outcome.best.score,
                predicted_utility: outcome.best.predicted_after,
            },
            scores_b,
            truth: p.data.truth.as_ref().map(|truth| TruthRecovery::new(truth, &chosen)),
            corpus: CorpusSummary {
                collector: meta.collector,
                records: corpus.len(),
                distinct: corpus.iter().map(|r| r.feature_set()).collect::<BTreeSet<_>>().len(),
                top_decile_mean: top_decile_mean(&corpus),
                best_utility: corpus.iter().map(|r| r.utility).fold(f64::NEG_INFINITY, f64::max),
            },
            training: TrainingSummary {
                corpus_records: corpus.len(),
                n_shuffles: ckpt.hyperparams.n_shuffles,
                augmented_records: corpus.len() * (ckpt.hyperparams.n_shuffles + 1),
                epochs: ckpt.meta.epochs_run,
                loss_history: ckpt.meta.history.clone(),
            },
            search: outcome,
            audit: p.split.audit(),
            config: cfg.echo(),
            artifacts: artifact_paths(cfg.report.random_control),
            timings,
        };
        if !report.audit.sealed_until_final {
            return Err(Error::Protocol("row audit failed: subset B was read before final scoring".into())).at(Stage::Select);
        }
        let path = self.path(files::REPORT);
        atomic(&path, |tmp| {
            fs::write(tmp, report.to_json()?).map_err(|e| Error::io(tmp, e))
        })
        .at(Stage::Select)?;
        self.say(|| {
            format!(
                "select: chose {} features, B score {:.4} (full set {:.4}, k-best {:.4})",
                report.chosen.indices.len(),
                report.scores_b.chosen.raw,
                report.scores_b.full.raw,
                report.scores_b.kbest.score.raw
            )
        });
        Ok(report)
    }

    /// Collect → train → select with a random collector on subset A;
    /// returns the chosen subset. Artifacts go to `control/`.
    fn random_control(&self, a: &Dataset, n: usize) -> StageResult<BTreeSet<usize>> {
        let cfg = &self.config;
        self.say(|| format!("control: random collector, {n} records"));
        let dir = self.path(files::CONTROL_DIR);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e)).at(Stage::Select)?;
        let corpus = random_collect(a, n, &cfg.model, cfg.seed, cfg.collect.dqn.internal_ratio).at(Stage::Collect)?;
        atomic(&dir.join(files::CORPUS), |tmp| save_corpus(&corpus, tmp)).at(Stage::Collect)?;
        let augmented = augment(&corpus, cfg.train.n_shuffles, cfg.seed).at(Stage::Train)?;
        let trained = train_model_with(&augmented, a.n_features(), &cfg.train, cfg.seed, |_, _| {}).at(Stage::Train)?;
        let ckpt = trained.model.to_checkpoint(TrainingMeta {
            seed: cfg.seed,
            epochs_run: cfg.train.epochs,
            config_hash: Some(self.keys.train.clone()),
            vocab_hash: Some(vocab_hash(a)),
            history: trained.history,
        });
        atomic(&dir.join(files::CHECKPOINT), |tmp| save_checkpoint(&ckpt, tmp)).at(Stage::Train)?;
        // Same round trip through f32 as the main run.
        let model = SubsetVae::from_checkpoint(&ckpt).at(Stage::Select)?;
        let outcome = select_best(&model, &corpus, a, &cfg.model, &cfg.search, cfg.collect.dqn.internal_ratio, cfg.seed)
            .at(Stage::Select)?;
        Ok(outcome.best.decoded_set.into_iter().collect())
    }

    /// Runs one stage on its own, reading upstream artifacts from disk.
    /// Only `select` produces a report.
    pub fn run_stage(&self, stage: Stage) -> StageResult<Option<RunReport>> {
        match stage {
            Stage::Collect => self.collect().map(|_| None),
            Stage::Train => self.train().map(|_| None),
            Stage::Select => self.select(BTreeMap::new()).map(Some),
            other => Err(Error::Config(format!("`{}` is not a runnable stage", other.name()))).at(Stage::Config),
        }
    }

    /// All three stages in order. Artifacts written by finished stages stay
    /// on disk if a later stage fails.
    pub fn pipeline(&self) -> StageResult<RunReport> {
        let mut timings = BTreeMap::new();
        timings.insert("collect".to_string(), self.collect()?.seconds);
        timings.insert("train".to_string(), self.train()?.seconds);
        self.select(timings)
    }
}

fn artifact_paths(control: bool) -> BTreeMap<String, String> {
    let mut m: BTreeMap<String, String> = [
        ("split", files::SPLIT),
        ("corpus", files::CORPUS),
        ("corpus_meta", files::CORPUS_META),
        ("checkpoint", files::CHECKPOINT),
        ("loss_history", files::LOSS_HISTORY),
        ("report", files::REPORT),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    if control {
        m.insert("control_corpus".into(), format!("{}/{}", files::CONTROL_DIR, files::CORPUS));
        m.insert("control_checkpoint".into(), format!("{}/{}", files::CONTROL_DIR, files::CHECKPOINT));
    }
    m
}

/// Writes via a temporary file and a rename, so an interrupted write never
/// leaves a truncated artifact behind.
fn atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    write(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic(path, |tmp| fs::write(tmp, text).map_err(|e| Error::io(tmp, e)))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::ArtifactMismatch(format!("{}: {e}", path.display())))
}

/// `# config_hash=..,seed=..` then `epoch,total,rec,evt,kl`, one row per
/// epoch (1-based).
fn write_loss_history(path: &Path, config_hash: &str, seed: u64, history: &[LossParts]) -> Result<()> {
    let mut text = format!("# config_hash={config_hash},seed={seed}\n");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "total", "rec", "evt", "kl"])?;
    for (i, l) in history.iter().enumerate() {
        w.serialize((i + 1, l.total, l.rec, l.evt, l.kl))?;
    }
    let body = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    text.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses a file written by the loss-history writer: `(config_hash, seed,
/// rows)`.
pub fn read_loss_history(path: impl AsRef<Path>) -> Result<(String, u64, Vec<LossParts>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let bad = || Error::ArtifactMismatch(format!("{}: missing `# config_hash=..,seed=..` line", path.display()));
    let header = first.strip_prefix("# ").ok_or_else(bad)?;
    let mut hash = None;
    let mut seed = None;
    for kv in header.split(',') {
        match kv.split_once('=') {
            Some(("config_hash", v)) => hash = Some(v.to_string()),
            Some(("seed", v)) => seed = v.parse().ok(),
            _ => {}
        }
    }
    let mut rows = Vec::new();
    for rec in csv::Reader::from_reader(rest.as_bytes()).deserialize() {
        let (_, total, rec_, evt, kl): (usize, f64, f64, f64, f64) = rec?;
        rows.push(LossParts {
            total,
            rec: rec_,
            evt,
            kl,
        });
    }
    Ok((hash.ok_or_else(bad)?, seed.ok_or_else(bad)?, rows))
}
