//! Human-readable summaries of corpus, checkpoint and report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use super::report::RunReport;
use super::CorpusMeta;
use crate::collector::{read_corpus, top_decile_mean};
use crate::error::{Error, Result};
use crate::vae::load_checkpoint;
use crate::vocab::FeatureTokenVocab;

const CHECKPOINT_MAGIC: &[u8] = b"GENFS-CHECKPOINT";

/// Summarizes whatever artifact `path` holds, detected by content.
pub fn inspect(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut head = [0u8; 16];
    let n = fs::File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .map_err(|e| Error::io(path, e))?;
    if head[..n] == *CHECKPOINT_MAGIC {
        return inspect_checkpoint(path);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(report) = RunReport::from_json(&text) {
        return Ok(inspect_report(&report));
    }
    inspect_corpus(path, &text)
}

fn inspect_checkpoint(path: &Path) -> Result<String> {
    let c = load_checkpoint(path)?;
    let hp = &c.hyperparams;
    let scalars: usize = c.tensors.iter().map(|t| t.data.len()).sum();
    let mut s = String::new();
    writeln!(s, "checkpoint {}", path.display()).unwrap();
    writeln!(s, "  features        {} (vocabulary {})", c.n_features, c.vocab().size()).unwrap();
    writeln!(s, "  tensors         {} ({} parameters)", c.tensors.len(), scalars).unwrap();
    writeln!(
        s,
        "  model           embed {} / heads {} / ffn {} / layers {}+{} / latent {}",
        hp.token_embed_dim, hp.n_heads, hp.ffn_dim, hp.n_layers_enc, hp.n_layers_dec, hp.latent_dim
    )
    .unwrap();
    writeln!(s, "  seed            {}", c.meta.seed).unwrap();
    writeln!(s, "  epochs          {}", c.meta.epochs_run).unwrap();
    if let Some(h) = &c.meta.config_hash {
        writeln!(s, "  config hash     {h}").unwrap();
    }
    if let Some(h) = &c.meta.vocab_hash {
        writeln!(s, "  vocab hash      {h}").unwrap();
    }
    if let (Some(first), Some(last)) = (c.meta.history.first(), c.meta.final_loss()) {
        writeln!(s, "  loss            {:.4} -> {:.4}", first.total, last.total).unwrap();
        writeln!(s, "  evaluator mse   {:.5} -> {:.5}", first.evt, last.evt).unwrap();
    }
    Ok(s)
}

fn sidecar(path: &Path) -> PathBuf {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let stem = name.strip_suffix(".jsonl").unwrap_or(name);
    path.with_file_name(format!("{stem}.meta.json"))
}

fn inspect_corpus(path: &Path, text: &str) -> Result<String> {
    let meta: Option<CorpusMeta> = fs::read_to_string(sidecar(path)).ok().and_then(|t| serde_json::from_str(&t).ok());
    // Without a sidecar, size the vocabulary from the largest token seen.
    let n_features = match &meta {
        Some(m) => m.n_features,
        None => {
            let max = text
                .lines()
                .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
                .filter_map(|v| v.get("tokens")?.as_array()?.iter().filter_map(|t| t.as_u64()).max())
                .max()
                .ok_or_else(|| Error::Corpus(format!("{}: not a corpus, checkpoint or report", path.display())))?;
            max as usize + 1
        }
    };
    let corpus = read_corpus(text.as_bytes(), &FeatureTokenVocab::new(n_features))?;
    if corpus.is_empty() {
        return Ok(format!("corpus {}: empty\n", path.display()));
    }
    let sizes: Vec<usize> = corpus.iter().map(|r| r.tokens.interior().len()).collect();
    let utils: Vec<f64> = corpus.iter().map(|r| r.utility).collect();
    let distinct: BTreeSet<_> = corpus.iter().map(|r| r.feature_set()).collect();
    let mut origins: BTreeMap<String, usize> = BTreeMap::new();
    for r in &corpus {
        *origins.entry(format!("{:?}", r.origin).to_lowercase()).or_default() += 1;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sizes_f: Vec<f64> = sizes.iter().map(|&x| x as f64).collect();
    let mut s = String::new();
    writeln!(s, "corpus {}", path.display()).unwrap();
    writeln!(s, "  records         {} ({} distinct subsets)", corpus.len(), distinct.len()).unwrap();
    writeln!(s, "  features        {n_features}{}", if meta.is_some() { "" } else { " (inferred)" }).unwrap();
    writeln!(
        s,
        "  subset size     min {} / mean {:.1} / max {}",
        sizes.iter().min().unwrap(),
        mean(&sizes_f),
        sizes.iter().max().unwrap()
    )
    .unwrap();
    writeln!(
        s,
        "  utility         min {:.4} / mean {:.4} / max {:.4}",
        utils.iter().copied().fold(f64::INFINITY, f64::min),
        mean(&utils),
        utils.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    )
    .unwrap();
    writeln!(s, "  top-decile mean {:.4}", top_decile_mean(&corpus)).unwrap();
    let o: Vec<String> = origins.iter().map(|(k, v)| format!("{k} {v}")).collect();
    writeln!(s, "  origins         {}", o.join(", ")).unwrap();
    if let Some(m) = meta {
        writeln!(s, "  collector       {:?}", m.collector).unwrap();
        writeln!(s, "  seed            {}", m.seed).unwrap();
        writeln!(s, "  config hash     {}", m.config_hash).unwrap();
    }
    Ok(s)
}

fn inspect_report(r: &RunReport) -> String {
    let mut s = String::new();
    writeln!(s, "report (seed {}, config {})", r.seed, &r.config_hash[..12.min(r.config_hash.len())]).unwrap();
    writeln!(s, "  dataset         {} ({} rows, {} features)", r.dataset.source, r.dataset.n_samples, r.dataset.n_features).unwrap();
    writeln!(s, "  chosen          {} features: {}", r.chosen.indices.len(), r.chosen.names.join(", ")).unwrap();
    writeln!(s, "  B score         {:.4} ({:?})", r.scores_b.chosen.raw, r.scores_b.metric).unwrap();
    writeln!(s, "  full set on B   {:.4}", r.scores_b.full.raw).unwrap();
    writeln!(s, "  k-best on B     {:.4}", r.scores_b.kbest.score.raw).unwrap();
    if let Some(c) = &r.scores_b.random_control {
        writeln!(s, "  random control  {:.4}", c.score.raw).unwrap();
    }
    if let Some(t) = &r.truth {
        writeln!(s, "  planted         precision {:.3} / recall {:.3}", t.precision, t.recall).unwrap();
    }
    writeln!(s, "  B sealed        {}", r.audit.sealed_until_final).unwrap();
    s
}
