//! Versioned on-disk checkpoint: a text header, a TOML manifest and raw
//! little-endian `f32` tensor data.
//!
//! ```text
//! GENFS-CHECKPOINT 1\n
//! <manifest length in bytes>\n
//! <TOML manifest>
//! <f32 LE data, tensors in manifest order>
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::{Hyperparams, LossParts, SubsetVae};
use super::tape::Params;
use crate::error::{Error, Result};
use crate::vocab::FeatureTokenVocab;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "GENFS-CHECKPOINT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f32>,
}

/// Provenance stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    /// Hash of the run configuration that produced the checkpoint, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    /// Hash of the feature vocabulary (names and count) the model was
    /// trained against, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_hash: Option<String>,
    /// Per-epoch mean losses.
    #[serde(default)]
    pub history: Vec<LossParts>,
}

impl TrainingMeta {
    pub fn final_loss(&self) -> Option<&LossParts> {
        self.history.last()
    }
}

/// All learned parameters with the vocabulary size and settings they were
/// trained with. Stored as `f32`; [`SubsetVae::from_checkpoint`] widens them
/// for computation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub hyperparams: Hyperparams,
    pub n_features: usize,
    pub tensors: Vec<Tensor>,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    /// Offset into the data section, in `f32` elements.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    n_features: usize,
    vocab_size: usize,
    hyperparams: Hyperparams,
    meta: TrainingMeta,
    tensor: Vec<TensorEntry>,
}

impl ModelCheckpoint {
    pub fn vocab(&self) -> FeatureTokenVocab {
        FeatureTokenVocab::new(self.n_features)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Checks tensor names and shapes against a freshly built model with the
    /// same settings.
    pub fn validate(&self) -> Result<()> {
        let reference = SubsetVae::new(self.n_features, &self.hyperparams, 0)?;
        let expected: Vec<(&str, (usize, usize))> = reference.params().iter().map(|(n, a)| (n, a.dim())).collect();
        if expected.len() != self.tensors.len() {
            return Err(Error::CheckpointShape(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for ((name, dim), t) in expected.iter().zip(&self.tensors) {
            if *name != t.name || *dim != (t.shape[0], t.shape[1]) {
                return Err(Error::CheckpointShape(format!(
                    "tensor {} {:?} does not match expected {name} {dim:?}",
                    t.name, t.shape
                )));
            }
            if t.data.len() != dim.0 * dim.1 {
                return Err(Error::CheckpointShape(format!("tensor {name} has {} values", t.data.len())));
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut offset = 0;
        let tensor = self
            .tensors
            .iter()
            .map(|t| {
                let e = TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape,
                    offset,
                };
                offset += t.data.len();
                e
            })
            .collect();
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            n_features: self.n_features,
            vocab_size: self.vocab().size(),
            hyperparams: self.hyperparams.clone(),
            meta: self.meta.clone(),
            tensor,
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        let io = |e| Error::io("<checkpoint>", e);
        write!(w, "{MAGIC} {FORMAT_VERSION}\n{}\n", text.len()).map_err(io)?;
        w.write_all(text.as_bytes()).map_err(io)?;
        let mut buf = Vec::with_capacity(offset * 4);
        for t in &self.tensors {
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(io)
    }

    pub fn read<R: Read>(mut r: R) -> Result<ModelCheckpoint> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
        let (header, rest) = split_line(&bytes).ok_or_else(|| Error::CheckpointVersion("missing header".into()))?;
        let header = std::str::from_utf8(header).map_err(|_| Error::CheckpointVersion("unreadable header".into()))?;
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| Error::CheckpointVersion("not a checkpoint file (bad magic)".into()))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(Error::CheckpointVersion(format!(
                "file has format {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let (len_line, rest) = split_line(rest).ok_or_else(|| Error::CheckpointTruncated("missing manifest length".into()))?;
        let len: usize = std::str::from_utf8(len_line)
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::CheckpointVersion("bad manifest length".into()))?;
        if rest.len() < len {
            return Err(Error::CheckpointTruncated("manifest cut short".into()));
        }
        let (text, data) = rest.split_at(len);
        let text = std::str::from_utf8(text).map_err(|_| Error::CheckpointVersion("manifest is not UTF-8".into()))?;
        let manifest: Manifest = toml::from_str(text).map_err(|e| Error::CheckpointVersion(format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion(format!(
                "manifest format {} != {FORMAT_VERSION}",
                manifest.format_version
            )));
        }
        let vocab = FeatureTokenVocab::new(manifest.n_features);
        if manifest.vocab_size != vocab.size() {
            return Err(Error::CheckpointShape(format!(
                "vocabulary size {} inconsistent with {} features",
                manifest.vocab_size, manifest.n_features
            )));
        }
        let mut tensors = Vec::with_capacity(manifest.tensor.len());
        for e in manifest.tensor {
            let n = e.shape[0] * e.shape[1];
            let (start, end) = (e.offset * 4, (e.offset + n) * 4);
            if end > data.len() {
                return Err(Error::CheckpointTruncated(format!("tensor {} extends past end of file", e.name)));
            }
            let values = data[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(Tensor {
                name: e.name,
                shape: e.shape,
                data: values,
            });
        }
        let ckpt = ModelCheckpoint {
            hyperparams: manifest.hyperparams,
            n_features: manifest.n_features,
            tensors,
            meta: manifest.meta,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let i = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..i], &bytes[i + 1..]))
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    ckpt.write(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ModelCheckpoint::read(std::io::BufReader::new(f))
}

impl SubsetVae {
    /// Rounds the parameters to `f32` and packages them.
    pub fn to_checkpoint(&self, meta: TrainingMeta) -> ModelCheckpoint {
        let tensors = self
            .params
            .iter()
            .map(|(name, a)| Tensor {
                name: name.to_string(),
                shape: [a.nrows(), a.ncols()],
                data: a.iter().map(|&v| v as f32).collect(),
            })
            .collect();
        ModelCheckpoint {
            hyperparams: self.hp.clone(),
            n_features: self.vocab.n_features(),
            tensors,
            meta,
        }
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<SubsetVae> {
        ckpt.validate()?;
        let mut params = Params::new();
        for t in &ckpt.tensors {
            let values = t.data.iter().map(|&v| f64::from(v)).collect();
            let a = Array2::from_shape_vec((t.shape[0], t.shape[1]), values)
                .map_err(|e| Error::CheckpointShape(e.to_string()))?;
            params.insert(t.name.clone(), a);
        }
        Ok(SubsetVae {
            hp: ckpt.hyperparams.clone(),
            vocab: ckpt.vocab(),
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelCheckpoint {
        let hp = Hyperparams {
            token_embed_dim: 8,
            n_heads: 2,
            ffn_dim: 8,
            latent_dim: 4,
            evaluator_hidden: 5,
            n_layers_enc: 1,
            n_layers_dec: 1,
            ..Hyperparams::default()
        };
        let vae = SubsetVae::new(5, &hp, 11).unwrap();
        vae.to_checkpoint(TrainingMeta {
            seed: 11,
            epochs_run: 2,
            config_hash: Some("abc".into()),
            vocab_hash: Some("def".into()),
            history: vec![LossParts {
                total: 1.0,
                rec: 2.0,
                evt: 0.5,
                kl: 0.25,
            }],
        })
    }

    fn bytes(c: &ModelCheckpoint) -> Vec<u8> {
        let mut out = Vec::new();
        c.write(&mut out).unwrap();
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = small();
        let back = ModelCheckpoint::read(&bytes(&c)[..]).unwrap();
        assert_eq!(back, c);
        for (a, b) in c.tensors.iter().zip(&back.tensors) {
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        // A model rebuilt from the checkpoint re-exports identically.
        let again = SubsetVae::from_checkpoint(&back).unwrap().to_checkpoint(back.meta.clone());
        assert_eq!(again, c);
    }

    /// Same-length in-place substitution in the binary file.
    fn patch(b: &[u8], from: &str, to: &str) -> Vec<u8> {
        assert_eq!(from.len(), to.len());
        let at = b.windows(from.len()).position(|w| w == from.as_bytes()).unwrap();
        let mut out = b.to_vec();
        out[at..at + to.len()].copy_from_slice(to.as_bytes());
        out
    }

    #[test]
    fn bad_magic_is_a_version_error() {
        let b = bytes(&small());
        let bad = patch(&b, "GENFS", "XENFS");
        assert!(matches!(ModelCheckpoint::read(&bad[..]), Err(Error::CheckpointVersion(_))));
        let newer = patch(&b, "CHECKPOINT 1", "CHECKPOINT 9");
        assert!(matches!(ModelCheckpoint::read(&newer[..]), Err(Error::CheckpointVersion(_))));
    }

    #[test]
    fn feature_count_mismatch_is_a_shape_error() {
        let b = patch(&bytes(&small()), "n_features = 5", "n_features = 6");
        let err = ModelCheckpoint::read(&b[..]);
        assert!(matches!(err, Err(Error::CheckpointShape(_))), "{err:?}");
    }

    #[test]
    fn truncated_file_rejected() {
        let b = bytes(&small());
        let err = ModelCheckpoint::read(&b[..b.len() - 3]);
        assert!(matches!(err, Err(Error::CheckpointTruncated(_))), "{err:?}");
    }
}
