//! Named-tensor checkpoint files.
//!
//! Layout: magic `NTCK`, a little-endian u32 format version, a u32
//! length-prefixed UTF-8 JSON metadata document (model kind, config,
//! vocabulary, training history), then one record per tensor until EOF:
//! u32 name length + name bytes, u32 rank, u64 extents, then f32
//! little-endian values in row-major order. Unknown versions are rejected.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    ClassifierModel, GroupName, LanguageModel, LmConfig, ModelConfig, ParamGroup, Params,
};
use crate::tensor::Tensor;
use crate::text::Vocabulary;
use crate::transfer::EpochRecord;

const MAGIC: &[u8; 4] = b"NTCK";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Embedding,
    LanguageModel,
    Classifier,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Embedding => "embedding",
            ModelKind::LanguageModel => "language-model",
            ModelKind::Classifier => "classifier",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier_config: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lm_config: Option<LmConfig>,
    pub vocabulary: Vocabulary,
    /// Per-epoch training history (loss, dev F1, per-group hashes).
    #[serde(default)]
    pub history: Vec<EpochRecord>,
    /// Scalar training metadata, e.g. final perplexity.
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    /// Names of permanently frozen groups.
    #[serde(default)]
    pub frozen_groups: Vec<String>,
}

/// A named-tensor container with metadata; the on-disk interchange unit.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    /// Qualified `group.tensor` names, in deterministic order.
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    fn collect_tensors(params: &Params) -> Vec<(String, Tensor)> {
        params.named().map(|(n, t)| (n, t.clone())).collect()
    }

    fn frozen_names(params: &Params) -> Vec<String> {
        params
            .groups()
            .filter(|g| g.frozen)
            .map(|g| g.name.as_str().to_string())
            .collect()
    }

    pub fn from_classifier(
        model: &ClassifierModel,
        vocabulary: Vocabulary,
        history: Vec<EpochRecord>,
        metrics: BTreeMap<String, f64>,
    ) -> Self {
        Checkpoint {
            meta: CheckpointMeta {
                kind: ModelKind::Classifier,
                classifier_config: Some(model.config.clone()),
                lm_config: None,
                vocabulary,
                history,
                metrics,
                frozen_groups: Self::frozen_names(&model.params),
            },
            tensors: Self::collect_tensors(&model.params),
        }
    }

    pub fn from_lm(
        model: &LanguageModel,
        vocabulary: Vocabulary,
        history: Vec<EpochRecord>,
        metrics: BTreeMap<String, f64>,
    ) -> Self {
        Checkpoint {
            meta: CheckpointMeta {
                kind: ModelKind::LanguageModel,
                classifier_config: None,
                lm_config: Some(model.config.clone()),
                vocabulary,
                history,
                metrics,
                frozen_groups: Self::frozen_names(&model.params),
            },
            tensors: Self::collect_tensors(&model.params),
        }
    }

    pub fn from_embedding(
        matrix: &Tensor,
        vocabulary: Vocabulary,
        metrics: BTreeMap<String, f64>,
    ) -> Self {
        Checkpoint {
            meta: CheckpointMeta {
                kind: ModelKind::Embedding,
                classifier_config: None,
                lm_config: None,
                vocabulary,
                history: Vec::new(),
                metrics,
                frozen_groups: Vec::new(),
            },
            tensors: vec![("embedding.weight".to_string(), matrix.clone())],
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the parameter groups from the qualified tensor names.
    pub fn to_params(&self) -> Result<Params> {
        let mut groups: BTreeMap<GroupName, ParamGroup> = BTreeMap::new();
        for (name, tensor) in &self.tensors {
            let (group_name, key) = name.split_once('.').ok_or_else(|| {
                Error::format(format!("tensor name `{name}` has no group prefix"))
            })?;
            let group = GroupName::parse(group_name)
                .map_err(|_| Error::format(format!("unknown group in tensor `{name}`")))?;
            groups
                .entry(group)
                .or_insert_with(|| ParamGroup::new(group))
                .tensors
                .insert(key.to_string(), tensor.clone());
        }
        let mut params = Params::new();
        for (_, mut group) in groups {
            group.frozen = self
                .meta
                .frozen_groups
                .iter()
                .any(|f| f == group.name.as_str());
            params.insert_group(group);
        }
        Ok(params)
    }

    pub fn to_classifier(&self) -> Result<ClassifierModel> {
        if self.meta.kind != ModelKind::Classifier {
            return Err(Error::format(format!(
                "expected a classifier checkpoint, found {}",
                self.meta.kind
            )));
        }
        let config = self
            .meta
            .classifier_config
            .clone()
            .ok_or_else(|| Error::format("classifier checkpoint lacks a config".to_string()))?;
        Ok(ClassifierModel {
            config,
            params: self.to_params()?,
        })
    }

    pub fn to_lm(&self) -> Result<LanguageModel> {
        if self.meta.kind != ModelKind::LanguageModel {
            return Err(Error::format(format!(
                "expected a language-model checkpoint, found {}",
                self.meta.kind
            )));
        }
        let config = self
            .meta
            .lm_config
            .clone()
            .ok_or_else(|| Error::format("language-model checkpoint lacks a config".to_string()))?;
        Ok(LanguageModel {
            config,
            params: self.to_params()?,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path.display().to_string(), e);
        let file = File::create(path).map_err(io)?;
        let mut w = BufWriter::new(file);
        let meta =
            serde_json::to_vec(&self.meta).map_err(|e| Error::format(format!("metadata: {e}")))?;
        (|| -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_all(&VERSION.to_le_bytes())?;
            w.write_all(&(meta.len() as u32).to_le_bytes())?;
            w.write_all(&meta)?;
            for (name, tensor) in &self.tensors {
                let name_bytes = name.as_bytes();
                w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
                w.write_all(name_bytes)?;
                w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
                for &extent in tensor.shape() {
                    w.write_all(&(extent as u64).to_le_bytes())?;
                }
                for &v in tensor.values() {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
            w.flush()
        })()
        .map_err(io)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let io = |e| Error::io(path.display().to_string(), e);
        let file = File::open(path).map_err(io)?;
        let mut r = BufReader::new(file);

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::format(format!(
                "`{}` is not a checkpoint (bad magic)",
                path.display()
            )));
        }
        let version = read_u32(&mut r).map_err(io)?;
        if version != VERSION {
            return Err(Error::format(format!(
                "unsupported checkpoint version {version} (this build reads {VERSION})"
            )));
        }
        let meta_len = read_u32(&mut r).map_err(io)? as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        r.read_exact(&mut meta_bytes).map_err(io)?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)
            .map_err(|e| Error::format(format!("metadata: {e}")))?;

        let mut tensors = Vec::new();
        loop {
            let mut len_bytes = [0u8; 4];
            match r.read_exact(&mut len_bytes) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(io(e)),
            }
            let name_len = u32::from_le_bytes(len_bytes) as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes).map_err(io)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::format("tensor name is not UTF-8".to_string()))?;
            let rank = read_u32(&mut r).map_err(io)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut ext = [0u8; 8];
                r.read_exact(&mut ext).map_err(io)?;
                shape.push(u64::from_le_bytes(ext) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut values = Vec::with_capacity(numel);
            let mut buf = [0u8; 4];
            for _ in 0..numel {
                r.read_exact(&mut buf).map_err(io)?;
                values.push(f32::from_le_bytes(buf) as f64);
            }
            tensors.push((name, Tensor::new(shape, values)?));
        }
        Ok(Checkpoint { meta, tensors })
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn temp_path(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("emocloze-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(format!("{tag}.ntck"))
    }

    fn vocab() -> Vocabulary {
        let corpus = vec![vec!["hello".to_string(), "world".to_string()]];
        Vocabulary::build(corpus.iter().map(|l| l.iter()), 1, None).unwrap()
    }

    fn tiny_classifier(seed: u64) -> ClassifierModel {
        let config = ModelConfig {
            vocab_size: 5,
            embedding_dim: 3,
            lstm_size: 4,
            num_lstm_layers: 2,
            bidirectional: false,
            num_classes: 3,
            embedding_noise: 0.0,
            embedding_dropout: 0.0,
            lstm_dropout: 0.0,
            use_concat: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ClassifierModel::init(config, &mut rng).unwrap()
    }

    #[test]
    fn classifier_roundtrip_preserves_f32_values_bitwise() {
        let model = tiny_classifier(9);
        let ckpt = Checkpoint::from_classifier(&model, vocab(), vec![], BTreeMap::new());
        let path = temp_path("clf");
        ckpt.write(&path).unwrap();
        let loaded = Checkpoint::read(&path).unwrap();
        assert_eq!(loaded.meta.kind, ModelKind::Classifier);
        assert_eq!(loaded.tensors.len(), ckpt.tensors.len());
        for ((n1, t1), (n2, t2)) in ckpt.tensors.iter().zip(&loaded.tensors) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            for (&a, &b) in t1.values().iter().zip(t2.values()) {
                assert_eq!((a as f32).to_bits(), (b as f32).to_bits());
            }
        }
        let rebuilt = loaded.to_classifier().unwrap();
        assert_eq!(rebuilt.config, model.config);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let model = tiny_classifier(4);
        let ckpt = Checkpoint::from_classifier(&model, vocab(), vec![], BTreeMap::new());
        let p1 = temp_path("bytes1");
        let p2 = temp_path("bytes2");
        ckpt.write(&p1).unwrap();
        Checkpoint::read(&p1).unwrap().write(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let path = temp_path("junk");
        std::fs::write(&path, b"JUNKxxxxxxxx").unwrap();
        let err = Checkpoint::read(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let model = tiny_classifier(1);
        let ckpt = Checkpoint::from_classifier(&model, vocab(), vec![], BTreeMap::new());
        let path = temp_path("ver");
        ckpt.write(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = Checkpoint::read(&path).unwrap_err();
        assert!(err.to_string().contains("version 99"), "{err}");
    }

    #[test]
    fn frozen_flags_survive_roundtrip() {
        let mut model = tiny_classifier(2);
        model
            .params
            .group_mut(GroupName::Embedding)
            .unwrap()
            .frozen = true;
        let ckpt = Checkpoint::from_classifier(&model, vocab(), vec![], BTreeMap::new());
        let path = temp_path("frozen");
        ckpt.write(&path).unwrap();
        let rebuilt = Checkpoint::read(&path).unwrap().to_classifier().unwrap();
        assert!(rebuilt.params.group(GroupName::Embedding).unwrap().frozen);
        assert!(!rebuilt.params.group(GroupName::Lstm1).unwrap().frozen);
    }
}
