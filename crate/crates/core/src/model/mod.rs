//! Model architecture: embedding with noise/dropout, stacked (bi)LSTM,
//! self-attention pooling, softmax output, and the missing-word
//! concatenation variant.

mod checks;
mod classifier;
mod layers;
mod lm;

pub use checks::gradcheck_cases;
pub use classifier::{
    argmax, concat_representation, AttentionOutput, BuiltClassifier, ClassifierModel,
    ClassifierOutput,
};
pub use layers::{
    attention, bilstm_chain, cross_entropy, dropout_rows, embed_rows, lstm_chain, output_head,
    Annotations, LstmWeights, Phase,
};
pub use lm::{BuiltLm, LanguageModel, LmConfig};

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{value_hash, Tensor};

/// The five parameter groups every model is partitioned into; the unit of
/// freezing and transfer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupName {
    Embedding,
    Lstm1,
    Lstm2,
    Attention,
    Output,
}

impl GroupName {
    pub const ALL: [GroupName; 5] = [
        GroupName::Embedding,
        GroupName::Lstm1,
        GroupName::Lstm2,
        GroupName::Attention,
        GroupName::Output,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            GroupName::Embedding => "embedding",
            GroupName::Lstm1 => "lstm1",
            GroupName::Lstm2 => "lstm2",
            GroupName::Attention => "attention",
            GroupName::Output => "output",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        GroupName::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown parameter group `{s}`")))
    }
}

impl std::fmt::Display for GroupName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Named tensors plus a freeze flag. Frozen groups receive no updates.
#[derive(Clone, Debug)]
pub struct ParamGroup {
    pub name: GroupName,
    pub tensors: BTreeMap<String, Tensor>,
    pub frozen: bool,
}

impl ParamGroup {
    pub fn new(name: GroupName) -> Self {
        ParamGroup {
            name,
            tensors: BTreeMap::new(),
            frozen: false,
        }
    }

    /// FNV hash over the group's value bits, in tensor-name order.
    pub fn value_hash(&self) -> u64 {
        value_hash(self.tensors.values().map(|t| t.values()))
    }
}

/// Ordered collection of parameter groups; group order is fixed so
/// iteration, hashing, and serialization stay deterministic.
#[derive(Clone, Debug, Default)]
pub struct Params {
    groups: Vec<ParamGroup>,
}

impl Params {
    pub fn new() -> Self {
        Params { groups: Vec::new() }
    }

    pub fn insert_group(&mut self, group: ParamGroup) {
        debug_assert!(
            self.groups.iter().all(|g| g.name != group.name),
            "duplicate group {}",
            group.name
        );
        self.groups.push(group);
        self.groups.sort_by_key(|g| g.name);
    }

    pub fn groups(&self) -> impl Iterator<Item = &ParamGroup> {
        self.groups.iter()
    }

    pub fn groups_mut(&mut self) -> impl Iterator<Item = &mut ParamGroup> {
        self.groups.iter_mut()
    }

    pub fn group(&self, name: GroupName) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn group_mut(&mut self, name: GroupName) -> Option<&mut ParamGroup> {
        self.groups.iter_mut().find(|g| g.name == name)
    }

    pub fn tensor(&self, group: GroupName, key: &str) -> Result<&Tensor> {
        self.group(group)
            .and_then(|g| g.tensors.get(key))
            .ok_or_else(|| Error::contract(format!("no tensor `{group}.{key}`")))
    }

    /// `(qualified_name, tensor)` pairs in deterministic order.
    pub fn named(&self) -> impl Iterator<Item = (String, &Tensor)> {
        self.groups.iter().flat_map(|g| {
            g.tensors
                .iter()
                .map(move |(k, t)| (format!("{}.{k}", g.name), t))
        })
    }

    pub fn named_mut(&mut self) -> impl Iterator<Item = (String, &mut Tensor)> {
        self.groups.iter_mut().flat_map(|g| {
            let name = g.name;
            g.tensors
                .iter_mut()
                .map(move |(k, t)| (format!("{name}.{k}"), t))
        })
    }

    /// Per-group value hashes, for freeze auditing.
    pub fn group_hashes(&self) -> BTreeMap<GroupName, u64> {
        self.groups
            .iter()
            .map(|g| (g.name, g.value_hash()))
            .collect()
    }

    pub fn clear_grads(&mut self) {
        for g in &mut self.groups {
            for t in g.tensors.values_mut() {
                t.clear_grad();
            }
        }
    }
}

/// Hyperparameters of the classifier architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub lstm_size: usize,
    pub num_lstm_layers: usize,
    pub bidirectional: bool,
    pub num_classes: usize,
    pub embedding_noise: f64,
    pub embedding_dropout: f64,
    pub lstm_dropout: f64,
    pub use_concat: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        // Desk-scale dimensions; the noise/dropout rates follow the usual
        // settings for this architecture family.
        ModelConfig {
            vocab_size: 0,
            embedding_dim: 32,
            lstm_size: 64,
            num_lstm_layers: 2,
            bidirectional: false,
            num_classes: 6,
            embedding_noise: 0.1,
            embedding_dropout: 0.2,
            lstm_dropout: 0.4,
            use_concat: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.embedding_dim == 0
            || self.lstm_size == 0
            || self.num_classes < 2
        {
            return Err(Error::config(format!(
                "dimensions must be positive and num_classes >= 2: {self:?}"
            )));
        }
        if !(1..=2).contains(&self.num_lstm_layers) {
            return Err(Error::config(format!(
                "num_lstm_layers must be 1 or 2, got {}",
                self.num_lstm_layers
            )));
        }
        for (name, p) in [
            ("embedding_dropout", self.embedding_dropout),
            ("lstm_dropout", self.lstm_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("{name} must be in [0,1), got {p}")));
            }
        }
        if self.embedding_noise < 0.0 {
            return Err(Error::config("embedding_noise must be >= 0".to_string()));
        }
        if self.bidirectional && self.use_concat {
            return Err(Error::config(
                "the concatenation method requires a unidirectional model".to_string(),
            ));
        }
        Ok(())
    }

    /// Width of each attention input annotation.
    pub fn attention_width(&self) -> usize {
        if self.bidirectional {
            2 * self.lstm_size
        } else {
            self.lstm_size
        }
    }

    /// Width of the vector fed to the output layer.
    pub fn output_input_width(&self) -> usize {
        self.attention_width() + if self.use_concat { self.lstm_size } else { 0 }
    }
}

/// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::matrix(rows, cols, values).expect("positive dims")
}

/// LSTM weights for one direction: packed gates in i,f,g,o order.
pub(crate) fn init_lstm_direction(
    rng: &mut ChaCha8Rng,
    prefix: &str,
    input_dim: usize,
    lstm_size: usize,
    tensors: &mut BTreeMap<String, Tensor>,
) {
    tensors.insert(
        format!("{prefix}w_x"),
        uniform_init(rng, input_dim, 4 * lstm_size, input_dim),
    );
    tensors.insert(
        format!("{prefix}w_h"),
        uniform_init(rng, lstm_size, 4 * lstm_size, lstm_size),
    );
    tensors.insert(
        format!("{prefix}b"),
        uniform_init(rng, 1, 4 * lstm_size, lstm_size),
    );
}

pub(crate) fn init_lstm_group(
    rng: &mut ChaCha8Rng,
    name: GroupName,
    input_dim: usize,
    lstm_size: usize,
    bidirectional: bool,
) -> ParamGroup {
    let mut group = ParamGroup::new(name);
    init_lstm_direction(rng, "fwd.", input_dim, lstm_size, &mut group.tensors);
    if bidirectional {
        init_lstm_direction(rng, "bwd.", input_dim, lstm_size, &mut group.tensors);
    }
    group
}
