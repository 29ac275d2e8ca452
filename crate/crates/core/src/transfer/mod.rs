//! Weight transfer between checkpoints and models, freeze control, staged
//! unfreezing, and the training loop.

mod freeze;
mod scheme;
mod trainer;

pub use freeze::{
    freeze_policies, FreezePolicy, FreezeState, FtMode, GradualUnfreeze, SguSchedule,
    SimpleFineTune,
};
pub use scheme::{transfer_schemes, SchemeContext, TransferScheme};
pub use trainer::{
    evaluate_classifier, fine_tune, group_hashes_hex, train_epoch, Encoded, EpochMetrics,
    EpochRecord, History, TrainConfig, Trainable,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{uniform_init, ClassifierModel, GroupName, Params};

/// Source-to-target parameter-group pairs to copy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerMap {
    pairs: Vec<(GroupName, GroupName)>,
}

impl LayerMap {
    pub fn new(pairs: Vec<(GroupName, GroupName)>) -> Self {
        LayerMap { pairs }
    }

    pub fn empty() -> Self {
        LayerMap { pairs: Vec::new() }
    }

    /// Embedding and both recurrent groups; what a language model shares
    /// with the classifier.
    pub fn lm_to_classifier() -> Self {
        LayerMap::new(
            [GroupName::Embedding, GroupName::Lstm1, GroupName::Lstm2]
                .into_iter()
                .map(|g| (g, g))
                .collect(),
        )
    }

    /// Everything except the task head; used when repurposing a trained
    /// classifier for a new label set.
    pub fn classifier_to_classifier() -> Self {
        LayerMap::new(
            [
                GroupName::Embedding,
                GroupName::Lstm1,
                GroupName::Lstm2,
                GroupName::Attention,
            ]
            .into_iter()
            .map(|g| (g, g))
            .collect(),
        )
    }

    pub fn pairs(&self) -> &[(GroupName, GroupName)] {
        &self.pairs
    }
}

/// Copies every mapped group from `source` into `target`, bitwise.
/// Unmapped groups are untouched. Shape or key mismatches fail naming the
/// offending group, leaving `target` unmodified.
pub fn transfer_weights(source: &Params, target: &mut Params, map: &LayerMap) -> Result<()> {
    // validate everything first so failures cannot leave a half-copied model
    for &(src_name, dst_name) in map.pairs() {
        let src = source.group(src_name).ok_or_else(|| Error::Transfer {
            group: src_name.as_str().to_string(),
            message: "missing in source".to_string(),
        })?;
        let dst = target.group(dst_name).ok_or_else(|| Error::Transfer {
            group: dst_name.as_str().to_string(),
            message: "missing in target".to_string(),
        })?;
        let src_keys: Vec<&String> = src.tensors.keys().collect();
        let dst_keys: Vec<&String> = dst.tensors.keys().collect();
        if src_keys != dst_keys {
            return Err(Error::Transfer {
                group: dst_name.as_str().to_string(),
                message: format!("tensor sets differ: {src_keys:?} vs {dst_keys:?}"),
            });
        }
        for (key, tensor) in &src.tensors {
            let target_tensor = &dst.tensors[key];
            if tensor.shape() != target_tensor.shape() {
                return Err(Error::Transfer {
                    group: dst_name.as_str().to_string(),
                    message: format!(
                        "`{key}` shapes differ: {:?} vs {:?}",
                        tensor.shape(),
                        target_tensor.shape()
                    ),
                });
            }
        }
    }
    for &(src_name, dst_name) in map.pairs() {
        let src = source.group(src_name).unwrap().clone();
        let dst = target.group_mut(dst_name).unwrap();
        for (key, tensor) in src.tensors {
            dst.tensors.insert(key, tensor);
        }
    }
    Ok(())
}

/// Replaces the output group with a fresh task head of `num_classes`
/// rows, uniform-initialized from the seed. All other groups are untouched.
pub fn replace_output_layer(
    model: &mut ClassifierModel,
    num_classes: usize,
    seed: u64,
) -> Result<()> {
    if num_classes < 2 {
        return Err(Error::config(format!(
            "num_classes must be >= 2, got {num_classes}"
        )));
    }
    model.config.num_classes = num_classes;
    let width = model.config.output_input_width();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let group = model
        .params
        .group_mut(GroupName::Output)
        .ok_or_else(|| Error::Transfer {
            group: "output".to_string(),
            message: "missing output group".to_string(),
        })?;
    group
        .tensors
        .insert("w".to_string(), uniform_init(&mut rng, num_classes, width, width));
    group
        .tensors
        .insert("b".to_string(), uniform_init(&mut rng, 1, num_classes, width));
    group.frozen = false;
    Ok(())
}
