//! The training loop: seeded shuffling, mini-batches, gradient clipping,
//! Adam on unfrozen groups, early stopping, and per-epoch freeze auditing.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, ValueId};
use crate::metrics::macro_f1;
use crate::model::{argmax, ClassifierModel, GroupName, LanguageModel, Params, Phase};
use crate::optim::{clip_global_norm, AdamConfig, AdamState};
use crate::text::Vocabulary;

use super::freeze::{FreezePolicy, FreezeState};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub clip_norm: f64,
    pub max_epochs: usize,
    /// Early-stop patience on dev macro-F1, in epochs.
    pub patience: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            clip_norm: 0.5,
            max_epochs: 20,
            patience: 5,
            optimizer: AdamConfig::default(),
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1".to_string()));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::config("clip_norm must be positive".to_string()));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// A training example encoded against the model vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub target_index: Option<usize>,
    pub label: usize,
}

impl Encoded {
    pub fn from_cloze(example: &crate::data::ClozeExample, vocab: &Vocabulary) -> Self {
        Encoded {
            ids: vocab.encode(&example.tokens),
            target_index: Some(example.target_index),
            label: example.label,
        }
    }

    pub fn from_labeled(example: &crate::data::LabeledText, vocab: &Vocabulary) -> Self {
        Encoded {
            ids: vocab.encode(&example.tokens),
            target_index: None,
            label: example.label,
        }
    }
}

/// Anything the generic loop can train: exposes its parameter groups and
/// builds a per-example scalar loss graph.
pub trait Trainable {
    fn params(&self) -> &Params;
    fn params_mut(&mut self) -> &mut Params;
    fn build_loss(&self, example: &Encoded, phase: &mut Phase<'_>) -> Result<(Graph, ValueId)>;
}

impl Trainable for ClassifierModel {
    fn params(&self) -> &Params {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn build_loss(&self, example: &Encoded, phase: &mut Phase<'_>) -> Result<(Graph, ValueId)> {
        let built = self.build_graph(
            &example.ids,
            example.target_index,
            Some(example.label),
            phase,
        )?;
        let loss = built.loss.expect("gold label attached");
        Ok((built.graph, loss))
    }
}

impl Trainable for LanguageModel {
    fn params(&self) -> &Params {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn build_loss(&self, example: &Encoded, phase: &mut Phase<'_>) -> Result<(Graph, ValueId)> {
        if example.ids.len() < 2 {
            return Err(Error::contract(
                "language-model training needs sequences of >= 2 tokens".to_string(),
            ));
        }
        let built = self.build_graph(&example.ids, true, phase)?;
        let loss = built.loss.expect("loss attached for >= 2 tokens");
        Ok((built.graph, loss))
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EpochMetrics {
    pub mean_loss: f64,
    pub steps: usize,
    pub clipped_steps: usize,
    pub max_pre_clip_norm: f64,
    /// Max post-clip norm over steps where clipping fired.
    pub max_post_clip_norm: f64,
}

/// Effective freeze state: the schedule state OR-ed with the permanent
/// per-group flags (e.g. embeddings pinned by the pretrained-embedding
/// scheme).
fn effective_freeze(params: &Params, schedule: &FreezeState) -> FreezeState {
    let mut state = schedule.clone();
    for group in params.groups() {
        if group.frozen {
            state.freeze(group.name);
        }
    }
    state
}

/// One pass over `examples`: seeded shuffle, batches of `batch_size` (the
/// last partial batch kept), mean cross-entropy gradients, global-norm
/// clipping, one Adam update per batch on unfrozen groups only. Frozen
/// tensors are bitwise untouched.
pub fn train_epoch<T: Trainable>(
    model: &mut T,
    examples: &[Encoded],
    config: &TrainConfig,
    schedule: &FreezeState,
    adam: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<EpochMetrics> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::contract(
            "train_epoch requires a non-empty dataset".to_string(),
        ));
    }
    let freeze = effective_freeze(model.params(), schedule);

    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);

    let mut metrics = EpochMetrics::default();
    let mut total_loss = 0.0;

    for batch in order.chunks(config.batch_size) {
        // mean-gradient accumulation over the batch
        let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for &idx in batch {
            let example = &examples[idx];
            let mut phase = Phase::Train(rng);
            let (mut graph, loss) = model.build_loss(example, &mut phase)?;
            let loss_value = graph.forward(loss)?.values()[0];
            if !loss_value.is_finite() {
                return Err(Error::contract(format!(
                    "non-finite training loss {loss_value}"
                )));
            }
            total_loss += loss_value;
            graph.backward(loss)?;
            for (name, grad) in graph.param_grads() {
                match acc.get_mut(&name) {
                    Some(sum) => {
                        for (s, g) in sum.iter_mut().zip(&grad) {
                            *s += g;
                        }
                    }
                    None => {
                        acc.insert(name, grad);
                    }
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        for grad in acc.values_mut() {
            for g in grad.iter_mut() {
                *g *= scale;
            }
        }
        // drop gradients of frozen groups before clipping: the clip norm is
        // computed over the update that will actually be applied
        acc.retain(|name, _| {
            let group = name.split('.').next().unwrap_or("");
            GroupName::parse(group)
                .map(|g| !freeze.is_frozen(g))
                .unwrap_or(false)
        });

        let mut grads: Vec<&mut [f64]> = acc.values_mut().map(|v| v.as_mut_slice()).collect();
        let report = clip_global_norm(&mut grads, config.clip_norm)?;
        metrics.steps += 1;
        metrics.max_pre_clip_norm = metrics.max_pre_clip_norm.max(report.pre_norm);
        if report.clipped {
            metrics.clipped_steps += 1;
            metrics.max_post_clip_norm = metrics.max_post_clip_norm.max(report.post_norm);
        }

        let mut pairs: Vec<(String, &mut crate::tensor::Tensor)> = Vec::new();
        for (name, tensor) in model.params_mut().named_mut() {
            if let Some(grad) = acc.remove(&name) {
                tensor.set_grad(grad)?;
                pairs.push((name, tensor));
            }
        }
        adam.update(pairs.iter_mut().map(|(n, t)| (n.as_str(), &mut **t)))?;
        for (_, tensor) in pairs {
            tensor.clear_grad();
        }
    }

    metrics.mean_loss = total_loss / examples.len() as f64;
    Ok(metrics)
}

/// Predictions and macro-F1 of a classifier over encoded examples.
pub fn evaluate_classifier(
    model: &ClassifierModel,
    examples: &[Encoded],
) -> Result<(f64, Vec<usize>)> {
    if examples.is_empty() {
        return Err(Error::contract("evaluation needs examples".to_string()));
    }
    let mut predictions = Vec::with_capacity(examples.len());
    for example in examples {
        let out = model.forward(&example.ids, example.target_index)?;
        predictions.push(argmax(&out.posterior));
    }
    let golds: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let f1 = macro_f1(&predictions, &golds, model.config.num_classes)?;
    Ok((f1, predictions))
}

/// One epoch in a training history; hashes audit which groups changed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_macro_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_macro_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_perplexity: Option<f64>,
    /// Hex FNV hash of each group's values after the epoch.
    pub group_hashes: BTreeMap<String, String>,
    pub frozen: Vec<String>,
    pub clipped_steps: usize,
    pub max_post_clip_norm: f64,
}

impl EpochRecord {
    /// Record with only the fields every trainer fills in.
    pub fn base(epoch: usize, train_loss: f64, metrics: &EpochMetrics) -> Self {
        EpochRecord {
            epoch,
            train_loss,
            dev_macro_f1: None,
            train_macro_f1: None,
            train_perplexity: None,
            group_hashes: BTreeMap::new(),
            frozen: Vec::new(),
            clipped_steps: metrics.clipped_steps,
            max_post_clip_norm: metrics.max_post_clip_norm,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

pub fn group_hashes_hex(params: &Params) -> BTreeMap<String, String> {
    params
        .group_hashes()
        .into_iter()
        .map(|(g, h)| (g.as_str().to_string(), format!("{h:016x}")))
        .collect()
}

/// Runs up to `max_epochs` with the given freeze policy, early-stops on dev
/// macro-F1 with the configured patience, and leaves the best-dev
/// parameters in the model.
pub fn fine_tune(
    model: &mut ClassifierModel,
    train: &[Encoded],
    dev: &[Encoded],
    policy: &dyn FreezePolicy,
    config: &TrainConfig,
) -> Result<History> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(config.optimizer);
    let mut history = History::default();
    let mut best_params: Option<Params> = None;
    let mut epochs_since_best = 0usize;

    for epoch in 1..=config.max_epochs {
        let schedule = policy.at_epoch(epoch);
        let metrics = train_epoch(model, train, config, &schedule, &mut adam, &mut rng)?;
        let (dev_f1, _) = evaluate_classifier(model, dev)?;
        let freeze = effective_freeze(&model.params, &schedule);
        let mut record = EpochRecord::base(epoch, metrics.mean_loss, &metrics);
        record.dev_macro_f1 = Some(dev_f1);
        record.group_hashes = group_hashes_hex(&model.params);
        record.frozen = freeze
            .frozen_groups()
            .map(|g| g.as_str().to_string())
            .collect();
        history.epochs.push(record);
        if best_params.is_none() || dev_f1 > history.best_dev_f1 {
            history.best_dev_f1 = dev_f1;
            history.best_epoch = epoch;
            best_params = Some(model.params.clone());
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= config.patience {
                break;
            }
        }
    }
    if let Some(best) = best_params {
        model.params = best;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::transfer::freeze::{FtMode, SimpleFineTune};
    use rand::SeedableRng;

    fn tiny_model(seed: u64) -> ClassifierModel {
        let config = ModelConfig {
            vocab_size: 12,
            embedding_dim: 4,
            lstm_size: 6,
            num_lstm_layers: 2,
            bidirectional: false,
            num_classes: 2,
            embedding_noise: 0.0,
            embedding_dropout: 0.0,
            lstm_dropout: 0.0,
            use_concat: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ClassifierModel::init(config, &mut rng).unwrap()
    }

    /// Two-class toy set: class 0 sequences contain token 3, class 1
    /// contain token 4.
    fn toy_examples() -> Vec<Encoded> {
        let mut examples = Vec::new();
        for i in 0..20 {
            let filler = 5 + (i % 7);
            examples.push(Encoded {
                ids: vec![filler, 3, filler],
                target_index: Some(1),
                label: 0,
            });
            examples.push(Encoded {
                ids: vec![filler, 4, filler],
                target_index: Some(1),
                label: 1,
            });
        }
        examples
    }

    #[test]
    fn all_frozen_leaves_every_parameter_bitwise_unchanged() {
        let mut model = tiny_model(1);
        let before = group_hashes_hex(&model.params);
        let mut schedule = FreezeState::none();
        for g in GroupName::ALL {
            schedule.freeze(g);
        }
        let config = TrainConfig {
            batch_size: 8,
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let mut adam = AdamState::new(config.optimizer);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let metrics = train_epoch(
            &mut model,
            &toy_examples(),
            &config,
            &schedule,
            &mut adam,
            &mut rng,
        )
        .unwrap();
        assert!(metrics.mean_loss.is_finite());
        assert_eq!(group_hashes_hex(&model.params), before);
    }

    #[test]
    fn loss_decreases_after_unfrozen_steps() {
        let mut wins = 0;
        for seed in 0..10 {
            let mut model = tiny_model(seed);
            let config = TrainConfig {
                batch_size: 8,
                seed,
                ..TrainConfig::default()
            };
            let mut adam = AdamState::new(config.optimizer);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let examples = toy_examples();
            let first = train_epoch(
                &mut model,
                &examples,
                &config,
                &FreezeState::none(),
                &mut adam,
                &mut rng,
            )
            .unwrap();
            let second = train_epoch(
                &mut model,
                &examples,
                &config,
                &FreezeState::none(),
                &mut adam,
                &mut rng,
            )
            .unwrap();
            if second.mean_loss < first.mean_loss {
                wins += 1;
            }
        }
        assert!(wins >= 9, "loss decreased on only {wins}/10 seeds");
    }

    #[test]
    fn same_seed_reproduces_parameters_bitwise() {
        let run = || {
            let mut model = tiny_model(3);
            let config = TrainConfig {
                batch_size: 8,
                ..TrainConfig::default()
            };
            let mut adam = AdamState::new(config.optimizer);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            train_epoch(
                &mut model,
                &toy_examples(),
                &config,
                &FreezeState::none(),
                &mut adam,
                &mut rng,
            )
            .unwrap();
            group_hashes_hex(&model.params)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_dataset_is_a_contract_violation() {
        let mut model = tiny_model(0);
        let config = TrainConfig::default();
        let mut adam = AdamState::new(config.optimizer);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = train_epoch(
            &mut model,
            &[],
            &config,
            &FreezeState::none(),
            &mut adam,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn sgu_hashes_change_exactly_on_schedule() {
        let mut model = tiny_model(5);
        let initial = group_hashes_hex(&model.params);
        let policy = FtMode::Sgu { n: 3, k: 5 }.policy().unwrap();
        let config = TrainConfig {
            batch_size: 8,
            max_epochs: 6,
            patience: 100,
            ..TrainConfig::default()
        };
        let history = fine_tune(
            &mut model,
            &toy_examples(),
            &toy_examples(),
            policy.as_ref(),
            &config,
        )
        .unwrap();
        assert_eq!(history.epochs.len(), 6);
        let hash_at = |epoch: usize, group: &str| -> &str {
            &history.epochs[epoch - 1].group_hashes[group]
        };
        // embedding untouched through epoch 4, changes at 5
        for epoch in 1..=4 {
            assert_eq!(hash_at(epoch, "embedding"), initial["embedding"].as_str());
        }
        assert_ne!(hash_at(5, "embedding"), initial["embedding"].as_str());
        // lstm groups untouched through epoch 2, change at 3
        for group in ["lstm1", "lstm2"] {
            for epoch in 1..=2 {
                assert_eq!(hash_at(epoch, group), initial[group].as_str());
            }
            assert_ne!(hash_at(3, group), initial[group].as_str());
        }
        // attention and output move at epoch 1
        assert_ne!(hash_at(1, "attention"), initial["attention"].as_str());
        assert_ne!(hash_at(1, "output"), initial["output"].as_str());
    }

    #[test]
    fn simple_mode_changes_all_groups_at_epoch_one() {
        let mut model = tiny_model(6);
        let initial = group_hashes_hex(&model.params);
        let config = TrainConfig {
            batch_size: 8,
            max_epochs: 1,
            ..TrainConfig::default()
        };
        fine_tune(
            &mut model,
            &toy_examples(),
            &toy_examples(),
            &SimpleFineTune,
            &config,
        )
        .unwrap();
        let after = group_hashes_hex(&model.params);
        for g in GroupName::ALL {
            let name = g.as_str();
            assert_ne!(after[name], initial[name], "{name} did not change");
        }
    }

    #[test]
    fn permanently_frozen_group_survives_simple_mode() {
        let mut model = tiny_model(7);
        model
            .params
            .group_mut(GroupName::Embedding)
            .unwrap()
            .frozen = true;
        let before = group_hashes_hex(&model.params);
        let config = TrainConfig {
            batch_size: 8,
            max_epochs: 2,
            ..TrainConfig::default()
        };
        fine_tune(
            &mut model,
            &toy_examples(),
            &toy_examples(),
            &SimpleFineTune,
            &config,
        )
        .unwrap();
        let after = group_hashes_hex(&model.params);
        assert_eq!(after["embedding"], before["embedding"]);
        assert_ne!(after["output"], before["output"]);
    }
}
