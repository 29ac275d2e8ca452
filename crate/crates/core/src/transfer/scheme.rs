//! Transfer schemes: interchangeable strategies for initializing the
//! target classifier from (optionally) a pretrained checkpoint. Each
//! variant registers under the name the CLI selects at runtime.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::data::ClozeDataset;
use crate::error::{Error, Result};
use crate::model::{ClassifierModel, GroupName, ModelConfig};
use crate::registry::Registry;
use crate::text::Vocabulary;

use super::{replace_output_layer, transfer_weights, LayerMap};

pub struct SchemeContext<'a> {
    pub source: Option<&'a Checkpoint>,
    pub train: &'a ClozeDataset,
    /// Requested architecture; schemes that adopt a checkpoint override the
    /// dimensions that must match the source.
    pub model: ModelConfig,
    pub seed: u64,
    /// Overrides the scheme's default embedding freeze behavior.
    pub freeze_embedding: Option<bool>,
}

/// Builds `(classifier, vocabulary)` ready for fine-tuning.
pub trait TransferScheme: Send + Sync {
    fn name(&self) -> &'static str;

    /// Checkpoint kind this scheme consumes; `None` means no source.
    fn source_kind(&self) -> Option<ModelKind>;

    fn build(&self, ctx: &SchemeContext<'_>) -> Result<(ClassifierModel, Vocabulary)>;
}

fn require_source<'a>(ctx: &SchemeContext<'a>, scheme: &str, kind: ModelKind) -> Result<&'a Checkpoint> {
    let source = ctx.source.ok_or_else(|| {
        Error::config(format!("scheme `{scheme}` requires a source checkpoint"))
    })?;
    if source.meta.kind != kind {
        return Err(Error::config(format!(
            "scheme `{scheme}` expects a {kind} checkpoint, got {}",
            source.meta.kind
        )));
    }
    Ok(source)
}

fn task_vocabulary(train: &ClozeDataset) -> Result<Vocabulary> {
    Vocabulary::build(train.examples.iter().map(|e| e.tokens.iter()), 1, None)
}

/// No pretraining: fresh parameters over a task-data vocabulary.
struct RandomInit;

impl TransferScheme for RandomInit {
    fn name(&self) -> &'static str {
        "random"
    }

    fn source_kind(&self) -> Option<ModelKind> {
        None
    }

    fn build(&self, ctx: &SchemeContext<'_>) -> Result<(ClassifierModel, Vocabulary)> {
        let vocab = task_vocabulary(ctx.train)?;
        let config = ModelConfig {
            vocab_size: vocab.len(),
            ..ctx.model.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let model = ClassifierModel::init(config, &mut rng)?;
        Ok((model, vocab))
    }
}

/// Pretrained word embeddings initialize (and by default pin) the
/// embedding layer; rows for tokens absent from the source stay random.
struct PretrainedEmbeddings;

impl TransferScheme for PretrainedEmbeddings {
    fn name(&self) -> &'static str {
        "p-emb"
    }

    fn source_kind(&self) -> Option<ModelKind> {
        Some(ModelKind::Embedding)
    }

    fn build(&self, ctx: &SchemeContext<'_>) -> Result<(ClassifierModel, Vocabulary)> {
        let source = require_source(ctx, self.name(), ModelKind::Embedding)?;
        let matrix = source.tensor("embedding.weight").ok_or_else(|| {
            Error::format("embedding checkpoint lacks `embedding.weight`".to_string())
        })?;
        let dim = matrix.shape()[1];
        let vocab = task_vocabulary(ctx.train)?;
        let config = ModelConfig {
            vocab_size: vocab.len(),
            embedding_dim: dim,
            ..ctx.model.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let mut model = ClassifierModel::init(config, &mut rng)?;

        let group = model.params.group_mut(GroupName::Embedding).unwrap();
        let weight = group.tensors.get_mut("weight").unwrap();
        let mut copied = 0usize;
        for id in 0..vocab.len() {
            let token = vocab.token_of(id).unwrap();
            if let Some(src_id) = source.meta.vocabulary.id_of(token) {
                let row = &matrix.values()[src_id * dim..(src_id + 1) * dim];
                weight.values_mut()[id * dim..(id + 1) * dim].copy_from_slice(row);
                copied += 1;
            }
        }
        if copied == 0 {
            return Err(Error::config(
                "no task token appears in the pretrained embedding vocabulary".to_string(),
            ));
        }
        group.frozen = ctx.freeze_embedding.unwrap_or(true);
        Ok((model, vocab))
    }
}

/// A trained sentiment classifier donates everything except the task head.
struct PretrainedSentiment;

impl TransferScheme for PretrainedSentiment {
    fn name(&self) -> &'static str {
        "p-sent"
    }

    fn source_kind(&self) -> Option<ModelKind> {
        Some(ModelKind::Classifier)
    }

    fn build(&self, ctx: &SchemeContext<'_>) -> Result<(ClassifierModel, Vocabulary)> {
        let source = require_source(ctx, self.name(), ModelKind::Classifier)?;
        let src_model = source.to_classifier()?;
        let vocab = source.meta.vocabulary.clone();
        let config = ModelConfig {
            vocab_size: src_model.config.vocab_size,
            embedding_dim: src_model.config.embedding_dim,
            lstm_size: src_model.config.lstm_size,
            num_lstm_layers: src_model.config.num_lstm_layers,
            bidirectional: src_model.config.bidirectional,
            ..ctx.model.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let mut model = ClassifierModel::init(config, &mut rng)?;
        transfer_weights(
            &src_model.params,
            &mut model.params,
            &LayerMap::classifier_to_classifier(),
        )?;
        replace_output_layer(&mut model, ctx.model.num_classes, ctx.seed)?;
        if let Some(freeze) = ctx.freeze_embedding {
            model.params.group_mut(GroupName::Embedding).unwrap().frozen = freeze;
        }
        Ok((model, vocab))
    }
}

/// A pretrained language model donates embedding and both recurrent
/// groups; attention and output start fresh. Unidirectional by
/// construction, so the concatenation method is available.
struct PretrainedLm;

impl TransferScheme for PretrainedLm {
    fn name(&self) -> &'static str {
        "p-lm"
    }

    fn source_kind(&self) -> Option<ModelKind> {
        Some(ModelKind::LanguageModel)
    }

    fn build(&self, ctx: &SchemeContext<'_>) -> Result<(ClassifierModel, Vocabulary)> {
        let source = require_source(ctx, self.name(), ModelKind::LanguageModel)?;
        let lm = source.to_lm()?;
        if ctx.model.bidirectional {
            return Err(Error::config(
                "language-model initialization requires a unidirectional classifier".to_string(),
            ));
        }
        let vocab = source.meta.vocabulary.clone();
        let config = ModelConfig {
            vocab_size: lm.config.vocab_size,
            embedding_dim: lm.config.embedding_dim,
            lstm_size: lm.config.lstm_size,
            num_lstm_layers: lm.config.num_lstm_layers,
            bidirectional: false,
            ..ctx.model.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let mut model = ClassifierModel::init(config, &mut rng)?;
        let map = if lm.config.num_lstm_layers == 2 {
            LayerMap::lm_to_classifier()
        } else {
            LayerMap::new(vec![
                (GroupName::Embedding, GroupName::Embedding),
                (GroupName::Lstm1, GroupName::Lstm1),
            ])
        };
        transfer_weights(&lm.params, &mut model.params, &map)?;
        if let Some(freeze) = ctx.freeze_embedding {
            model.params.group_mut(GroupName::Embedding).unwrap().frozen = freeze;
        }
        Ok((model, vocab))
    }
}

/// All transfer schemes, keyed by CLI name.
pub fn transfer_schemes() -> Registry<dyn TransferScheme> {
    let mut registry: Registry<dyn TransferScheme> = Registry::new("transfer scheme");
    registry.register("random", Box::new(RandomInit));
    registry.register("p-emb", Box::new(PretrainedEmbeddings));
    registry.register("p-sent", Box::new(PretrainedSentiment));
    registry.register("p-lm", Box::new(PretrainedLm));
    registry
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_cloze, SyntheticConfig};
    use crate::model::LmConfig;
    use crate::tensor::Tensor;
    use std::collections::BTreeMap;

    fn tiny_data() -> ClozeDataset {
        let config = SyntheticConfig {
            num_classes: 3,
            train_per_class: 10,
            dev_per_class: 2,
            vocab_size: 30,
            seed: 5,
            ..SyntheticConfig::default()
        };
        generate_synthetic_cloze(&config).unwrap().train
    }

    fn base_model_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 0,
            embedding_dim: 4,
            lstm_size: 5,
            num_lstm_layers: 2,
            bidirectional: false,
            num_classes: 3,
            embedding_noise: 0.0,
            embedding_dropout: 0.0,
            lstm_dropout: 0.0,
            use_concat: false,
        }
    }

    #[test]
    fn registry_lists_all_schemes() {
        let registry = transfer_schemes();
        let names = registry.names();
        for expected in ["random", "p-emb", "p-sent", "p-lm"] {
            assert!(names.contains(&expected), "missing {expected}");
        }
    }

    #[test]
    fn random_scheme_builds_over_task_vocab() {
        let train = tiny_data();
        let registry = transfer_schemes();
        let scheme = registry.resolve("random").unwrap();
        let ctx = SchemeContext {
            source: None,
            train: &train,
            model: base_model_config(),
            seed: 1,
            freeze_embedding: None,
        };
        let (model, vocab) = scheme.build(&ctx).unwrap();
        assert_eq!(model.config.vocab_size, vocab.len());
        assert!(!model.params.group(GroupName::Embedding).unwrap().frozen);
    }

    #[test]
    fn p_emb_copies_rows_and_freezes() {
        let train = tiny_data();
        // build an "embedding checkpoint" over the same token space
        let vocab = task_vocabulary(&train).unwrap();
        let dim = 4;
        let matrix = Tensor::matrix(
            vocab.len(),
            dim,
            (0..vocab.len() * dim).map(|i| i as f64 * 0.01).collect(),
        )
        .unwrap();
        let ckpt = Checkpoint::from_embedding(&matrix, vocab.clone(), BTreeMap::new());
        let registry = transfer_schemes();
        let scheme = registry.resolve("p-emb").unwrap();
        let ctx = SchemeContext {
            source: Some(&ckpt),
            train: &train,
            model: base_model_config(),
            seed: 2,
            freeze_embedding: None,
        };
        let (model, task_vocab) = scheme.build(&ctx).unwrap();
        assert!(model.params.group(GroupName::Embedding).unwrap().frozen);
        let weight = model.params.tensor(GroupName::Embedding, "weight").unwrap();
        // every task token present in the source vocab has the source row
        let some_token = task_vocab.token_of(4).unwrap();
        let src_id = vocab.id_of(some_token).unwrap();
        let task_id = task_vocab.id_of(some_token).unwrap();
        assert_eq!(
            &weight.values()[task_id * dim..(task_id + 1) * dim],
            &matrix.values()[src_id * dim..(src_id + 1) * dim]
        );
    }

    #[test]
    fn p_lm_rejects_bidirectional_targets() {
        let train = tiny_data();
        let vocab = task_vocabulary(&train).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lm = crate::model::LanguageModel::init(
            LmConfig {
                vocab_size: vocab.len(),
                embedding_dim: 4,
                lstm_size: 5,
                num_lstm_layers: 2,
                ..LmConfig::default()
            },
            &mut rng,
        )
        .unwrap();
        let ckpt = Checkpoint::from_lm(&lm, vocab, vec![], BTreeMap::new());
        let registry = transfer_schemes();
        let scheme = registry.resolve("p-lm").unwrap();
        let ctx = SchemeContext {
            source: Some(&ckpt),
            train: &train,
            model: ModelConfig {
                bidirectional: true,
                ..base_model_config()
            },
            seed: 3,
            freeze_embedding: None,
        };
        assert!(scheme.build(&ctx).is_err());
    }

    #[test]
    fn missing_source_is_a_config_error() {
        let train = tiny_data();
        let registry = transfer_schemes();
        for name in ["p-emb", "p-sent", "p-lm"] {
            let scheme = registry.resolve(name).unwrap();
            let ctx = SchemeContext {
                source: None,
                train: &train,
                model: base_model_config(),
                seed: 0,
                freeze_embedding: None,
            };
            assert!(matches!(scheme.build(&ctx), Err(Error::Config(_))), "{name}");
        }
    }
}
