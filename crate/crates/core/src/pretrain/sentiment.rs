//! Sentiment-classifier pretraining: the same architecture trained on a
//! labeled-text dataset, embedding layer optionally seeded from pretrained
//! word vectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{ClassifierModel, GroupName, ModelConfig};
use crate::optim::AdamState;
use crate::text::Vocabulary;
use crate::transfer::{
    evaluate_classifier, group_hashes_hex, train_epoch, Encoded, EpochRecord, TrainConfig,
};

#[derive(Clone, Debug)]
pub struct SentimentOptions {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Pin the embedding group after initialization.
    pub freeze_embedding: bool,
}

#[derive(Debug)]
pub struct TrainedSentiment {
    pub model: ClassifierModel,
    pub vocab: Vocabulary,
    pub history: Vec<EpochRecord>,
}

/// Copies embedding rows for every model-vocabulary token present in the
/// source checkpoint; other rows keep their random init. Returns how many
/// rows were copied.
pub fn seed_embedding_rows(
    model: &mut ClassifierModel,
    vocab: &Vocabulary,
    source: &Checkpoint,
) -> Result<usize> {
    let matrix = source.tensor("embedding.weight").ok_or_else(|| {
        Error::format("embedding checkpoint lacks `embedding.weight`".to_string())
    })?;
    let dim = matrix.shape()[1];
    if dim != model.config.embedding_dim {
        return Err(Error::Transfer {
            group: "embedding".to_string(),
            message: format!(
                "pretrained dimension {dim} does not match model dimension {}",
                model.config.embedding_dim
            ),
        });
    }
    let weight = model
        .params
        .group_mut(GroupName::Embedding)
        .unwrap()
        .tensors
        .get_mut("weight")
        .unwrap();
    let mut copied = 0;
    for id in 0..vocab.len() {
        let token = vocab.token_of(id).unwrap();
        if let Some(src_id) = source.meta.vocabulary.id_of(token) {
            let row = &matrix.values()[src_id * dim..(src_id + 1) * dim];
            weight.values_mut()[id * dim..(id + 1) * dim].copy_from_slice(row);
            copied += 1;
        }
    }
    Ok(copied)
}

/// Trains the classifier on labeled text with cross-entropy. With an
/// embedding checkpoint, in-vocabulary rows start from the pretrained
/// matrix (random for the rest); the embedding stays trainable unless the
/// options freeze it.
pub fn train_sentiment(
    dataset: &LabeledDataset,
    embeddings: Option<&Checkpoint>,
    options: &SentimentOptions,
    seed: u64,
) -> Result<TrainedSentiment> {
    if dataset.examples.is_empty() {
        return Err(Error::config("sentiment dataset is empty".to_string()));
    }
    let num_classes = dataset.label_names.len();
    if let Some(bad) = dataset.examples.iter().find(|e| e.label >= num_classes) {
        return Err(Error::contract(format!(
            "label {} out of range for {num_classes} classes",
            bad.label
        )));
    }
    let vocab = Vocabulary::build(dataset.examples.iter().map(|e| e.tokens.iter()), 1, None)?;
    let config = ModelConfig {
        vocab_size: vocab.len(),
        num_classes,
        ..options.model.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ClassifierModel::init(config, &mut rng)?;
    if let Some(ckpt) = embeddings {
        seed_embedding_rows(&mut model, &vocab, ckpt)?;
    }
    model.params.group_mut(GroupName::Embedding).unwrap().frozen = options.freeze_embedding;

    let encoded: Vec<Encoded> = dataset
        .examples
        .iter()
        .map(|e| Encoded::from_labeled(e, &vocab))
        .collect();

    let mut train_rng = ChaCha8Rng::seed_from_u64(options.train.seed);
    let mut adam = AdamState::new(options.train.optimizer);
    let mut history = Vec::new();
    for epoch in 1..=options.train.max_epochs {
        let metrics = train_epoch(
            &mut model,
            &encoded,
            &options.train,
            &Default::default(),
            &mut adam,
            &mut train_rng,
        )?;
        let (train_f1, _) = evaluate_classifier(&model, &encoded)?;
        let mut record = EpochRecord::base(epoch, metrics.mean_loss, &metrics);
        record.train_macro_f1 = Some(train_f1);
        record.group_hashes = group_hashes_hex(&model.params);
        history.push(record);
    }

    Ok(TrainedSentiment {
        model,
        vocab,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledText;
    use crate::optim::AdamConfig;
    use crate::pretrain::word2vec::{train_word2vec, SkipGramConfig};
    use std::collections::BTreeMap;

    /// Three separable classes keyed by a class token.
    fn toy_dataset() -> LabeledDataset {
        let mut examples = Vec::new();
        for i in 0..30 {
            for label in 0..3usize {
                let filler = format!("w{}", i % 6);
                examples.push(LabeledText {
                    label,
                    tokens: vec![
                        filler.clone(),
                        format!("key{label}"),
                        filler,
                        format!("key{label}"),
                    ],
                });
            }
        }
        LabeledDataset {
            label_names: vec!["neg".into(), "neu".into(), "pos".into()],
            examples,
        }
    }

    fn options(epochs: usize) -> SentimentOptions {
        SentimentOptions {
            model: ModelConfig {
                embedding_dim: 8,
                lstm_size: 12,
                num_lstm_layers: 2,
                bidirectional: false,
                embedding_noise: 0.0,
                embedding_dropout: 0.0,
                lstm_dropout: 0.0,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                batch_size: 16,
                max_epochs: epochs,
                optimizer: AdamConfig {
                    lr: 0.005,
                    ..AdamConfig::default()
                },
                ..TrainConfig::default()
            },
            freeze_embedding: false,
        }
    }

    #[test]
    fn separable_set_reaches_high_train_f1_within_twenty_epochs() {
        let trained = train_sentiment(&toy_dataset(), None, &options(20), 1).unwrap();
        let best = trained
            .history
            .iter()
            .filter_map(|r| r.train_macro_f1)
            .fold(0.0f64, f64::max);
        assert!(best >= 0.95, "best train F1 {best}");
    }

    #[test]
    fn pretrained_rows_initialize_the_embedding() {
        let dataset = toy_dataset();
        let corpus: Vec<Vec<String>> = dataset.examples.iter().map(|e| e.tokens.clone()).collect();
        let emb = train_word2vec(
            &corpus,
            &SkipGramConfig {
                dim: 8,
                min_count: 1,
                epochs: 1,
                ..SkipGramConfig::default()
            },
            3,
        )
        .unwrap();
        let ckpt = Checkpoint::from_embedding(&emb.matrix, emb.vocab.clone(), BTreeMap::new());

        // zero training epochs is invalid, so run the init path manually
        let vocab =
            Vocabulary::build(dataset.examples.iter().map(|e| e.tokens.iter()), 1, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = ClassifierModel::init(
            ModelConfig {
                vocab_size: vocab.len(),
                num_classes: 3,
                ..options(1).model
            },
            &mut rng,
        )
        .unwrap();
        let copied = seed_embedding_rows(&mut model, &vocab, &ckpt).unwrap();
        assert!(copied > 0);
        let token = "key0";
        let model_id = vocab.id_of(token).unwrap();
        let src_id = emb.vocab.id_of(token).unwrap();
        let dim = 8;
        let weight = model.params.tensor(GroupName::Embedding, "weight").unwrap();
        assert_eq!(
            &weight.values()[model_id * dim..(model_id + 1) * dim],
            &emb.matrix.values()[src_id * dim..(src_id + 1) * dim]
        );
    }

    #[test]
    fn same_seed_gives_identical_history() {
        let a = train_sentiment(&toy_dataset(), None, &options(2), 5).unwrap();
        let b = train_sentiment(&toy_dataset(), None, &options(2), 5).unwrap();
        assert_eq!(
            a.model.params.group_hashes(),
            b.model.params.group_hashes()
        );
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let mut dataset = toy_dataset();
        dataset.examples[0].label = 7;
        assert!(matches!(
            train_sentiment(&dataset, None, &options(1), 0),
            Err(Error::Contract(_))
        ));
    }
}
