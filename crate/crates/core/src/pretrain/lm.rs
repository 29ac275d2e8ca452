//! Next-token language-model pretraining and continued fine-tuning.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{LanguageModel, LmConfig};
use crate::optim::AdamState;
use crate::text::Vocabulary;
use crate::transfer::{
    group_hashes_hex, train_epoch, Encoded, EpochRecord, FreezePolicy, TrainConfig,
};

#[derive(Clone, Debug)]
pub struct LmTrainOptions {
    /// Architecture; `vocab_size` is filled from the corpus.
    pub model: LmConfig,
    /// Most frequent tokens kept in the vocabulary.
    pub vocab_max: Option<usize>,
    pub min_count: u64,
    pub train: TrainConfig,
}

impl Default for LmTrainOptions {
    fn default() -> Self {
        LmTrainOptions {
            model: LmConfig::default(),
            vocab_max: Some(50_000),
            min_count: 1,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug)]
pub struct TrainedLm {
    pub model: LanguageModel,
    pub vocab: Vocabulary,
    pub history: Vec<EpochRecord>,
    /// Perplexity on the training corpus after the final epoch.
    pub final_perplexity: f64,
}

/// Every corpus line must encode to at least two tokens (a next-token
/// event needs a successor); violators are reported by line number.
pub fn encode_corpus(
    corpus: &[(usize, Vec<String>)],
    vocab: &Vocabulary,
) -> Result<Vec<Encoded>> {
    if corpus.is_empty() {
        return Err(Error::config("corpus is empty".to_string()));
    }
    let mut encoded = Vec::with_capacity(corpus.len());
    for (line_no, tokens) in corpus {
        if tokens.len() < 2 {
            return Err(Error::data(
                *line_no,
                format!("line has {} token(s); need at least 2", tokens.len()),
            ));
        }
        encoded.push(Encoded {
            ids: vocab.encode(tokens),
            target_index: None,
            label: 0,
        });
    }
    Ok(encoded)
}

/// `exp(mean per-token negative log-likelihood)` over all next-token
/// events of the corpus.
pub fn perplexity(lm: &LanguageModel, corpus: &[Encoded]) -> Result<f64> {
    let mut nll = 0.0;
    let mut events = 0usize;
    for example in corpus {
        let (n, e) = lm.sequence_nll(&example.ids)?;
        nll += n;
        events += e;
    }
    if events == 0 {
        return Err(Error::contract(
            "perplexity over zero next-token events".to_string(),
        ));
    }
    Ok((nll / events as f64).exp())
}

/// Trains a fresh language model on the corpus: vocabulary from the most
/// frequent tokens, Adam with mini-batches and gradient clipping, final
/// training perplexity recorded.
pub fn train_language_model(
    corpus: &[(usize, Vec<String>)],
    options: &LmTrainOptions,
    seed: u64,
) -> Result<TrainedLm> {
    if corpus.is_empty() {
        return Err(Error::config("corpus is empty".to_string()));
    }
    let vocab = Vocabulary::build(
        corpus.iter().map(|(_, tokens)| tokens.iter()),
        options.min_count,
        options.vocab_max,
    )?;
    let encoded = encode_corpus(corpus, &vocab)?;

    let config = LmConfig {
        vocab_size: vocab.len(),
        ..options.model.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = LanguageModel::init(config, &mut rng)?;

    let history = run_lm_epochs(&mut model, &encoded, &options.train, None, seed)?;
    let final_perplexity = perplexity(&model, &encoded)?;
    Ok(TrainedLm {
        model,
        vocab,
        history,
        final_perplexity,
    })
}

/// Continues training an existing model on new text (its vocabulary is
/// kept; unseen tokens map to `<unk>`), optionally under a freeze policy.
pub fn finetune_language_model(
    model: &mut LanguageModel,
    vocab: &Vocabulary,
    corpus: &[(usize, Vec<String>)],
    policy: &dyn FreezePolicy,
    train: &TrainConfig,
) -> Result<(Vec<EpochRecord>, f64)> {
    let encoded = encode_corpus(corpus, vocab)?;
    let history = run_lm_epochs(model, &encoded, train, Some(policy), train.seed)?;
    let final_perplexity = perplexity(model, &encoded)?;
    Ok((history, final_perplexity))
}

fn run_lm_epochs(
    model: &mut LanguageModel,
    encoded: &[Encoded],
    train: &TrainConfig,
    policy: Option<&dyn FreezePolicy>,
    seed: u64,
) -> Result<Vec<EpochRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(train.optimizer);
    let mut history = Vec::new();
    for epoch in 1..=train.max_epochs {
        let schedule = match policy {
            Some(p) => p.at_epoch(epoch),
            None => Default::default(),
        };
        let metrics = train_epoch(model, encoded, train, &schedule, &mut adam, &mut rng)?;
        let mut record = EpochRecord::base(epoch, metrics.mean_loss, &metrics);
        record.train_perplexity = Some(metrics.mean_loss.exp());
        record.group_hashes = group_hashes_hex(&model.params);
        record.frozen = schedule
            .frozen_groups()
            .map(|g| g.as_str().to_string())
            .collect();
        history.push(record);
    }
    Ok(history)
}
