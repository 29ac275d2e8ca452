//! The three pretraining procedures: skip-gram word embeddings, next-token
//! language models, and a sentiment classifier.

mod lm;
mod sentiment;
pub mod word2vec;

pub use lm::{
    encode_corpus, finetune_language_model, perplexity, train_language_model, LmTrainOptions,
    TrainedLm,
};
pub use sentiment::{seed_embedding_rows, train_sentiment, SentimentOptions, TrainedSentiment};
pub use word2vec::{
    cosine, export_text, import_text, train_word2vec, NegativeTable, SkipGramConfig,
    TrainedEmbeddings,
};
