//! Skip-gram word embeddings with negative sampling.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::text::{Vocabulary, RESERVED};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub min_count: u64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 32,
            window: 5,
            negatives: 5,
            min_count: 20,
            epochs: 10,
            lr: 0.025,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.epochs == 0 {
            return Err(Error::config("dim and epochs must be positive".to_string()));
        }
        if self.negatives < 1 {
            return Err(Error::config("negatives must be >= 1".to_string()));
        }
        if self.window < 1 {
            return Err(Error::config("window must be >= 1".to_string()));
        }
        if self.lr <= 0.0 {
            return Err(Error::config("lr must be positive".to_string()));
        }
        Ok(())
    }
}

/// Unigram sampling table with weights proportional to `count^0.75`,
/// excluding the reserved tokens.
pub struct NegativeTable {
    ids: Vec<usize>,
    cumulative: Vec<f64>,
    total: f64,
}

impl NegativeTable {
    pub fn new(vocab: &Vocabulary) -> Result<Self> {
        let mut ids = Vec::new();
        let mut cumulative = Vec::new();
        let mut total = 0.0;
        for id in vocab.content_ids() {
            let weight = (vocab.count_of(id) as f64).powf(0.75);
            if weight > 0.0 {
                total += weight;
                ids.push(id);
                cumulative.push(total);
            }
        }
        if ids.is_empty() {
            return Err(Error::config(
                "vocabulary has no sampleable tokens after filtering".to_string(),
            ));
        }
        Ok(NegativeTable {
            ids,
            cumulative,
            total,
        })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let x = rng.gen::<f64>() * self.total;
        let idx = self.cumulative.partition_point(|&c| c <= x);
        self.ids[idx.min(self.ids.len() - 1)]
    }

    /// Resamples until the draw differs from `exclude`; gives up (returning
    /// `None`) when the table has no alternative.
    pub fn sample_excluding(&self, rng: &mut ChaCha8Rng, exclude: usize) -> Option<usize> {
        if self.ids.len() == 1 && self.ids[0] == exclude {
            return None;
        }
        loop {
            let id = self.sample(rng);
            if id != exclude {
                return Some(id);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedEmbeddings {
    /// `[V, dim]` center-vector matrix aligned to the vocabulary; reserved
    /// rows are zero (never trained).
    pub matrix: Tensor,
    pub vocab: Vocabulary,
    pub epoch_losses: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    // ln(sigmoid(x)), stable for large |x|
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Trains skip-gram-with-negative-sampling embeddings over the corpus.
/// For each (center, context) pair within the window, ascends
/// `log sigma(u_ctx . v_cen) + sum_neg log sigma(-u_neg . v_cen)`;
/// negatives are drawn from the `count^0.75` table and never equal the
/// positive context token. Deterministic given the seed.
pub fn train_word2vec(
    corpus: &[Vec<String>],
    config: &SkipGramConfig,
    seed: u64,
) -> Result<TrainedEmbeddings> {
    config.validate()?;
    let vocab = Vocabulary::build(
        corpus.iter().map(|line| line.iter()),
        config.min_count,
        None,
    )?;
    if vocab.len() == RESERVED.len() {
        return Err(Error::config(
            "corpus is empty after min_count filtering".to_string(),
        ));
    }
    let table = NegativeTable::new(&vocab)?;
    let dim = config.dim;
    let v = vocab.len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // center vectors random, context vectors zero; reserved rows stay zero
    let mut centers = vec![0.0; v * dim];
    let bound = 0.5 / dim as f64;
    for id in vocab.content_ids() {
        for x in &mut centers[id * dim..(id + 1) * dim] {
            *x = rng.gen_range(-bound..=bound);
        }
    }
    let mut contexts = vec![0.0; v * dim];

    // pre-encode, dropping tokens that fell below min_count
    let encoded: Vec<Vec<usize>> = corpus
        .iter()
        .map(|line| {
            line.iter()
                .filter_map(|t| vocab.id_of(t))
                .filter(|&id| id >= RESERVED.len())
                .collect()
        })
        .filter(|ids: &Vec<usize>| ids.len() >= 2)
        .collect();
    if encoded.is_empty() {
        return Err(Error::config(
            "no training pairs remain after filtering".to_string(),
        ));
    }

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut grad = vec![0.0; dim];
    for epoch in 0..config.epochs {
        // linear learning-rate decay over epochs
        let lr = config.lr * (1.0 - epoch as f64 / config.epochs as f64).max(1e-4);
        for line in &encoded {
            for (i, &center) in line.iter().enumerate() {
                let lo = i.saturating_sub(config.window);
                let hi = (i + config.window).min(line.len() - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let context = line[j];
                    let vc = center * dim;
                    grad.fill(0.0);

                    let uo = context * dim;
                    let dot: f64 = (0..dim)
                        .map(|d| contexts[uo + d] * centers[vc + d])
                        .sum();
                    let err = sigmoid(dot) - 1.0;
                    for d in 0..dim {
                        grad[d] += err * contexts[uo + d];
                        contexts[uo + d] -= lr * err * centers[vc + d];
                    }

                    for _ in 0..config.negatives {
                        let Some(neg) = table.sample_excluding(&mut rng, context) else {
                            break;
                        };
                        let un = neg * dim;
                        let dot: f64 =
                            (0..dim).map(|d| contexts[un + d] * centers[vc + d]).sum();
                        let err = sigmoid(dot);
                        for d in 0..dim {
                            grad[d] += err * contexts[un + d];
                            contexts[un + d] -= lr * err * centers[vc + d];
                        }
                    }

                    for d in 0..dim {
                        centers[vc + d] -= lr * grad[d];
                    }
                }
            }
        }
        // measure the epoch loss with negatives reseeded identically every
        // epoch, so the series reflects parameter quality rather than
        // sampling noise
        epoch_losses.push(measure_loss(
            &centers, &contexts, &encoded, &table, config, seed,
        ));
    }

    Ok(TrainedEmbeddings {
        matrix: Tensor::matrix(v, dim, centers)?,
        vocab,
        epoch_losses,
    })
}

/// The skip-gram objective over all pairs, with the negative draws taken
/// from a fixed stream; a deterministic function of the parameters.
fn measure_loss(
    centers: &[f64],
    contexts: &[f64],
    encoded: &[Vec<usize>],
    table: &NegativeTable,
    config: &SkipGramConfig,
    seed: u64,
) -> f64 {
    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut loss = 0.0;
    let mut pairs = 0u64;
    for line in encoded {
        for (i, &center) in line.iter().enumerate() {
            let lo = i.saturating_sub(config.window);
            let hi = (i + config.window).min(line.len() - 1);
            for j in lo..=hi {
                if j == i {
                    continue;
                }
                let context = line[j];
                pairs += 1;
                let vc = center * dim;
                let uo = context * dim;
                let dot: f64 = (0..dim).map(|d| contexts[uo + d] * centers[vc + d]).sum();
                loss -= log_sigmoid(dot);
                for _ in 0..config.negatives {
                    let Some(neg) = table.sample_excluding(&mut rng, context) else {
                        break;
                    };
                    let un = neg * dim;
                    let dot: f64 = (0..dim).map(|d| contexts[un + d] * centers[vc + d]).sum();
                    loss -= log_sigmoid(-dot);
                }
            }
        }
    }
    loss / pairs.max(1) as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Writes `token v1 v2 ... vD` per line, full f64 round-trip precision.
pub fn export_text(embeddings: &TrainedEmbeddings, path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let dim = embeddings.matrix.shape()[1];
    let mut out = String::new();
    for id in 0..embeddings.vocab.len() {
        out.push_str(embeddings.vocab.token_of(id).unwrap());
        for d in 0..dim {
            out.push(' ');
            out.push_str(&format!("{}", embeddings.matrix.values()[id * dim + d]));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parses the plain-text export back into `(tokens, rows)`.
pub fn import_text(path: impl AsRef<std::path::Path>) -> Result<Vec<(String, Vec<f64>)>> {
    let path = path.as_ref();
    let raw =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rows = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let token = parts
            .next()
            .ok_or_else(|| Error::data(idx + 1, "empty embedding line"))?
            .to_string();
        let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let values =
            values.map_err(|e| Error::data(idx + 1, format!("bad embedding value: {e}")))?;
        rows.push((token, values));
    }
    Ok(rows)
}
