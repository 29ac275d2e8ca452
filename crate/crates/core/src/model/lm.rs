//! Next-token language model: embedding, stacked unidirectional LSTM, and
//! a softmax head over the vocabulary.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, ValueId};
use crate::tensor::Tensor;

use super::layers::{dropout_rows, embed_rows, lstm_chain, Phase};
use super::{uniform_init, GroupName, ParamGroup, Params};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub lstm_size: usize,
    pub num_lstm_layers: usize,
    pub embedding_noise: f64,
    pub embedding_dropout: f64,
    pub lstm_dropout: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            vocab_size: 0,
            embedding_dim: 32,
            lstm_size: 64,
            num_lstm_layers: 2,
            embedding_noise: 0.0,
            embedding_dropout: 0.0,
            lstm_dropout: 0.0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embedding_dim == 0 || self.lstm_size == 0 {
            return Err(Error::config(format!("dimensions must be positive: {self:?}")));
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
        Ok(())
    }
}

/// Forward graph of one sequence: per-step next-token distributions.
pub struct BuiltLm {
    pub graph: Graph,
    /// `[N,V]` softmax rows; row `t` predicts token `t+1`.
    pub distributions: ValueId,
    /// `[N,V]` log-softmax rows (loss path).
    pub log_distributions: ValueId,
    pub top_states: Vec<ValueId>,
    /// Mean next-token cross-entropy over the `N-1` transition events;
    /// present when the sequence has at least two tokens.
    pub loss: Option<ValueId>,
}

#[derive(Clone, Debug)]
pub struct LanguageModel {
    pub config: LmConfig,
    pub params: Params,
}

impl LanguageModel {
    pub fn init(config: LmConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut params = Params::new();

        let mut embedding = ParamGroup::new(GroupName::Embedding);
        embedding.tensors.insert(
            "weight".to_string(),
            uniform_init(rng, config.vocab_size, config.embedding_dim, config.embedding_dim),
        );
        params.insert_group(embedding);

        params.insert_group(super::init_lstm_group(
            rng,
            GroupName::Lstm1,
            config.embedding_dim,
            config.lstm_size,
            false,
        ));
        if config.num_lstm_layers == 2 {
            params.insert_group(super::init_lstm_group(
                rng,
                GroupName::Lstm2,
                config.lstm_size,
                config.lstm_size,
                false,
            ));
        }

        let mut out = ParamGroup::new(GroupName::Output);
        out.tensors.insert(
            "w".to_string(),
            uniform_init(rng, config.vocab_size, config.lstm_size, config.lstm_size),
        );
        out.tensors.insert(
            "b".to_string(),
            uniform_init(rng, 1, config.vocab_size, config.lstm_size),
        );
        params.insert_group(out);

        Ok(LanguageModel { config, params })
    }

    /// Builds the forward graph over `ids`. `with_loss` attaches the mean
    /// next-token cross-entropy when the sequence has >= 2 tokens.
    pub fn build_graph(
        &self,
        ids: &[usize],
        with_loss: bool,
        phase: &mut Phase<'_>,
    ) -> Result<BuiltLm> {
        if ids.is_empty() {
            return Err(Error::contract(
                "language model forward requires a non-empty sequence".to_string(),
            ));
        }
        let config = &self.config;
        let mut g = Graph::new();
        let embedding = g.param(
            "embedding.weight",
            self.params.tensor(GroupName::Embedding, "weight")?.clone(),
        );
        let embedded = embed_rows(
            &mut g,
            embedding,
            ids,
            config.vocab_size,
            config.embedding_noise,
            config.embedding_dropout,
            phase,
        )?;
        let n = ids.len();
        let mut rows: Vec<ValueId> = (0..n).map(|i| g.gather_rows(embedded, vec![i])).collect();
        let valid = vec![true; n];

        for layer in 0..config.num_lstm_layers {
            let group = if layer == 0 {
                GroupName::Lstm1
            } else {
                GroupName::Lstm2
            };
            if layer > 0 {
                if let Phase::Train(rng) = phase {
                    if config.lstm_dropout > 0.0 {
                        rows = rows
                            .into_iter()
                            .map(|r| {
                                dropout_rows(&mut g, r, config.lstm_size, config.lstm_dropout, rng)
                            })
                            .collect();
                    }
                }
            }
            let mut get = |key: &str| -> Result<ValueId> {
                let t = self.params.tensor(group, &format!("fwd.{key}"))?;
                Ok(g.param(format!("{group}.fwd.{key}"), t.clone()))
            };
            let weights = super::layers::LstmWeights {
                w_x: get("w_x")?,
                w_h: get("w_h")?,
                b: get("b")?,
            };
            let out = lstm_chain(&mut g, &rows, &valid, weights, config.lstm_size)?;
            rows = out.states;
        }
        let top_states = rows.clone();

        let h = g.stack_rows(rows);
        let w = g.param(
            "output.w",
            self.params.tensor(GroupName::Output, "w")?.clone(),
        );
        let b = g.param(
            "output.b",
            self.params.tensor(GroupName::Output, "b")?.clone(),
        );
        let wt = g.transpose(w);
        let scores = g.matmul(h, wt);
        let logits = g.add_row(scores, b);
        let distributions = g.row_softmax(logits);
        let log_distributions = g.row_log_softmax(logits);

        let loss = if with_loss && n >= 2 {
            // indicator[t, ids[t+1]] = 1 for t in 0..n-1
            let mut indicator = vec![0.0; n * config.vocab_size];
            for t in 0..n - 1 {
                indicator[t * config.vocab_size + ids[t + 1]] = 1.0;
            }
            let ind = g.constant(Tensor::matrix(n, config.vocab_size, indicator)?);
            let picked = g.mul(log_distributions, ind);
            let total = g.sum(picked);
            Some(g.scale(total, -1.0 / (n - 1) as f64))
        } else {
            None
        };

        Ok(BuiltLm {
            graph: g,
            distributions,
            log_distributions,
            top_states,
            loss,
        })
    }

    /// Eval-mode per-step next-token distributions; row `t` predicts the
    /// token at `t+1`.
    pub fn forward(&self, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut phase = Phase::Eval;
        let mut built = self.build_graph(ids, false, &mut phase)?;
        built.graph.forward(built.distributions)?;
        let t = built.graph.value(built.distributions).unwrap();
        let v = self.config.vocab_size;
        Ok((0..ids.len())
            .map(|i| t.values()[i * v..(i + 1) * v].to_vec())
            .collect())
    }

    /// Total negative log-likelihood and event count of the `N-1`
    /// next-token transitions of one sequence.
    pub fn sequence_nll(&self, ids: &[usize]) -> Result<(f64, usize)> {
        if ids.len() < 2 {
            return Ok((0.0, 0));
        }
        let mut phase = Phase::Eval;
        let mut built = self.build_graph(ids, false, &mut phase)?;
        built.graph.forward(built.log_distributions)?;
        let t = built.graph.value(built.log_distributions).unwrap();
        let v = self.config.vocab_size;
        let mut nll = 0.0;
        for step in 0..ids.len() - 1 {
            nll -= t.values()[step * v + ids[step + 1]];
        }
        Ok((nll, ids.len() - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_lm(seed: u64) -> LanguageModel {
        let config = LmConfig {
            vocab_size: 7,
            embedding_dim: 3,
            lstm_size: 4,
            num_lstm_layers: 2,
            ..LmConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LanguageModel::init(config, &mut rng).unwrap()
    }

    #[test]
    fn rows_are_distributions() {
        let lm = tiny_lm(1);
        let dists = lm.forward(&[3, 4, 5, 6]).unwrap();
        assert_eq!(dists.len(), 4);
        for row in dists {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn zero_output_weights_give_uniform_rows() {
        let mut lm = tiny_lm(2);
        let out = lm.params.group_mut(GroupName::Output).unwrap();
        for t in out.tensors.values_mut() {
            for v in t.values_mut() {
                *v = 0.0;
            }
        }
        let dists = lm.forward(&[1, 2, 3]).unwrap();
        for row in dists {
            for p in row {
                assert!((p - 1.0 / 7.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_input_is_contract_violation() {
        let lm = tiny_lm(3);
        assert!(matches!(lm.forward(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn nll_matches_forward_probabilities() {
        let lm = tiny_lm(4);
        let ids = [2, 5, 1, 6];
        let dists = lm.forward(&ids).unwrap();
        let (nll, events) = lm.sequence_nll(&ids).unwrap();
        assert_eq!(events, 3);
        let expected: f64 = (0..3).map(|t| -dists[t][ids[t + 1]].ln()).sum();
        assert!((nll - expected).abs() < 1e-9);
    }

    #[test]
    fn loss_is_mean_transition_nll() {
        let lm = tiny_lm(5);
        let ids = [1, 2, 3];
        let mut phase = Phase::Eval;
        let mut built = lm.build_graph(&ids, true, &mut phase).unwrap();
        let loss = built.loss.unwrap();
        built.graph.forward(loss).unwrap();
        let loss_v = built.graph.value(loss).unwrap().values()[0];
        let (nll, events) = lm.sequence_nll(&ids).unwrap();
        assert!((loss_v - nll / events as f64).abs() < 1e-9);
    }
}
