//! The emotion/sentiment classifier: embedding, stacked (bi)LSTM,
//! self-attention pooling, optional missing-word concatenation, softmax
//! output.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, ValueId};
use crate::tensor::Tensor;
use crate::text::PAD_ID;

use super::layers::{
    attention, bilstm_chain, cross_entropy, dropout_rows, embed_rows, lstm_chain, output_head,
    LstmWeights, Phase,
};
use super::{uniform_init, GroupName, ModelConfig, ParamGroup, Params};

/// Pooled representation and attention weights of one forward pass.
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub r: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Eval-mode forward result.
#[derive(Clone, Debug)]
pub struct ClassifierOutput {
    pub posterior: Vec<f64>,
    pub attention: AttentionOutput,
    /// Top-layer hidden state per timestep.
    pub top_states: Vec<Vec<f64>>,
}

/// The graph of one forward pass plus the interesting node ids.
pub struct BuiltClassifier {
    pub graph: Graph,
    pub posterior: ValueId,
    pub logits: ValueId,
    pub representation: ValueId,
    pub att_weights: ValueId,
    pub att_scores: ValueId,
    pub top_states: Vec<ValueId>,
    pub loss: Option<ValueId>,
}

#[derive(Clone, Debug)]
pub struct ClassifierModel {
    pub config: ModelConfig,
    pub params: Params,
}

impl ClassifierModel {
    /// Fresh model with uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` init.
    pub fn init(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
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
            config.bidirectional,
        ));
        if config.num_lstm_layers == 2 {
            params.insert_group(super::init_lstm_group(
                rng,
                GroupName::Lstm2,
                config.attention_width(),
                config.lstm_size,
                config.bidirectional,
            ));
        }

        let d = config.attention_width();
        let mut att = ParamGroup::new(GroupName::Attention);
        att.tensors.insert("w".to_string(), uniform_init(rng, d, 1, d));
        att.tensors.insert("b".to_string(), uniform_init(rng, 1, 1, d));
        params.insert_group(att);

        let out_in = config.output_input_width();
        let mut out = ParamGroup::new(GroupName::Output);
        out.tensors.insert(
            "w".to_string(),
            uniform_init(rng, config.num_classes, out_in, out_in),
        );
        out.tensors
            .insert("b".to_string(), uniform_init(rng, 1, config.num_classes, out_in));
        params.insert_group(out);

        Ok(ClassifierModel { config, params })
    }

    fn lstm_weights(
        &self,
        g: &mut Graph,
        group: GroupName,
        direction: &str,
    ) -> Result<LstmWeights> {
        let mut get = |key: &str| -> Result<ValueId> {
            let full = format!("{direction}.{key}");
            let t = self.params.tensor(group, &full)?;
            Ok(g.param(format!("{group}.{full}"), t.clone()))
        };
        Ok(LstmWeights {
            w_x: get("w_x")?,
            w_h: get("w_h")?,
            b: get("b")?,
        })
    }

    /// Builds the forward graph for one example.
    ///
    /// `gold` attaches a cross-entropy loss node. `target_index` is required
    /// when the config uses the concatenation method. The validity mask is
    /// derived from the ids: `<pad>` positions are masked everywhere.
    pub fn build_graph(
        &self,
        ids: &[usize],
        target_index: Option<usize>,
        gold: Option<usize>,
        phase: &mut Phase<'_>,
    ) -> Result<BuiltClassifier> {
        let config = &self.config;
        if ids.is_empty() {
            return Err(Error::contract(
                "classifier forward requires a non-empty sequence".to_string(),
            ));
        }
        if let Some(g) = gold {
            if g >= config.num_classes {
                return Err(Error::contract(format!(
                    "gold label {g} out of range for {} classes",
                    config.num_classes
                )));
            }
        }
        let valid: Vec<bool> = ids.iter().map(|&id| id != PAD_ID).collect();

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

        let mut top_fwd_states: Vec<ValueId> = Vec::new();
        for layer in 0..config.num_lstm_layers {
            let group = if layer == 0 {
                GroupName::Lstm1
            } else {
                GroupName::Lstm2
            };
            if layer > 0 {
                if let Phase::Train(rng) = phase {
                    if config.lstm_dropout > 0.0 {
                        let width = config.attention_width();
                        rows = rows
                            .into_iter()
                            .map(|r| dropout_rows(&mut g, r, width, config.lstm_dropout, rng))
                            .collect();
                    }
                }
            }
            if config.bidirectional {
                let fwd = self.lstm_weights(&mut g, group, "fwd")?;
                let bwd = self.lstm_weights(&mut g, group, "bwd")?;
                rows = bilstm_chain(&mut g, &rows, &valid, fwd, bwd, config.lstm_size)?;
            } else {
                let fwd = self.lstm_weights(&mut g, group, "fwd")?;
                let out = lstm_chain(&mut g, &rows, &valid, fwd, config.lstm_size)?;
                rows = out.states;
                top_fwd_states = rows.clone();
            }
        }
        let top_states = rows;

        let att_w = g.param(
            "attention.w",
            self.params.tensor(GroupName::Attention, "w")?.clone(),
        );
        let att_b = g.param(
            "attention.b",
            self.params.tensor(GroupName::Attention, "b")?.clone(),
        );
        let (mut r, att_weights, att_scores) =
            attention(&mut g, &top_states, &valid, att_w, att_b)?;

        if config.use_concat {
            let target_index = target_index.ok_or_else(|| {
                Error::contract(
                    "concatenation method requires the placeholder index".to_string(),
                )
            })?;
            r = concat_representation(
                &mut g,
                r,
                &top_fwd_states,
                target_index,
                config.lstm_size,
                config.bidirectional,
            )?;
        }

        let out_w = g.param(
            "output.w",
            self.params.tensor(GroupName::Output, "w")?.clone(),
        );
        let out_b = g.param(
            "output.b",
            self.params.tensor(GroupName::Output, "b")?.clone(),
        );
        let (posterior, logits) = output_head(&mut g, r, out_w, out_b);

        let loss = gold.map(|gold| cross_entropy(&mut g, logits, gold, config.num_classes));

        Ok(BuiltClassifier {
            graph: g,
            posterior,
            logits,
            representation: r,
            att_weights,
            att_scores,
            top_states,
            loss,
        })
    }

    /// Eval-mode forward: posterior, attention weights, and top-layer
    /// hidden states.
    pub fn forward(&self, ids: &[usize], target_index: Option<usize>) -> Result<ClassifierOutput> {
        let mut phase = Phase::Eval;
        let mut built = self.build_graph(ids, target_index, None, &mut phase)?;
        built.graph.forward(built.posterior)?;
        let posterior = built.graph.value(built.posterior).unwrap().values().to_vec();
        built.graph.forward(built.representation)?;
        let r = built
            .graph
            .value(built.representation)
            .unwrap()
            .values()
            .to_vec();
        built.graph.forward(built.att_weights)?;
        let weights = built.graph.value(built.att_weights).unwrap().values().to_vec();
        let mut top_states = Vec::with_capacity(built.top_states.len());
        for &s in &built.top_states {
            built.graph.forward(s)?;
            top_states.push(built.graph.value(s).unwrap().values().to_vec());
        }
        Ok(ClassifierOutput {
            posterior,
            attention: AttentionOutput { r, weights },
            top_states,
        })
    }

    /// Argmax class for one example.
    pub fn predict(&self, ids: &[usize], target_index: Option<usize>) -> Result<usize> {
        let out = self.forward(ids, target_index)?;
        Ok(argmax(&out.posterior))
    }
}

/// Lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Appends the top-layer forward hidden state right before the missing
/// word to the attention representation: the state at `target_index - 1`,
/// or the zero initial state when the placeholder is the first token.
pub fn concat_representation(
    g: &mut Graph,
    r: ValueId,
    top_fwd_states: &[ValueId],
    target_index: usize,
    lstm_size: usize,
    bidirectional: bool,
) -> Result<ValueId> {
    if bidirectional {
        return Err(Error::contract(
            "the concatenation method is defined for unidirectional models".to_string(),
        ));
    }
    if target_index > top_fwd_states.len() {
        return Err(Error::contract(format!(
            "placeholder index {target_index} out of range for {} steps",
            top_fwd_states.len()
        )));
    }
    let h_implicit = if target_index == 0 {
        g.constant(Tensor::zeros(vec![1, lstm_size]))
    } else {
        top_fwd_states[target_index - 1]
    };
    Ok(g.concat_cols(r, h_implicit))
}
