//! Graph builders for the individual layers. Each builder appends ops to a
//! caller-owned `Graph` and returns the node ids; models compose them.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Graph, ValueId};
use crate::tensor::Tensor;

/// Train mode carries the run RNG for noise and dropout; eval is pure.
pub enum Phase<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

impl Phase<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Phase::Train(_))
    }
}

/// Embedding lookup: `ids` index rows of the `[V,W]` embedding node.
/// In train mode applies additive Gaussian noise (std `noise`) followed by
/// inverted dropout with rate `dropout`.
pub fn embed_rows(
    g: &mut Graph,
    embedding: ValueId,
    ids: &[usize],
    vocab_size: usize,
    noise: f64,
    dropout: f64,
    phase: &mut Phase<'_>,
) -> Result<ValueId> {
    if let Some(&bad) = ids.iter().find(|&&id| id >= vocab_size) {
        return Err(Error::shape(format!(
            "token id {bad} out of range for vocabulary of {vocab_size}"
        )));
    }
    if ids.is_empty() {
        return Err(Error::contract("cannot embed an empty sequence".to_string()));
    }
    let mut out = g.gather_rows(embedding, ids.to_vec());
    if let Phase::Train(rng) = phase {
        let n = ids.len();
        let w = {
            // noise/dropout are elementwise over the [n, W] lookup
            let dim = g
                .value(embedding)
                .map(|t| t.shape()[1])
                .expect("embedding bound at build time");
            dim
        };
        if noise > 0.0 {
            let normal = Normal::new(0.0, noise).expect("valid std");
            let values: Vec<f64> = (0..n * w).map(|_| normal.sample(rng)).collect();
            let noise_node = g.constant(Tensor::matrix(n, w, values)?);
            out = g.add(out, noise_node);
        }
        if dropout > 0.0 {
            out = dropout_elements(g, out, n, w, dropout, rng);
        }
    }
    Ok(out)
}

fn dropout_elements(
    g: &mut Graph,
    node: ValueId,
    rows: usize,
    cols: usize,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> ValueId {
    let mask: Vec<f64> = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 })
        .collect();
    let mask_node = g.constant(Tensor::matrix(rows, cols, mask).expect("positive dims"));
    let kept = g.mul(node, mask_node);
    g.scale(kept, 1.0 / (1.0 - rate))
}

/// Inverted dropout over a `[1,n]` row node.
pub fn dropout_rows(
    g: &mut Graph,
    row: ValueId,
    width: usize,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> ValueId {
    dropout_elements(g, row, 1, width, rate, rng)
}

/// Node ids for one direction's weights.
#[derive(Clone, Copy)]
pub struct LstmWeights {
    pub w_x: ValueId,
    pub w_h: ValueId,
    pub b: ValueId,
}

/// Per-step annotations plus the final `(h, c)` state of one LSTM pass.
pub struct Annotations {
    pub states: Vec<ValueId>,
    pub h_last: ValueId,
    pub c_last: ValueId,
}

/// Runs an LSTM over `inputs` (each `[1,in]`). `valid[t] == false` carries
/// `(h, c)` through unchanged, so trailing padding cannot disturb the
/// state; with the backward direction this is what makes padded and
/// unpadded sequences equivalent.
///
/// An empty input yields no annotations and returns the initial state.
pub fn lstm_chain(
    g: &mut Graph,
    inputs: &[ValueId],
    valid: &[bool],
    weights: LstmWeights,
    lstm_size: usize,
) -> Result<Annotations> {
    if inputs.len() != valid.len() {
        return Err(Error::shape(format!(
            "{} inputs but {} validity flags",
            inputs.len(),
            valid.len()
        )));
    }
    let l = lstm_size;
    let mut h = g.constant(Tensor::zeros(vec![1, l]));
    let mut c = g.constant(Tensor::zeros(vec![1, l]));
    let mut states = Vec::with_capacity(inputs.len());
    for (&x, &ok) in inputs.iter().zip(valid) {
        if ok {
            let zx = g.matmul(x, weights.w_x);
            let zh = g.matmul(h, weights.w_h);
            let zs = g.add(zx, zh);
            let z = g.add(zs, weights.b);
            let i_gate = {
                let s = g.slice_cols(z, 0, l);
                g.sigmoid(s)
            };
            let f_gate = {
                let s = g.slice_cols(z, l, l);
                g.sigmoid(s)
            };
            let g_cand = {
                let s = g.slice_cols(z, 2 * l, l);
                g.tanh(s)
            };
            let o_gate = {
                let s = g.slice_cols(z, 3 * l, l);
                g.sigmoid(s)
            };
            let keep = g.mul(f_gate, c);
            let write = g.mul(i_gate, g_cand);
            c = g.add(keep, write);
            let c_act = g.tanh(c);
            h = g.mul(o_gate, c_act);
        }
        states.push(h);
    }
    Ok(Annotations {
        states,
        h_last: h,
        c_last: c,
    })
}

/// Bidirectional pass: per-step concatenation of the forward state at `t`
/// and the backward state at `t`.
pub fn bilstm_chain(
    g: &mut Graph,
    inputs: &[ValueId],
    valid: &[bool],
    fwd: LstmWeights,
    bwd: LstmWeights,
    lstm_size: usize,
) -> Result<Vec<ValueId>> {
    let forward = lstm_chain(g, inputs, valid, fwd, lstm_size)?;
    let rev_inputs: Vec<ValueId> = inputs.iter().rev().copied().collect();
    let rev_valid: Vec<bool> = valid.iter().rev().copied().collect();
    let backward = lstm_chain(g, &rev_inputs, &rev_valid, bwd, lstm_size)?;
    Ok(forward
        .states
        .iter()
        .zip(backward.states.iter().rev())
        .map(|(&f, &b)| g.concat_cols(f, b))
        .collect())
}

/// Self-attention pooling over per-step annotations.
///
/// Returns `(r, weights, scores)`: the pooled representation `[1,d]`, the
/// attention weights `[1,N]` (exactly 0 at masked steps), and the raw
/// `tanh` scores.
pub fn attention(
    g: &mut Graph,
    annotations: &[ValueId],
    valid: &[bool],
    w: ValueId,
    b: ValueId,
) -> Result<(ValueId, ValueId, ValueId)> {
    if annotations.is_empty() {
        return Err(Error::contract(
            "attention requires at least one annotation".to_string(),
        ));
    }
    if !valid.iter().any(|&v| v) {
        return Err(Error::contract(
            "attention requires at least one unmasked position".to_string(),
        ));
    }
    let h = g.stack_rows(annotations.to_vec());
    let raw = g.matmul(h, w);
    let biased = g.add_row(raw, b);
    let scores = g.tanh(biased); // e_i in [-1, 1]
    let scores_row = g.transpose(scores);
    let weights = g.row_softmax_masked(scores_row, valid.to_vec());
    let r = g.matmul(weights, h);
    Ok((r, weights, scores))
}

/// Softmax output head: `p = softmax(W r + b)` with `W` stored as `[C,d]`.
pub fn output_head(g: &mut Graph, r: ValueId, w: ValueId, b: ValueId) -> (ValueId, ValueId) {
    let wt = g.transpose(w);
    let scores = g.matmul(r, wt);
    let logits = g.add(scores, b);
    let p = g.row_softmax(logits);
    (p, logits)
}

/// Cross-entropy of a `[1,C]` logit row against a gold class, via the
/// fused log-softmax (finite for any finite logits).
pub fn cross_entropy(g: &mut Graph, logits: ValueId, gold: usize, num_classes: usize) -> ValueId {
    let mut onehot = vec![0.0; num_classes];
    onehot[gold] = 1.0;
    let indicator = g.constant(Tensor::row(onehot));
    let log_p = g.row_log_softmax(logits);
    let picked = g.mul(log_p, indicator);
    let total = g.sum(picked);
    g.scale(total, -1.0)
}
