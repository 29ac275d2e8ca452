//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A `Graph` is a tape of operations built in topological order. Leaves are
//! either trainable parameters (bound at creation), constants, or named
//! input placeholders bound later. `forward` evaluates the ancestors of a
//! root node; `backward` propagates gradients from a scalar root back to
//! every trainable leaf.
//!
//! The op set is deliberately small: every model in this crate is a
//! composition of these primitives, so one gradient-checked mechanism
//! covers all of them.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Clone, Debug)]
enum LeafKind {
    /// Trainable parameter; receives a gradient on backward.
    Param,
    /// Named placeholder bound via `bind` before forward.
    Input,
    /// Non-trainable constant.
    Const,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf(LeafKind),
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul(ValueId, ValueId),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    /// Elementwise product of same-shape operands.
    Mul(ValueId, ValueId),
    /// `[m,n] + [1,n]`, the row broadcast used for biases.
    AddRow(ValueId, ValueId),
    Scale(ValueId, f64),
    Tanh(ValueId),
    Sigmoid(ValueId),
    Log(ValueId),
    /// Horizontal concatenation `[m,p] ++ [m,q] -> [m,p+q]`.
    ConcatCols(ValueId, ValueId),
    /// Stacks `[1,n]` rows into `[k,n]`.
    StackRows(Vec<ValueId>),
    /// Columns `[start, start+len)` of a 2-D tensor.
    SliceCols(ValueId, usize, usize),
    /// Row lookup by index; duplicates allowed (gradient scatter-adds).
    GatherRows(ValueId, Vec<usize>),
    Transpose(ValueId),
    /// Softmax over each row. Masked-out entries (mask=false) get weight
    /// exactly 0 and receive no gradient.
    RowSoftmax(ValueId, Option<Vec<bool>>),
    /// Log-softmax over each row; the numerically safe path for losses.
    RowLogSoftmax(ValueId, Option<Vec<bool>>),
    Sum(ValueId),
    Mean(ValueId),
}

impl Op {
    fn operands(&self) -> Vec<ValueId> {
        match self {
            Op::Leaf(_) => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::SliceCols(a, _, _)
            | Op::GatherRows(a, _)
            | Op::Transpose(a)
            | Op::RowSoftmax(a, _)
            | Op::RowLogSoftmax(a, _)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::StackRows(items) => items.clone(),
        }
    }
}

struct Node {
    op: Op,
    name: Option<String>,
    value: Option<Tensor>,
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: BTreeMap<String, ValueId>,
    params: Vec<(String, ValueId)>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, op: Op, name: Option<String>, value: Option<Tensor>) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node {
            op,
            name,
            value,
            grad: None,
        });
        id
    }

    /// Trainable leaf. The tensor is bound immediately.
    pub fn param(&mut self, name: impl Into<String>, t: Tensor) -> ValueId {
        let name = name.into();
        let id = self.push(Op::Leaf(LeafKind::Param), Some(name.clone()), Some(t));
        self.params.push((name, id));
        id
    }

    /// Non-trainable leaf bound immediately.
    pub fn constant(&mut self, t: Tensor) -> ValueId {
        self.push(Op::Leaf(LeafKind::Const), None, Some(t))
    }

    /// Named placeholder; must be bound via [`bind`](Self::bind) before any
    /// forward pass that reaches it.
    pub fn input(&mut self, name: impl Into<String>) -> ValueId {
        let name = name.into();
        let id = self.push(Op::Leaf(LeafKind::Input), Some(name.clone()), None);
        self.inputs.insert(name, id);
        id
    }

    pub fn bind(&mut self, name: &str, t: Tensor) -> Result<()> {
        let id = *self
            .inputs
            .get(name)
            .ok_or_else(|| Error::config(format!("no input named `{name}` in graph")))?;
        self.nodes[id.0].value = Some(t);
        Ok(())
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.push(Op::MatMul(a, b), None, None)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.push(Op::Add(a, b), None, None)
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.push(Op::Sub(a, b), None, None)
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.push(Op::Mul(a, b), None, None)
    }

    /// Adds a `[1,n]` row vector to every row of a `[m,n]` tensor.
    pub fn add_row(&mut self, a: ValueId, row: ValueId) -> ValueId {
        self.push(Op::AddRow(a, row), None, None)
    }

    pub fn scale(&mut self, a: ValueId, c: f64) -> ValueId {
        self.push(Op::Scale(a, c), None, None)
    }

    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        self.push(Op::Tanh(a), None, None)
    }

    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        self.push(Op::Sigmoid(a), None, None)
    }

    /// Natural log; errors on non-positive entries so finite inputs can
    /// never produce non-finite outputs.
    pub fn log(&mut self, a: ValueId) -> ValueId {
        self.push(Op::Log(a), None, None)
    }

    pub fn concat_cols(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.push(Op::ConcatCols(a, b), None, None)
    }

    pub fn stack_rows(&mut self, rows: Vec<ValueId>) -> ValueId {
        self.push(Op::StackRows(rows), None, None)
    }

    pub fn slice_cols(&mut self, a: ValueId, start: usize, len: usize) -> ValueId {
        self.push(Op::SliceCols(a, start, len), None, None)
    }

    pub fn gather_rows(&mut self, a: ValueId, rows: Vec<usize>) -> ValueId {
        self.push(Op::GatherRows(a, rows), None, None)
    }

    pub fn transpose(&mut self, a: ValueId) -> ValueId {
        self.push(Op::Transpose(a), None, None)
    }

    pub fn row_softmax(&mut self, a: ValueId) -> ValueId {
        self.push(Op::RowSoftmax(a, None), None, None)
    }

    /// `mask[i*n+j] == false` excludes entry `(i,j)` from its row's softmax;
    /// the output there is exactly 0.
    pub fn row_softmax_masked(&mut self, a: ValueId, mask: Vec<bool>) -> ValueId {
        self.push(Op::RowSoftmax(a, Some(mask)), None, None)
    }

    pub fn row_log_softmax(&mut self, a: ValueId) -> ValueId {
        self.push(Op::RowLogSoftmax(a, None), None, None)
    }

    pub fn sum(&mut self, a: ValueId) -> ValueId {
        self.push(Op::Sum(a), None, None)
    }

    pub fn mean(&mut self, a: ValueId) -> ValueId {
        self.push(Op::Mean(a), None, None)
    }

    pub fn value(&self, id: ValueId) -> Option<&Tensor> {
        self.nodes[id.0].value.as_ref()
    }

    /// Gradient of the last backward root with respect to this node.
    /// `None` for nodes that were not reached or are non-trainable leaves.
    pub fn grad(&self, id: ValueId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Gradients of every trainable parameter leaf reached by the last
    /// backward pass, keyed by parameter name.
    pub fn param_grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.params
            .iter()
            .filter_map(|(name, id)| {
                self.nodes[id.0]
                    .grad
                    .as_ref()
                    .map(|g| (name.clone(), g.clone()))
            })
            .collect()
    }

    /// Node ids of `root` and all of its ancestors, in topological order.
    fn reachable(&self, root: ValueId) -> Vec<usize> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![root.0];
        while let Some(idx) = stack.pop() {
            if seen[idx] {
                continue;
            }
            seen[idx] = true;
            for op in self.nodes[idx].op.operands() {
                stack.push(op.0);
            }
        }
        (0..=root.0).filter(|&i| seen[i]).collect()
    }

    /// Evaluates every ancestor of `root` and returns the root value.
    /// Intermediate values are retained for [`backward`](Self::backward).
    pub fn forward(&mut self, root: ValueId) -> Result<&Tensor> {
        let order = self.reachable(root);
        for idx in order {
            let value = self.eval(idx)?;
            if let Some(v) = value {
                self.nodes[idx].value = Some(v);
            }
        }
        Ok(self.nodes[root.0].value.as_ref().expect("root evaluated"))
    }

    /// Computes the value for node `idx`; `None` means the node is a bound
    /// leaf whose value is already in place.
    fn eval(&self, idx: usize) -> Result<Option<Tensor>> {
        let node = &self.nodes[idx];
        let get = |id: ValueId| -> &Tensor {
            self.nodes[id.0]
                .value
                .as_ref()
                .expect("operand evaluated before use")
        };
        let out = match &node.op {
            Op::Leaf(kind) => {
                if node.value.is_none() {
                    let name = node.name.clone().unwrap_or_default();
                    return match kind {
                        LeafKind::Input => Err(Error::MissingInput(name)),
                        _ => Err(Error::contract(format!("leaf `{name}` has no value"))),
                    };
                }
                return Ok(None);
            }
            Op::MatMul(a, b) => matmul(get(*a), get(*b))?,
            Op::Add(a, b) => zip_same_shape(get(*a), get(*b), "add", |x, y| x + y)?,
            Op::Sub(a, b) => zip_same_shape(get(*a), get(*b), "sub", |x, y| x - y)?,
            Op::Mul(a, b) => zip_same_shape(get(*a), get(*b), "mul", |x, y| x * y)?,
            Op::AddRow(a, b) => add_row(get(*a), get(*b))?,
            Op::Scale(a, c) => map(get(*a), |x| x * c),
            Op::Tanh(a) => map(get(*a), f64::tanh),
            Op::Sigmoid(a) => map(get(*a), sigmoid),
            Op::Log(a) => {
                let t = get(*a);
                if t.values().iter().any(|&v| v <= 0.0) {
                    return Err(Error::contract(
                        "log of a non-positive value".to_string(),
                    ));
                }
                map(t, f64::ln)
            }
            Op::ConcatCols(a, b) => concat_cols(get(*a), get(*b))?,
            Op::StackRows(items) => {
                stack_rows(&items.iter().map(|id| get(*id)).collect::<Vec<_>>())?
            }
            Op::SliceCols(a, start, len) => slice_cols(get(*a), *start, *len)?,
            Op::GatherRows(a, rows) => gather_rows(get(*a), rows)?,
            Op::Transpose(a) => transpose(get(*a))?,
            Op::RowSoftmax(a, mask) => row_softmax(get(*a), mask.as_deref(), false)?,
            Op::RowLogSoftmax(a, mask) => row_softmax(get(*a), mask.as_deref(), true)?,
            Op::Sum(a) => Tensor::scalar(get(*a).values().iter().sum()),
            Op::Mean(a) => {
                let t = get(*a);
                Tensor::scalar(t.values().iter().sum::<f64>() / t.numel() as f64)
            }
        };
        Ok(Some(out))
    }

    /// Back-propagates from a scalar root. Every trainable leaf that
    /// contributed to the root receives `d root / d leaf` in its grad slot;
    /// non-trainable leaves hold no gradient afterwards.
    pub fn backward(&mut self, root: ValueId) -> Result<()> {
        let order = self.reachable(root);
        {
            let root_val = self.nodes[root.0].value.as_ref().ok_or_else(|| {
                Error::contract("backward called before forward".to_string())
            })?;
            if root_val.numel() != 1 {
                return Err(Error::contract(format!(
                    "backward root must be scalar, got shape {:?}",
                    root_val.shape()
                )));
            }
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[root.0].grad = Some(vec![1.0]);

        for &idx in order.iter().rev() {
            let go = match self.nodes[idx].grad.clone() {
                Some(g) => g,
                None => continue, // not on any path that received gradient
            };
            let op = self.nodes[idx].op.clone();
            self.propagate(idx, &op, &go)?;
        }

        // Non-trainable leaves hold no gradient by contract.
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf(LeafKind::Input) | Op::Leaf(LeafKind::Const)) {
                node.grad = None;
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: ValueId, delta: Vec<f64>) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(&delta) {
                    *gi += di;
                }
            }
            None => node.grad = Some(delta),
        }
    }

    fn propagate(&mut self, idx: usize, op: &Op, go: &[f64]) -> Result<()> {
        let val = |id: ValueId| -> &Tensor { self.nodes[id.0].value.as_ref().unwrap() };
        let out_val = || -> &Tensor { self.nodes[idx].value.as_ref().unwrap() };
        match op {
            Op::Leaf(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2()?;
                let (_, n) = val(*b).dims2()?;
                let av = val(*a).values();
                let bv = val(*b).values();
                // ga = go . b^T
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let g = go[i * n + j];
                        if g == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            ga[i * k + p] += g * bv[p * n + j];
                        }
                    }
                }
                // gb = a^T . go
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let a_ip = av[i * k + p];
                        if a_ip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[p * n + j] += a_ip * go[i * n + j];
                        }
                    }
                }
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::Add(a, b) => {
                self.accumulate(*a, go.to_vec());
                self.accumulate(*b, go.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, go.to_vec());
                self.accumulate(*b, go.iter().map(|g| -g).collect());
            }
            Op::Mul(a, b) => {
                let ga: Vec<f64> = go.iter().zip(val(*b).values()).map(|(g, y)| g * y).collect();
                let gb: Vec<f64> = go.iter().zip(val(*a).values()).map(|(g, x)| g * x).collect();
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::AddRow(a, b) => {
                let (m, n) = val(*a).dims2()?;
                let mut gb = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        gb[j] += go[i * n + j];
                    }
                }
                self.accumulate(*a, go.to_vec());
                self.accumulate(*b, gb);
            }
            Op::Scale(a, c) => {
                self.accumulate(*a, go.iter().map(|g| g * c).collect());
            }
            Op::Tanh(a) => {
                let ga: Vec<f64> = go
                    .iter()
                    .zip(out_val().values())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                self.accumulate(*a, ga);
            }
            Op::Sigmoid(a) => {
                let ga: Vec<f64> = go
                    .iter()
                    .zip(out_val().values())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                self.accumulate(*a, ga);
            }
            Op::Log(a) => {
                let ga: Vec<f64> = go
                    .iter()
                    .zip(val(*a).values())
                    .map(|(g, x)| g / x)
                    .collect();
                self.accumulate(*a, ga);
            }
            Op::ConcatCols(a, b) => {
                let (m, p) = val(*a).dims2()?;
                let (_, q) = val(*b).dims2()?;
                let n = p + q;
                let mut ga = vec![0.0; m * p];
                let mut gb = vec![0.0; m * q];
                for i in 0..m {
                    ga[i * p..(i + 1) * p].copy_from_slice(&go[i * n..i * n + p]);
                    gb[i * q..(i + 1) * q].copy_from_slice(&go[i * n + p..(i + 1) * n]);
                }
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::StackRows(items) => {
                let n = out_val().dims2()?.1;
                for (i, id) in items.clone().into_iter().enumerate() {
                    self.accumulate(id, go[i * n..(i + 1) * n].to_vec());
                }
            }
            Op::SliceCols(a, start, len) => {
                let (m, n) = val(*a).dims2()?;
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    ga[i * n + start..i * n + start + len]
                        .copy_from_slice(&go[i * len..(i + 1) * len]);
                }
                self.accumulate(*a, ga);
            }
            Op::GatherRows(a, rows) => {
                let (_, n) = val(*a).dims2()?;
                let mut ga = vec![0.0; val(*a).numel()];
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..n {
                        ga[r * n + j] += go[i * n + j];
                    }
                }
                self.accumulate(*a, ga);
            }
            Op::Transpose(a) => {
                let (m, n) = val(*a).dims2()?;
                // go has shape [n, m]
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] = go[j * m + i];
                    }
                }
                self.accumulate(*a, ga);
            }
            Op::RowSoftmax(a, mask) => {
                let y = out_val().values().to_vec();
                let (m, n) = out_val().dims2()?;
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    let row = &y[i * n..(i + 1) * n];
                    let gr = &go[i * n..(i + 1) * n];
                    let dot: f64 = row.iter().zip(gr).map(|(yj, gj)| yj * gj).sum();
                    for j in 0..n {
                        let valid = mask.as_ref().map_or(true, |mk| mk[i * n + j]);
                        if valid {
                            ga[i * n + j] = row[j] * (gr[j] - dot);
                        }
                    }
                }
                self.accumulate(*a, ga);
            }
            Op::RowLogSoftmax(a, mask) => {
                let y = out_val().values().to_vec();
                let (m, n) = out_val().dims2()?;
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    let mut gsum = 0.0;
                    for j in 0..n {
                        let valid = mask.as_ref().map_or(true, |mk| mk[i * n + j]);
                        if valid {
                            gsum += go[i * n + j];
                        }
                    }
                    for j in 0..n {
                        let valid = mask.as_ref().map_or(true, |mk| mk[i * n + j]);
                        if valid {
                            let p = y[i * n + j].exp();
                            ga[i * n + j] = go[i * n + j] - p * gsum;
                        }
                    }
                }
                self.accumulate(*a, ga);
            }
            Op::Sum(a) => {
                let g = go[0];
                self.accumulate(*a, vec![g; val(*a).numel()]);
            }
            Op::Mean(a) => {
                let numel = val(*a).numel();
                let g = go[0] / numel as f64;
                self.accumulate(*a, vec![g; numel]);
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.values().iter().map(|&v| f(v)).collect())
        .expect("shape preserved")
}

fn zip_same_shape(
    a: &Tensor,
    b: &Tensor,
    op: &str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op} operands differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Tensor::new(
        a.shape().to_vec(),
        a.values()
            .iter()
            .zip(b.values())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner dimensions differ: [{m},{k}] x [{k2},{n}]"
        )));
    }
    let av = a.values();
    let bv = b.values();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let a_ip = av[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let brow = &bv[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += a_ip * brow[j];
            }
        }
    }
    Tensor::matrix(m, n, out)
}

fn add_row(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2()?;
    let (rb, nb) = b.dims2()?;
    if rb != 1 || nb != n {
        return Err(Error::shape(format!(
            "add_row expects [1,{n}] row for [{m},{n}] tensor, got {:?}",
            b.shape()
        )));
    }
    let mut out = a.values().to_vec();
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] += b.values()[j];
        }
    }
    Tensor::matrix(m, n, out)
}

fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, p) = a.dims2()?;
    let (mb, q) = b.dims2()?;
    if m != mb {
        return Err(Error::shape(format!(
            "concat_cols row counts differ: {m} vs {mb}"
        )));
    }
    let mut out = Vec::with_capacity(m * (p + q));
    for i in 0..m {
        out.extend_from_slice(&a.values()[i * p..(i + 1) * p]);
        out.extend_from_slice(&b.values()[i * q..(i + 1) * q]);
    }
    Tensor::matrix(m, p + q, out)
}

fn stack_rows(rows: &[&Tensor]) -> Result<Tensor> {
    if rows.is_empty() {
        return Err(Error::contract("stack_rows of zero rows".to_string()));
    }
    let (r0, n) = rows[0].dims2()?;
    if r0 != 1 {
        return Err(Error::shape(format!(
            "stack_rows expects [1,n] items, got {:?}",
            rows[0].shape()
        )));
    }
    let mut out = Vec::with_capacity(rows.len() * n);
    for t in rows {
        let (r, c) = t.dims2()?;
        if r != 1 || c != n {
            return Err(Error::shape(format!(
                "stack_rows item shape {:?} does not match [1,{n}]",
                t.shape()
            )));
        }
        out.extend_from_slice(t.values());
    }
    Tensor::matrix(rows.len(), n, out)
}

fn slice_cols(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (m, n) = a.dims2()?;
    if start + len > n {
        return Err(Error::shape(format!(
            "slice_cols [{start}..{}) out of range for {n} columns",
            start + len
        )));
    }
    let mut out = Vec::with_capacity(m * len);
    for i in 0..m {
        out.extend_from_slice(&a.values()[i * n + start..i * n + start + len]);
    }
    Tensor::matrix(m, len, out)
}

fn gather_rows(a: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let (m, n) = a.dims2()?;
    if rows.is_empty() {
        return Err(Error::contract("gather_rows with empty index list".to_string()));
    }
    let mut out = Vec::with_capacity(rows.len() * n);
    for &r in rows {
        if r >= m {
            return Err(Error::shape(format!(
                "row index {r} out of range for {m} rows"
            )));
        }
        out.extend_from_slice(&a.values()[r * n..(r + 1) * n]);
    }
    Tensor::matrix(rows.len(), n, out)
}

fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2()?;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.values()[i * n + j];
        }
    }
    Tensor::matrix(n, m, out)
}

fn row_softmax(a: &Tensor, mask: Option<&[bool]>, log: bool) -> Result<Tensor> {
    let (m, n) = a.dims2()?;
    if let Some(mk) = mask {
        if mk.len() != m * n {
            return Err(Error::shape(format!(
                "softmax mask has {} entries for a [{m},{n}] tensor",
                mk.len()
            )));
        }
    }
    let av = a.values();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let valid = |j: usize| mask.map_or(true, |mk| mk[i * n + j]);
        let mut mx = f64::NEG_INFINITY;
        for j in 0..n {
            if valid(j) && av[i * n + j] > mx {
                mx = av[i * n + j];
            }
        }
        if mx == f64::NEG_INFINITY {
            return Err(Error::contract(format!("softmax row {i} is fully masked")));
        }
        let mut denom = 0.0;
        for j in 0..n {
            if valid(j) {
                denom += (av[i * n + j] - mx).exp();
            }
        }
        for j in 0..n {
            out[i * n + j] = if !valid(j) {
                0.0 // masked entries are excluded from downstream reductions
            } else if log {
                av[i * n + j] - mx - denom.ln()
            } else {
                (av[i * n + j] - mx).exp() / denom
            };
        }
    }
    Tensor::matrix(m, n, out)
}
