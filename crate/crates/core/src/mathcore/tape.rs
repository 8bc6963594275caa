//! Reverse-mode differentiation over a recorded forward pass.
//!
//! Nodes are composite layers (affine + activation, concat, mean, attention
//! pooling, fused softmax cross-entropy) rather than scalar operations, so a
//! sequence step costs a handful of nodes. Parameters are borrowed leaves;
//! embedding rows are sparse leaves whose gradients are kept per row.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use super::tensor::{log_sum_exp, softmax, Activation, Binary, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TableId(usize);

/// Deliberate adjoint corruption, used to prove that gradient checking catches bad backprop.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    SigmoidAdjoint,
}

enum Op<T> {
    Constant,
    Param(usize),
    Row {
        table: TableId,
        row: usize,
    },
    Affine {
        w: NodeId,
        x: NodeId,
        b: Option<NodeId>,
        act: Option<Activation>,
    },
    Activate(NodeId, Activation),
    Binary(NodeId, NodeId, Binary),
    Scale(NodeId, T),
    Concat(Vec<NodeId>),
    Mean(Vec<NodeId>),
    Softmax(NodeId),
    WeightedSum {
        weights: NodeId,
        items: Vec<NodeId>,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        gold: usize,
    },
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
}

/// Records a forward computation so that [`Tape::backward`] can replay it in reverse.
pub struct Tape<'a, T: Real = f64> {
    nodes: Vec<Node<'a, T>>,
    params: Vec<(String, NodeId)>,
    param_index: HashMap<String, NodeId>,
    tables: Vec<(String, usize, usize)>,
    fault: Option<Fault>,
}

impl<'a, T: Real> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            param_index: HashMap::new(),
            tables: Vec::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf. Registering a name twice returns the first node.
    pub fn param(&mut self, name: &str, value: &'a Tensor<T>) -> NodeId {
        if let Some(&id) = self.param_index.get(name) {
            return id;
        }
        let idx = self.params.len();
        let id = self.push(Cow::Borrowed(value), Op::Param(idx));
        self.params.push((name.to_string(), id));
        self.param_index.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Cow::Owned(value), Op::Constant)
    }

    pub fn constant_ref(&mut self, value: &'a Tensor<T>) -> NodeId {
        self.push(Cow::Borrowed(value), Op::Constant)
    }

    /// Declare a trainable row-indexed table (an embedding matrix of `rows × cols`).
    pub fn table(&mut self, name: &str, rows: usize, cols: usize) -> TableId {
        if let Some(i) = self.tables.iter().position(|(n, _, _)| n == name) {
            return TableId(i);
        }
        self.tables.push((name.to_string(), rows, cols));
        TableId(self.tables.len() - 1)
    }

    /// Leaf holding one table row as a `cols × 1` column.
    pub fn row(&mut self, table: TableId, row: usize, value: Tensor<T>) -> Result<NodeId> {
        let (_, rows, cols) = &self.tables[table.0];
        if row >= *rows || value.shape() != (*cols, 1) {
            return Err(Error::Dimension {
                op: "table row",
                left: (*rows, *cols),
                right: value.shape(),
            });
        }
        Ok(self.push(Cow::Owned(value), Op::Row { table, row }))
    }

    /// `act(W·x + b)`, activation optional.
    pub fn affine(
        &mut self,
        w: NodeId,
        x: NodeId,
        b: Option<NodeId>,
        act: Option<Activation>,
    ) -> Result<NodeId> {
        let pre = self
            .value(w)
            .affine(self.value(x), b.map(|b| self.value(b)))?;
        let value = match act {
            Some(a) => pre.activate(a),
            None => pre,
        };
        Ok(self.push(Cow::Owned(value), Op::Affine { w, x, b, act }))
    }

    pub fn activate(&mut self, x: NodeId, act: Activation) -> NodeId {
        let value = self.value(x).activate(act);
        self.push(Cow::Owned(value), Op::Activate(x, act))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Cow::Owned(value), Op::Binary(a, b, Binary::Add)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.push(Cow::Owned(value), Op::Binary(a, b, Binary::Mul)))
    }

    pub fn scale(&mut self, x: NodeId, k: T) -> NodeId {
        let value = self.value(x).scale(k);
        self.push(Cow::Owned(value), Op::Scale(x, k))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::vconcat(&values)?;
        Ok(self.push(Cow::Owned(value), Op::Concat(parts.to_vec())))
    }

    pub fn mean(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::mean_of(&values)?;
        Ok(self.push(Cow::Owned(value), Op::Mean(parts.to_vec())))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let value = softmax(self.value(x))?;
        Ok(self.push(Cow::Owned(value), Op::Softmax(x)))
    }

    /// `Σ_t weights[t] · items[t]`, with `weights` an `n × 1` column.
    pub fn weighted_sum(&mut self, weights: NodeId, items: &[NodeId]) -> Result<NodeId> {
        let w = self.value(weights);
        if w.shape() != (items.len(), 1) || items.is_empty() {
            return Err(Error::Dimension {
                op: "weighted_sum",
                left: w.shape(),
                right: (items.len(), 1),
            });
        }
        let shape = self.value(items[0]).shape();
        let mut acc = Tensor::zeros(shape.0, shape.1);
        for (t, &item) in items.iter().enumerate() {
            acc.add_scaled_in_place(self.value(item), w.data()[t])
                .map_err(|_| Error::Dimension {
                    op: "weighted_sum",
                    left: shape,
                    right: self.value(item).shape(),
                })?;
        }
        Ok(self.push(
            Cow::Owned(acc),
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        ))
    }

    /// `-log softmax(logits)[gold]` as a `1 × 1` node.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, gold: usize) -> Result<NodeId> {
        let z = self.value(logits);
        if z.cols() != 1 || gold >= z.rows() {
            return Err(Error::validation(format!(
                "gold class {gold} out of range for {} logits",
                z.rows()
            )));
        }
        let loss = log_sum_exp(z) - z.data()[gold];
        Ok(self.push(
            Cow::Owned(Tensor::filled(1, 1, loss)),
            Op::SoftmaxCrossEntropy { logits, gold },
        ))
    }

    pub fn backward_scalar(&self, output: NodeId) -> Result<Gradients<T>> {
        self.backward(output, &Tensor::filled(1, 1, T::one()))
    }

    /// Propagate `seed` (∂loss/∂output) back to every registered parameter and table.
    pub fn backward(&self, output: NodeId, seed: &Tensor<T>) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::State(
                "backward called before any forward computation was recorded".into(),
            ));
        }
        if output.0 >= self.nodes.len() {
            return Err(Error::State(format!("node {} was never recorded", output.0)));
        }
        if self.value(output).shape() != seed.shape() {
            return Err(Error::Dimension {
                op: "backward seed",
                left: self.value(output).shape(),
                right: seed.shape(),
            });
        }

        let mut grads = Gradients::default();
        for (name, id) in &self.params {
            let (r, c) = self.value(*id).shape();
            grads.dense.insert(name.clone(), Tensor::zeros(r, c));
        }
        for (name, rows, cols) in &self.tables {
            grads
                .sparse
                .insert(name.clone(), SparseRows::new(*rows, *cols));
        }

        let mut adj: Vec<Option<Tensor<T>>> = Vec::with_capacity(output.0 + 1);
        adj.resize_with(output.0 + 1, || None);
        adj[output.0] = Some(seed.clone());

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(k) => {
                    let name = &self.params[*k].0;
                    grads
                        .dense
                        .get_mut(name)
                        .expect("registered")
                        .add_in_place(&g)?;
                }
                Op::Row { table, row } => {
                    let name = &self.tables[table.0].0;
                    grads
                        .sparse
                        .get_mut(name)
                        .expect("registered")
                        .accumulate(*row, g.data());
                }
                Op::Affine { w, x, b, act } => {
                    let g = match act {
                        Some(a) => self.through_activation(&g, &node.value, *a),
                        None => g,
                    };
                    if let Some(b) = b {
                        accumulate(&mut adj, *b, g.clone())?;
                    }
                    let wv = self.value(*w);
                    let xv = self.value(*x);
                    accumulate(&mut adj, *x, wv.t_matmul(&g)?)?;
                    let slot = &mut adj[w.0];
                    let gw = slot.get_or_insert_with(|| Tensor::zeros(wv.rows(), wv.cols()));
                    gw.add_outer(&g, xv)?;
                }
                Op::Activate(x, a) => {
                    let gx = self.through_activation(&g, &node.value, *a);
                    accumulate(&mut adj, *x, gx)?;
                }
                Op::Binary(a, b, op) => match op {
                    Binary::Add => {
                        accumulate(&mut adj, *a, g.clone())?;
                        accumulate(&mut adj, *b, g)?;
                    }
                    Binary::Mul => {
                        let ga = g.mul(self.value(*b))?;
                        let gb = g.mul(self.value(*a))?;
                        accumulate(&mut adj, *a, ga)?;
                        accumulate(&mut adj, *b, gb)?;
                    }
                },
                Op::Scale(x, k) => {
                    accumulate(&mut adj, *x, g.scale(*k))?;
                }
                Op::Concat(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        accumulate(&mut adj, p, Tensor::from_vec(rows, cols, slice)?)?;
                        offset += rows;
                    }
                }
                Op::Mean(parts) => {
                    let n = T::from_usize(parts.len()).expect("count fits");
                    let share = g.map(|v| v / n);
                    for &p in parts {
                        accumulate(&mut adj, p, share.clone())?;
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let dot = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                    let gx = g.zip_with(y, "softmax backward", |gi, yi| yi * (gi - dot))?;
                    accumulate(&mut adj, *x, gx)?;
                }
                Op::WeightedSum { weights, items } => {
                    let w = self.value(*weights);
                    let mut gw = Tensor::zeros(items.len(), 1);
                    for (t, &item) in items.iter().enumerate() {
                        let h = self.value(item);
                        let dot = g
                            .data()
                            .iter()
                            .zip(h.data())
                            .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                        gw.data_mut()[t] = dot;
                        accumulate(&mut adj, item, g.scale(w.data()[t]))?;
                    }
                    accumulate(&mut adj, *weights, gw)?;
                }
                Op::SoftmaxCrossEntropy { logits, gold } => {
                    let upstream = g.data()[0];
                    let mut p = softmax(self.value(*logits))?;
                    p.data_mut()[*gold] = p.data()[*gold] - T::one();
                    accumulate(&mut adj, *logits, p.scale(upstream))?;
                }
            }
        }
        Ok(grads)
    }

    fn through_activation(&self, g: &Tensor<T>, y: &Tensor<T>, act: Activation) -> Tensor<T> {
        let corrupt = act == Activation::Sigmoid && self.fault == Some(Fault::SigmoidAdjoint);
        let mut out = g.clone();
        for (o, &yi) in out.data_mut().iter_mut().zip(y.data()) {
            let mut d = act.derivative_from_output(yi);
            if corrupt {
                d = d * T::of(1.1);
            }
            *o = *o * d;
        }
        out
    }
}

fn accumulate<T: Real>(adj: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) -> Result<()> {
    match &mut adj[id.0] {
        Some(acc) => acc.add_in_place(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Row-sparse gradient of a `rows × cols` table; absent rows are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows<T: Real = f64> {
    rows: usize,
    cols: usize,
    entries: BTreeMap<usize, Vec<T>>,
}

impl<T: Real> SparseRows<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        SparseRows {
            rows,
            cols,
            entries: BTreeMap::new(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn accumulate(&mut self, row: usize, values: &[T]) {
        let entry = self
            .entries
            .entry(row)
            .or_insert_with(|| vec![T::zero(); values.len()]);
        for (a, &b) in entry.iter_mut().zip(values) {
            *a = *a + b;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[T])> {
        self.entries.iter().map(|(&r, v)| (r, v.as_slice()))
    }

    pub fn row(&self, row: usize) -> Option<&[T]> {
        self.entries.get(&row).map(|v| v.as_slice())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (usize, &mut Vec<T>)> {
        self.entries.iter_mut().map(|(&r, v)| (r, v))
    }

    pub fn to_dense(&self) -> Tensor<T> {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for (&r, v) in &self.entries {
            t.row_mut(r).copy_from_slice(v);
        }
        t
    }

    pub fn squared_norm(&self) -> T {
        self.entries
            .values()
            .flatten()
            .fold(T::zero(), |a, &v| a + v * v)
    }
}

/// `∂loss/∂θ` for every trainable parameter, keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Real = f64> {
    pub dense: BTreeMap<String, Tensor<T>>,
    pub sparse: BTreeMap<String, SparseRows<T>>,
}

impl<T: Real> Default for Gradients<T> {
    fn default() -> Self {
        Gradients {
            dense: BTreeMap::new(),
            sparse: BTreeMap::new(),
        }
    }
}

impl<T: Real> Gradients<T> {
    pub fn names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self
            .dense
            .keys()
            .chain(self.sparse.keys())
            .map(String::as_str)
            .collect();
        names.sort_unstable();
        names
    }

    pub fn dense(&self, name: &str) -> Option<&Tensor<T>> {
        self.dense.get(name)
    }

    pub fn sparse(&self, name: &str) -> Option<&SparseRows<T>> {
        self.sparse.get(name)
    }

    /// Dense view of any gradient, sparse tables included.
    pub fn to_dense(&self, name: &str) -> Option<Tensor<T>> {
        self.dense
            .get(name)
            .cloned()
            .or_else(|| self.sparse.get(name).map(SparseRows::to_dense))
    }

    pub fn all_finite(&self) -> bool {
        self.dense.values().all(Tensor::is_finite)
            && self
                .sparse
                .values()
                .all(|s| s.iter().all(|(_, v)| v.iter().all(|x| x.is_finite())))
    }
}
