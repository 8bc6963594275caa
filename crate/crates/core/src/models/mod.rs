//! The four classifiers and their parameter sets.
//!
//! * `lstm`: one LSTM over the whole sentence, last hidden state classified.
//! * `td-lstm`: a left LSTM over preceding context + target and a right LSTM
//!   over target + following context run right to left, so both end on the
//!   target; their last hidden states are combined.
//! * `tc-lstm`: `td-lstm` whose every input is `[word vector; target vector]`,
//!   the target vector being the mean of the target word vectors.
//! * `att-td-lstm`: `td-lstm` where each branch is summarised by a soft
//!   attention average of all its hidden states instead of the last one.

mod checkpoint;
mod forward;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_model, save_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{
    attention_weights, forward, forward_att, forward_lstm, forward_tc, forward_td, loss,
    loss_and_gradients, loss_and_gradients_with, Prediction,
};

use crate::cells::{LstmCellParams, LSTM_PARAM_NAMES};
use crate::data::{Instance, Polarity};
use crate::embeddings::{EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use crate::mathcore::{Real, SeededRng, Tensor};

/// Bound of the uniform parameter initialisation.
pub const INIT_BOUND: f64 = 0.003;

/// Gradient/parameter name of the word embedding matrix.
pub const EMBEDDING_PARAM: &str = "embedding";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "lstm")]
    Lstm,
    #[serde(rename = "td-lstm")]
    TdLstm,
    #[serde(rename = "tc-lstm")]
    TcLstm,
    #[serde(rename = "att-td-lstm")]
    AttTdLstm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Lstm,
        Variant::TdLstm,
        Variant::TcLstm,
        Variant::AttTdLstm,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Lstm => "lstm",
            Variant::TdLstm => "td-lstm",
            Variant::TcLstm => "tc-lstm",
            Variant::AttTdLstm => "att-td-lstm",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::validation(format!("unknown variant {s:?}")))
    }
}

/// How the two branch vectors of the target-aware variants are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    #[default]
    Concat,
    Sum,
    Mean,
}

impl Combine {
    pub fn tag(self) -> &'static str {
        match self {
            Combine::Concat => "concat",
            Combine::Sum => "sum",
            Combine::Mean => "mean",
        }
    }
}

impl fmt::Display for Combine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Combine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Combine::Concat),
            "sum" => Ok(Combine::Sum),
            "mean" => Ok(Combine::Mean),
            _ => Err(Error::validation(format!("unknown combine mode {s:?}"))),
        }
    }
}

/// Everything that fixes the tensor shapes of a classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub variant: Variant,
    pub combine: Combine,
    pub hidden: usize,
    pub embedding_dim: usize,
    pub classes: usize,
}

impl ModelShape {
    pub fn new(variant: Variant, hidden: usize, embedding_dim: usize) -> Self {
        ModelShape {
            variant,
            combine: Combine::Concat,
            hidden,
            embedding_dim,
            classes: crate::data::CLASS_COUNT,
        }
    }

    pub fn with_combine(mut self, combine: Combine) -> Self {
        self.combine = combine;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embedding_dim == 0 {
            return Err(Error::validation("hidden and embedding sizes must be at least 1"));
        }
        if self.classes < 2 {
            return Err(Error::validation("need at least 2 classes"));
        }
        Ok(())
    }

    /// Cell input size: the word vector, plus the target vector for `tc-lstm`.
    pub fn input_size(&self) -> usize {
        match self.variant {
            Variant::TcLstm => 2 * self.embedding_dim,
            _ => self.embedding_dim,
        }
    }

    pub fn branch_count(&self) -> usize {
        match self.variant {
            Variant::Lstm => 1,
            _ => 2,
        }
    }

    /// Length of the vector fed to the softmax layer.
    pub fn feature_size(&self) -> usize {
        match (self.variant, self.combine) {
            (Variant::Lstm, _) => self.hidden,
            (_, Combine::Concat) => 2 * self.hidden,
            _ => self.hidden,
        }
    }

    pub fn branch_prefixes(&self) -> &'static [&'static str] {
        match self.variant {
            Variant::Lstm => &["lstm"],
            _ => &["left", "right"],
        }
    }

    pub fn attention_prefixes(&self) -> &'static [&'static str] {
        match self.variant {
            Variant::AttTdLstm => &["att_left", "att_right"],
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxLayerParams<T: Real = f64> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

/// Feedforward position scorer: `score(h) = v · tanh(M·h + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T: Real = f64> {
    pub m: Tensor<T>,
    pub b: Tensor<T>,
    pub v: Tensor<T>,
}

pub const ATTENTION_PARAM_NAMES: [&str; 3] = ["m", "b", "v"];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Real = f64> {
    pub shape: ModelShape,
    pub cells: Vec<LstmCellParams<T>>,
    pub attention: Vec<AttentionParams<T>>,
    pub softmax: SoftmaxLayerParams<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(shape: ModelShape) -> Result<Self> {
        shape.validate()?;
        let (d, k) = (shape.hidden, shape.input_size());
        Ok(ModelParams {
            shape,
            cells: (0..shape.branch_count())
                .map(|_| LstmCellParams::zeros(d, k))
                .collect(),
            attention: shape
                .attention_prefixes()
                .iter()
                .map(|_| AttentionParams {
                    m: Tensor::zeros(d, d),
                    b: Tensor::zeros(d, 1),
                    v: Tensor::zeros(1, d),
                })
                .collect(),
            softmax: SoftmaxLayerParams {
                w: Tensor::zeros(shape.classes, shape.feature_size()),
                b: Tensor::zeros(shape.classes, 1),
            },
        })
    }

    /// Every entry i.i.d. uniform on `[-bound, bound]`, drawn in canonical name order.
    pub fn uniform(shape: ModelShape, bound: f64, rng: &mut SeededRng) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        for (_, t) in p.named_tensors_mut() {
            *t = rng.uniform_tensor(t.rows(), t.cols(), bound);
        }
        Ok(p)
    }

    /// Canonical `(name, tensor)` list: cells, attention scorers, softmax layer.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (prefix, cell) in self.shape.branch_prefixes().iter().zip(&self.cells) {
            for (name, t) in LSTM_PARAM_NAMES.iter().zip(cell.tensors()) {
                out.push((format!("{prefix}.{name}"), t));
            }
        }
        for (prefix, att) in self.shape.attention_prefixes().iter().zip(&self.attention) {
            for (name, t) in ATTENTION_PARAM_NAMES.iter().zip([&att.m, &att.b, &att.v]) {
                out.push((format!("{prefix}.{name}"), t));
            }
        }
        out.push(("softmax.w".into(), &self.softmax.w));
        out.push(("softmax.b".into(), &self.softmax.b));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        let shape = self.shape;
        for (prefix, cell) in shape.branch_prefixes().iter().zip(&mut self.cells) {
            for (name, t) in LSTM_PARAM_NAMES.iter().zip(cell.tensors_mut()) {
                out.push((format!("{prefix}.{name}"), t));
            }
        }
        for (prefix, att) in shape.attention_prefixes().iter().zip(&mut self.attention) {
            for (name, t) in ATTENTION_PARAM_NAMES
                .iter()
                .zip([&mut att.m, &mut att.b, &mut att.v])
            {
                out.push((format!("{prefix}.{name}"), t));
            }
        }
        out.push(("softmax.w".into(), &mut self.softmax.w));
        out.push(("softmax.b".into(), &mut self.softmax.b));
        out
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.named_tensors()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.named_tensors_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Check that every tensor has the shape implied by `self.shape`.
    pub fn validate(&self) -> Result<()> {
        let reference = Self::zeros(self.shape)?;
        let want = reference.named_tensors();
        let have = self.named_tensors();
        if want.len() != have.len() {
            return Err(Error::validation(format!(
                "{} expects {} tensors, found {}",
                self.shape.variant,
                want.len(),
                have.len()
            )));
        }
        for ((name, w), (_, h)) in want.iter().zip(&have) {
            if w.shape() != h.shape() {
                return Err(Error::validation(format!(
                    "{name}: expected shape {:?}, found {:?}",
                    w.shape(),
                    h.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Parameters drawn from U(-0.003, 0.003) with the `init` substream of `seed`.
pub fn init_params<T: Real>(shape: ModelShape, seed: u64) -> Result<ModelParams<T>> {
    let mut rng = SeededRng::new(seed).fork("init");
    ModelParams::uniform(shape, INIT_BOUND, &mut rng)
}

/// Network parameters together with the vocabulary and embedding table they read from.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real = f64> {
    pub params: ModelParams<T>,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable<T>,
}

impl<T: Real> Model<T> {
    pub fn new(
        params: ModelParams<T>,
        vocab: Vocabulary,
        embeddings: EmbeddingTable<T>,
    ) -> Result<Self> {
        params.validate()?;
        if embeddings.rows() != vocab.len() {
            return Err(Error::validation(format!(
                "embedding table has {} rows for a vocabulary of {}",
                embeddings.rows(),
                vocab.len()
            )));
        }
        if embeddings.dim() != params.shape.embedding_dim {
            return Err(Error::validation(format!(
                "embedding dimension {} does not match model input dimension {}",
                embeddings.dim(),
                params.shape.embedding_dim
            )));
        }
        Ok(Model {
            params,
            vocab,
            embeddings,
        })
    }

    pub fn shape(&self) -> ModelShape {
        self.params.shape
    }

    pub fn variant(&self) -> Variant {
        self.params.shape.variant
    }

    /// Names of everything SGD updates, in canonical order.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .params
            .named_tensors()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        if self.embeddings.trainable {
            names.push(EMBEDDING_PARAM.to_string());
        }
        names
    }

    pub fn encode(&self, instance: &Instance) -> EncodedInstance {
        EncodedInstance::encode(instance, &self.vocab)
    }
}

/// An instance with tokens replaced by vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInstance {
    pub tokens: Vec<usize>,
    pub target: Range<usize>,
    pub label: Polarity,
}

impl EncodedInstance {
    pub fn encode(instance: &Instance, vocab: &Vocabulary) -> Self {
        EncodedInstance {
            tokens: instance.tokens.iter().map(|t| vocab.index_of(t)).collect(),
            target: instance.target.clone(),
            label: instance.label,
        }
    }

    pub fn preceding(&self) -> &[usize] {
        &self.tokens[..self.target.start]
    }

    pub fn target_tokens(&self) -> &[usize] {
        &self.tokens[self.target.clone()]
    }

    pub fn following(&self) -> &[usize] {
        &self.tokens[self.target.end..]
    }

    pub(crate) fn check_target(&self) -> Result<()> {
        if self.target.start >= self.target.end || self.target.end > self.tokens.len() {
            return Err(Error::validation(format!(
                "target span {:?} invalid for {} tokens",
                self.target,
                self.tokens.len()
            )));
        }
        Ok(())
    }
}
