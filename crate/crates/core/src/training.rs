//! Cross-entropy loss, plain SGD with softmax-layer gradient clipping, and the epoch loop.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport};
use crate::mathcore::{log_sum_exp, Gradients, Real, SeededRng};
use crate::models::{
    init_params, loss_and_gradients, Combine, EncodedInstance, Model, ModelShape, Prediction,
    Variant, EMBEDDING_PARAM,
};

/// Parameters subject to clipping.
pub const SOFTMAX_PARAMS: [&str; 2] = ["softmax.w", "softmax.b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipMode {
    /// Rescale the softmax-layer gradients when their joint L2 norm exceeds the threshold.
    #[default]
    Norm,
    /// Clamp each softmax-layer gradient entry to `[-threshold, threshold]`.
    Value,
    Off,
}

impl FromStr for ClipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "norm" => Ok(ClipMode::Norm),
            "value" => Ok(ClipMode::Value),
            "off" => Ok(ClipMode::Off),
            _ => Err(Error::validation(format!("unknown clip mode {s:?}"))),
        }
    }
}

impl fmt::Display for ClipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClipMode::Norm => "norm",
            ClipMode::Value => "value",
            ClipMode::Off => "off",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Hidden size; `None` means the embedding dimension.
    pub hidden: Option<usize>,
    pub combine: Combine,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub clip_threshold: f64,
    pub clip_mode: ClipMode,
    pub embeddings_trainable: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::TcLstm,
            hidden: None,
            combine: Combine::Concat,
            learning_rate: 0.01,
            epochs: 10,
            seed: 1,
            clip_threshold: 200.0,
            clip_mode: ClipMode::Norm,
            embeddings_trainable: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be at least 1"));
        }
        if !(self.clip_threshold > 0.0) {
            return Err(Error::validation("clip threshold must be positive"));
        }
        if self.hidden == Some(0) {
            return Err(Error::validation("hidden size must be at least 1"));
        }
        Ok(())
    }

    pub fn shape(&self, embedding_dim: usize) -> ModelShape {
        ModelShape::new(self.variant, self.hidden.unwrap_or(embedding_dim), embedding_dim)
            .with_combine(self.combine)
    }
}

/// Fresh model for `config`: parameters from the config seed, the given embeddings.
pub fn build_model<T: Real>(
    config: &TrainConfig,
    vocab: Vocabulary,
    mut embeddings: EmbeddingTable<T>,
) -> Result<Model<T>> {
    config.validate()?;
    let params = init_params(config.shape(embeddings.dim()), config.seed)?;
    embeddings.trainable = config.embeddings_trainable;
    Model::new(params, vocab, embeddings)
}

/// `-log p_gold`, evaluated from the logits as `logsumexp(z) - z_gold`.
pub fn cross_entropy<T: Real>(prediction: &Prediction<T>, gold: usize) -> Result<T> {
    let z = &prediction.logits;
    if gold >= z.rows() {
        return Err(Error::validation(format!(
            "gold class {gold} outside {} classes",
            z.rows()
        )));
    }
    Ok(log_sum_exp(z) - z.data()[gold])
}

/// Clip the softmax-layer gradients in place; returns the norm-clipping factor if one was applied.
pub fn clip_gradients<T: Real>(grads: &mut Gradients<T>, mode: ClipMode, threshold: f64) -> Option<f64> {
    let thr = T::of(threshold);
    match mode {
        ClipMode::Off => None,
        ClipMode::Value => {
            for name in SOFTMAX_PARAMS {
                if let Some(g) = grads.dense.get_mut(name) {
                    for v in g.data_mut() {
                        *v = v.max(-thr).min(thr);
                    }
                }
            }
            None
        }
        ClipMode::Norm => {
            let sq = SOFTMAX_PARAMS
                .iter()
                .filter_map(|n| grads.dense.get(*n))
                .fold(T::zero(), |a, g| a + g.squared_norm());
            let norm = sq.sqrt();
            if norm > thr {
                let k = thr / norm;
                for name in SOFTMAX_PARAMS {
                    if let Some(g) = grads.dense.get_mut(name) {
                        *g = g.scale(k);
                    }
                }
                k.to_f64()
            } else {
                None
            }
        }
    }
}

fn check_keys<T: Real>(model: &Model<T>, grads: &Gradients<T>) -> Result<()> {
    let mut want = model.trainable_names();
    want.sort_unstable();
    let have: Vec<String> = grads.names().into_iter().map(String::from).collect();
    if have != want {
        return Err(Error::Consistency(format!(
            "gradient keys {have:?} do not match trainable parameters {want:?}"
        )));
    }
    for (name, t) in model.params.named_tensors() {
        let g = grads.dense(&name).ok_or_else(|| {
            Error::Consistency(format!("{name} has no dense gradient"))
        })?;
        if g.shape() != t.shape() {
            return Err(Error::Consistency(format!(
                "{name}: gradient {:?} vs parameter {:?}",
                g.shape(),
                t.shape()
            )));
        }
    }
    if model.embeddings.trainable {
        let rows = grads.sparse(EMBEDDING_PARAM).ok_or_else(|| {
            Error::Consistency("embedding gradient must be row-sparse".into())
        })?;
        if rows.shape() != model.embeddings.matrix().shape() {
            return Err(Error::Consistency("embedding gradient shape mismatch".into()));
        }
    }
    Ok(())
}

/// Clip, then `θ ← θ − lr·g` for every trainable parameter.
pub fn sgd_step<T: Real>(model: &mut Model<T>, mut grads: Gradients<T>, config: &TrainConfig) -> Result<()> {
    check_keys(model, &grads)?;
    clip_gradients(&mut grads, config.clip_mode, config.clip_threshold);
    let lr = T::of(config.learning_rate);
    for (name, t) in model.params.named_tensors_mut() {
        t.add_scaled_in_place(&grads.dense[&name], -lr)?;
    }
    if model.embeddings.trainable {
        let table = model.embeddings.matrix_mut();
        for (row, g) in grads.sparse[EMBEDDING_PARAM].iter() {
            for (v, &gv) in table.row_mut(row).iter_mut().zip(g) {
                *v = *v + (-lr) * gv;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub test_macro_f1: Option<f64>,
    /// Wall-clock time of the training pass (not the evaluation).
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

#[derive(Serialize)]
struct DeterministicRecord<'a> {
    epoch: usize,
    train_loss: f64,
    train_accuracy: f64,
    test_accuracy: &'a Option<f64>,
    test_macro_f1: &'a Option<f64>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// One JSON object per epoch. Without timing the output depends only on data, config and seed.
    pub fn to_jsonl(&self, include_timing: bool) -> String {
        let mut out = String::new();
        for r in &self.epochs {
            let line = if include_timing {
                serde_json::to_string(r)
            } else {
                serde_json::to_string(&DeterministicRecord {
                    epoch: r.epoch,
                    train_loss: r.train_loss,
                    train_accuracy: r.train_accuracy,
                    test_accuracy: &r.test_accuracy,
                    test_macro_f1: &r.test_macro_f1,
                })
            };
            out.push_str(&line.expect("record serialises"));
            out.push('\n');
        }
        out
    }

    pub fn mean_seconds_per_epoch(&self) -> f64 {
        if self.epochs.is_empty() {
            return 0.0;
        }
        self.epochs.iter().map(|r| r.seconds).sum::<f64>() / self.epochs.len() as f64
    }
}

/// Predictions for every instance; instances are independent, so this runs in parallel.
pub fn predict_all<T: Real>(model: &Model<T>, set: &[EncodedInstance]) -> Result<Vec<Prediction<T>>> {
    set.par_iter()
        .map(|x| crate::models::forward(model, x))
        .collect()
}

pub fn evaluate_model<T: Real>(model: &Model<T>, set: &[EncodedInstance]) -> Result<EvalReport> {
    let preds: Vec<usize> = predict_all(model, set)?
        .iter()
        .map(|p| p.predicted_class)
        .collect();
    let golds: Vec<usize> = set.iter().map(|x| x.label.class_index()).collect();
    evaluate(&preds, &golds)
}

pub fn train<T: Real>(
    model: Model<T>,
    train_set: &[EncodedInstance],
    test_set: &[EncodedInstance],
    config: &TrainConfig,
) -> Result<(Model<T>, TrainLog)> {
    train_with_progress(model, train_set, test_set, config, |_| {})
}

/// [`train`], calling `on_epoch` after each epoch record is appended.
pub fn train_with_progress<T: Real>(
    mut model: Model<T>,
    train_set: &[EncodedInstance],
    test_set: &[EncodedInstance],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model<T>, TrainLog)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let mut rng = SeededRng::new(config.seed).fork("shuffle");
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let started = Instant::now();
        let mut total = 0.0;
        for &i in &order {
            let (loss, _, grads) = loss_and_gradients(&model, &train_set[i])?;
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    epoch,
                    instance: i,
                    loss,
                });
            }
            total += loss;
            sgd_step(&mut model, grads, config)?;
        }
        let seconds = started.elapsed().as_secs_f64();

        let train_report = evaluate_model(&model, train_set)?;
        let test_report = if test_set.is_empty() {
            None
        } else {
            Some(evaluate_model(&model, test_set)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            train_accuracy: train_report.accuracy,
            test_accuracy: test_report.as_ref().map(|r| r.accuracy),
            test_macro_f1: test_report.as_ref().map(|r| r.macro_f1),
            seconds,
        };
        on_epoch(&record);
        log.epochs.push(record);
    }
    Ok((model, log))
}
