use crate::cells::{
    run_sequence_on_tape, zero_state_on_tape, CellNodes, Direction, StateNodes,
};
use crate::error::{Error, Result};
use crate::mathcore::{softmax, Activation, Gradients, NodeId, Real, Tape, Tensor};

use super::{Combine, EncodedInstance, Model, Variant, EMBEDDING_PARAM};

/// Class probabilities for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T: Real = f64> {
    pub logits: Tensor<T>,
    pub probabilities: Tensor<T>,
    /// Argmax of `probabilities`, lowest index on ties.
    pub predicted_class: usize,
}

impl<T: Real> Prediction<T> {
    pub fn from_logits(logits: Tensor<T>) -> Result<Self> {
        let probabilities = softmax(&logits)?;
        let predicted_class = probabilities.argmax();
        Ok(Prediction {
            logits,
            probabilities,
            predicted_class,
        })
    }
}

struct AttentionNodes {
    m: NodeId,
    b: NodeId,
    v: NodeId,
}

struct Built {
    logits: NodeId,
    attention: Vec<NodeId>,
}

/// Record the forward computation of `model` on `x`; returns the logits node.
fn build<'a, T: Real>(tape: &mut Tape<'a, T>, model: &'a Model<T>, x: &EncodedInstance) -> Result<Built> {
    let shape = model.params.shape;
    if x.tokens.is_empty() {
        return Err(Error::validation("instance has no tokens"));
    }
    if let Some(&bad) = x.tokens.iter().find(|&&t| t >= model.embeddings.rows()) {
        return Err(Error::validation(format!("token index {bad} outside vocabulary")));
    }
    if shape.variant != Variant::Lstm {
        x.check_target()?;
    }

    let cells: Vec<CellNodes> = shape
        .branch_prefixes()
        .iter()
        .zip(&model.params.cells)
        .map(|(prefix, cell)| cell.register(tape, prefix))
        .collect();
    let attention: Vec<AttentionNodes> = shape
        .attention_prefixes()
        .iter()
        .zip(&model.params.attention)
        .map(|(prefix, a)| AttentionNodes {
            m: tape.param(&format!("{prefix}.m"), &a.m),
            b: tape.param(&format!("{prefix}.b"), &a.b),
            v: tape.param(&format!("{prefix}.v"), &a.v),
        })
        .collect();
    let soft_w = tape.param("softmax.w", &model.params.softmax.w);
    let soft_b = tape.param("softmax.b", &model.params.softmax.b);

    let table = model.embeddings.trainable.then(|| {
        tape.table(
            EMBEDDING_PARAM,
            model.embeddings.rows(),
            model.embeddings.dim(),
        )
    });
    let mut words = Vec::with_capacity(x.tokens.len());
    for &tok in &x.tokens {
        let row = model.embeddings.row(tok);
        words.push(match table {
            Some(t) => tape.row(t, tok, row)?,
            None => tape.constant(row),
        });
    }

    let inputs = if shape.variant == Variant::TcLstm {
        let target_vec = tape.mean(&words[x.target.clone()])?;
        words
            .iter()
            .map(|&w| tape.concat(&[w, target_vec]))
            .collect::<Result<Vec<_>>>()?
    } else {
        words
    };

    let d = shape.hidden;
    let mut weights = Vec::new();
    let feature = match shape.variant {
        Variant::Lstm => {
            let init = zero_state_on_tape(tape, d);
            let states = run_sequence_on_tape(tape, &cells[0], init, &inputs, Direction::Forward)?;
            states.last().expect("non-empty").h
        }
        Variant::TdLstm | Variant::TcLstm | Variant::AttTdLstm => {
            let left_in = &inputs[..x.target.end];
            let right_in = &inputs[x.target.start..];
            let init = zero_state_on_tape(tape, d);
            let left = run_sequence_on_tape(tape, &cells[0], init, left_in, Direction::Forward)?;
            let right = run_sequence_on_tape(tape, &cells[1], init, right_in, Direction::Reversed)?;
            let (hl, hr) = if shape.variant == Variant::AttTdLstm {
                let (l, wl) = attend(tape, &attention[0], &left)?;
                let (r, wr) = attend(tape, &attention[1], &right)?;
                weights.extend([wl, wr]);
                (l, r)
            } else {
                (
                    left.last().expect("target non-empty").h,
                    right.last().expect("target non-empty").h,
                )
            };
            match shape.combine {
                Combine::Concat => tape.concat(&[hl, hr])?,
                Combine::Sum => tape.add(hl, hr)?,
                Combine::Mean => {
                    let s = tape.add(hl, hr)?;
                    tape.scale(s, T::of(0.5))
                }
            }
        }
    };
    let logits = tape.affine(soft_w, feature, Some(soft_b), None)?;
    Ok(Built {
        logits,
        attention: weights,
    })
}

/// Soft attention over one branch; returns (pooled vector, weights node).
fn attend<T: Real>(
    tape: &mut Tape<'_, T>,
    scorer: &AttentionNodes,
    states: &[StateNodes],
) -> Result<(NodeId, NodeId)> {
    let mut scores = Vec::with_capacity(states.len());
    let mut hidden = Vec::with_capacity(states.len());
    for s in states {
        let u = tape.affine(scorer.m, s.h, Some(scorer.b), Some(Activation::Tanh))?;
        scores.push(tape.affine(scorer.v, u, None, None)?);
        hidden.push(s.h);
    }
    let scores = tape.concat(&scores)?;
    let weights = tape.softmax(scores)?;
    let pooled = tape.weighted_sum(weights, &hidden)?;
    Ok((pooled, weights))
}

fn expect_variant<T: Real>(model: &Model<T>, want: Variant) -> Result<()> {
    if model.variant() != want {
        return Err(Error::VariantMismatch {
            expected: want.to_string(),
            found: model.variant().to_string(),
        });
    }
    Ok(())
}

/// Forward pass for whichever variant `model` is.
pub fn forward<T: Real>(model: &Model<T>, x: &EncodedInstance) -> Result<Prediction<T>> {
    let mut tape = Tape::new();
    let built = build(&mut tape, model, x)?;
    Prediction::from_logits(tape.value(built.logits).clone())
}

/// Plain LSTM over the whole sentence; the target span is ignored.
pub fn forward_lstm<T: Real>(model: &Model<T>, x: &EncodedInstance) -> Result<Prediction<T>> {
    expect_variant(model, Variant::Lstm)?;
    forward(model, x)
}

pub fn forward_td<T: Real>(model: &Model<T>, x: &EncodedInstance) -> Result<Prediction<T>> {
    expect_variant(model, Variant::TdLstm)?;
    forward(model, x)
}

pub fn forward_tc<T: Real>(model: &Model<T>, x: &EncodedInstance) -> Result<Prediction<T>> {
    expect_variant(model, Variant::TcLstm)?;
    forward(model, x)
}

pub fn forward_att<T: Real>(model: &Model<T>, x: &EncodedInstance) -> Result<Prediction<T>> {
    expect_variant(model, Variant::AttTdLstm)?;
    forward(model, x)
}

/// Attention weights of the left and right branches (`att-td-lstm` only).
pub fn attention_weights<T: Real>(model: &Model<T>, x: &EncodedInstance) -> Result<[Vec<T>; 2]> {
    expect_variant(model, Variant::AttTdLstm)?;
    let mut tape = Tape::new();
    let built = build(&mut tape, model, x)?;
    Ok([
        tape.value(built.attention[0]).data().to_vec(),
        tape.value(built.attention[1]).data().to_vec(),
    ])
}

fn gold_index<T: Real>(model: &Model<T>, x: &EncodedInstance) -> Result<usize> {
    let gold = x.label.class_index();
    if gold >= model.params.shape.classes {
        return Err(Error::validation(format!(
            "gold class {gold} outside {} classes",
            model.params.shape.classes
        )));
    }
    Ok(gold)
}

/// Cross-entropy of the gold label, without gradients.
pub fn loss<T: Real>(model: &Model<T>, x: &EncodedInstance) -> Result<T> {
    let gold = gold_index(model, x)?;
    let mut tape = Tape::new();
    let built = build(&mut tape, model, x)?;
    let l = tape.softmax_cross_entropy(built.logits, gold)?;
    Ok(tape.value(l).data()[0])
}

/// Loss, prediction and exact gradients for one instance.
pub fn loss_and_gradients<T: Real>(
    model: &Model<T>,
    x: &EncodedInstance,
) -> Result<(T, Prediction<T>, Gradients<T>)> {
    loss_and_gradients_with(model, x, None)
}

#[doc(hidden)]
pub fn loss_and_gradients_with<T: Real>(
    model: &Model<T>,
    x: &EncodedInstance,
    fault: Option<crate::mathcore::Fault>,
) -> Result<(T, Prediction<T>, Gradients<T>)> {
    let gold = gold_index(model, x)?;
    let mut tape = Tape::new();
    if let Some(f) = fault {
        tape.inject_fault(f);
    }
    let built = build(&mut tape, model, x)?;
    let l = tape.softmax_cross_entropy(built.logits, gold)?;
    let grads = tape.backward_scalar(l)?;
    let prediction = Prediction::from_logits(tape.value(built.logits).clone())?;
    Ok((tape.value(l).data()[0], prediction, grads))
}
