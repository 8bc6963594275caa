//! Central finite-difference check of the analytic gradients.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::data::Polarity;
use crate::embeddings::{EmbeddingTable, Vocabulary};
use crate::error::Result;
use crate::mathcore::{Fault, SeededRng};
use crate::models::{
    loss, loss_and_gradients_with, Combine, EncodedInstance, Model, ModelParams, ModelShape,
    Variant, EMBEDDING_PARAM,
};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error.
pub const ERROR_FLOOR: f64 = 1e-8;
/// Parameter and embedding scale at check points; large enough that most gradients sit well above the floor.
pub const CHECK_INIT_BOUND: f64 = 0.5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub failures: usize,
    pub max_relative_error: f64,
    /// Flat index of the worst entry, with its analytic and numeric values.
    pub worst: (usize, f64, f64),
    /// Largest |analytic - numeric| among the entries over tolerance.
    pub max_failing_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.failures == 0)
    }

    pub fn entries(&self) -> usize {
        self.params.iter().map(|p| p.entries).sum()
    }

    pub fn failures(&self) -> usize {
        self.params.iter().map(|p| p.failures).sum()
    }

    pub fn max_failing_gap(&self) -> f64 {
        self.params.iter().map(|p| p.max_failing_gap).fold(0.0, f64::max)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max)
    }
}

struct Accumulator {
    check: ParamCheck,
    tolerance: f64,
}

impl Accumulator {
    fn new(name: &str, tolerance: f64) -> Self {
        Accumulator {
            check: ParamCheck {
                name: name.to_string(),
                entries: 0,
                failures: 0,
                max_relative_error: 0.0,
                worst: (0, 0.0, 0.0),
                max_failing_gap: 0.0,
            },
            tolerance,
        }
    }

    fn push(&mut self, index: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.check.entries += 1;
        if !(err < self.tolerance) {
            self.check.failures += 1;
            let gap = (analytic - numeric).abs();
            if gap > self.check.max_failing_gap || gap.is_nan() {
                self.check.max_failing_gap = gap;
            }
        }
        if err > self.check.max_relative_error || err.is_nan() {
            self.check.max_relative_error = err;
            self.check.worst = (index, analytic, numeric);
        }
    }
}

/// Compare analytic gradients of the loss on `x` with central differences of step `epsilon`.
///
/// Embedding rows are checked only for the tokens of `x`; every other row has zero
/// gradient on both sides by construction.
pub fn check_gradients(
    model: &Model,
    x: &EncodedInstance,
    epsilon: f64,
    tolerance: f64,
    fault: Option<Fault>,
) -> Result<GradCheckReport> {
    let (_, _, grads) = loss_and_gradients_with(model, x, fault)?;
    let mut probe = model.clone();
    let mut params = Vec::new();

    let names: Vec<String> = model.params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for name in names {
        let analytic = grads.dense(&name).cloned().unwrap_or_else(|| {
            let t = model.params.get(&name).expect("listed");
            crate::mathcore::Tensor::zeros(t.rows(), t.cols())
        });
        let mut acc = Accumulator::new(&name, tolerance);
        for i in 0..analytic.len() {
            let orig = probe.params.get(&name).expect("listed").data()[i];
            probe.params.get_mut(&name).expect("listed").data_mut()[i] = orig + epsilon;
            let up = loss(&probe, x)?;
            probe.params.get_mut(&name).expect("listed").data_mut()[i] = orig - epsilon;
            let down = loss(&probe, x)?;
            probe.params.get_mut(&name).expect("listed").data_mut()[i] = orig;
            acc.push(i, analytic.data()[i], (up - down) / (2.0 * epsilon));
        }
        params.push(acc.check);
    }

    if model.embeddings.trainable {
        let sparse = grads.sparse(EMBEDDING_PARAM);
        let dim = model.embeddings.dim();
        let mut acc = Accumulator::new(EMBEDDING_PARAM, tolerance);
        let rows: BTreeSet<usize> = x.tokens.iter().copied().collect();
        for row in rows {
            let grad_row = sparse.and_then(|s| s.row(row));
            for c in 0..dim {
                let orig = probe.embeddings.matrix().get(row, c);
                probe.embeddings.matrix_mut().set(row, c, orig + epsilon);
                let up = loss(&probe, x)?;
                probe.embeddings.matrix_mut().set(row, c, orig - epsilon);
                let down = loss(&probe, x)?;
                probe.embeddings.matrix_mut().set(row, c, orig);
                let a = grad_row.map_or(0.0, |g| g[c]);
                acc.push(row * dim + c, a, (up - down) / (2.0 * epsilon));
            }
        }
        params.push(acc.check);
    }

    Ok(GradCheckReport { tolerance, params })
}

/// A random model and instance for checking: `len` tokens, target `target`, parameters
/// and embeddings uniform on `[-CHECK_INIT_BOUND, CHECK_INIT_BOUND]`.
pub fn random_case(
    variant: Variant,
    combine: Combine,
    dim: usize,
    len: usize,
    target: std::ops::Range<usize>,
    seed: u64,
) -> Result<(Model, EncodedInstance)> {
    let mut rng = SeededRng::new(seed).fork("gradcheck");
    let vocab_size = len + 2;
    let mut vocab = Vocabulary::new(false);
    for i in 1..vocab_size {
        vocab.insert(&format!("w{i}"));
    }
    let shape = ModelShape::new(variant, dim, dim).with_combine(combine);
    let params = ModelParams::uniform(shape, CHECK_INIT_BOUND, &mut rng)?;
    let table = EmbeddingTable::new(rng.uniform_tensor(vocab_size, dim, CHECK_INIT_BOUND), true)?;
    let model = Model::new(params, vocab, table)?;
    let tokens = (0..len).map(|_| 1 + rng.below(vocab_size - 1)).collect();
    let label = Polarity::from_class_index(rng.below(3)).expect("three classes");
    let x = EncodedInstance {
        tokens,
        target,
        label,
    };
    Ok((model, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_definition() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-10, 0.0) - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn small_cases_pass() {
        for v in Variant::ALL {
            let (m, x) = random_case(v, Combine::Concat, 3, 4, 1..3, 11).unwrap();
            let r = check_gradients(&m, &x, DEFAULT_EPSILON, DEFAULT_TOLERANCE, None).unwrap();
            assert!(r.passed(), "{v}: {r:?}");
            let names: Vec<&str> = r.params.iter().map(|p| p.name.as_str()).collect();
            let want = m.trainable_names();
            assert_eq!(names, want.iter().map(String::as_str).collect::<Vec<_>>());
        }
    }

    #[test]
    fn corrupted_adjoint_is_caught() {
        let (m, x) = random_case(Variant::TdLstm, Combine::Concat, 3, 4, 1..2, 5).unwrap();
        let r = check_gradients(&m, &x, DEFAULT_EPSILON, DEFAULT_TOLERANCE, Some(Fault::SigmoidAdjoint))
            .unwrap();
        assert!(!r.passed());
    }
}
