use proptest::prelude::*;

use tdsent::cells::LstmCellParams;
use tdsent::data::Polarity;
use tdsent::embeddings::{EmbeddingTable, Vocabulary};
use tdsent::gradcheck::{check_gradients, random_case, DEFAULT_EPSILON, DEFAULT_TOLERANCE};
use tdsent::mathcore::{Fault, SeededRng, Tensor};
use tdsent::models::{
    attention_weights, forward, forward_att, forward_lstm,
    forward_tc, forward_td, init_params, Combine, EncodedInstance, Model, ModelParams,
    ModelShape, Variant, INIT_BOUND,
};
use tdsent::Error;

/// Absolute gap allowed on entries that miss the relative tolerance. Rounding an O(1)
/// loss in f64 and dividing by 2e-5 leaves about 1e-11.
const ROUNDING_GAP: f64 = 1e-9;

fn vocab(n: usize) -> Vocabulary {
    let mut v = Vocabulary::new(false);
    for i in 1..n {
        v.insert(&format!("w{i}"));
    }
    v
}

fn model(shape: ModelShape, scale: f64, seed: u64) -> Model {
    let mut rng = SeededRng::new(seed);
    let params = ModelParams::uniform(shape, scale, &mut rng).unwrap();
    let table = EmbeddingTable::new(rng.uniform_tensor(8, shape.embedding_dim, 1.0), false).unwrap();
    Model::new(params, vocab(8), table).unwrap()
}

fn instance(tokens: &[usize], target: std::ops::Range<usize>) -> EncodedInstance {
    EncodedInstance {
        tokens: tokens.to_vec(),
        target,
        label: Polarity::Positive,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar-loop LSTM step, written independently of the tensor code.
fn oracle_step(p: &LstmCellParams, h: &[f64], c: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let z: Vec<f64> = h.iter().chain(x).copied().collect();
    let d = h.len();
    let gate = |w: &Tensor, b: &Tensor, r: usize| -> f64 {
        (0..z.len()).map(|j| w.get(r, j) * z[j]).sum::<f64>() + b.get(r, 0)
    };
    let mut h2 = vec![0.0; d];
    let mut c2 = vec![0.0; d];
    for r in 0..d {
        let i = sigmoid(gate(&p.w_i, &p.b_i, r));
        let f = sigmoid(gate(&p.w_f, &p.b_f, r));
        let o = sigmoid(gate(&p.w_o, &p.b_o, r));
        let g = gate(&p.w_r, &p.b_r, r).tanh();
        c2[r] = i * g + f * c[r];
        h2[r] = o * c2[r].tanh();
    }
    (h2, c2)
}

fn oracle_run(p: &LstmCellParams, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = p.hidden();
    let (mut h, mut c) = (vec![0.0; d], vec![0.0; d]);
    let mut out = Vec::new();
    for x in inputs {
        (h, c) = oracle_step(p, &h, &c, x);
        out.push(h.clone());
    }
    out
}

fn oracle_probs(m: &Model, feature: &[f64]) -> Vec<f64> {
    let w = &m.params.softmax.w;
    let logits: Vec<f64> = (0..3)
        .map(|r| (0..feature.len()).map(|j| w.get(r, j) * feature[j]).sum::<f64>() + m.params.softmax.b.get(r, 0))
        .collect();
    let max = logits.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn word(m: &Model, t: usize) -> Vec<f64> {
    m.embeddings.row(t).data().to_vec()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn zero_parameters_give_uniform_predictions() {
    for v in Variant::ALL {
        for combine in [Combine::Concat, Combine::Sum, Combine::Mean] {
            let shape = ModelShape::new(v, 3, 4).with_combine(combine);
            let mut m = model(shape, 0.5, 1);
            m.params = ModelParams::zeros(shape).unwrap();
            let p = forward(&m, &instance(&[1, 2, 3, 4], 1..3)).unwrap();
            assert!(p.probabilities.data().iter().all(|&q| q == 1.0 / 3.0), "{v}");
            assert_eq!(p.predicted_class, 0);
        }
    }
}

#[test]
fn plain_lstm_ignores_the_target_span() {
    let m = model(ModelShape::new(Variant::Lstm, 4, 3), 0.5, 2);
    let a = forward_lstm(&m, &instance(&[1, 2, 3, 4, 5], 0..1)).unwrap();
    let b = forward_lstm(&m, &instance(&[1, 2, 3, 4, 5], 3..5)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn lstm_matches_scalar_oracle() {
    let m = model(ModelShape::new(Variant::Lstm, 2, 2), 0.8, 3);
    let x = instance(&[3, 1, 6], 0..1);
    let inputs: Vec<Vec<f64>> = x.tokens.iter().map(|&t| word(&m, t)).collect();
    let hs = oracle_run(&m.params.cells[0], &inputs);
    let want = oracle_probs(&m, hs.last().unwrap());
    let got = forward(&m, &x).unwrap();
    assert_close(got.probabilities.data(), &want, 1e-12);
}

#[test]
fn td_lstm_matches_scalar_oracle() {
    let m = model(ModelShape::new(Variant::TdLstm, 3, 2), 0.8, 4);
    for (tokens, span) in [(vec![1, 2, 3, 4, 5], 1..3), (vec![1, 2, 3], 0..1), (vec![4, 5, 6], 2..3)] {
        let x = instance(&tokens, span.clone());
        let left: Vec<Vec<f64>> = tokens[..span.end].iter().map(|&t| word(&m, t)).collect();
        let right: Vec<Vec<f64>> = tokens[span.start..].iter().rev().map(|&t| word(&m, t)).collect();
        let hl = oracle_run(&m.params.cells[0], &left);
        let hr = oracle_run(&m.params.cells[1], &right);
        let feature: Vec<f64> = hl.last().unwrap().iter().chain(hr.last().unwrap()).copied().collect();
        let got = forward_td(&m, &x).unwrap();
        assert_close(got.probabilities.data(), &oracle_probs(&m, &feature), 1e-12);
    }
}

#[test]
fn tc_lstm_matches_scalar_oracle() {
    let m = model(ModelShape::new(Variant::TcLstm, 2, 2), 0.8, 5);
    let tokens = [1, 2, 3, 4];
    let span = 1..3;
    let target: Vec<f64> = (0..2)
        .map(|c| (word(&m, 2)[c] + word(&m, 3)[c]) / 2.0)
        .collect();
    let with_target = |t: usize| -> Vec<f64> { word(&m, t).into_iter().chain(target.clone()).collect() };
    let left: Vec<Vec<f64>> = tokens[..span.end].iter().map(|&t| with_target(t)).collect();
    let right: Vec<Vec<f64>> = tokens[span.start..].iter().rev().map(|&t| with_target(t)).collect();
    let hl = oracle_run(&m.params.cells[0], &left);
    let hr = oracle_run(&m.params.cells[1], &right);
    let feature: Vec<f64> = hl.last().unwrap().iter().chain(hr.last().unwrap()).copied().collect();
    let got = forward_tc(&m, &instance(&tokens, span)).unwrap();
    assert_close(got.probabilities.data(), &oracle_probs(&m, &feature), 1e-12);
}

#[test]
fn tc_lstm_with_silenced_target_channels_equals_td_lstm() {
    let (d, e) = (3, 4);
    let td = model(ModelShape::new(Variant::TdLstm, d, e), 0.5, 6);
    let mut tc = model(ModelShape::new(Variant::TcLstm, d, e), 0.5, 7);
    tc.embeddings = td.embeddings.clone();
    tc.params.softmax = td.params.softmax.clone();
    for (dst, src) in tc.params.cells.iter_mut().zip(&td.params.cells) {
        for (wd, ws) in [
            (&mut dst.w_i, &src.w_i),
            (&mut dst.w_f, &src.w_f),
            (&mut dst.w_o, &src.w_o),
            (&mut dst.w_r, &src.w_r),
        ] {
            *wd = Tensor::from_fn(d, d + 2 * e, |r, c| if c < d + e { ws.get(r, c) } else { 0.0 });
        }
        dst.b_i = src.b_i.clone();
        dst.b_f = src.b_f.clone();
        dst.b_o = src.b_o.clone();
        dst.b_r = src.b_r.clone();
    }
    let x = instance(&[1, 2, 3, 4, 5, 6], 2..4);
    assert_eq!(forward(&tc, &x).unwrap().logits, forward(&td, &x).unwrap().logits);
}

#[test]
fn attention_singleton_branch_has_weight_one() {
    let m = model(ModelShape::new(Variant::AttTdLstm, 3, 2), 0.5, 8);
    let [left, right] = attention_weights(&m, &instance(&[4, 1, 2], 0..1)).unwrap();
    assert_eq!(left, vec![1.0]);
    assert_eq!(right.len(), 3);
    assert!((right.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn attention_weights_match_direct_softmax() {
    let m = model(ModelShape::new(Variant::AttTdLstm, 2, 2), 0.8, 9);
    let tokens = [5, 6, 7];
    let x = instance(&tokens, 2..3);
    let inputs: Vec<Vec<f64>> = tokens.iter().map(|&t| word(&m, t)).collect();
    let hs = oracle_run(&m.params.cells[0], &inputs);
    let att = &m.params.attention[0];
    let scores: Vec<f64> = hs
        .iter()
        .map(|h| {
            (0..2)
                .map(|r| {
                    let u = ((0..2).map(|j| att.m.get(r, j) * h[j]).sum::<f64>() + att.b.get(r, 0)).tanh();
                    att.v.get(0, r) * u
                })
                .sum()
        })
        .collect();
    let max = scores.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = e.iter().sum();
    let want: Vec<f64> = e.iter().map(|v| v / total).collect();
    let [left, _] = attention_weights(&m, &x).unwrap();
    assert_close(&left, &want, 1e-12);
    assert!(forward_att(&m, &x).is_ok());
}

#[test]
fn wrong_variant_is_reported() {
    let m = model(ModelShape::new(Variant::TdLstm, 2, 2), 0.1, 1);
    let x = instance(&[1, 2], 0..1);
    assert!(matches!(forward_tc(&m, &x), Err(Error::VariantMismatch { .. })));
    assert!(matches!(forward_lstm(&m, &x), Err(Error::VariantMismatch { .. })));
}

#[test]
fn invalid_instances_are_rejected() {
    let m = model(ModelShape::new(Variant::TcLstm, 2, 2), 0.1, 1);
    assert!(forward(&m, &instance(&[], 0..0)).is_err());
    assert!(forward(&m, &instance(&[1, 2], 1..1)).is_err());
    assert!(forward(&m, &instance(&[1, 2], 1..3)).is_err());
    assert!(forward(&m, &instance(&[1, 99], 0..1)).is_err());
}

#[test]
fn init_sample_mean_is_centred() {
    let shape = ModelShape::new(Variant::TcLstm, 70, 70);
    let p: ModelParams = init_params(shape, 17).unwrap();
    let values: Vec<f64> = p
        .named_tensors()
        .into_iter()
        .flat_map(|(_, t)| t.data().to_vec())
        .take(100_000)
        .collect();
    assert_eq!(values.len(), 100_000);
    assert!(values.iter().all(|v| v.abs() <= INIT_BOUND));
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let sigma = INIT_BOUND / 3f64.sqrt() / (values.len() as f64).sqrt();
    assert!(mean.abs() < 3.0 * sigma, "mean {mean}, 3σ {}", 3.0 * sigma);
}

#[test]
fn broken_adjoint_exceeds_the_rounding_gap() {
    let (m, x) = random_case(Variant::TdLstm, Combine::Concat, 3, 4, 1..2, 5).unwrap();
    let r = check_gradients(&m, &x, DEFAULT_EPSILON, DEFAULT_TOLERANCE, Some(Fault::SigmoidAdjoint)).unwrap();
    assert!(r.max_failing_gap() > 1e3 * ROUNDING_GAP, "{}", r.max_failing_gap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn analytic_gradients_match_finite_differences(
        variant in prop::sample::select(Variant::ALL.to_vec()),
        combine in prop::sample::select(vec![Combine::Concat, Combine::Sum, Combine::Mean]),
        dim in 1usize..5,
        len in 1usize..7,
        start_frac in 0.0f64..1.0,
        width in 1usize..3,
        seed in 0u64..1000,
    ) {
        let start = ((len as f64 * start_frac) as usize).min(len - 1);
        let end = (start + width).min(len);
        let (m, x) = random_case(variant, combine, dim, len, start..end, seed).unwrap();
        let r = check_gradients(&m, &x, DEFAULT_EPSILON, DEFAULT_TOLERANCE, None).unwrap();
        // entries over tolerance must be within the rounding floor of the difference quotient
        prop_assert!(
            r.max_failing_gap() <= ROUNDING_GAP,
            "{:?}",
            r.params.iter().filter(|p| p.failures > 0).collect::<Vec<_>>()
        );
    }

    #[test]
    fn probabilities_sum_to_one(
        variant in prop::sample::select(Variant::ALL.to_vec()),
        tokens in prop::collection::vec(1usize..8, 1..12),
        scale in 0.001f64..3.0,
        seed in 0u64..1000,
    ) {
        let m = model(ModelShape::new(variant, 3, 3), scale, seed);
        let target = (tokens.len() / 2)..(tokens.len() / 2 + 1);
        let p = forward(&m, &instance(&tokens, target)).unwrap();
        prop_assert!((p.probabilities.sum() - 1.0).abs() <= 1e-9);
        prop_assert_eq!(p.predicted_class, p.probabilities.argmax());
    }
}
