//! Recurrent transition functions.
//!
//! Each cell consumes the concatenation `[h_prev; x]`, so weight matrices are
//! `d × (d + k)` for hidden size `d` and input size `k`. The eager functions
//! here and the taped versions used for training evaluate the same arithmetic
//! in the same order, so their values agree bit for bit.

use crate::error::{Error, Result};
use crate::mathcore::{Activation, NodeId, Real, SeededRng, Tape, Tensor};

/// Names of the eight LSTM cell tensors, in canonical order.
pub const LSTM_PARAM_NAMES: [&str; 8] = ["w_i", "w_f", "w_o", "w_r", "b_i", "b_f", "b_o", "b_r"];

#[derive(Debug, Clone, PartialEq)]
pub struct RnnCellParams<T: Real = f64> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> RnnCellParams<T> {
    pub fn new(w: Tensor<T>, b: Tensor<T>) -> Result<Self> {
        let d = b.rows();
        if b.cols() != 1 || w.rows() != d || w.cols() < d {
            return Err(Error::Dimension {
                op: "rnn params",
                left: w.shape(),
                right: b.shape(),
            });
        }
        Ok(RnnCellParams { w, b })
    }

    pub fn hidden(&self) -> usize {
        self.b.rows()
    }

    pub fn input(&self) -> usize {
        self.w.cols() - self.hidden()
    }
}

/// `tanh(W·[h_prev; x] + b)`
pub fn rnn_step<T: Real>(
    params: &RnnCellParams<T>,
    h_prev: &Tensor<T>,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_column(h_prev, params.hidden(), "rnn h_prev")?;
    check_column(x, params.input(), "rnn input")?;
    let z = Tensor::vconcat(&[h_prev, x])?;
    Ok(params.w.affine(&z, Some(&params.b))?.tanh())
}

fn check_column<T: Real>(t: &Tensor<T>, rows: usize, op: &'static str) -> Result<()> {
    if t.shape() != (rows, 1) {
        return Err(Error::Dimension {
            op,
            left: t.shape(),
            right: (rows, 1),
        });
    }
    Ok(())
}

/// Input, forget and output gates plus the candidate transform (`w_r`, `b_r`).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams<T: Real = f64> {
    pub w_i: Tensor<T>,
    pub w_f: Tensor<T>,
    pub w_o: Tensor<T>,
    pub w_r: Tensor<T>,
    pub b_i: Tensor<T>,
    pub b_f: Tensor<T>,
    pub b_o: Tensor<T>,
    pub b_r: Tensor<T>,
}

impl<T: Real> LstmCellParams<T> {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = || Tensor::zeros(hidden, hidden + input);
        let b = || Tensor::zeros(hidden, 1);
        LstmCellParams {
            w_i: w(),
            w_f: w(),
            w_o: w(),
            w_r: w(),
            b_i: b(),
            b_f: b(),
            b_o: b(),
            b_r: b(),
        }
    }

    /// Every entry i.i.d. uniform on `[-bound, bound]`.
    pub fn uniform(hidden: usize, input: usize, bound: f64, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(hidden, input);
        for t in p.tensors_mut() {
            *t = rng.uniform_tensor(t.rows(), t.cols(), bound);
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.b_i.rows()
    }

    pub fn input(&self) -> usize {
        self.w_i.cols() - self.hidden()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.hidden();
        let k = self.w_i.cols().checked_sub(d).ok_or_else(|| Error::Dimension {
            op: "lstm params",
            left: self.w_i.shape(),
            right: self.b_i.shape(),
        })?;
        for (i, t) in self.tensors().into_iter().enumerate() {
            let want = if i < 4 { (d, d + k) } else { (d, 1) };
            if t.shape() != want {
                return Err(Error::Dimension {
                    op: "lstm params",
                    left: t.shape(),
                    right: want,
                });
            }
        }
        Ok(())
    }

    /// Tensors in [`LSTM_PARAM_NAMES`] order.
    pub fn tensors(&self) -> [&Tensor<T>; 8] {
        [
            &self.w_i, &self.w_f, &self.w_o, &self.w_r, &self.b_i, &self.b_f, &self.b_o, &self.b_r,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 8] {
        [
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_o,
            &mut self.w_r,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
            &mut self.b_r,
        ]
    }

    /// Register all eight tensors on `tape` as `{prefix}.{name}`.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a, T>, prefix: &str) -> CellNodes {
        let t = self.tensors();
        let mut ids = [None; 8];
        for (slot, (name, tensor)) in ids.iter_mut().zip(LSTM_PARAM_NAMES.iter().zip(t)) {
            *slot = Some(tape.param(&format!("{prefix}.{name}"), tensor));
        }
        let ids = ids.map(|i| i.expect("filled"));
        CellNodes {
            w: [ids[0], ids[1], ids[2], ids[3]],
            b: [ids[4], ids[5], ids[6], ids[7]],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T: Real = f64> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: Tensor::zeros(hidden, 1),
            c: Tensor::zeros(hidden, 1),
        }
    }
}

pub fn lstm_step<T: Real>(
    params: &LstmCellParams<T>,
    state: &LstmState<T>,
    x: &Tensor<T>,
) -> Result<LstmState<T>> {
    let d = params.hidden();
    check_column(&state.h, d, "lstm h_prev")?;
    check_column(&state.c, d, "lstm c_prev")?;
    check_column(x, params.input(), "lstm input")?;
    let z = Tensor::vconcat(&[&state.h, x])?;
    let i = params.w_i.affine(&z, Some(&params.b_i))?.sigmoid();
    let f = params.w_f.affine(&z, Some(&params.b_f))?.sigmoid();
    let o = params.w_o.affine(&z, Some(&params.b_o))?.sigmoid();
    let g = params.w_r.affine(&z, Some(&params.b_r))?.tanh();
    let c = i.mul(&g)?.add(&f.mul(&state.c)?)?;
    let h = o.mul(&c.tanh())?;
    Ok(LstmState { h, c })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reversed,
}

/// Fold [`lstm_step`] over `inputs`, returning every state in traversal order.
pub fn run_sequence<T: Real>(
    params: &LstmCellParams<T>,
    initial: &LstmState<T>,
    inputs: &[Tensor<T>],
    direction: Direction,
) -> Result<Vec<LstmState<T>>> {
    let k = params.input();
    if let Some(bad) = inputs.iter().find(|x| x.shape() != (k, 1)) {
        return Err(Error::Dimension {
            op: "run_sequence input",
            left: bad.shape(),
            right: (k, 1),
        });
    }
    let order: Box<dyn Iterator<Item = &Tensor<T>>> = match direction {
        Direction::Forward => Box::new(inputs.iter()),
        Direction::Reversed => Box::new(inputs.iter().rev()),
    };
    let mut states = Vec::with_capacity(inputs.len());
    let mut state = initial.clone();
    for x in order {
        state = lstm_step(params, &state, x)?;
        states.push(state.clone());
    }
    Ok(states)
}

/// Tape handles of one registered LSTM cell; gate order is input, forget, output, candidate.
#[derive(Debug, Clone, Copy)]
pub struct CellNodes {
    pub w: [NodeId; 4],
    pub b: [NodeId; 4],
}

#[derive(Debug, Clone, Copy)]
pub struct StateNodes {
    pub h: NodeId,
    pub c: NodeId,
}

pub fn zero_state_on_tape<T: Real>(tape: &mut Tape<'_, T>, hidden: usize) -> StateNodes {
    StateNodes {
        h: tape.constant(Tensor::zeros(hidden, 1)),
        c: tape.constant(Tensor::zeros(hidden, 1)),
    }
}

pub fn lstm_step_on_tape<T: Real>(
    tape: &mut Tape<'_, T>,
    cell: &CellNodes,
    state: StateNodes,
    x: NodeId,
) -> Result<StateNodes> {
    let z = tape.concat(&[state.h, x])?;
    let i = tape.affine(cell.w[0], z, Some(cell.b[0]), Some(Activation::Sigmoid))?;
    let f = tape.affine(cell.w[1], z, Some(cell.b[1]), Some(Activation::Sigmoid))?;
    let o = tape.affine(cell.w[2], z, Some(cell.b[2]), Some(Activation::Sigmoid))?;
    let g = tape.affine(cell.w[3], z, Some(cell.b[3]), Some(Activation::Tanh))?;
    let ig = tape.mul(i, g)?;
    let fc = tape.mul(f, state.c)?;
    let c = tape.add(ig, fc)?;
    let tc = tape.activate(c, Activation::Tanh);
    let h = tape.mul(o, tc)?;
    Ok(StateNodes { h, c })
}

pub fn run_sequence_on_tape<T: Real>(
    tape: &mut Tape<'_, T>,
    cell: &CellNodes,
    initial: StateNodes,
    inputs: &[NodeId],
    direction: Direction,
) -> Result<Vec<StateNodes>> {
    let mut states = Vec::with_capacity(inputs.len());
    let mut state = initial;
    let mut visit = |x: NodeId, tape: &mut Tape<'_, T>| -> Result<()> {
        state = lstm_step_on_tape(tape, cell, state, x)?;
        states.push(state);
        Ok(())
    };
    match direction {
        Direction::Forward => {
            for &x in inputs {
                visit(x, tape)?;
            }
        }
        Direction::Reversed => {
            for &x in inputs.iter().rev() {
                visit(x, tape)?;
            }
        }
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_cell(vals: [f64; 8]) -> LstmCellParams {
        let w = |v: f64, u: f64| Tensor::from_rows(&[&[v, u]]).unwrap();
        let b = |v: f64| Tensor::column(&[v]);
        // weights on [h_prev, x]; entries 0..4 are the h-weights, shared x-weight 0.5
        LstmCellParams {
            w_i: w(vals[0], 0.5),
            w_f: w(vals[1], 0.5),
            w_o: w(vals[2], 0.5),
            w_r: w(vals[3], 0.5),
            b_i: b(vals[4]),
            b_f: b(vals[5]),
            b_o: b(vals[6]),
            b_r: b(vals[7]),
        }
    }

    #[test]
    fn rnn_zero_params_give_zero() {
        let p = RnnCellParams::new(Tensor::zeros(3, 5), Tensor::zeros(3, 1)).unwrap();
        let out = rnn_step(&p, &Tensor::column(&[0.3, -1.0, 2.0]), &Tensor::column(&[1.0, 2.0]))
            .unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn rnn_scalar_case() {
        let p = RnnCellParams::new(
            Tensor::from_rows(&[&[1.0, 1.0]]).unwrap(),
            Tensor::column(&[0.0]),
        )
        .unwrap();
        let out = rnn_step(&p, &Tensor::column(&[0.5]), &Tensor::column(&[0.5])).unwrap();
        assert_eq!(out.data()[0], 1f64.tanh());
        assert!((out.data()[0] - 0.7616).abs() < 1e-4);
    }

    #[test]
    fn rnn_shape_errors() {
        let p = RnnCellParams::new(Tensor::<f64>::zeros(2, 4), Tensor::zeros(2, 1)).unwrap();
        assert!(rnn_step(&p, &Tensor::zeros(3, 1), &Tensor::zeros(2, 1)).is_err());
        assert!(rnn_step(&p, &Tensor::zeros(2, 1), &Tensor::zeros(3, 1)).is_err());
    }

    #[test]
    fn lstm_zero_params_zero_state() {
        let p = LstmCellParams::<f64>::zeros(4, 3);
        let s = lstm_step(&p, &LstmState::zeros(4), &Tensor::column(&[1.0, -2.0, 3.0])).unwrap();
        assert!(s.h.data().iter().all(|&v| v == 0.0));
        assert!(s.c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_scalar_step_by_hand() {
        let vals = [0.1, -0.2, 0.3, 0.4, 0.05, -0.05, 0.2, -0.1];
        let p = scalar_cell(vals);
        let (h0, c0, x) = (0.25, -0.5, 0.8);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(vals[0] * h0 + 0.5 * x + vals[4]);
        let f = sig(vals[1] * h0 + 0.5 * x + vals[5]);
        let o = sig(vals[2] * h0 + 0.5 * x + vals[6]);
        let g = (vals[3] * h0 + 0.5 * x + vals[7]).tanh();
        let c = i * g + f * c0;
        let h = o * c.tanh();
        let state = LstmState {
            h: Tensor::column(&[h0]),
            c: Tensor::column(&[c0]),
        };
        let out = lstm_step(&p, &state, &Tensor::column(&[x])).unwrap();
        assert!((out.c.data()[0] - c).abs() < 1e-15);
        assert!((out.h.data()[0] - h).abs() < 1e-15);
    }

    #[test]
    fn run_sequence_edges() {
        let mut rng = SeededRng::new(5);
        let p = LstmCellParams::<f64>::uniform(3, 2, 0.5, &mut rng);
        let init = LstmState::zeros(3);
        assert!(run_sequence(&p, &init, &[], Direction::Forward)
            .unwrap()
            .is_empty());

        let xs: Vec<Tensor> = (0..3).map(|_| rng.uniform_tensor(2, 1, 1.0)).collect();
        let single = run_sequence(&p, &init, &xs[..1], Direction::Forward).unwrap();
        assert_eq!(single, vec![lstm_step(&p, &init, &xs[0]).unwrap()]);

        let rev = run_sequence(&p, &init, &xs, Direction::Reversed).unwrap();
        let flipped: Vec<Tensor> = xs.iter().rev().cloned().collect();
        let fwd = run_sequence(&p, &init, &flipped, Direction::Forward).unwrap();
        assert_eq!(rev, fwd);

        let bad = vec![Tensor::zeros(2, 1), Tensor::zeros(3, 1)];
        assert!(run_sequence(&p, &init, &bad, Direction::Forward).is_err());
    }

    #[test]
    fn taped_sequence_matches_eager_bitwise() {
        let mut rng = SeededRng::new(11);
        let p = LstmCellParams::<f64>::uniform(4, 3, 0.8, &mut rng);
        let xs: Vec<Tensor> = (0..5).map(|_| rng.uniform_tensor(3, 1, 1.0)).collect();
        let eager = run_sequence(&p, &LstmState::zeros(4), &xs, Direction::Reversed).unwrap();

        let mut tape = Tape::new();
        let cell = p.register(&mut tape, "cell");
        let init = zero_state_on_tape(&mut tape, 4);
        let inputs: Vec<NodeId> = xs.iter().map(|x| tape.constant_ref(x)).collect();
        let taped = run_sequence_on_tape(&mut tape, &cell, init, &inputs, Direction::Reversed)
            .unwrap();
        for (e, t) in eager.iter().zip(&taped) {
            assert_eq!(&e.h, tape.value(t.h));
            assert_eq!(&e.c, tape.value(t.c));
        }
    }

    #[test]
    fn invalid_param_shapes_detected() {
        let mut p = LstmCellParams::<f64>::zeros(2, 2);
        p.b_o = Tensor::zeros(3, 1);
        assert!(p.validate().is_err());
    }
}
