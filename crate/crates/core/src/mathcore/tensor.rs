use std::fmt;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar type carried by [`Tensor`]. Implemented for `f64` (the default) and `f32`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// Short name recorded in checkpoints.
    const NAME: &'static str;

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}

impl Real for f32 {
    const NAME: &'static str = "f32";
}

/// Pointwise nonlinearities used by the recurrent cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Binary pointwise operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Mul,
}

/// Dense row-major matrix. Column vectors are `n × 1`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}x{}) [", self.rows, self.cols)?;
        for r in 0..self.rows {
            if r > 0 {
                write!(f, "; ")?;
            }
            for c in 0..self.cols {
                if c > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self.data[r * self.cols + c])?;
            }
        }
        write!(f, "]")
    }
}

impl<T: Real> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Build from nested rows; all rows must have the same length.
    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Dimension {
                    op: "from_rows",
                    left: (i, row.len()),
                    right: (0, cols),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn column(values: &[T]) -> Self {
        Tensor {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let cols = self.cols;
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn activate(&self, act: Activation) -> Self {
        self.map(|v| act.apply(v))
    }

    pub fn sigmoid(&self) -> Self {
        self.activate(Activation::Sigmoid)
    }

    pub fn tanh(&self) -> Self {
        self.activate(Activation::Tanh)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn squared_norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    pub fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, op)?;
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn binary(&self, op: Binary, other: &Self) -> Result<Self> {
        match op {
            Binary::Add => self.zip_with(other, "add", |a, b| a + b),
            Binary::Mul => self.zip_with(other, "mul", |a, b| a * b),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.binary(Binary::Add, other)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.binary(Binary::Mul, other)
    }

    /// `self += k * other`
    pub fn add_scaled_in_place(&mut self, other: &Self, k: T) -> Result<()> {
        self.check_same_shape(other, "add_scaled")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + k * b;
        }
        Ok(())
    }

    pub fn add_in_place(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`, without materialising the transpose.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::Dimension {
                op: "t_matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Tensor::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self += u · vᵀ` for column vectors `u` (rows × 1) and `v` (cols × 1).
    pub fn add_outer(&mut self, u: &Self, v: &Self) -> Result<()> {
        if u.cols != 1 || v.cols != 1 || u.rows != self.rows || v.rows != self.cols {
            return Err(Error::Dimension {
                op: "add_outer",
                left: u.shape(),
                right: v.shape(),
            });
        }
        for (i, &ui) in u.data.iter().enumerate() {
            if ui == T::zero() {
                continue;
            }
            let row = &mut self.data[i * v.rows..(i + 1) * v.rows];
            for (o, &vj) in row.iter_mut().zip(&v.data) {
                *o = *o + ui * vj;
            }
        }
        Ok(())
    }

    /// `W · x + b` for a column vector `x`; `b` optional.
    pub fn affine(&self, x: &Self, b: Option<&Self>) -> Result<Self> {
        if x.cols != 1 {
            return Err(Error::Dimension {
                op: "affine",
                left: self.shape(),
                right: x.shape(),
            });
        }
        let mut out = self.matmul(x)?;
        if let Some(b) = b {
            out.add_in_place(b).map_err(|_| Error::Dimension {
                op: "affine bias",
                left: out.shape(),
                right: b.shape(),
            })?;
        }
        Ok(out)
    }

    /// Stack tensors with equal column counts vertically.
    pub fn vconcat(parts: &[&Self]) -> Result<Self> {
        let cols = parts.first().map_or(1, |p| p.cols);
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::Dimension {
                    op: "concat",
                    left: (rows, cols),
                    right: p.shape(),
                });
            }
            rows += p.rows;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Arithmetic mean of equally shaped tensors.
    pub fn mean_of(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::validation("mean of an empty list"))?;
        let mut acc = Tensor::zeros(first.rows, first.cols);
        for p in parts {
            acc.add_in_place(p).map_err(|_| Error::Dimension {
                op: "mean",
                left: first.shape(),
                right: p.shape(),
            })?;
        }
        let n = T::from_usize(parts.len()).expect("count fits");
        Ok(acc.map(|v| v / n))
    }

    /// Index of the largest entry; the lowest index wins on exact ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// Largest `|a - b|` over all entries.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }
}

/// Numerically stable softmax of a column vector.
pub fn softmax<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.cols() != 1 || x.rows() == 0 {
        return Err(Error::Dimension {
            op: "softmax",
            left: x.shape(),
            right: (x.rows().max(1), 1),
        });
    }
    let max = x.data().iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<T> = x.data().iter().map(|&v| (v - max).exp()).collect();
    let total = exps.iter().fold(T::zero(), |a, &b| a + b);
    Ok(Tensor::column(
        &exps.iter().map(|&e| e / total).collect::<Vec<_>>(),
    ))
}

/// `log Σ exp(x_i)` with max-subtraction.
pub fn log_sum_exp<T: Real>(x: &Tensor<T>) -> T {
    let max = x.data().iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let total = x
        .data()
        .iter()
        .fold(T::zero(), |a, &v| a + (v - max).exp());
    max + total.ln()
}

/// Pointwise operation over one or more equally shaped tensors.
pub enum Elementwise {
    Add,
    Mul,
    Tanh,
    Sigmoid,
}

pub fn elementwise<T: Real>(op: Elementwise, args: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = args
        .first()
        .ok_or_else(|| Error::validation("elementwise op without arguments"))?;
    match op {
        Elementwise::Tanh | Elementwise::Sigmoid => {
            if args.len() != 1 {
                return Err(Error::validation("unary op takes exactly one argument"));
            }
            Ok(match op {
                Elementwise::Tanh => first.tanh(),
                _ => first.sigmoid(),
            })
        }
        Elementwise::Add | Elementwise::Mul => {
            let bin = if matches!(op, Elementwise::Add) {
                Binary::Add
            } else {
                Binary::Mul
            };
            let mut acc = (*first).clone();
            for a in &args[1..] {
                acc = acc.binary(bin, a)?;
            }
            Ok(acc)
        }
    }
}
