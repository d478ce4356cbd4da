//! Dense row-major primitives shared by the encoders, fusion math and decoder.
//!
//! Sequences are `(length, width)` matrices. Affine maps follow the
//! `y = x W^T + b` convention with `W` stored as `(out, in)`.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;
pub type Vector = Array1<f64>;

/// Joins hierarchical parameter names with `.`.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Named access to every trainable array of a component.
///
/// Names are hierarchical (`fusion.query.weight`) and arrays are visited in a
/// fixed order, so two visits over equal structures line up entry by entry.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));

    fn num_parameters(&self) -> usize {
        let mut total = 0;
        self.visit("", &mut |_, _, data| total += data.len());
        total
    }
}

pub(crate) fn visit_matrix(m: &Matrix, name: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
    let shape = [m.nrows(), m.ncols()];
    f(name, &shape, m.as_slice().expect("standard layout"));
}

pub(crate) fn visit_matrix_mut(
    m: &mut Matrix,
    name: &str,
    f: &mut dyn FnMut(&str, &[usize], &mut [f64]),
) {
    let shape = [m.nrows(), m.ncols()];
    f(name, &shape, m.as_slice_mut().expect("standard layout"));
}

/// Symmetric uniform initialisation in `[-bound, bound]`.
pub fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..=bound))
}

/// An affine map `in -> out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    /// `(out, in)`
    pub weight: Matrix,
    pub bias: Vector,
}

impl Affine {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros((output, input)),
            bias: Vector::zeros(output),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        Self {
            weight: Matrix::eye(dim) * scale,
            bias: Vector::zeros(dim),
        }
    }

    /// Weights drawn from `U(-1/sqrt(in), 1/sqrt(in))`, zero bias.
    pub fn random(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: uniform_matrix(output, input, bound, rng),
            bias: Vector::zeros(output),
        }
    }

    pub fn from_parts(weight: Matrix, bias: Vector) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::shape(format!(
                "affine weight has {} rows but bias has {} entries",
                weight.nrows(),
                bias.len()
            )));
        }
        Ok(Self {
            weight: weight.as_standard_layout().to_owned(),
            bias,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.output_dim())
    }

    /// Row-wise application to `x` of shape `(rows, in)`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "affine map expects width {}, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(self.apply(x))
    }

    pub(crate) fn apply(&self, x: &Matrix) -> Matrix {
        x.dot(&self.weight.t()) + &self.bias
    }

    pub(crate) fn apply_vec(&self, x: &Vector) -> Vector {
        self.weight.dot(x) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub(crate) fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Affine) -> Matrix {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }

    pub(crate) fn backward_vec(&self, x: &Vector, dy: &Vector, grad: &mut Affine) -> Vector {
        for (i, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                grad.weight.row_mut(i).scaled_add(g, x);
            }
        }
        grad.bias += dy;
        self.weight.t().dot(dy)
    }

    pub fn is_finite(&self) -> bool {
        self.weight
            .iter()
            .chain(self.bias.iter())
            .all(|v| v.is_finite())
    }
}

impl Parameters for Affine {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit_matrix(&self.weight, &join(prefix, "weight"), f);
        f(
            &join(prefix, "bias"),
            &[self.bias.len()],
            self.bias.as_slice().expect("standard layout"),
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        visit_matrix_mut(&mut self.weight, &join(prefix, "weight"), f);
        let len = self.bias.len();
        f(
            &join(prefix, "bias"),
            &[len],
            self.bias.as_slice_mut().expect("standard layout"),
        );
    }
}

/// Logistic function kept strictly inside `(0, 1)`: without the clamp it
/// rounds to exactly 1.0 above about 37 and to 0.0 below about -745.
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Numerically stable softmax over each row.
pub fn softmax_rows(scores: &Matrix) -> Matrix {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}
