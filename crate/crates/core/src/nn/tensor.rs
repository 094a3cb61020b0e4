use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

/// Dense row-major matrix of `f64`. Bias vectors are `rows x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = libm::sqrt(6.0 / (rows + cols) as f64);
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `out = self * x`.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = dot(row, x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, &mut out);
        out
    }

    /// `out += selfᵀ * y`.
    pub fn add_matvec_t(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        for (&yr, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yr != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += yr * w;
                }
            }
        }
    }

    /// `self += y xᵀ`.
    pub fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        debug_assert_eq!((y.len(), x.len()), (self.rows, self.cols));
        for (&yr, row) in y.iter().zip(self.data.chunks_exact_mut(x.len())) {
            if yr != 0.0 {
                for (w, xc) in row.iter_mut().zip(x) {
                    *w += yr * xc;
                }
            }
        }
    }

    pub fn add_vec(&mut self, y: &[f64]) {
        for (d, v) in self.data.iter_mut().zip(y) {
            *d += v;
        }
    }
}

/// Four independent partial sums so the loop vectorizes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        let (x, y): (&[f64; 4], &[f64; 4]) = (x.try_into().unwrap(), y.try_into().unwrap());
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Multiplies `grad` by the rectifier derivative at `pre`.
pub fn relu_backward(pre: &[f64], grad: &mut [f64]) {
    for (g, p) in grad.iter_mut().zip(pre) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| libm::exp(s - max)).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

/// Weight matrix plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Affine {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self { weight: Matrix::xavier(outputs, inputs, rng), bias: Matrix::zeros(outputs, 1) }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Matrix::zeros(outputs, inputs), bias: Matrix::zeros(outputs, 1) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.weight.matvec(x);
        for (o, b) in out.iter_mut().zip(&self.bias.data) {
            *o += b;
        }
        out
    }

    /// Accumulates parameter gradients into `grads` and the input gradient
    /// into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Affine, dx: &mut [f64]) {
        grads.weight.add_outer(dy, x);
        grads.bias.add_vec(dy);
        self.weight.add_matvec_t(dy, dx);
    }
}
