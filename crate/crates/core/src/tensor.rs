//! Dense f64 numerics for the memory network: matrices, softmax,
//! cross-entropy, a named parameter store with gradients, SGD and a
//! finite-difference gradient checker.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("softmax of an empty vector")]
    EmptySoftmax,
    #[error("target index {index} out of range for {len} classes")]
    BadTarget { index: usize, len: usize },
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("duplicate parameter name {0}")]
    DuplicateName(String),
    #[error("no parameter named {0}")]
    UnknownName(String),
}

/// Row-major dense matrix. Vectors are `n x 1` matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, sigma: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, sigma).expect("valid sigma");
        let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `out += scale * self[:, col]`
    #[inline]
    pub fn add_col_to(&self, col: usize, scale: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o += scale * self.data[r * self.cols + col];
        }
    }

    /// `self[:, col] += scale * v`
    #[inline]
    pub fn add_to_col(&mut self, col: usize, scale: f64, v: &[f64]) {
        debug_assert_eq!(v.len(), self.rows);
        for (r, x) in v.iter().enumerate() {
            self.data[r * self.cols + col] += scale * x;
        }
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        self.data.chunks_exact(self.cols).map(|row| dot(row, v)).collect()
    }

    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &s) in self.data.chunks_exact(self.cols).zip(v) {
            axpy(s, row, &mut out);
        }
        out
    }

    /// `self += scale * a b^T`
    pub fn add_outer(&mut self, scale: f64, a: &[f64], b: &[f64]) {
        assert_eq!((a.len(), b.len()), (self.rows, self.cols));
        for (row, &ai) in self.data.chunks_exact_mut(self.cols).zip(a) {
            axpy(scale * ai, b, row);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn softmax(scores: &[f64]) -> Result<Vec<f64>, TensorError> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if scores.is_empty() {
        return Err(TensorError::EmptySoftmax);
    }
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// Backward through softmax: given `p = softmax(s)` and `dL/dp`, returns `dL/ds`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner = dot(p, dp);
    p.iter().zip(dp).map(|(pi, di)| pi * (di - inner)).collect()
}

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    /// Gradient with respect to the pre-softmax scores: `p - onehot(target)`.
    pub grad: Vec<f64>,
    /// Set when the target probability was below [`PROB_FLOOR`].
    pub clamped: bool,
}

pub fn cross_entropy(prob: &[f64], target: usize) -> Result<CrossEntropy, TensorError> {
    if target >= prob.len() {
        return Err(TensorError::BadTarget { index: target, len: prob.len() });
    }
    let pt = prob[target];
    let clamped = pt < PROB_FLOOR;
    let loss = -pt.max(PROB_FLOOR).ln();
    let mut grad = prob.to_vec();
    grad[target] -= 1.0;
    Ok(CrossEntropy { loss, grad, clamped })
}

/// Cross-entropy of `softmax(scores)` computed in log space, so the loss
/// stays exact (and consistent with the gradient) when the target
/// probability underflows. `clamped` still reports such targets.
pub fn softmax_cross_entropy(scores: &[f64], target: usize) -> Result<CrossEntropy, TensorError> {
    let prob = softmax(scores)?;
    let mut ce = cross_entropy(&prob, target)?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    ce.loss = lse - scores[target];
    Ok(ce)
}

/// Handle to a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMatrix {
    pub name: String,
    pub value: Matrix,
}

/// Named parameters, each with a same-shaped gradient accumulator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<NamedMatrix>", into = "Vec<NamedMatrix>")]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    grads: Vec<Matrix>,
}

impl From<Vec<NamedMatrix>> for ParamStore {
    fn from(params: Vec<NamedMatrix>) -> Self {
        let mut store = ParamStore::new();
        for p in params {
            let (r, c) = p.value.shape();
            store.names.push(p.name);
            store.values.push(p.value);
            store.grads.push(Matrix::zeros(r, c));
        }
        store
    }
}

impl From<ParamStore> for Vec<NamedMatrix> {
    fn from(store: ParamStore) -> Self {
        store.names.into_iter().zip(store.values).map(|(name, value)| NamedMatrix { name, value }).collect()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Matrix) -> Result<ParamId, TensorError> {
        if self.id(name).is_some() {
            return Err(TensorError::DuplicateName(name.to_string()));
        }
        let (r, c) = value.shape();
        self.names.push(name.to_string());
        self.values.push(value);
        self.grads.push(Matrix::zeros(r, c));
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId, TensorError> {
        self.id(name).ok_or_else(|| TensorError::UnknownName(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.grads[id.0]
    }

    /// All values for reading alongside all gradient buffers for writing.
    pub fn split_mut(&mut self) -> (&[Matrix], &mut [Matrix]) {
        (&self.values, &mut self.grads)
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.data.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Matrix::sq_norm).sum::<f64>().sqrt()
    }

    /// Rescales all gradients so their joint L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let s = max_norm / norm;
            for g in &mut self.grads {
                g.data.iter_mut().for_each(|x| *x *= s);
            }
        }
    }

    /// `p <- p - lr * grad` for every parameter, then zeroes the gradients.
    /// Nothing is updated if any gradient is non-finite.
    pub fn sgd_step(&mut self, learning_rate: f64) -> Result<(), TensorError> {
        if let Some(bad) = self.grads.iter().position(|g| !g.is_finite()) {
            return Err(TensorError::NonFiniteGradient(self.names[bad].clone()));
        }
        for (v, g) in self.values.iter_mut().zip(&mut self.grads) {
            axpy(-learning_rate, &g.data, &mut v.data);
            g.fill(0.0);
        }
        Ok(())
    }

    /// Addresses scalar `k` of the flattened store.
    fn locate(&self, mut k: usize) -> (usize, usize) {
        for (i, v) in self.values.iter().enumerate() {
            if k < v.data.len() {
                return (i, k);
            }
            k -= v.data.len();
        }
        panic!("scalar index out of range");
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter name and flat offset of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Compares analytic gradients with central differences on up to
/// `samples` randomly chosen coordinates (all of them if fewer exist).
///
/// `loss_and_grad` must zero the gradients, accumulate the analytic
/// gradient into `params` and return the loss.
pub fn gradcheck<F, R>(
    params: &mut ParamStore,
    mut loss_and_grad: F,
    eps: f64,
    samples: usize,
    rng: &mut R,
) -> GradcheckReport
where
    F: FnMut(&mut ParamStore) -> f64,
    R: Rng + ?Sized,
{
    assert!(eps > 0.0 && eps <= 1e-3, "eps must lie in (0, 1e-3]");
    loss_and_grad(params);
    let analytic: Vec<Vec<f64>> = params.grads.iter().map(|g| g.data.clone()).collect();
    let total = params.num_scalars();
    let picks: Vec<usize> =
        if samples >= total { (0..total).collect() } else { sample(rng, total, samples).into_vec() };

    let mut report = GradcheckReport { max_rel_error: 0.0, checked: 0, worst: None };
    for k in picks {
        let (pi, off) = params.locate(k);
        let orig = params.values[pi].data[off];
        params.values[pi].data[off] = orig + eps;
        let plus = loss_and_grad(params);
        params.values[pi].data[off] = orig - eps;
        let minus = loss_and_grad(params);
        params.values[pi].data[off] = orig;

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[pi][off];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((params.names[pi].clone(), off));
        }
    }
    // leave the analytic gradient in place
    loss_and_grad(params);
    report
}
