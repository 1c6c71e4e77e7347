//! Dense f64 tensors and a reverse-mode gradient tape.

pub mod kernels;
mod params;
mod tape;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use params::{Gradients, ParamId, Params};
pub use tape::{CrossEntropyOut, Span, Tape, Var};

/// Row-major dense array. `shape.iter().product() == data.len()` always holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() && data.len() == 1 {
            return Ok(Self { shape, data });
        }
        if shape.iter().any(|&d| d == 0) || numel != data.len() {
            return Err(Error::Shape { op: "tensor", lhs: shape, rhs: vec![data.len()] });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    /// 2-D tensor from nested rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Param("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Size of the trailing dimension (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Product of all leading dimensions.
    pub fn rows(&self) -> usize {
        self.numel() / self.cols()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>().max(1), data.len());
        Self { shape, data }
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            _ => Err(Error::Shape { op, lhs: self.shape.clone(), rhs: vec![] }),
        }
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(Error::Shape { op: "matmul", lhs: self.shape.clone(), rhs: rhs.shape.clone() });
        }
        Ok(Self::from_parts(vec![m, n], kernels::matmul(&self.data, &rhs.data, m, k, n)))
    }

    /// Softmax along `axis`, with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = self.axis_split(axis)?;
        let mut out = self.data.clone();
        let mut buf = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = out[(o * len + j) * inner + i];
                }
                kernels::softmax_in_place(&mut buf);
                for (j, b) in buf.iter().enumerate() {
                    out[(o * len + j) * inner + i] = *b;
                }
            }
        }
        Ok(Self::from_parts(self.shape.clone(), out))
    }

    fn axis_split(&self, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.shape.len() {
            return Err(Error::Param(alloc::format!("axis {axis} invalid for shape {:?}", self.shape)));
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }

    /// Layer normalisation over the trailing dimension.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let d = self.cols();
        if gamma.numel() != d || beta.numel() != d {
            return Err(Error::Shape { op: "layer_norm", lhs: self.shape.clone(), rhs: gamma.shape.clone() });
        }
        let out = kernels::layer_norm(&self.data, &gamma.data, &beta.data, eps);
        Ok(Self::from_parts(self.shape.clone(), out.y))
    }

    pub fn gelu(&self) -> Tensor {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&x| kernels::gelu(x)).collect())
    }

    /// Inverted dropout. Identity when `training` is false or `p == 0`.
    pub fn dropout(&self, p: f64, training: bool, rng: &mut Rng) -> Result<Tensor> {
        let mask = dropout_mask(self.numel(), p, training, rng)?;
        Ok(match mask {
            None => self.clone(),
            Some(mask) => Self::from_parts(
                self.shape.clone(),
                self.data.iter().zip(&mask).map(|(x, m)| x * m).collect(),
            ),
        })
    }
}

pub(crate) fn dropout_mask(n: usize, p: f64, training: bool, rng: &mut Rng) -> Result<Option<Vec<f64>>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Param(alloc::format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(None);
    }
    let scale = 1.0 / (1.0 - p);
    Ok(Some((0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { scale }).collect()))
}
