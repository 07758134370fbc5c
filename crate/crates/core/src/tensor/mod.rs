//! Dense `f64` tensors and the small layer set the encoder needs: 1D/2D
//! convolution, ReLU, max/average pooling, affine maps, concatenation and
//! flattening, with reverse-mode gradients through [`Graph`] and an Adam
//! optimizer.
//!
//! Convolutions carry no bias. Pools use window 2 and stride 2, keep a
//! length-1 axis as is, and drop a trailing odd element.

mod graph;
pub mod kernels;
mod optim;
mod param;

pub use graph::{Gradients, Graph, NodeId};
pub use optim::{AdamConfig, AdamState};
pub use param::{read_checkpoint, write_checkpoint, ParamId, ParamStore, Parameter};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
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

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

pub(crate) fn check_conv1d(x: &[usize], k: &[usize]) -> Result<(usize, usize, usize)> {
    match (x, k) {
        ([cin, len], [cout, kc, 3]) if cin == kc && *len >= 1 => Ok((*cin, *len, *cout)),
        _ => Err(mismatch("conv1d", x, k)),
    }
}

pub(crate) fn check_conv2d(x: &[usize], k: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match (x, k) {
        ([cin, h, w], [cout, kc, 3, 3]) if cin == kc && *h >= 1 && *w >= 1 => {
            Ok((*cin, *h, *w, *cout))
        }
        _ => Err(mismatch("conv2d", x, k)),
    }
}

pub(crate) fn check_affine(x: &[usize], w: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    let (n, din) = match x {
        [din] => (1, *din),
        [n, din] => (*n, *din),
        _ => return Err(mismatch("affine", x, w)),
    };
    match (w, b) {
        ([out, wi], [bo]) if *wi == din && bo == out => Ok((n, din, *out)),
        _ => Err(mismatch("affine", x, w)),
    }
}

/// 1D convolution, stride 1, zero padding 1, no bias.
pub fn conv1d(input: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let (cin, len, cout) = check_conv1d(input.shape(), kernels.shape())?;
    let out = kernels::conv1d_forward(input.data(), cin, len, kernels.data(), cout);
    Tensor::new(vec![cout, len], out)
}

/// 2D convolution with 3x3 kernels, stride 1, zero padding 1, no bias.
pub fn conv2d(input: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let (cin, h, w, cout) = check_conv2d(input.shape(), kernels.shape())?;
    let out = kernels::conv2d_forward(input.data(), cin, h, w, kernels.data(), cout);
    Tensor::new(vec![cout, h, w], out)
}

pub fn maxpool1d(input: &Tensor) -> Result<Tensor> {
    let (c, len) = match input.shape() {
        [c, len] if *len >= 1 => (*c, *len),
        s => return Err(mismatch("maxpool1d", s, &[])),
    };
    let (out, _) = kernels::maxpool1d_forward(input.data(), c, len);
    Tensor::new(vec![c, kernels::pooled_len(len)], out)
}

pub fn avgpool2d(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = match input.shape() {
        [c, h, w] if *h >= 1 && *w >= 1 => (*c, *h, *w),
        s => return Err(mismatch("avgpool2d", s, &[])),
    };
    let out = kernels::avgpool2d_forward(input.data(), c, h, w);
    Tensor::new(vec![c, kernels::pooled_len(h), kernels::pooled_len(w)], out)
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
    }
}

/// `x * W^T + b` for `x` of shape `[in]` or `[n x in]`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, din, dout) = check_affine(x.shape(), w.shape(), b.shape())?;
    let out = kernels::affine_forward(x.data(), n, din, w.data(), dout, b.data());
    let shape = if x.shape().len() == 1 { vec![dout] } else { vec![n, dout] };
    Tensor::new(shape, out)
}

pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    let mut data = a.data.clone();
    data.extend_from_slice(&b.data);
    Tensor::vector(data)
}

pub fn flatten(x: &Tensor) -> Tensor {
    Tensor::vector(x.data.clone())
}
