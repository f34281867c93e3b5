//! Dense row-major tensors, the kernels the backbone and adapters need, and a
//! tape-based reverse-mode differentiator.
//!
//! Kernels live in [`kernels`] and [`conv`] as pure functions over slices; the
//! [`Graph`] records calls to them together with whatever the backward rule
//! needs. Everything is generic over [`Scalar`] so the same code runs in `f32`
//! for training and `f64` for gradient verification.

pub mod conv;
mod fd;
mod graph;
pub mod kernels;

pub use fd::finite_difference_gradient;
pub use graph::{Activation, Fault, Gradients, Graph, OpKind, Var};

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating point element type. Implemented for `f32` (training) and `f64`
/// (verification).
pub trait Scalar:
    Float + Debug + Default + Send + Sync + Sum + std::ops::AddAssign + std::ops::SubAssign + std::ops::MulAssign + 'static
{
    const NAME: &'static str;
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
    fn erf(self) -> Self;

    fn from_usize(v: usize) -> Self {
        Self::of(v as f64)
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
}


/// Dense row-major tensor. `shape.iter().product() == data.len()` always holds.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Last extent; rows are everything in front of it.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.last_dim()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Bitwise equality of shape and payload.
    pub fn bit_eq(&self, other: &Tensor<T>) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.f64().to_bits() == b.f64().to_bits())
    }
}

/// `a[m×k] · b[k×n]`
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let out = kernels::matmul(&a.data, &b.data, m, k, n);
    ensure_finite(&out, "matmul")?;
    Tensor::new(vec![m, n], out)
}

pub fn softmax_lastdim<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let out = kernels::softmax_rows(&x.data, x.last_dim());
    ensure_finite(&out, "softmax")?;
    Tensor::new(x.shape.clone(), out)
}

pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("layer norm eps must be > 0, got {eps}")));
    }
    if gamma.len() != x.last_dim() || beta.len() != x.last_dim() {
        return Err(Error::Dimension {
            op: "layer_norm",
            lhs: x.shape.clone(),
            rhs: gamma.shape.clone(),
        });
    }
    let (out, _, _) = kernels::layer_norm(&x.data, &gamma.data, &beta.data, T::of(eps));
    ensure_finite(&out, "layer_norm")?;
    Tensor::new(x.shape.clone(), out)
}

pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| kernels::gelu(v)).collect(),
    }
}

/// Depthwise 3D convolution of `x[c×T×h×w]` with `kernel[c×kT×kH×kW]`.
pub fn depthwise_conv3d<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    dilation: [T; 3],
) -> Result<Tensor<T>> {
    if x.ndim() != 4 || kernel.ndim() != 4 || x.shape[0] != kernel.shape[0] {
        return Err(Error::Dimension {
            op: "depthwise_conv3d",
            lhs: x.shape.clone(),
            rhs: kernel.shape.clone(),
        });
    }
    let geom = conv::ConvGeometry {
        channels: x.shape[0],
        frames: x.shape[1],
        height: x.shape[2],
        width: x.shape[3],
        kernel: [kernel.shape[1], kernel.shape[2], kernel.shape[3]],
    };
    let out = conv::depthwise_conv3d(&x.data, &kernel.data, &dilation, &geom)?;
    ensure_finite(&out, "depthwise_conv3d")?;
    Tensor::new(x.shape.clone(), out)
}

pub(crate) fn ensure_finite<T: Scalar>(data: &[T], op: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}
