use std::borrow::Cow;
use std::sync::Arc;

use super::conv::{self, ConvGeometry, ConvGrads};
use super::kernels::{self, AttentionDims};
use super::{ensure_finite, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Gelu => kernels::gelu(x),
            Activation::Relu => x.max(T::zero()),
            Activation::Identity => x,
        }
    }

    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Gelu => kernels::gelu_grad(x),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

/// Operation kinds, used to address a backward rule for fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Matmul,
    Add,
    AddBias,
    Mul,
    Affine,
    Sum,
    MeanRows,
    Softmax,
    LayerNorm,
    Activation,
    Softplus,
    Conv3d,
    Attention,
    Gather,
    Concat,
    Reshape,
    CrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 17] = [
        OpKind::Matmul,
        OpKind::Add,
        OpKind::AddBias,
        OpKind::Mul,
        OpKind::Affine,
        OpKind::Sum,
        OpKind::MeanRows,
        OpKind::Softmax,
        OpKind::LayerNorm,
        OpKind::Activation,
        OpKind::Softplus,
        OpKind::Conv3d,
        OpKind::Attention,
        OpKind::Gather,
        OpKind::Concat,
        OpKind::Reshape,
        OpKind::CrossEntropy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Matmul => "matmul",
            OpKind::Add => "add",
            OpKind::AddBias => "add_bias",
            OpKind::Mul => "mul",
            OpKind::Affine => "affine",
            OpKind::Sum => "sum",
            OpKind::MeanRows => "mean_rows",
            OpKind::Softmax => "softmax",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Activation => "activation",
            OpKind::Softplus => "softplus",
            OpKind::Conv3d => "conv3d",
            OpKind::Attention => "attention",
            OpKind::Gather => "gather",
            OpKind::Concat => "concat",
            OpKind::Reshape => "reshape",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }

    pub fn parse(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.as_str() == name)
    }
}

/// Deliberately scales the input gradients produced by one backward rule.
/// Only meant for negative controls of gradient checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fault {
    pub op: OpKind,
    pub factor: f64,
}

enum Op<T> {
    Leaf,
    Matmul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Mul { a: Var, b: Var },
    Affine { x: Var, scale: T },
    Sum { x: Var },
    MeanRows { x: Var, rows: usize },
    Softmax { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, means: Vec<T>, rstds: Vec<T> },
    Activation { x: Var, kind: Activation },
    Softplus { x: Var },
    Conv3d { x: Var, kernel: Var, dilation: Var, geom: ConvGeometry },
    Attention { q: Var, k: Var, v: Var, dims: AttentionDims, probs: Vec<T> },
    Gather { x: Var, index: Arc<[usize]> },
    Concat { parts: Vec<Var> },
    Reshape { x: Var },
    CrossEntropy { logits: Var, label: usize, probs: Vec<T> },
}

impl<T> Op<T> {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::Matmul { .. } => OpKind::Matmul,
            Op::Add { .. } => OpKind::Add,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::Mul { .. } => OpKind::Mul,
            Op::Affine { .. } => OpKind::Affine,
            Op::Sum { .. } => OpKind::Sum,
            Op::MeanRows { .. } => OpKind::MeanRows,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Activation { .. } => OpKind::Activation,
            Op::Softplus { .. } => OpKind::Softplus,
            Op::Conv3d { .. } => OpKind::Conv3d,
            Op::Attention { .. } => OpKind::Attention,
            Op::Gather { .. } => OpKind::Gather,
            Op::Concat { .. } => OpKind::Concat,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        })
    }
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation so that [`Graph::backward`] can replay it
/// in reverse.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order. Nodes whose inputs carry no gradient are stored as
/// constants and keep no saved activations. Leaves may borrow their values
/// (model parameters) for the lifetime `'a`.
pub struct Graph<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    fault: Option<Fault>,
    marks: Vec<(&'static str, Var)>,
}

impl<'a, T: Scalar> Default for Graph<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of the leaves that required them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::Dimension {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok(())
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            fault: None,
            marks: Vec::new(),
        }
    }

    pub fn set_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    /// Tags an intermediate value so callers can read it after the forward pass.
    pub fn mark(&mut self, label: &'static str, v: Var) {
        self.marks.push((label, v));
    }

    /// Values tagged with `label`, in tagging order.
    pub fn marked(&self, label: &str) -> Vec<&Tensor<T>> {
        self.marks
            .iter()
            .filter(|(l, _)| *l == label)
            .map(|&(_, v)| self.value(v))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_raw(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    pub fn leaf_ref(&mut self, value: &'a Tensor<T>, requires_grad: bool) -> Var {
        self.push_raw(Cow::Borrowed(value), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push_raw(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: &[Var],
        op: Op<T>,
    ) -> Result<Var> {
        ensure_finite(&data, name)?;
        let value = Tensor::new(shape, data)?;
        let rg = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        let op = if rg { op } else { Op::Leaf };
        Ok(self.push_raw(Cow::Owned(value), op, rg))
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.data(a), self.data(b), m, k, n);
        self.push("matmul", vec![m, n], out, &[a, b], Op::Matmul { a, b, m, k, n })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let out: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push("add", shape, out, &[a, b], Op::Add { a, b })
    }

    /// Adds `bias[n]` to every row of `x[.., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.value(bias).len() != n {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.data(bias);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let shape = self.shape(x).to_vec();
        self.push("add_bias", shape, out, &[x, bias], Op::AddBias { x, bias })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let out: Vec<T> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push("mul", shape, out, &[a, b], Op::Mul { a, b })
    }

    /// `x·scale + shift`
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var> {
        let out: Vec<T> = self.data(x).iter().map(|&v| v * scale + shift).collect();
        let shape = self.shape(x).to_vec();
        self.push("affine", shape, out, &[x], Op::Affine { x, scale })
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.affine(x, c, T::zero())
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.data(x).iter().copied().sum();
        self.push("sum", vec![1], vec![s], &[x], Op::Sum { x })
    }

    /// Mean over the leading axis of `x[r×c]`, giving `[c]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.ndim() != 2 {
            return Err(Error::Shape(format!(
                "mean_rows expects a matrix, got {:?}",
                t.shape()
            )));
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let mut acc = vec![T::zero(); cols];
        for row in t.data().chunks(cols) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let inv = T::one() / T::from_usize(rows);
        for a in acc.iter_mut() {
            *a *= inv;
        }
        self.push("mean_rows", vec![cols], acc, &[x], Op::MeanRows { x, rows })
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let cols = t.last_dim();
        let out = kernels::softmax_rows(t.data(), cols);
        let shape = t.shape().to_vec();
        self.push("softmax", shape, out, &[x], Op::Softmax { x })
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Parameter(format!("layer norm eps must be > 0, got {eps}")));
        }
        let cols = self.value(x).last_dim();
        if self.value(gamma).len() != cols || self.value(beta).len() != cols {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let (out, means, rstds) = kernels::layer_norm(
            self.data(x),
            self.data(gamma),
            self.data(beta),
            T::of(eps),
        );
        let shape = self.shape(x).to_vec();
        self.push(
            "layer_norm",
            shape,
            out,
            &[x, gamma, beta],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                means,
                rstds,
            },
        )
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        if kind == Activation::Identity {
            return Ok(x);
        }
        let out: Vec<T> = self.data(x).iter().map(|&v| kind.apply(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push("activation", shape, out, &[x], Op::Activation { x, kind })
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let out: Vec<T> = self.data(x).iter().map(|&v| kernels::softplus(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push("softplus", shape, out, &[x], Op::Softplus { x })
    }

    /// Depthwise 3D convolution of `x[c×T×h×w]` with `kernel[c×kT×kH×kW]` at
    /// real `dilation[3]` rates.
    pub fn depthwise_conv3d(&mut self, x: Var, kernel: Var, dilation: Var) -> Result<Var> {
        let (sx, sk) = (self.shape(x), self.shape(kernel));
        if sx.len() != 4 || sk.len() != 4 || sx[0] != sk[0] {
            return Err(Error::Dimension {
                op: "depthwise_conv3d",
                lhs: sx.to_vec(),
                rhs: sk.to_vec(),
            });
        }
        let geom = ConvGeometry {
            channels: sx[0],
            frames: sx[1],
            height: sx[2],
            width: sx[3],
            kernel: [sk[1], sk[2], sk[3]],
        };
        let out = conv::depthwise_conv3d(self.data(x), self.data(kernel), self.data(dilation), &geom)?;
        let shape = sx.to_vec();
        self.push(
            "depthwise_conv3d",
            shape,
            out,
            &[x, kernel, dilation],
            Op::Conv3d {
                x,
                kernel,
                dilation,
                geom,
            },
        )
    }

    /// Multi-head scaled dot-product attention over `q, k, v[(groups·seq)×width]`,
    /// each group of `seq` consecutive rows attending only within itself.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, seq: usize) -> Result<Var> {
        let sq = self.shape(q).to_vec();
        same_shape("attention", &sq, self.shape(k))?;
        same_shape("attention", &sq, self.shape(v))?;
        if sq.len() != 2 || seq == 0 || !sq[0].is_multiple_of(seq) {
            return Err(Error::Shape(format!(
                "attention input {sq:?} is not a whole number of {seq}-token sequences"
            )));
        }
        if heads == 0 || !sq[1].is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "width {} is not divisible by {heads} heads",
                sq[1]
            )));
        }
        let dims = AttentionDims {
            groups: sq[0] / seq,
            seq,
            heads,
            width: sq[1],
        };
        let (out, probs) = kernels::attention(self.data(q), self.data(k), self.data(v), dims);
        self.push(
            "attention",
            sq,
            out,
            &[q, k, v],
            Op::Attention { q, k, v, dims, probs },
        )
    }

    /// `out.flat[i] = x.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, shape: Vec<usize>, index: Arc<[usize]>) -> Result<Var> {
        let src = self.data(x);
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::Shape(format!(
                "gather of {} indices into shape {shape:?}",
                index.len()
            )));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(Error::Shape(format!(
                "gather index {bad} out of range for {} elements",
                src.len()
            )));
        }
        let out: Vec<T> = index.iter().map(|&i| src[i]).collect();
        self.push("gather", shape, out, &[x], Op::Gather { x, index })
    }

    /// Flat concatenation of all parts into a vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.data(p));
        }
        let n = out.len();
        self.push(
            "concat",
            vec![n],
            out,
            parts,
            Op::Concat {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let out = self.data(x).to_vec();
        self.push("reshape", shape, out, &[x], Op::Reshape { x })
    }

    /// Softmax cross-entropy of a single logit vector against `label`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let l = self.data(logits);
        if label >= l.len() {
            return Err(Error::Usage(format!(
                "label {label} out of range for {} classes",
                l.len()
            )));
        }
        let probs = kernels::softmax_rows(l, l.len());
        let max = l.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + l.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let loss = lse - l[label];
        self.push(
            "cross_entropy",
            vec![1],
            vec![loss],
            &[logits],
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
        )
    }

    /// Reverse-mode sweep from a scalar `loss`. Consumes the graph and
    /// returns summed gradients for every leaf that requested one.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[id].take() else { continue };
            let mut contribs = self.rule(id, &dy);
            if let (Some(f), Some(kind)) = (self.fault, node.op.kind()) {
                if f.op == kind {
                    let s = T::of(f.factor);
                    for (_, g) in contribs.iter_mut() {
                        g.iter_mut().for_each(|v| *v *= s);
                    }
                }
            }
            for (v, g) in contribs {
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot => *slot = Some(g),
                }
            }
        }
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, g) {
                (Op::Leaf, Some(g)) if node.requires_grad => {
                    Tensor::new(node.value.shape().to_vec(), g).ok()
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn zeros_for(&self, v: Var) -> Vec<T> {
        vec![T::zero(); self.nodes[v.0].value.len()]
    }

    /// Input-gradient contributions of node `id` given its output gradient.
    fn rule(&self, id: usize, dy: &[T]) -> Vec<(Var, Vec<T>)> {
        let mut out = Vec::new();
        match &self.nodes[id].op {
            Op::Leaf => {}
            &Op::Matmul { a, b, m, k, n } => {
                if self.wants(a) {
                    let mut da = self.zeros_for(a);
                    kernels::matmul_grad_lhs(dy, self.data(b), &mut da, m, k, n);
                    out.push((a, da));
                }
                if self.wants(b) {
                    let mut db = self.zeros_for(b);
                    kernels::matmul_grad_rhs(self.data(a), dy, &mut db, m, k, n);
                    out.push((b, db));
                }
            }
            &Op::Add { a, b } => {
                for v in [a, b] {
                    if self.wants(v) {
                        out.push((v, dy.to_vec()));
                    }
                }
            }
            &Op::AddBias { x, bias } => {
                if self.wants(x) {
                    out.push((x, dy.to_vec()));
                }
                if self.wants(bias) {
                    let mut db = self.zeros_for(bias);
                    let n = db.len();
                    for row in dy.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                    }
                    out.push((bias, db));
                }
            }
            &Op::Mul { a, b } => {
                let (da, db) = (self.data(a), self.data(b));
                if self.wants(a) {
                    out.push((a, dy.iter().zip(db).map(|(&g, &v)| g * v).collect()));
                }
                if self.wants(b) {
                    out.push((b, dy.iter().zip(da).map(|(&g, &v)| g * v).collect()));
                }
            }
            &Op::Affine { x, scale } => {
                out.push((x, dy.iter().map(|&g| g * scale).collect()));
            }
            &Op::Sum { x } => {
                out.push((x, vec![dy[0]; self.nodes[x.0].value.len()]));
            }
            &Op::MeanRows { x, rows } => {
                let inv = T::one() / T::from_usize(rows);
                let mut dx = Vec::with_capacity(rows * dy.len());
                for _ in 0..rows {
                    dx.extend(dy.iter().map(|&g| g * inv));
                }
                out.push((x, dx));
            }
            &Op::Softmax { x } => {
                let y = self.nodes[id].value.data();
                let cols = self.nodes[id].value.last_dim();
                let mut dx = self.zeros_for(x);
                kernels::softmax_rows_backward(y, dy, &mut dx, cols);
                out.push((x, dx));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                means,
                rstds,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let mut dx = self.wants(x).then(|| self.zeros_for(x));
                let mut dg = self.wants(gamma).then(|| self.zeros_for(gamma));
                let mut db = self.wants(beta).then(|| self.zeros_for(beta));
                kernels::layer_norm_backward(
                    self.data(x),
                    self.data(gamma),
                    means,
                    rstds,
                    dy,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    db.as_deref_mut(),
                );
                out.extend(
                    [(x, dx), (gamma, dg), (beta, db)]
                        .into_iter()
                        .filter_map(|(v, g)| g.map(|g| (v, g))),
                );
            }
            &Op::Activation { x, kind } => {
                let xs = self.data(x);
                out.push((
                    x,
                    dy.iter().zip(xs).map(|(&g, &v)| g * kind.derivative(v)).collect(),
                ));
            }
            &Op::Softplus { x } => {
                let xs = self.data(x);
                out.push((
                    x,
                    dy.iter()
                        .zip(xs)
                        .map(|(&g, &v)| g * kernels::sigmoid(v))
                        .collect(),
                ));
            }
            &Op::Conv3d {
                x,
                kernel,
                dilation,
                geom,
            } => {
                let mut dx = self.wants(x).then(|| self.zeros_for(x));
                let mut dk = self.wants(kernel).then(|| self.zeros_for(kernel));
                let mut dd = self.wants(dilation).then(|| self.zeros_for(dilation));
                conv::depthwise_conv3d_backward(
                    self.data(x),
                    self.data(kernel),
                    self.data(dilation),
                    &geom,
                    dy,
                    ConvGrads {
                        input: dx.as_deref_mut(),
                        kernel: dk.as_deref_mut(),
                        dilation: dd.as_deref_mut(),
                    },
                );
                out.extend(
                    [(x, dx), (kernel, dk), (dilation, dd)]
                        .into_iter()
                        .filter_map(|(v, g)| g.map(|g| (v, g))),
                );
            }
            Op::Attention { q, k, v, dims, probs } => {
                let (q, k, v) = (*q, *k, *v);
                let mut dq = self.wants(q).then(|| self.zeros_for(q));
                let mut dk = self.wants(k).then(|| self.zeros_for(k));
                let mut dv = self.wants(v).then(|| self.zeros_for(v));
                kernels::attention_backward(
                    self.data(q),
                    self.data(k),
                    self.data(v),
                    probs,
                    dy,
                    *dims,
                    dq.as_deref_mut(),
                    dk.as_deref_mut(),
                    dv.as_deref_mut(),
                );
                out.extend(
                    [(q, dq), (k, dk), (v, dv)]
                        .into_iter()
                        .filter_map(|(var, g)| g.map(|g| (var, g))),
                );
            }
            Op::Gather { x, index } => {
                let mut dx = self.zeros_for(*x);
                for (&i, &g) in index.iter().zip(dy) {
                    dx[i] += g;
                }
                out.push((*x, dx));
            }
            Op::Concat { parts } => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    if self.wants(p) {
                        out.push((p, dy[off..off + len].to_vec()));
                    }
                    off += len;
                }
            }
            &Op::Reshape { x } => out.push((x, dy.to_vec())),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                let mut dl: Vec<T> = probs.iter().map(|&p| p * dy[0]).collect();
                dl[*label] -= dy[0];
                out.push((*logits, dl));
            }
        }
        out
    }
}
