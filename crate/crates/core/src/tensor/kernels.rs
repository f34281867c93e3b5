//! Slice-level forward and backward kernels.
//!
//! All matrices are row-major. Loops are ordered so the innermost loop walks
//! contiguous memory without a reduction, which lets the compiler vectorize
//! while keeping a fixed summation order (bitwise reproducible results).

use super::Scalar;

/// `c[m×n] = a[m×k] · b[k×n]`
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    matmul_acc(a, b, &mut c, m, k, n);
    c
}

/// `c += a · b`
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// `da += dc · bᵀ`
pub fn matmul_grad_lhs<T: Scalar>(dc: &[T], b: &[T], da: &mut [T], m: usize, k: usize, n: usize) {
    let bt = transpose(b, k, n);
    matmul_acc(dc, &bt, da, m, n, k);
}

/// `db += aᵀ · dc`
pub fn matmul_grad_rhs<T: Scalar>(a: &[T], dc: &[T], db: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (d, &g) in dbrow.iter_mut().zip(dcrow) {
                *d += av * g;
            }
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = x.to_vec();
    for row in out.chunks_mut(cols) {
        softmax_in_place(row);
    }
    out
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// `dx += y ⊙ (dy − ⟨dy, y⟩)` per row.
pub fn softmax_rows_backward<T: Scalar>(y: &[T], dy: &[T], dx: &mut [T], cols: usize) {
    for ((yr, dyr), dxr) in y.chunks(cols).zip(dy.chunks(cols)).zip(dx.chunks_mut(cols)) {
        let dot: T = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
        for ((d, &yv), &g) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d += yv * (g - dot);
        }
    }
}

/// Layer norm over the last axis. Returns output plus per-row mean and
/// reciprocal standard deviation for the backward pass.
pub fn layer_norm<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let cols = gamma.len();
    let rows = x.len() / cols;
    let n = T::from_usize(cols);
    let mut out = vec![T::zero(); x.len()];
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    for (xr, or) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let mean = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rstd = T::one() / (var + eps).sqrt();
        for (((o, &v), &g), &b) in or.iter_mut().zip(xr).zip(gamma).zip(beta) {
            *o = (v - mean) * rstd * g + b;
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (out, means, rstds)
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    means: &[T],
    rstds: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dgamma: Option<&mut [T]>,
    dbeta: Option<&mut [T]>,
) {
    let cols = gamma.len();
    let n = T::from_usize(cols);
    if let Some(dg) = dgamma {
        for (r, (xr, dyr)) in x.chunks(cols).zip(dy.chunks(cols)).enumerate() {
            for ((d, &v), &g) in dg.iter_mut().zip(xr).zip(dyr) {
                *d += (v - means[r]) * rstds[r] * g;
            }
        }
    }
    if let Some(db) = dbeta {
        for dyr in dy.chunks(cols) {
            for (d, &g) in db.iter_mut().zip(dyr) {
                *d += g;
            }
        }
    }
    if let Some(dx) = dx {
        for (r, ((xr, dyr), dxr)) in x
            .chunks(cols)
            .zip(dy.chunks(cols))
            .zip(dx.chunks_mut(cols))
            .enumerate()
        {
            let (mean, rstd) = (means[r], rstds[r]);
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for ((&v, &g), &gm) in xr.iter().zip(dyr).zip(gamma) {
                let gh = g * gm;
                sum_g += gh;
                sum_gx += gh * (v - mean) * rstd;
            }
            for (((d, &v), &g), &gm) in dxr.iter_mut().zip(xr).zip(dyr).zip(gamma) {
                let xhat = (v - mean) * rstd;
                *d += rstd * (g * gm - (sum_g + xhat * sum_gx) / n);
            }
        }
    }
}

fn inv_sqrt2<T: Scalar>() -> T {
    T::of(std::f64::consts::FRAC_1_SQRT_2)
}

/// `x·Φ(x)` with the exact Gaussian CDF.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * inv_sqrt2()).erf())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * inv_sqrt2()).erf());
    let pdf = T::of(0.398_942_280_401_432_7) * (-half * x * x).exp();
    cdf + x * pdf
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Geometry of grouped multi-head attention: `groups` independent sequences of
/// `seq` rows each, `heads` heads over a `width`-wide embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionDims {
    pub groups: usize,
    pub seq: usize,
    pub heads: usize,
    pub width: usize,
}

impl AttentionDims {
    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    fn block(&self) -> usize {
        self.seq * self.seq
    }
}

/// Scaled dot-product attention per group and head. Returns the output and
/// the attention probabilities `[groups·heads·seq·seq]`.
pub fn attention<T: Scalar>(q: &[T], k: &[T], v: &[T], dims: AttentionDims) -> (Vec<T>, Vec<T>) {
    let AttentionDims {
        groups,
        seq,
        heads,
        width,
    } = dims;
    let dh = dims.head_dim();
    let scale = T::one() / T::from_usize(dh).sqrt();
    let mut out = vec![T::zero(); groups * seq * width];
    let mut probs = vec![T::zero(); groups * heads * dims.block()];
    for g in 0..groups {
        let base = g * seq * width;
        for h in 0..heads {
            let off = h * dh;
            let p = &mut probs[(g * heads + h) * dims.block()..][..dims.block()];
            for i in 0..seq {
                let qi = &q[base + i * width + off..][..dh];
                let prow = &mut p[i * seq..(i + 1) * seq];
                for (j, pv) in prow.iter_mut().enumerate() {
                    let kj = &k[base + j * width + off..][..dh];
                    let mut s = T::zero();
                    for (&a, &b) in qi.iter().zip(kj) {
                        s += a * b;
                    }
                    *pv = s * scale;
                }
                softmax_in_place(prow);
                let orow = &mut out[base + i * width + off..][..dh];
                for (j, &pv) in prow.iter().enumerate() {
                    let vj = &v[base + j * width + off..][..dh];
                    for (o, &vv) in orow.iter_mut().zip(vj) {
                        *o += pv * vv;
                    }
                }
            }
        }
    }
    (out, probs)
}

/// Gradients of [`attention`] with respect to q, k and v (accumulated).
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    dims: AttentionDims,
    mut dq: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
    mut dv: Option<&mut [T]>,
) {
    let AttentionDims {
        groups,
        seq,
        heads,
        width,
    } = dims;
    let dh = dims.head_dim();
    let scale = T::one() / T::from_usize(dh).sqrt();
    let mut dp = vec![T::zero(); seq];
    for g in 0..groups {
        let base = g * seq * width;
        for h in 0..heads {
            let off = h * dh;
            let p = &probs[(g * heads + h) * dims.block()..][..dims.block()];
            for i in 0..seq {
                let prow = &p[i * seq..(i + 1) * seq];
                let doi = &dout[base + i * width + off..][..dh];
                // dV_j += p_ij · dO_i ; dP_ij = ⟨dO_i, V_j⟩
                for j in 0..seq {
                    let row_j = base + j * width + off;
                    let vj = &v[row_j..][..dh];
                    let mut s = T::zero();
                    for (&a, &b) in doi.iter().zip(vj) {
                        s += a * b;
                    }
                    dp[j] = s;
                    if let Some(dv) = dv.as_deref_mut() {
                        let pij = prow[j];
                        for (d, &g) in dv[row_j..][..dh].iter_mut().zip(doi) {
                            *d += pij * g;
                        }
                    }
                }
                let dot: T = prow.iter().zip(&dp).map(|(&a, &b)| a * b).sum();
                let qi_row = base + i * width + off;
                for j in 0..seq {
                    let ds = prow[j] * (dp[j] - dot) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    let row_j = base + j * width + off;
                    if let Some(dq) = dq.as_deref_mut() {
                        let kj = &k[row_j..][..dh];
                        for (d, &kv) in dq[qi_row..][..dh].iter_mut().zip(kj) {
                            *d += ds * kv;
                        }
                    }
                    if let Some(dk) = dk.as_deref_mut() {
                        let qi = &q[qi_row..][..dh];
                        for (d, &qv) in dk[row_j..][..dh].iter_mut().zip(qi) {
                            *d += ds * qv;
                        }
                    }
                }
            }
        }
    }
}
