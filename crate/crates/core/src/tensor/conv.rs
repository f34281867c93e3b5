//! Depthwise 3D convolution with real-valued dilation.
//!
//! Each kernel tap `a` along an axis samples the input at offset
//! `(a - centre) · d`. When that offset is fractional the sample is the
//! linear interpolation of its two lattice neighbours, so a tap reads up to
//! eight voxels (trilinear). Voxels outside the volume read as zero, and the
//! output keeps the input extents.

use super::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: [usize; 3],
}

impl ConvGeometry {
    pub fn volume(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn extents(&self) -> [usize; 3] {
        [self.frames, self.height, self.width]
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.kernel.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::Config(format!(
                "kernel extents must be odd, got {k} in {:?}",
                self.kernel
            )));
        }
        Ok(())
    }
}

pub fn validate_dilation<T: Scalar>(dilation: &[T]) -> Result<()> {
    if dilation.len() != 3 {
        return Err(Error::Shape(format!(
            "dilation needs 3 rates, got {}",
            dilation.len()
        )));
    }
    for &d in dilation {
        if !d.is_finite() || d < T::one() {
            return Err(Error::Parameter(format!(
                "dilation rates must be >= 1, got {:?}",
                dilation
            )));
        }
    }
    Ok(())
}

/// One lattice neighbour of a tap's sampling position.
#[derive(Clone, Copy, Debug)]
struct Corner<T> {
    offset: isize,
    weight: T,
    /// d(weight)/d(sampling offset)
    slope: T,
}

/// Both interpolation neighbours of every tap along one axis.
fn axis_corners<T: Scalar>(extent: usize, rate: T) -> Vec<[Corner<T>; 2]> {
    let centre = (extent / 2) as isize;
    (0..extent as isize)
        .map(|a| {
            let pos = T::of((a - centre) as f64) * rate;
            let base = pos.floor();
            let frac = pos - base;
            let base = base.f64() as isize;
            [
                Corner {
                    offset: base,
                    weight: T::one() - frac,
                    slope: -T::one(),
                },
                Corner {
                    offset: base + 1,
                    weight: frac,
                    slope: T::one(),
                },
            ]
        })
        .collect()
}

/// Output index range `[lo, hi)` for which `o + offset` stays inside `[0, len)`.
fn valid_range(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Iterates the in-bounds part of a shifted 3D window, calling `f(out_index,
/// in_index, run)` once per contiguous row of `run` elements.
fn for_each_row(
    ext: [usize; 3],
    off: [isize; 3],
    mut f: impl FnMut(usize, usize, usize),
) {
    let [nt, nh, nw] = ext;
    let (t0, t1) = valid_range(nt, off[0]);
    let (h0, h1) = valid_range(nh, off[1]);
    let (w0, w1) = valid_range(nw, off[2]);
    if t0 >= t1 || h0 >= h1 || w0 >= w1 {
        return;
    }
    let run = w1 - w0;
    for t in t0..t1 {
        let ti = (t as isize + off[0]) as usize;
        for h in h0..h1 {
            let hi = (h as isize + off[1]) as usize;
            let out = (t * nh + h) * nw + w0;
            let inp = (ti * nh + hi) * nw + (w0 as isize + off[2]) as usize;
            f(out, inp, run);
        }
    }
}

struct Tap<T> {
    index: usize,
    corners: [[Corner<T>; 2]; 3],
    /// tap position relative to the kernel centre, per axis
    rel: [T; 3],
}

fn taps<T: Scalar>(geom: &ConvGeometry, dilation: &[T]) -> Vec<Tap<T>> {
    let [kt, kh, kw] = geom.kernel;
    let ct = axis_corners(kt, dilation[0]);
    let ch = axis_corners(kh, dilation[1]);
    let cw = axis_corners(kw, dilation[2]);
    let mut out = Vec::with_capacity(geom.taps());
    for a in 0..kt {
        for b in 0..kh {
            for e in 0..kw {
                out.push(Tap {
                    index: (a * kh + b) * kw + e,
                    corners: [ct[a], ch[b], cw[e]],
                    rel: [
                        T::of(a as f64 - (kt / 2) as f64),
                        T::of(b as f64 - (kh / 2) as f64),
                        T::of(e as f64 - (kw / 2) as f64),
                    ],
                });
            }
        }
    }
    out
}

/// Forward pass. `x` is `[c, T, h, w]`, `kernel` is `[c, kT, kH, kW]`.
pub fn depthwise_conv3d<T: Scalar>(
    x: &[T],
    kernel: &[T],
    dilation: &[T],
    geom: &ConvGeometry,
) -> Result<Vec<T>> {
    geom.validate()?;
    validate_dilation(dilation)?;
    let vol = geom.volume();
    let ntaps = geom.taps();
    if x.len() != geom.channels * vol || kernel.len() != geom.channels * ntaps {
        return Err(Error::Shape(format!(
            "conv input {} / kernel {} do not match geometry {:?}",
            x.len(),
            kernel.len(),
            geom
        )));
    }
    let taps = taps(geom, dilation);
    let mut y = vec![T::zero(); x.len()];
    for c in 0..geom.channels {
        let xc = &x[c * vol..(c + 1) * vol];
        let yc = &mut y[c * vol..(c + 1) * vol];
        for tap in &taps {
            let kv = kernel[c * ntaps + tap.index];
            if kv == T::zero() {
                continue;
            }
            for_each_corner(tap, false, |off, w, _| {
                let scale = kv * w;
                for_each_row(geom.extents(), off, |o, i, run| {
                    for (yv, &xv) in yc[o..o + run].iter_mut().zip(&xc[i..i + run]) {
                        *yv += scale * xv;
                    }
                });
            });
        }
    }
    Ok(y)
}

/// Visits the corner combinations of a tap. `all = false` skips combinations
/// with zero interpolation weight; `all = true` also yields them because they
/// still carry a derivative with respect to the dilation rate.
fn for_each_corner<T: Scalar>(
    tap: &Tap<T>,
    all: bool,
    mut f: impl FnMut([isize; 3], T, [T; 3]),
) {
    for ct in &tap.corners[0] {
        for ch in &tap.corners[1] {
            for cw in &tap.corners[2] {
                let w = ct.weight * ch.weight * cw.weight;
                if !all && w == T::zero() {
                    continue;
                }
                // partial derivative of w along each axis' sampling offset
                let dw = [
                    ct.slope * ch.weight * cw.weight,
                    ct.weight * ch.slope * cw.weight,
                    ct.weight * ch.weight * cw.slope,
                ];
                f([ct.offset, ch.offset, cw.offset], w, dw);
            }
        }
    }
}

/// Gradients requested from [`depthwise_conv3d_backward`].
pub struct ConvGrads<'a, T> {
    pub input: Option<&'a mut [T]>,
    pub kernel: Option<&'a mut [T]>,
    pub dilation: Option<&'a mut [T]>,
}

/// Backward pass. Where a sampling position lands exactly on the lattice the
/// interpolation slope is taken towards the next-higher voxel, so dilation
/// derivatives at integer rates are one-sided.
pub fn depthwise_conv3d_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    dilation: &[T],
    geom: &ConvGeometry,
    dy: &[T],
    grads: ConvGrads<'_, T>,
) {
    let vol = geom.volume();
    let ntaps = geom.taps();
    let taps = taps(geom, dilation);
    let ConvGrads {
        input: mut dx,
        kernel: mut dk,
        dilation: mut dd,
    } = grads;
    let need_corr = dk.is_some() || dd.is_some();
    for c in 0..geom.channels {
        let xc = &x[c * vol..(c + 1) * vol];
        let dyc = &dy[c * vol..(c + 1) * vol];
        for tap in &taps {
            let kv = kernel[c * ntaps + tap.index];
            for_each_corner(tap, dd.is_some(), |off, w, dw| {
                if let Some(dx) = dx.as_deref_mut() {
                    let scale = kv * w;
                    if scale != T::zero() {
                        let dxc = &mut dx[c * vol..(c + 1) * vol];
                        for_each_row(geom.extents(), off, |o, i, run| {
                            for (d, &g) in dxc[i..i + run].iter_mut().zip(&dyc[o..o + run]) {
                                *d += scale * g;
                            }
                        });
                    }
                }
                if need_corr {
                    let mut corr = T::zero();
                    for_each_row(geom.extents(), off, |o, i, run| {
                        for (&g, &xv) in dyc[o..o + run].iter().zip(&xc[i..i + run]) {
                            corr += g * xv;
                        }
                    });
                    if let Some(dk) = dk.as_deref_mut() {
                        dk[c * ntaps + tap.index] += w * corr;
                    }
                    if let Some(dd) = dd.as_deref_mut() {
                        for axis in 0..3 {
                            dd[axis] += kv * tap.rel[axis] * dw[axis] * corr;
                        }
                    }
                }
            });
        }
    }
}
