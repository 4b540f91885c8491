//! Forward and backward kernels: conv2d, group norm, ReLU, bilinear resize
//! and elementwise add.

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};
use rayon::prelude::*;
use std::borrow::Cow;

/// Output rows handled by one GEMM work item. Fixed so that partitioning,
/// and therefore every accumulation order, is independent of thread count.
const ROW_BLOCK: usize = 32;

/// `floor((len + 2·pad − k) / stride) + 1`, or `None` when that is not positive.
pub fn conv_out_size(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn new(x: Shape, weight: Shape, stride: usize, pad: usize) -> Result<Self> {
        if weight.h != weight.w {
            return Err(Error::invalid("conv2d", "kernel must be square"));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be at least 1"));
        }
        if x.c != weight.c {
            return Err(Error::ChannelMismatch {
                op: "conv2d",
                expected: weight.c,
                got: x.c,
            });
        }
        let k = weight.h;
        let oh = conv_out_size(x.h, k, stride, pad).ok_or(Error::EmptyOutput { op: "conv2d" })?;
        let ow = conv_out_size(x.w, k, stride, pad).ok_or(Error::EmptyOutput { op: "conv2d" })?;
        Ok(ConvGeometry {
            n: x.n,
            c: x.c,
            h: x.h,
            w: x.w,
            o: weight.n,
            k,
            stride,
            pad,
            oh,
            ow,
        })
    }

    pub fn kdim(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    pub fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.o, self.oh, self.ow)
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let plane = g.out_plane();
    let (k, h, w) = (g.k, g.h as isize, g.w as isize);
    cols.par_chunks_mut(k * k * plane).enumerate().for_each(|(c, block)| {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut block[(ky * k + kx) * plane..(ky * k + kx + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= h {
                        row.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= w {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    });
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let plane = g.out_plane();
    let (k, h, w) = (g.k, g.h as isize, g.w as isize);
    dx.par_chunks_mut(g.h * g.w).enumerate().for_each(|(c, dst)| {
        dst.fill(T::zero());
        let block = &cols[c * k * k * plane..(c + 1) * k * k * plane];
        for ky in 0..k {
            for kx in 0..k {
                let src = &block[(ky * k + kx) * plane..(ky * k + kx + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w {
                            row[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    });
}

fn columns<'a, T: Scalar>(x: &'a [T], g: &ConvGeometry) -> Cow<'a, [T]> {
    if g.pointwise() {
        Cow::Borrowed(x)
    } else {
        let mut cols = vec![T::zero(); g.kdim() * g.out_plane()];
        im2col(x, g, &mut cols);
        Cow::Owned(cols)
    }
}

/// Cross-correlation of `x` with `weight` `[out_c, in_c, k, k]`, zero padding.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), weight.shape(), stride, pad)?;
    if let Some(b) = bias {
        if b.numel() != g.o {
            return Err(Error::ChannelMismatch {
                op: "conv2d bias",
                expected: g.o,
                got: b.numel(),
            });
        }
    }
    let (plane, kdim) = (g.out_plane(), g.kdim());
    let in_per = g.c * g.h * g.w;
    let mut out = Tensor::zeros(g.out_shape());
    let (xd, wd) = (x.data(), weight.data());
    let bd = bias.map(|b| b.data());
    out.data_mut()
        .par_chunks_mut(g.o * plane)
        .enumerate()
        .for_each(|(n, out_n)| {
            let cols = columns(&xd[n * in_per..(n + 1) * in_per], &g);
            out_n
                .par_chunks_mut(ROW_BLOCK * plane)
                .enumerate()
                .for_each(|(blk, out_blk)| {
                    let rows = out_blk.len() / plane;
                    let o0 = blk * ROW_BLOCK;
                    T::gemm(
                        rows,
                        kdim,
                        plane,
                        T::one(),
                        (&wd[o0 * kdim..], kdim, 1),
                        (&cols, plane, 1),
                        T::zero(),
                        (out_blk, plane, 1),
                    );
                    if let Some(bd) = bd {
                        for (r, row) in out_blk.chunks_mut(plane).enumerate() {
                            let bv = bd[o0 + r];
                            row.iter_mut().for_each(|v| *v += bv);
                        }
                    }
                });
        });
    Ok(out)
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    with_bias: bool,
    stride: usize,
    pad: usize,
    dy: &Tensor<T>,
    need_dx: bool,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(x.shape(), weight.shape(), stride, pad)?;
    if dy.shape() != g.out_shape() {
        return Err(Error::ShapeMismatch {
            op: "conv2d backward",
            lhs: g.out_shape(),
            rhs: dy.shape(),
        });
    }
    let (plane, kdim) = (g.out_plane(), g.kdim());
    let in_per = g.c * g.h * g.w;
    let out_per = g.o * plane;
    let (xd, wd, dyd) = (x.data(), weight.data(), dy.data());

    let cols: Vec<Cow<[T]>> = (0..g.n)
        .into_par_iter()
        .map(|n| columns(&xd[n * in_per..(n + 1) * in_per], &g))
        .collect();

    let mut dw = Tensor::zeros(weight.shape());
    dw.data_mut()
        .par_chunks_mut(ROW_BLOCK * kdim)
        .enumerate()
        .for_each(|(blk, dw_blk)| {
            let rows = dw_blk.len() / kdim;
            let o0 = blk * ROW_BLOCK;
            for (n, cols_n) in cols.iter().enumerate() {
                let beta = if n == 0 { T::zero() } else { T::one() };
                T::gemm(
                    rows,
                    plane,
                    kdim,
                    T::one(),
                    (&dyd[n * out_per + o0 * plane..], plane, 1),
                    (cols_n, 1, plane),
                    beta,
                    (dw_blk, kdim, 1),
                );
            }
        });

    let db = with_bias.then(|| {
        let sums: Vec<T> = (0..g.o)
            .into_par_iter()
            .map(|o| {
                let mut acc = T::zero();
                for n in 0..g.n {
                    let row = &dyd[n * out_per + o * plane..n * out_per + (o + 1) * plane];
                    for &v in row {
                        acc += v;
                    }
                }
                acc
            })
            .collect();
        Tensor::from_vec(Shape::vector(g.o), sums).expect("bias gradient length")
    });

    let dx = need_dx.then(|| {
        let mut dx = Tensor::zeros(x.shape());
        dx.data_mut().par_chunks_mut(in_per).enumerate().for_each(|(n, dx_n)| {
            let dy_n = &dyd[n * out_per..(n + 1) * out_per];
            if g.pointwise() {
                weight_transpose_times(wd, dy_n, &g, dx_n);
            } else {
                let mut dcols = vec![T::zero(); kdim * plane];
                weight_transpose_times(wd, dy_n, &g, &mut dcols);
                col2im(&dcols, &g, dx_n);
            }
        });
        dx
    });

    Ok(ConvGrads { dx, dw, db })
}

/// `dcols = Wᵀ · dy` for one sample, partitioned over fixed row blocks.
fn weight_transpose_times<T: Scalar>(wd: &[T], dy_n: &[T], g: &ConvGeometry, dcols: &mut [T]) {
    let (plane, kdim) = (g.out_plane(), g.kdim());
    dcols
        .par_chunks_mut(ROW_BLOCK * plane)
        .enumerate()
        .for_each(|(blk, dc)| {
            let rows = dc.len() / plane;
            T::gemm(
                rows,
                g.o,
                plane,
                T::one(),
                (&wd[blk * ROW_BLOCK..], 1, kdim),
                (dy_n, plane, 1),
                T::zero(),
                (dc, plane, 1),
            );
        });
}

/// Per `(sample, group)` mean and reciprocal standard deviation.
#[derive(Clone, Debug)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

fn check_group_norm<T: Scalar>(x: Shape, groups: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if groups == 0 || !x.c.is_multiple_of(groups) {
        return Err(Error::invalid(
            "group_norm",
            format!("{} channels not divisible into {groups} groups", x.c),
        ));
    }
    for (what, t) in [("gamma", gamma), ("beta", beta)] {
        if t.numel() != x.c {
            return Err(Error::invalid(
                "group_norm",
                format!("{what} has {} entries for {} channels", t.numel(), x.c),
            ));
        }
    }
    Ok(())
}

/// Group normalization; statistics are accumulated in `f64` with a
/// two-pass mean/variance per group.
pub fn group_norm<T: Scalar>(
    x: &Tensor<T>,
    groups: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, NormStats)> {
    let s = x.shape();
    check_group_norm(s, groups, gamma, beta)?;
    let cpg = s.c / groups;
    let gsize = cpg * s.plane();
    let stats: Vec<(f64, f64)> = x
        .data()
        .par_chunks(gsize)
        .map(|chunk| {
            let m = chunk.len() as f64;
            let mean = chunk.iter().map(|v| v.f64()).sum::<f64>() / m;
            let var = chunk
                .iter()
                .map(|v| {
                    let d = v.f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / m;
            (mean, 1.0 / (var + eps).sqrt())
        })
        .collect();
    let mut out = Tensor::zeros(s);
    let (gd, bd) = (gamma.data(), beta.data());
    out.data_mut()
        .par_chunks_mut(gsize)
        .zip(x.data().par_chunks(gsize))
        .enumerate()
        .for_each(|(idx, (dst, src))| {
            let (mean, rstd) = stats[idx];
            let c0 = (idx % groups) * cpg;
            for (ci, (d, sp)) in dst.chunks_mut(s.plane()).zip(src.chunks(s.plane())).enumerate() {
                let gm = gd[c0 + ci].f64();
                let bt = bd[c0 + ci].f64();
                for (o, &v) in d.iter_mut().zip(sp) {
                    *o = T::of((v.f64() - mean) * rstd * gm + bt);
                }
            }
        });
    let (mean, rstd) = stats.into_iter().unzip();
    Ok((out, NormStats { mean, rstd }))
}

pub struct NormGrads<T> {
    pub dx: Tensor<T>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

pub fn group_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    groups: usize,
    gamma: &Tensor<T>,
    stats: &NormStats,
    dy: &Tensor<T>,
) -> NormGrads<T> {
    let s = x.shape();
    let cpg = s.c / groups;
    let plane = s.plane();
    let gsize = cpg * plane;
    let gd = gamma.data();
    let mut dx = Tensor::zeros(s);
    // per (sample, channel) partial affine gradients, reduced over the batch below
    let mut partial = vec![(0.0f64, 0.0f64); s.n * s.c];
    dx.data_mut()
        .par_chunks_mut(gsize)
        .zip(partial.par_chunks_mut(cpg))
        .enumerate()
        .for_each(|(idx, (dst, part))| {
            let (mean, rstd) = (stats.mean[idx], stats.rstd[idx]);
            let c0 = (idx % groups) * cpg;
            let base = idx * gsize;
            let xs = &x.data()[base..base + gsize];
            let dys = &dy.data()[base..base + gsize];
            let m = gsize as f64;
            let (mut sum_dxhat, mut sum_dxhat_xhat) = (0.0, 0.0);
            for ci in 0..cpg {
                let gm = gd[c0 + ci].f64();
                let (mut dg, mut db) = (0.0, 0.0);
                for p in ci * plane..(ci + 1) * plane {
                    let xhat = (xs[p].f64() - mean) * rstd;
                    let g = dys[p].f64();
                    dg += g * xhat;
                    db += g;
                    sum_dxhat += g * gm;
                    sum_dxhat_xhat += g * gm * xhat;
                }
                part[ci] = (dg, db);
            }
            for ci in 0..cpg {
                let gm = gd[c0 + ci].f64();
                for p in ci * plane..(ci + 1) * plane {
                    let xhat = (xs[p].f64() - mean) * rstd;
                    let dxhat = dys[p].f64() * gm;
                    dst[p] = T::of(rstd * (dxhat - sum_dxhat / m - xhat * sum_dxhat_xhat / m));
                }
            }
        });
    let mut dgamma = Tensor::zeros(Shape::vector(s.c));
    let mut dbeta = Tensor::zeros(Shape::vector(s.c));
    for c in 0..s.c {
        let (mut g, mut b) = (0.0, 0.0);
        for n in 0..s.n {
            g += partial[n * s.c + c].0;
            b += partial[n * s.c + c].1;
        }
        dgamma.data_mut()[c] = T::of(g);
        dbeta.data_mut()[c] = T::of(b);
    }
    NormGrads { dx, dgamma, dbeta }
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    out.clear_grad();
    out.data_mut()
        .par_iter_mut()
        .for_each(|v| *v = if *v > T::zero() { *v } else { T::zero() });
    out
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    dx.data_mut()
        .par_iter_mut()
        .zip(x.data().par_iter())
        .for_each(|(g, &v)| {
            if v <= T::zero() {
                *g = T::zero();
            }
        });
    dx
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "add",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut out = Tensor::zeros(a.shape());
    out.data_mut()
        .par_iter_mut()
        .zip(a.data().par_iter().zip(b.data().par_iter()))
        .for_each(|(o, (&x, &y))| *o = x + y);
    Ok(out)
}

/// Source sampling positions along one axis for a half-pixel-centre resize:
/// `src = (dst + 0.5)·(in/out) − 0.5`, clamped to `[0, in − 1]`.
#[derive(Clone, Debug)]
pub struct AxisMap {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

pub fn axis_map(in_len: usize, out_len: usize) -> AxisMap {
    let scale = in_len as f64 / out_len as f64;
    let max = (in_len - 1) as f64;
    let mut map = AxisMap {
        lo: Vec::with_capacity(out_len),
        hi: Vec::with_capacity(out_len),
        frac: Vec::with_capacity(out_len),
    };
    for d in 0..out_len {
        let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
        let lo = src.floor() as usize;
        map.lo.push(lo);
        map.hi.push((lo + 1).min(in_len - 1));
        map.frac.push(src - lo as f64);
    }
    map
}

/// Weights of the four taps `(lo,lo), (lo,hi), (hi,lo), (hi,hi)` in
/// `(row, col)` order.
pub fn bilinear_weights(fy: f64, fx: f64) -> [f64; 4] {
    let (gy, gx) = (1.0 - fy, 1.0 - fx);
    [gy * gx, gy * fx, fy * gx, fy * fx]
}

struct ResizePlan<T> {
    taps: Vec<[usize; 4]>,
    /// `(fy, fx)` per output pixel.
    fracs: Vec<[T; 2]>,
}

fn resize_plan<T: Scalar>(h: usize, w: usize, oh: usize, ow: usize) -> ResizePlan<T> {
    let (ym, xm) = (axis_map(h, oh), axis_map(w, ow));
    let mut plan = ResizePlan {
        taps: Vec::with_capacity(oh * ow),
        fracs: Vec::with_capacity(oh * ow),
    };
    for oy in 0..oh {
        for ox in 0..ow {
            let (y0, y1, x0, x1) = (ym.lo[oy], ym.hi[oy], xm.lo[ox], xm.hi[ox]);
            plan.taps.push([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1]);
            plan.fracs.push([T::of(ym.frac[oy]), T::of(xm.frac[ox])]);
        }
    }
    plan
}

pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if oh == 0 || ow == 0 || s.h == 0 || s.w == 0 {
        return Err(Error::EmptyOutput { op: "bilinear_resize" });
    }
    if (oh, ow) == (s.h, s.w) {
        let mut out = x.clone();
        out.clear_grad();
        return Ok(out);
    }
    let plan = resize_plan::<T>(s.h, s.w, oh, ow);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    out.data_mut()
        .par_chunks_mut(oh * ow)
        .zip(x.data().par_chunks(s.plane()))
        .for_each(|(dst, src)| {
            for (o, (t, &[fy, fx])) in dst.iter_mut().zip(plan.taps.iter().zip(&plan.fracs)) {
                let top = src[t[0]] + fx * (src[t[1]] - src[t[0]]);
                let bottom = src[t[2]] + fx * (src[t[3]] - src[t[2]]);
                *o = top + fy * (bottom - top);
            }
        });
    Ok(out)
}

pub fn bilinear_resize_backward<T: Scalar>(in_shape: Shape, dy: &Tensor<T>) -> Tensor<T> {
    let (oh, ow) = (dy.shape().h, dy.shape().w);
    if (oh, ow) == (in_shape.h, in_shape.w) {
        return dy.clone();
    }
    let plan = resize_plan::<T>(in_shape.h, in_shape.w, oh, ow);
    let mut dx = Tensor::zeros(in_shape);
    dx.data_mut()
        .par_chunks_mut(in_shape.plane())
        .zip(dy.data().par_chunks(oh * ow))
        .for_each(|(dst, src)| {
            for (&g, (t, &[fy, fx])) in src.iter().zip(plan.taps.iter().zip(&plan.fracs)) {
                let wt = bilinear_weights(fy.f64(), fx.f64()).map(T::of);
                for j in 0..4 {
                    dst[t[j]] += wt[j] * g;
                }
            }
        });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: Shape, data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn out_size_rule() {
        assert_eq!(conv_out_size(25, 3, 2, 1), Some(13));
        assert_eq!(conv_out_size(13, 3, 2, 1), Some(7));
        assert_eq!(conv_out_size(1, 3, 2, 1), Some(1));
        assert_eq!(conv_out_size(1, 5, 1, 0), None);
    }

    #[test]
    fn pointwise_identity_conv() {
        let x = Tensor::from_fn(Shape::new(2, 3, 4, 5), |i| i as f64 * 0.25 - 3.0);
        let w = Tensor::from_fn(Shape::new(3, 3, 1, 1), |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn stride_two_shapes() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 25, 25));
        let w = Tensor::<f32>::zeros(Shape::new(4, 2, 3, 3));
        let y = conv2d(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 4, 13, 13));
        let z = conv2d(
            &Tensor::<f32>::zeros(Shape::new(1, 4, 13, 13)),
            &Tensor::zeros(Shape::new(4, 4, 3, 3)),
            None,
            2,
            1,
        )
        .unwrap();
        assert_eq!(z.shape(), Shape::new(1, 4, 7, 7));
    }

    #[test]
    fn conv_errors() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 3, 4, 4));
        let w = Tensor::<f64>::zeros(Shape::new(2, 2, 3, 3));
        assert!(matches!(conv2d(&x, &w, None, 1, 1), Err(Error::ChannelMismatch { .. })));
        let w = Tensor::<f64>::zeros(Shape::new(2, 3, 5, 5));
        assert!(matches!(
            conv2d(&Tensor::zeros(Shape::new(1, 3, 2, 2)), &w, None, 1, 0),
            Err(Error::EmptyOutput { .. })
        ));
    }

    #[test]
    fn group_norm_constant_input_is_zero() {
        let x = Tensor::full(Shape::new(1, 4, 3, 3), 2.5f64);
        let g = Tensor::full(Shape::vector(4), 1.0);
        let b = Tensor::zeros(Shape::vector(4));
        let (y, _) = group_norm(&x, 2, &g, &b, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn group_norm_zero_gamma_gives_beta() {
        let x = Tensor::from_fn(Shape::new(2, 4, 3, 3), |i| (i as f64 * 1.7).sin());
        let g = Tensor::zeros(Shape::vector(4));
        let b = t64(Shape::vector(4), &[0.5, -1.0, 2.0, 3.0]);
        let (y, _) = group_norm(&x, 2, &g, &b, 1e-5).unwrap();
        for n in 0..2 {
            for c in 0..4 {
                for p in 0..9 {
                    assert_eq!(y.at(n, c, p / 3, p % 3), b.data()[c]);
                }
            }
        }
    }

    #[test]
    fn group_norm_rejects_indivisible_channels() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 6, 2, 2));
        let g = Tensor::zeros(Shape::vector(6));
        assert!(group_norm(&x, 4, &g, &g, 1e-5).is_err());
    }

    #[test]
    fn relu_cases() {
        let x = t64(Shape::new(1, 1, 1, 3), &[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::full(Shape::new(1, 2, 2, 2), -3.0f64);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::from_fn(Shape::new(1, 2, 2, 2), |i| i as f64 + 0.5);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn resize_identity_and_constant() {
        let x = Tensor::from_fn(Shape::new(1, 2, 3, 5), |i| (i as f64).cos());
        assert_eq!(bilinear_resize(&x, 3, 5).unwrap(), x);
        let c = Tensor::full(Shape::new(1, 1, 3, 3), 0.7f64);
        let y = bilinear_resize(&c, 7, 4).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        assert!(bilinear_resize(&c, 0, 4).is_err());
    }

    #[test]
    fn add_requires_equal_shapes() {
        let a = Tensor::<f64>::zeros(Shape::new(1, 1, 2, 2));
        let b = Tensor::<f64>::zeros(Shape::new(1, 1, 2, 3));
        assert!(add(&a, &b).is_err());
    }
}
