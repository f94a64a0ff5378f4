use crate::cost::{self, formulas};
use crate::error::{Error, Result};
use crate::scalar::{total, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2dGeometry {
    /// Stride 1 with `k/2` padding: preserves spatial dims for odd `k`.
    pub fn same(k: usize) -> Self {
        Self {
            stride: 1,
            padding: k / 2,
            groups: 1,
        }
    }

    pub fn strided(k: usize, stride: usize) -> Self {
        Self {
            stride,
            padding: k / 2,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

/// Output shape `[C_out, H', W']`, validating channels, groups and extents.
pub fn conv2d_shape(x: &[usize], w: &[usize], g: Conv2dGeometry) -> Result<Vec<usize>> {
    let (&[c_in, h, wd], &[c_out, c_per, kh, kw]) = (x, w) else {
        return Err(Error::dim(
            "conv2d",
            format!("expected input [C, H, W] and weight [Co, Ci/g, k, k], got {x:?} and {w:?}"),
        ));
    };
    if kh != kw {
        return Err(Error::Config(format!("conv2d kernels must be square, got {kh}x{kw}")));
    }
    if g.stride == 0 || g.groups == 0 {
        return Err(Error::Config("conv2d stride and groups must be positive".into()));
    }
    if c_in % g.groups != 0 || c_out % g.groups != 0 || c_per != c_in / g.groups {
        return Err(Error::Config(format!(
            "conv2d with {} groups cannot map {c_in} input channels using weight {w:?}",
            g.groups
        )));
    }
    if h + 2 * g.padding < kh || wd + 2 * g.padding < kw {
        return Err(Error::dim(
            "conv2d",
            format!("kernel {kh}x{kw} does not fit input {h}x{wd} with padding {}", g.padding),
        ));
    }
    Ok(vec![
        c_out,
        (h + 2 * g.padding - kh) / g.stride + 1,
        (wd + 2 * g.padding - kw) / g.stride + 1,
    ])
}

/// Valid output range `[lo, hi)` for kernel tap `kk` along one axis, so that
/// `o * stride + kk - pad` lands inside `[0, n)`.
fn tap_range(kk: usize, pad: usize, stride: usize, n: usize, n_out: usize) -> (usize, usize) {
    let lo = if kk >= pad { 0 } else { (pad - kk).div_ceil(stride) };
    let hi = if n + pad > kk {
        ((n + pad - kk - 1) / stride + 1).min(n_out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

struct Dims {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    cpg_in: usize,
    cpg_out: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn dims(x: &[usize], w: &[usize], out: &[usize], g: Conv2dGeometry) -> Dims {
    Dims {
        c_in: x[0],
        h: x[1],
        w: x[2],
        c_out: w[0],
        cpg_in: w[1],
        cpg_out: w[0] / g.groups,
        kh: w[2],
        kw: w[3],
        ho: out[1],
        wo: out[2],
    }
}

/// Grouped 2-D cross-correlation with zero padding.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: Conv2dGeometry,
) -> Result<Tensor<T>> {
    let out_shape = conv2d_shape(x.shape(), weight.shape(), g)?;
    let d = dims(x.shape(), weight.shape(), &out_shape, g);
    if let Some(b) = bias {
        if b.shape() != [d.c_out] {
            return Err(Error::Config(format!(
                "conv2d bias shape {:?} does not match {} output channels",
                b.shape(),
                d.c_out
            )));
        }
    }
    let (xs, ws) = (x.data(), weight.data());
    let plane = d.ho * d.wo;
    let mut out = vec![T::zero(); d.c_out * plane];
    for oc in 0..d.c_out {
        let grp = oc / d.cpg_out;
        let acc = &mut out[oc * plane..(oc + 1) * plane];
        if let Some(b) = bias {
            acc.iter_mut().for_each(|v| *v = b.data()[oc]);
        }
        for icg in 0..d.cpg_in {
            let ic = grp * d.cpg_in + icg;
            let xplane = &xs[ic * d.h * d.w..(ic + 1) * d.h * d.w];
            for ki in 0..d.kh {
                let (oy0, oy1) = tap_range(ki, g.padding, g.stride, d.h, d.ho);
                for kj in 0..d.kw {
                    let wv = ws[((oc * d.cpg_in + icg) * d.kh + ki) * d.kw + kj];
                    if wv == T::zero() {
                        continue;
                    }
                    let (ox0, ox1) = tap_range(kj, g.padding, g.stride, d.w, d.wo);
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ki - g.padding;
                        let xrow = &xplane[iy * d.w..(iy + 1) * d.w];
                        let arow = &mut acc[oy * d.wo..(oy + 1) * d.wo];
                        for ox in ox0..ox1 {
                            arow[ox] += wv * xrow[ox * g.stride + kj - g.padding];
                        }
                    }
                }
            }
        }
    }
    cost::record(formulas::conv2d(d.c_out, d.c_in, g.groups, d.kh, d.ho, d.wo));
    Ok(Tensor::from_parts(out_shape, out))
}

/// `(dx, dw, db)`; `db` is `None` when the forward had no bias.
#[allow(clippy::type_complexity)]
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    g: Conv2dGeometry,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)> {
    let out_shape = conv2d_shape(x.shape(), weight.shape(), g)?;
    let d = dims(x.shape(), weight.shape(), &out_shape, g);
    let (xs, ws, gs) = (x.data(), weight.data(), grad.data());
    let plane = d.ho * d.wo;
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); weight.len()];
    for oc in 0..d.c_out {
        let grp = oc / d.cpg_out;
        let gplane = &gs[oc * plane..(oc + 1) * plane];
        for icg in 0..d.cpg_in {
            let ic = grp * d.cpg_in + icg;
            let base = ic * d.h * d.w;
            for ki in 0..d.kh {
                let (oy0, oy1) = tap_range(ki, g.padding, g.stride, d.h, d.ho);
                for kj in 0..d.kw {
                    let widx = ((oc * d.cpg_in + icg) * d.kh + ki) * d.kw + kj;
                    let wv = ws[widx];
                    let (ox0, ox1) = tap_range(kj, g.padding, g.stride, d.w, d.wo);
                    let mut acc = T::zero();
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ki - g.padding;
                        for ox in ox0..ox1 {
                            let xi = base + iy * d.w + ox * g.stride + kj - g.padding;
                            let gv = gplane[oy * d.wo + ox];
                            acc += gv * xs[xi];
                            dx[xi] += gv * wv;
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    let db = has_bias.then(|| {
        Tensor::from_parts(
            vec![d.c_out],
            (0..d.c_out)
                .map(|oc| total(gs[oc * plane..(oc + 1) * plane].iter().copied()))
                .collect(),
        )
    });
    Ok((
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(weight.shape().to_vec(), dw),
        db,
    ))
}

pub fn avg_pool2d_shape(x: &[usize], k: usize, stride: usize) -> Result<Vec<usize>> {
    let &[c, h, w] = x else {
        return Err(Error::dim("avg_pool2d", format!("expected [C, H, W], got {x:?}")));
    };
    if k == 0 || stride == 0 || h < k || w < k {
        return Err(Error::dim(
            "avg_pool2d",
            format!("window {k} with stride {stride} does not fit {h}x{w}"),
        ));
    }
    Ok(vec![c, (h - k) / stride + 1, (w - k) / stride + 1])
}

/// Mean over each `k×k` window, no padding.
pub fn avg_pool2d<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    let out_shape = avg_pool2d_shape(x.shape(), k, stride)?;
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ho, wo) = (out_shape[1], out_shape[2]);
    let inv = T::one() / T::from_count(k * k);
    let xs = x.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = T::zero();
                for i in 0..k {
                    for j in 0..k {
                        s += xs[(ch * h + oy * stride + i) * w + ox * stride + j];
                    }
                }
                out.push(s * inv);
            }
        }
    }
    cost::record(formulas::avg_pool(out.len(), k));
    Ok(Tensor::from_parts(out_shape, out))
}

pub fn avg_pool2d_backward<T: Scalar>(
    in_shape: &[usize],
    k: usize,
    stride: usize,
    grad: &Tensor<T>,
) -> Tensor<T> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (ho, wo) = (grad.shape()[1], grad.shape()[2]);
    let inv = T::one() / T::from_count(k * k);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = grad.data()[(ch * ho + oy) * wo + ox] * inv;
                for i in 0..k {
                    for j in 0..k {
                        dx[(ch * h + oy * stride + i) * w + ox * stride + j] += g;
                    }
                }
            }
        }
    }
    Tensor::from_parts(in_shape.to_vec(), dx)
}

/// One output sample of 1-D linear interpolation: `(1−t)·x[lo] + t·x[hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpTap {
    pub lo: usize,
    pub hi: usize,
    pub t: f64,
}

/// Half-pixel (align-corners = false) sampling of `n_in` points at `n_out`
/// positions; source coordinates below zero clamp to the first sample.
pub fn linear_interp_weights(n_in: usize, n_out: usize) -> Vec<InterpTap> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            if n_in == n_out {
                return InterpTap { lo: i, hi: i, t: 0.0 };
            }
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            let t = if hi == lo { 0.0 } else { src - lo as f64 };
            InterpTap { lo, hi, t }
        })
        .collect()
}

/// Bilinear resize of a `[C, H, W]` map (half-pixel convention).
pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::dim(
            "bilinear_resize",
            format!("expected [C, H, W], got {:?}", x.shape()),
        ));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::Argument("bilinear_resize output dims must be positive".into()));
    }
    cost::record(formulas::bilinear(c * out_h * out_w));
    if (out_h, out_w) == (h, w) {
        return Ok(x.clone());
    }
    let (ty, tx) = (linear_interp_weights(h, out_h), linear_interp_weights(w, out_w));
    let xs = x.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let p = &xs[ch * h * w..(ch + 1) * h * w];
        // Lerp form `a + t·(b − a)` keeps constants exact.
        for ry in &ty {
            let b = T::cast(ry.t);
            for rx in &tx {
                let d = T::cast(rx.t);
                let (t0, t1) = (p[ry.lo * w + rx.lo], p[ry.lo * w + rx.hi]);
                let (b0, b1) = (p[ry.hi * w + rx.lo], p[ry.hi * w + rx.hi]);
                let top = t0 + d * (t1 - t0);
                let bot = b0 + d * (b1 - b0);
                out.push(top + b * (bot - top));
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, out_h, out_w], out))
}

pub fn bilinear_resize_backward<T: Scalar>(in_shape: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (grad.shape()[1], grad.shape()[2]);
    if (oh, ow) == (h, w) {
        return grad.clone();
    }
    let (ty, tx) = (linear_interp_weights(h, oh), linear_interp_weights(w, ow));
    let mut dx = vec![T::zero(); c * h * w];
    let gs = grad.data();
    for ch in 0..c {
        let p = &mut dx[ch * h * w..(ch + 1) * h * w];
        for (oy, ry) in ty.iter().enumerate() {
            let (a, b) = (T::cast(1.0 - ry.t), T::cast(ry.t));
            for (ox, rx) in tx.iter().enumerate() {
                let (cx, dxw) = (T::cast(1.0 - rx.t), T::cast(rx.t));
                let g = gs[(ch * oh + oy) * ow + ox];
                p[ry.lo * w + rx.lo] += g * a * cx;
                p[ry.lo * w + rx.hi] += g * a * dxw;
                p[ry.hi * w + rx.lo] += g * b * cx;
                p[ry.hi * w + rx.hi] += g * b * dxw;
            }
        }
    }
    Tensor::from_parts(in_shape.to_vec(), dx)
}
