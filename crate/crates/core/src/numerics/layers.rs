//! Forward and backward kernels for the layer types used by the networks.
//!
//! Convolution is cross-correlation with zero padding, lowered to a matrix
//! product through an im2col buffer per batch item.

use super::linalg::{gemm, gemm_ld, MatRef};
use super::{NumericsError, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

/// Output extent of a sliding window, or `None` when it would be empty.
pub fn window_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

struct ConvDims {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims(input: &Tensor, kernel: &Tensor, geo: ConvGeometry) -> Result<ConvDims> {
    let (b, c, h, w) = input.dims4()?;
    let (f, kc, kh, kw) = kernel.dims4()?;
    if kc != c {
        return Err(NumericsError::Dimension(format!(
            "kernel expects {kc} channels, input has {c}"
        )));
    }
    let oh = window_extent(h, kh, geo.stride, geo.pad);
    let ow = window_extent(w, kw, geo.stride, geo.pad);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(ConvDims {
            b,
            c,
            h,
            w,
            f,
            kh,
            kw,
            oh,
            ow,
        }),
        _ => Err(NumericsError::Dimension(format!(
            "conv {kh}×{kw} stride {} pad {} does not fit {h}×{w}",
            geo.stride, geo.pad
        ))),
    }
}

/// Output positions per im2col tile, sized so one tile stays in cache.
fn tile_len(d: &ConvDims) -> usize {
    let ckk = d.c * d.kh * d.kw;
    (32_768 / ckk).max(d.ow).min(d.oh * d.ow)
}

/// Calls `f(col, oy, ox_range)` for each output-row segment of the flat
/// position range `p0..p1`, where `col` is the offset within the tile.
fn for_segments(d: &ConvDims, p0: usize, p1: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let mut p = p0;
    while p < p1 {
        let (oy, ox0) = (p / d.ow, p % d.ow);
        let ox1 = d.ow.min(ox0 + (p1 - p));
        f(p - p0, oy, ox0, ox1);
        p += ox1 - ox0;
    }
}

/// Columns for output positions `p0..p1`, laid out as (C·kh·kw)×(p1−p0).
fn im2col(src: &[f64], d: &ConvDims, geo: ConvGeometry, p0: usize, p1: usize, cols: &mut [f64]) {
    let t = p1 - p0;
    for c in 0..d.c {
        let chan = &src[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let dst = &mut cols[row * t..(row + 1) * t];
                for_segments(d, p0, p1, |at, oy, ox0, ox1| {
                    let out = &mut dst[at..at + ox1 - ox0];
                    let iy = (oy * geo.stride + ki) as isize - geo.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        out.fill(0.0);
                        return;
                    }
                    let in_row = &chan[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (o, ox) in out.iter_mut().zip(ox0..ox1) {
                        let ix = (ox * geo.stride + kj) as isize - geo.pad as isize;
                        *o = if ix < 0 || ix >= d.w as isize {
                            0.0
                        } else {
                            in_row[ix as usize]
                        };
                    }
                });
            }
        }
    }
}

fn col2im(cols: &[f64], d: &ConvDims, geo: ConvGeometry, p0: usize, p1: usize, dst: &mut [f64]) {
    let t = p1 - p0;
    for c in 0..d.c {
        let chan = &mut dst[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let src = &cols[row * t..(row + 1) * t];
                for_segments(d, p0, p1, |at, oy, ox0, ox1| {
                    let iy = (oy * geo.stride + ki) as isize - geo.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        return;
                    }
                    let base = iy as usize * d.w;
                    for (v, ox) in src[at..at + ox1 - ox0].iter().zip(ox0..ox1) {
                        let ix = (ox * geo.stride + kj) as isize - geo.pad as isize;
                        if ix >= 0 && (ix as usize) < d.w {
                            chan[base + ix as usize] += v;
                        }
                    }
                });
            }
        }
    }
}

/// Few filters at stride 1: row-wise axpy beats building columns.
fn use_direct(d: &ConvDims, geo: ConvGeometry) -> bool {
    geo.stride == 1 && d.f < 8
}

/// Valid output-column range for kernel column `kj` at stride 1, with the
/// matching input column offset.
fn direct_span(d: &ConvDims, pad: usize, kj: usize) -> Option<(usize, usize, usize)> {
    let lo = pad.saturating_sub(kj);
    let hi = d.ow.min((d.w + pad).saturating_sub(kj));
    (lo < hi).then(|| (lo, hi, lo + kj - pad))
}

/// Calls `f(oy, iy)` for every output row whose input row `oy + ki − pad`
/// is inside the image.
fn direct_rows(d: &ConvDims, pad: usize, ki: usize, mut f: impl FnMut(usize, usize)) {
    for oy in 0..d.oh {
        let iy = (oy + ki) as isize - pad as isize;
        if iy >= 0 && (iy as usize) < d.h {
            f(oy, iy as usize);
        }
    }
}

fn direct_forward(src: &[f64], kernel: &[f64], d: &ConvDims, pad: usize, dst: &mut [f64]) {
    let plane = d.oh * d.ow;
    for fi in 0..d.f {
        let out = &mut dst[fi * plane..(fi + 1) * plane];
        for c in 0..d.c {
            let chan = &src[c * d.h * d.w..(c + 1) * d.h * d.w];
            for ki in 0..d.kh {
                for kj in 0..d.kw {
                    let wv = kernel[((fi * d.c + c) * d.kh + ki) * d.kw + kj];
                    let Some((lo, hi, ix)) = direct_span(d, pad, kj) else {
                        continue;
                    };
                    direct_rows(d, pad, ki, |oy, iy| {
                        let o = &mut out[oy * d.ow + lo..oy * d.ow + hi];
                        let i = &chan[iy * d.w + ix..iy * d.w + ix + (hi - lo)];
                        for (a, b) in o.iter_mut().zip(i) {
                            *a += wv * b;
                        }
                    });
                }
            }
        }
    }
}

/// Dot product with four independent accumulators so it vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            lanes[l] += x[l] * y[l];
        }
    }
    lanes.iter().sum::<f64>() + tail
}

fn direct_backward(
    src: &[f64],
    go: &[f64],
    kernel: &[f64],
    d: &ConvDims,
    pad: usize,
    gk: &mut [f64],
    gi: &mut [f64],
) {
    let plane = d.oh * d.ow;
    for fi in 0..d.f {
        let g = &go[fi * plane..(fi + 1) * plane];
        for c in 0..d.c {
            let chan = &src[c * d.h * d.w..(c + 1) * d.h * d.w];
            let gchan = &mut gi[c * d.h * d.w..(c + 1) * d.h * d.w];
            for ki in 0..d.kh {
                for kj in 0..d.kw {
                    let at = ((fi * d.c + c) * d.kh + ki) * d.kw + kj;
                    let wv = kernel[at];
                    let Some((lo, hi, ix)) = direct_span(d, pad, kj) else {
                        continue;
                    };
                    let mut acc = 0.0;
                    direct_rows(d, pad, ki, |oy, iy| {
                        let grow = &g[oy * d.ow + lo..oy * d.ow + hi];
                        let range = iy * d.w + ix..iy * d.w + ix + (hi - lo);
                        acc += dot(grow, &chan[range.clone()]);
                        for (t, gv) in gchan[range].iter_mut().zip(grow) {
                            *t += wv * gv;
                        }
                    });
                    gk[at] += acc;
                }
            }
        }
    }
}

/// B×C×H×W input, F×C×kh×kw kernel, length-F bias.
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f64],
    geo: ConvGeometry,
) -> Result<Tensor> {
    let d = conv_dims(input, kernel, geo)?;
    if bias.len() != d.f {
        return Err(NumericsError::Dimension(format!(
            "bias has {} entries for {} filters",
            bias.len(),
            d.f
        )));
    }
    let plane = d.oh * d.ow;
    let ckk = d.c * d.kh * d.kw;
    let tile = tile_len(&d);
    let mut cols = vec![0.0; ckk * tile];
    let mut out = vec![0.0; d.b * d.f * plane];
    for bi in 0..d.b {
        let src = &input.data()[bi * d.c * d.h * d.w..(bi + 1) * d.c * d.h * d.w];
        let dst = &mut out[bi * d.f * plane..(bi + 1) * d.f * plane];
        for (fi, &bv) in bias.iter().enumerate() {
            dst[fi * plane..(fi + 1) * plane].fill(bv);
        }
        if use_direct(&d, geo) {
            direct_forward(src, kernel.data(), &d, geo.pad, dst);
            continue;
        }
        for p0 in (0..plane).step_by(tile) {
            let p1 = plane.min(p0 + tile);
            let t = p1 - p0;
            im2col(src, &d, geo, p0, p1, &mut cols);
            gemm_ld(
                d.f,
                ckk,
                t,
                1.0,
                MatRef::rows(kernel.data(), ckk),
                MatRef::rows(&cols[..ckk * t], t),
                1.0,
                &mut dst[p0..],
                plane,
            );
        }
    }
    Tensor::new(vec![d.b, d.f, d.oh, d.ow], out)
}

pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Vec<f64>,
}

/// Exact gradients of [`conv2d_forward`] with respect to all three inputs.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    kernel: &Tensor,
    geo: ConvGeometry,
) -> Result<ConvGrads> {
    let d = conv_dims(input, kernel, geo)?;
    if grad_out.shape() != [d.b, d.f, d.oh, d.ow] {
        return Err(NumericsError::Dimension(format!(
            "grad_out shape {:?} does not match conv output {:?}",
            grad_out.shape(),
            [d.b, d.f, d.oh, d.ow]
        )));
    }
    let plane = d.oh * d.ow;
    let ckk = d.c * d.kh * d.kw;
    let tile = tile_len(&d);
    let mut cols = vec![0.0; ckk * tile];
    let mut grad_cols = vec![0.0; ckk * tile];
    let mut gk = vec![0.0; d.f * ckk];
    let mut gb = vec![0.0; d.f];
    let mut gi = vec![0.0; input.len()];
    for bi in 0..d.b {
        let src = &input.data()[bi * d.c * d.h * d.w..(bi + 1) * d.c * d.h * d.w];
        let go = &grad_out.data()[bi * d.f * plane..(bi + 1) * d.f * plane];
        for (fi, g) in gb.iter_mut().enumerate() {
            *g += go[fi * plane..(fi + 1) * plane].iter().sum::<f64>();
        }
        let gi_b = &mut gi[bi * d.c * d.h * d.w..(bi + 1) * d.c * d.h * d.w];
        if use_direct(&d, geo) {
            direct_backward(src, go, kernel.data(), &d, geo.pad, &mut gk, gi_b);
            continue;
        }
        for p0 in (0..plane).step_by(tile) {
            let p1 = plane.min(p0 + tile);
            let t = p1 - p0;
            let go_t = MatRef {
                data: &go[p0..],
                rs: plane as isize,
                cs: 1,
            };
            im2col(src, &d, geo, p0, p1, &mut cols);
            // dK += dY · colsᵀ
            gemm(
                d.f,
                t,
                ckk,
                1.0,
                go_t,
                MatRef::transposed(&cols[..ckk * t], t),
                1.0,
                &mut gk,
            );
            // dcols = Kᵀ · dY
            let go_t = MatRef {
                data: &go[p0..],
                rs: plane as isize,
                cs: 1,
            };
            gemm(
                ckk,
                d.f,
                t,
                1.0,
                MatRef::transposed(kernel.data(), ckk),
                go_t,
                0.0,
                &mut grad_cols[..ckk * t],
            );
            col2im(&grad_cols, &d, geo, p0, p1, gi_b);
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gi)?,
        kernel: Tensor::new(kernel.shape().to_vec(), gk)?,
        bias: gb,
    })
}

/// Max pooling. Indices are flat offsets into the input buffer; ties go to
/// the smallest offset.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (b, c, h, w) = input.dims4()?;
    let (oh, ow) = match (
        window_extent(h, window, stride, 0),
        window_extent(w, window, stride, 0),
    ) {
        (Some(oh), Some(ow)) if window > 0 => (oh, ow),
        _ => {
            return Err(NumericsError::Dimension(format!(
                "pool window {window} stride {stride} does not fit {h}×{w}"
            )))
        }
    };
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut idx = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for dy in 0..window {
                    let row = base + (oy * stride + dy) * w + ox * stride;
                    for i in row..row + window {
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![b, c, oh, ow], out)?, idx))
}

pub fn maxpool2d_backward(
    grad_out: &Tensor,
    indices: &[usize],
    input_shape: &[usize],
) -> Result<Tensor> {
    if grad_out.len() != indices.len() {
        return Err(NumericsError::Dimension(
            "pool gradient/index length mismatch".into(),
        ));
    }
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&i, &v) in indices.iter().zip(grad_out.data()) {
        gd[i] += v;
    }
    Ok(g)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| x.max(0.0))
}

pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != input.shape() {
        return Err(NumericsError::Dimension(
            "relu gradient shape mismatch".into(),
        ));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(grad_out.shape().to_vec(), data)
}

/// `input·weight + bias`; any trailing axes of `input` are flattened.
pub fn fc_forward(input: &Tensor, weight: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let (b, m) = input.batch_rows();
    let (wm, n) = weight.dims2()?;
    if wm != m || bias.len() != n {
        return Err(NumericsError::Dimension(format!(
            "fc weight {wm}×{n} / bias {} incompatible with {m} inputs",
            bias.len()
        )));
    }
    let mut out = Vec::with_capacity(b * n);
    for _ in 0..b {
        out.extend_from_slice(bias);
    }
    gemm(
        b,
        m,
        n,
        1.0,
        MatRef::rows(input.data(), m),
        MatRef::rows(weight.data(), n),
        1.0,
        &mut out,
    );
    Tensor::new(vec![b, n], out)
}

pub struct FcGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

pub fn fc_backward(grad_out: &Tensor, input: &Tensor, weight: &Tensor) -> Result<FcGrads> {
    let (b, m) = input.batch_rows();
    let (wm, n) = weight.dims2()?;
    if wm != m || grad_out.shape() != [b, n] {
        return Err(NumericsError::Dimension(
            "fc gradient shape mismatch".into(),
        ));
    }
    let g = grad_out.data();
    let mut gi = vec![0.0; b * m];
    gemm(
        b,
        n,
        m,
        1.0,
        MatRef::rows(g, n),
        MatRef::transposed(weight.data(), n),
        0.0,
        &mut gi,
    );
    let mut gw = vec![0.0; m * n];
    gemm(
        m,
        b,
        n,
        1.0,
        MatRef::transposed(input.data(), m),
        MatRef::rows(g, n),
        0.0,
        &mut gw,
    );
    let mut gb = vec![0.0; n];
    for row in g.chunks(n) {
        for (acc, v) in gb.iter_mut().zip(row) {
            *acc += v;
        }
    }
    Ok(FcGrads {
        input: Tensor::new(input.shape().to_vec(), gi)?,
        weight: Tensor::new(vec![m, n], gw)?,
        bias: gb,
    })
}

/// Nearest-neighbour resize of each plane to `oh`×`ow`.
pub fn upsample_nearest(input: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (b, c, h, w) = input.dims4()?;
    if oh == 0 || ow == 0 {
        return Err(NumericsError::Dimension("empty upsample target".into()));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for y in 0..oh {
            let sy = y * h / oh;
            for xo in 0..ow {
                out.push(x[base + sy * w + xo * w / ow]);
            }
        }
    }
    Tensor::new(vec![b, c, oh, ow], out)
}

pub fn upsample_nearest_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let (b, c, oh, ow) = grad_out.dims4()?;
    let mut g = Tensor::zeros(input_shape);
    let (_, _, h, w) = g.dims4()?;
    let gd = g.data_mut();
    let go = grad_out.data();
    for plane in 0..b * c {
        for y in 0..oh {
            let sy = y * h / oh;
            for xo in 0..ow {
                gd[plane * h * w + sy * w + xo * w / ow] += go[(plane * oh + y) * ow + xo];
            }
        }
    }
    Ok(g)
}
