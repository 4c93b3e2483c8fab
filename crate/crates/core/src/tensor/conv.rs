//! Strided, dilated, zero-padded 2-D cross-correlation and its transpose.
//!
//! Three kernels cover both operators and all their gradients: `correlate`
//! (forward conv, input-grad of the transpose), `scatter` (the adjoint:
//! input-grad of conv, forward of the transpose) and `weight_grad`.

use super::gemm::{gemm_nn, gemm_nt};
use super::{GradFn, Shape, Tensor};
use crate::error::{Error, Result};

/// Stride, dilation and zero-padding of a square-kernel convolution.
/// Dilation 1 is ordinary convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec { stride: 1, dilation: 1, padding: 0 }
    }
}

impl ConvSpec {
    pub fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        ConvSpec { stride, dilation, padding }
    }

    /// Stride 1 with padding equal to the dilation: preserves size for 3x3 kernels.
    pub fn same3x3(dilation: usize) -> Self {
        ConvSpec { stride: 1, dilation, padding: dilation }
    }

    /// Extent of a dilated kernel of size `k`.
    pub fn span(&self, k: usize) -> usize {
        self.dilation * (k - 1) + 1
    }

    /// `floor((len + 2p - d(k-1) - 1) / s) + 1`, or `None` if that is below 1.
    pub fn output_len(&self, len: usize, k: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        let span = self.span(k);
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }

    /// `s(len - 1) + d(k-1) + 1 - 2p`, or `None` if that is below 1.
    pub fn transposed_output_len(&self, len: usize, k: usize) -> Option<usize> {
        let full = self.stride * (len - 1) + self.span(k);
        (full > 2 * self.padding).then(|| full - 2 * self.padding)
    }

    fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::invalid(format!(
                "stride and dilation must be positive (stride {}, dilation {})",
                self.stride, self.dilation
            )));
        }
        Ok(())
    }
}

/// Geometry of a convolution seen from the "input" side (`h`, `w`, `ci`)
/// and the "output" side (`oh`, `ow`, `co`).
#[derive(Clone, Copy, Debug)]
struct Geom {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    oh: usize,
    ow: usize,
    k: usize,
    spec: ConvSpec,
}

impl Geom {
    fn in_shape(&self) -> Shape {
        Shape::new(self.n, self.ci, self.h, self.w)
    }

    fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.co, self.oh, self.ow)
    }

    /// Offset `k_idx * d - p` of input coordinates relative to `o * s`.
    fn offset(&self, k_idx: usize) -> isize {
        (k_idx * self.spec.dilation) as isize - self.spec.padding as isize
    }
}

/// Output indices `o < out_len` with `0 <= o*s + off < in_len`.
fn valid_range(out_len: usize, in_len: usize, stride: usize, off: isize) -> (usize, usize) {
    let s = stride as isize;
    let start = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let limit = in_len as isize - off;
    let end = if limit <= 0 { 0 } else { ((limit + s - 1) / s).min(out_len as isize) };
    (start as usize, (end.max(start)) as usize)
}

/// Unfolds one sample `(ci, h, w)` into rows `q = (ci, ky, kx)` of length
/// `oh * ow`; taps that land in the zero padding hold 0.
fn im2col(x: &[f64], g: &Geom, col: &mut [f64]) {
    let (s, k) = (g.spec.stride, g.k);
    let p = g.oh * g.ow;
    col.fill(0.0);
    for ci in 0..g.ci {
        let plane = &x[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..k {
            let (oy0, oy1) = valid_range(g.oh, g.h, s, g.offset(ky));
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * p..][..p];
                let offx = g.offset(kx);
                let (ox0, ox1) = valid_range(g.ow, g.w, s, offx);
                if ox0 >= ox1 {
                    continue;
                }
                let ix0 = ((ox0 * s) as isize + offx) as usize;
                for oy in oy0..oy1 {
                    let iy = ((oy * s) as isize + g.offset(ky)) as usize;
                    let src = &plane[iy * g.w..][..g.w];
                    let dst = &mut row[oy * g.ow..][ox0..ox1];
                    if s == 1 {
                        dst.copy_from_slice(&src[ix0..ix0 + dst.len()]);
                    } else {
                        for (j, d) in dst.iter_mut().enumerate() {
                            *d = src[ix0 + j * s];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: adds every column entry back onto its input pixel.
fn col2im_add(col: &[f64], g: &Geom, x: &mut [f64]) {
    let (s, k) = (g.spec.stride, g.k);
    let p = g.oh * g.ow;
    for ci in 0..g.ci {
        let plane = &mut x[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..k {
            let (oy0, oy1) = valid_range(g.oh, g.h, s, g.offset(ky));
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * p..][..p];
                let offx = g.offset(kx);
                let (ox0, ox1) = valid_range(g.ow, g.w, s, offx);
                if ox0 >= ox1 {
                    continue;
                }
                let ix0 = ((ox0 * s) as isize + offx) as usize;
                for oy in oy0..oy1 {
                    let iy = ((oy * s) as isize + g.offset(ky)) as usize;
                    let dst = &mut plane[iy * g.w..][..g.w];
                    let src = &row[oy * g.ow..][ox0..ox1];
                    if s == 1 {
                        for (d, &v) in dst[ix0..ix0 + src.len()].iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (j, &v) in src.iter().enumerate() {
                            dst[ix0 + j * s] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Copies `planes` planes of `h x w` into zero-bordered `(h+2pad) x (w+2pad)` planes.
fn pad_planes(x: &[f64], planes: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    let wp = w + 2 * pad;
    let plane = (h + 2 * pad) * wp;
    let mut out = vec![0.0; planes * plane];
    for c in 0..planes {
        for y in 0..h {
            out[c * plane + (y + pad) * wp + pad..][..w].copy_from_slice(&x[(c * h + y) * w..][..w]);
        }
    }
    out
}

/// Start offsets, in padded planes of width `wp`, of every tap `(ci, ky, kx)`.
fn tap_rows(g: &Geom, plane: usize, wp: usize) -> Vec<usize> {
    let d = g.spec.dilation;
    let mut rows = Vec::with_capacity(g.ci * g.k * g.k);
    for ci in 0..g.ci {
        for ky in 0..g.k {
            for kx in 0..g.k {
                rows.push(ci * plane + ky * d * wp + kx * d);
            }
        }
    }
    rows
}

/// Forward cross-correlation; `w` is `(co, ci, k, k)`.
///
/// Stride 1 reads taps directly from a padded copy of each sample and
/// produces rows of width `wp`, whose last `wp - ow` entries are discarded.
/// Other strides unfold the sample with [`im2col`] first.
fn correlate(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &Geom) -> Vec<f64> {
    let q = g.ci * g.k * g.k;
    let p = g.oh * g.ow;
    let in_len = g.ci * g.h * g.w;
    let mut out = vec![0.0; g.out_shape().numel()];
    if let Some(b) = bias {
        for (plane, &bv) in out.chunks_mut(p).zip(b.iter().cycle()) {
            plane.fill(bv);
        }
    }
    if g.spec.stride == 1 {
        let pad = g.spec.padding;
        let (hp, wp) = (g.h + 2 * pad, g.w + 2 * pad);
        let rows = tap_rows(g, hp * wp, wp);
        let ext_len = g.oh * wp;
        let mut ext = vec![0.0; g.co * ext_len];
        for n in 0..g.n {
            let xp = pad_planes(&x[n * in_len..][..in_len], g.ci, g.h, g.w, pad);
            ext.fill(0.0);
            gemm_nn(w, g.co, &xp, &rows, (g.oh - 1) * wp + g.ow, &mut ext, ext_len);
            let o = &mut out[n * g.co * p..][..g.co * p];
            for (dst, src) in o.chunks_mut(g.ow).zip(ext.chunks(wp)) {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    } else {
        let rows: Vec<usize> = (0..q).map(|r| r * p).collect();
        let mut col = vec![0.0; q * p];
        for n in 0..g.n {
            im2col(&x[n * in_len..][..in_len], g, &mut col);
            gemm_nn(w, g.co, &col, &rows, p, &mut out[n * g.co * p..][..g.co * p], p);
        }
    }
    out
}

/// Adjoint of [`correlate`] with respect to its input.
///
/// For stride 1 this is itself a correlation of the output gradient with
/// the flipped, channel-swapped kernel and padding `d(k-1) - p`.
fn scatter(grad: &[f64], w: &[f64], g: &Geom) -> Vec<f64> {
    let (k, d, pad) = (g.k, g.spec.dilation, g.spec.padding);
    if g.spec.stride == 1 && d * (k - 1) >= pad {
        let mut flipped = vec![0.0; w.len()];
        for co in 0..g.co {
            for ci in 0..g.ci {
                for ky in 0..k {
                    for kx in 0..k {
                        flipped[((ci * g.co + co) * k + ky) * k + kx] =
                            w[((co * g.ci + ci) * k + k - 1 - ky) * k + k - 1 - kx];
                    }
                }
            }
        }
        let adj = Geom {
            n: g.n,
            ci: g.co,
            h: g.oh,
            w: g.ow,
            co: g.ci,
            oh: g.h,
            ow: g.w,
            k,
            spec: ConvSpec::new(1, d, d * (k - 1) - pad),
        };
        return correlate(grad, &flipped, None, &adj);
    }
    let q = g.ci * k * k;
    let p = g.oh * g.ow;
    let mut wt = vec![0.0; w.len()];
    for co in 0..g.co {
        for r in 0..q {
            wt[r * g.co + co] = w[co * q + r];
        }
    }
    let rows: Vec<usize> = (0..g.co).map(|c| c * p).collect();
    let mut gx = vec![0.0; g.in_shape().numel()];
    let mut col = vec![0.0; q * p];
    for n in 0..g.n {
        col.fill(0.0);
        gemm_nn(&wt, q, &grad[n * g.co * p..][..g.co * p], &rows, p, &mut col, p);
        col2im_add(&col, g, &mut gx[n * g.ci * g.h * g.w..][..g.ci * g.h * g.w]);
    }
    gx
}

/// Gradient of [`correlate`] with respect to the kernel.
fn weight_grad(x: &[f64], grad: &[f64], g: &Geom) -> Vec<f64> {
    let q = g.ci * g.k * g.k;
    let p = g.oh * g.ow;
    let in_len = g.ci * g.h * g.w;
    let mut gw = vec![0.0; g.co * q];
    if g.spec.stride == 1 {
        let pad = g.spec.padding;
        let (hp, wp) = (g.h + 2 * pad, g.w + 2 * pad);
        let rows = tap_rows(g, hp * wp, wp);
        let ext_len = g.oh * wp;
        let grad_rows: Vec<usize> = (0..g.co).map(|c| c * ext_len).collect();
        let mut ext = vec![0.0; g.co * ext_len];
        for n in 0..g.n {
            let xp = pad_planes(&x[n * in_len..][..in_len], g.ci, g.h, g.w, pad);
            for (dst, src) in ext.chunks_mut(wp).zip(grad[n * g.co * p..][..g.co * p].chunks(g.ow)) {
                dst[..g.ow].copy_from_slice(src);
            }
            gemm_nt(&ext, &grad_rows, &xp, &rows, (g.oh - 1) * wp + g.ow, &mut gw);
        }
    } else {
        let rows: Vec<usize> = (0..q).map(|r| r * p).collect();
        let grad_rows: Vec<usize> = (0..g.co).map(|c| c * p).collect();
        let mut col = vec![0.0; q * p];
        for n in 0..g.n {
            im2col(&x[n * in_len..][..in_len], g, &mut col);
            gemm_nt(&grad[n * g.co * p..][..g.co * p], &grad_rows, &col, &rows, p, &mut gw);
        }
    }
    gw
}

fn plane_sums(grad: &[f64], shape: Shape) -> Vec<f64> {
    let plane = shape.plane();
    let mut out = vec![0.0; shape.c];
    for n in 0..shape.n {
        for (c, o) in out.iter_mut().enumerate() {
            *o += grad[shape.index(n, c, 0, 0)..][..plane].iter().sum::<f64>();
        }
    }
    out
}

fn check_kernel(op: &'static str, weight: &Tensor) -> Result<usize> {
    let ws = weight.shape();
    if ws.h != ws.w || ws.h == 0 {
        return Err(Error::shape(op, format!("kernel must be square and non-empty, got {ws}")));
    }
    Ok(ws.h)
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.numel() != channels => Err(Error::shape(
            op,
            format!("bias has {} values, output has {channels} channels", b.numel()),
        )),
        _ => Ok(()),
    }
}

struct ConvBackward {
    geom: Geom,
    has_bias: bool,
}

impl GradFn for ConvBackward {
    fn backward(&self, inputs: &[Tensor], grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        let mut grads = vec![
            x.requires_grad().then(|| scatter(grad_out, w.data(), &self.geom)),
            w.requires_grad().then(|| weight_grad(x.data(), grad_out, &self.geom)),
        ];
        if self.has_bias {
            grads.push(inputs[2].requires_grad().then(|| plane_sums(grad_out, self.geom.out_shape())));
        }
        grads
    }
}

/// Cross-correlation of `input` (N, Cin, H, W) with `weight` (Cout, Cin, k, k).
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: ConvSpec) -> Result<Tensor> {
    spec.validate()?;
    let k = check_kernel("conv2d", weight)?;
    let (is, ws) = (input.shape(), weight.shape());
    if is.c != ws.c {
        return Err(Error::shape(
            "conv2d",
            format!("input channels {} do not match kernel input channels {}", is.c, ws.c),
        ));
    }
    check_bias("conv2d", bias, ws.n)?;
    let (Some(oh), Some(ow)) = (spec.output_len(is.h, k), spec.output_len(is.w, k)) else {
        return Err(Error::shape(
            "conv2d",
            format!("zero-size output: input {}x{} is smaller than the dilated kernel span {}", is.h, is.w, spec.span(k)),
        ));
    };
    let geom = Geom { n: is.n, ci: is.c, h: is.h, w: is.w, co: ws.n, oh, ow, k, spec };
    let out = correlate(input.data(), weight.data(), bias.map(Tensor::data), &geom);
    let mut inputs = vec![input, weight];
    inputs.extend(bias);
    Ok(Tensor::from_op(
        geom.out_shape(),
        out,
        &inputs,
        ConvBackward { geom, has_bias: bias.is_some() },
    ))
}

struct ConvTransposedBackward {
    geom: Geom,
    has_bias: bool,
}

impl GradFn for ConvTransposedBackward {
    fn backward(&self, inputs: &[Tensor], grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        let mut grads = vec![
            x.requires_grad().then(|| correlate(grad_out, w.data(), None, &self.geom)),
            w.requires_grad().then(|| weight_grad(grad_out, x.data(), &self.geom)),
        ];
        if self.has_bias {
            grads.push(inputs[2].requires_grad().then(|| plane_sums(grad_out, self.geom.in_shape())));
        }
        grads
    }
}

/// Transposed convolution of `input` (N, Cin, H, W) with `weight`
/// (Cin, Cout, k, k): the adjoint of [`conv2d`] with the same kernel array and
/// spec. Output size is `s(H - 1) + d(k - 1) + 1 - 2p`.
pub fn conv2d_transposed(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    spec: ConvSpec,
) -> Result<Tensor> {
    spec.validate()?;
    let k = check_kernel("conv2d_transposed", weight)?;
    let (is, ws) = (input.shape(), weight.shape());
    if is.c != ws.n {
        return Err(Error::shape(
            "conv2d_transposed",
            format!("input channels {} do not match kernel input channels {}", is.c, ws.n),
        ));
    }
    check_bias("conv2d_transposed", bias, ws.c)?;
    let (Some(h), Some(w)) = (
        spec.transposed_output_len(is.h, k),
        spec.transposed_output_len(is.w, k),
    ) else {
        return Err(Error::shape(
            "conv2d_transposed",
            format!("padding {} leaves no output for a {}x{} input", spec.padding, is.h, is.w),
        ));
    };
    // Seen as the conv it is the adjoint of: its input is our output.
    let geom = Geom { n: is.n, ci: ws.c, h, w, co: is.c, oh: is.h, ow: is.w, k, spec };
    let mut out = scatter(input.data(), weight.data(), &geom);
    if let Some(b) = bias {
        let plane = h * w;
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let bv = b.data()[i % ws.c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
    let mut inputs = vec![input, weight];
    inputs.extend(bias);
    Ok(Tensor::from_op(
        geom.in_shape(),
        out,
        &inputs,
        ConvTransposedBackward { geom, has_bias: bias.is_some() },
    ))
}
