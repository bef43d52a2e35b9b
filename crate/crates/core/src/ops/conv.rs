//! Direct 2-D convolution with dilation, zero padding and stride.
//!
//! Every output element is accumulated as `bias`, then `c`-major, then
//! kernel row `u`, then kernel column `v`, one multiply and one add at a time.
//! The register-tiled kernels below vectorize across neighbouring output
//! pixels and output channels only, so each element sees exactly that
//! sequence and the result is bit-identical to a naive nested loop.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride,
            padding,
            dilation,
        }
    }

    /// Stride 1, dilation `d`, padding that keeps H and W for odd `k`.
    pub const fn same(k: usize, d: usize) -> Self {
        Self::new(1, d * (k - 1) / 2, d)
    }

    pub fn effective_kernel(&self, k: usize) -> usize {
        effective_kernel(k, self.dilation)
    }

    /// Output extent along one axis, or `None` when the kernel does not fit.
    pub fn output_len(&self, input: usize, k: usize) -> Option<usize> {
        let span = input + 2 * self.padding;
        let keff = self.effective_kernel(k);
        if self.stride == 0 || span < keff {
            return None;
        }
        Some((span - keff) / self.stride + 1)
    }
}

pub fn effective_kernel(k: usize, dilation: usize) -> usize {
    dilation * (k - 1) + 1
}

/// Standalone convolution parameters.
#[derive(Debug, Clone)]
pub struct Conv2dParams<T = f32> {
    /// `(out, in, kh, kw)`.
    pub weight: Tensor<T>,
    /// `(1, out, 1, 1)` when present.
    pub bias: Option<Tensor<T>>,
    pub geom: ConvGeom,
}

impl<T: Scalar> Conv2dParams<T> {
    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weight.shape();
        (s.h, s.w)
    }
}

pub fn conv2d<T: Scalar>(x: &Tensor<T>, params: &Conv2dParams<T>) -> Result<Tensor<T>> {
    conv2d_forward(x, &params.weight, params.bias.as_ref(), params.geom)
}

/// Output shape of a convolution, validating channel counts and geometry.
pub fn conv_output_shape(x: Shape4, w: Shape4, geom: ConvGeom) -> Result<Shape4> {
    if x.c != w.c {
        return Err(Error::ChannelMismatch {
            op: "conv2d",
            expected: w.c,
            got: x.c,
        });
    }
    if geom.stride == 0 || geom.dilation == 0 || w.h == 0 || w.w == 0 {
        return Err(Error::InvalidArgument(format!(
            "conv2d: stride, dilation and kernel must be positive ({geom:?}, kernel {}x{})",
            w.h, w.w
        )));
    }
    match (geom.output_len(x.h, w.h), geom.output_len(x.w, w.w)) {
        (Some(oh), Some(ow)) => Ok(Shape4::new(x.n, w.n, oh, ow)),
        _ => Err(Error::InvalidShape {
            op: "conv2d",
            shape: x,
            reason: format!(
                "kernel {}x{} with {geom:?} gives no output pixels",
                w.h, w.w
            ),
        }),
    }
}

/// Zero-pad H and W by `p` on every side.
pub fn pad_zero<T: Scalar>(x: &Tensor<T>, p: usize) -> Tensor<T> {
    if p == 0 {
        return x.clone();
    }
    let s = x.shape();
    let (hp, wp) = (s.h + 2 * p, s.w + 2 * p);
    let mut out = Tensor::zeros(s.with_hw(hp, wp));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for h in 0..s.h {
                let d0 = (h + p) * wp + p;
                dst[d0..d0 + s.w].copy_from_slice(&src[h * s.w..(h + 1) * s.w]);
            }
        }
    }
    out
}

fn crop<T: Scalar>(x: &Tensor<T>, p: usize, h: usize, w: usize) -> Tensor<T> {
    if p == 0 && x.shape().h == h && x.shape().w == w {
        return x.clone();
    }
    let s = x.shape();
    let mut out = Tensor::zeros(s.with_hw(h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for r in 0..h {
                let s0 = (r + p) * s.w + p;
                dst[r * w..(r + 1) * w].copy_from_slice(&src[s0..s0 + w]);
            }
        }
    }
    out
}

/// Geometry of one forward pass over a padded input.
#[derive(Clone, Copy)]
struct Plan {
    cin: usize,
    hp: usize,
    wp: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    dilation: usize,
    oh: usize,
    ow: usize,
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let out_shape = conv_output_shape(x.shape(), w.shape(), geom)?;
    if let Some(b) = bias {
        if b.numel() != out_shape.c {
            return Err(Error::LengthMismatch {
                expected: out_shape.c,
                got: b.numel(),
            });
        }
    }
    let xp = pad_zero(x, geom.padding);
    let ws = w.shape();
    let plan = Plan {
        cin: ws.c,
        hp: xp.shape().h,
        wp: xp.shape().w,
        kh: ws.h,
        kw: ws.w,
        stride: geom.stride,
        dilation: geom.dilation,
        oh: out_shape.h,
        ow: out_shape.w,
    };
    let bias = bias.map(|b| b.data());
    Ok(forward_padded(&xp, w.data(), bias, out_shape, plan))
}

const OUT_BLOCK: usize = 4;

fn forward_padded<T: Scalar>(
    xp: &Tensor<T>,
    w: &[T],
    bias: Option<&[T]>,
    out_shape: Shape4,
    plan: Plan,
) -> Tensor<T> {
    let plane = out_shape.plane();
    let per_item = out_shape.c * plane;
    let in_item = plan.cin * plan.hp * plan.wp;
    let mut out = Tensor::zeros(out_shape);
    if plane == 0 {
        return out;
    }

    let mut jobs: Vec<(usize, usize, &mut [T])> = Vec::new();
    for (n, item) in out.data_mut().chunks_mut(per_item).enumerate() {
        for (blk, chunk) in item.chunks_mut(OUT_BLOCK * plane).enumerate() {
            jobs.push((n, blk * OUT_BLOCK, chunk));
        }
    }
    let xd = xp.data();
    jobs.into_par_iter().for_each(|(n, o0, chunk)| {
        let xn = &xd[n * in_item..(n + 1) * in_item];
        let bias_at = |o: usize| bias.map_or(T::zero(), |b| b[o]);
        match chunk.len() / plane {
            4 => {
                let b = [bias_at(o0), bias_at(o0 + 1), bias_at(o0 + 2), bias_at(o0 + 3)];
                conv_block::<T, 4>(xn, w, o0, b, &plan, chunk);
            }
            rest => {
                for k in 0..rest {
                    let sub = &mut chunk[k * plane..(k + 1) * plane];
                    conv_block::<T, 1>(xn, w, o0 + k, [bias_at(o0 + k)], &plan, sub);
                }
            }
        }
    });
    out
}

fn conv_block<T: Scalar, const OB: usize>(
    xn: &[T],
    w: &[T],
    o0: usize,
    bias: [T; OB],
    plan: &Plan,
    out: &mut [T],
) {
    for i in 0..plan.oh {
        let mut j0 = 0;
        while j0 + 16 <= plan.ow {
            conv_tile::<T, OB, 16>(xn, w, o0, &bias, plan, i, j0, out);
            j0 += 16;
        }
        if j0 + 8 <= plan.ow {
            conv_tile::<T, OB, 8>(xn, w, o0, &bias, plan, i, j0, out);
            j0 += 8;
        }
        if j0 + 4 <= plan.ow {
            conv_tile::<T, OB, 4>(xn, w, o0, &bias, plan, i, j0, out);
            j0 += 4;
        }
        while j0 < plan.ow {
            conv_tile::<T, OB, 1>(xn, w, o0, &bias, plan, i, j0, out);
            j0 += 1;
        }
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn conv_tile<T: Scalar, const OB: usize, const TW: usize>(
    xn: &[T],
    w: &[T],
    o0: usize,
    bias: &[T; OB],
    plan: &Plan,
    i: usize,
    j0: usize,
    out: &mut [T],
) {
    let Plan {
        cin,
        hp,
        wp,
        kh,
        kw,
        stride: s,
        dilation: d,
        ow,
        oh,
    } = *plan;
    let ksize = kh * kw;
    let w_stride_o = cin * ksize;
    let mut acc = [[T::zero(); TW]; OB];
    for b in 0..OB {
        acc[b] = [bias[b]; TW];
    }
    for c in 0..cin {
        let xc = &xn[c * hp * wp..(c + 1) * hp * wp];
        for u in 0..kh {
            let r0 = (i * s + u * d) * wp;
            let row = &xc[r0..r0 + wp];
            for v in 0..kw {
                let widx = c * ksize + u * kw + v;
                let mut wv = [T::zero(); OB];
                for b in 0..OB {
                    wv[b] = w[(o0 + b) * w_stride_o + widx];
                }
                let start = j0 * s + v * d;
                if s == 1 {
                    let xs: &[T; TW] = row[start..start + TW].try_into().unwrap();
                    for b in 0..OB {
                        for jj in 0..TW {
                            acc[b][jj] += wv[b] * xs[jj];
                        }
                    }
                } else {
                    let mut xs = [T::zero(); TW];
                    for jj in 0..TW {
                        xs[jj] = row[start + jj * s];
                    }
                    for b in 0..OB {
                        for jj in 0..TW {
                            acc[b][jj] += wv[b] * xs[jj];
                        }
                    }
                }
            }
        }
    }
    let plane = oh * ow;
    for b in 0..OB {
        let dst = &mut out[b * plane + i * ow + j0..b * plane + i * ow + j0 + TW];
        dst.copy_from_slice(&acc[b]);
    }
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Gradients of a convolution given the upstream gradient `dy`.
/// Contributions that land in the zero padding are discarded.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    has_bias: bool,
    geom: ConvGeom,
    dy: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let out_shape = conv_output_shape(x.shape(), w.shape(), geom)?;
    dy_shape_check(dy, out_shape)?;
    let xp = pad_zero(x, geom.padding);
    let weight = weight_grad(&xp, dy, w.shape(), geom);
    let bias = has_bias.then(|| bias_grad(dy));
    let input = need_input.then(|| input_grad(x.shape(), w, geom, dy));
    Ok(ConvGrads {
        input,
        weight,
        bias,
    })
}

fn dy_shape_check<T: Scalar>(dy: &Tensor<T>, expected: Shape4) -> Result<()> {
    if dy.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            left: expected,
            right: dy.shape(),
        });
    }
    Ok(())
}

fn bias_grad<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let s = dy.shape();
    let mut db = Tensor::zeros((1, s.c, 1, 1));
    for o in 0..s.c {
        let mut acc = T::zero();
        for n in 0..s.n {
            acc += dy.plane(n, o).iter().fold(T::zero(), |a, &v| a + v);
        }
        db.data_mut()[o] = acc;
    }
    db
}

fn input_grad<T: Scalar>(
    x_shape: Shape4,
    w: &Tensor<T>,
    geom: ConvGeom,
    dy: &Tensor<T>,
) -> Tensor<T> {
    let ws = w.shape();
    let keff_h = geom.effective_kernel(ws.h);
    let keff_w = geom.effective_kernel(ws.w);
    let exact_fit = x_shape.h + 2 * geom.padding == keff_h + dy.shape().h - 1
        && x_shape.w + 2 * geom.padding == keff_w + dy.shape().w - 1;
    if geom.stride == 1 && geom.padding < keff_h && geom.padding < keff_w && keff_h == keff_w && exact_fit
    {
        // Stride-1 input gradient is a forward convolution of the padded
        // upstream gradient with the flipped, transposed kernel.
        let q = keff_h - 1 - geom.padding;
        let (o, c, kh, kw) = (ws.n, ws.c, ws.h, ws.w);
        let flipped = Tensor::from_fn((c, o, kh, kw), |ci, oi, u, v| {
            w.at(oi, ci, kh - 1 - u, kw - 1 - v)
        });
        let dyp = pad_zero(dy, q);
        let plan = Plan {
            cin: o,
            hp: dyp.shape().h,
            wp: dyp.shape().w,
            kh,
            kw,
            stride: 1,
            dilation: geom.dilation,
            oh: x_shape.h,
            ow: x_shape.w,
        };
        return forward_padded(&dyp, flipped.data(), None, x_shape, plan);
    }
    input_grad_scatter(x_shape, w, geom, dy)
}

fn input_grad_scatter<T: Scalar>(
    x_shape: Shape4,
    w: &Tensor<T>,
    geom: ConvGeom,
    dy: &Tensor<T>,
) -> Tensor<T> {
    let ws = w.shape();
    let ys = dy.shape();
    let p = geom.padding;
    let (s, d) = (geom.stride, geom.dilation);
    let (hp, wp) = (x_shape.h + 2 * p, x_shape.w + 2 * p);
    let mut dxp = Tensor::zeros(x_shape.with_hw(hp, wp));
    let item = ws.c * hp * wp;
    dxp.data_mut()
        .par_chunks_mut(item)
        .enumerate()
        .for_each(|(n, dxn)| {
            for c in 0..ws.c {
                let dxc = &mut dxn[c * hp * wp..(c + 1) * hp * wp];
                for o in 0..ws.n {
                    let g = dy.plane(n, o);
                    for u in 0..ws.h {
                        for v in 0..ws.w {
                            let wv = w.at(o, c, u, v);
                            for i in 0..ys.h {
                                let row = (i * s + u * d) * wp;
                                for j in 0..ys.w {
                                    dxc[row + j * s + v * d] += wv * g[i * ys.w + j];
                                }
                            }
                        }
                    }
                }
            }
        });
    crop(&dxp, p, x_shape.h, x_shape.w)
}

fn weight_grad<T: Scalar>(xp: &Tensor<T>, dy: &Tensor<T>, ws: Shape4, geom: ConvGeom) -> Tensor<T> {
    let ys = dy.shape();
    let xs = xp.shape();
    let ksize = ws.h * ws.w;
    let per_o = ws.c * ksize;
    let mut dw = Tensor::zeros(ws);
    dw.data_mut()
        .par_chunks_mut(OUT_BLOCK * per_o)
        .enumerate()
        .for_each(|(blk, chunk)| {
            let o0 = blk * OUT_BLOCK;
            match chunk.len() / per_o {
                4 => weight_grad_block::<T, 4>(xp, dy, xs, ys, ws, geom, o0, chunk),
                rest => {
                    for k in 0..rest {
                        let sub = &mut chunk[k * per_o..(k + 1) * per_o];
                        weight_grad_block::<T, 1>(xp, dy, xs, ys, ws, geom, o0 + k, sub);
                    }
                }
            }
        });
    dw
}

#[allow(clippy::too_many_arguments)]
fn weight_grad_block<T: Scalar, const OB: usize>(
    xp: &Tensor<T>,
    dy: &Tensor<T>,
    xs: Shape4,
    ys: Shape4,
    ws: Shape4,
    geom: ConvGeom,
    o0: usize,
    out: &mut [T],
) {
    const LANES: usize = 8;
    let (s, d) = (geom.stride, geom.dilation);
    let ksize = ws.h * ws.w;
    for c in 0..ws.c {
        for u in 0..ws.h {
            for v in 0..ws.w {
                let mut lanes = [[T::zero(); LANES]; OB];
                let mut tail = [T::zero(); OB];
                for n in 0..ys.n {
                    let xc = xp.plane(n, c);
                    let gs: [&[T]; OB] = std::array::from_fn(|b| dy.plane(n, o0 + b));
                    for i in 0..ys.h {
                        let xrow = &xc[(i * s + u * d) * xs.w + v * d..];
                        let mut j0 = 0;
                        if s == 1 {
                            while j0 + LANES <= ys.w {
                                let xv: &[T; LANES] =
                                    xrow[j0..j0 + LANES].try_into().unwrap();
                                for b in 0..OB {
                                    let g: &[T; LANES] = gs[b]
                                        [i * ys.w + j0..i * ys.w + j0 + LANES]
                                        .try_into()
                                        .unwrap();
                                    for l in 0..LANES {
                                        lanes[b][l] += g[l] * xv[l];
                                    }
                                }
                                j0 += LANES;
                            }
                        }
                        for j in j0..ys.w {
                            let xv = xrow[j * s];
                            for b in 0..OB {
                                tail[b] += gs[b][i * ys.w + j] * xv;
                            }
                        }
                    }
                }
                for b in 0..OB {
                    let total = lanes[b].iter().fold(T::zero(), |a, &v| a + v) + tail[b];
                    out[b * ws.c * ksize + c * ksize + u * ws.w + v] = total;
                }
            }
        }
    }
}
