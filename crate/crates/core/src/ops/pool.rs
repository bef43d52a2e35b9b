//! Reductions used by attention and encoder downsampling, and the
//! broadcast multiplies that apply attention gates.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    /// Mean over H, W -> `(N, C, 1, 1)`.
    GlobalAvg,
    /// Max over H, W -> `(N, C, 1, 1)`.
    GlobalMax,
    /// Mean over C -> `(N, 1, H, W)`.
    ChannelAvg,
    /// Max over C -> `(N, 1, H, W)`.
    ChannelMax,
    /// 2x2 windows, stride 2.
    MaxPool2x,
}

/// Pooled values plus, for max kinds, the flat input index of each winner.
pub struct Pooled<T> {
    pub out: Tensor<T>,
    pub argmax: Vec<usize>,
}

pub fn pool<T: Scalar>(x: &Tensor<T>, kind: PoolKind) -> Result<Tensor<T>> {
    pool_with_indices(x, kind).map(|p| p.out)
}

pub fn pool_with_indices<T: Scalar>(x: &Tensor<T>, kind: PoolKind) -> Result<Pooled<T>> {
    let s = x.shape();
    if s.numel() == 0 {
        return Err(Error::InvalidShape {
            op: "pool",
            shape: s,
            reason: "empty tensor".into(),
        });
    }
    let d = x.data();
    let plane = s.plane();
    let mut argmax = Vec::new();
    let out = match kind {
        PoolKind::GlobalAvg => {
            let denom = T::of(plane as f64);
            Tensor::from_fn((s.n, s.c, 1, 1), |n, c, _, _| {
                x.plane(n, c).iter().fold(T::zero(), |a, &v| a + v) / denom
            })
        }
        PoolKind::GlobalMax => {
            let mut out = Tensor::zeros((s.n, s.c, 1, 1));
            for n in 0..s.n {
                for c in 0..s.c {
                    let base = s.index(n, c, 0, 0);
                    let best = argmax_in(&d[base..base + plane]);
                    argmax.push(base + best);
                    out.data_mut()[n * s.c + c] = d[base + best];
                }
            }
            out
        }
        PoolKind::ChannelAvg => {
            let denom = T::of(s.c as f64);
            Tensor::from_fn((s.n, 1, s.h, s.w), |n, _, h, w| {
                (0..s.c).fold(T::zero(), |a, c| a + x.at(n, c, h, w)) / denom
            })
        }
        PoolKind::ChannelMax => {
            let mut out = Tensor::zeros((s.n, 1, s.h, s.w));
            for n in 0..s.n {
                for p in 0..plane {
                    let mut best = s.index(n, 0, 0, 0) + p;
                    for c in 1..s.c {
                        let i = s.index(n, c, 0, 0) + p;
                        if d[i] > d[best] {
                            best = i;
                        }
                    }
                    argmax.push(best);
                    out.data_mut()[n * plane + p] = d[best];
                }
            }
            out
        }
        PoolKind::MaxPool2x => {
            if s.h % 2 != 0 || s.w % 2 != 0 {
                return Err(Error::InvalidShape {
                    op: "maxpool2x",
                    shape: s,
                    reason: "H and W must be even".into(),
                });
            }
            let (oh, ow) = (s.h / 2, s.w / 2);
            let mut out = Tensor::zeros(s.with_hw(oh, ow));
            let mut k = 0;
            for n in 0..s.n {
                for c in 0..s.c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut best = s.index(n, c, 2 * i, 2 * j);
                            for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                                let idx = s.index(n, c, 2 * i + di, 2 * j + dj);
                                if d[idx] > d[best] {
                                    best = idx;
                                }
                            }
                            argmax.push(best);
                            out.data_mut()[k] = d[best];
                            k += 1;
                        }
                    }
                }
            }
            out
        }
    };
    Ok(Pooled { out, argmax })
}

fn argmax_in<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Gradient of a pooling op with respect to its input.
pub fn pool_backward<T: Scalar>(
    input_shape: Shape4,
    kind: PoolKind,
    argmax: &[usize],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let s = input_shape;
    let mut dx = Tensor::zeros(s);
    match kind {
        PoolKind::GlobalAvg => {
            let denom = T::of(s.plane() as f64);
            for n in 0..s.n {
                for c in 0..s.c {
                    let g = dy.data()[n * s.c + c] / denom;
                    dx.plane_mut(n, c).iter_mut().for_each(|v| *v = g);
                }
            }
        }
        PoolKind::ChannelAvg => {
            let denom = T::of(s.c as f64);
            for n in 0..s.n {
                for c in 0..s.c {
                    for h in 0..s.h {
                        for w in 0..s.w {
                            dx.set(n, c, h, w, dy.at(n, 0, h, w) / denom);
                        }
                    }
                }
            }
        }
        PoolKind::GlobalMax | PoolKind::ChannelMax | PoolKind::MaxPool2x => {
            let out = dx.data_mut();
            for (&src, &g) in argmax.iter().zip(dy.data()) {
                out[src] += g;
            }
        }
    }
    dx
}

/// `x * g` with `g` of shape `(N, C, 1, 1)` broadcast over H, W.
pub fn mul_channel_gate<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let gs = g.shape();
    if gs != Shape4::new(s.n, s.c, 1, 1) {
        return Err(Error::ShapeMismatch {
            op: "mul_channel_gate",
            left: s,
            right: gs,
        });
    }
    let mut out = x.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let k = g.data()[n * s.c + c];
            out.plane_mut(n, c).iter_mut().for_each(|v| *v *= k);
        }
    }
    Ok(out)
}

/// Gradients `(dx, dg)` of [`mul_channel_gate`].
pub fn mul_channel_gate_backward<T: Scalar>(
    x: &Tensor<T>,
    g: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let s = x.shape();
    let mut dx = dy.clone();
    let mut dg = Tensor::zeros(g.shape());
    for n in 0..s.n {
        for c in 0..s.c {
            let k = g.data()[n * s.c + c];
            let acc = dy
                .plane(n, c)
                .iter()
                .zip(x.plane(n, c))
                .fold(T::zero(), |a, (&gy, &xv)| a + gy * xv);
            dg.data_mut()[n * s.c + c] = acc;
            dx.plane_mut(n, c).iter_mut().for_each(|v| *v *= k);
        }
    }
    (dx, dg)
}

/// `x * g` with `g` of shape `(N, 1, H, W)` broadcast over C.
pub fn mul_spatial_gate<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let gs = g.shape();
    if gs != Shape4::new(s.n, 1, s.h, s.w) {
        return Err(Error::ShapeMismatch {
            op: "mul_spatial_gate",
            left: s,
            right: gs,
        });
    }
    let mut out = x.clone();
    for n in 0..s.n {
        let gp = g.plane(n, 0).to_vec();
        for c in 0..s.c {
            for (v, &k) in out.plane_mut(n, c).iter_mut().zip(&gp) {
                *v *= k;
            }
        }
    }
    Ok(out)
}

pub fn mul_spatial_gate_backward<T: Scalar>(
    x: &Tensor<T>,
    g: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let s = x.shape();
    let mut dx = Tensor::zeros(s);
    let mut dg = Tensor::zeros(g.shape());
    for n in 0..s.n {
        let gp = g.plane(n, 0).to_vec();
        for c in 0..s.c {
            let gy = dy.plane(n, c);
            let xv = x.plane(n, c);
            for (p, v) in dx.plane_mut(n, c).iter_mut().enumerate() {
                *v = gy[p] * gp[p];
            }
            let dgp = dg.plane_mut(n, 0);
            for p in 0..s.plane() {
                dgp[p] += gy[p] * xv[p];
            }
        }
    }
    (dx, dg)
}
