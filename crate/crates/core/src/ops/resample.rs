//! Bilinear and nearest-neighbour resampling with half-pixel centers.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor};

/// One output coordinate's two source taps along an axis.
#[derive(Debug, Clone, Copy)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    frac: T,
}

/// Source coordinate `(dst + 0.5) * in/out - 0.5`, clamped to the border.
fn axis_taps<T: Scalar>(input: usize, output: usize) -> Vec<Tap<T>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|dst| {
            let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: T::of(src - lo as f64),
            }
        })
        .collect()
}

fn check_target(x: Shape4, h: usize, w: usize, op: &'static str) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("{op}: zero target size {h}x{w}")));
    }
    if x.h == 0 || x.w == 0 {
        return Err(Error::InvalidShape {
            op,
            shape: x,
            reason: "empty spatial extent".into(),
        });
    }
    Ok(())
}

/// Bilinear resize. Interpolation is evaluated in lerp form
/// `a + f * (b - a)` so constant fields are reproduced exactly.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    check_target(s, h, w, "resize_bilinear")?;
    let ty = axis_taps::<T>(s.h, h);
    let tx = axis_taps::<T>(s.w, w);
    let mut out = Tensor::zeros(s.with_hw(h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (i, ry) in ty.iter().enumerate() {
                let top = &src[ry.lo * s.w..(ry.lo + 1) * s.w];
                let bot = &src[ry.hi * s.w..(ry.hi + 1) * s.w];
                for (j, rx) in tx.iter().enumerate() {
                    let t = top[rx.lo] + rx.frac * (top[rx.hi] - top[rx.lo]);
                    let b = bot[rx.lo] + rx.frac * (bot[rx.hi] - bot[rx.lo]);
                    dst[i * w + j] = t + ry.frac * (b - t);
                }
            }
        }
    }
    Ok(out)
}

/// Transpose of [`resize_bilinear`]: scatters `dy` back onto the source grid.
pub fn resize_bilinear_backward<T: Scalar>(dy: &Tensor<T>, in_h: usize, in_w: usize) -> Tensor<T> {
    let s = dy.shape();
    let ty = axis_taps::<T>(in_h, s.h);
    let tx = axis_taps::<T>(in_w, s.w);
    let mut dx = Tensor::zeros(s.with_hw(in_h, in_w));
    for n in 0..s.n {
        for c in 0..s.c {
            let g = dy.plane(n, c);
            let dst = dx.plane_mut(n, c);
            for (i, ry) in ty.iter().enumerate() {
                let wy = [T::one() - ry.frac, ry.frac];
                for (j, rx) in tx.iter().enumerate() {
                    let v = g[i * s.w + j];
                    let wx = [T::one() - rx.frac, rx.frac];
                    dst[ry.lo * in_w + rx.lo] += v * wy[0] * wx[0];
                    dst[ry.lo * in_w + rx.hi] += v * wy[0] * wx[1];
                    dst[ry.hi * in_w + rx.lo] += v * wy[1] * wx[0];
                    dst[ry.hi * in_w + rx.hi] += v * wy[1] * wx[1];
                }
            }
        }
    }
    dx
}

pub fn bilinear_upsample2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    resize_bilinear(x, 2 * s.h, 2 * s.w)
}

pub fn bilinear_upsample2x_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let s = dy.shape();
    resize_bilinear_backward(dy, s.h / 2, s.w / 2)
}

/// Nearest-neighbour resize; source index `floor((dst + 0.5) * in/out)`.
pub fn resize_nearest<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    check_target(s, h, w, "resize_nearest")?;
    let pick = |input: usize, output: usize| -> Vec<usize> {
        (0..output)
            .map(|d| (((d as f64 + 0.5) * input as f64 / output as f64) as usize).min(input - 1))
            .collect()
    };
    let ry = pick(s.h, h);
    let rx = pick(s.w, w);
    let mut out = Tensor::zeros(s.with_hw(h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (i, &sy) in ry.iter().enumerate() {
                for (j, &sx) in rx.iter().enumerate() {
                    dst[i * w + j] = src[sy * s.w + sx];
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Per-pixel evaluation of the half-pixel sampling rule.
    fn reference_pixel(src: &[[f64; 2]; 2], i: usize, j: usize) -> f64 {
        let coord = |d: usize| {
            let s = ((d as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
            let lo = s.floor() as usize;
            (lo, (lo + 1).min(1), s - lo as f64)
        };
        let (y0, y1, fy) = coord(i);
        let (x0, x1, fx) = coord(j);
        (1.0 - fy) * ((1.0 - fx) * src[y0][x0] + fx * src[y0][x1])
            + fy * ((1.0 - fx) * src[y1][x0] + fx * src[y1][x1])
    }

    #[test]
    fn two_by_two_grid() {
        let src = [[1.0, 2.0], [3.0, 4.0]];
        let x = Tensor::<f64>::from_values((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = bilinear_upsample2x(&x).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 4, 4));
        for i in 0..4 {
            for j in 0..4 {
                assert!((y.at(0, 0, i, j) - reference_pixel(&src, i, j)).abs() < 1e-12);
            }
        }
        assert_eq!(&y.data()[..4], &[1.0, 1.25, 1.75, 2.0]);
    }

    #[test]
    fn constants_are_preserved_exactly() {
        let y = bilinear_upsample2x(&Tensor::<f32>::full((1, 1, 1, 1), 5.0)).unwrap();
        assert_eq!(y.data(), &[5.0; 4]);
        for v in [0.1f32, -3.7, 1.0 / 3.0, 123.456] {
            let x = Tensor::<f32>::full((2, 3, 5, 3), v);
            let y = bilinear_upsample2x(&x).unwrap();
            assert!(y.data().iter().all(|&u| u == v));
        }
    }

    #[test]
    fn backward_is_transpose() {
        let x = Tensor::<f64>::from_fn((1, 2, 3, 5), |_, c, h, w| (c * 7 + h * 3 + w) as f64 * 0.37 - 1.0);
        let y = bilinear_upsample2x(&x).unwrap();
        let dy = Tensor::<f64>::from_fn(y.shape(), |_, c, h, w| ((c + h * w) % 5) as f64 - 2.0);
        let dx = bilinear_upsample2x_backward(&dy);
        let lhs: f64 = dy.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = dx.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn nearest_keeps_binary_values() {
        let m = Tensor::<f32>::from_fn((1, 1, 7, 5), |_, _, h, w| ((h + w) % 2) as f32);
        let r = resize_nearest(&m, 16, 16).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(resize_nearest(&m, 0, 4).is_err());
    }
}
