//! Per-channel batch normalization over (N, H, W).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct BatchNormState<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
    pub mode: Mode,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::of(DEFAULT_EPS),
            momentum: T::of(DEFAULT_MOMENTUM),
            mode: Mode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Normalize `x`; in train mode the running statistics are updated.
pub fn batchnorm2d<T: Scalar>(x: &Tensor<T>, st: &mut BatchNormState<T>) -> Result<Tensor<T>> {
    match st.mode {
        Mode::Train => {
            let out = bn_train_forward(x, &st.gamma, &st.beta, st.eps)?;
            let s = x.shape();
            update_running(
                &mut st.running_mean,
                &mut st.running_var,
                &out.mean,
                &out.var,
                s.n * s.h * s.w,
                st.momentum,
            );
            Ok(out.y)
        }
        Mode::Eval => bn_eval_forward(
            x,
            &st.gamma,
            &st.beta,
            &st.running_mean,
            &st.running_var,
            st.eps,
        ),
    }
}

/// Exponential moving average; the variance estimate is unbiased.
pub fn update_running<T: Scalar>(
    running_mean: &mut [T],
    running_var: &mut [T],
    batch_mean: &[T],
    batch_var: &[T],
    count: usize,
    momentum: T,
) {
    let unbias = if count > 1 {
        T::of(count as f64 / (count - 1) as f64)
    } else {
        T::one()
    };
    let keep = T::one() - momentum;
    for c in 0..running_mean.len() {
        running_mean[c] = keep * running_mean[c] + momentum * batch_mean[c];
        running_var[c] = keep * running_var[c] + momentum * batch_var[c] * unbias;
    }
}

pub struct BnTrainOutput<T> {
    pub y: Tensor<T>,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
}

fn check_channels<T: Scalar>(x: &Tensor<T>, channels: usize) -> Result<()> {
    if x.shape().c != channels {
        return Err(Error::ChannelMismatch {
            op: "batchnorm2d",
            expected: channels,
            got: x.shape().c,
        });
    }
    Ok(())
}

pub fn bn_train_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<BnTrainOutput<T>> {
    check_channels(x, gamma.len())?;
    let s = x.shape();
    let count = T::of((s.n * s.h * s.w) as f64);
    let mut y = Tensor::zeros(s);
    let mut xhat = Tensor::zeros(s);
    let mut inv_std = vec![T::zero(); s.c];
    let mut mean = vec![T::zero(); s.c];
    let mut var = vec![T::zero(); s.c];
    for c in 0..s.c {
        let mut sum = T::zero();
        for n in 0..s.n {
            sum += x.plane(n, c).iter().fold(T::zero(), |a, &v| a + v);
        }
        let m = sum / count;
        let mut sq = T::zero();
        for n in 0..s.n {
            sq += x.plane(n, c).iter().fold(T::zero(), |a, &v| a + (v - m) * (v - m));
        }
        let v = sq / count;
        let is = T::one() / (v + eps).sqrt();
        for n in 0..s.n {
            let src = x.plane(n, c);
            let xh = xhat.plane_mut(n, c);
            for (dst, &v) in xh.iter_mut().zip(src) {
                *dst = (v - m) * is;
            }
            let xh = xhat.plane(n, c).to_vec();
            for (dst, v) in y.plane_mut(n, c).iter_mut().zip(xh) {
                *dst = gamma[c] * v + beta[c];
            }
        }
        mean[c] = m;
        var[c] = v;
        inv_std[c] = is;
    }
    Ok(BnTrainOutput {
        y,
        xhat,
        inv_std,
        mean,
        var,
    })
}

pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub fn bn_train_backward<T: Scalar>(
    dy: &Tensor<T>,
    xhat: &Tensor<T>,
    inv_std: &[T],
    gamma: &[T],
) -> BnGrads<T> {
    let s = dy.shape();
    let count = T::of((s.n * s.h * s.w) as f64);
    let mut dx = Tensor::zeros(s);
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    for c in 0..s.c {
        let (mut dg, mut db) = (T::zero(), T::zero());
        for n in 0..s.n {
            for (&g, &xh) in dy.plane(n, c).iter().zip(xhat.plane(n, c)) {
                dg += g * xh;
                db += g;
            }
        }
        let k = gamma[c] * inv_std[c] / count;
        for n in 0..s.n {
            let g = dy.plane(n, c);
            let xh = xhat.plane(n, c);
            for (i, dst) in dx.plane_mut(n, c).iter_mut().enumerate() {
                *dst = k * (count * g[i] - db - xh[i] * dg);
            }
        }
        dgamma[c] = dg;
        dbeta[c] = db;
    }
    BnGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}

pub fn bn_eval_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    check_channels(x, gamma.len())?;
    let s = x.shape();
    let mut y = Tensor::zeros(s);
    for c in 0..s.c {
        let is = T::one() / (var[c] + eps).sqrt();
        for n in 0..s.n {
            let src = x.plane(n, c).to_vec();
            for (dst, v) in y.plane_mut(n, c).iter_mut().zip(src) {
                *dst = gamma[c] * ((v - mean[c]) * is) + beta[c];
            }
        }
    }
    Ok(y)
}

pub fn bn_eval_backward<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    gamma: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> BnGrads<T> {
    let s = dy.shape();
    let mut dx = Tensor::zeros(s);
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    for c in 0..s.c {
        let is = T::one() / (var[c] + eps).sqrt();
        for n in 0..s.n {
            let g = dy.plane(n, c).to_vec();
            let xs = x.plane(n, c);
            for (i, dst) in dx.plane_mut(n, c).iter_mut().enumerate() {
                *dst = g[i] * gamma[c] * is;
                dgamma[c] += g[i] * (xs[i] - mean[c]) * is;
                dbeta[c] += g[i];
            }
        }
    }
    BnGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}
