use crate::error::{Error, Result};
use crate::ops::conv::ConvGeom;
use crate::ops::norm::{self, DEFAULT_EPS, DEFAULT_MOMENTUM};
use crate::ops::tape::{Graph, Var};
use crate::params::{Init, ParamStore};
use crate::tensor::{Scalar, Shape4, Tensor};

/// Registers parameters for blocks as they are constructed.
pub struct Builder<'a> {
    store: &'a mut ParamStore<f32>,
    init: Init,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore<f32>, seed: u64) -> Self {
        Self {
            store,
            init: Init::new(seed),
            bn_eps: DEFAULT_EPS,
            bn_momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn store(&mut self) -> &mut ParamStore<f32> {
        self.store
    }

    pub fn conv(
        &mut self,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: ConvGeom,
        bias: bool,
    ) -> Result<Conv2d> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 {
            return Err(Error::Config(format!(
                "{name}: conv needs positive channels and kernel ({in_channels}->{out_channels}, k={kernel})"
            )));
        }
        let weight = format!("{name}.weight");
        let wshape = Shape4::new(out_channels, in_channels, kernel, kernel);
        let w = self.init.kaiming_uniform(&weight, wshape);
        self.store.insert_param(&weight, w)?;
        let bias = if bias {
            let b = format!("{name}.bias");
            self.store.insert_param(&b, Tensor::zeros((1, out_channels, 1, 1)))?;
            Some(b)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            geom,
        })
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize) -> Result<BatchNorm2d> {
        let shape = Shape4::new(1, channels, 1, 1);
        let bn = BatchNorm2d {
            gamma: format!("{name}.gamma"),
            beta: format!("{name}.beta"),
            running_mean: format!("{name}.running_mean"),
            running_var: format!("{name}.running_var"),
            channels,
            eps: self.bn_eps,
            momentum: self.bn_momentum,
        };
        self.store.insert_param(&bn.gamma, Tensor::ones(shape))?;
        self.store.insert_param(&bn.beta, Tensor::zeros(shape))?;
        self.store.insert_buffer(&bn.running_mean, Tensor::zeros(shape))?;
        self.store.insert_buffer(&bn.running_var, Tensor::ones(shape))?;
        Ok(bn)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: String,
    pub bias: Option<String>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub geom: ConvGeom,
}

impl Conv2d {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(&self.weight)?;
        let b = self.bias.as_deref().map(|b| g.param(b)).transpose()?;
        g.conv2d(x, w, b, self.geom)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: String,
    pub beta: String,
    pub running_mean: String,
    pub running_var: String,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    /// Train mode normalizes with batch statistics and records updated
    /// running statistics on the graph; eval mode uses the stored ones.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gamma = g.param(&self.gamma)?;
        let beta = g.param(&self.beta)?;
        let mean = g.buffer(&self.running_mean)?;
        let var = g.buffer(&self.running_var)?;
        if g.is_training() {
            let (y, bmean, bvar) = g.batch_norm_train(x, gamma, beta, T::of(self.eps))?;
            let s = g.value(x).shape();
            let mut rm = mean.clone();
            let mut rv = var.clone();
            norm::update_running(
                rm.data_mut(),
                rv.data_mut(),
                &bmean,
                &bvar,
                s.n * s.h * s.w,
                T::of(self.momentum),
            );
            g.record_buffer_update(&self.running_mean, rm);
            g.record_buffer_update(&self.running_var, rv);
            Ok(y)
        } else {
            g.batch_norm_eval(x, gamma, beta, mean.data(), var.data(), T::of(self.eps))
        }
    }
}

/// Convolution, batch norm, ReLU. The convolution has no bias since batch
/// norm removes it.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    /// `k x k` kernel with "same" padding `(k - 1) / 2` at the given stride.
    pub fn new(
        b: &mut Builder<'_>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let geom = ConvGeom::new(stride, (kernel - 1) / 2, 1);
        Self::with_geom(b, name, in_channels, out_channels, kernel, geom)
    }

    /// 3x3 kernel at dilation `d` with padding `d`.
    pub fn dilated(
        b: &mut Builder<'_>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        dilation: usize,
    ) -> Result<Self> {
        Self::with_geom(b, name, in_channels, out_channels, 3, ConvGeom::same(3, dilation))
    }

    fn with_geom(
        b: &mut Builder<'_>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: ConvGeom,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("{name}: kernel {kernel} must be odd")));
        }
        Ok(Self {
            conv: b.conv(&format!("{name}.conv"), in_channels, out_channels, kernel, geom, false)?,
            bn: b.batch_norm(&format!("{name}.bn"), out_channels)?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        let y = self.bn.forward(g, y)?;
        Ok(g.relu(y))
    }
}

/// Two 3x3 conv-BN stages with a shortcut, ReLU after the addition. The
/// shortcut is a 1x1 conv + BN when the channel count or stride changes.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: ConvBnRelu,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub shortcut: Option<(Conv2d, BatchNorm2d)>,
}

impl ResidualBlock {
    pub fn new(
        b: &mut Builder<'_>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Result<Self> {
        let conv1 = ConvBnRelu::new(b, &format!("{name}.conv1"), in_channels, out_channels, 3, stride)?;
        let conv2 = b.conv(
            &format!("{name}.conv2.conv"),
            out_channels,
            out_channels,
            3,
            ConvGeom::same(3, 1),
            false,
        )?;
        let bn2 = b.batch_norm(&format!("{name}.conv2.bn"), out_channels)?;
        let shortcut = if in_channels != out_channels || stride != 1 {
            Some((
                b.conv(
                    &format!("{name}.shortcut.conv"),
                    in_channels,
                    out_channels,
                    1,
                    ConvGeom::new(stride, 0, 1),
                    false,
                )?,
                b.batch_norm(&format!("{name}.shortcut.bn"), out_channels)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1,
            conv2,
            bn2,
            shortcut,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(g, x)?;
        let y = self.conv2.forward(g, y)?;
        let y = self.bn2.forward(g, y)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(g, x)?;
                bn.forward(g, s)?
            }
            None => x,
        };
        let sum = g.add(y, skip)?;
        Ok(g.relu(sum))
    }
}
