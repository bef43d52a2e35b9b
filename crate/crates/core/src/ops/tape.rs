//! Reverse-mode differentiation tape.
//!
//! A [`Graph`] records every forward operation as a node holding its value
//! and whatever the backward rule needs. Nodes are appended in execution
//! order, so walking them in reverse visits every consumer before its
//! producers.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::loss::{self, LossConfig};
use crate::ops::conv::{self, ConvGeom};
use crate::ops::norm::{self, Mode};
use crate::ops::pool::{self, PoolKind};
use crate::ops::resample;
use crate::params::ParamStore;
use crate::tensor::{concat_channels, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BnTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
    },
    BnEval {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        var: Vec<T>,
        eps: T,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ChannelGate {
        x: Var,
        g: Var,
    },
    SpatialGate {
        x: Var,
        g: Var,
    },
    Concat(Vec<Var>),
    Upsample2x(Var),
    Pool {
        x: Var,
        kind: PoolKind,
        argmax: Vec<usize>,
    },
    BceDice {
        pred: Var,
        target: Tensor<T>,
        cfg: LossConfig,
    },
    Sum(Var),
    Dot {
        x: Var,
        weights: Tensor<T>,
    },
}

struct Node<'s, T: Scalar> {
    value: Cow<'s, Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<'s, T: Scalar = f32> {
    nodes: Vec<Node<'s, T>>,
    store: Option<&'s ParamStore<T>>,
    mode: Mode,
    param_vars: HashMap<String, Var>,
    buffer_updates: Vec<(String, Tensor<T>)>,
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: Mode) -> Self {
        Self {
            nodes: Vec::new(),
            store: Some(store),
            mode,
            param_vars: HashMap::new(),
            buffer_updates: Vec::new(),
        }
    }

    /// A graph with no parameter store, for checking bare operators.
    pub fn detached(mode: Mode) -> Self {
        Self {
            nodes: Vec::new(),
            store: None,
            mode,
            param_vars: HashMap::new(),
            buffer_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'s, Tensor<T>>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Cow::Owned(value), op, needs)
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    fn store(&self) -> Result<&'s ParamStore<T>> {
        self.store
            .ok_or_else(|| Error::InvalidArgument("graph has no parameter store".into()))
    }

    /// Trainable parameter by name; repeated lookups share one node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let t = self.store()?.param(name)?;
        let v = self.push(Cow::Borrowed(t), Op::Leaf, true);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn buffer(&self, name: &str) -> Result<&'s Tensor<T>> {
        self.store()?.buffer(name)
    }

    pub fn record_buffer_update(&mut self, name: &str, value: Tensor<T>) {
        self.buffer_updates.push((name.to_string(), value));
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(String, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let y = conv::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push_op(y, Op::Conv { x, w, b, geom }, &inputs))
    }

    /// Training-mode batch norm; also returns the batch mean and biased
    /// variance so the caller can update running statistics.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let out = norm::bn_train_forward(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        )?;
        let op = Op::BnTrain {
            x,
            gamma,
            beta,
            xhat: out.xhat,
            inv_std: out.inv_std,
        };
        let v = self.push_op(out.y, op, &[x, gamma, beta]);
        Ok((v, out.mean, out.var))
    }

    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let y = norm::bn_eval_forward(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            mean,
            var,
            eps,
        )?;
        let op = Op::BnEval {
            x,
            gamma,
            beta,
            mean: mean.to_vec(),
            var: var.to_vec(),
            eps,
        };
        Ok(self.push_op(y, op, &[x, gamma, beta]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).relu();
        self.push_op(y, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).sigmoid();
        self.push_op(y, Op::Sigmoid(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.push_op(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).sub(self.value(b))?;
        Ok(self.push_op(y, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).mul(self.value(b))?;
        Ok(self.push_op(y, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let y = self.value(x).scale(s);
        self.push_op(y, Op::Scale(x, s), &[x])
    }

    pub fn channel_gate(&mut self, x: Var, g: Var) -> Result<Var> {
        let y = pool::mul_channel_gate(self.value(x), self.value(g))?;
        Ok(self.push_op(y, Op::ChannelGate { x, g }, &[x, g]))
    }

    pub fn spatial_gate(&mut self, x: Var, g: Var) -> Result<Var> {
        let y = pool::mul_spatial_gate(self.value(x), self.value(g))?;
        Ok(self.push_op(y, Op::SpatialGate { x, g }, &[x, g]))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let y = concat_channels(&tensors)?;
        Ok(self.push_op(y, Op::Concat(parts.to_vec()), parts))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let y = resample::bilinear_upsample2x(self.value(x))?;
        Ok(self.push_op(y, Op::Upsample2x(x), &[x]))
    }

    pub fn pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let p = pool::pool_with_indices(self.value(x), kind)?;
        let op = Op::Pool {
            x,
            kind,
            argmax: p.argmax,
        };
        Ok(self.push_op(p.out, op, &[x]))
    }

    /// Scalar `(1,1,1,1)` loss node.
    pub fn bce_dice(&mut self, pred: Var, target: &Tensor<T>, cfg: LossConfig) -> Result<Var> {
        let l = loss::bce_dice_loss(self.value(pred), target, &cfg)?;
        let op = Op::BceDice {
            pred,
            target: target.clone(),
            cfg,
        };
        Ok(self.push_op(Tensor::full((1, 1, 1, 1), T::of(l)), op, &[pred]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push_op(Tensor::full((1, 1, 1, 1), s), Op::Sum(x), &[x])
    }

    /// `sum(x * weights)` with constant weights.
    pub fn dot(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        let s = self.value(x).mul(&weights)?.sum();
        Ok(self.push_op(Tensor::full((1, 1, 1, 1), s), Op::Dot { x, weights }, &[x]))
    }

    /// Reverse sweep from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Tensor::ones(self.value(root).shape()));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.backward_node(node, &dy, &mut grads)?;
        }

        let params = self
            .param_vars
            .iter()
            .filter_map(|(name, v)| grads[v.0].take().map(|g| (name.clone(), g)))
            .collect();
        Ok(Gradients { leaves: grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].needs_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(
        &self,
        node: &Node<'s, T>,
        dy: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let g = conv::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    b.is_some(),
                    *geom,
                    dy,
                    self.needs(*x),
                )?;
                if let Some(dx) = g.input {
                    self.accumulate(grads, *x, dx)?;
                }
                self.accumulate(grads, *w, g.weight)?;
                if let (Some(b), Some(db)) = (b, g.bias) {
                    self.accumulate(grads, *b, db)?;
                }
            }
            Op::BnTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gm = self.value(*gamma);
                let g = norm::bn_train_backward(dy, xhat, inv_std, gm.data());
                self.accumulate(grads, *x, g.input)?;
                self.accumulate(grads, *gamma, Tensor::from_values(gm.shape(), g.gamma)?)?;
                self.accumulate(grads, *beta, Tensor::from_values(gm.shape(), g.beta)?)?;
            }
            Op::BnEval {
                x,
                gamma,
                beta,
                mean,
                var,
                eps,
            } => {
                let gm = self.value(*gamma);
                let g = norm::bn_eval_backward(dy, self.value(*x), gm.data(), mean, var, *eps);
                self.accumulate(grads, *x, g.input)?;
                self.accumulate(grads, *gamma, Tensor::from_values(gm.shape(), g.gamma)?)?;
                self.accumulate(grads, *beta, Tensor::from_values(gm.shape(), g.beta)?)?;
            }
            Op::Relu(x) => {
                let dx = self
                    .value(*x)
                    .zip_map(dy, "relu_backward", |v, g| if v > T::zero() { g } else { T::zero() })?;
                self.accumulate(grads, *x, dx)?;
            }
            Op::Sigmoid(x) => {
                let dx = node
                    .value
                    .zip_map(dy, "sigmoid_backward", |s, g| g * s * (T::one() - s))?;
                self.accumulate(grads, *x, dx)?;
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.clone())?;
                self.accumulate(grads, *b, dy.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, dy.clone())?;
                self.accumulate(grads, *b, dy.scale(-T::one()))?;
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, dy.mul(self.value(*b))?)?;
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, dy.mul(self.value(*a))?)?;
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, dy.scale(*s))?,
            Op::ChannelGate { x, g } => {
                let (dx, dg) = pool::mul_channel_gate_backward(self.value(*x), self.value(*g), dy);
                self.accumulate(grads, *x, dx)?;
                self.accumulate(grads, *g, dg)?;
            }
            Op::SpatialGate { x, g } => {
                let (dx, dg) = pool::mul_spatial_gate_backward(self.value(*x), self.value(*g), dy);
                self.accumulate(grads, *x, dx)?;
                self.accumulate(grads, *g, dg)?;
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let c = self.value(p).shape().c;
                    if self.needs(p) {
                        self.accumulate(grads, p, dy.slice_channels(start, c)?)?;
                    }
                    start += c;
                }
            }
            Op::Upsample2x(x) => {
                self.accumulate(grads, *x, resample::bilinear_upsample2x_backward(dy))?;
            }
            Op::Pool { x, kind, argmax } => {
                let dx = pool::pool_backward(self.value(*x).shape(), *kind, argmax, dy);
                self.accumulate(grads, *x, dx)?;
            }
            Op::BceDice { pred, target, cfg } => {
                let up = dy.data()[0].as_f64();
                let dp = loss::bce_dice_backward(self.value(*pred), target, cfg, up)?;
                self.accumulate(grads, *pred, dp)?;
            }
            Op::Sum(x) => {
                let g = dy.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.value(*x).shape(), g))?;
            }
            Op::Dot { x, weights } => {
                let g = dy.data()[0];
                self.accumulate(grads, *x, weights.scale(g))?;
            }
        }
        Ok(())
    }
}

pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a tracked leaf created with [`Graph::variable`].
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    /// Parameter gradients in sorted name order.
    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<T>> {
        self.params
    }
}
