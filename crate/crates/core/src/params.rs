//! Named parameter and buffer storage with deterministic iteration order.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{Scalar, Shape4, Tensor};

/// Trainable parameters plus non-trainable buffers (batch-norm running
/// statistics). Both maps iterate in sorted name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T = f32> {
    params: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn insert_param(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.params.insert(name, t);
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::Config(format!("duplicate buffer name `{name}`")));
        }
        self.buffers.insert(name, t);
        Ok(())
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.buffers
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name) || self.buffers.contains_key(name)
    }

    /// Number of trainable scalars.
    pub fn count_params(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Overwrite buffers with values produced by a training forward pass.
    pub fn apply_buffer_updates(&mut self, updates: Vec<(String, Tensor<T>)>) -> Result<()> {
        for (name, value) in updates {
            let slot = self.buffer_mut(&name)?;
            slot.expect_same_shape(&value, "apply_buffer_updates")?;
            *slot = value;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().chain(self.buffers.values()).all(Tensor::is_finite)
    }
}

/// Seeded parameter initializer. Each tensor draws from its own stream keyed
/// by name, so values do not depend on construction order.
#[derive(Debug, Clone, Copy)]
pub struct Init {
    pub seed: u64,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn rng(&self, name: &str) -> ChaCha8Rng {
        stream(self.seed, &[b"param", name.as_bytes()])
    }

    /// Kaiming-uniform for ReLU networks: `U(-b, b)`, `b = sqrt(6 / fan_in)`.
    pub fn kaiming_uniform(&self, name: &str, shape: Shape4) -> Tensor<f32> {
        let fan_in = (shape.c * shape.h * shape.w).max(1) as f64;
        let bound = (6.0 / fan_in).sqrt() as f32;
        let mut rng = self.rng(name);
        Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-bound..bound))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_iteration_and_counts() {
        let mut s = ParamStore::<f32>::new();
        s.insert_param("b.weight", Tensor::zeros((1, 3, 1, 1))).unwrap();
        s.insert_param("a.weight", Tensor::zeros((2, 1, 1, 1))).unwrap();
        s.insert_buffer("a.running_mean", Tensor::zeros((1, 2, 1, 1))).unwrap();
        let names: Vec<_> = s.params().map(|(n, _)| n.to_string()).collect();
        assert_eq!(names, ["a.weight", "b.weight"]);
        assert_eq!(s.count_params(), 5);
        assert!(s.insert_param("a.weight", Tensor::zeros((1, 1, 1, 1))).is_err());
        assert!(matches!(s.param("nope"), Err(Error::UnknownParam(_))));
    }

    #[test]
    fn init_is_keyed_by_name() {
        let init = Init::new(9);
        let a = init.kaiming_uniform("x", Shape4::new(4, 3, 3, 3));
        let b = init.kaiming_uniform("x", Shape4::new(4, 3, 3, 3));
        let c = init.kaiming_uniform("y", Shape4::new(4, 3, 3, 3));
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (6.0f32 / 27.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
    }
}
