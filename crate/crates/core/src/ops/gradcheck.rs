//! Central finite-difference gradient checking in `f64`.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::norm::Mode;
use crate::ops::tape::{Graph, Var};
use crate::params::ParamStore;
use crate::rng::stream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Steps tried per coordinate, each scaled by `max(1, |theta|)`. Small
    /// steps avoid ReLU and max-pool kinks, large ones avoid round-off on
    /// tiny gradients. The smallest error over the ladder is kept.
    pub rel_steps: [f64; 5],
    /// Stop trying further steps once a coordinate is below this error.
    pub accept: f64,
    /// Coordinates sampled per tensor; smaller tensors are checked fully.
    pub coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            rel_steps: [1e-6, 1e-5, 1e-4, 1e-3, 1e-2],
            accept: 1e-6,
            coords_per_tensor: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    fn merge(&mut self, other: GradCheckReport) {
        if other.worst.is_some() && (self.worst.is_none() || other.max_rel_error > self.max_rel_error) {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.coords_checked += other.coords_checked;
    }

    fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            worst: None,
            coords_checked: 0,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compare `analytic` against central differences of `f` at `theta`.
pub fn check_gradient<F>(
    theta: &[f64],
    analytic: &[f64],
    mut f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if theta.len() != analytic.len() {
        return Err(Error::LengthMismatch {
            expected: theta.len(),
            got: analytic.len(),
        });
    }
    let mut rng = stream(cfg.seed, &[b"gradcheck"]);
    let coords = pick_coords(theta.len(), cfg.coords_per_tensor, &mut rng);
    let mut report = GradCheckReport::empty();
    let mut probe = theta.to_vec();
    for i in coords {
        let mut err = f64::INFINITY;
        for rel in cfg.rel_steps {
            let h = rel * theta[i].abs().max(1.0);
            probe[i] = theta[i] + h;
            let up = finite(f(&probe)?)?;
            probe[i] = theta[i] - h;
            let down = finite(f(&probe)?)?;
            probe[i] = theta[i];
            err = err.min(relative_error(analytic[i], (up - down) / (2.0 * h)));
            if err < cfg.accept {
                break;
            }
        }
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err;
            report.worst = Some((String::new(), i));
        }
        report.coords_checked += 1;
    }
    Ok(report)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("gradient check objective".into()))
    }
}

fn pick_coords(len: usize, limit: usize, rng: &mut impl Rng) -> Vec<usize> {
    if len <= limit {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, limit).into_vec();
        v.sort_unstable();
        v
    }
}

/// How a graph output is reduced to the scalar objective.
#[derive(Debug, Clone, Copy)]
pub enum Reduction {
    Sum,
    /// `sum(y * r)` with fixed `r ~ U(-1, 1) / sqrt(numel)`.
    Projection(u64),
}

/// Gradient check of every parameter in `store` and every tensor in
/// `inputs`, through the graph built by `build`.
pub fn check_graph<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    mode: Mode,
    reduction: Reduction,
    build: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let objective = |store: &ParamStore<f64>, inputs: &[Tensor<f64>], track: bool| -> Result<(f64, Option<(Vec<Tensor<f64>>, std::collections::BTreeMap<String, Tensor<f64>>)>)> {
        let mut g = Graph::new(store, mode);
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| if track { g.variable(t.clone()) } else { g.input(t.clone()) })
            .collect();
        let y = build(&mut g, &vars)?;
        let root = match reduction {
            Reduction::Sum => g.sum(y),
            Reduction::Projection(seed) => {
                let shape = g.value(y).shape();
                let mut rng = stream(seed, &[b"projection"]);
                let scale = 1.0 / (shape.numel() as f64).sqrt();
                let r = Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0) * scale);
                g.dot(y, r)?
            }
        };
        let value = g.value(root).data()[0];
        if !track {
            return Ok((value, None));
        }
        let grads = g.backward(root)?;
        let input_grads = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| grads.of(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, Some((input_grads, grads.into_params()))))
    };

    let (_, tracked) = objective(store, inputs, true)?;
    let (input_grads, param_grads) = tracked.expect("tracked run returns gradients");

    let mut report = GradCheckReport::empty();
    let mut work = store.clone();
    let names: Vec<String> = store.params().map(|(n, _)| n.to_string()).collect();
    for (k, name) in names.iter().enumerate() {
        let Some(analytic) = param_grads.get(name) else {
            // Parameter not reached by this graph.
            continue;
        };
        let theta = store.param(name)?.data().to_vec();
        let sub = GradCheckConfig {
            seed: cfg.seed.wrapping_add(k as u64),
            ..*cfg
        };
        let mut r = check_gradient(
            &theta,
            analytic.data(),
            |probe| {
                work.param_mut(name)?.data_mut().copy_from_slice(probe);
                let v = objective(&work, inputs, false).map(|(v, _)| v);
                work.param_mut(name)?.data_mut().copy_from_slice(&theta);
                v
            },
            &sub,
        )?;
        if let Some((_, i)) = r.worst.take() {
            r.worst = Some((name.clone(), i));
        }
        report.merge(r);
    }

    let mut probe_inputs = inputs.to_vec();
    for (k, (input, analytic)) in inputs.iter().zip(&input_grads).enumerate() {
        let sub = GradCheckConfig {
            seed: cfg.seed.wrapping_add(10_000 + k as u64),
            ..*cfg
        };
        let shape = input.shape();
        let mut r = check_gradient(
            input.data(),
            analytic.data(),
            |probe| {
                probe_inputs[k] = Tensor::from_values(shape, probe.to_vec())?;
                let v = objective(store, &probe_inputs, false).map(|(v, _)| v);
                probe_inputs[k] = input.clone();
                v
            },
            &sub,
        )?;
        if let Some((_, i)) = r.worst.take() {
            r.worst = Some((format!("input{k}"), i));
        }
        report.merge(r);
    }
    Ok(report)
}
