//! Differentiable operators, the tape that chains them, and the
//! finite-difference checker that validates their backward rules.

pub mod conv;
pub mod gradcheck;
pub mod norm;
pub mod pool;
pub mod resample;
pub mod tape;

pub use conv::{conv2d, Conv2dParams, ConvGeom};
pub use gradcheck::{check_gradient, check_graph, GradCheckConfig, GradCheckReport, Reduction};
pub use norm::{batchnorm2d, BatchNormState, Mode};
pub use pool::{pool, PoolKind};
pub use resample::{bilinear_upsample2x, resize_bilinear, resize_nearest};
pub use tape::{Gradients, Graph, Var};
