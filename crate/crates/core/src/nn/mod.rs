//! Dense networks with exact manual backpropagation.
//!
//! Layers hold row-major `(out, in)` weights. A network caches the activations of its
//! most recent [`Mlp::forward`] call; [`Mlp::backward`] consumes that cache. Use
//! [`Mlp::predict`] for cache-free evaluation.

mod checkpoint;
mod gradcheck;
mod layer;
mod matrix;
mod mlp;
mod optim;

pub use checkpoint::{FORMAT_VERSION, MAGIC};
pub(crate) use checkpoint::{
    read_f64, read_header, read_mlp_body, read_u32, read_u64, read_u8, write_f64, write_header,
    write_mlp_body, write_u32, write_u64, Kind as CheckpointKind,
};
pub use gradcheck::{compare_with_finite_differences, finite_difference_check, BatchLoss, FD_STEP};
pub use layer::{Activation, DenseLayer, LayerGrad};
pub use matrix::Matrix;
pub use mlp::{Backprop, GradientSet, Mlp};
pub use optim::{Algorithm, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
