//! Dense linear algebra, MLPs with hand-written backprop, losses, SGD and a
//! finite-difference oracle.

pub mod checkpoint;
pub mod finite_diff;
pub mod loss;
pub mod matrix;
pub mod mlp;
pub mod rng;
pub mod sgd;

pub use finite_diff::{finite_diff_grad, relative_error};
pub use loss::{cross_entropy_loss, softmax_rows};
pub use matrix::Matrix;
pub use mlp::{Activation, ForwardCache, Gradients, Layer, MlpParams};
pub use rng::{derive_seed, tag, SplitMix64};
pub use sgd::{sgd_step, sgd_step_in_place, SgdConfig};
