//! Dense numeric kernel used by the model and the training loop.
//!
//! Everything is `f64`, row-major, single-threaded and reduced in a fixed
//! order so identical inputs always give bit-identical outputs.

mod gradcheck;
mod matrix;
mod mlp;
mod optim;
mod params;

pub use gradcheck::{finite_diff_check, relative_error, REL_ERR_FLOOR};
pub use matrix::{softmax_rows, Matrix};
pub use mlp::{mlp_backward, mlp_forward, Mlp, MlpCache};
pub use optim::sgd_step;
pub use params::{xavier_uniform, Param, ParamHost, ParamSet};
