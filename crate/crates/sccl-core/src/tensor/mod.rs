//! Dense tensors, the recorded-graph autodiff engine, optimizers, and
//! parameter persistence.

mod checkpoint;
mod dense;
mod gradcheck;
mod optim;
mod params;
mod tape;

pub use checkpoint::{from_bytes, load_params, save_params, to_bytes};
pub use dense::Tensor;
pub use gradcheck::{finite_difference_check, ClosureDiffFn, DiffFn, GradCheckReport};
pub use optim::{Adam, OptimAlgo, OptimConfig, Optimizer};
pub use params::{ParamEntry, ParamStore};
pub use tape::{Gradients, Tape, Var};
