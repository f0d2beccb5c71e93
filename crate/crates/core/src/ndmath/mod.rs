//! Minimal differentiable numeric substrate.
//!
//! The primitive set is closed: pointwise convolution and dilated/grouped
//! `conv1d`, dense `matmul`, elementwise arithmetic with broadcasting,
//! `tanh`/`sigmoid`/`softplus`/`exp`/`log`/`sqrt`/`square`/`clamp_min`,
//! sums over all elements or one axis, row concatenation and slicing, and
//! flat gather (`take`) / segment sum (`scatter_add`). Everything else in the
//! crate (GELU, softmax, layer norm, weight norm, splines) is composed from
//! these.

mod array;
mod gradcheck;
mod graph;
pub mod layers;
pub mod linalg;
pub mod ops;
mod optim;
mod params;

pub use array::{Array, Real};
pub use gradcheck::{check_gradient_coords, check_gradients, evaluate_with_gradients, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use ops::{conv1d, matmul, Padding};
pub use optim::{Adam, LrSchedule};
pub use params::{Param, ParamId, ParamStore};
