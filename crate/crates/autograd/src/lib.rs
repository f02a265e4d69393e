//! Reverse-mode automatic differentiation over `f64` ndarrays.
//!
//! A [`Tape`] records operations performed through [`Var`] handles. Parameters
//! live outside the tape in a [`ParamSet`] and are bound per step with a
//! [`Binder`]. Convolutions and other per-sample kernels dispatch through
//! [`exec`], which uses rayon when the `parallel` feature is enabled.

pub mod exec;
pub mod gradcheck;
mod ops;
mod params;
mod tape;

pub use ops::conv::{conv2d_forward, ConvGeometry};
pub use ops::elementwise::softplus;
pub use ops::shape::concat;
pub use params::{Binder, ParamSet};
pub use tape::{Array, Gradients, Tape, Var};
