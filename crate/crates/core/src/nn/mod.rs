//! Minimal reverse-mode differentiation kernel and the layers the
//! estimators are built from.

pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, FD_STEP};
pub use layers::{Activation, Conv1d, Edge, GatLayer, GraphTopology, Gru, Linear, Mlp, StackedGru};
pub use params::{Adam, Param, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
