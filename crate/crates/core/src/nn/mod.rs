//! Minimal reverse-mode automatic differentiation with exactly the layer set
//! the boundary detector needs, plus Adam, the Noam learning-rate schedule,
//! checkpoint serialization, and a finite-difference gradient checker.
//!
//! The engine is a tape: [`Graph`] records every operation during the forward
//! pass, and [`Graph::backward`] replays the tape in reverse. Training runs in
//! `f32`; gradient checks run the identical code in `f64`.

mod checkpoint;
mod gradcheck;
mod graph;
mod lstm;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{finite_difference_check, GradCheckConfig, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use lstm::LstmVars;
pub use optim::{adam_step, AdamConfig, AdamState, NoamSchedule};
pub use params::{ParamStore, Parameter};
pub use tensor::{Scalar, Tensor};
