//! Optimization: dropout plans, ADADELTA, batching, early stopping and
//! checkpoints.

pub mod adadelta;
pub mod checkpoint;
pub mod dropout;
pub mod trainer;
