pub mod contact;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod field;
pub mod harness;
pub mod impulse;
pub mod math;

pub use error::{Result, SimError};
