//! Multi-armed evaluation of adversarial example detectors.
//!
//! A dense softmax classifier is attacked with several objectives under Lp
//! budgets; detectors are then scored under the worst-case criterion, where a
//! natural sample counts as detected only if every successful attack on it is.

pub mod attacks;
pub mod data;
pub mod detectors;
pub mod error;
pub mod eval;
pub mod nn;
pub mod objectives;
pub mod seed;

pub use error::{MeadError, Result};
pub mod pipeline;
