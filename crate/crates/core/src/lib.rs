//! Block-local Forward-Forward training with cumulative goodness, plus the
//! closed-form checks and diagnostics that go with it.

pub mod audit;
pub mod diagnostics;
pub mod error;
pub mod goodness;
pub mod io;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
