pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod oracle;
pub mod problems;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
