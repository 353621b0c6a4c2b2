pub mod confidence;
pub mod error;
pub mod evidence;
pub mod fusion;
pub mod geometry;
pub mod grammar;
pub mod grid;
pub mod harness;
pub mod nl;
pub mod solver;
pub mod visibility;

pub use error::{Error, Result};
