//! Singular solutions of the Loewner-Nirenberg problem on finite cones over
//! spherical caps with prescribed asymptotics at the vertex.

pub mod consts;
pub mod contraction;
pub mod cylinder;
pub mod error;
pub mod expansion;
pub mod grid;
pub mod harness;
pub mod index_set;
pub mod linalg;
pub mod operator;
pub mod profile;
pub mod quad;
pub mod spectrum;

pub use error::{Error, Result};
