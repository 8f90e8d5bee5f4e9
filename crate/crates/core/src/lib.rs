//! Incrementally maintained scene memory: frustum-culled feature points,
//! 3D instances, zones, and the token interface built on top of them.

pub mod alignment;
pub mod config;
pub mod error;
pub mod feature;
pub mod frame;
pub mod geometry;
pub mod harness;
pub mod instance;
pub mod map;
pub mod nn;
pub mod patch_store;
pub mod sim;
pub mod snapshot;
pub mod tokens;
pub mod zone;

pub use error::{Error, Result};
