pub mod config;
pub mod data;
pub mod ds3;
pub mod error;
pub mod eval;
pub mod fast;
pub mod graph;
pub mod kernels;
pub mod linalg;
pub mod nmf;
pub mod proximal;
pub mod report;
pub mod solver;

pub use error::{Error, Result};
