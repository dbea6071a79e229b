//! Temporary build stub while modules land.
pub mod backprop;
pub mod checkpoint;
pub mod data;
pub mod emit;
pub mod error;
pub mod expfam;
pub mod matrix;
pub mod moments;
pub mod network;
pub mod oracle;
pub mod special;
pub mod train;
pub mod verify;

pub use error::{NpnError, Result};
pub use matrix::Matrix;
