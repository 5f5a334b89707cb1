//! Transferring symmetries of task space to the configuration space of
//! multi-chain planar robots, and using them to augment demonstrations for
//! behavior cloning.

pub mod augment;
pub mod compose;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod io;
pub mod kinematics;
pub mod par;
pub mod policy;
pub mod svg;
pub mod symmetry;
pub mod transfer;

pub use error::{Error, Result};
