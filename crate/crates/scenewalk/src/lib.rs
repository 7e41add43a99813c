//! Files, configuration and the command line around `scenewalk-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod mesh_io;
pub mod records;
pub mod runlog;
pub mod sdf_cache;
pub mod weights;

pub use scenewalk_core as core;
