//! Scene-aware long-term human motion synthesis.
//!
//! A goal-body CVAE places static bodies at sub-goals, route and pose
//! networks fill in the short clips between them, and a multi-term geometric
//! energy refines the concatenated sequence against a signed distance field
//! of the scene.
//!
//! The crate is `no_std` (with `alloc`); file formats, configuration loading
//! and the command line live in the companion `scenewalk` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod body;
pub mod corpus;
pub mod cvae;
pub mod energy;
pub mod error;
pub mod math;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod pipeline;
pub mod rotation;
pub mod scene;
pub mod sequence;
pub mod synth;

pub use error::{Error, Result};
