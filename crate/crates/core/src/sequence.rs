use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::body::{forward, BodyMesh, BodyParams, BodyTemplate};
use crate::error::{arg_err, Result};

pub const DEFAULT_FPS: f64 = 30.0;

/// Ordered body frames on a fixed-rate timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    pub frames: Vec<BodyParams>,
    pub fps: f64,
    /// Frames shared between consecutive chunks of a planned sequence.
    #[serde(default)]
    pub boundaries: Vec<usize>,
}

impl MotionSequence {
    pub fn new(frames: Vec<BodyParams>) -> Self {
        Self { frames, fps: DEFAULT_FPS, boundaries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn meshes(&self, template: &BodyTemplate) -> Result<Vec<BodyMesh>> {
        self.frames.iter().map(|f| forward(template, f)).collect()
    }

    pub fn shares_beta(&self) -> bool {
        self.frames.windows(2).all(|w| w[0].beta == w[1].beta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) {
            return Err(arg_err(format!("frame rate must be positive, got {}", self.fps)));
        }
        if let Some(&b) = self.boundaries.iter().find(|&&b| b >= self.frames.len()) {
            return Err(arg_err(format!("boundary {b} beyond {} frames", self.frames.len())));
        }
        self.frames.iter().try_for_each(BodyParams::validate)
    }

    /// Horizontal pelvis path length.
    pub fn path_length(&self) -> f64 {
        self.frames
            .windows(2)
            .map(|w| libm::hypot(w[1].t[0] - w[0].t[0], w[1].t[1] - w[0].t[1]))
            .sum()
    }
}
