use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::rotation::{rot6d_to_matrix, Rot6d, ROT6D_IDENTITY};

pub const SHAPE_DIM: usize = 10;
pub const POSE_DIM: usize = 32;
pub const HAND_DIM: usize = 24;
/// Flat record width: t(3), r(6), β(10), p(32), h(24).
pub const PARAM_DIM: usize = 75;

pub const T_OFFSET: usize = 0;
pub const R_OFFSET: usize = 3;
pub const BETA_OFFSET: usize = 9;
pub const P_OFFSET: usize = 19;
pub const H_OFFSET: usize = 51;

/// Flat gradient with the same layout as [`BodyParams::to_flat`].
pub type ParamGrad = [f64; PARAM_DIM];

/// One frame of body state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    pub t: [f64; 3],
    pub r: Rot6d,
    pub beta: [f64; SHAPE_DIM],
    pub p: [f64; POSE_DIM],
    pub h: [f64; HAND_DIM],
}

impl Default for BodyParams {
    fn default() -> Self {
        Self {
            t: [0.0; 3],
            r: ROT6D_IDENTITY,
            beta: [0.0; SHAPE_DIM],
            p: [0.0; POSE_DIM],
            h: [0.0; HAND_DIM],
        }
    }
}

impl BodyParams {
    pub fn to_flat(&self) -> [f64; PARAM_DIM] {
        let mut out = [0.0; PARAM_DIM];
        out[T_OFFSET..R_OFFSET].copy_from_slice(&self.t);
        out[R_OFFSET..BETA_OFFSET].copy_from_slice(&self.r);
        out[BETA_OFFSET..P_OFFSET].copy_from_slice(&self.beta);
        out[P_OFFSET..H_OFFSET].copy_from_slice(&self.p);
        out[H_OFFSET..].copy_from_slice(&self.h);
        out
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() != PARAM_DIM {
            return Err(shape_err(format!(
                "body record has {} values, expected {PARAM_DIM}",
                flat.len()
            )));
        }
        let mut b = Self::default();
        b.t.copy_from_slice(&flat[T_OFFSET..R_OFFSET]);
        b.r.copy_from_slice(&flat[R_OFFSET..BETA_OFFSET]);
        b.beta.copy_from_slice(&flat[BETA_OFFSET..P_OFFSET]);
        b.p.copy_from_slice(&flat[P_OFFSET..H_OFFSET]);
        b.h.copy_from_slice(&flat[H_OFFSET..]);
        Ok(b)
    }

    /// Pose and hand latents concatenated, `(p, h)`.
    pub fn pose_hand(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(POSE_DIM + HAND_DIM);
        v.extend_from_slice(&self.p);
        v.extend_from_slice(&self.h);
        v
    }

    pub fn set_pose_hand(&mut self, ph: &[f64]) -> Result<()> {
        if ph.len() != POSE_DIM + HAND_DIM {
            return Err(shape_err(format!("pose/hand vector has {} values", ph.len())));
        }
        self.p.copy_from_slice(&ph[..POSE_DIM]);
        self.h.copy_from_slice(&ph[POSE_DIM..]);
        Ok(())
    }

    /// Finite components and a non-degenerate rotation.
    pub fn validate(&self) -> Result<()> {
        if !self.to_flat().iter().all(|x| x.is_finite()) {
            return Err(Error::Numeric("body parameters contain non-finite values".into()));
        }
        rot6d_to_matrix(&self.r)?;
        Ok(())
    }
}
