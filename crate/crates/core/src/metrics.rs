//! Reconstruction, continuity and in-scene scores for generated motion.

use alloc::format;
use alloc::string::String;
use serde::{Deserialize, Serialize};

use crate::body::{BodyMesh, BodyParams, BodyTemplate, POSE_DIM};
use crate::error::{arg_err, Result};
use crate::math::dist;
use crate::scene::SdfGrid;
use crate::sequence::MotionSequence;

/// Signed distance below which a vertex touches the scene.
pub const CONTACT_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub transl_l1_x100: Option<f64>,
    pub orient_l1_x100: Option<f64>,
    pub pose_l1_x100: Option<f64>,
    pub mpjpe_mm: Option<f64>,
    pub mpvpe_mm: Option<f64>,
    pub neighbour_v2v: Option<f64>,
    pub non_collision_pct: Option<f64>,
    pub contact_pct: Option<f64>,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str =
        "method,transl_l1_x100,orient_l1_x100,pose_l1_x100,mpjpe_mm,mpvpe_mm,neighbour_v2v,non_collision_pct,contact_pct";

    /// One CSV row; absent metrics are empty cells.
    pub fn csv_row(&self, method: &str) -> String {
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
        format!(
            "{method},{},{},{},{},{},{},{},{}",
            cell(self.transl_l1_x100),
            cell(self.orient_l1_x100),
            cell(self.pose_l1_x100),
            cell(self.mpjpe_mm),
            cell(self.mpvpe_mm),
            cell(self.neighbour_v2v),
            cell(self.non_collision_pct),
            cell(self.contact_pct),
        )
    }
}

fn same_length(pred: &MotionSequence, gt: &MotionSequence) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(arg_err(format!("sequences of {} and {} frames cannot be compared", pred.len(), gt.len())));
    }
    Ok(())
}

/// Mean absolute difference per frame and dimension of `(t, r, p)`, ×100.
pub fn reconstruction_errors(pred: &MotionSequence, gt: &MotionSequence) -> Result<(f64, f64, f64)> {
    same_length(pred, gt)?;
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let (mut t, mut r, mut p) = (0.0, 0.0, 0.0);
    for (a, b) in pred.frames.iter().zip(&gt.frames) {
        t += l1(&a.t, &b.t);
        r += l1(&a.r, &b.r);
        p += l1(&a.p, &b.p);
    }
    let n = pred.len() as f64;
    Ok((100.0 * t / (3.0 * n), 100.0 * r / (6.0 * n), 100.0 * p / (POSE_DIM as f64 * n)))
}

fn mean_point_error(pred: &[BodyMesh], gt: &[BodyMesh], joints: bool) -> f64 {
    let mut sum = 0.0;
    for (a, b) in pred.iter().zip(gt) {
        let (pa, pb) = if joints { (&a.joints, &b.joints) } else { (&a.vertices, &b.vertices) };
        sum += pa.iter().zip(pb).map(|(x, y)| dist(*x, *y)).sum::<f64>() / pa.len() as f64;
    }
    1000.0 * sum / pred.len() as f64
}

/// Mean joint position error in millimetres.
pub fn mpjpe(pred: &MotionSequence, gt: &MotionSequence, template: &BodyTemplate) -> Result<f64> {
    same_length(pred, gt)?;
    Ok(mean_point_error(&pred.meshes(template)?, &gt.meshes(template)?, true))
}

/// Mean vertex position error in millimetres.
pub fn mpvpe(pred: &MotionSequence, gt: &MotionSequence, template: &BodyTemplate) -> Result<f64> {
    same_length(pred, gt)?;
    Ok(mean_point_error(&pred.meshes(template)?, &gt.meshes(template)?, false))
}

/// Mean per-vertex distance between frame 1 and 0 and between frame `k−1`
/// and `k`, averaged over the two ends, ×100.
pub fn neighbour_v2v(meshes: &[BodyMesh]) -> Result<f64> {
    let n = meshes.len();
    if n < 3 {
        return Err(arg_err("neighbour distance needs a clip of at least three frames"));
    }
    let mean = |a: &BodyMesh, b: &BodyMesh| {
        a.vertices.iter().zip(&b.vertices).map(|(x, y)| dist(*x, *y)).sum::<f64>() / a.vertices.len() as f64
    };
    Ok(100.0 * 0.5 * (mean(&meshes[1], &meshes[0]) + mean(&meshes[n - 2], &meshes[n - 1])))
}

/// Mean over frames of the percentage of vertices with non-negative distance.
pub fn non_collision_score(meshes: &[BodyMesh], sdf: &SdfGrid) -> f64 {
    if meshes.is_empty() {
        return 100.0;
    }
    let per_frame: f64 = meshes
        .iter()
        .map(|m| m.vertices.iter().filter(|v| sdf.sample(**v).0 >= 0.0).count() as f64 / m.vertices.len() as f64)
        .sum();
    100.0 * per_frame / meshes.len() as f64
}

/// Percentage of frames with at least one vertex closer than `threshold`.
pub fn contact_score_with(meshes: &[BodyMesh], sdf: &SdfGrid, threshold: f64) -> f64 {
    if meshes.is_empty() {
        return 0.0;
    }
    let hits = meshes.iter().filter(|m| m.vertices.iter().any(|v| sdf.sample(*v).0 < threshold)).count();
    100.0 * hits as f64 / meshes.len() as f64
}

pub fn contact_score(meshes: &[BodyMesh], sdf: &SdfGrid) -> f64 {
    contact_score_with(meshes, sdf, CONTACT_THRESHOLD)
}

/// Every metric that the inputs allow: reconstruction needs `gt`, scene
/// scores need `sdf`, continuity needs three frames.
pub fn evaluate(
    pred: &MotionSequence,
    gt: Option<&MotionSequence>,
    sdf: Option<&SdfGrid>,
    template: &BodyTemplate,
) -> Result<MetricReport> {
    pred.validate()?;
    let meshes = pred.meshes(template)?;
    let mut r = MetricReport::default();
    if let Some(gt) = gt {
        let (t, o, p) = reconstruction_errors(pred, gt)?;
        let gm = gt.meshes(template)?;
        r.transl_l1_x100 = Some(t);
        r.orient_l1_x100 = Some(o);
        r.pose_l1_x100 = Some(p);
        r.mpjpe_mm = Some(mean_point_error(&meshes, &gm, true));
        r.mpvpe_mm = Some(mean_point_error(&meshes, &gm, false));
    }
    if meshes.len() >= 3 {
        r.neighbour_v2v = Some(neighbour_v2v(&meshes)?);
    }
    if let Some(sdf) = sdf {
        r.non_collision_pct = Some(non_collision_score(&meshes, sdf));
        r.contact_pct = Some(contact_score(&meshes, sdf));
    }
    Ok(r)
}

/// `(p, h)` distance between two bodies, for diversity probes.
pub fn pose_distance(a: &BodyParams, b: &BodyParams) -> f64 {
    a.pose_hand().iter().zip(b.pose_hand()).map(|(x, y)| (x - y).abs()).sum()
}
