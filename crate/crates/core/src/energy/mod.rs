//! Geometric energies over a body sequence in a scene, and their refinement.

mod refine;
mod segment;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

pub use refine::*;
pub use segment::*;

use crate::body::{forward_with_pullback, BodyMesh, BodyTemplate, ParamGrad, PARAM_DIM};
use crate::error::{arg_err, Error, Result};
use crate::math::*;
use crate::scene::{PointIndex, SceneField, SdfGrid};
use crate::sequence::MotionSequence;

/// Scale of the Geman-McClure contact robustifier, meters.
pub const CONTACT_SIGMA: f64 = 0.2;

/// `σ²x²/(x²+σ²)`: zero at zero, increasing, bounded by `σ²`.
pub fn geman_mcclure(x: f64, sigma: f64) -> f64 {
    let (x2, s2) = (x * x, sigma * sigma);
    s2 * (x2 / (x2 + s2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights {
    pub foot: f64,
    pub col: f64,
    pub cont: f64,
    pub smooth: f64,
}

impl EnergyWeights {
    pub const ZERO: Self = Self { foot: 0.0, col: 0.0, cont: 0.0, smooth: 0.0 };
    /// First refinement stage: no foot term.
    pub const STAGE1: Self = Self { foot: 0.0, col: 1.0, cont: 1.0, smooth: 0.25 };
    pub const STAGE2: Self = Self { foot: 1.0, col: 1.0, cont: 1.0, smooth: 0.25 };

    pub fn new(foot: f64, col: f64, cont: f64, smooth: f64) -> Self {
        Self { foot, col, cont, smooth }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.foot, self.col, self.cont, self.smooth];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(arg_err(format!("energy weights must be finite and non-negative: {all:?}")));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.foot == 0.0 && self.col == 0.0 && self.cont == 0.0 && self.smooth == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub foot: f64,
    pub col: f64,
    pub cont: f64,
    pub smooth: f64,
}

impl EnergyTerms {
    pub fn weighted(&self, w: &EnergyWeights) -> f64 {
        w.foot * self.foot + w.col * self.col + w.cont * self.cont + w.smooth * self.smooth
    }

    pub fn is_finite(&self) -> bool {
        [self.foot, self.col, self.cont, self.smooth].iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub weights: EnergyWeights,
    pub iters: usize,
    pub lr: f64,
    pub start: EnergyTerms,
    pub end: EnergyTerms,
    pub start_total: f64,
    pub end_total: f64,
    /// Weighted total before each update.
    pub totals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub terms: EnergyTerms,
    pub weights: EnergyWeights,
    pub total: f64,
    #[serde(default)]
    pub history: Vec<StageRecord>,
}

impl EnergyReport {
    pub fn new(terms: EnergyTerms, weights: EnergyWeights) -> Self {
        Self { terms, weights, total: terms.weighted(&weights), history: Vec::new() }
    }
}

/// Σ over stance segments and their frames of the stable sole's distance to
/// the segment mean.
pub fn e_foot(meshes: &[BodyMesh], template: &BodyTemplate, seg: &FootSegmentation) -> f64 {
    let g = &template.groups;
    let mut e = 0.0;
    for s in &seg.segments {
        let sole = match s.stance {
            Stance::Left => &g.left_sole,
            Stance::Right => &g.right_sole,
            Stance::Airborne => continue,
        };
        for m in &meshes[s.start..=s.end.min(meshes.len() - 1)] {
            e += dist(m.centroid_of(sole), s.mean);
        }
    }
    e
}

/// Σ over frames of the mean penetration depth `|min(ψ, 0)|` over vertices.
pub fn e_col(meshes: &[BodyMesh], sdf: &SdfGrid) -> f64 {
    meshes
        .iter()
        .map(|m| {
            let pen: f64 = m.vertices.iter().map(|v| -sdf.sample(*v).0.min(0.0)).sum();
            pen / m.vertices.len() as f64
        })
        .sum()
}

/// Σ over frames and contact vertices of `ρ_σ` of the nearest scene distance.
pub fn e_cont(meshes: &[BodyMesh], template: &BodyTemplate, index: &PointIndex) -> Result<f64> {
    let contact = template.groups.contact_set();
    let mut e = 0.0;
    for m in meshes {
        for &c in &contact {
            let (_, d) = index.nearest(m.vertices[c as usize])?;
            e += geman_mcclure(d, CONTACT_SIGMA);
        }
    }
    Ok(e)
}

/// Σ over consecutive frames of the ℓ2 norm of the stacked vertex difference.
pub fn e_smooth(meshes: &[BodyMesh]) -> Result<f64> {
    if meshes.len() < 2 {
        return Err(arg_err("smoothness needs at least two frames"));
    }
    Ok(meshes.windows(2).map(|w| stacked_diff_norm(&w[0].vertices, &w[1].vertices)).sum())
}

fn stacked_diff_norm(a: &[Vec3], b: &[Vec3]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| {
        let d = sub(*y, *x);
        dot(d, d)
    }).sum();
    sqrt(s)
}

/// All four terms, the contact term against the scene's dense index.
pub fn energy_terms(
    meshes: &[BodyMesh],
    template: &BodyTemplate,
    scene: &SceneField,
    seg: &FootSegmentation,
) -> Result<EnergyTerms> {
    Ok(EnergyTerms {
        foot: e_foot(meshes, template, seg),
        col: e_col(meshes, &scene.sdf),
        cont: e_cont(meshes, template, &scene.contact_index)?,
        smooth: e_smooth(meshes)?,
    })
}

/// Evaluates every term on the current sequence, segmenting it afresh.
pub fn total_energy(
    seq: &MotionSequence,
    template: &BodyTemplate,
    scene: &SceneField,
    weights: &EnergyWeights,
) -> Result<EnergyReport> {
    weights.validate()?;
    let meshes = seq.meshes(template)?;
    let seg = segment_stable_foot(&meshes, &template.groups)?;
    Ok(EnergyReport::new(energy_terms(&meshes, template, scene, &seg)?, *weights))
}

/// Frozen collision state of one vertex: its grid cell (`None` outside the
/// box) and whether it counted as penetrating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionSlot {
    pub cell: Option<[usize; 3]>,
    pub active: bool,
}

/// The discrete choices held fixed while differentiating: foot segmentation,
/// contact correspondences and, optionally, each vertex's collision slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub segmentation: FootSegmentation,
    /// Per frame, the scene point matched to each contact vertex.
    pub contact_targets: Vec<Vec<Vec3>>,
    pub collision: Option<Vec<Vec<CollisionSlot>>>,
}

impl Linearization {
    pub fn capture(
        meshes: &[BodyMesh],
        template: &BodyTemplate,
        scene: &SceneField,
        segmentation: FootSegmentation,
        freeze_collision: bool,
    ) -> Result<Self> {
        let contact = template.groups.contact_set();
        let contact_targets = meshes
            .iter()
            .map(|m| {
                contact
                    .iter()
                    .map(|&c| {
                        let (i, _) = scene.contact_index.nearest(m.vertices[c as usize])?;
                        Ok(scene.contact_index.points()[i])
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let collision = freeze_collision.then(|| {
            meshes
                .iter()
                .map(|m| {
                    m.vertices
                        .iter()
                        .map(|v| CollisionSlot { cell: scene.sdf.cell_of(*v), active: scene.sdf.sample(*v).0 < 0.0 })
                        .collect()
                })
                .collect()
        });
        Ok(Self { segmentation, contact_targets, collision })
    }
}

/// Energy terms under a linearization and, per frame, their weighted
/// gradient with respect to the vertices.
pub fn energy_vertex_gradient(
    meshes: &[BodyMesh],
    template: &BodyTemplate,
    sdf: &SdfGrid,
    lin: &Linearization,
    weights: &EnergyWeights,
) -> Result<(EnergyTerms, Vec<Vec<Vec3>>)> {
    let nf = meshes.len();
    if nf < 2 || lin.segmentation.num_frames() != nf || lin.contact_targets.len() != nf {
        return Err(Error::Shape(format!("linearization does not cover {nf} frames")));
    }
    let nv = template.num_vertices();
    let mut grads = vec![vec![ZERO3; nv]; nf];
    let mut terms = EnergyTerms::default();

    let g = &template.groups;
    for s in &lin.segmentation.segments {
        let sole = match s.stance {
            Stance::Left => &g.left_sole,
            Stance::Right => &g.right_sole,
            Stance::Airborne => continue,
        };
        let share = 1.0 / sole.len() as f64;
        for f in s.start..=s.end {
            let off = sub(meshes[f].centroid_of(sole), s.mean);
            let d = norm(off);
            terms.foot += d;
            if d > 0.0 {
                let gv = scale(off, weights.foot * share / d);
                for &v in sole.iter() {
                    add_assign(&mut grads[f][v as usize], gv);
                }
            }
        }
    }

    for (f, m) in meshes.iter().enumerate() {
        let inv = 1.0 / m.vertices.len() as f64;
        let mut pen = 0.0;
        for (vi, v) in m.vertices.iter().enumerate() {
            let slot = lin.collision.as_ref().map(|c| c[f][vi]);
            let (psi, dpsi) = match slot.and_then(|s| s.cell) {
                Some(c) => sdf.sample_in_cell(*v, c),
                None => sdf.sample(*v),
            };
            if slot.map_or(psi < 0.0, |s| s.active) {
                pen -= psi;
                axpy(&mut grads[f][vi], -weights.col * inv, dpsi);
            }
        }
        terms.col += pen * inv;
    }

    let contact = g.contact_set();
    let s2 = CONTACT_SIGMA * CONTACT_SIGMA;
    for (f, m) in meshes.iter().enumerate() {
        for (&c, q) in contact.iter().zip(&lin.contact_targets[f]) {
            let off = sub(m.vertices[c as usize], *q);
            let d2 = dot(off, off);
            terms.cont += s2 * (d2 / (d2 + s2));
            let k = 2.0 * s2 * s2 / ((d2 + s2) * (d2 + s2));
            axpy(&mut grads[f][c as usize], weights.cont * k, off);
        }
    }

    for f in 0..nf - 1 {
        let n = stacked_diff_norm(&meshes[f].vertices, &meshes[f + 1].vertices);
        terms.smooth += n;
        if n > 0.0 {
            let k = weights.smooth / n;
            for vi in 0..nv {
                let d = sub(meshes[f + 1].vertices[vi], meshes[f].vertices[vi]);
                axpy(&mut grads[f + 1][vi], k, d);
                axpy(&mut grads[f][vi], -k, d);
            }
        }
    }
    Ok((terms, grads))
}

/// Collision and contact terms of one body with their weighted vertex
/// gradient; correspondences are the current nearest scene points.
pub fn scene_terms_gradient(
    mesh: &BodyMesh,
    template: &BodyTemplate,
    scene: &SceneField,
    w_col: f64,
    w_cont: f64,
) -> Result<(f64, f64, Vec<Vec3>)> {
    let nv = mesh.vertices.len();
    let mut grad = vec![ZERO3; nv];
    let inv = 1.0 / nv as f64;
    let mut col = 0.0;
    for (v, g) in mesh.vertices.iter().zip(grad.iter_mut()) {
        let (psi, dpsi) = scene.sdf.sample(*v);
        if psi < 0.0 {
            col -= psi * inv;
            axpy(g, -w_col * inv, dpsi);
        }
    }
    let s2 = CONTACT_SIGMA * CONTACT_SIGMA;
    let mut cont = 0.0;
    for c in template.groups.contact_set() {
        let v = mesh.vertices[c as usize];
        let (i, _) = scene.contact_index.nearest(v)?;
        let off = sub(v, scene.contact_index.points()[i]);
        let d2 = dot(off, off);
        cont += s2 * (d2 / (d2 + s2));
        axpy(&mut grad[c as usize], w_cont * 2.0 * s2 * s2 / ((d2 + s2) * (d2 + s2)), off);
    }
    Ok((col, cont, grad))
}

/// Weighted energy and its gradient over every frame's flat parameters.
pub fn energy_param_gradient(
    seq: &MotionSequence,
    template: &BodyTemplate,
    sdf: &SdfGrid,
    lin: &Linearization,
    weights: &EnergyWeights,
) -> Result<(EnergyTerms, Vec<ParamGrad>)> {
    let mut meshes = Vec::with_capacity(seq.len());
    let mut pullbacks = Vec::with_capacity(seq.len());
    for f in &seq.frames {
        let (m, pb) = forward_with_pullback(template, f)?;
        meshes.push(m);
        pullbacks.push(pb);
    }
    let (terms, vgrads) = energy_vertex_gradient(&meshes, template, sdf, lin, weights)?;
    let grads = pullbacks
        .iter()
        .zip(&vgrads)
        .map(|(pb, g)| pb.apply(g, None))
        .collect::<Result<Vec<[f64; PARAM_DIM]>>>()?;
    Ok((terms, grads))
}
