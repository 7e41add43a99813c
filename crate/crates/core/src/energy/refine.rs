use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::*;
use crate::body::{BodyParams, BETA_OFFSET, H_OFFSET, P_OFFSET, R_OFFSET, SHAPE_DIM};
use crate::nn::Adam;

pub const DEFAULT_STAGE_ITERS: usize = 200;
pub const DEFAULT_REFINE_LR: f64 = 1e-2;

/// Optimized per frame: everything except the shape coefficients.
const VAR_DIM: usize = PARAM_DIM - SHAPE_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub weights: EnergyWeights,
    pub iters: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementSchedule {
    pub stages: Vec<Stage>,
}

impl Default for RefinementSchedule {
    fn default() -> Self {
        Self::two_stage(DEFAULT_STAGE_ITERS, DEFAULT_STAGE_ITERS, DEFAULT_REFINE_LR)
    }
}

impl RefinementSchedule {
    /// Contact and collision first, then the foot term joins.
    pub fn two_stage(iters1: usize, iters2: usize, lr: f64) -> Self {
        Self {
            stages: vec![
                Stage { weights: EnergyWeights::STAGE1, iters: iters1, lr },
                Stage { weights: EnergyWeights::STAGE2, iters: iters2, lr },
            ],
        }
    }

    pub fn single(weights: EnergyWeights, iters: usize, lr: f64) -> Self {
        Self { stages: vec![Stage { weights, iters, lr }] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(arg_err("refinement schedule has no stages"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            s.weights.validate()?;
            if s.iters == 0 || !(s.lr > 0.0 && s.lr.is_finite()) {
                return Err(arg_err(format!("stage {i}: need iters ≥ 1 and a positive learning rate")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub sequence: MotionSequence,
    /// Final terms under the last stage's weights, with per-stage history.
    pub report: EnergyReport,
    /// Set when a non-finite energy or gradient stopped the run early; the
    /// sequence is then the last finite state.
    pub aborted: Option<String>,
}

fn pack(b: &BodyParams) -> [f64; VAR_DIM] {
    let flat = b.to_flat();
    let mut v = [0.0; VAR_DIM];
    v[..BETA_OFFSET].copy_from_slice(&flat[..BETA_OFFSET]);
    v[BETA_OFFSET..].copy_from_slice(&flat[P_OFFSET..]);
    v
}

fn unpack(v: &[f64], beta: &[f64; SHAPE_DIM]) -> BodyParams {
    let mut flat = [0.0; PARAM_DIM];
    flat[..BETA_OFFSET].copy_from_slice(&v[..BETA_OFFSET]);
    flat[BETA_OFFSET..P_OFFSET].copy_from_slice(beta);
    flat[P_OFFSET..].copy_from_slice(&v[BETA_OFFSET..]);
    let mut b = BodyParams::default();
    b.t.copy_from_slice(&flat[..R_OFFSET]);
    b.r.copy_from_slice(&flat[R_OFFSET..BETA_OFFSET]);
    b.beta = *beta;
    b.p.copy_from_slice(&flat[P_OFFSET..H_OFFSET]);
    b.h.copy_from_slice(&flat[H_OFFSET..]);
    b
}

fn drop_beta(g: &ParamGrad) -> [f64; VAR_DIM] {
    let mut v = [0.0; VAR_DIM];
    v[..BETA_OFFSET].copy_from_slice(&g[..BETA_OFFSET]);
    v[BETA_OFFSET..].copy_from_slice(&g[P_OFFSET..]);
    v
}

/// Adam over every frame's `(t, r, p, h)` with β held fixed, one stage after
/// another. Segmentation is recomputed at each stage start; contact
/// correspondences before every update.
pub fn refine(
    seq: &MotionSequence,
    template: &BodyTemplate,
    scene: &SceneField,
    schedule: &RefinementSchedule,
) -> Result<Refinement> {
    schedule.validate()?;
    seq.validate()?;
    if seq.len() < 2 {
        return Err(arg_err("refinement needs at least two frames"));
    }
    let betas: Vec<[f64; SHAPE_DIM]> = seq.frames.iter().map(|f| f.beta).collect();
    let mut vars: Vec<[f64; VAR_DIM]> = seq.frames.iter().map(pack).collect();
    let names: Vec<String> = (0..seq.len()).map(|i| format!("frame{i}")).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut current = seq.clone();
    let mut history = Vec::new();
    let mut aborted = None;

    let rebuild = |vars: &[[f64; VAR_DIM]], base: &MotionSequence| {
        let mut s = base.clone();
        for ((f, v), beta) in s.frames.iter_mut().zip(vars).zip(&betas) {
            *f = unpack(v, beta);
        }
        s
    };

    'stages: for stage in &schedule.stages {
        let meshes = current.meshes(template)?;
        let seg = segment_stable_foot(&meshes, &template.groups)?;
        let start = energy_terms(&meshes, template, scene, &seg)?;
        let mut rec = StageRecord {
            weights: stage.weights,
            iters: stage.iters,
            lr: stage.lr,
            start,
            end: start,
            start_total: start.weighted(&stage.weights),
            end_total: start.weighted(&stage.weights),
            totals: Vec::with_capacity(stage.iters),
        };
        let mut adam = Adam::new(stage.lr);
        let need_contacts = stage.weights.cont > 0.0;
        for it in 0..stage.iters {
            let meshes = current.meshes(template)?;
            let lin = if need_contacts {
                Linearization::capture(&meshes, template, scene, seg.clone(), false)?
            } else {
                let empty = template.groups.contact_set().iter().map(|_| ZERO3).collect::<Vec<_>>();
                let contact_targets = vec![empty; meshes.len()];
                Linearization { segmentation: seg.clone(), contact_targets, collision: None }
            };
            let (terms, grads) = energy_param_gradient(&current, template, &scene.sdf, &lin, &stage.weights)?;
            let total = terms.weighted(&stage.weights);
            let finite = total.is_finite() && grads.iter().all(|g| g.iter().all(|x| x.is_finite()));
            if !finite {
                aborted = Some(format!("non-finite energy or gradient at iteration {it} (total {total})"));
                history.push(rec);
                break 'stages;
            }
            rec.totals.push(total);
            let g: Vec<[f64; VAR_DIM]> = grads.iter().map(drop_beta).collect();
            let mut vslices: Vec<&mut [f64]> = vars.iter_mut().map(|v| v.as_mut_slice()).collect();
            let gslices: Vec<&[f64]> = g.iter().map(|v| v.as_slice()).collect();
            adam.update(&mut vslices, &gslices, &name_refs)?;
            let next = rebuild(&vars, &current);
            if let Err(e) = next.validate() {
                aborted = Some(format!("iteration {it} produced an invalid body: {e}"));
                history.push(rec);
                break 'stages;
            }
            current = next;
        }
        let meshes = current.meshes(template)?;
        let end = energy_terms(&meshes, template, scene, &seg)?;
        if !end.is_finite() {
            return Err(Error::Numeric(format!("non-finite energy after stage: {end:?}")));
        }
        rec.end = end;
        rec.end_total = end.weighted(&stage.weights);
        history.push(rec);
    }

    let last = schedule.stages.last().map(|s| s.weights).unwrap_or(EnergyWeights::ZERO);
    let mut report = total_energy(&current, template, scene, &last)?;
    report.history = history;
    Ok(Refinement { sequence: current, report, aborted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{SceneFieldOptions, SceneMesh, SdfOptions};

    fn floor() -> SceneField {
        let (mesh, _) = SceneMesh::from_raw(
            vec![[-2.0, -2.0, 0.0], [2.0, -2.0, 0.0], [2.0, 2.0, 0.0], [-2.0, 2.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let opts = SceneFieldOptions {
            sdf: SdfOptions { cell: 0.05, padding: 0.3, ground: Some(0.0), ..Default::default() },
            cloud_points: 64,
            contact_points: 4000,
            seed: 2,
        };
        SceneField::build(mesh, &opts).unwrap()
    }

    fn standing(n: usize, dz: f64) -> MotionSequence {
        let mut b = BodyParams::default();
        b.t[2] = crate::body::standing_height(0.0) + dz;
        MotionSequence::new((0..n).map(|i| {
            let mut f = b;
            f.t[1] = 0.02 * i as f64;
            f
        }).collect())
    }

    #[test]
    fn zero_weights_are_identity() {
        let scene = floor();
        let tpl = BodyTemplate::default();
        let seq = standing(4, -0.05);
        let out = refine(&seq, &tpl, &scene, &RefinementSchedule::single(EnergyWeights::ZERO, 20, 1e-2)).unwrap();
        assert_eq!(out.sequence, seq);
        assert!(out.aborted.is_none());
    }

    #[test]
    fn pack_roundtrip() {
        let mut b = BodyParams::default();
        for (i, x) in b.p.iter_mut().enumerate() {
            *x = i as f64;
        }
        b.beta[3] = 0.7;
        b.h[2] = -1.0;
        b.t = [1.0, 2.0, 3.0];
        assert_eq!(unpack(&pack(&b), &b.beta), b);
    }

    #[test]
    fn lifts_body_out_of_floor() {
        let scene = floor();
        let tpl = BodyTemplate::default();
        let seq = standing(3, -0.05);
        let w = EnergyWeights::new(0.0, 1.0, 0.0, 0.0);
        let before = total_energy(&seq, &tpl, &scene, &w).unwrap().terms.col;
        assert!(before > 0.0);
        let out = refine(&seq, &tpl, &scene, &RefinementSchedule::single(w, 300, 1e-2)).unwrap();
        let after = out.report.terms.col;
        assert!(after < 0.05 * before, "{before} -> {after}");
        assert_eq!(out.report.history[0].totals.len(), 300);
        assert!(out.sequence.frames.iter().all(|f| f.beta == seq.frames[0].beta));
    }

    #[test]
    fn schedule_validation() {
        assert!(RefinementSchedule { stages: vec![] }.validate().is_err());
        assert!(RefinementSchedule::single(EnergyWeights::STAGE1, 0, 1e-2).validate().is_err());
        assert!(RefinementSchedule::single(EnergyWeights::new(-1.0, 0.0, 0.0, 0.0), 1, 1e-2).validate().is_err());
        assert!(RefinementSchedule::default().validate().is_ok());
    }
}
