//! Long-term planning: bodies at sub-goals, clips between them, one
//! refinement over the joined sequence. Also the latent-interpolation
//! baseline.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::body::{BodyParams, BodyTemplate, SHAPE_DIM};
use crate::cvae::{Cvae, LATENT_DIM};
use crate::energy::{e_smooth, refine, total_energy, EnergyReport, EnergyWeights, RefinementSchedule};
use crate::error::{arg_err, Error, Result};
use crate::math::dist;
use crate::motion::{synthesize_clip, PoseNet, RouteNet};
use crate::rotation::{normalize_rot6d, rot6d_to_matrix, Rot6d};
use crate::scene::SceneField;
use crate::sequence::MotionSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub t: [f64; 3],
    pub r: Rot6d,
    /// Latent seed of the body sampled here.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub goals: Vec<Goal>,
    pub beta: [f64; SHAPE_DIM],
}

/// Everything a plan needs from training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Models {
    pub cvae: Cvae,
    pub route: RouteNet,
    pub pose: PoseNet,
}

impl Models {
    pub fn k(&self) -> usize {
        self.route.k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub goal_bodies: Vec<BodyParams>,
    /// Joined clips before refinement.
    pub raw: MotionSequence,
    pub sequence: MotionSequence,
    pub report: EnergyReport,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpecIssue {
    TooFewGoals { count: usize },
    OutOfBounds { goal: usize },
    DegenerateRotation { goal: usize },
    /// Goals `first` and `first + 1` share a location.
    ZeroDisplacement { first: usize },
}

/// Headroom above the scene's top for a pelvis position.
const GOAL_HEADROOM: f64 = 3.0;

/// Diagnostics only; an empty list means the spec is usable.
pub fn validate_spec(spec: &GoalSpec, scene: &SceneField) -> Vec<SpecIssue> {
    let mut out = Vec::new();
    if spec.goals.len() < 2 {
        out.push(SpecIssue::TooFewGoals { count: spec.goals.len() });
    }
    let (lo, hi) = scene.mesh.bounds();
    for (i, g) in spec.goals.iter().enumerate() {
        let inside = (0..2).all(|d| g.t[d] >= lo[d] && g.t[d] <= hi[d])
            && g.t[2] >= lo[2]
            && g.t[2] <= hi[2] + GOAL_HEADROOM
            && g.t.iter().all(|x| x.is_finite());
        if !inside {
            out.push(SpecIssue::OutOfBounds { goal: i });
        }
        if rot6d_to_matrix(&g.r).is_err() {
            out.push(SpecIssue::DegenerateRotation { goal: i });
        }
    }
    for (i, w) in spec.goals.windows(2).enumerate() {
        if dist(w[0].t, w[1].t) == 0.0 {
            out.push(SpecIssue::ZeroDisplacement { first: i });
        }
    }
    out
}

/// Samples a body per goal, fills each gap with a clip sharing its boundary
/// bodies, and refines the whole sequence when a schedule is given. Without
/// one, the report scores the raw sequence under the second-stage weights.
pub fn plan_long_term(
    spec: &GoalSpec,
    scene: &SceneField,
    models: &Models,
    template: &BodyTemplate,
    schedule: Option<&RefinementSchedule>,
) -> Result<Plan> {
    if let Some(issue) = validate_spec(spec, scene).into_iter().next() {
        return Err(Error::Stage("goal spec", alloc::boxed::Box::new(arg_err(format!("{issue:?}")))));
    }
    let cloud = &scene.cloud.points;
    let goal_bodies = spec
        .goals
        .iter()
        .map(|g| models.cvae.sample_goal_body(&spec.beta, &g.t, &g.r, cloud, g.seed))
        .collect::<Result<Vec<_>>>()
        .map_err(Error::in_stage("goal bodies"))?;

    plan_from_bodies(goal_bodies, scene, models, template, schedule)
}

/// The planning steps after goal sampling: one clip per consecutive pair of
/// bodies, joined at the shared frames, then optional refinement.
pub fn plan_from_bodies(
    goal_bodies: Vec<BodyParams>,
    scene: &SceneField,
    models: &Models,
    template: &BodyTemplate,
    schedule: Option<&RefinementSchedule>,
) -> Result<Plan> {
    let k = models.k();
    if models.pose.k != k {
        return Err(arg_err(format!("route net k = {k} but pose net k = {}", models.pose.k)));
    }
    if goal_bodies.len() < 2 {
        return Err(arg_err("a plan needs at least two goal bodies"));
    }
    let mut frames = Vec::with_capacity((goal_bodies.len() - 1) * k + 1);
    let mut boundaries = Vec::new();
    for (i, w) in goal_bodies.windows(2).enumerate() {
        let clip = synthesize_clip(&models.route, &models.pose, &w[0], &w[1], scene)
            .map_err(Error::in_stage("clip synthesis"))?;
        let skip = usize::from(i > 0);
        if i > 0 {
            boundaries.push(frames.len() - 1);
        }
        frames.extend_from_slice(&clip.frames[skip..]);
    }
    let raw = MotionSequence { boundaries, ..MotionSequence::new(frames) };

    let (sequence, report, aborted) = match schedule {
        Some(s) => {
            let out = refine(&raw, template, scene, s).map_err(Error::in_stage("refinement"))?;
            (out.sequence, out.report, out.aborted)
        }
        None => {
            let report = total_energy(&raw, template, scene, &EnergyWeights::STAGE2).map_err(Error::in_stage("energy"))?;
            (raw.clone(), report, None)
        }
    };
    Ok(Plan { goal_bodies, raw, sequence, report, aborted })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentFit {
    pub iters: usize,
    pub lr: f64,
}

impl Default for LatentFit {
    fn default() -> Self {
        Self { iters: 500, lr: 1e-2 }
    }
}

fn lerp<const N: usize>(a: &[f64; N], b: &[f64; N], s: f64) -> [f64; N] {
    core::array::from_fn(|i| a[i] + s * (b[i] - a[i]))
}

/// Fits a latent code to each endpoint, then decodes `steps` linear blends
/// of `(z, t, r)`; the endpoints are decoded too.
pub fn cvae_interpolation_baseline(
    cvae: &Cvae,
    start: &BodyParams,
    end: &BodyParams,
    scene: &SceneField,
    steps: usize,
    fit: &LatentFit,
) -> Result<MotionSequence> {
    if steps < 2 {
        return Err(arg_err("interpolation needs at least two steps"));
    }
    if start.beta != end.beta {
        return Err(arg_err("endpoints have different shape coefficients"));
    }
    start.validate()?;
    end.validate()?;
    let cloud = &scene.cloud.points;
    let fit_one = |b: &BodyParams| -> Result<Vec<f64>> {
        let cond = cvae.condition(&b.beta, &b.t, &b.r, cloud)?;
        Ok(cvae.fit_latent(&cond, b, fit.iters, fit.lr)?.0)
    };
    let (zs, ze) = (fit_one(start)?, fit_one(end)?);
    let frames = (0..steps)
        .map(|i| {
            let s = i as f64 / (steps - 1) as f64;
            let z: Vec<f64> = zs.iter().zip(&ze).map(|(a, b)| a + s * (b - a)).collect();
            debug_assert_eq!(z.len(), LATENT_DIM);
            let t = lerp(&start.t, &end.t, s);
            let r = normalize_rot6d(&lerp(&start.r, &end.r, s))?;
            let goal = cvae.goal_condition(&start.beta, &t, &r, cloud)?;
            let cond = cvae.fuse(&goal)?;
            cvae.decode(&z, &cond, &goal)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MotionSequence::new(frames))
}

/// Smoothness energy divided by the straight-line distance between the
/// first and last pelvis positions.
pub fn e_smooth_per_meter(seq: &MotionSequence, template: &BodyTemplate) -> Result<f64> {
    let (a, b) = match (seq.frames.first(), seq.frames.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return Err(arg_err("empty sequence")),
    };
    let d = dist(a, b);
    if !(d > 0.0) {
        return Err(arg_err("sequence does not travel"));
    }
    Ok(e_smooth(&seq.meshes(template)?)? / d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::CvaeConfig;
    use crate::motion::MotionNetConfig;
    use crate::rotation::rot6d_from_yaw;
    use crate::scene::{SceneFieldOptions, SdfOptions};
    use crate::synth::{gen_scene, SyntheticSceneSpec};
    use alloc::vec;

    fn scene() -> SceneField {
        let spec = SyntheticSceneSpec { floor: [6.0, 6.0], boxes: vec![], seed: 0 };
        let opts = SceneFieldOptions {
            sdf: SdfOptions { cell: 0.1, padding: 0.5, ..spec.sdf_options() },
            cloud_points: 32,
            contact_points: 500,
            seed: 1,
        };
        SceneField::build(gen_scene(&spec).unwrap(), &opts).unwrap()
    }

    fn models(k: usize) -> Models {
        let mc = MotionNetConfig { k, lstm_hidden: 6, fc_width: 8, point_hidden: vec![6, 8], seed: 2 };
        Models {
            cvae: Cvae::new(&CvaeConfig { width: 16, cond_width: 8, point_hidden: vec![6, 8], seed: 1 }).unwrap(),
            route: RouteNet::new(&mc).unwrap(),
            pose: PoseNet::new(&mc).unwrap(),
        }
    }

    fn spec(g: usize) -> GoalSpec {
        GoalSpec {
            goals: (0..g)
                .map(|i| Goal { t: [-2.0 + 0.8 * i as f64, 0.3 * i as f64, 0.9], r: rot6d_from_yaw(0.2 * i as f64), seed: i as u64 })
                .collect(),
            beta: [0.1; SHAPE_DIM],
        }
    }

    #[test]
    fn frame_count_law_and_seams() {
        let sc = scene();
        let tpl = BodyTemplate::default();
        for k in [15, 61] {
            let m = models(k);
            for g in [2, 3, 5] {
                let plan = plan_long_term(&spec(g), &sc, &m, &tpl, None).unwrap();
                assert_eq!(plan.raw.len(), (g - 1) * k + 1);
                assert!(plan.raw.shares_beta());
                assert_eq!(plan.raw.boundaries, (1..g - 1).map(|i| i * k).collect::<Vec<_>>());
                for (i, b) in plan.goal_bodies.iter().enumerate() {
                    assert_eq!(plan.raw.frames[i * k], *b);
                }
            }
        }
    }

    #[test]
    fn determinism_and_diversity() {
        let sc = scene();
        let tpl = BodyTemplate::default();
        let m = models(15);
        let a = plan_long_term(&spec(3), &sc, &m, &tpl, None).unwrap();
        let b = plan_long_term(&spec(3), &sc, &m, &tpl, None).unwrap();
        assert_eq!(a.raw, b.raw);
        let mut other = spec(3);
        other.goals.iter_mut().for_each(|g| g.seed += 100);
        assert_ne!(plan_long_term(&other, &sc, &m, &tpl, None).unwrap().raw, a.raw);
    }

    #[test]
    fn spec_diagnostics() {
        let sc = scene();
        assert!(validate_spec(&spec(3), &sc).is_empty());
        let mut s = spec(3);
        s.goals[1].t[0] = 12.0;
        assert_eq!(validate_spec(&s, &sc), vec![SpecIssue::OutOfBounds { goal: 1 }]);
        let mut s = spec(3);
        s.goals[2] = s.goals[1];
        assert_eq!(validate_spec(&s, &sc), vec![SpecIssue::ZeroDisplacement { first: 1 }]);
        let mut s = spec(2);
        s.goals[0].r = [0.0; 6];
        assert_eq!(validate_spec(&s, &sc), vec![SpecIssue::DegenerateRotation { goal: 0 }]);
        assert_eq!(validate_spec(&spec(1), &sc), vec![SpecIssue::TooFewGoals { count: 1 }]);
        let err = plan_long_term(&spec(1), &sc, &models(15), &BodyTemplate::default(), None).unwrap_err();
        assert!(matches!(err, Error::Stage("goal spec", _)));
    }

    #[test]
    fn baseline_endpoints_and_constant_case() {
        let sc = scene();
        let m = models(15);
        let s = spec(2);
        let fit = LatentFit { iters: 20, lr: 1e-2 };
        let start = m.cvae.sample_goal_body(&s.beta, &s.goals[0].t, &s.goals[0].r, &sc.cloud.points, 1).unwrap();
        let end = m.cvae.sample_goal_body(&s.beta, &s.goals[1].t, &s.goals[1].r, &sc.cloud.points, 2).unwrap();
        let two = cvae_interpolation_baseline(&m.cvae, &start, &end, &sc, 2, &fit).unwrap();
        let many = cvae_interpolation_baseline(&m.cvae, &start, &end, &sc, 9, &fit).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two.frames[0], many.frames[0]);
        assert_eq!(two.frames[1], many.frames[8]);
        assert_eq!((many.frames[0].t, many.frames[8].t), (start.t, end.t));
        let same = cvae_interpolation_baseline(&m.cvae, &start, &start, &sc, 5, &fit).unwrap();
        assert!(same.frames.iter().all(|f| *f == same.frames[0]));
        assert!(cvae_interpolation_baseline(&m.cvae, &start, &end, &sc, 1, &fit).is_err());
        let tpl = BodyTemplate::default();
        assert!(e_smooth_per_meter(&many, &tpl).unwrap() > 0.0);
        assert!(e_smooth_per_meter(&same, &tpl).is_err());
    }
}
