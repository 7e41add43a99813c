//! Procedural scenes (floor plus boxes) and walking/sitting motions with a
//! known stance schedule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body::{forward, synergy, BodyParams, BodyTemplate, POSE_MAP_SCALE, SHAPE_DIM};
use crate::energy::Stance;
use crate::error::{arg_err, Result};
use crate::math::*;
use crate::rotation::rot6d_from_yaw;
use crate::scene::{SceneMesh, SdfOptions};
use crate::sequence::{MotionSequence, DEFAULT_FPS};

/// Length of the standing sequence produced for an empty path.
pub const STATIC_SECONDS: f64 = 1.0;
/// Pelvis height above a seat surface when sitting.
const SEAT_CLEARANCE: f64 = 0.15;
/// Largest heading change per frame while walking, radians.
const MAX_YAW_RATE: f64 = 0.06;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub center: Vec3,
    pub size: Vec3,
}

impl BoxSpec {
    pub fn top(&self) -> f64 {
        self.center[2] + 0.5 * self.size[2]
    }

    /// Horizontal distance from `p` to the box footprint.
    pub fn footprint_distance(&self, p: [f64; 2]) -> f64 {
        let dx = (fabs(p[0] - self.center[0]) - 0.5 * self.size[0]).max(0.0);
        let dy = (fabs(p[1] - self.center[1]) - 0.5 * self.size[1]).max(0.0);
        libm::hypot(dx, dy)
    }
}

/// Floor centered at the origin on `z = 0` plus axis-aligned boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    /// Full floor size along x and y.
    pub floor: [f64; 2],
    pub boxes: Vec<BoxSpec>,
    pub seed: u64,
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.floor[0] > 0.0 && self.floor[1] > 0.0) {
            return Err(arg_err(format!("floor extent must be positive, got {:?}", self.floor)));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if b.size.iter().any(|s| !(*s > 0.0)) || !is_finite3(b.center) {
                return Err(arg_err(format!("box {i} has a non-positive extent")));
            }
            if b.center[2] - 0.5 * b.size[2] < -1e-9 {
                return Err(arg_err(format!("box {i} reaches below the floor")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: [f64; 2], margin: f64) -> bool {
        fabs(p[0]) <= 0.5 * self.floor[0] - margin && fabs(p[1]) <= 0.5 * self.floor[1] - margin
    }

    /// SDF options matching this scene: the floor is solid underneath.
    pub fn sdf_options(&self) -> SdfOptions {
        SdfOptions { ground: Some(0.0), ..SdfOptions::default() }
    }

    /// A furnished room: seat-height boxes spread over the floor without
    /// overlapping.
    pub fn random(seed: u64, floor: [f64; 2], num_boxes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut boxes: Vec<BoxSpec> = Vec::new();
        let mut attempts = 0;
        while boxes.len() < num_boxes && attempts < 200 {
            attempts += 1;
            let size = [rng.random_range(0.4..0.9), rng.random_range(0.4..0.9), rng.random_range(0.38..0.48)];
            let hx = 0.5 * floor[0] - 0.5 * size[0] - 0.3;
            let hy = 0.5 * floor[1] - 0.5 * size[1] - 0.3;
            if hx <= 0.0 || hy <= 0.0 {
                continue;
            }
            let c = [rng.random_range(-hx..hx), rng.random_range(-hy..hy), 0.5 * size[2]];
            let candidate = BoxSpec { center: c, size };
            let clear = boxes.iter().all(|b| {
                fabs(b.center[0] - c[0]) > 0.5 * (b.size[0] + size[0]) + 1.0
                    || fabs(b.center[1] - c[1]) > 0.5 * (b.size[1] + size[1]) + 1.0
            });
            if clear {
                boxes.push(candidate);
            }
        }
        Self { floor, boxes, seed }
    }
}

/// Two floor triangles plus twelve per box, all facing outwards.
pub fn gen_scene(spec: &SyntheticSceneSpec) -> Result<SceneMesh> {
    spec.validate()?;
    let (fx, fy) = (0.5 * spec.floor[0], 0.5 * spec.floor[1]);
    let mut v = vec![[-fx, -fy, 0.0], [fx, -fy, 0.0], [fx, fy, 0.0], [-fx, fy, 0.0]];
    let mut f: Vec<[u32; 3]> = vec![[0, 1, 2], [0, 2, 3]];
    for b in &spec.boxes {
        let base = v.len() as u32;
        for k in 0..8 {
            let sx = if k & 1 == 0 { -0.5 } else { 0.5 };
            let sy = if k & 2 == 0 { -0.5 } else { 0.5 };
            let sz = if k & 4 == 0 { -0.5 } else { 0.5 };
            v.push([b.center[0] + sx * b.size[0], b.center[1] + sy * b.size[1], b.center[2] + sz * b.size[2]]);
        }
        const BOX_FACES: [[u32; 3]; 12] = [
            [0, 2, 1], [1, 2, 3], // -z
            [4, 5, 6], [5, 7, 6], // +z
            [0, 1, 4], [1, 5, 4], // -y
            [2, 6, 3], [3, 6, 7], // +y
            [0, 4, 2], [2, 4, 6], // -x
            [1, 3, 5], [3, 7, 5], // +x
        ];
        f.extend(BOX_FACES.iter().map(|t| [base + t[0], base + t[1], base + t[2]]));
    }
    let (mesh, dropped) = SceneMesh::from_raw(v, f)?;
    debug_assert_eq!(dropped, 0);
    Ok(mesh)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitParams {
    /// Pelvis travel per stance phase, meters.
    pub step_length: f64,
    /// Stance phases per second.
    pub cadence: f64,
    /// Peak swing-knee flexion, radians.
    pub knee_lift: f64,
    /// Shoulder swing amplitude, radians.
    pub arm_swing: f64,
}

impl Default for GaitParams {
    fn default() -> Self {
        Self { step_length: 0.5, cadence: 2.0, knee_lift: 0.6, arm_swing: 0.25 }
    }
}

impl GaitParams {
    pub fn speed(&self) -> f64 {
        self.step_length * self.cadence
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMotionSpec {
    /// Pelvis path on the floor.
    pub waypoints: Vec<[f64; 2]>,
    pub gait: GaitParams,
    pub beta: [f64; SHAPE_DIM],
    /// Index of a box to sit on after the last waypoint.
    pub sit: Option<usize>,
    pub fps: f64,
    pub seed: u64,
}

impl SyntheticMotionSpec {
    pub fn walk(waypoints: Vec<[f64; 2]>, seed: u64) -> Self {
        Self { waypoints, gait: GaitParams::default(), beta: [0.0; SHAPE_DIM], sit: None, fps: DEFAULT_FPS, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMotion {
    pub sequence: MotionSequence,
    /// Planted foot of every frame.
    pub stance: Vec<Stance>,
}

/// Leg measurements of one shaped body.
struct LegGeometry {
    /// Hip to ankle with a straight knee.
    leg: f64,
    /// Pelvis height above the floor when standing.
    stand: f64,
    /// Rest sole centroids relative to the pelvis in the heading frame, left first.
    sole_xy: [[f64; 2]; 2],
}

impl LegGeometry {
    /// Heading-frame offset of one sole from the pelvis for hip angle `theta`
    /// with a straight knee and a level foot.
    fn sole_offset(&self, side: usize, theta: f64) -> [f64; 2] {
        [self.sole_xy[side][0], self.sole_xy[side][1] + self.leg * sin(theta)]
    }
}

fn rotate2(yaw: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = (sin(yaw), cos(yaw));
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn wrap_angle(mut a: f64) -> f64 {
    while a > PI {
        a -= 2.0 * PI;
    }
    while a < -PI {
        a += 2.0 * PI;
    }
    a
}

fn leg_geometry(template: &BodyTemplate, beta: &[f64; SHAPE_DIM]) -> Result<LegGeometry> {
    use crate::body::joint::*;
    let rest = BodyParams { beta: *beta, ..BodyParams::default() };
    let m = forward(template, &rest)?;
    let l = m.centroid_of(&template.groups.left_sole);
    let r = m.centroid_of(&template.groups.right_sole);
    Ok(LegGeometry {
        leg: m.joints[L_HIP][2] - m.joints[L_ANKLE][2],
        stand: -l[2],
        sole_xy: [[l[0], l[1]], [r[0], r[1]]],
    })
}

fn add2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn polyline_length(pts: &[[f64; 2]]) -> f64 {
    pts.windows(2).map(|w| libm::hypot(w[1][0] - w[0][0], w[1][1] - w[0][1])).sum()
}

fn point_at(pts: &[[f64; 2]], s: f64) -> [f64; 2] {
    let mut left = s.max(0.0);
    for w in pts.windows(2) {
        let l = libm::hypot(w[1][0] - w[0][0], w[1][1] - w[0][1]);
        if left <= l && l > 0.0 {
            let a = left / l;
            return [w[0][0] + a * (w[1][0] - w[0][0]), w[0][1] + a * (w[1][1] - w[0][1])];
        }
        left -= l;
    }
    *pts.last().unwrap_or(&[0.0, 0.0])
}

/// Yaw that makes the body's forward axis (+y) point along `(dx, dy)`.
pub fn heading_yaw(dx: f64, dy: f64) -> f64 {
    atan2(-dx, dy)
}

fn set_angle(p: &mut [f64], column: usize, radians: f64) {
    p[column] = radians / POSE_MAP_SCALE;
}

/// Leg, arm and trunk angles for one frame.
struct Posture {
    /// `(hip, knee, ankle)` per side, left first.
    legs: [[f64; 3]; 2],
    arm_swing: f64,
}

fn apply_posture(b: &mut BodyParams, pose: &Posture) {
    use synergy::*;
    let cols = [[L_HIP_FLEX, L_KNEE_FLEX, L_ANKLE_FLEX], [R_HIP_FLEX, R_KNEE_FLEX, R_ANKLE_FLEX]];
    for (side, c) in cols.iter().enumerate() {
        for k in 0..3 {
            set_angle(&mut b.p, c[k], pose.legs[side][k]);
        }
    }
    set_angle(&mut b.p, L_ARM_LOWER, 1.2);
    set_angle(&mut b.p, R_ARM_LOWER, -1.2);
    set_angle(&mut b.p, L_ARM_SWING, pose.arm_swing);
    set_angle(&mut b.p, R_ARM_SWING, pose.arm_swing);
    set_angle(&mut b.p, L_ELBOW_BEND, 0.2);
    set_angle(&mut b.p, R_ELBOW_BEND, -0.2);
}

/// Walks the waypoint path with alternating stance feet; the planted sole
/// stays fixed in the body's heading frame and the pelvis rides on the
/// straight stance leg. An optional sit lowers the body onto a box.
pub fn gen_motion(
    scene: &SyntheticSceneSpec,
    spec: &SyntheticMotionSpec,
    template: &BodyTemplate,
) -> Result<SyntheticMotion> {
    scene.validate()?;
    let g = spec.gait;
    if !(g.cadence > 0.0 && g.step_length > 0.0 && spec.fps > 0.0) {
        return Err(arg_err("cadence, step length and frame rate must be positive"));
    }
    if spec.waypoints.is_empty() {
        return Err(arg_err("motion needs at least one waypoint"));
    }
    if let Some(w) = spec.waypoints.iter().find(|w| !scene.contains(**w, 0.0)) {
        return Err(arg_err(format!("waypoint {w:?} leaves the floor")));
    }
    let seat = match spec.sit {
        Some(i) => Some(*scene.boxes.get(i).ok_or_else(|| arg_err(format!("no box {i} to sit on")))?),
        None => None,
    };
    let geo = leg_geometry(template, &spec.beta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let hand_noise = Normal::new(0.0, 0.3).map_err(|_| arg_err("bad hand noise"))?;
    let hand: Vec<f64> = (0..crate::body::HAND_DIM).map(|_| hand_noise.sample(&mut rng)).collect();
    let base = {
        let mut b = BodyParams { beta: spec.beta, ..BodyParams::default() };
        b.h.copy_from_slice(&hand);
        b
    };

    let pts = &spec.waypoints;
    let length = polyline_length(pts);
    let mut frames = Vec::new();
    let mut stance = Vec::new();
    let mut yaw = if pts.len() > 1 {
        let (a, b) = (pts[0], point_at(pts, 0.25_f64.min(length)));
        heading_yaw(b[0] - a[0], b[1] - a[1])
    } else {
        0.0
    };

    if length < 1e-9 {
        let n = libm::round(STATIC_SECONDS * spec.fps) as usize + 1;
        let mut b = base;
        b.t = [pts[0][0], pts[0][1], geo.stand];
        b.r = rot6d_from_yaw(yaw);
        apply_posture(&mut b, &Posture { legs: [[0.0; 3]; 2], arm_swing: 0.0 });
        frames = vec![b; n];
        stance = vec![Stance::Left; n];
    } else {
        let n_steps = libm::round(length / g.step_length).max(1.0);
        let step = length / n_steps;
        let sin_a = (step / (2.0 * geo.leg)).min(0.9);
        let amp = libm::asin(sin_a);
        let n = libm::round(length / g.speed() * spec.fps) as usize + 1;
        let end = *pts.last().expect("non-empty path");
        // The planted sole is the pivot: the pelvis is placed from it, so
        // turning never drags the stance foot.
        let mut pelvis = pts[0];
        let mut anchor = add2(pelvis, rotate2(yaw, geo.sole_offset(0, amp)));
        let mut current_step = 0usize;
        for i in 0..n {
            let s = (length * i as f64 / (n - 1) as f64).min(length);
            let k = libm::floor(s / step).min(n_steps - 1.0) as usize;
            let tau = s / step - k as f64;
            while current_step < k {
                // The swing foot lands where the next stance begins.
                let (old, new) = (current_step % 2, (current_step + 1) % 2);
                let landing_pelvis = sub2(anchor, rotate2(yaw, geo.sole_offset(old, -amp)));
                anchor = add2(landing_pelvis, rotate2(yaw, geo.sole_offset(new, amp)));
                current_step += 1;
            }
            let stance_side = k % 2;
            let left_stance = stance_side == 0;

            let target = point_at(pts, s + 0.6);
            let to_target = sub2(target, pelvis);
            let to_end = sub2(end, pelvis);
            if libm::hypot(to_target[0], to_target[1]) > 0.2 && libm::hypot(to_end[0], to_end[1]) > 0.15 {
                let want = heading_yaw(to_target[0], to_target[1]);
                let turn = wrap_angle(want - yaw).clamp(-MAX_YAW_RATE, MAX_YAW_RATE);
                yaw = wrap_angle(yaw + turn);
            }
            let theta_s = libm::asin((1.0 - 2.0 * tau) * sin_a);
            let theta_w = -amp * cos(PI * tau);
            let knee = -g.knee_lift * sin(PI * tau);
            let stance_leg = [theta_s, 0.0, -theta_s];
            let swing_leg = [theta_w, knee, -(theta_w + knee)];
            let legs = if left_stance { [stance_leg, swing_leg] } else { [swing_leg, stance_leg] };
            let swing_sign = if left_stance { 1.0 } else { -1.0 };
            pelvis = sub2(anchor, rotate2(yaw, geo.sole_offset(stance_side, theta_s)));

            let mut b = base;
            b.t = [pelvis[0], pelvis[1], geo.stand - geo.leg * (1.0 - cos(theta_s))];
            b.r = rot6d_from_yaw(yaw);
            apply_posture(&mut b, &Posture { legs, arm_swing: swing_sign * g.arm_swing * cos(PI * tau) });
            frames.push(b);
            stance.push(if left_stance { Stance::Left } else { Stance::Right });
        }
    }

    if let Some(bx) = seat {
        let last = *frames.last().expect("at least one frame");
        let last_stance = *stance.last().expect("at least one frame");
        let end = *pts.last().expect("at least one waypoint");
        let away = [end[0] - bx.center[0], end[1] - bx.center[1]];
        let seat_yaw = heading_yaw(away[0], away[1]);
        let d = libm::hypot(away[0], away[1]).max(1e-9);
        let seat_xy = [end[0] - 0.15 * away[0] / d, end[1] - 0.15 * away[1] / d];
        let seat_z = bx.top() + SEAT_CLEARANCE;

        let turn = libm::round(0.5 * spec.fps) as usize;
        let lower = libm::round(1.0 * spec.fps) as usize;
        let hold = libm::round(0.5 * spec.fps) as usize;
        let dyaw = wrap_angle(seat_yaw - yaw);
        let settle = Posture { legs: [[0.0; 3]; 2], arm_swing: 0.0 };
        for i in 1..=turn {
            let a = i as f64 / turn as f64;
            let mut b = last;
            b.t = [last.t[0], last.t[1], last.t[2] + a * (geo.stand - last.t[2])];
            b.r = rot6d_from_yaw(yaw + a * dyaw);
            let mut mix = Posture { legs: [[0.0; 3]; 2], arm_swing: 0.0 };
            for side in 0..2 {
                for k in 0..3 {
                    mix.legs[side][k] = (1.0 - a) * angle_of(&last, side, k) + a * settle.legs[side][k];
                }
            }
            apply_posture(&mut b, &mix);
            frames.push(b);
            stance.push(last_stance);
        }
        let standing = *frames.last().expect("turn frames");
        for i in 1..=lower + hold {
            let a = (i as f64 / lower as f64).min(1.0);
            let w = a * a * (3.0 - 2.0 * a);
            let mut b = standing;
            let flex = 1.4 * w;
            b.t = [
                standing.t[0] + w * (seat_xy[0] - standing.t[0]),
                standing.t[1] + w * (seat_xy[1] - standing.t[1]),
                standing.t[2] + w * (seat_z - standing.t[2]),
            ];
            apply_posture(&mut b, &Posture { legs: [[flex, -flex, 0.0]; 2], arm_swing: 0.0 });
            frames.push(b);
            stance.push(last_stance);
        }
    }

    let mut sequence = MotionSequence::new(frames);
    sequence.fps = spec.fps;
    Ok(SyntheticMotion { sequence, stance })
}

fn angle_of(b: &BodyParams, side: usize, k: usize) -> f64 {
    use synergy::*;
    let cols = [[L_HIP_FLEX, L_KNEE_FLEX, L_ANKLE_FLEX], [R_HIP_FLEX, R_KNEE_FLEX, R_ANKLE_FLEX]];
    b.p[cols[side][k]] * POSE_MAP_SCALE
}

/// A random walk through `scene`: two or three waypoints that keep clear of
/// the boxes, random gait and shape; one in `sit_every` walks ends seated.
pub fn random_motion_spec(scene: &SyntheticSceneSpec, seed: u64, sit_every: usize) -> SyntheticMotionSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clear = |p: [f64; 2]| scene.contains(p, 0.4) && scene.boxes.iter().all(|b| b.footprint_distance(p) > 0.45);
    let segment_clear = |a: [f64; 2], b: [f64; 2]| {
        (0..=20).all(|i| {
            let u = i as f64 / 20.0;
            clear([a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])])
        })
    };
    let gait = GaitParams {
        step_length: rng.random_range(0.55..0.75),
        cadence: rng.random_range(1.8..2.2),
        knee_lift: rng.random_range(0.4..0.8),
        arm_swing: rng.random_range(0.1..0.35),
    };
    let beta: [f64; SHAPE_DIM] = core::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let sit_box = (sit_every > 0 && !scene.boxes.is_empty() && rng.random_range(0..sit_every) == 0)
        .then(|| rng.random_range(0..scene.boxes.len()));

    for _ in 0..500 {
        let hx = 0.5 * scene.floor[0];
        let hy = 0.5 * scene.floor[1];
        let mut pts = vec![[rng.random_range(-hx..hx), rng.random_range(-hy..hy)]];
        let legs = rng.random_range(1..3);
        for _ in 0..legs {
            let prev = *pts.last().expect("start point");
            let ang = rng.random_range(-PI..PI);
            let len = rng.random_range(1.0..2.5);
            pts.push([prev[0] + len * cos(ang), prev[1] + len * sin(ang)]);
        }
        let mut sit = None;
        if let Some(bi) = sit_box {
            let b = scene.boxes[bi];
            let prev = *pts.last().expect("start point");
            let dir = [prev[0] - b.center[0], prev[1] - b.center[1]];
            let d = libm::hypot(dir[0], dir[1]);
            if d < 1e-6 {
                continue;
            }
            let reach = 0.5 * libm::hypot(b.size[0], b.size[1]) + 0.3;
            let approach = [b.center[0] + reach * dir[0] / d, b.center[1] + reach * dir[1] / d];
            if !scene.contains(approach, 0.4) {
                continue;
            }
            *pts.last_mut().expect("start point") = approach;
            sit = Some(bi);
            if !pts.iter().take(pts.len() - 1).all(|p| clear(*p)) {
                continue;
            }
            let n = pts.len();
            if !(0..n - 2).all(|i| segment_clear(pts[i], pts[i + 1])) {
                continue;
            }
            if polyline_length(&pts) < 0.5 {
                continue;
            }
            return SyntheticMotionSpec { waypoints: pts, gait, beta, sit, fps: DEFAULT_FPS, seed };
        }
        if pts.windows(2).all(|w| segment_clear(w[0], w[1])) {
            return SyntheticMotionSpec { waypoints: pts, gait, beta, sit, fps: DEFAULT_FPS, seed };
        }
    }
    // Crowded scene: stand still at the most open spot found.
    SyntheticMotionSpec { waypoints: vec![[0.0, 0.0]], gait, beta, sit: None, fps: DEFAULT_FPS, seed }
}
