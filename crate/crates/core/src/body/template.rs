//! Procedurally generated capsule humanoid standing in for a licensed body
//! template. Coordinates are z-up, the body faces +y, its left side is +x and
//! the pelvis joint sits at the origin.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::params::{HAND_DIM, POSE_DIM, SHAPE_DIM};
use crate::error::{Error, Result};
use crate::math::*;

pub const NUM_BODY_JOINTS: usize = 22;
pub const NUM_HAND_JOINTS: usize = 2;
pub const NUM_JOINTS: usize = NUM_BODY_JOINTS + NUM_HAND_JOINTS;
/// Joints driven by the pose latent (everything but the pelvis).
pub const POSED_BODY_JOINTS: usize = NUM_BODY_JOINTS - 1;
pub const MAX_INFLUENCES: usize = 4;

/// Default seed for [`BodyTemplate::procedural`].
pub const DEFAULT_TEMPLATE_SEED: u64 = 0x5eed_b0d1;

pub mod joint {
    pub const PELVIS: usize = 0;
    pub const L_HIP: usize = 1;
    pub const R_HIP: usize = 2;
    pub const SPINE1: usize = 3;
    pub const L_KNEE: usize = 4;
    pub const R_KNEE: usize = 5;
    pub const SPINE2: usize = 6;
    pub const L_ANKLE: usize = 7;
    pub const R_ANKLE: usize = 8;
    pub const SPINE3: usize = 9;
    pub const L_FOOT: usize = 10;
    pub const R_FOOT: usize = 11;
    pub const NECK: usize = 12;
    pub const L_COLLAR: usize = 13;
    pub const R_COLLAR: usize = 14;
    pub const HEAD: usize = 15;
    pub const L_SHOULDER: usize = 16;
    pub const R_SHOULDER: usize = 17;
    pub const L_ELBOW: usize = 18;
    pub const R_ELBOW: usize = 19;
    pub const L_WRIST: usize = 20;
    pub const R_WRIST: usize = 21;
    pub const L_HAND: usize = 22;
    pub const R_HAND: usize = 23;
}

/// Pose-latent coordinates with a fixed, interpretable meaning. Each drives a
/// single joint axis (the spine one spreads over three joints); the remaining
/// latent coordinates are random directions orthogonal to these.
pub mod synergy {
    pub const L_HIP_FLEX: usize = 0;
    pub const R_HIP_FLEX: usize = 1;
    pub const L_KNEE_FLEX: usize = 2;
    pub const R_KNEE_FLEX: usize = 3;
    pub const L_ANKLE_FLEX: usize = 4;
    pub const R_ANKLE_FLEX: usize = 5;
    pub const SPINE_BEND: usize = 6;
    pub const L_ARM_SWING: usize = 7;
    pub const R_ARM_SWING: usize = 8;
    pub const L_ELBOW_BEND: usize = 9;
    pub const R_ELBOW_BEND: usize = 10;
    pub const L_ARM_LOWER: usize = 11;
    pub const R_ARM_LOWER: usize = 12;
    pub const COUNT: usize = 13;
}

/// Radians of joint rotation per unit of pose latent along one column.
pub const POSE_MAP_SCALE: f64 = 0.5;

const PARENTS: [i32; NUM_JOINTS] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck", "left_collar",
    "right_collar", "head", "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hand", "right_hand",
];

/// Height of the sole plane below the pelvis in the rest pose.
pub const REST_SOLE_DEPTH: f64 = 0.95;

/// Named vertex subsets; all of them together form the scene-contact set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexGroups {
    pub left_sole: Vec<u32>,
    pub right_sole: Vec<u32>,
    pub buttocks: Vec<u32>,
    pub thigh_back: Vec<u32>,
    pub palm: Vec<u32>,
}

impl VertexGroups {
    pub fn named(&self) -> [(&'static str, &[u32]); 5] {
        [
            ("left_sole", &self.left_sole),
            ("right_sole", &self.right_sole),
            ("buttocks", &self.buttocks),
            ("thigh_back", &self.thigh_back),
            ("palm", &self.palm),
        ]
    }

    /// Union of every group, in group order.
    pub fn contact_set(&self) -> Vec<u32> {
        self.named().iter().flat_map(|(_, g)| g.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyTemplate {
    pub rest_vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub joint_names: Vec<String>,
    pub rest_joints: Vec<Vec3>,
    /// `-1` marks the root.
    pub parents: Vec<i32>,
    pub skin_joints: Vec<[u16; MAX_INFLUENCES]>,
    pub skin_weights: Vec<[f64; MAX_INFLUENCES]>,
    /// Per vertex, one displacement per shape coefficient.
    pub vertex_shape_basis: Vec<[Vec3; SHAPE_DIM]>,
    pub joint_shape_basis: Vec<[Vec3; SHAPE_DIM]>,
    /// `(3 · POSED_BODY_JOINTS) × POSE_DIM`, row-major; rows are joint 1..=21 axis-angle components.
    pub pose_map: Vec<f64>,
    /// `(3 · NUM_HAND_JOINTS) × HAND_DIM`, row-major.
    pub hand_map: Vec<f64>,
    pub groups: VertexGroups,
}

struct Tube {
    from: Vec3,
    to: Vec3,
    radius: f64,
    owner: usize,
    /// Joint blended in near `from` (usually the owner's parent).
    near_from: Option<usize>,
    /// Joint blended in near `to` (usually the child).
    near_to: Option<usize>,
    region: Region,
}

#[derive(Clone, Copy, PartialEq)]
enum Region {
    Torso,
    Hips,
    Head,
    Arm(f64),
    Hand(f64),
    Thigh(f64),
    Leg(f64),
}

const RING_FRACTIONS: [f64; 3] = [0.15, 0.5, 0.85];
const RING_SEGMENTS: usize = 8;

fn rest_joint_positions() -> [Vec3; NUM_JOINTS] {
    let hip_x = 0.09;
    [
        [0.0, 0.0, 0.0],
        [hip_x, 0.0, -0.08],
        [-hip_x, 0.0, -0.08],
        [0.0, -0.02, 0.11],
        [hip_x, 0.0, -0.48],
        [-hip_x, 0.0, -0.48],
        [0.0, -0.02, 0.24],
        [hip_x, 0.0, -0.88],
        [-hip_x, 0.0, -0.88],
        [0.0, 0.0, 0.34],
        [hip_x, 0.13, -0.92],
        [-hip_x, 0.13, -0.92],
        [0.0, 0.0, 0.52],
        [0.08, 0.0, 0.44],
        [-0.08, 0.0, 0.44],
        [0.0, 0.02, 0.62],
        [0.18, 0.0, 0.45],
        [-0.18, 0.0, 0.45],
        [0.44, 0.0, 0.45],
        [-0.44, 0.0, 0.45],
        [0.68, 0.0, 0.45],
        [-0.68, 0.0, 0.45],
        [0.76, 0.0, 0.45],
        [-0.76, 0.0, 0.45],
    ]
}

fn perpendicular_basis(d: Vec3) -> (Vec3, Vec3) {
    let helper = if fabs(d[2]) < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let u = cross(d, helper);
    let u = scale(u, 1.0 / norm(u));
    let w = cross(d, u);
    (u, w)
}

/// Orthonormalizes `columns` in place (classical Gram-Schmidt, repeated once).
fn orthonormalize(columns: &mut [Vec<f64>]) {
    for i in 0..columns.len() {
        for _ in 0..2 {
            for j in 0..i {
                let proj: f64 = columns[i].iter().zip(&columns[j]).map(|(a, b)| a * b).sum();
                let (head, tail) = columns.split_at_mut(i);
                for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                    *x -= proj * y;
                }
            }
        }
        let n = sqrt(columns[i].iter().map(|x| x * x).sum());
        for x in columns[i].iter_mut() {
            *x /= n;
        }
    }
}

impl BodyTemplate {
    /// Builds the humanoid deterministically from `seed`.
    pub fn procedural(seed: u64) -> Self {
        use joint::*;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = rest_joint_positions();
        let top_of_head = [0.0, 0.02, 0.80];
        let sides: [(f64, [usize; 9]); 2] = [
            (1.0, [L_COLLAR, L_SHOULDER, L_ELBOW, L_WRIST, L_HAND, L_HIP, L_KNEE, L_ANKLE, L_FOOT]),
            (-1.0, [R_COLLAR, R_SHOULDER, R_ELBOW, R_WRIST, R_HAND, R_HIP, R_KNEE, R_ANKLE, R_FOOT]),
        ];

        let mut tubes = vec![
            Tube { from: [0.0, 0.0, -0.14], to: j[PELVIS], radius: 0.15, owner: PELVIS, near_from: None, near_to: None, region: Region::Hips },
            Tube { from: j[PELVIS], to: j[SPINE1], radius: 0.15, owner: PELVIS, near_from: None, near_to: Some(SPINE1), region: Region::Torso },
            Tube { from: j[SPINE1], to: j[SPINE2], radius: 0.15, owner: SPINE1, near_from: Some(PELVIS), near_to: Some(SPINE2), region: Region::Torso },
            Tube { from: j[SPINE2], to: j[SPINE3], radius: 0.16, owner: SPINE2, near_from: Some(SPINE1), near_to: Some(SPINE3), region: Region::Torso },
            Tube { from: j[SPINE3], to: j[NECK], radius: 0.16, owner: SPINE3, near_from: Some(SPINE2), near_to: None, region: Region::Torso },
            Tube { from: j[NECK], to: j[HEAD], radius: 0.05, owner: NECK, near_from: Some(SPINE3), near_to: Some(HEAD), region: Region::Head },
            Tube { from: j[HEAD], to: top_of_head, radius: 0.10, owner: HEAD, near_from: None, near_to: None, region: Region::Head },
        ];
        for &(s, [collar, shoulder, elbow, wrist, hand, hip, knee, ankle, foot]) in &sides {
            let tip = [s * 0.86, 0.0, 0.45];
            let toe = [s * 0.09, 0.21, -0.92];
            tubes.extend([
                Tube { from: j[collar], to: j[shoulder], radius: 0.06, owner: collar, near_from: Some(SPINE3), near_to: Some(shoulder), region: Region::Arm(s) },
                Tube { from: j[shoulder], to: j[elbow], radius: 0.05, owner: shoulder, near_from: Some(collar), near_to: Some(elbow), region: Region::Arm(s) },
                Tube { from: j[elbow], to: j[wrist], radius: 0.04, owner: elbow, near_from: Some(shoulder), near_to: Some(wrist), region: Region::Arm(s) },
                Tube { from: j[wrist], to: j[hand], radius: 0.035, owner: wrist, near_from: Some(elbow), near_to: Some(hand), region: Region::Hand(s) },
                Tube { from: j[hand], to: tip, radius: 0.03, owner: hand, near_from: Some(wrist), near_to: None, region: Region::Hand(s) },
                Tube { from: j[hip], to: j[knee], radius: 0.07, owner: hip, near_from: Some(PELVIS), near_to: Some(knee), region: Region::Thigh(s) },
                Tube { from: j[knee], to: j[ankle], radius: 0.05, owner: knee, near_from: Some(hip), near_to: Some(ankle), region: Region::Leg(s) },
                Tube { from: j[ankle], to: j[foot], radius: 0.035, owner: ankle, near_from: None, near_to: None, region: Region::Leg(s) },
                Tube { from: j[foot], to: toe, radius: 0.03, owner: foot, near_from: Some(ankle), near_to: None, region: Region::Leg(s) },
            ]);
        }

        let mut verts: Vec<Vec3> = Vec::new();
        let mut faces: Vec<[u32; 3]> = Vec::new();
        let mut skin_joints = Vec::new();
        let mut skin_weights = Vec::new();
        let mut shape: Vec<[Vec3; SHAPE_DIM]> = Vec::new();
        let mut groups = VertexGroups {
            left_sole: vec![],
            right_sole: vec![],
            buttocks: vec![],
            thigh_back: vec![],
            palm: vec![],
        };

        let random_dirs: Vec<[Vec3; 4]> = (0..tubes.len())
            .map(|_| core::array::from_fn(|_| core::array::from_fn(|_| StandardNormal.sample(&mut rng))))
            .collect();

        for (ti, tube) in tubes.iter().enumerate() {
            let axis = sub(tube.to, tube.from);
            let len = norm(axis);
            let d = scale(axis, 1.0 / len);
            let (u, w) = perpendicular_basis(d);
            let base = verts.len() as u32;
            for (ri, &f) in RING_FRACTIONS.iter().enumerate() {
                let center = add(tube.from, scale(axis, f));
                for s in 0..RING_SEGMENTS {
                    let ang = 2.0 * core::f64::consts::PI * s as f64 / RING_SEGMENTS as f64;
                    let radial = add(scale(u, cos(ang)), scale(w, sin(ang)));
                    let idx = verts.len() as u32;
                    let pos = add(center, scale(radial, tube.radius));
                    verts.push(pos);

                    let (mut js, mut ws) = ([tube.owner as u16, 0, 0, 0], [1.0, 0.0, 0.0, 0.0]);
                    if ri == 0 {
                        if let Some(p) = tube.near_from {
                            js = [tube.owner as u16, p as u16, 0, 0];
                            ws = [0.75, 0.25, 0.0, 0.0];
                        }
                    } else if ri == RING_FRACTIONS.len() - 1 {
                        if let Some(c) = tube.near_to {
                            js = [tube.owner as u16, c as u16, 0, 0];
                            ws = [0.75, 0.25, 0.0, 0.0];
                        }
                    }
                    skin_joints.push(js);
                    skin_weights.push(ws);

                    let mut basis = [ZERO3; SHAPE_DIM];
                    basis[0] = [0.0, 0.0, 0.04 * pos[2]];
                    basis[1] = scale(radial, 0.1 * tube.radius);
                    match tube.region {
                        Region::Thigh(side) | Region::Leg(side) => {
                            basis[2] = [0.0, 0.0, 0.04 * (pos[2] - j[L_HIP][2])];
                            basis[5] = [0.015 * side, 0.0, 0.0];
                        }
                        Region::Arm(side) | Region::Hand(side) => {
                            basis[3] = [0.04 * (pos[0] - j[L_COLLAR][0] * side), 0.0, 0.0];
                            if tube.owner != L_COLLAR && tube.owner != R_COLLAR {
                                basis[4] = [0.02 * side, 0.0, 0.0];
                            }
                        }
                        _ => {}
                    }
                    for k in 0..4 {
                        basis[6 + k] = scale(random_dirs[ti][k], 0.005);
                    }
                    shape.push(basis);

                    let back = -radial[1] > 0.5;
                    let down = -radial[2] > 0.5;
                    match tube.region {
                        Region::Hips if back && ri == 0 => groups.buttocks.push(idx),
                        Region::Thigh(_) if back && ri < 2 => groups.thigh_back.push(idx),
                        Region::Hand(_) if down => groups.palm.push(idx),
                        _ => {}
                    }
                }
            }
            for ri in 0..RING_FRACTIONS.len() - 1 {
                for s in 0..RING_SEGMENTS {
                    let s1 = (s + 1) % RING_SEGMENTS;
                    let a = base + (ri * RING_SEGMENTS + s) as u32;
                    let b = base + (ri * RING_SEGMENTS + s1) as u32;
                    let c = base + ((ri + 1) * RING_SEGMENTS + s) as u32;
                    let e = base + ((ri + 1) * RING_SEGMENTS + s1) as u32;
                    faces.push([a, b, e]);
                    faces.push([a, e, c]);
                }
            }
        }

        // Flat sole patches under each foot, rigidly attached to the ankle.
        for &(s, chain) in &sides {
            let ankle = chain[7];
            let base = verts.len() as u32;
            let (nx, ny) = (3usize, 4usize);
            for iy in 0..ny {
                for ix in 0..nx {
                    let x = s * 0.09 + (ix as f64 - 1.0) * 0.04;
                    let y = -0.05 + 0.23 * iy as f64 / (ny - 1) as f64;
                    let pos = [x, y, -REST_SOLE_DEPTH];
                    let idx = verts.len() as u32;
                    verts.push(pos);
                    skin_joints.push([ankle as u16, 0, 0, 0]);
                    skin_weights.push([1.0, 0.0, 0.0, 0.0]);
                    let mut basis = [ZERO3; SHAPE_DIM];
                    basis[0] = [0.0, 0.0, 0.04 * pos[2]];
                    basis[2] = [0.0, 0.0, 0.04 * (pos[2] - j[L_HIP][2])];
                    basis[5] = [0.015 * s, 0.0, 0.0];
                    shape.push(basis);
                    if s > 0.0 {
                        groups.left_sole.push(idx);
                    } else {
                        groups.right_sole.push(idx);
                    }
                }
            }
            for iy in 0..ny - 1 {
                for ix in 0..nx - 1 {
                    let a = base + (iy * nx + ix) as u32;
                    let b = a + 1;
                    let c = a + nx as u32;
                    let e = c + 1;
                    // Outward normal points down (-z).
                    faces.push([a, e, b]);
                    faces.push([a, c, e]);
                }
            }
        }

        let joint_shape: Vec<[Vec3; SHAPE_DIM]> = (0..NUM_JOINTS)
            .map(|ji| {
                let pos = j[ji];
                let mut basis = [ZERO3; SHAPE_DIM];
                basis[0] = [0.0, 0.0, 0.04 * pos[2]];
                let is_leg = [L_HIP, R_HIP, L_KNEE, R_KNEE, L_ANKLE, R_ANKLE, L_FOOT, R_FOOT].contains(&ji);
                let is_arm = ji >= L_COLLAR && ji != HEAD && ji != NECK;
                let side = if pos[0] >= 0.0 { 1.0 } else { -1.0 };
                if is_leg {
                    basis[2] = [0.0, 0.0, 0.04 * (pos[2] - j[L_HIP][2])];
                    basis[5] = [0.015 * side, 0.0, 0.0];
                }
                if is_arm {
                    basis[3] = [0.04 * (pos[0] - j[L_COLLAR][0] * side), 0.0, 0.0];
                    if ji != L_COLLAR && ji != R_COLLAR {
                        basis[4] = [0.02 * side, 0.0, 0.0];
                    }
                }
                basis
            })
            .collect();

        Self {
            rest_vertices: verts,
            faces,
            joint_names: JOINT_NAMES.iter().map(|s| String::from(*s)).collect(),
            rest_joints: j.to_vec(),
            parents: PARENTS.to_vec(),
            skin_joints,
            skin_weights,
            vertex_shape_basis: shape,
            joint_shape_basis: joint_shape,
            pose_map: build_pose_map(&mut rng),
            hand_map: build_hand_map(&mut rng),
            groups,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn num_joints(&self) -> usize {
        self.rest_joints.len()
    }

    /// Checks dimensions, skinning weights, the skeleton tree and vertex groups.
    pub fn validate(&self) -> Result<()> {
        let v = self.num_vertices();
        let bad = |m: String| Err(Error::Shape(m));
        if v < 300 {
            return bad(format!("template has {v} vertices, need at least 300"));
        }
        if self.num_joints() != NUM_JOINTS
            || self.parents.len() != NUM_JOINTS
            || self.joint_shape_basis.len() != NUM_JOINTS
        {
            return bad(format!("template must have {NUM_JOINTS} joints"));
        }
        if self.skin_joints.len() != v || self.skin_weights.len() != v || self.vertex_shape_basis.len() != v {
            return bad("per-vertex arrays disagree with vertex count".into());
        }
        if self.pose_map.len() != 3 * POSED_BODY_JOINTS * POSE_DIM || self.hand_map.len() != 3 * NUM_HAND_JOINTS * HAND_DIM {
            return bad("pose or hand map has wrong size".into());
        }
        if self.parents[0] != -1 {
            return bad("joint 0 must be the root".into());
        }
        for (ji, &p) in self.parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= ji {
                return bad(format!("joint {ji} has parent {p}; parents must precede children"));
            }
        }
        for (i, (js, ws)) in self.skin_joints.iter().zip(&self.skin_weights).enumerate() {
            let sum: f64 = ws.iter().sum();
            if ws.iter().any(|w| *w < 0.0 || !w.is_finite()) || fabs(sum - 1.0) > 1e-6 {
                return bad(format!("skinning weights of vertex {i} are invalid"));
            }
            if js.iter().any(|&j| j as usize >= NUM_JOINTS) {
                return bad(format!("vertex {i} references an unknown joint"));
            }
        }
        for f in &self.faces {
            if f.iter().any(|&i| i as usize >= v) {
                return bad("face references a missing vertex".into());
            }
        }
        let mut seen = vec![false; v];
        for (name, g) in self.groups.named() {
            if g.is_empty() {
                return bad(format!("vertex group {name} is empty"));
            }
            for &i in g {
                let i = i as usize;
                if i >= v || seen[i] {
                    return bad(format!("vertex group {name} overlaps or is out of range"));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }
}

impl Default for BodyTemplate {
    fn default() -> Self {
        Self::procedural(DEFAULT_TEMPLATE_SEED)
    }
}

/// Column `c` of the pose map as a full-length unit vector.
fn designed_pose_columns() -> Vec<Vec<f64>> {
    use joint::*;
    let rows = 3 * POSED_BODY_JOINTS;
    let unit = |jnt: usize, axis: usize| {
        let mut c = vec![0.0; rows];
        c[3 * (jnt - 1) + axis] = 1.0;
        c
    };
    let spine = {
        let mut c = vec![0.0; rows];
        for jnt in [SPINE1, SPINE2, SPINE3] {
            c[3 * (jnt - 1)] = 1.0 / sqrt(3.0);
        }
        c
    };
    vec![
        unit(L_HIP, 0),
        unit(R_HIP, 0),
        unit(L_KNEE, 0),
        unit(R_KNEE, 0),
        unit(L_ANKLE, 0),
        unit(R_ANKLE, 0),
        spine,
        unit(L_SHOULDER, 2),
        unit(R_SHOULDER, 2),
        unit(L_ELBOW, 2),
        unit(R_ELBOW, 2),
        unit(L_SHOULDER, 1),
        unit(R_SHOULDER, 1),
    ]
}

fn build_pose_map(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let rows = 3 * POSED_BODY_JOINTS;
    let mut cols = designed_pose_columns();
    debug_assert_eq!(cols.len(), synergy::COUNT);
    while cols.len() < POSE_DIM {
        cols.push((0..rows).map(|_| StandardNormal.sample(rng)).collect());
    }
    orthonormalize(&mut cols);
    let mut map = vec![0.0; rows * POSE_DIM];
    for (c, col) in cols.iter().enumerate() {
        for (r, x) in col.iter().enumerate() {
            map[r * POSE_DIM + c] = POSE_MAP_SCALE * x;
        }
    }
    map
}

fn build_hand_map(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let rows = 3 * NUM_HAND_JOINTS;
    let mut row_vecs: Vec<Vec<f64>> =
        (0..rows).map(|_| (0..HAND_DIM).map(|_| StandardNormal.sample(rng)).collect()).collect();
    orthonormalize(&mut row_vecs);
    row_vecs.into_iter().flatten().map(|x| POSE_MAP_SCALE * x).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn procedural_template_is_valid_and_deterministic() {
        let a = BodyTemplate::procedural(1);
        a.validate().unwrap();
        assert!(a.num_vertices() >= 300);
        assert_eq!(a, BodyTemplate::procedural(1));
        assert_ne!(a.pose_map, BodyTemplate::procedural(2).pose_map);
        for (_, g) in a.groups.named() {
            assert!(!g.is_empty());
        }
    }

    #[test]
    fn unit_pose_latent_bounded_per_joint() {
        let t = BodyTemplate::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mut p: Vec<f64> = (0..POSE_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = sqrt(p.iter().map(|x| x * x).sum());
            p.iter_mut().for_each(|x| *x /= n);
            for jn in 0..POSED_BODY_JOINTS {
                let mut aa = [0.0; 3];
                for (a, slot) in aa.iter_mut().enumerate() {
                    let row = 3 * jn + a;
                    *slot = (0..POSE_DIM).map(|c| t.pose_map[row * POSE_DIM + c] * p[c]).sum();
                }
                assert!(norm(aa) <= POSE_MAP_SCALE + 1e-12);
            }
        }
    }

    #[test]
    fn designed_synergy_drives_single_axis() {
        let t = BodyTemplate::default();
        let row = 3 * (joint::L_KNEE - 1);
        assert!((t.pose_map[row * POSE_DIM + synergy::L_KNEE_FLEX] - POSE_MAP_SCALE).abs() < 1e-12);
        for r in 0..3 * POSED_BODY_JOINTS {
            if r != row {
                assert!(t.pose_map[r * POSE_DIM + synergy::L_KNEE_FLEX].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn validation_catches_broken_weights() {
        let mut t = BodyTemplate::default();
        t.skin_weights[3] = [0.5, 0.4, 0.0, 0.0];
        assert!(t.validate().is_err());
        let mut t = BodyTemplate::default();
        t.groups.palm.push(t.groups.left_sole[0]);
        assert!(t.validate().is_err());
        let mut t = BodyTemplate::default();
        t.parents[4] = 7;
        assert!(t.validate().is_err());
    }
}
