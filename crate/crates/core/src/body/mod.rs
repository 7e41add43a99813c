//! Simplified parametric body: `(t, r, β, p, h)` → skeleton joints → skinned
//! vertices, with a reverse-mode pullback for gradient-based fitting.

mod params;
mod template;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub use params::*;
pub use template::*;

use crate::error::{shape_err, Result};
use crate::math::*;
use crate::rotation::{axis_angle_pullback, axis_angle_to_matrix, rot6d_pullback, rot6d_to_matrix};

/// Posed geometry. Faces are shared with the template.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyMesh {
    pub vertices: Vec<Vec3>,
    pub joints: Vec<Vec3>,
}

impl BodyMesh {
    pub fn centroid_of(&self, idx: &[u32]) -> Vec3 {
        let mut c = ZERO3;
        for &i in idx {
            add_assign(&mut c, self.vertices[i as usize]);
        }
        scale(c, 1.0 / idx.len() as f64)
    }
}

/// Intermediate quantities of one forward pass, kept for the pullback.
#[derive(Debug, Clone)]
pub struct Pullback<'a> {
    template: &'a BodyTemplate,
    r: [f64; 6],
    shaped_vertices: Vec<Vec3>,
    shaped_joints: Vec<Vec3>,
    local_aa: Vec<Vec3>,
    local_rot: Vec<Mat3>,
    world_rot: Vec<Mat3>,
}

fn local_axis_angles(template: &BodyTemplate, params: &BodyParams) -> Vec<Vec3> {
    let mut aa = vec![ZERO3; NUM_JOINTS];
    for (jn, slot) in aa.iter_mut().enumerate().skip(1).take(POSED_BODY_JOINTS) {
        for (a, x) in slot.iter_mut().enumerate() {
            let row = &template.pose_map[(3 * (jn - 1) + a) * POSE_DIM..][..POSE_DIM];
            *x = row.iter().zip(&params.p).map(|(m, p)| m * p).sum();
        }
    }
    for hj in 0..NUM_HAND_JOINTS {
        for a in 0..3 {
            let row = &template.hand_map[(3 * hj + a) * HAND_DIM..][..HAND_DIM];
            aa[NUM_BODY_JOINTS + hj][a] = row.iter().zip(&params.h).map(|(m, h)| m * h).sum();
        }
    }
    aa
}

fn check_template(template: &BodyTemplate) -> Result<()> {
    if template.num_joints() != NUM_JOINTS
        || template.parents.len() != NUM_JOINTS
        || template.pose_map.len() != 3 * POSED_BODY_JOINTS * POSE_DIM
        || template.hand_map.len() != 3 * NUM_HAND_JOINTS * HAND_DIM
        || template.skin_joints.len() != template.num_vertices()
        || template.vertex_shape_basis.len() != template.num_vertices()
    {
        return Err(shape_err(format!(
            "template dimensions do not match the {NUM_JOINTS}-joint parameterization"
        )));
    }
    Ok(())
}

/// Poses the template.
pub fn forward(template: &BodyTemplate, params: &BodyParams) -> Result<BodyMesh> {
    forward_with_pullback(template, params).map(|(mesh, _)| mesh)
}

/// Poses the template and keeps what the pullback needs.
///
/// Skinning is evaluated in displacement form,
/// `v' = v + Σ w_j [(R_j − I)(v − J_j) + D_j] + t`, so the rest pose
/// reproduces the template exactly.
pub fn forward_with_pullback<'a>(
    template: &'a BodyTemplate,
    params: &BodyParams,
) -> Result<(BodyMesh, Pullback<'a>)> {
    check_template(template)?;
    let global = rot6d_to_matrix(&params.r)?;

    let shaped_vertices: Vec<Vec3> = template
        .rest_vertices
        .iter()
        .zip(&template.vertex_shape_basis)
        .map(|(v, basis)| {
            let mut out = *v;
            for (b, dir) in params.beta.iter().zip(basis) {
                axpy(&mut out, *b, *dir);
            }
            out
        })
        .collect();
    let shaped_joints: Vec<Vec3> = template
        .rest_joints
        .iter()
        .zip(&template.joint_shape_basis)
        .map(|(v, basis)| {
            let mut out = *v;
            for (b, dir) in params.beta.iter().zip(basis) {
                axpy(&mut out, *b, *dir);
            }
            out
        })
        .collect();

    let local_aa = local_axis_angles(template, params);
    let local_rot: Vec<Mat3> = local_aa.iter().map(|a| axis_angle_to_matrix(*a)).collect();
    let mut world_rot = vec![IDENTITY; NUM_JOINTS];
    // D_j: world joint position minus shaped rest joint position.
    let mut disp = vec![ZERO3; NUM_JOINTS];
    world_rot[0] = global;
    for jn in 1..NUM_JOINTS {
        let p = template.parents[jn] as usize;
        world_rot[jn] = mat_mul(&world_rot[p], &local_rot[jn]);
        let mut rp = world_rot[p];
        for (a, row) in rp.iter_mut().enumerate() {
            row[a] -= 1.0;
        }
        disp[jn] = add(mat_vec(&rp, sub(shaped_joints[jn], shaped_joints[p])), disp[p]);
    }
    let deltas: Vec<Mat3> = world_rot
        .iter()
        .map(|r| {
            let mut d = *r;
            for (a, row) in d.iter_mut().enumerate() {
                row[a] -= 1.0;
            }
            d
        })
        .collect();

    let t = params.t;
    let vertices: Vec<Vec3> = shaped_vertices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut off = ZERO3;
            for (&jn, &w) in template.skin_joints[i].iter().zip(&template.skin_weights[i]) {
                if w == 0.0 {
                    continue;
                }
                let jn = jn as usize;
                let moved = add(mat_vec(&deltas[jn], sub(*v, shaped_joints[jn])), disp[jn]);
                axpy(&mut off, w, moved);
            }
            add(add(*v, off), t)
        })
        .collect();
    let joints: Vec<Vec3> = shaped_joints
        .iter()
        .zip(&disp)
        .map(|(j, d)| add(add(*j, *d), t))
        .collect();

    Ok((
        BodyMesh { vertices, joints },
        Pullback {
            template,
            r: params.r,
            shaped_vertices,
            shaped_joints,
            local_aa,
            local_rot,
            world_rot,
        },
    ))
}

impl Pullback<'_> {
    /// Maps cotangents on vertices (and optionally joints) to a gradient over
    /// the flat parameter record.
    pub fn apply(&self, d_vertices: &[Vec3], d_joints: Option<&[Vec3]>) -> Result<ParamGrad> {
        let tpl = self.template;
        if d_vertices.len() != tpl.num_vertices() {
            return Err(shape_err(format!(
                "{} vertex cotangents for {} vertices",
                d_vertices.len(),
                tpl.num_vertices()
            )));
        }
        if let Some(dj) = d_joints {
            if dj.len() != NUM_JOINTS {
                return Err(shape_err(format!("{} joint cotangents", dj.len())));
            }
        }
        let deltas: Vec<Mat3> = self
            .world_rot
            .iter()
            .map(|r| {
                let mut d = *r;
                for (a, row) in d.iter_mut().enumerate() {
                    row[a] -= 1.0;
                }
                d
            })
            .collect();

        let mut grad = [0.0; PARAM_DIM];
        let mut d_t = ZERO3;
        let mut d_world = vec![ZERO33; NUM_JOINTS];
        let mut d_disp = vec![ZERO3; NUM_JOINTS];
        let mut d_joint = vec![ZERO3; NUM_JOINTS];
        let mut d_beta = [0.0; SHAPE_DIM];

        for (i, g) in d_vertices.iter().enumerate() {
            if *g == ZERO3 {
                continue;
            }
            add_assign(&mut d_t, *g);
            let v = self.shaped_vertices[i];
            let mut d_v = *g;
            for (&jn, &w) in tpl.skin_joints[i].iter().zip(&tpl.skin_weights[i]) {
                if w == 0.0 {
                    continue;
                }
                let jn = jn as usize;
                let rel = sub(v, self.shaped_joints[jn]);
                add_outer(&mut d_world[jn], w, *g, rel);
                axpy(&mut d_disp[jn], w, *g);
                let back = mat_t_vec(&deltas[jn], *g);
                axpy(&mut d_v, w, back);
                axpy(&mut d_joint[jn], -w, back);
            }
            for (k, dir) in tpl.vertex_shape_basis[i].iter().enumerate() {
                d_beta[k] += dot(d_v, *dir);
            }
        }
        if let Some(dj) = d_joints {
            for (jn, g) in dj.iter().enumerate() {
                add_assign(&mut d_t, *g);
                add_assign(&mut d_joint[jn], *g);
                add_assign(&mut d_disp[jn], *g);
            }
        }

        let mut d_local = vec![ZERO33; NUM_JOINTS];
        for jn in (1..NUM_JOINTS).rev() {
            let p = tpl.parents[jn] as usize;
            // R_j = R_p L_j
            let dw = d_world[jn];
            mat_add_assign(&mut d_world[p], &mat_mul_t(&dw, &self.local_rot[jn]));
            d_local[jn] = mat_t_mul(&self.world_rot[p], &dw);
            // D_j = (R_p − I)(J_j − J_p) + D_p
            let dd = d_disp[jn];
            let rel = sub(self.shaped_joints[jn], self.shaped_joints[p]);
            add_outer(&mut d_world[p], 1.0, dd, rel);
            let back = mat_t_vec(&deltas[p], dd);
            add_assign(&mut d_joint[jn], back);
            axpy(&mut d_joint[p], -1.0, back);
            add_assign(&mut d_disp[p], dd);
        }

        for (jn, dj) in d_joint.iter().enumerate() {
            for (k, dir) in tpl.joint_shape_basis[jn].iter().enumerate() {
                d_beta[k] += dot(*dj, *dir);
            }
        }

        let d_r = rot6d_pullback(&self.r, &d_world[0])?;
        let d_aa: Vec<Vec3> = (0..NUM_JOINTS)
            .map(|jn| {
                if jn == 0 {
                    ZERO3
                } else {
                    axis_angle_pullback(self.local_aa[jn], &d_local[jn])
                }
            })
            .collect();

        grad[T_OFFSET..R_OFFSET].copy_from_slice(&d_t);
        grad[R_OFFSET..BETA_OFFSET].copy_from_slice(&d_r);
        grad[BETA_OFFSET..P_OFFSET].copy_from_slice(&d_beta);
        for jn in 1..NUM_BODY_JOINTS {
            for a in 0..3 {
                let row = &tpl.pose_map[(3 * (jn - 1) + a) * POSE_DIM..][..POSE_DIM];
                let g = d_aa[jn][a];
                for (slot, m) in grad[P_OFFSET..H_OFFSET].iter_mut().zip(row) {
                    *slot += m * g;
                }
            }
        }
        for hj in 0..NUM_HAND_JOINTS {
            for a in 0..3 {
                let row = &tpl.hand_map[(3 * hj + a) * HAND_DIM..][..HAND_DIM];
                let g = d_aa[NUM_BODY_JOINTS + hj][a];
                for (slot, m) in grad[H_OFFSET..].iter_mut().zip(row) {
                    *slot += m * g;
                }
            }
        }
        Ok(grad)
    }
}

/// Rest-pose standing height: translation that puts the rest soles on `z = floor`.
pub fn standing_height(floor: f64) -> f64 {
    floor + REST_SOLE_DEPTH
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{rot6d_from_yaw, ROT6D_IDENTITY};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng) -> BodyParams {
        let mut b = BodyParams::default();
        b.t = core::array::from_fn(|_| rng.random_range(-1.0..1.0));
        b.r = core::array::from_fn(|_| rng.random_range(-1.0..1.0));
        b.beta = core::array::from_fn(|_| rng.random_range(-1.0..1.0));
        b.p = core::array::from_fn(|_| rng.random_range(-1.0..1.0));
        b.h = core::array::from_fn(|_| rng.random_range(-1.0..1.0));
        b
    }

    #[test]
    fn rest_pose_is_template() {
        let tpl = BodyTemplate::default();
        let mesh = forward(&tpl, &BodyParams::default()).unwrap();
        assert_eq!(mesh.vertices, tpl.rest_vertices);
        assert_eq!(mesh.joints, tpl.rest_joints);
    }

    #[test]
    fn translation_offsets_every_vertex() {
        let tpl = BodyTemplate::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = random_params(&mut rng);
        a.t = [0.0; 3];
        let mut b = a;
        b.t = [1.0, 2.0, 3.0];
        let ma = forward(&tpl, &a).unwrap();
        let mb = forward(&tpl, &b).unwrap();
        for (va, vb) in ma.vertices.iter().zip(&mb.vertices) {
            let d = sub(*vb, *va);
            assert!(dist(d, [1.0, 2.0, 3.0]) < 1e-12);
        }
    }

    #[test]
    fn global_rotation_is_equivariant_about_pelvis() {
        let tpl = BodyTemplate::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_params(&mut rng);
        let q = rot6d_to_matrix(&rot6d_from_yaw(0.7)).unwrap();
        let ra = rot6d_to_matrix(&a.r).unwrap();
        let mut b = a;
        b.r = crate::rotation::matrix_to_rot6d(&mat_mul(&q, &ra)).unwrap();
        let ma = forward(&tpl, &a).unwrap();
        let mb = forward(&tpl, &b).unwrap();
        for (va, vb) in ma.vertices.iter().zip(&mb.vertices) {
            let expect = mat_vec(&q, sub(*va, a.t));
            assert!(dist(sub(*vb, b.t), expect) < 1e-9);
        }
    }

    #[test]
    fn knee_rotation_matches_two_bone_chain() {
        // Rotate the left knee 90° about x; the ankle should swing about the knee.
        let tpl = BodyTemplate::default();
        let mut params = BodyParams::default();
        params.p[synergy::L_KNEE_FLEX] = core::f64::consts::FRAC_PI_2 / POSE_MAP_SCALE;
        let mesh = forward(&tpl, &params).unwrap();
        let knee = tpl.rest_joints[joint::L_KNEE];
        let ankle = tpl.rest_joints[joint::L_ANKLE];
        // Hand-rolled rigid transform: R_x(90°) · (ankle − knee) + knee.
        let rel = sub(ankle, knee);
        let rotated = [rel[0], -rel[2], rel[1]];
        let expect = add(knee, rotated);
        assert!(dist(mesh.joints[joint::L_ANKLE], expect) < 1e-12);
        assert!(dist(mesh.joints[joint::L_KNEE], knee) < 1e-15);
        assert!(dist(mesh.joints[joint::R_ANKLE], tpl.rest_joints[joint::R_ANKLE]) < 1e-15);
    }

    #[test]
    fn translation_jacobian_is_identity() {
        let tpl = BodyTemplate::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = random_params(&mut rng);
        let (_, pb) = forward_with_pullback(&tpl, &params).unwrap();
        let mut dv = vec![ZERO3; tpl.num_vertices()];
        dv[17] = [0.0, 1.0, 0.0];
        let g = pb.apply(&dv, None).unwrap();
        assert_eq!(&g[..3], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn shape_coefficient_moves_along_basis_at_rest() {
        let tpl = BodyTemplate::default();
        let eps = 1e-3;
        let mut params = BodyParams::default();
        params.beta[0] = eps;
        let mesh = forward(&tpl, &params).unwrap();
        for (i, v) in mesh.vertices.iter().enumerate() {
            let expect = add(tpl.rest_vertices[i], scale(tpl.vertex_shape_basis[i][0], eps));
            assert!(dist(*v, expect) < 1e-15);
        }
    }

    #[test]
    fn pullback_matches_finite_differences() {
        let tpl = BodyTemplate::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let params = random_params(&mut rng);
            let dv: Vec<Vec3> = (0..tpl.num_vertices())
                .map(|_| core::array::from_fn(|_| rng.random_range(-1.0..1.0)))
                .collect();
            let dj: Vec<Vec3> = (0..NUM_JOINTS)
                .map(|_| core::array::from_fn(|_| rng.random_range(-1.0..1.0)))
                .collect();
            let (_, pb) = forward_with_pullback(&tpl, &params).unwrap();
            let g = pb.apply(&dv, Some(&dj)).unwrap();
            let f = |b: &BodyParams| {
                let m = forward(&tpl, b).unwrap();
                let sv: f64 = m.vertices.iter().zip(&dv).map(|(a, b)| dot(*a, *b)).sum();
                let sj: f64 = m.joints.iter().zip(&dj).map(|(a, b)| dot(*a, *b)).sum();
                sv + sj
            };
            let flat = params.to_flat();
            for k in 0..PARAM_DIM {
                let h = 1e-5;
                let mut fp = flat;
                fp[k] += h;
                let mut fm = flat;
                fm[k] -= h;
                let fd = (f(&BodyParams::from_flat(&fp).unwrap()) - f(&BodyParams::from_flat(&fm).unwrap())) / (2.0 * h);
                let err = fabs(fd - g[k]) / (fabs(fd) + fabs(g[k])).max(1e-6);
                assert!(err < 1e-5, "param {k}: fd {fd} analytic {}", g[k]);
            }
        }
    }

    #[test]
    fn rejects_degenerate_rotation() {
        let tpl = BodyTemplate::default();
        let mut p = BodyParams::default();
        p.r = [0.0; 6];
        assert!(forward(&tpl, &p).is_err());
        p.r = ROT6D_IDENTITY;
        let (_, pb) = forward_with_pullback(&tpl, &p).unwrap();
        assert!(pb.apply(&[ZERO3; 3], None).is_err());
    }

    #[test]
    fn flat_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_params(&mut rng);
        assert_eq!(BodyParams::from_flat(&p.to_flat()).unwrap(), p);
        assert!(BodyParams::from_flat(&[0.0; 74]).is_err());
    }
}
