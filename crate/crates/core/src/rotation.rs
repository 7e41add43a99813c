//! Rotation parameterizations: the continuous 6D embedding (first two matrix
//! columns, recovered by Gram-Schmidt) and axis-angle via Rodrigues' formula,
//! each with a reverse-mode pullback.

use crate::error::{Error, Result};
use crate::math::*;

/// Column norms below this are treated as degenerate.
const DEGENERATE_EPS: f64 = 1e-9;

pub type Rot6d = [f64; 6];

pub const ROT6D_IDENTITY: Rot6d = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

struct GramSchmidt {
    a1: Vec3,
    a2: Vec3,
    n1: f64,
    b1: Vec3,
    u2: Vec3,
    n2: f64,
    b2: Vec3,
    b3: Vec3,
}

fn gram_schmidt(r: &Rot6d) -> Result<GramSchmidt> {
    if !r.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidRotation("non-finite 6D rotation"));
    }
    let a1 = [r[0], r[1], r[2]];
    let a2 = [r[3], r[4], r[5]];
    let n1 = norm(a1);
    if n1 < DEGENERATE_EPS {
        return Err(Error::InvalidRotation("first column is zero"));
    }
    let b1 = scale(a1, 1.0 / n1);
    let u2 = sub(a2, scale(b1, dot(b1, a2)));
    let n2 = norm(u2);
    if n2 < DEGENERATE_EPS * norm(a2).max(1.0) {
        return Err(Error::InvalidRotation("columns are zero or parallel"));
    }
    let b2 = scale(u2, 1.0 / n2);
    let b3 = cross(b1, b2);
    Ok(GramSchmidt { a1, a2, n1, b1, u2, n2, b2, b3 })
}

fn from_columns(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
    [[c0[0], c1[0], c2[0]], [c0[1], c1[1], c2[1]], [c0[2], c1[2], c2[2]]]
}

/// Maps a 6D rotation to an orthonormal matrix with determinant +1.
pub fn rot6d_to_matrix(r: &Rot6d) -> Result<Mat3> {
    let gs = gram_schmidt(r)?;
    Ok(from_columns(gs.b1, gs.b2, gs.b3))
}

/// Pullback of [`rot6d_to_matrix`]: given `dL/dR`, returns `dL/dr`.
pub fn rot6d_pullback(r: &Rot6d, d_rot: &Mat3) -> Result<Rot6d> {
    let gs = gram_schmidt(r)?;
    let g1 = column(d_rot, 0);
    let g2 = column(d_rot, 1);
    let g3 = column(d_rot, 2);

    // b3 = b1 × b2
    let mut d_b1 = add(g1, cross(gs.b2, g3));
    let d_b2 = add(g2, cross(g3, gs.b1));

    // b2 = u2 / |u2|
    let d_u2 = scale(sub(d_b2, scale(gs.b2, dot(gs.b2, d_b2))), 1.0 / gs.n2);

    // u2 = a2 − (b1·a2) b1
    let proj = dot(gs.b1, gs.a2);
    let d_a2 = sub(d_u2, scale(gs.b1, dot(gs.b1, d_u2)));
    d_b1 = sub(d_b1, add(scale(d_u2, proj), scale(gs.a2, dot(gs.b1, d_u2))));

    // b1 = a1 / |a1|
    let d_a1 = scale(sub(d_b1, scale(gs.b1, dot(gs.b1, d_b1))), 1.0 / gs.n1);
    let _ = (gs.a1, gs.u2);
    Ok([d_a1[0], d_a1[1], d_a1[2], d_a2[0], d_a2[1], d_a2[2]])
}

/// Inverse embedding: the first two columns of `m`.
pub fn matrix_to_rot6d(m: &Mat3) -> Result<Rot6d> {
    let mtm = mat_t_mul(m, m);
    for i in 0..3 {
        for j in 0..3 {
            let expect = if i == j { 1.0 } else { 0.0 };
            let e = mtm[i][j] - expect;
            if !(fabs(e) <= 1e-4) {
                return Err(Error::InvalidRotation("matrix is not orthonormal"));
            }
        }
    }
    if det(m) <= 0.0 {
        return Err(Error::InvalidRotation("matrix is a reflection"));
    }
    Ok([m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]])
}

/// Re-orthonormalizes a raw 6D vector (e.g. a network output).
pub fn normalize_rot6d(r: &Rot6d) -> Result<Rot6d> {
    let gs = gram_schmidt(r)?;
    Ok([gs.b1[0], gs.b1[1], gs.b1[2], gs.b2[0], gs.b2[1], gs.b2[2]])
}

/// Rotation by `yaw` radians about +z.
pub fn yaw_matrix(yaw: f64) -> Mat3 {
    let (s, c) = (sin(yaw), cos(yaw));
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

pub fn rot6d_from_yaw(yaw: f64) -> Rot6d {
    let (s, c) = (sin(yaw), cos(yaw));
    [c, s, 0.0, -s, c, 0.0]
}

/// Heading of the body's local +y (forward) axis in the world xy-plane.
pub fn yaw_of(r: &Rot6d) -> Result<f64> {
    let m = rot6d_to_matrix(r)?;
    Ok(atan2(-m[0][1], m[1][1]))
}

/// Rodrigues coefficients `A = sinθ/θ`, `B = (1−cosθ)/θ²` and their
/// derivatives divided by θ, with Taylor branches near zero.
fn rodrigues_coeffs(theta2: f64) -> (f64, f64, f64, f64) {
    if theta2 < 1e-6 {
        let t4 = theta2 * theta2;
        let a = 1.0 - theta2 / 6.0 + t4 / 120.0;
        let b = 0.5 - theta2 / 24.0 + t4 / 720.0;
        let ca = -1.0 / 3.0 + theta2 / 30.0;
        let cb = -1.0 / 12.0 + theta2 / 180.0;
        (a, b, ca, cb)
    } else {
        let theta = sqrt(theta2);
        let (s, c) = (sin(theta), cos(theta));
        let a = s / theta;
        let b = (1.0 - c) / theta2;
        let ca = (theta * c - s) / (theta2 * theta);
        let cb = (theta * s - 2.0 * (1.0 - c)) / (theta2 * theta2);
        (a, b, ca, cb)
    }
}

/// Rotation matrix of an axis-angle vector.
pub fn axis_angle_to_matrix(a: Vec3) -> Mat3 {
    let (ca, cb, _, _) = rodrigues_coeffs(dot(a, a));
    let k = skew(a);
    let k2 = mat_mul(&k, &k);
    let mut r = IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] += ca * k[i][j] + cb * k2[i][j];
        }
    }
    r
}

/// Pullback of [`axis_angle_to_matrix`].
pub fn axis_angle_pullback(a: Vec3, d_rot: &Mat3) -> Vec3 {
    let (ca, cb, da, db) = rodrigues_coeffs(dot(a, a));
    let k = skew(a);
    let k2 = mat_mul(&k, &k);
    // <G, K>, <G, K²> shared across components.
    let gk = frob(d_rot, &k);
    let gk2 = frob(d_rot, &k2);
    let mut out = ZERO3;
    for (c, slot) in out.iter_mut().enumerate() {
        let mut e = ZERO3;
        e[c] = 1.0;
        let ek = skew(e);
        let dk2 = {
            let mut m = mat_mul(&ek, &k);
            mat_add_assign(&mut m, &mat_mul(&k, &ek));
            m
        };
        *slot = da * a[c] * gk + ca * frob(d_rot, &ek) + db * a[c] * gk2 + cb * frob(d_rot, &dk2);
    }
    out
}
