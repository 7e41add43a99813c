use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::SceneMesh;
use crate::error::{arg_err, Error, Result};
use crate::math::*;

pub const DEFAULT_CELL: f64 = 0.05;
pub const DEFAULT_PADDING: f64 = 0.5;
pub const DEFAULT_NODE_BUDGET: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdfOptions {
    pub cell: f64,
    pub padding: f64,
    pub node_budget: usize,
    /// Treat everything below `z = ground` as solid (union with the mesh
    /// interior). Open floor sheets have no inside of their own.
    pub ground: Option<f64>,
}

impl Default for SdfOptions {
    fn default() -> Self {
        Self { cell: DEFAULT_CELL, padding: DEFAULT_PADDING, node_budget: DEFAULT_NODE_BUDGET, ground: None }
    }
}

/// Uniform-grid signed distance field, negative inside. Node `(ix, iy, iz)`
/// sits at `origin + cell · (ix, iy, iz)` and is stored at
/// `(iz · ny + iy) · nx + ix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdfGrid {
    pub origin: Vec3,
    pub cell: f64,
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl SdfGrid {
    pub fn new(origin: Vec3, cell: f64, dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) || !(cell > 0.0) || !is_finite3(origin) {
            return Err(arg_err(format!("invalid grid geometry: dims {dims:?}, cell {cell}")));
        }
        if values.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::Shape(format!("{} values for dims {dims:?}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("grid holds non-finite values".into()));
        }
        Ok(Self { origin, cell, dims, values })
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.dims[1] + iy) * self.dims[0] + ix
    }

    pub fn node_position(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        [
            self.origin[0] + self.cell * ix as f64,
            self.origin[1] + self.cell * iy as f64,
            self.origin[2] + self.cell * iz as f64,
        ]
    }

    pub fn max_corner(&self) -> Vec3 {
        self.node_position(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1)
    }

    /// Trilinear value and its analytic gradient. Outside the grid box the
    /// value at the clamped point plus the distance to the box is returned.
    pub fn sample(&self, p: Vec3) -> (f64, Vec3) {
        let mut cell_idx = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut clamped = [false; 3];
        let mut box_point = p;
        for a in 0..3 {
            let n = self.dims[a];
            let g = (p[a] - self.origin[a]) / self.cell;
            let max = (n - 1) as f64;
            let gc = if g < 0.0 {
                clamped[a] = true;
                0.0
            } else if g > max {
                clamped[a] = true;
                max
            } else {
                g
            };
            if clamped[a] {
                box_point[a] = self.origin[a] + gc * self.cell;
            }
            let i = (libm::floor(gc) as usize).min(n - 2);
            cell_idx[a] = i;
            frac[a] = gc - i as f64;
        }
        let (mut value, mut grad) = self.trilinear(cell_idx, frac);
        for a in 0..3 {
            if clamped[a] {
                grad[a] = 0.0;
            }
        }
        if clamped.iter().any(|&c| c) {
            let out = sub(p, box_point);
            let d = norm(out);
            if d > 0.0 {
                value += d;
                axpy(&mut grad, 1.0 / d, out);
            }
        }
        (value, grad)
    }

    /// Cell containing `p`, or `None` outside the grid box.
    pub fn cell_of(&self, p: Vec3) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let g = (p[a] - self.origin[a]) / self.cell;
            if !(g >= 0.0 && g <= (self.dims[a] - 1) as f64) {
                return None;
            }
            idx[a] = (libm::floor(g) as usize).min(self.dims[a] - 2);
        }
        Some(idx)
    }

    /// The trilinear polynomial of one cell, extended past its faces. Inside
    /// that cell this equals [`SdfGrid::sample`].
    pub fn sample_in_cell(&self, p: Vec3, cell: [usize; 3]) -> (f64, Vec3) {
        let frac = core::array::from_fn(|a| (p[a] - self.origin[a]) / self.cell - cell[a] as f64);
        self.trilinear(cell, frac)
    }

    fn trilinear(&self, [ix, iy, iz]: [usize; 3], [fx, fy, fz]: [f64; 3]) -> (f64, Vec3) {
        let c = |dx: usize, dy: usize, dz: usize| self.values[self.index(ix + dx, iy + dy, iz + dz)];
        let c00 = c(0, 0, 0) * (1.0 - fx) + c(1, 0, 0) * fx;
        let c10 = c(0, 1, 0) * (1.0 - fx) + c(1, 1, 0) * fx;
        let c01 = c(0, 0, 1) * (1.0 - fx) + c(1, 0, 1) * fx;
        let c11 = c(0, 1, 1) * (1.0 - fx) + c(1, 1, 1) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        let value = c0 * (1.0 - fz) + c1 * fz;

        let dx0 = c(1, 0, 0) - c(0, 0, 0);
        let dx1 = c(1, 1, 0) - c(0, 1, 0);
        let dx2 = c(1, 0, 1) - c(0, 0, 1);
        let dx3 = c(1, 1, 1) - c(0, 1, 1);
        let gx = ((dx0 * (1.0 - fy) + dx1 * fy) * (1.0 - fz) + (dx2 * (1.0 - fy) + dx3 * fy) * fz) / self.cell;
        let gy = ((c10 - c00) * (1.0 - fz) + (c11 - c01) * fz) / self.cell;
        let gz = (c1 - c0) / self.cell;
        (value, [gx, gy, gz])
    }
}

/// Trilinear lookup; see [`SdfGrid::sample`].
pub fn sample_sdf(grid: &SdfGrid, p: Vec3) -> (f64, Vec3) {
    grid.sample(p)
}

/// Closest point on triangle `abc` to `p`.
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return add(a, scale(ab, v));
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return add(a, scale(ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return add(b, scale(sub(c, b), w));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    add(a, add(scale(ab, v), scale(ac, w)))
}

pub fn point_triangle_distance(p: Vec3, tri: &[Vec3; 3]) -> f64 {
    dist(p, closest_point_on_triangle(p, tri[0], tri[1], tri[2]))
}

/// A triangle projected onto the plane orthogonal to one axis, oriented
/// counter-clockwise, for watertight ray-crossing counts.
struct Projected {
    p: [[f64; 2]; 3],
    depth: [f64; 3],
    area2: f64,
    lo: [f64; 2],
    hi: [f64; 2],
}

fn project(tri: &[Vec3; 3], axis: usize) -> Option<Projected> {
    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
    let mut p = [[tri[0][u], tri[0][v]], [tri[1][u], tri[1][v]], [tri[2][u], tri[2][v]]];
    let mut depth = [tri[0][axis], tri[1][axis], tri[2][axis]];
    let mut area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
    if area2 == 0.0 {
        return None;
    }
    if area2 < 0.0 {
        p.swap(1, 2);
        depth.swap(1, 2);
        area2 = -area2;
    }
    let lo = [p[0][0].min(p[1][0]).min(p[2][0]), p[0][1].min(p[1][1]).min(p[2][1])];
    let hi = [p[0][0].max(p[1][0]).max(p[2][0]), p[0][1].max(p[1][1]).max(p[2][1])];
    Some(Projected { p, depth, area2, lo, hi })
}

impl Projected {
    /// Depth of the crossing along the axis if the ray through `q` hits,
    /// using a top-left rule so shared edges are counted exactly once.
    fn crossing(&self, q: [f64; 2]) -> Option<f64> {
        if q[0] < self.lo[0] || q[0] > self.hi[0] || q[1] < self.lo[1] || q[1] > self.hi[1] {
            return None;
        }
        let mut w = [0.0; 3];
        for e in 0..3 {
            let a = self.p[(e + 1) % 3];
            let b = self.p[(e + 2) % 3];
            let d = [b[0] - a[0], b[1] - a[1]];
            let f = d[0] * (q[1] - a[1]) - d[1] * (q[0] - a[0]);
            let owns_edge = d[1] > 0.0 || (d[1] == 0.0 && d[0] < 0.0);
            if f < 0.0 || (f == 0.0 && !owns_edge) {
                return None;
            }
            w[e] = f;
        }
        Some((w[0] * self.depth[0] + w[1] * self.depth[1] + w[2] * self.depth[2]) / self.area2)
    }
}

struct SignTester {
    per_axis: [Vec<Projected>; 3],
}

impl SignTester {
    fn new(mesh: &SceneMesh) -> Self {
        let per_axis = core::array::from_fn(|axis| {
            (0..mesh.faces.len()).filter_map(|f| project(&mesh.triangle(f), axis)).collect()
        });
        Self { per_axis }
    }

    /// Majority vote of +x, +y and +z ray-parity tests.
    fn inside(&self, p: Vec3) -> bool {
        let mut votes = 0;
        for (axis, tris) in self.per_axis.iter().enumerate() {
            let q = [p[(axis + 1) % 3], p[(axis + 2) % 3]];
            let crossings = tris
                .iter()
                .filter(|t| t.crossing(q).is_some_and(|d| d > p[axis]))
                .count();
            votes += crossings % 2;
        }
        votes >= 2
    }
}

/// Signed distance of a single point by exhaustive search over triangles.
pub fn exact_signed_distance(mesh: &SceneMesh, p: Vec3) -> f64 {
    let tester = SignTester::new(mesh);
    signed_distance_with(mesh, &tester, p)
}

fn signed_distance_with(mesh: &SceneMesh, tester: &SignTester, p: Vec3) -> f64 {
    let d = (0..mesh.faces.len())
        .map(|f| point_triangle_distance(p, &mesh.triangle(f)))
        .fold(f64::INFINITY, f64::min);
    if tester.inside(p) {
        -d
    } else {
        d
    }
}

pub fn build_sdf(mesh: &SceneMesh, cell: f64, padding: f64) -> Result<SdfGrid> {
    build_sdf_with(mesh, &SdfOptions { cell, padding, ..SdfOptions::default() })
}

/// Samples the signed distance at every node of a grid covering the mesh
/// bounds plus `padding`.
pub fn build_sdf_with(mesh: &SceneMesh, opts: &SdfOptions) -> Result<SdfGrid> {
    if mesh.faces.is_empty() {
        return Err(Error::EmptyScene);
    }
    if !(opts.cell > 0.0) || !(opts.padding >= 0.0) {
        return Err(arg_err(format!("cell {} / padding {} invalid", opts.cell, opts.padding)));
    }
    let (lo, hi) = mesh.bounds();
    let origin = sub(lo, [opts.padding; 3]);
    let mut dims = [0usize; 3];
    let mut total: u128 = 1;
    for a in 0..3 {
        let span = hi[a] - lo[a] + 2.0 * opts.padding;
        dims[a] = (libm::ceil(span / opts.cell - 1e-9) as usize + 1).max(2);
        total *= dims[a] as u128;
    }
    if total > opts.node_budget as u128 {
        return Err(Error::Resource(format!(
            "grid of {dims:?} = {total} nodes exceeds the budget of {}",
            opts.node_budget
        )));
    }
    let tester = SignTester::new(mesh);
    let tris: Vec<[Vec3; 3]> = (0..mesh.faces.len()).map(|f| mesh.triangle(f)).collect();
    let mut values = Vec::with_capacity(total as usize);
    for iz in 0..dims[2] {
        for iy in 0..dims[1] {
            for ix in 0..dims[0] {
                let p = [
                    origin[0] + opts.cell * ix as f64,
                    origin[1] + opts.cell * iy as f64,
                    origin[2] + opts.cell * iz as f64,
                ];
                let d = tris.iter().map(|t| point_triangle_distance(p, t)).fold(f64::INFINITY, f64::min);
                let mut v = if tester.inside(p) { -d } else { d };
                if let Some(g) = opts.ground {
                    v = v.min(p[2] - g);
                }
                values.push(v);
            }
        }
    }
    SdfGrid::new(origin, opts.cell, dims, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn unit_cube() -> SceneMesh {
        let v = vec![
            [-0.5, -0.5, -0.5], [0.5, -0.5, -0.5], [0.5, 0.5, -0.5], [-0.5, 0.5, -0.5],
            [-0.5, -0.5, 0.5], [0.5, -0.5, 0.5], [0.5, 0.5, 0.5], [-0.5, 0.5, 0.5],
        ];
        let f = vec![
            [0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7], [0, 1, 5], [0, 5, 4],
            [1, 2, 6], [1, 6, 5], [2, 3, 7], [2, 7, 6], [3, 0, 4], [3, 4, 7],
        ];
        SceneMesh::from_raw(v, f).unwrap().0
    }

    #[test]
    fn cube_center_and_outside() {
        let cell = 0.1;
        let g = build_sdf(&unit_cube(), cell, 0.6).unwrap();
        let (inside, _) = g.sample([0.0, 0.0, 0.0]);
        assert!(fabs(inside + 0.5) <= cell, "{inside}");
        let (outside, _) = g.sample([1.0, 0.0, 0.0]);
        assert!(fabs(outside - 0.5) <= cell, "{outside}");
    }

    #[test]
    fn node_values_exact_and_out_of_grid_positive() {
        let values: Vec<f64> = (0..27).map(|i| i as f64 * 0.1 - 1.0).collect();
        let g = SdfGrid::new([0.0; 3], 0.25, [3, 3, 3], values.clone()).unwrap();
        for iz in 0..3 {
            for iy in 0..3 {
                for ix in 0..3 {
                    let (v, _) = g.sample(g.node_position(ix, iy, iz));
                    assert_eq!(v, values[g.index(ix, iy, iz)]);
                }
            }
        }
        let (v, grad) = g.sample([2.0, 0.25, 0.25]);
        let (edge, _) = g.sample([0.5, 0.25, 0.25]);
        assert!(fabs(v - (edge + 1.5)) < 1e-12);
        assert!(grad[0] > 0.0);
        let (v, grad) = g.sample([-1.0, -1.0, -1.0]);
        assert!(fabs(v - (values[0] + sqrt(3.0))) < 1e-12);
        assert!(grad.iter().all(|x| *x < 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = build_sdf(&unit_cube(), 0.1, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let p: Vec3 = core::array::from_fn(|_| rng.random_range(-0.75..0.75));
            let (_, grad) = g.sample(p);
            for a in 0..3 {
                let h = 1e-6;
                let mut pp = p;
                pp[a] += h;
                let mut pm = p;
                pm[a] -= h;
                let fd = (g.sample(pp).0 - g.sample(pm).0) / (2.0 * h);
                assert!(fabs(fd - grad[a]) < 1e-4, "{fd} vs {}", grad[a]);
            }
        }
    }

    #[test]
    fn continuous_across_cell_faces() {
        let g = build_sdf(&unit_cube(), 0.1, 0.3).unwrap();
        let x = g.origin[0] + 4.0 * g.cell;
        for k in 0..20 {
            let y = -0.7 + 0.07 * k as f64;
            let a = g.sample([x - 1e-12, y, 0.13]).0;
            let b = g.sample([x + 1e-12, y, 0.13]).0;
            assert!(fabs(a - b) < 1e-9);
        }
    }

    #[test]
    fn lipschitz_between_neighbours() {
        let g = build_sdf(&unit_cube(), 0.1, 0.3).unwrap();
        let [nx, ny, nz] = g.dims;
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx - 1 {
                    let d = fabs(g.values[g.index(ix + 1, iy, iz)] - g.values[g.index(ix, iy, iz)]);
                    assert!(d <= sqrt(3.0) * g.cell + 1e-6);
                }
            }
        }
    }

    #[test]
    fn node_budget_enforced() {
        let opts = SdfOptions { node_budget: 100, ..SdfOptions::default() };
        assert!(matches!(build_sdf_with(&unit_cube(), &opts), Err(Error::Resource(_))));
    }

    #[test]
    fn ground_makes_underside_solid() {
        let floor = SceneMesh::from_raw(
            vec![[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [1.0, 1.0, 0.0], [-1.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
        .0;
        let open = build_sdf(&floor, 0.1, 0.5).unwrap();
        assert!(open.sample([0.0, 0.0, -0.2]).0 > 0.0);
        let solid = build_sdf_with(&floor, &SdfOptions { cell: 0.1, padding: 0.5, ground: Some(0.0), ..SdfOptions::default() }).unwrap();
        assert!(fabs(solid.sample([0.0, 0.0, -0.2]).0 + 0.2) < 1e-9);
        assert!(fabs(solid.sample([0.0, 0.0, 0.3]).0 - 0.3) < 1e-9);
    }
}
