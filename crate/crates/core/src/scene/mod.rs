//! Scene geometry: triangle meshes, surface point clouds, the signed distance
//! field and exact nearest-neighbour lookups.

mod kdtree;
mod sdf;

use alloc::format;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use kdtree::PointIndex;
pub use sdf::*;

use crate::error::{arg_err, Error, Result};
use crate::math::*;

/// Triangles with area at or below this are dropped on ingestion.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

pub fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    0.5 * norm(cross(sub(b, a), sub(c, a)))
}

impl SceneMesh {
    /// Validates raw geometry, dropping degenerate triangles. Returns the mesh
    /// and the number of faces dropped.
    pub fn from_raw(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<(Self, usize)> {
        if let Some(bad) = vertices.iter().position(|v| !is_finite3(*v)) {
            return Err(Error::Numeric(format!("scene vertex {bad} is not finite")));
        }
        let mut kept = Vec::with_capacity(faces.len());
        let mut dropped = 0;
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i as usize >= vertices.len()) {
                return Err(arg_err(format!("face {fi} references a missing vertex")));
            }
            let area = triangle_area(vertices[f[0] as usize], vertices[f[1] as usize], vertices[f[2] as usize]);
            if area > MIN_TRIANGLE_AREA {
                kept.push(*f);
            } else {
                dropped += 1;
            }
        }
        if kept.is_empty() {
            return Err(Error::EmptyScene);
        }
        Ok((Self { vertices, faces: kept }, dropped))
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for f in &self.faces {
            for &i in f {
                let v = self.vertices[i as usize];
                for a in 0..3 {
                    lo[a] = lo[a].min(v[a]);
                    hi[a] = hi[a].max(v[a]);
                }
            }
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

/// Area-weighted uniform samples on the mesh surface, with face normals.
pub fn sample_point_cloud(mesh: &SceneMesh, count: usize, seed: u64) -> Result<PointCloud> {
    if count == 0 {
        return Err(arg_err("point cloud sample count must be at least 1"));
    }
    if mesh.faces.is_empty() {
        return Err(Error::EmptyScene);
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.triangle(f);
        total += triangle_area(a, b, c);
        cdf.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.random::<f64>() * total;
        let f = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let [a, b, c] = mesh.triangle(f);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = sqrt(r1);
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        points.push(add(add(scale(a, wa), scale(b, wb)), scale(c, wc)));
        let n = cross(sub(b, a), sub(c, a));
        normals.push(scale(n, 1.0 / norm(n)));
    }
    Ok(PointCloud { points, normals: Some(normals) })
}

/// Closest indexed point to `point` and its distance.
pub fn nearest_scene_vertex(index: &PointIndex, point: Vec3) -> Result<(Vec3, f64)> {
    let (i, d) = index.nearest(point)?;
    Ok((index.points()[i], d))
}

/// Everything the energies and networks need to know about one scene.
#[derive(Debug, Clone)]
pub struct SceneField {
    pub mesh: SceneMesh,
    /// Network input `v^s`.
    pub cloud: PointCloud,
    pub sdf: SdfGrid,
    /// Dense surface samples for contact distances.
    pub contact_index: PointIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneFieldOptions {
    pub sdf: SdfOptions,
    pub cloud_points: usize,
    pub contact_points: usize,
    pub seed: u64,
}

impl Default for SceneFieldOptions {
    fn default() -> Self {
        Self { sdf: SdfOptions::default(), cloud_points: 512, contact_points: 20_000, seed: 0 }
    }
}

impl SceneField {
    pub fn build(mesh: SceneMesh, opts: &SceneFieldOptions) -> Result<Self> {
        let sdf = build_sdf_with(&mesh, &opts.sdf)?;
        Self::with_sdf(mesh, sdf, opts)
    }

    /// Assembles a field around a precomputed (e.g. cached) grid.
    pub fn with_sdf(mesh: SceneMesh, sdf: SdfGrid, opts: &SceneFieldOptions) -> Result<Self> {
        let cloud = sample_point_cloud(&mesh, opts.cloud_points, opts.seed)?;
        let dense = sample_point_cloud(&mesh, opts.contact_points, opts.seed ^ 0x9e37_79b9_7f4a_7c15)?;
        let mut pts = dense.points;
        pts.extend_from_slice(&mesh.vertices);
        Ok(Self { mesh, cloud, sdf, contact_index: PointIndex::new(pts) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn quad() -> SceneMesh {
        SceneMesh::from_raw(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
        .0
    }

    #[test]
    fn degenerate_faces_dropped() {
        let (m, dropped) = SceneMesh::from_raw(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0, 1, 2], [0, 1, 3]],
        )
        .unwrap();
        assert_eq!((m.faces.len(), dropped), (1, 1));
        assert_eq!(
            SceneMesh::from_raw(vec![[0.0; 3]; 3], vec![[0, 1, 2]]).unwrap_err(),
            Error::EmptyScene
        );
        assert!(SceneMesh::from_raw(vec![[0.0; 3]; 3], vec![[0, 1, 5]]).is_err());
    }

    #[test]
    fn samples_lie_on_triangle_plane() {
        let (m, _) = SceneMesh::from_raw(
            vec![[0.0, 0.0, 1.0], [1.0, 0.5, 0.0], [0.2, 1.0, 0.3]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let cloud = sample_point_cloud(&m, 1000, 3).unwrap();
        let [a, b, c] = m.triangle(0);
        let n = cross(sub(b, a), sub(c, a));
        let n = scale(n, 1.0 / norm(n));
        for p in &cloud.points {
            assert!(fabs(dot(sub(*p, a), n)) < 1e-6);
        }
        assert_eq!(cloud, sample_point_cloud(&m, 1000, 3).unwrap());
        assert!(sample_point_cloud(&m, 0, 3).is_err());
    }

    #[test]
    fn sample_counts_follow_area() {
        // Two triangles with area ratio 9:1.
        let (m, _) = SceneMesh::from_raw(
            vec![
                [0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 3.0, 0.0],
                [10.0, 0.0, 0.0], [11.0, 0.0, 0.0], [10.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let n = 10_000;
        let cloud = sample_point_cloud(&m, n, 17).unwrap();
        let big = cloud.points.iter().filter(|p| p[0] < 5.0).count() as f64;
        // Binomial(n, 0.9): σ = sqrt(n · 0.9 · 0.1) = 30.
        let sigma = sqrt(n as f64 * 0.9 * 0.1);
        assert!(fabs(big - 9000.0) < 3.0 * sigma, "{big}");
    }

    #[test]
    fn nearest_vertex_passthrough() {
        let idx = PointIndex::new(quad().vertices);
        let (v, d) = nearest_scene_vertex(&idx, [1.0, 1.0, 0.0]).unwrap();
        assert_eq!((v, d), ([1.0, 1.0, 0.0], 0.0));
    }
}
