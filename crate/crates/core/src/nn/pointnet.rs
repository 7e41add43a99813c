use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{leaky, leaky_grad, Linear, Module, Param};
use crate::error::{arg_err, Result};
use crate::math::Vec3;

/// Width of the global scene feature.
pub const POINT_FEATURE_DIM: usize = 256;

/// Order-invariant point-set encoder: a shared per-point MLP, channel-wise
/// max pooling, then a linear projection to [`POINT_FEATURE_DIM`]. Points are
/// consumed in world coordinates; there is no learned input transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEncoder {
    pub mlp: Vec<Linear>,
    pub proj: Linear,
}

#[derive(Debug, Clone)]
pub struct PointEncoderCache {
    points: Vec<Vec3>,
    /// Per layer, per point pre-activations.
    pre: Vec<Vec<Vec<f64>>>,
    argmax: Vec<usize>,
    pooled: Vec<f64>,
}

impl PointEncoder {
    pub fn new(name: &str, hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut mlp = Vec::new();
        let mut w = 3;
        for (i, &h) in hidden.iter().enumerate() {
            mlp.push(Linear::new(&format!("{name}.mlp{i}"), w, h, rng));
            w = h;
        }
        Self { mlp, proj: Linear::new(&format!("{name}.proj"), w, POINT_FEATURE_DIM, rng) }
    }

    fn pooled_width(&self) -> usize {
        self.mlp.last().map_or(3, |l| l.out_dim)
    }

    pub fn encode(&self, points: &[Vec3]) -> Result<Vec<f64>> {
        self.forward(points).map(|(f, _)| f)
    }

    pub fn forward(&self, points: &[Vec3]) -> Result<(Vec<f64>, PointEncoderCache)> {
        if points.is_empty() {
            return Err(arg_err("point encoder needs at least one point"));
        }
        let width = self.pooled_width();
        let mut pooled = vec![f64::NEG_INFINITY; width];
        let mut argmax = vec![0usize; width];
        let mut pre: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(points.len()); self.mlp.len()];
        for (pi, p) in points.iter().enumerate() {
            let mut x: Vec<f64> = p.to_vec();
            for (li, layer) in self.mlp.iter().enumerate() {
                let z = layer.apply(&x);
                x = z.iter().map(|v| leaky(*v)).collect();
                pre[li].push(z);
            }
            for (c, v) in x.iter().enumerate() {
                if *v > pooled[c] {
                    pooled[c] = *v;
                    argmax[c] = pi;
                }
            }
        }
        // Ties resolve to the first maximal value, which is the same value
        // whatever the point order, so the feature is permutation invariant.
        let feature = self.proj.apply(&pooled);
        Ok((feature, PointEncoderCache { points: points.to_vec(), pre, argmax, pooled }))
    }

    /// Accumulates weight gradients for a feature cotangent.
    pub fn backward(&mut self, cache: &PointEncoderCache, d_feature: &[f64]) {
        let d_pooled = self.proj.back(&cache.pooled, d_feature, true);
        let nl = self.mlp.len();
        if nl == 0 {
            return;
        }
        // Group pooled-channel gradients by winning point.
        let mut winners: Vec<(usize, Vec<f64>)> = Vec::new();
        for (c, &pi) in cache.argmax.iter().enumerate() {
            if d_pooled[c] == 0.0 {
                continue;
            }
            match winners.iter_mut().find(|(p, _)| *p == pi) {
                Some((_, g)) => g[c] += d_pooled[c],
                None => {
                    let mut g = vec![0.0; d_pooled.len()];
                    g[c] = d_pooled[c];
                    winners.push((pi, g));
                }
            }
        }
        winners.sort_by_key(|(p, _)| *p);
        for (pi, d_act) in winners {
            let mut d = d_act;
            for li in (0..nl).rev() {
                let z = &cache.pre[li][pi];
                let dz: Vec<f64> = d.iter().zip(z).map(|(g, z)| g * leaky_grad(*z)).collect();
                let input: Vec<f64> = if li == 0 {
                    cache.points[pi].to_vec()
                } else {
                    cache.pre[li - 1][pi].iter().map(|v| leaky(*v)).collect()
                };
                d = self.mlp[li].back(&input, &dz, li > 0);
            }
        }
    }
}

impl Module for PointEncoder {
    fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.mlp.iter().flat_map(|l| l.params()).collect();
        v.extend(self.proj.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.mlp.iter_mut().flat_map(|l| l.params_mut()).collect();
        v.extend(self.proj.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::{seq::SliceRandom, Rng, SeedableRng};

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| core::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect()
    }

    #[test]
    fn output_width_and_invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = PointEncoder::new("pn", &[16, 32], &mut rng);
        let pts = cloud(&mut rng, 100);
        let f = enc.encode(&pts).unwrap();
        assert_eq!(f.len(), POINT_FEATURE_DIM);
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut rng);
        assert_eq!(enc.encode(&shuffled).unwrap(), f);
        let mut doubled = pts.clone();
        doubled.extend_from_slice(&pts);
        assert_eq!(enc.encode(&doubled).unwrap(), f);
        assert!(enc.encode(&[]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut enc = PointEncoder::new("pn", &[8, 12], &mut rng);
        let pts = cloud(&mut rng, 30);
        let c: Vec<f64> = (0..POINT_FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (pts2, c2) = (pts.clone(), c.clone());
        gradcheck::check_module(
            &mut enc,
            &mut |m| m.encode(&pts).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum(),
            &mut |m| {
                let (_, cache) = m.forward(&pts2).unwrap();
                m.backward(&cache, &c2);
            },
            25,
            1e-3,
        );
    }
}
