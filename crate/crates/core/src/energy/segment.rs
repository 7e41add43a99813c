use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::body::{BodyMesh, VertexGroups};
use crate::error::{arg_err, Result};
use crate::math::*;

/// Per-frame sole displacement above which a foot counts as moving.
pub const SOLE_MOTION_THRESHOLD: f64 = 0.02;
/// Runs shorter than this are absorbed by their predecessor.
pub const STANCE_HYSTERESIS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stance {
    Left,
    Right,
    /// Both soles moving; excluded from the foot term.
    Airborne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootSegment {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub stance: Stance,
    /// Mean stable-sole centroid over the segment.
    pub mean: Vec3,
}

impl FootSegment {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FootSegmentation {
    pub segments: Vec<FootSegment>,
}

impl FootSegmentation {
    pub fn frame_labels(&self) -> Vec<Stance> {
        self.segments.iter().flat_map(|s| core::iter::repeat_n(s.stance, s.len())).collect()
    }

    pub fn num_frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end + 1)
    }
}

/// Sole centroids of every frame, `(left, right)`.
pub fn sole_tracks(meshes: &[BodyMesh], groups: &VertexGroups) -> (Vec<Vec3>, Vec<Vec3>) {
    meshes
        .iter()
        .map(|m| (m.centroid_of(&groups.left_sole), m.centroid_of(&groups.right_sole)))
        .unzip()
}

pub fn segment_stable_foot(meshes: &[BodyMesh], groups: &VertexGroups) -> Result<FootSegmentation> {
    let (l, r) = sole_tracks(meshes, groups);
    segment_soles(&l, &r)
}

/// Labels each frame by the sole that moved less towards the next frame (the
/// last frame reuses the final pair), then smooths and merges the runs.
pub fn segment_soles(left: &[Vec3], right: &[Vec3]) -> Result<FootSegmentation> {
    let n = left.len();
    if n < 2 || right.len() != n {
        return Err(arg_err("foot segmentation needs at least two frames per sole track"));
    }
    let pair_label = |i: usize| {
        let dl = dist(left[i + 1], left[i]);
        let dr = dist(right[i + 1], right[i]);
        if dl > SOLE_MOTION_THRESHOLD && dr > SOLE_MOTION_THRESHOLD {
            Stance::Airborne
        } else if dl <= dr {
            Stance::Left
        } else {
            Stance::Right
        }
    };
    let labels: Vec<Stance> = (0..n).map(|i| pair_label(i.min(n - 2))).collect();

    // (stance, start, len)
    let mut runs: Vec<(Stance, usize, usize)> = Vec::new();
    for (i, &s) in labels.iter().enumerate() {
        match runs.last_mut() {
            Some(last) if last.0 == s => last.2 += 1,
            _ => runs.push((s, i, 1)),
        }
    }
    let mut kept: Vec<(Stance, usize, usize)> = Vec::new();
    for run in runs {
        match kept.last_mut() {
            Some(prev) if run.2 < STANCE_HYSTERESIS => prev.2 += run.2,
            Some(prev) if prev.0 == run.0 => prev.2 += run.2,
            _ => kept.push(run),
        }
    }
    if kept.len() > 1 && kept[0].2 < STANCE_HYSTERESIS {
        let first = kept.remove(0);
        kept[0].1 = first.1;
        kept[0].2 += first.2;
    }

    let segments = kept
        .into_iter()
        .map(|(stance, start, len)| {
            let end = start + len - 1;
            let mut mean = ZERO3;
            for i in start..=end {
                let c = match stance {
                    Stance::Left => left[i],
                    Stance::Right => right[i],
                    Stance::Airborne => scale(add(left[i], right[i]), 0.5),
                };
                add_assign(&mut mean, c);
            }
            FootSegment { start, end, stance, mean: scale(mean, 1.0 / len as f64) }
        })
        .collect();
    Ok(FootSegmentation { segments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn static_left_single_segment() {
        let left = vec![[0.1, 0.0, 0.0]; 12];
        let right: Vec<Vec3> = (0..12).map(|i| [-0.1, 0.05 * i as f64, 0.0]).collect();
        let seg = segment_soles(&left, &right).unwrap();
        assert_eq!(seg.segments.len(), 1);
        let s = seg.segments[0];
        assert_eq!((s.start, s.end, s.stance), (0, 11, Stance::Left));
        assert!(dist(s.mean, [0.1, 0.0, 0.0]) < 1e-12);
    }

    #[test]
    fn alternating_gait_two_segments() {
        // Left planted for frames 0..10 while right swings, then the reverse.
        let mut left = Vec::new();
        let mut right = Vec::new();
        for i in 0..20 {
            if i < 10 {
                left.push([0.1, 0.0, 0.0]);
                right.push([-0.1, 0.05 * i as f64, 0.0]);
            } else {
                left.push([0.1, 0.05 * (i - 9) as f64, 0.0]);
                right.push([-0.1, 0.45, 0.0]);
            }
        }
        let seg = segment_soles(&left, &right).unwrap();
        let labels: Vec<_> = seg.segments.iter().map(|s| s.stance).collect();
        assert_eq!(labels, vec![Stance::Left, Stance::Right]);
        assert_eq!(seg.num_frames(), 20);
        assert_eq!(seg.segments[0].end + 1, seg.segments[1].start);
    }

    #[test]
    fn short_runs_absorbed_and_airborne_detected() {
        let n = 15;
        let mut left = vec![[0.0; 3]; n];
        let mut right: Vec<Vec3> = (0..n).map(|i| [0.0, 0.05 * i as f64, 0.0]).collect();
        // A one-frame blip where left moves more than right.
        left[7] = [0.0, 0.015, 0.0];
        right[8] = right[7];
        let seg = segment_soles(&left, &right).unwrap();
        assert_eq!(seg.segments.len(), 1);

        let jump: Vec<Vec3> = (0..n).map(|i| [0.0, 0.0, 0.1 * i as f64]).collect();
        let seg = segment_soles(&jump, &jump).unwrap();
        assert_eq!(seg.frame_labels(), vec![Stance::Airborne; n]);
        assert!(segment_soles(&jump[..1], &jump[..1]).is_err());
    }

    #[test]
    fn segments_partition_frames() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.random_range(2..40);
            let mut walk = |_| -> Vec<Vec3> {
                let mut p = ZERO3;
                (0..n)
                    .map(|_| {
                        p[0] += rng.random_range(-0.04..0.04);
                        p
                    })
                    .collect()
            };
            let (l, r) = (walk(0), walk(1));
            let seg = segment_soles(&l, &r).unwrap();
            assert_eq!(seg.segments[0].start, 0);
            assert_eq!(seg.num_frames(), n);
            for w in seg.segments.windows(2) {
                assert_eq!(w[0].end + 1, w[1].start);
                assert_ne!(w[0].stance, w[1].stance);
            }
        }
    }
}
