//! Short-term motion between two bodies: a route network for the pelvis
//! path, then a pose network conditioned on that route.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::{BodyParams, HAND_DIM, POSE_DIM};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::math::{dist, Vec3};
use crate::nn::{leaky, leaky_grad, Adam, BiLstm, BiLstmCache, Linear, Module, Param, PointEncoder, POINT_FEATURE_DIM};
use crate::rotation::{normalize_rot6d, rot6d_to_matrix, Rot6d};
use crate::scene::SceneField;
use crate::sequence::MotionSequence;

/// Route step width: `(t, r)`.
pub const ROUTE_DIM: usize = 9;
/// Pose step width: `(p, h)`.
pub const POSE_STEP_DIM: usize = POSE_DIM + HAND_DIM;
pub const DEFAULT_K: usize = 61;
pub const MIN_CLIP_DISPLACEMENT: f64 = 0.5;
pub const LAMBDA_T: f64 = 1.0;
pub const LAMBDA_R: f64 = 1.0;
pub const LAMBDA_P: f64 = 1.0;
pub const LAMBDA_H: f64 = 0.1;

/// Per-step LSTM input: descriptor slot plus a normalized clock.
const ROUTE_IN: usize = ROUTE_DIM + 1;
/// Pose descriptor, route step and clock.
const POSE_IN: usize = POSE_STEP_DIM + ROUTE_DIM + 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteStep {
    pub t: [f64; 3],
    pub r: Rot6d,
}

impl RouteStep {
    pub fn of(b: &BodyParams) -> Self {
        Self { t: b.t, r: b.r }
    }

    fn flat(&self) -> [f64; ROUTE_DIM] {
        let mut v = [0.0; ROUTE_DIM];
        v[..3].copy_from_slice(&self.t);
        v[3..].copy_from_slice(&self.r);
        v
    }

    fn from_flat(v: &[f64]) -> Self {
        let mut s = Self { t: [0.0; 3], r: [0.0; 6] };
        s.t.copy_from_slice(&v[..3]);
        s.r.copy_from_slice(&v[3..ROUTE_DIM]);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseStep {
    pub p: [f64; POSE_DIM],
    pub h: [f64; HAND_DIM],
}

impl PoseStep {
    pub fn of(b: &BodyParams) -> Self {
        Self { p: b.p, h: b.h }
    }

    fn flat(&self) -> Vec<f64> {
        let mut v = self.p.to_vec();
        v.extend_from_slice(&self.h);
        v
    }

    fn from_flat(v: &[f64]) -> Self {
        let mut s = Self { p: [0.0; POSE_DIM], h: [0.0; HAND_DIM] };
        s.p.copy_from_slice(&v[..POSE_DIM]);
        s.h.copy_from_slice(&v[POSE_DIM..POSE_STEP_DIM]);
        s
    }
}

fn weighted_l1(pred: &[f64], gt: &[f64], w: &[f64]) -> f64 {
    pred.iter().zip(gt).zip(w).map(|((a, b), w)| w * (a - b).abs()).sum()
}

fn weighted_l1_grad(pred: &[f64], gt: &[f64], w: &[f64], s: f64) -> Vec<f64> {
    pred.iter().zip(gt).zip(w).map(|((a, b), w)| if a == b { 0.0 } else { s * w * (a - b).signum() }).collect()
}

fn route_weights() -> [f64; ROUTE_DIM] {
    [LAMBDA_T, LAMBDA_T, LAMBDA_T, LAMBDA_R, LAMBDA_R, LAMBDA_R, LAMBDA_R, LAMBDA_R, LAMBDA_R]
}

fn pose_weights() -> Vec<f64> {
    let mut w = vec![LAMBDA_P; POSE_DIM];
    w.extend([LAMBDA_H; HAND_DIM]);
    w
}

/// `λ_t Σ|t̂ − t| + λ_r Σ|r̂ − r|` over all steps.
pub fn route_loss(pred: &[RouteStep], gt: &[RouteStep]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(shape_err(format!("route of {} steps vs {} ground-truth steps", pred.len(), gt.len())));
    }
    let w = route_weights();
    Ok(pred.iter().zip(gt).map(|(a, b)| weighted_l1(&a.flat(), &b.flat(), &w)).sum())
}

/// `λ_p Σ|p̂ − p| + λ_h Σ|ĥ − h|` over all steps.
pub fn pose_loss(pred: &[PoseStep], gt: &[PoseStep]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(shape_err(format!("{} pose steps vs {} ground-truth steps", pred.len(), gt.len())));
    }
    let w = pose_weights();
    Ok(pred.iter().zip(gt).map(|(a, b)| weighted_l1(&a.flat(), &b.flat(), &w)).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionNetConfig {
    pub k: usize,
    pub lstm_hidden: usize,
    pub fc_width: usize,
    pub point_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for MotionNetConfig {
    fn default() -> Self {
        Self { k: DEFAULT_K, lstm_hidden: 256, fc_width: 512, point_hidden: vec![64, 128], seed: 0 }
    }
}

impl MotionNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(arg_err(format!("clip length k = {} must be at least 2", self.k)));
        }
        if self.lstm_hidden == 0 || self.fc_width == 0 || self.point_hidden.iter().any(|&h| h == 0) {
            return Err(arg_err("network widths must be positive"));
        }
        Ok(())
    }
}

/// Bi-LSTM over `k + 1` steps, with a scene feature broadcast to a two-layer
/// head at every interior step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepNet {
    pub lstm: BiLstm,
    pub points: PointEncoder,
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct StepCache {
    lstm: BiLstmCache,
    heads_in: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
}

impl StepNet {
    fn new(name: &str, in_dim: usize, out_dim: usize, cfg: &MotionNetConfig, rng: &mut ChaCha8Rng) -> Self {
        let lstm = BiLstm::new(&format!("{name}.lstm"), in_dim, cfg.lstm_hidden, rng);
        let points = PointEncoder::new(&format!("{name}.points"), &cfg.point_hidden, rng);
        let fc1 = Linear::new(&format!("{name}.fc1"), 2 * cfg.lstm_hidden + POINT_FEATURE_DIM, cfg.fc_width, rng);
        let fc2 = Linear::new(&format!("{name}.fc2"), cfg.fc_width, out_dim, rng);
        Self { lstm, points, fc1, fc2 }
    }

    /// Outputs for steps `1..k` given the full input sequence.
    fn heads(&self, xs: &[Vec<f64>], feature: &[f64]) -> Result<(Vec<Vec<f64>>, StepCache)> {
        let (hs, lstm) = self.lstm.forward(xs)?;
        let n = hs.len();
        let mut cache = StepCache { lstm, heads_in: Vec::new(), pre: Vec::new(), act: Vec::new() };
        let mut outs = Vec::with_capacity(n - 2);
        for h in &hs[1..n - 1] {
            let mut x = h.clone();
            x.extend_from_slice(feature);
            let pre = self.fc1.apply(&x);
            let act: Vec<f64> = pre.iter().map(|v| leaky(*v)).collect();
            let y = self.fc2.apply(&act);
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric("non-finite network output".into()));
            }
            outs.push(y);
            cache.heads_in.push(x);
            cache.pre.push(pre);
            cache.act.push(act);
        }
        Ok((outs, cache))
    }

    /// Accumulates weight gradients; returns `dL/dfeature`.
    fn heads_backward(&mut self, cache: &StepCache, d_outs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = cache.heads_in.len() + 2;
        let hw = self.lstm.out_dim();
        let mut d_hs = vec![vec![0.0; hw]; n];
        let mut d_feat = vec![0.0; POINT_FEATURE_DIM];
        for (i, d) in d_outs.iter().enumerate() {
            let d_act = self.fc2.back(&cache.act[i], d, true);
            let d_pre: Vec<f64> = d_act.iter().zip(&cache.pre[i]).map(|(g, p)| g * leaky_grad(*p)).collect();
            let dx = self.fc1.back(&cache.heads_in[i], &d_pre, true);
            d_hs[i + 1].copy_from_slice(&dx[..hw]);
            for (a, b) in d_feat.iter_mut().zip(&dx[hw..]) {
                *a += b;
            }
        }
        self.lstm.backward(&cache.lstm, &d_hs)?;
        Ok(d_feat)
    }
}

impl Module for StepNet {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.lstm.params();
        v.extend(self.points.params());
        v.extend(self.fc1.params());
        v.extend(self.fc2.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.lstm.params_mut();
        v.extend(self.points.params_mut());
        v.extend(self.fc1.params_mut());
        v.extend(self.fc2.params_mut());
        v
    }
}

fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        return Err(arg_err(format!("clip length k = {k} must be at least 2")));
    }
    Ok(())
}

fn clock(i: usize, k: usize) -> f64 {
    i as f64 / k as f64
}

/// `k + 1` route inputs: start and end descriptors at the ends, zeros in
/// between, a clock everywhere.
pub fn route_inputs(start: &RouteStep, end: &RouteStep, k: usize) -> Result<Vec<Vec<f64>>> {
    check_k(k)?;
    rot6d_to_matrix(&start.r)?;
    rot6d_to_matrix(&end.r)?;
    Ok((0..=k)
        .map(|i| {
            let mut x = vec![0.0; ROUTE_IN];
            if i == 0 {
                x[..ROUTE_DIM].copy_from_slice(&start.flat());
            } else if i == k {
                x[..ROUTE_DIM].copy_from_slice(&end.flat());
            }
            x[ROUTE_DIM] = clock(i, k);
            x
        })
        .collect())
}

/// `k + 1` pose inputs: endpoint poses at the ends, the route at every step.
pub fn pose_inputs(start: &BodyParams, end: &BodyParams, route: &[RouteStep]) -> Result<Vec<Vec<f64>>> {
    let k = route.len() + 1;
    check_k(k)?;
    Ok((0..=k)
        .map(|i| {
            let mut x = vec![0.0; POSE_IN];
            let step = if i == 0 {
                x[..POSE_STEP_DIM].copy_from_slice(&PoseStep::of(start).flat());
                RouteStep::of(start)
            } else if i == k {
                x[..POSE_STEP_DIM].copy_from_slice(&PoseStep::of(end).flat());
                RouteStep::of(end)
            } else {
                route[i - 1]
            };
            x[POSE_STEP_DIM..POSE_STEP_DIM + ROUTE_DIM].copy_from_slice(&step.flat());
            x[POSE_STEP_DIM + ROUTE_DIM] = clock(i, k);
            x
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteNet {
    pub k: usize,
    pub net: StepNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseNet {
    pub k: usize,
    pub net: StepNet,
}

impl RouteNet {
    pub fn new(cfg: &MotionNetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self { k: cfg.k, net: StepNet::new("route", ROUTE_IN, ROUTE_DIM, cfg, &mut rng) })
    }

    /// Steps `1..k` between two endpoints.
    pub fn route_forward(&self, start: &RouteStep, end: &RouteStep, cloud: &[Vec3]) -> Result<Vec<RouteStep>> {
        let feature = self.net.points.encode(cloud)?;
        self.forward_with_feature(start, end, &feature)
    }

    pub fn forward_with_feature(&self, start: &RouteStep, end: &RouteStep, feature: &[f64]) -> Result<Vec<RouteStep>> {
        let xs = route_inputs(start, end, self.k)?;
        let (outs, _) = self.net.heads(&xs, feature)?;
        Ok(outs.iter().map(|o| RouteStep::from_flat(o)).collect())
    }
}

impl PoseNet {
    pub fn new(cfg: &MotionNetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
        Ok(Self { k: cfg.k, net: StepNet::new("pose", POSE_IN, POSE_STEP_DIM, cfg, &mut rng) })
    }

    /// Poses for the interior steps of `route`.
    pub fn pose_forward(
        &self,
        start: &BodyParams,
        end: &BodyParams,
        route: &[RouteStep],
        cloud: &[Vec3],
    ) -> Result<Vec<PoseStep>> {
        let feature = self.net.points.encode(cloud)?;
        self.forward_with_feature(start, end, route, &feature)
    }

    pub fn forward_with_feature(
        &self,
        start: &BodyParams,
        end: &BodyParams,
        route: &[RouteStep],
        feature: &[f64],
    ) -> Result<Vec<PoseStep>> {
        if route.len() + 1 != self.k {
            return Err(arg_err(format!("route has {} steps, expected {}", route.len(), self.k - 1)));
        }
        let xs = pose_inputs(start, end, route)?;
        let (outs, _) = self.net.heads(&xs, feature)?;
        Ok(outs.iter().map(|o| PoseStep::from_flat(o)).collect())
    }
}

/// Frames `0..=k` with the endpoints passed through verbatim.
pub fn synthesize_clip(
    route_net: &RouteNet,
    pose_net: &PoseNet,
    start: &BodyParams,
    end: &BodyParams,
    scene: &SceneField,
) -> Result<MotionSequence> {
    if start.beta != end.beta {
        return Err(arg_err("clip endpoints have different shape coefficients"));
    }
    if route_net.k != pose_net.k {
        return Err(arg_err(format!("route net k = {} but pose net k = {}", route_net.k, pose_net.k)));
    }
    start.validate()?;
    end.validate()?;
    let cloud = &scene.cloud.points;
    let route = route_net.route_forward(&RouteStep::of(start), &RouteStep::of(end), cloud)?;
    let poses = pose_net.pose_forward(start, end, &route, cloud)?;
    let mut frames = Vec::with_capacity(route_net.k + 1);
    frames.push(*start);
    for (rs, ps) in route.iter().zip(&poses) {
        let r = normalize_rot6d(&rs.r)?;
        frames.push(BodyParams { t: rs.t, r, beta: start.beta, p: ps.p, h: ps.h });
    }
    frames.push(*end);
    Ok(MotionSequence::new(frames))
}

/// A ground-truth clip of `k + 1` frames in a scene (index into a scene list).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionClip {
    pub frames: Vec<BodyParams>,
    pub scene: usize,
}

impl MotionClip {
    pub fn k(&self) -> usize {
        self.frames.len().saturating_sub(1)
    }

    /// Distance between the first and last pelvis positions.
    pub fn displacement(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => dist(a.t, b.t),
            _ => 0.0,
        }
    }

    pub fn route_targets(&self) -> Vec<RouteStep> {
        self.frames[1..self.frames.len() - 1].iter().map(RouteStep::of).collect()
    }

    pub fn pose_targets(&self) -> Vec<PoseStep> {
        self.frames[1..self.frames.len() - 1].iter().map(PoseStep::of).collect()
    }
}

/// Whether a clip moves far enough to train on.
pub fn accept_clip(clip: &MotionClip) -> bool {
    clip.displacement() > MIN_CLIP_DISPLACEMENT
}

/// Every `k + 1`-frame window of `seq` starting at multiples of `stride`
/// that passes [`accept_clip`].
pub fn extract_clips(seq: &MotionSequence, k: usize, stride: usize, scene: usize) -> Vec<MotionClip> {
    if seq.len() < k + 1 || stride == 0 {
        return Vec::new();
    }
    (0..=seq.len() - (k + 1))
        .step_by(stride)
        .map(|s| MotionClip { frames: seq.frames[s..=s + k].to_vec(), scene })
        .filter(accept_clip)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl PhaseConfig {
    pub const ROUTE: Self = Self { lr: 1e-3, batch: 32, epochs: 20, seed: 0 };
    pub const POSE: Self = Self { lr: 1e-3, batch: 16, epochs: 20, seed: 0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch == 0 {
            return Err(arg_err("training phase needs lr > 0 and batch ≥ 1"));
        }
        Ok(())
    }
}

struct Example {
    xs: Vec<Vec<f64>>,
    target: Vec<Vec<f64>>,
    scene: usize,
}

fn check_clips(clips: &[MotionClip], k: usize, scenes: &[SceneField]) -> Result<()> {
    if clips.is_empty() {
        return Err(arg_err("empty motion dataset"));
    }
    for (i, c) in clips.iter().enumerate() {
        if c.frames.len() != k + 1 {
            return Err(arg_err(format!("clip {i} has {} frames, expected {}", c.frames.len(), k + 1)));
        }
        if c.scene >= scenes.len() {
            return Err(arg_err(format!("clip {i} refers to scene {}", c.scene)));
        }
    }
    Ok(())
}

/// One pass over `examples`; the scene encoder runs once per distinct scene
/// and batch. Returns the mean example loss.
fn run_epoch(
    net: &mut StepNet,
    adam: Option<&mut Adam>,
    examples: &[Example],
    order: &[usize],
    batch: usize,
    scenes: &[SceneField],
    weights: &[f64],
) -> Result<f64> {
    let mut adam = adam;
    let mut total = 0.0;
    for chunk in order.chunks(batch) {
        let s = 1.0 / chunk.len() as f64;
        net.zero_grad();
        let mut feats = BTreeMap::new();
        for &i in chunk {
            let sc = examples[i].scene;
            if let alloc::collections::btree_map::Entry::Vacant(e) = feats.entry(sc) {
                let (f, cache) = net.points.forward(&scenes[sc].cloud.points)?;
                e.insert((f, cache, vec![0.0; POINT_FEATURE_DIM]));
            }
        }
        for &i in chunk {
            let ex = &examples[i];
            let (feat, _, _) = &feats[&ex.scene];
            let (outs, cache) = net.heads(&ex.xs, feat)?;
            let l: f64 = outs.iter().zip(&ex.target).map(|(o, t)| weighted_l1(o, t, weights)).sum();
            if !l.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss on example {i}")));
            }
            total += l;
            if adam.is_some() {
                let d: Vec<Vec<f64>> = outs.iter().zip(&ex.target).map(|(o, t)| weighted_l1_grad(o, t, weights, s)).collect();
                let df = net.heads_backward(&cache, &d)?;
                let acc = &mut feats.get_mut(&ex.scene).expect("encoded").2;
                for (a, b) in acc.iter_mut().zip(df) {
                    *a += b;
                }
            }
        }
        if let Some(adam) = adam.as_deref_mut() {
            for (_, cache, d) in feats.values() {
                net.points.backward(cache, d);
            }
            adam.step(&mut net.params_mut())?;
        }
    }
    Ok(total / examples.len() as f64)
}

fn train_examples(net: &mut StepNet, examples: &[Example], scenes: &[SceneField], cfg: &PhaseConfig, weights: &[f64]) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        history.push(run_epoch(net, Some(&mut adam), examples, &order, cfg.batch, scenes, weights)?);
    }
    Ok(history)
}

fn route_examples(k: usize, clips: &[MotionClip]) -> Result<Vec<Example>> {
    clips
        .iter()
        .map(|c| {
            let xs = route_inputs(&RouteStep::of(&c.frames[0]), &RouteStep::of(&c.frames[k]), k)?;
            let target = c.route_targets().iter().map(|s| s.flat().to_vec()).collect();
            Ok(Example { xs, target, scene: c.scene })
        })
        .collect()
}

/// Routes predicted by a frozen route network, used as pose-network input.
fn pose_examples(route_net: &RouteNet, clips: &[MotionClip], scenes: &[SceneField]) -> Result<Vec<Example>> {
    let k = route_net.k;
    let mut feats = BTreeMap::new();
    clips
        .iter()
        .map(|c| {
            if let alloc::collections::btree_map::Entry::Vacant(e) = feats.entry(c.scene) {
                e.insert(route_net.net.points.encode(&scenes[c.scene].cloud.points)?);
            }
            let route =
                route_net.forward_with_feature(&RouteStep::of(&c.frames[0]), &RouteStep::of(&c.frames[k]), &feats[&c.scene])?;
            let xs = pose_inputs(&c.frames[0], &c.frames[k], &route)?;
            let target = c.pose_targets().iter().map(PoseStep::flat).collect();
            Ok(Example { xs, target, scene: c.scene })
        })
        .collect()
}

/// Per-epoch mean route loss.
pub fn train_route(net: &mut RouteNet, clips: &[MotionClip], scenes: &[SceneField], cfg: &PhaseConfig) -> Result<Vec<f64>> {
    check_clips(clips, net.k, scenes)?;
    let ex = route_examples(net.k, clips)?;
    train_examples(&mut net.net, &ex, scenes, cfg, &route_weights())
}

/// Per-epoch mean pose loss; the route network is only read.
pub fn train_pose(
    net: &mut PoseNet,
    route_net: &RouteNet,
    clips: &[MotionClip],
    scenes: &[SceneField],
    cfg: &PhaseConfig,
) -> Result<Vec<f64>> {
    if route_net.k != net.k {
        return Err(arg_err(format!("route net k = {} but pose net k = {}", route_net.k, net.k)));
    }
    check_clips(clips, net.k, scenes)?;
    let ex = pose_examples(route_net, clips, scenes)?;
    train_examples(&mut net.net, &ex, scenes, cfg, &pose_weights())
}

/// Mean route loss of `net` over `clips`.
pub fn evaluate_route(net: &RouteNet, clips: &[MotionClip], scenes: &[SceneField]) -> Result<f64> {
    check_clips(clips, net.k, scenes)?;
    let ex = route_examples(net.k, clips)?;
    let order: Vec<usize> = (0..ex.len()).collect();
    run_epoch(&mut net.net.clone(), None, &ex, &order, ex.len(), scenes, &route_weights())
}

/// Mean pose loss of `net` over `clips`, fed by `route_net`.
pub fn evaluate_pose(net: &PoseNet, route_net: &RouteNet, clips: &[MotionClip], scenes: &[SceneField]) -> Result<f64> {
    check_clips(clips, net.k, scenes)?;
    let ex = pose_examples(route_net, clips, scenes)?;
    let order: Vec<usize> = (0..ex.len()).collect();
    run_epoch(&mut net.net.clone(), None, &ex, &order, ex.len(), scenes, &pose_weights())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionTraining {
    pub route_losses: Vec<f64>,
    pub pose_losses: Vec<f64>,
    /// Route-network checksum after phase 1 and after phase 2.
    pub route_checksums: (u64, u64),
}

/// Route network first, then the pose network on its frozen predictions.
pub fn train_motion_nets(
    route_net: &mut RouteNet,
    pose_net: &mut PoseNet,
    clips: &[MotionClip],
    scenes: &[SceneField],
    route_cfg: &PhaseConfig,
    pose_cfg: &PhaseConfig,
) -> Result<MotionTraining> {
    let route_losses = train_route(route_net, clips, scenes, route_cfg)?;
    let before = route_net.net.checksum();
    let pose_losses = train_pose(pose_net, route_net, clips, scenes, pose_cfg)?;
    Ok(MotionTraining { route_losses, pose_losses, route_checksums: (before, route_net.net.checksum()) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::BodyTemplate;
    use crate::rotation::rot6d_from_yaw;
    use crate::scene::{SceneFieldOptions, SdfOptions};
    use crate::synth::{gen_motion, gen_scene, random_motion_spec, SyntheticSceneSpec};
    use rand::Rng;

    fn cfg(k: usize) -> MotionNetConfig {
        MotionNetConfig { k, lstm_hidden: 6, fc_width: 10, point_hidden: vec![6, 8], seed: 1 }
    }

    fn scene_of(spec: &SyntheticSceneSpec) -> SceneField {
        let opts = SceneFieldOptions {
            sdf: SdfOptions { cell: 0.1, padding: 0.5, ..spec.sdf_options() },
            cloud_points: 32,
            contact_points: 200,
            seed: 1,
        };
        SceneField::build(gen_scene(spec).unwrap(), &opts).unwrap()
    }

    fn random_route(rng: &mut ChaCha8Rng, n: usize) -> Vec<RouteStep> {
        (0..n)
            .map(|_| RouteStep {
                t: core::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                r: core::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            })
            .collect()
    }

    #[test]
    fn loss_hand_arithmetic() {
        let gt = vec![RouteStep { t: [0.0; 3], r: crate::rotation::ROT6D_IDENTITY }];
        let mut pred = gt.clone();
        assert_eq!(route_loss(&pred, &gt).unwrap(), 0.0);
        pred[0].t[0] = 0.1;
        assert!((route_loss(&pred, &gt).unwrap() - 0.1).abs() < 1e-15);
        assert!(route_loss(&pred, &[]).is_err());

        let gp = vec![PoseStep { p: [0.0; POSE_DIM], h: [0.0; HAND_DIM] }; 3];
        let mut pp = gp.clone();
        assert_eq!(pose_loss(&pp, &gp).unwrap(), 0.0);
        pp[1].h[4] = 1.0;
        assert!((pose_loss(&pp, &gp).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn losses_match_naive_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = rng.random_range(1..20);
            let (a, b) = (random_route(&mut rng, n), random_route(&mut rng, n));
            let mut naive = 0.0;
            for i in 0..n {
                for d in 0..3 {
                    naive += LAMBDA_T * (a[i].t[d] - b[i].t[d]).abs();
                }
                for d in 0..6 {
                    naive += LAMBDA_R * (a[i].r[d] - b[i].r[d]).abs();
                }
            }
            let l = route_loss(&a, &b).unwrap();
            assert!((l - naive).abs() < 1e-12);
            // 1-homogeneous in the residual.
            let scaled: Vec<RouteStep> = a
                .iter()
                .zip(&b)
                .map(|(x, y)| RouteStep {
                    t: core::array::from_fn(|d| y.t[d] + 2.0 * (x.t[d] - y.t[d])),
                    r: core::array::from_fn(|d| y.r[d] + 2.0 * (x.r[d] - y.r[d])),
                })
                .collect();
            assert!((route_loss(&scaled, &b).unwrap() - 2.0 * l).abs() < 1e-9);

            let pa: Vec<PoseStep> = (0..n)
                .map(|_| PoseStep {
                    p: core::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                    h: core::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                })
                .collect();
            let pb: Vec<PoseStep> = pa.iter().map(|s| PoseStep { p: s.p.map(|x| x * 0.5), h: s.h.map(|x| -x) }).collect();
            let mut naive = 0.0;
            for i in 0..n {
                for d in 0..POSE_DIM {
                    naive += LAMBDA_P * (pa[i].p[d] - pb[i].p[d]).abs();
                }
                for d in 0..HAND_DIM {
                    naive += LAMBDA_H * (pa[i].h[d] - pb[i].h[d]).abs();
                }
            }
            assert!((pose_loss(&pa, &pb).unwrap() - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn output_lengths_and_zero_weights() {
        let spec = SyntheticSceneSpec::random(1, [4.0, 4.0], 1);
        let sc = scene_of(&spec);
        let mut route = RouteNet::new(&cfg(61)).unwrap();
        let mut pose = PoseNet::new(&cfg(61)).unwrap();
        let a = RouteStep { t: [0.0, 0.0, 0.9], r: rot6d_from_yaw(0.0) };
        let b = RouteStep { t: [1.0, 0.5, 0.9], r: rot6d_from_yaw(1.0) };
        let steps = route.route_forward(&a, &b, &sc.cloud.points).unwrap();
        assert_eq!(steps.len(), 60);
        let (s, e) = (BodyParams::default(), BodyParams { t: b.t, r: b.r, ..BodyParams::default() });
        assert_eq!(pose.pose_forward(&s, &e, &steps, &sc.cloud.points).unwrap().len(), 60);
        assert!(pose.pose_forward(&s, &e, &steps[1..], &sc.cloud.points).is_err());

        route.net.set_all(0.0);
        route.net.fc2.b.value = (0..9).map(|i| i as f64).collect();
        let steps = route.route_forward(&a, &b, &sc.cloud.points).unwrap();
        assert!(steps.iter().all(|s| s.flat().to_vec() == route.net.fc2.b.value));
        pose.net.set_all(0.0);
        pose.net.fc2.b.value[3] = 2.0;
        let poses = pose.pose_forward(&s, &e, &steps, &sc.cloud.points).unwrap();
        assert!(poses.iter().all(|p| p.flat() == pose.net.fc2.b.value));
        assert!(route.route_forward(&a, &RouteStep { r: [0.0; 6], ..b }, &sc.cloud.points).is_err());
    }

    #[test]
    fn step_net_gradients() {
        let spec = SyntheticSceneSpec::random(1, [4.0, 4.0], 1);
        let scenes = [scene_of(&spec)];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = 5;
        let frames: Vec<BodyParams> = (0..=k)
            .map(|i| {
                let mut b = BodyParams::default();
                b.t = [0.1 * i as f64, 0.2 * i as f64, 0.9];
                b.r = rot6d_from_yaw(0.1 * i as f64);
                b.p.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
                b
            })
            .collect();
        let clips = vec![MotionClip { frames, scene: 0 }];
        let ex = route_examples(k, &clips).unwrap();
        let mut net = RouteNet::new(&cfg(k)).unwrap().net;
        let w = route_weights();
        let loss = |m: &StepNet| {
            let f = m.points.encode(&scenes[0].cloud.points).unwrap();
            let (o, _) = m.heads(&ex[0].xs, &f).unwrap();
            o.iter().zip(&ex[0].target).map(|(o, t)| weighted_l1(o, t, &w)).sum::<f64>()
        };
        crate::nn::gradcheck::check_module(
            &mut net,
            &mut |m: &StepNet| loss(m),
            &mut |m: &mut StepNet| {
                let (f, pc) = m.points.forward(&scenes[0].cloud.points).unwrap();
                let (o, c) = m.heads(&ex[0].xs, &f).unwrap();
                let d: Vec<Vec<f64>> = o.iter().zip(&ex[0].target).map(|(o, t)| weighted_l1_grad(o, t, &w, 1.0)).collect();
                let df = m.heads_backward(&c, &d).unwrap();
                m.points.backward(&pc, &df);
            },
            6,
            1e-3,
        );
    }

    fn dataset(k: usize, scenes: usize, motions: usize) -> (Vec<SceneField>, Vec<MotionClip>) {
        let tpl = BodyTemplate::default();
        let mut fields = Vec::new();
        let mut clips = Vec::new();
        for s in 0..scenes {
            let spec = SyntheticSceneSpec::random(10 + s as u64, [5.0, 5.0], 1);
            fields.push(scene_of(&spec));
            for m in 0..motions {
                let ms = random_motion_spec(&spec, 100 * s as u64 + m as u64, 0);
                let motion = gen_motion(&spec, &ms, &tpl).unwrap();
                clips.extend(extract_clips(&motion.sequence, k, k, s));
            }
        }
        (fields, clips)
    }

    #[test]
    fn clip_filter_threshold() {
        let mk = |d: f64| MotionClip {
            frames: vec![BodyParams::default(), BodyParams { t: [d, 0.0, 0.0], ..BodyParams::default() }],
            scene: 0,
        };
        assert!(!accept_clip(&mk(0.3)));
        assert!(!accept_clip(&mk(0.5)));
        assert!(accept_clip(&mk(0.6)));
        let (_, clips) = dataset(15, 1, 3);
        assert!(!clips.is_empty());
        assert!(clips.iter().all(|c| c.frames.len() == 16 && c.displacement() > 0.5));
    }

    #[test]
    fn synthesize_clip_contracts() {
        let (scenes, clips) = dataset(15, 1, 2);
        let c = &clips[0];
        let route = RouteNet::new(&cfg(15)).unwrap();
        let pose = PoseNet::new(&cfg(15)).unwrap();
        let (s, e) = (c.frames[0], c.frames[15]);
        let clip = synthesize_clip(&route, &pose, &s, &e, &scenes[0]).unwrap();
        assert_eq!(clip.len(), 16);
        assert_eq!(clip.frames[0], s);
        assert_eq!(clip.frames[15], e);
        assert!(clip.frames.iter().all(|f| f.beta == s.beta));
        assert_eq!(clip, synthesize_clip(&route, &pose, &s, &e, &scenes[0]).unwrap());
        let mut e2 = e;
        e2.beta[0] += 0.1;
        assert!(synthesize_clip(&route, &pose, &s, &e2, &scenes[0]).is_err());
        let tpl = BodyTemplate::default();
        let v = crate::metrics::neighbour_v2v(&clip.meshes(&tpl).unwrap()).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn two_phase_training_freezes_route_net() {
        let (scenes, clips) = dataset(15, 1, 3);
        let mut route = RouteNet::new(&cfg(15)).unwrap();
        let mut pose = PoseNet::new(&cfg(15)).unwrap();
        let rc = PhaseConfig { epochs: 4, ..PhaseConfig::ROUTE };
        let pc = PhaseConfig { epochs: 4, ..PhaseConfig::POSE };
        let before = evaluate_route(&route, &clips, &scenes).unwrap();
        let out = train_motion_nets(&mut route, &mut pose, &clips, &scenes, &rc, &pc).unwrap();
        assert_eq!(out.route_checksums.0, out.route_checksums.1);
        assert_eq!(out.route_losses.len(), 4);
        assert!(evaluate_route(&route, &clips, &scenes).unwrap() < before);
        assert!(train_route(&mut route, &[], &scenes, &rc).is_err());
    }
}
