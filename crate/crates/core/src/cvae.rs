//! Conditional VAE over static bodies placed at a goal location.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::body::{forward_with_pullback, BodyParams, BodyTemplate, HAND_DIM, H_OFFSET, PARAM_DIM, POSE_DIM, P_OFFSET, SHAPE_DIM};
use crate::energy::scene_terms_gradient;
use crate::error::{arg_err, shape_err, Error, Result};
use crate::math::{exp, Vec3};
use crate::nn::{
    leaky, leaky_grad, Adam, Linear, Module, Param, PointEncoder, PointEncoderCache, ResidualBlock, ResidualCache,
    POINT_FEATURE_DIM,
};
use crate::rotation::{rot6d_to_matrix, Rot6d};
use crate::scene::SceneField;

pub const LATENT_DIM: usize = 32;
/// Decoder output: `(p, h)`.
pub const CVAE_OUT_DIM: usize = POSE_DIM + HAND_DIM;
/// `(F^s, β, t, r)`.
pub const COND_INPUT_DIM: usize = POINT_FEATURE_DIM + SHAPE_DIM + 3 + 6;
const RESIDUAL_BLOCKS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaeConfig {
    /// Width of the encoder/decoder trunks.
    pub width: usize,
    /// Width of the fused condition `F^hs`.
    pub cond_width: usize,
    pub point_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        Self { width: 512, cond_width: 512, point_hidden: vec![64, 128], seed: 0 }
    }
}

impl CvaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.cond_width == 0 || self.point_hidden.iter().any(|&h| h == 0) {
            return Err(arg_err("network widths must be positive"));
        }
        Ok(())
    }
}

/// Goal inputs before fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalCondition {
    pub beta: [f64; SHAPE_DIM],
    pub t: [f64; 3],
    pub r: Rot6d,
    pub scene_feature: Vec<f64>,
}

impl GoalCondition {
    fn input(&self) -> Result<Vec<f64>> {
        if self.scene_feature.len() != POINT_FEATURE_DIM {
            return Err(shape_err(format!("scene feature has {} values", self.scene_feature.len())));
        }
        let mut x = Vec::with_capacity(COND_INPUT_DIM);
        x.extend_from_slice(&self.scene_feature);
        x.extend_from_slice(&self.beta);
        x.extend_from_slice(&self.t);
        x.extend_from_slice(&self.r);
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cvae {
    pub config: CvaeConfig,
    pub points: PointEncoder,
    pub cond_fc: Linear,
    pub enc_in: Linear,
    pub enc_blocks: Vec<ResidualBlock>,
    pub enc_fuse: Linear,
    pub mu_head: Linear,
    pub logvar_head: Linear,
    pub dec_in: Linear,
    pub dec_blocks: Vec<ResidualBlock>,
    pub dec_out: Linear,
}

struct CondCache {
    points: PointEncoderCache,
    input: Vec<f64>,
    pre: Vec<f64>,
}

struct EncCache {
    body: Vec<f64>,
    in_pre: Vec<f64>,
    blocks: Vec<ResidualCache>,
    fuse_in: Vec<f64>,
    fuse_pre: Vec<f64>,
    hidden: Vec<f64>,
}

struct DecCache {
    input: Vec<f64>,
    in_pre: Vec<f64>,
    blocks: Vec<ResidualCache>,
    trunk: Vec<f64>,
}

fn act(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| leaky(*x)).collect()
}

fn act_back(d: &[f64], pre: &[f64]) -> Vec<f64> {
    d.iter().zip(pre).map(|(g, p)| g * leaky_grad(*p)).collect()
}

fn finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite {what}")))
    }
}

/// `Σ 0.5(μ² + σ² − 1 − log σ²)`.
pub fn kl_loss(mu: &[f64], log_var: &[f64]) -> f64 {
    mu.iter().zip(log_var).map(|(m, lv)| 0.5 * (m * m + exp(*lv) - 1.0 - lv)).sum()
}

/// Gradients of [`kl_loss`] with respect to `(μ, log σ²)`.
pub fn kl_grad(mu: &[f64], log_var: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (mu.to_vec(), log_var.iter().map(|lv| 0.5 * (exp(*lv) - 1.0)).collect())
}

/// `z = μ + exp(½ log σ²) ε`.
pub fn reparameterize(mu: &[f64], log_var: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter().zip(log_var).zip(eps).map(|((m, lv), e)| m + exp(0.5 * lv) * e).collect()
}

pub fn standard_normal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

impl Cvae {
    pub fn new(config: &CvaeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (w, c) = (config.width, config.cond_width);
        let points = PointEncoder::new("cvae.points", &config.point_hidden, &mut rng);
        let cond_fc = Linear::new("cvae.cond", COND_INPUT_DIM, c, &mut rng);
        let enc_in = Linear::new("cvae.enc.in", PARAM_DIM, w, &mut rng);
        let enc_blocks =
            (0..RESIDUAL_BLOCKS).map(|i| ResidualBlock::new(&format!("cvae.enc.res{i}"), w, w, &mut rng)).collect();
        let enc_fuse = Linear::new("cvae.enc.fuse", w + c, w, &mut rng);
        let mu_head = Linear::new("cvae.enc.mu", w, LATENT_DIM, &mut rng);
        let logvar_head = Linear::new("cvae.enc.logvar", w, LATENT_DIM, &mut rng);
        let dec_in = Linear::new("cvae.dec.in", LATENT_DIM + c, w, &mut rng);
        let dec_blocks =
            (0..RESIDUAL_BLOCKS).map(|i| ResidualBlock::new(&format!("cvae.dec.res{i}"), w, w, &mut rng)).collect();
        let dec_out = Linear::new("cvae.dec.out", w, CVAE_OUT_DIM, &mut rng);
        Ok(Self {
            config: config.clone(),
            points,
            cond_fc,
            enc_in,
            enc_blocks,
            enc_fuse,
            mu_head,
            logvar_head,
            dec_in,
            dec_blocks,
            dec_out,
        })
    }

    pub fn goal_condition(&self, beta: &[f64; SHAPE_DIM], t: &[f64; 3], r: &Rot6d, cloud: &[Vec3]) -> Result<GoalCondition> {
        Ok(GoalCondition { beta: *beta, t: *t, r: *r, scene_feature: self.points.encode(cloud)? })
    }

    /// Fuses a goal condition into `F^hs`.
    pub fn fuse(&self, goal: &GoalCondition) -> Result<Vec<f64>> {
        let pre = self.cond_fc.forward(&goal.input()?)?;
        Ok(act(&pre))
    }

    /// `F^hs` straight from the raw inputs.
    pub fn condition(&self, beta: &[f64; SHAPE_DIM], t: &[f64; 3], r: &Rot6d, cloud: &[Vec3]) -> Result<Vec<f64>> {
        self.fuse(&self.goal_condition(beta, t, r, cloud)?)
    }

    fn condition_cached(&self, body: &BodyParams, cloud: &[Vec3]) -> Result<(Vec<f64>, CondCache)> {
        let (feat, points) = self.points.forward(cloud)?;
        let goal = GoalCondition { beta: body.beta, t: body.t, r: body.r, scene_feature: feat };
        let input = goal.input()?;
        let pre = self.cond_fc.apply(&input);
        Ok((act(&pre), CondCache { points, input, pre }))
    }

    fn check_cond(&self, cond: &[f64]) -> Result<()> {
        if cond.len() != self.config.cond_width {
            return Err(shape_err(format!("condition has {} values, expected {}", cond.len(), self.config.cond_width)));
        }
        Ok(())
    }

    fn encode_cached(&self, body: &BodyParams, cond: &[f64]) -> Result<(Vec<f64>, Vec<f64>, EncCache)> {
        self.check_cond(cond)?;
        let x = body.to_flat().to_vec();
        let in_pre = self.enc_in.apply(&x);
        let mut h = act(&in_pre);
        let mut blocks = Vec::with_capacity(self.enc_blocks.len());
        for b in &self.enc_blocks {
            let (y, c) = b.forward(&h)?;
            blocks.push(c);
            h = y;
        }
        let mut fuse_in = h;
        fuse_in.extend_from_slice(cond);
        let fuse_pre = self.enc_fuse.apply(&fuse_in);
        let hidden = act(&fuse_pre);
        let mu = self.mu_head.apply(&hidden);
        let lv = self.logvar_head.apply(&hidden);
        finite(&mu, "latent mean")?;
        finite(&lv, "latent log-variance")?;
        Ok((mu, lv, EncCache { body: x, in_pre, blocks, fuse_in, fuse_pre, hidden }))
    }

    /// Posterior `(μ, log σ²)` of a body under a fused condition.
    pub fn encode(&self, body: &BodyParams, cond: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.encode_cached(body, cond).map(|(m, v, _)| (m, v))
    }

    fn decode_cached(&self, z: &[f64], cond: &[f64]) -> Result<(Vec<f64>, DecCache)> {
        self.check_cond(cond)?;
        if z.len() != LATENT_DIM {
            return Err(shape_err(format!("latent code has {} values, expected {LATENT_DIM}", z.len())));
        }
        let mut input = z.to_vec();
        input.extend_from_slice(cond);
        let in_pre = self.dec_in.apply(&input);
        let mut h = act(&in_pre);
        let mut blocks = Vec::with_capacity(self.dec_blocks.len());
        for b in &self.dec_blocks {
            let (y, c) = b.forward(&h)?;
            blocks.push(c);
            h = y;
        }
        let out = self.dec_out.apply(&h);
        finite(&out, "decoder output")?;
        Ok((out, DecCache { input, in_pre, blocks, trunk: h }))
    }

    /// Predicted `(p, h)` for a latent code.
    pub fn decode_pose(&self, z: &[f64], cond: &[f64]) -> Result<Vec<f64>> {
        self.decode_cached(z, cond).map(|(o, _)| o)
    }

    /// Full body: `(p, h)` from the decoder, `t`, `r`, `β` from the goal.
    pub fn decode(&self, z: &[f64], cond: &[f64], goal: &GoalCondition) -> Result<BodyParams> {
        let mut b = BodyParams { t: goal.t, r: goal.r, beta: goal.beta, ..BodyParams::default() };
        b.set_pose_hand(&self.decode_pose(z, cond)?)?;
        Ok(b)
    }

    /// Draws `z ~ N(0, I)` from `seed` and decodes it at the goal.
    pub fn sample_goal_body(
        &self,
        beta: &[f64; SHAPE_DIM],
        t: &[f64; 3],
        r: &Rot6d,
        cloud: &[Vec3],
        seed: u64,
    ) -> Result<BodyParams> {
        rot6d_to_matrix(r)?;
        let goal = self.goal_condition(beta, t, r, cloud)?;
        let cond = self.fuse(&goal)?;
        let z = standard_normal(LATENT_DIM, &mut ChaCha8Rng::seed_from_u64(seed));
        self.decode(&z, &cond, &goal)
    }

    /// Accumulates decoder gradients; returns `(dz, dcond)`.
    fn decode_backward(&mut self, cache: &DecCache, d_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut d = self.dec_out.back(&cache.trunk, d_out, true);
        for (b, c) in self.dec_blocks.iter_mut().zip(&cache.blocks).rev() {
            d = b.backward(c, &d);
        }
        let d_pre = act_back(&d, &cache.in_pre);
        let d_in = self.dec_in.back(&cache.input, &d_pre, true);
        (d_in[..LATENT_DIM].to_vec(), d_in[LATENT_DIM..].to_vec())
    }

    /// `dL/dz` for an output cotangent, leaving parameter gradients alone.
    fn decode_z_grad(&self, cache: &DecCache, d_out: &[f64]) -> Vec<f64> {
        let mut d = self.dec_out.input_grad(d_out);
        for (b, c) in self.dec_blocks.iter().zip(&cache.blocks).rev() {
            d = b.input_grad(c, &d);
        }
        let d_in = self.dec_in.input_grad(&act_back(&d, &cache.in_pre));
        d_in[..LATENT_DIM].to_vec()
    }

    /// Latent code whose decoding best matches `target`'s `(p, h)` in ℓ1,
    /// by Adam from `z = 0`. Returns the code and its final loss.
    pub fn fit_latent(&self, cond: &[f64], target: &BodyParams, iters: usize, lr: f64) -> Result<(Vec<f64>, f64)> {
        let gt = target.pose_hand();
        let mut z = vec![0.0; LATENT_DIM];
        let mut adam = Adam::new(lr);
        let mut best = (z.clone(), f64::INFINITY);
        for it in 0..=iters {
            let (out, cache) = self.decode_cached(&z, cond)?;
            let loss: f64 = out.iter().zip(&gt).map(|(a, b)| (a - b).abs()).sum();
            if !loss.is_finite() {
                return Err(Error::Numeric("latent fit diverged".into()));
            }
            if loss < best.1 {
                best = (z.clone(), loss);
            }
            if it == iters {
                break;
            }
            let d: Vec<f64> = out.iter().zip(&gt).map(|(a, b)| if a == b { 0.0 } else { (a - b).signum() }).collect();
            let g = self.decode_z_grad(&cache, &d);
            adam.update(&mut [z.as_mut_slice()], &[g.as_slice()], &["z"])?;
        }
        Ok(best)
    }

    /// Accumulates encoder gradients; returns `dcond`.
    fn encode_backward(&mut self, cache: &EncCache, d_mu: &[f64], d_lv: &[f64]) -> Vec<f64> {
        let mut d_hidden = self.mu_head.back(&cache.hidden, d_mu, true);
        for (a, b) in d_hidden.iter_mut().zip(self.logvar_head.back(&cache.hidden, d_lv, true)) {
            *a += b;
        }
        let d_fuse = act_back(&d_hidden, &cache.fuse_pre);
        let d_in = self.enc_fuse.back(&cache.fuse_in, &d_fuse, true);
        let w = self.config.width;
        let mut d = d_in[..w].to_vec();
        for (b, c) in self.enc_blocks.iter_mut().zip(&cache.blocks).rev() {
            d = b.backward(c, &d);
        }
        let d_pre = act_back(&d, &cache.in_pre);
        self.enc_in.back(&cache.body, &d_pre, false);
        d_in[w..].to_vec()
    }

    fn condition_backward(&mut self, cache: &CondCache, d_cond: &[f64]) {
        let d_pre = act_back(d_cond, &cache.pre);
        let d_in = self.cond_fc.back(&cache.input, &d_pre, true);
        self.points.backward(&cache.points, &d_in[..POINT_FEATURE_DIM]);
    }
}

impl Module for Cvae {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.points.params();
        v.extend(self.cond_fc.params());
        v.extend(self.enc_in.params());
        self.enc_blocks.iter().for_each(|b| v.extend(b.params()));
        v.extend(self.enc_fuse.params());
        v.extend(self.mu_head.params());
        v.extend(self.logvar_head.params());
        v.extend(self.dec_in.params());
        self.dec_blocks.iter().for_each(|b| v.extend(b.params()));
        v.extend(self.dec_out.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.points.params_mut();
        v.extend(self.cond_fc.params_mut());
        v.extend(self.enc_in.params_mut());
        self.enc_blocks.iter_mut().for_each(|b| v.extend(b.params_mut()));
        v.extend(self.enc_fuse.params_mut());
        v.extend(self.mu_head.params_mut());
        v.extend(self.logvar_head.params_mut());
        v.extend(self.dec_in.params_mut());
        self.dec_blocks.iter_mut().for_each(|b| v.extend(b.params_mut()));
        v.extend(self.dec_out.params_mut());
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvaeTrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub w_kl: f64,
    /// Fraction of all steps over which the KL weight ramps up linearly.
    pub kl_warmup: f64,
    pub w_col: f64,
    pub w_cont: f64,
    pub seed: u64,
}

impl Default for CvaeTrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, batch: 16, epochs: 40, w_kl: 0.1, kl_warmup: 0.1, w_col: 0.01, w_cont: 0.01, seed: 0 }
    }
}

impl CvaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_kl, self.w_col, self.w_cont, self.kl_warmup];
        if !(self.lr > 0.0) || self.batch == 0 || weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(arg_err("CVAE training needs lr > 0, batch ≥ 1 and non-negative finite weights"));
        }
        Ok(())
    }
}

/// A training body and the scene it stands in (index into a scene list).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvaeSample {
    pub body: BodyParams,
    pub scene: usize,
}

/// Batch-mean loss components; `total` already carries the weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CvaeLosses {
    pub recon: f64,
    pub kl: f64,
    pub col: f64,
    pub cont: f64,
    pub total: f64,
}

impl CvaeLosses {
    fn add_scaled(&mut self, o: &CvaeLosses, s: f64) {
        self.recon += s * o.recon;
        self.kl += s * o.kl;
        self.col += s * o.col;
        self.cont += s * o.cont;
        self.total += s * o.total;
    }
}

/// Loss weights of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub kl: f64,
    pub col: f64,
    pub cont: f64,
}

/// Everything one sample's backward pass needs.
pub struct LossTape {
    cond: CondCache,
    enc: EncCache,
    dec: DecCache,
    mu: Vec<f64>,
    lv: Vec<f64>,
    eps: Vec<f64>,
    kl_weight: f64,
    /// `dL/d(p, h)` of the decoded body.
    d_out: Vec<f64>,
}

/// Loss of one sample under fixed noise `eps`.
pub fn sample_loss(
    cvae: &Cvae,
    sample: &CvaeSample,
    scene: &SceneField,
    template: &BodyTemplate,
    w: &LossWeights,
    eps: &[f64],
) -> Result<(CvaeLosses, LossTape)> {
    if eps.len() != LATENT_DIM {
        return Err(shape_err(format!("noise has {} values", eps.len())));
    }
    let (cond, ccache) = cvae.condition_cached(&sample.body, &scene.cloud.points)?;
    let (mu, lv, ecache) = cvae.encode_cached(&sample.body, &cond)?;
    let z = reparameterize(&mu, &lv, eps);
    let (out, dcache) = cvae.decode_cached(&z, &cond)?;
    let gt = sample.body.pose_hand();

    let mut l = CvaeLosses { recon: out.iter().zip(&gt).map(|(a, b)| (a - b).abs()).sum(), ..Default::default() };
    let mut d_out: Vec<f64> =
        out.iter().zip(&gt).map(|(a, b)| if a == b { 0.0 } else { (a - b).signum() }).collect();
    l.total = l.recon;
    if w.kl != 0.0 {
        l.kl = kl_loss(&mu, &lv);
        l.total += w.kl * l.kl;
    }
    if w.col != 0.0 || w.cont != 0.0 {
        let mut body = sample.body;
        body.set_pose_hand(&out)?;
        let (mesh, pb) = forward_with_pullback(template, &body)?;
        let (col, cont, vgrad) = scene_terms_gradient(&mesh, template, scene, w.col, w.cont)?;
        l.col = col;
        l.cont = cont;
        l.total += w.col * col + w.cont * cont;
        let g = pb.apply(&vgrad, None)?;
        for (d, gi) in d_out.iter_mut().zip(&g[P_OFFSET..H_OFFSET + HAND_DIM]) {
            *d += gi;
        }
    }
    if !l.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite CVAE loss {l:?}")));
    }
    let tape =
        LossTape { cond: ccache, enc: ecache, dec: dcache, mu, lv, eps: eps.to_vec(), kl_weight: w.kl, d_out };
    Ok((l, tape))
}

/// Accumulates `scale · dL/dθ` into the parameter gradient slots.
pub fn sample_backward(cvae: &mut Cvae, tape: &LossTape, scale: f64) {
    let d_out: Vec<f64> = tape.d_out.iter().map(|d| d * scale).collect();
    let (dz, mut d_cond) = cvae.decode_backward(&tape.dec, &d_out);
    let wk = scale * tape.kl_weight;
    let (kmu, klv) = kl_grad(&tape.mu, &tape.lv);
    let d_mu: Vec<f64> = dz.iter().zip(&kmu).map(|(g, k)| g + wk * k).collect();
    let d_lv: Vec<f64> = dz
        .iter()
        .zip(&tape.lv)
        .zip(&tape.eps)
        .zip(&klv)
        .map(|(((g, lv), e), k)| g * 0.5 * exp(0.5 * lv) * e + wk * k)
        .collect();
    let d_cond_enc = cvae.encode_backward(&tape.enc, &d_mu, &d_lv);
    for (a, b) in d_cond.iter_mut().zip(d_cond_enc) {
        *a += b;
    }
    cvae.condition_backward(&tape.cond, &d_cond);
}

/// Mini-batch training state.
#[derive(Debug, Clone)]
pub struct CvaeTrainer {
    pub config: CvaeTrainConfig,
    pub adam: Adam,
    pub step: usize,
    /// Steps over the whole run, used for the KL warm-up.
    pub total_steps: usize,
    rng: ChaCha8Rng,
}

impl CvaeTrainer {
    pub fn new(config: CvaeTrainConfig, total_steps: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            adam: Adam::new(config.lr),
            step: 0,
            total_steps,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    /// KL weight at the current step.
    pub fn kl_weight(&self) -> f64 {
        let ramp = self.config.kl_warmup * self.total_steps as f64;
        if ramp <= 0.0 {
            self.config.w_kl
        } else {
            self.config.w_kl * (self.step as f64 / ramp).min(1.0)
        }
    }

    /// One Adam step on the batch mean.
    pub fn train_step(
        &mut self,
        cvae: &mut Cvae,
        batch: &[CvaeSample],
        scenes: &[SceneField],
        template: &BodyTemplate,
    ) -> Result<CvaeLosses> {
        if batch.is_empty() {
            return Err(arg_err("empty CVAE batch"));
        }
        let w = LossWeights { kl: self.kl_weight(), col: self.config.w_col, cont: self.config.w_cont };
        let s = 1.0 / batch.len() as f64;
        cvae.zero_grad();
        let mut mean = CvaeLosses::default();
        for sample in batch {
            let scene = scenes.get(sample.scene).ok_or_else(|| arg_err(format!("sample refers to scene {}", sample.scene)))?;
            let eps = standard_normal(LATENT_DIM, &mut self.rng);
            let (l, tape) = sample_loss(cvae, sample, scene, template, &w, &eps)?;
            sample_backward(cvae, &tape, s);
            mean.add_scaled(&l, s);
        }
        let mut params = cvae.params_mut();
        self.adam.step(&mut params)?;
        self.step += 1;
        Ok(mean)
    }
}

/// Dataset-mean loss at full weights with a fixed noise stream.
pub fn evaluate_cvae(
    cvae: &Cvae,
    samples: &[CvaeSample],
    scenes: &[SceneField],
    template: &BodyTemplate,
    config: &CvaeTrainConfig,
    seed: u64,
) -> Result<CvaeLosses> {
    if samples.is_empty() {
        return Err(arg_err("no samples to evaluate"));
    }
    let w = LossWeights { kl: config.w_kl, col: config.w_col, cont: config.w_cont };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = 1.0 / samples.len() as f64;
    let mut mean = CvaeLosses::default();
    for sample in samples {
        let scene = scenes.get(sample.scene).ok_or_else(|| arg_err(format!("sample refers to scene {}", sample.scene)))?;
        let eps = standard_normal(LATENT_DIM, &mut rng);
        mean.add_scaled(&sample_loss(cvae, sample, scene, template, &w, &eps)?.0, s);
    }
    Ok(mean)
}

/// Shuffled mini-batch epochs; returns the mean training loss per epoch.
pub fn train_cvae(
    cvae: &mut Cvae,
    samples: &[CvaeSample],
    scenes: &[SceneField],
    template: &BodyTemplate,
    config: &CvaeTrainConfig,
) -> Result<Vec<CvaeLosses>> {
    use rand::seq::SliceRandom;
    if samples.is_empty() {
        return Err(arg_err("empty CVAE dataset"));
    }
    let per_epoch = samples.len().div_ceil(config.batch);
    let mut trainer = CvaeTrainer::new(*config, per_epoch * config.epochs)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut epoch = CvaeLosses::default();
        for chunk in order.chunks(config.batch) {
            let batch: Vec<CvaeSample> = chunk.iter().map(|&i| samples[i]).collect();
            let l = trainer.train_step(cvae, &batch, scenes, template)?;
            epoch.add_scaled(&l, chunk.len() as f64 / samples.len() as f64);
        }
        history.push(epoch);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::rot6d_from_yaw;
    use crate::scene::{SceneFieldOptions, SdfOptions};
    use crate::synth::{gen_scene, SyntheticSceneSpec};
    use rand::Rng;

    fn small() -> CvaeConfig {
        CvaeConfig { width: 24, cond_width: 16, point_hidden: vec![8, 12], seed: 3 }
    }

    fn scene() -> SceneField {
        let spec = SyntheticSceneSpec::random(5, [4.0, 4.0], 1);
        let opts = SceneFieldOptions {
            sdf: SdfOptions { cell: 0.1, padding: 1.0, ..spec.sdf_options() },
            cloud_points: 48,
            contact_points: 500,
            seed: 1,
        };
        SceneField::build(gen_scene(&spec).unwrap(), &opts).unwrap()
    }

    fn body(rng: &mut ChaCha8Rng) -> BodyParams {
        let mut b = BodyParams::default();
        b.t = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.85..0.95)];
        b.r = rot6d_from_yaw(rng.random_range(-3.0..3.0));
        b.beta.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        b.p.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
        b.h.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
        b
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_loss(&[0.0; 32], &[0.0; 32]), 0.0);
        assert!((kl_loss(&[1.0; 32], &[0.0; 32]) - 16.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let mu = standard_normal(32, &mut rng);
            let lv = standard_normal(32, &mut rng);
            assert!(kl_loss(&mu, &lv) > 0.0);
        }
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // E_q[log q(z) − log p(z)] estimated by sampling q.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mu: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lv: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let mut x = 0.0;
            for (m, v) in mu.iter().zip(&lv) {
                let e: f64 = StandardNormal.sample(&mut rng);
                let z = m + exp(0.5 * v) * e;
                x += -0.5 * v - 0.5 * e * e + 0.5 * z * z;
            }
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let sd = libm::sqrt((s2 / n as f64 - mean * mean) / n as f64);
        let exact = kl_loss(&mu, &lv);
        assert!((mean - exact).abs() < 3.0 * sd, "mc {mean} ± {sd} vs {exact}");
    }

    #[test]
    fn zero_weights_give_bias_mean() {
        let mut net = Cvae::new(&small()).unwrap();
        net.enc_in.set_all(0.0);
        net.enc_blocks.iter_mut().for_each(|b| b.set_all(0.0));
        net.enc_fuse.set_all(0.0);
        net.mu_head.w.value.iter_mut().for_each(|x| *x = 0.0);
        net.logvar_head.w.value.iter_mut().for_each(|x| *x = 0.0);
        let sc = scene();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..3 {
            let b = body(&mut rng);
            let cond = net.condition(&b.beta, &b.t, &b.r, &sc.cloud.points).unwrap();
            let (mu, lv) = net.encode(&b, &cond).unwrap();
            assert_eq!(mu, net.mu_head.b.value);
            assert_eq!(lv, net.logvar_head.b.value);
        }
    }

    #[test]
    fn condition_deterministic_and_permutation_invariant() {
        let net = Cvae::new(&small()).unwrap();
        let sc = scene();
        let b = body(&mut ChaCha8Rng::seed_from_u64(2));
        let a = net.condition(&b.beta, &b.t, &b.r, &sc.cloud.points).unwrap();
        assert_eq!(a, net.condition(&b.beta, &b.t, &b.r, &sc.cloud.points).unwrap());
        let mut pts = sc.cloud.points.clone();
        pts.reverse();
        assert_eq!(a, net.condition(&b.beta, &b.t, &b.r, &pts).unwrap());
        assert_eq!(a.len(), 16);
        assert!(net.condition(&b.beta, &b.t, &b.r, &[]).is_err());
    }

    #[test]
    fn sampling_passes_goal_through() {
        let net = Cvae::new(&small()).unwrap();
        let sc = scene();
        let b = body(&mut ChaCha8Rng::seed_from_u64(3));
        let s1 = net.sample_goal_body(&b.beta, &b.t, &b.r, &sc.cloud.points, 7).unwrap();
        let s2 = net.sample_goal_body(&b.beta, &b.t, &b.r, &sc.cloud.points, 7).unwrap();
        let s3 = net.sample_goal_body(&b.beta, &b.t, &b.r, &sc.cloud.points, 8).unwrap();
        assert_eq!(s1, s2);
        assert_ne!(s1.p, s3.p);
        assert_eq!((s1.t, s1.r, s1.beta), (b.t, b.r, b.beta));
        s1.validate().unwrap();
        assert!(net.sample_goal_body(&b.beta, &b.t, &[0.0; 6], &sc.cloud.points, 7).is_err());
        let cond = net.condition(&b.beta, &b.t, &b.r, &sc.cloud.points).unwrap();
        assert!(net.decode_pose(&[0.0; 31], &cond).is_err());
        assert!(net.encode(&b, &cond[..15]).is_err());
    }

    #[test]
    fn zero_kl_weight_drops_the_term() {
        let net = Cvae::new(&small()).unwrap();
        let sc = scene();
        let tpl = BodyTemplate::default();
        let s = CvaeSample { body: body(&mut ChaCha8Rng::seed_from_u64(4)), scene: 0 };
        let eps = vec![0.3; LATENT_DIM];
        let w = LossWeights { kl: 0.0, col: 0.0, cont: 0.0 };
        let (l, _) = sample_loss(&net, &s, &sc, &tpl, &w, &eps).unwrap();
        assert_eq!(l.total, l.recon);
        assert_eq!(l.kl, 0.0);
    }

    #[test]
    fn perfect_model_has_zero_loss() {
        // Decoder emits the ground truth through its output bias, μ = 0, σ = 1,
        // and the body floats clear of everything far from contacts.
        let mut net = Cvae::new(&small()).unwrap();
        let sc = scene();
        let tpl = BodyTemplate::default();
        let mut b = body(&mut ChaCha8Rng::seed_from_u64(5));
        b.t[2] = 50.0;
        net.dec_out.w.value.iter_mut().for_each(|x| *x = 0.0);
        net.dec_out.b.value = b.pose_hand();
        net.mu_head.set_all(0.0);
        net.logvar_head.set_all(0.0);
        let s = CvaeSample { body: b, scene: 0 };
        let w = LossWeights { kl: 0.1, col: 0.01, cont: 0.0 };
        let (l, _) = sample_loss(&net, &s, &sc, &tpl, &w, &[0.5; LATENT_DIM]).unwrap();
        assert_eq!(l.total, 0.0);
    }

    fn check_all_params(w: LossWeights, seed: u64) {
        let mut net = Cvae::new(&small()).unwrap();
        let sc = scene();
        let tpl = BodyTemplate::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = CvaeSample { body: body(&mut rng), scene: 0 };
        let eps = standard_normal(LATENT_DIM, &mut rng);
        let scenes = [sc];
        crate::nn::gradcheck::check_module(
            &mut net,
            &mut |m: &Cvae| sample_loss(m, &s, &scenes[0], &tpl, &w, &eps).unwrap().0.total,
            &mut |m: &mut Cvae| {
                let (_, tape) = sample_loss(m, &s, &scenes[0], &tpl, &w, &eps).unwrap();
                sample_backward(m, &tape, 1.0);
            },
            6,
            1e-3,
        );
    }

    #[test]
    fn kl_gradient_matches_differences() {
        // Only the KL term: decoder weights receive nothing, encoder weights
        // and the condition path do.
        let mut net = Cvae::new(&small()).unwrap();
        let sc = scene();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b = body(&mut rng);
        let kl_of = |m: &Cvae| {
            let cond = m.condition(&b.beta, &b.t, &b.r, &sc.cloud.points).unwrap();
            let (mu, lv) = m.encode(&b, &cond).unwrap();
            kl_loss(&mu, &lv)
        };
        let sc2 = sc.clone();
        crate::nn::gradcheck::check_module(
            &mut net,
            &mut |m: &Cvae| kl_of(m),
            &mut |m: &mut Cvae| {
                let (cond, cc) = m.condition_cached(&b, &sc2.cloud.points).unwrap();
                let (mu, lv, ec) = m.encode_cached(&b, &cond).unwrap();
                let (gm, gl) = kl_grad(&mu, &lv);
                let d = m.encode_backward(&ec, &gm, &gl);
                m.condition_backward(&cc, &d);
            },
            8,
            1e-3,
        );
    }

    #[test]
    fn full_loss_gradient_matches_differences() {
        // Recon is piecewise linear; the sample sits away from its kinks.
        check_all_params(LossWeights { kl: 0.1, col: 0.0, cont: 0.0 }, 7);
    }

    #[test]
    fn scene_loss_gradient_matches_differences() {
        check_all_params(LossWeights { kl: 0.0, col: 0.01, cont: 0.01 }, 8);
    }

    #[test]
    fn training_reduces_loss() {
        let sc = scene();
        let tpl = BodyTemplate::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<CvaeSample> = (0..24).map(|_| CvaeSample { body: body(&mut rng), scene: 0 }).collect();
        let mut net = Cvae::new(&small()).unwrap();
        let cfg = CvaeTrainConfig { epochs: 15, batch: 8, lr: 3e-3, ..Default::default() };
        let scenes = [sc];
        let before = evaluate_cvae(&net, &samples, &scenes, &tpl, &cfg, 1).unwrap();
        let hist = train_cvae(&mut net, &samples, &scenes, &tpl, &cfg).unwrap();
        let after = evaluate_cvae(&net, &samples, &scenes, &tpl, &cfg, 1).unwrap();
        assert_eq!(hist.len(), 15);
        assert!(after.total < before.total, "{before:?} -> {after:?}");
    }

    #[test]
    fn latent_gradient_and_fit() {
        let net = Cvae::new(&small()).unwrap();
        let sc = scene();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let b = body(&mut rng);
        let cond = net.condition(&b.beta, &b.t, &b.r, &sc.cloud.points).unwrap();
        let c: Vec<f64> = standard_normal(CVAE_OUT_DIM, &mut rng);
        let f = |z: &[f64]| net.decode_pose(z, &cond).unwrap().iter().zip(&c).map(|(o, c)| o * c).sum::<f64>();
        let z = standard_normal(LATENT_DIM, &mut rng);
        let (_, cache) = net.decode_cached(&z, &cond).unwrap();
        let g = net.decode_z_grad(&cache, &c);
        for i in 0..LATENT_DIM {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[i] += 1e-4;
            zm[i] -= 1e-4;
            let fd = (f(&zp) - f(&zm)) / 2e-4;
            assert!(crate::nn::gradcheck::rel_err(g[i], fd) < 1e-3 || (g[i] - fd).abs() < 1e-8);
        }
        let target = net.decode(&z, &cond, &net.goal_condition(&b.beta, &b.t, &b.r, &sc.cloud.points).unwrap()).unwrap();
        let (_, start) = net.fit_latent(&cond, &target, 0, 1e-2).unwrap();
        let (_, end) = net.fit_latent(&cond, &target, 200, 1e-2).unwrap();
        assert!(end < 0.5 * start, "{start} -> {end}");
    }
}
