//! Run configuration: built-in defaults, overlaid by a TOML file, overlaid by
//! `key.path=value` flags.
//!
//! ```toml
//! k = 61
//! fps = 30.0
//!
//! [data]
//! scenes = 8
//! clips_per_scene = 125
//!
//! [cvae]
//! epochs = 40
//!
//! [[refine.stages]]
//! iters = 200
//! lr = 0.01
//! weights = { foot = 0.0, col = 1.0, cont = 1.0, smooth = 0.25 }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scenewalk_core::corpus::CorpusConfig;
use scenewalk_core::cvae::{CvaeConfig, CvaeTrainConfig};
use scenewalk_core::energy::RefinementSchedule;
use scenewalk_core::motion::{MotionNetConfig, PhaseConfig, DEFAULT_K};
use scenewalk_core::pipeline::LatentFit;
use scenewalk_core::scene::{SceneFieldOptions, SdfOptions};
use scenewalk_core::sequence::DEFAULT_FPS;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub scenes: usize,
    pub clips_per_scene: usize,
    pub clip_stride: usize,
    pub goal_stride: usize,
    pub floor: [f64; 2],
    pub boxes: usize,
    pub sit_every: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let c = CorpusConfig::default();
        Self {
            scenes: c.scenes,
            clips_per_scene: c.clips_per_scene,
            clip_stride: c.clip_stride,
            goal_stride: c.goal_stride,
            floor: c.floor,
            boxes: c.boxes,
            sit_every: c.sit_every,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub cell: f64,
    pub padding: f64,
    /// Treat everything below `ground_height` as solid.
    pub ground_plane: bool,
    pub ground_height: f64,
    pub cloud_points: usize,
    pub contact_points: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let o = SceneFieldOptions::default();
        Self {
            cell: o.sdf.cell,
            padding: o.sdf.padding,
            ground_plane: true,
            ground_height: 0.0,
            cloud_points: o.cloud_points,
            contact_points: o.contact_points,
            seed: o.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvaeSection {
    pub width: usize,
    pub cond_width: usize,
    pub point_hidden: Vec<usize>,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub w_kl: f64,
    pub kl_warmup: f64,
    pub w_col: f64,
    pub w_cont: f64,
    pub seed: u64,
}

impl Default for CvaeSection {
    fn default() -> Self {
        let (n, t) = (CvaeConfig::default(), CvaeTrainConfig::default());
        Self {
            width: n.width,
            cond_width: n.cond_width,
            point_hidden: n.point_hidden,
            lr: t.lr,
            batch: t.batch,
            epochs: t.epochs,
            w_kl: t.w_kl,
            kl_warmup: t.kl_warmup,
            w_col: t.w_col,
            w_cont: t.w_cont,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSection {
    pub lstm_hidden: usize,
    pub fc_width: usize,
    pub point_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for MotionSection {
    fn default() -> Self {
        let m = MotionNetConfig::default();
        Self { lstm_hidden: m.lstm_hidden, fc_width: m.fc_width, point_hidden: m.point_hidden, seed: m.seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl From<PhaseConfig> for PhaseSection {
    fn from(p: PhaseConfig) -> Self {
        Self { lr: p.lr, batch: p.batch, epochs: p.epochs, seed: p.seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    /// Frames per interpolated clip; `0` means `k + 1`.
    pub steps: usize,
    pub fit_iters: usize,
    pub fit_lr: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let f = LatentFit::default();
        Self { steps: 0, fit_iters: f.iters, fit_lr: f.lr }
    }
}

fn route_default() -> PhaseSection {
    PhaseConfig::ROUTE.into()
}

fn pose_default() -> PhaseSection {
    PhaseConfig::POSE.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub k: usize,
    pub fps: f64,
    pub data: DataConfig,
    pub scene: SceneConfig,
    pub cvae: CvaeSection,
    pub motion: MotionSection,
    #[serde(default = "route_default")]
    pub route: PhaseSection,
    #[serde(default = "pose_default")]
    pub pose: PhaseSection,
    pub refine: RefinementSchedule,
    pub baseline: BaselineSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            fps: DEFAULT_FPS,
            data: DataConfig::default(),
            scene: SceneConfig::default(),
            cvae: CvaeSection::default(),
            motion: MotionSection::default(),
            route: route_default(),
            pose: pose_default(),
            refine: RefinementSchedule::default(),
            baseline: BaselineSection::default(),
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value, path: &str) -> Result<()> {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &sub)?,
                    None => return Err(Error::Config(format!("unknown key {sub}"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn parse_literal(value: &str) -> toml::Value {
    format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Integers written where a float is expected stay valid.
fn coerce(slot: &toml::Value, v: toml::Value) -> toml::Value {
    match (slot, v) {
        (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (_, v) => v,
    }
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut cur = root;
    for part in key.split('.') {
        cur = cur
            .as_table_mut()
            .and_then(|t| t.get_mut(part))
            .ok_or_else(|| Error::Config(format!("unknown key {key}")))?;
    }
    *cur = coerce(cur, value);
    Ok(())
}

fn coerce_tree(base: &toml::Value, over: toml::Value) -> toml::Value {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => toml::Value::Table(
            o.into_iter()
                .map(|(k, v)| {
                    let v = match b.get(&k) {
                        Some(bv) => coerce_tree(bv, v),
                        None => v,
                    };
                    (k, v)
                })
                .collect(),
        ),
        (b, v) => coerce(b, v),
    }
}

impl RunConfig {
    /// Defaults, then the file's text, then `key=value` overrides in order.
    pub fn resolve(file: Option<(&str, &str)>, overrides: &[String]) -> Result<Self> {
        let mut tree = toml::Value::try_from(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        if let Some((src, text)) = file {
            let parsed: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(format!("{src}: {e}")))?;
            let parsed = coerce_tree(&tree, toml::Value::Table(parsed));
            // Whole-array replacement for lists of tables such as refine.stages.
            merge(&mut tree, parsed, "")?;
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            set_path(&mut tree, k.trim(), parse_literal(v.trim()))?;
        }
        let cfg: RunConfig = tree.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(Error::io(p))?;
                Self::resolve(Some((&p.display().to_string(), &text)), overrides)
            }
            None => Self::resolve(None, overrides),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || !(self.fps > 0.0) {
            return Err(Error::Config(format!("k must be ≥ 2 and fps positive (k = {}, fps = {})", self.k, self.fps)));
        }
        self.corpus().validate()?;
        CvaeConfig::validate(&self.cvae_net())?;
        self.cvae_train().validate()?;
        self.motion_net().validate()?;
        self.route_phase().validate()?;
        self.pose_phase().validate()?;
        self.refine.validate()?;
        if !(self.scene.cell > 0.0) || self.scene.cloud_points == 0 {
            return Err(Error::Config("scene.cell must be positive and scene.cloud_points ≥ 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn corpus(&self) -> CorpusConfig {
        let d = &self.data;
        CorpusConfig {
            scenes: d.scenes,
            clips_per_scene: d.clips_per_scene,
            k: self.k,
            clip_stride: d.clip_stride,
            goal_stride: d.goal_stride,
            floor: d.floor,
            boxes: d.boxes,
            sit_every: d.sit_every,
            seed: d.seed,
        }
    }

    pub fn field_options(&self) -> SceneFieldOptions {
        let s = &self.scene;
        SceneFieldOptions {
            sdf: SdfOptions {
                cell: s.cell,
                padding: s.padding,
                ground: s.ground_plane.then_some(s.ground_height),
                ..SdfOptions::default()
            },
            cloud_points: s.cloud_points,
            contact_points: s.contact_points,
            seed: s.seed,
        }
    }

    pub fn cvae_net(&self) -> CvaeConfig {
        let c = &self.cvae;
        CvaeConfig { width: c.width, cond_width: c.cond_width, point_hidden: c.point_hidden.clone(), seed: c.seed }
    }

    pub fn cvae_train(&self) -> CvaeTrainConfig {
        let c = &self.cvae;
        CvaeTrainConfig {
            lr: c.lr,
            batch: c.batch,
            epochs: c.epochs,
            w_kl: c.w_kl,
            kl_warmup: c.kl_warmup,
            w_col: c.w_col,
            w_cont: c.w_cont,
            seed: c.seed,
        }
    }

    pub fn motion_net(&self) -> MotionNetConfig {
        let m = &self.motion;
        MotionNetConfig { k: self.k, lstm_hidden: m.lstm_hidden, fc_width: m.fc_width, point_hidden: m.point_hidden.clone(), seed: m.seed }
    }

    fn phase(p: &PhaseSection) -> PhaseConfig {
        PhaseConfig { lr: p.lr, batch: p.batch, epochs: p.epochs, seed: p.seed }
    }

    pub fn route_phase(&self) -> PhaseConfig {
        Self::phase(&self.route)
    }

    pub fn pose_phase(&self) -> PhaseConfig {
        Self::phase(&self.pose)
    }

    pub fn latent_fit(&self) -> LatentFit {
        LatentFit { iters: self.baseline.fit_iters, lr: self.baseline.fit_lr }
    }

    pub fn baseline_steps(&self) -> usize {
        if self.baseline.steps == 0 {
            self.k + 1
        } else {
            self.baseline.steps
        }
    }
}
