//! Versioned weight container: a JSON manifest followed by the parameter
//! tensors as little-endian `f64`, in manifest order.
//!
//! ```text
//! magic  b"SWNN"
//! u32    version
//! u64    manifest length
//! ...    manifest (UTF-8 JSON)
//! f64×n  values
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use scenewalk_core::cvae::{Cvae, CvaeConfig};
use scenewalk_core::motion::{MotionNetConfig, PoseNet, RouteNet};
use scenewalk_core::nn::Module;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SWNN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// `cvae`, `route` or `pose`.
    pub kind: String,
    pub seed: u64,
    /// Architecture config needed to rebuild the network.
    pub config: serde_json::Value,
    /// Training settings, informational.
    #[serde(default)]
    pub training: serde_json::Value,
    pub layers: Vec<LayerEntry>,
}

pub fn encode(manifest: &Manifest, module: &dyn Module) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(manifest).map_err(Error::json("manifest"))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in module.params() {
        for v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], src: &str) -> Result<(Manifest, Vec<Vec<f64>>)> {
    let err = |offset: usize, msg: String| Error::Binary { src: src.to_string(), offset, msg };
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(err(0, "not a weight container".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(err(4, format!("unsupported version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = usize::try_from(mlen).ok().and_then(|m| 16usize.checked_add(m)).filter(|e| *e <= bytes.len());
    let body = body.ok_or_else(|| err(8, format!("manifest length {mlen} exceeds the file")))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..body]).map_err(Error::json(format!("{src} manifest")))?;
    let mut at = body;
    let mut tensors = Vec::with_capacity(manifest.layers.len());
    for l in &manifest.layers {
        let n: usize = l.shape.iter().product();
        let end = at.checked_add(8 * n).filter(|e| *e <= bytes.len()).ok_or_else(|| err(at, format!("data for {} is truncated", l.name)))?;
        tensors.push(bytes[at..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect());
        at = end;
    }
    if at != bytes.len() {
        return Err(err(at, format!("{} trailing bytes", bytes.len() - at)));
    }
    Ok((manifest, tensors))
}

pub fn manifest_for(kind: &str, seed: u64, config: serde_json::Value, training: serde_json::Value, module: &dyn Module) -> Manifest {
    let layers = module.params().iter().map(|p| LayerEntry { name: p.name.clone(), shape: p.shape.clone() }).collect();
    Manifest { kind: kind.into(), seed, config, training, layers }
}

pub fn save(path: &Path, manifest: &Manifest, module: &dyn Module) -> Result<()> {
    std::fs::write(path, encode(manifest, module)?).map_err(Error::io(path))
}

fn read(path: &Path, kind: &str) -> Result<(Manifest, Vec<Vec<f64>>)> {
    if !path.exists() {
        return Err(Error::MissingWeights(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    let src = path.display().to_string();
    let (m, t) = decode(&bytes, &src)?;
    if m.kind != kind {
        return Err(Error::Usage(format!("{src} holds {} weights, expected {kind}", m.kind)));
    }
    Ok((m, t))
}

/// Checks names and shapes against a freshly built network, then loads.
fn fill(module: &mut dyn Module, manifest: &Manifest, tensors: &[Vec<f64>], src: &Path) -> Result<()> {
    let fresh: Vec<LayerEntry> = module.params().iter().map(|p| LayerEntry { name: p.name.clone(), shape: p.shape.clone() }).collect();
    if fresh != manifest.layers {
        return Err(Error::Usage(format!("{}: layer layout does not match its config", src.display())));
    }
    module.load_from(tensors)?;
    Ok(())
}

fn config<T: serde::de::DeserializeOwned>(m: &Manifest, path: &Path) -> Result<T> {
    serde_json::from_value(m.config.clone()).map_err(Error::json(format!("{} config", path.display())))
}

pub fn load_cvae(path: &Path) -> Result<Cvae> {
    let (m, t) = read(path, "cvae")?;
    let mut net = Cvae::new(&config::<CvaeConfig>(&m, path)?)?;
    fill(&mut net, &m, &t, path)?;
    Ok(net)
}

pub fn load_route(path: &Path) -> Result<RouteNet> {
    let (m, t) = read(path, "route")?;
    let mut net = RouteNet::new(&config::<MotionNetConfig>(&m, path)?)?;
    fill(&mut net.net, &m, &t, path)?;
    Ok(net)
}

pub fn load_pose(path: &Path) -> Result<PoseNet> {
    let (m, t) = read(path, "pose")?;
    let mut net = PoseNet::new(&config::<MotionNetConfig>(&m, path)?)?;
    fill(&mut net.net, &m, &t, path)?;
    Ok(net)
}

pub fn save_cvae(path: &Path, net: &Cvae, training: serde_json::Value) -> Result<()> {
    let cfg = serde_json::to_value(&net.config).map_err(Error::json("cvae config"))?;
    save(path, &manifest_for("cvae", net.config.seed, cfg, training, net), net)
}

pub fn save_motion(path: &Path, kind: &str, cfg: &MotionNetConfig, net: &dyn Module, training: serde_json::Value) -> Result<()> {
    let v = serde_json::to_value(cfg).map_err(Error::json("motion config"))?;
    save(path, &manifest_for(kind, cfg.seed, v, training, net), net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn small_cvae() -> Cvae {
        Cvae::new(&CvaeConfig { width: 8, cond_width: 6, point_hidden: vec![4, 6], seed: 3 }).unwrap()
    }

    #[test]
    fn cvae_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.swnn");
        let net = small_cvae();
        save_cvae(&path, &net, json!({"epochs": 1})).unwrap();
        let back = load_cvae(&path).unwrap();
        assert_eq!(back.checksum(), net.checksum());
    }

    #[test]
    fn motion_round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = MotionNetConfig { k: 15, lstm_hidden: 4, fc_width: 6, point_hidden: vec![4, 6], seed: 9 };
        let route = RouteNet::new(&cfg).unwrap();
        let path = dir.path().join("r.swnn");
        save_motion(&path, "route", &cfg, &route.net, json!(null)).unwrap();
        assert_eq!(load_route(&path).unwrap(), route);
        assert!(matches!(load_pose(&path), Err(Error::Usage(_))));
        assert!(matches!(load_route(&dir.path().join("none.swnn")), Err(Error::MissingWeights(_))));
    }

    #[test]
    fn truncation_detected() {
        let net = small_cvae();
        let m = manifest_for("cvae", 3, serde_json::to_value(&net.config).unwrap(), json!(null), &net);
        let bytes = encode(&m, &net).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 8], "x"), Err(Error::Binary { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra, "x"), Err(Error::Binary { .. })));
        let (back, tensors) = decode(&bytes, "x").unwrap();
        assert_eq!(back, m);
        assert_eq!(tensors.len(), m.layers.len());
    }
}
