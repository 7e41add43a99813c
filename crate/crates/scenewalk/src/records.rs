//! Frame blocks, motion sequence directories, dataset directories, body
//! templates and goal specs.
//!
//! A frame block is a run of 75-value body records (`t r β p h`), each value a
//! little-endian `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scenewalk_core::body::{BodyParams, BodyTemplate, PARAM_DIM, SHAPE_DIM};
use scenewalk_core::corpus::{Corpus, CorpusConfig};
use scenewalk_core::cvae::CvaeSample;
use scenewalk_core::motion::MotionClip;
use scenewalk_core::pipeline::{Goal, GoalSpec};
use scenewalk_core::rotation::Rot6d;
use scenewalk_core::sequence::MotionSequence;
use scenewalk_core::synth::{gen_scene, SyntheticSceneSpec};

use crate::error::{Error, Result};
use crate::mesh_io::write_obj;

pub const FORMAT_VERSION: u32 = 1;
const RECORD_BYTES: usize = 8 * PARAM_DIM;

pub fn encode_frames(frames: &[BodyParams]) -> Vec<u8> {
    let mut out = Vec::with_capacity(RECORD_BYTES * frames.len());
    for f in frames {
        for v in f.to_flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_frames(bytes: &[u8], src: &str) -> Result<Vec<BodyParams>> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Binary {
            src: src.into(),
            offset: bytes.len() - bytes.len() % RECORD_BYTES,
            msg: format!("partial body record ({} bytes per record)", RECORD_BYTES),
        });
    }
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(i, rec)| {
            let flat: Vec<f64> = rec.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            BodyParams::from_flat(&flat)
                .map_err(|e| Error::Binary { src: src.into(), offset: i * RECORD_BYTES, msg: e.to_string() })
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::json(path.display().to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(Error::io(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(Error::json(path.display().to_string()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SequenceIndex {
    version: u32,
    fps: f64,
    frames: usize,
    boundaries: Vec<usize>,
    data: String,
}

/// `index.json` plus `frames.bin` inside `dir`.
pub fn save_sequence(dir: &Path, seq: &MotionSequence) -> Result<()> {
    create_dir(dir)?;
    let index = SequenceIndex {
        version: FORMAT_VERSION,
        fps: seq.fps,
        frames: seq.len(),
        boundaries: seq.boundaries.clone(),
        data: "frames.bin".into(),
    };
    let data = dir.join(&index.data);
    fs::write(&data, encode_frames(&seq.frames)).map_err(Error::io(&data))?;
    write_json(&dir.join("index.json"), &index)
}

pub fn load_sequence(dir: &Path) -> Result<MotionSequence> {
    let index: SequenceIndex = read_json(&dir.join("index.json"))?;
    if index.version != FORMAT_VERSION {
        return Err(Error::Usage(format!("{}: unsupported sequence version {}", dir.display(), index.version)));
    }
    let data = dir.join(&index.data);
    let bytes = fs::read(&data).map_err(Error::io(&data))?;
    let frames = decode_frames(&bytes, &data.display().to_string())?;
    if frames.len() != index.frames {
        return Err(Error::Usage(format!("{}: index lists {} frames, data holds {}", dir.display(), index.frames, frames.len())));
    }
    let seq = MotionSequence { frames, fps: index.fps, boundaries: index.boundaries };
    seq.validate()?;
    Ok(seq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub spec: SyntheticSceneSpec,
    /// Relative to the dataset directory.
    pub mesh: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub scene: usize,
    /// First record in `clips.bin`.
    pub offset: usize,
    pub frames: usize,
    pub displacement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub version: u32,
    pub config: CorpusConfig,
    pub scenes: Vec<SceneEntry>,
    pub clips: Vec<ClipEntry>,
    /// Scene of each record in `goals.bin`.
    pub goal_scenes: Vec<usize>,
}

pub fn scene_mesh_path(dir: &Path, scene: usize) -> PathBuf {
    dir.join("scenes").join(format!("scene_{scene:03}.obj"))
}

pub fn save_dataset(dir: &Path, corpus: &Corpus, config: &CorpusConfig) -> Result<DatasetIndex> {
    create_dir(&dir.join("scenes"))?;
    let mut scenes = Vec::with_capacity(corpus.scenes.len());
    for (i, spec) in corpus.scenes.iter().enumerate() {
        let mesh = gen_scene(spec)?;
        let path = scene_mesh_path(dir, i);
        fs::write(&path, write_obj(&mesh.vertices, &mesh.faces)).map_err(Error::io(&path))?;
        scenes.push(SceneEntry { spec: spec.clone(), mesh: format!("scenes/scene_{i:03}.obj") });
    }
    let mut clip_bytes = Vec::new();
    let mut clips = Vec::with_capacity(corpus.clips.len());
    let mut offset = 0;
    for c in &corpus.clips {
        clip_bytes.extend(encode_frames(&c.frames));
        clips.push(ClipEntry { scene: c.scene, offset, frames: c.frames.len(), displacement: c.displacement() });
        offset += c.frames.len();
    }
    let goal_frames: Vec<BodyParams> = corpus.goals.iter().map(|g| g.body).collect();
    let index = DatasetIndex {
        version: FORMAT_VERSION,
        config: config.clone(),
        scenes,
        clips,
        goal_scenes: corpus.goals.iter().map(|g| g.scene).collect(),
    };
    for (name, bytes) in [("clips.bin", clip_bytes), ("goals.bin", encode_frames(&goal_frames))] {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(Error::io(&p))?;
    }
    write_json(&dir.join("index.json"), &index)?;
    Ok(index)
}

pub fn load_dataset(dir: &Path) -> Result<(DatasetIndex, Corpus)> {
    let index: DatasetIndex = read_json(&dir.join("index.json"))?;
    if index.version != FORMAT_VERSION {
        return Err(Error::Usage(format!("{}: unsupported dataset version {}", dir.display(), index.version)));
    }
    let read_block = |name: &str| -> Result<Vec<BodyParams>> {
        let p = dir.join(name);
        let bytes = fs::read(&p).map_err(Error::io(&p))?;
        decode_frames(&bytes, &p.display().to_string())
    };
    let clip_frames = read_block("clips.bin")?;
    let goal_frames = read_block("goals.bin")?;
    let bad = |msg: String| Error::Usage(format!("{}: {msg}", dir.display()));
    let n_scenes = index.scenes.len();
    let mut clips = Vec::with_capacity(index.clips.len());
    for (i, c) in index.clips.iter().enumerate() {
        let end = c.offset.checked_add(c.frames).filter(|e| *e <= clip_frames.len());
        let end = end.ok_or_else(|| bad(format!("clip {i} runs past clips.bin")))?;
        if c.scene >= n_scenes {
            return Err(bad(format!("clip {i} names scene {}", c.scene)));
        }
        clips.push(MotionClip { frames: clip_frames[c.offset..end].to_vec(), scene: c.scene });
    }
    if goal_frames.len() != index.goal_scenes.len() || index.goal_scenes.iter().any(|s| *s >= n_scenes) {
        return Err(bad("goal records do not match the index".into()));
    }
    let goals = goal_frames.into_iter().zip(&index.goal_scenes).map(|(body, &scene)| CvaeSample { body, scene }).collect();
    let scenes = index.scenes.iter().map(|s| s.spec.clone()).collect();
    Ok((index, Corpus { scenes, clips, goals }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TemplateFile {
    version: u32,
    vertices: usize,
    faces: usize,
    joints: usize,
    template: BodyTemplate,
}

pub fn save_template(path: &Path, t: &BodyTemplate) -> Result<()> {
    let f = TemplateFile {
        version: FORMAT_VERSION,
        vertices: t.rest_vertices.len(),
        faces: t.faces.len(),
        joints: t.rest_joints.len(),
        template: t.clone(),
    };
    write_json(path, &f)
}

pub fn load_template(path: &Path) -> Result<BodyTemplate> {
    let f: TemplateFile = read_json(path)?;
    let t = f.template;
    if f.version != FORMAT_VERSION || f.vertices != t.rest_vertices.len() || f.faces != t.faces.len() || f.joints != t.rest_joints.len() {
        return Err(Error::Usage(format!("{}: header does not match the template arrays", path.display())));
    }
    t.validate()?;
    Ok(t)
}

/// One goal as a standalone record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalRecord {
    pub beta: [f64; SHAPE_DIM],
    pub t: [f64; 3],
    pub r: Rot6d,
    pub seed: u64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GoalFile {
    Spec(GoalSpec),
    Records(Vec<GoalRecord>),
}

/// Accepts either a full spec `{beta, goals: [{t, r, seed}]}` or a list of
/// `{beta, t, r, seed}` records sharing one `beta`.
pub fn load_goal_spec(path: &Path) -> Result<GoalSpec> {
    match read_json::<GoalFile>(path)? {
        GoalFile::Spec(s) => Ok(s),
        GoalFile::Records(rs) => {
            let beta = rs.first().map(|r| r.beta).unwrap_or([0.0; SHAPE_DIM]);
            if rs.iter().any(|r| r.beta != beta) {
                return Err(Error::Usage(format!("{}: goal records disagree on beta", path.display())));
            }
            Ok(GoalSpec { goals: rs.iter().map(|r| Goal { t: r.t, r: r.r, seed: r.seed }).collect(), beta })
        }
    }
}

pub fn save_goal_spec(path: &Path, spec: &GoalSpec) -> Result<()> {
    write_json(path, spec)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use scenewalk_core::body::BodyTemplate;
    use scenewalk_core::corpus::build_corpus;
    use scenewalk_core::rotation::rot6d_from_yaw;

    fn body(x: f64) -> BodyParams {
        let mut b = BodyParams::default();
        b.t = [x, 0.5, 0.9];
        b.p[3] = 0.25 * x;
        b
    }

    #[test]
    fn frames_round_trip_in_documented_order() {
        let frames = vec![body(0.0), body(1.5)];
        let bytes = encode_frames(&frames);
        assert_eq!(bytes.len(), 2 * 75 * 8);
        assert_eq!(f64::from_le_bytes(bytes[600..608].try_into().unwrap()), 1.5);
        assert_eq!(decode_frames(&bytes, "x").unwrap(), frames);
        assert!(matches!(decode_frames(&bytes[..100], "x"), Err(Error::Binary { offset: 0, .. })));
    }

    #[test]
    fn sequence_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut seq = MotionSequence::new(vec![body(0.0), body(0.1), body(0.2)]);
        seq.boundaries = vec![1];
        save_sequence(dir.path(), &seq).unwrap();
        assert_eq!(load_sequence(dir.path()).unwrap(), seq);
    }

    #[test]
    fn dataset_bytes_are_deterministic() {
        let tpl = BodyTemplate::default();
        let cfg = CorpusConfig { scenes: 2, clips_per_scene: 5, k: 15, seed: 4, ..CorpusConfig::default() };
        let corpus = build_corpus(&cfg, &tpl).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let index = save_dataset(a.path(), &corpus, &cfg).unwrap();
        save_dataset(b.path(), &build_corpus(&cfg, &tpl).unwrap(), &cfg).unwrap();
        for name in ["index.json", "clips.bin", "goals.bin", "scenes/scene_001.obj"] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
        }
        assert_eq!(index.clips.len(), corpus.clips.len());
        let (_, back) = load_dataset(a.path()).unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn template_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        let t = BodyTemplate::default();
        save_template(&p, &t).unwrap();
        assert_eq!(load_template(&p).unwrap(), t);
    }

    #[test]
    fn goal_spec_both_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GoalSpec {
            goals: vec![Goal { t: [0.0, 0.0, 0.9], r: rot6d_from_yaw(0.0), seed: 1 }, Goal { t: [1.0, 0.0, 0.9], r: rot6d_from_yaw(0.5), seed: 2 }],
            beta: [0.2; SHAPE_DIM],
        };
        let p = dir.path().join("s.json");
        save_goal_spec(&p, &spec).unwrap();
        assert_eq!(load_goal_spec(&p).unwrap(), spec);
        let recs: Vec<GoalRecord> = spec.goals.iter().map(|g| GoalRecord { beta: spec.beta, t: g.t, r: g.r, seed: g.seed }).collect();
        let q = dir.path().join("r.json");
        save_json(&q, &recs).unwrap();
        assert_eq!(load_goal_spec(&q).unwrap(), spec);
    }
}
