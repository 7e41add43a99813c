use std::path::Path;
use std::process::{Command, Output};

use scenewalk::core::body::BodyTemplate;
use scenewalk::core::metrics::MetricReport;
use scenewalk::core::synth::{gen_motion, gen_scene, SyntheticMotionSpec, SyntheticSceneSpec};
use scenewalk::mesh_io::{write_obj, write_ply};
use scenewalk::records::save_sequence;
use scenewalk::sdf_cache;

const SMALL: &str = "[scene]\ncell = 0.1\ncloud_points = 64\ncontact_points = 500\n";

fn scenewalk(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("small.toml");
    if !cfg.exists() {
        std::fs::write(&cfg, SMALL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_scenewalk"))
        .arg("--config")
        .arg(&cfg)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A walk in a one-box room, saved as a sequence directory, plus the room as
/// OBJ and PLY.
fn fixture(dir: &Path) -> (String, String, String) {
    let spec = SyntheticSceneSpec::random(4, [5.0, 5.0], 1);
    let mesh = gen_scene(&spec).unwrap();
    let tpl = BodyTemplate::default();
    let mut seq = gen_motion(&spec, &SyntheticMotionSpec::walk(vec![[-1.5, -1.5], [1.5, -1.0]], 2), &tpl)
        .unwrap()
        .sequence;
    seq.frames.truncate(40);
    let seq_dir = dir.join("walk");
    save_sequence(&seq_dir, &seq).unwrap();
    std::fs::write(dir.join("room.obj"), write_obj(&mesh.vertices, &mesh.faces)).unwrap();
    std::fs::write(dir.join("room.ply"), write_ply(&mesh.vertices, &mesh.faces)).unwrap();
    let s = |p: &str| dir.join(p).to_string_lossy().into_owned();
    (s("walk"), s("room.obj"), s("room.ply"))
}

#[test]
fn evaluate_identical_sequences_prints_zero_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let (walk, _, _) = fixture(tmp.path());
    let out = scenewalk(tmp.path(), &["evaluate", "--pred", &walk, "--gt", &walk]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r: MetricReport = serde_json::from_slice(&out.stdout).unwrap();
    for m in [r.transl_l1_x100, r.orient_l1_x100, r.pose_l1_x100, r.mpjpe_mm, r.mpvpe_mm] {
        assert_eq!(m, Some(0.0));
    }
    assert!(r.neighbour_v2v.is_some());
    assert_eq!(r.non_collision_pct, None);
}

#[test]
fn obj_and_ply_scenes_score_alike() {
    let tmp = tempfile::tempdir().unwrap();
    let (walk, obj, ply) = fixture(tmp.path());
    let report = |scene: &str, name: &str| -> MetricReport {
        let path = tmp.path().join(name);
        let out = scenewalk(tmp.path(), &["evaluate", "--pred", &walk, "--scene", scene, "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
    };
    let (a, b) = (report(&obj, "obj.json"), report(&ply, "ply.json"));
    // PLY stores f32 coordinates, so allow a hair of difference
    approx::assert_abs_diff_eq!(a.non_collision_pct.unwrap(), b.non_collision_pct.unwrap(), epsilon = 1e-3);
    assert_eq!(a.contact_pct, b.contact_pct);
    // soles resting on the floor read a hair below zero in places
    assert!(a.non_collision_pct.unwrap() > 90.0, "{a:?}");
    assert!(tmp.path().join("obj.json.log.json").exists());
}

#[test]
fn build_sdf_writes_a_cache_next_to_the_mesh() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, obj, _) = fixture(tmp.path());
    let out = scenewalk(tmp.path(), &["build-sdf", "--mesh", &obj]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let grid = sdf_cache::load(&tmp.path().join("room.sdf")).unwrap();
    assert_eq!(grid.cell, 0.1);
    // the room sits on a solid ground, so below the floor is inside
    assert!(grid.sample([0.0, 0.0, -0.2]).0 < 0.0);
    assert!(grid.sample([0.0, 0.0, 1.5]).0 > 0.0);
}

#[test]
fn synthesize_without_weights_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, obj, _) = fixture(tmp.path());
    let p = |n: &str| tmp.path().join(n).to_string_lossy().into_owned();
    let out = scenewalk(
        tmp.path(),
        &["synthesize", "--goals", &p("goals.json"), "--scene", &obj, "--cvae", &p("cvae.bin"), "--route", &p("r.bin"), "--pose", &p("p.bin"), "--out", &p("out")],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing weights"), "{}", stderr(&out));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = scenewalk(tmp.path(), &["evaluate", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let out = scenewalk(tmp.path(), &["--set", "cvae.nonsense=3", "evaluate", "--pred", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nonsense"), "{}", stderr(&out));
    let out = scenewalk(tmp.path(), &["evaluate", "--pred", &tmp.path().join("absent").to_string_lossy()]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    let out = scenewalk(tmp.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn malformed_mesh_reports_its_line() {
    let tmp = tempfile::tempdir().unwrap();
    let (walk, _, _) = fixture(tmp.path());
    let bad = tmp.path().join("bad.obj");
    std::fs::write(&bad, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n").unwrap();
    let out = scenewalk(tmp.path(), &["evaluate", "--pred", &walk, "--scene", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains(":4"), "{}", stderr(&out));
}
