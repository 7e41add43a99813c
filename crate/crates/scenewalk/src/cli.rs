//! `scenewalk` subcommands.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

use scenewalk_core::body::{forward, BodyParams, BodyTemplate};
use scenewalk_core::corpus::build_corpus;
use scenewalk_core::cvae::{evaluate_cvae, train_cvae, Cvae, CvaeSample};
use scenewalk_core::energy::{refine, RefinementSchedule, Stage};
use scenewalk_core::metrics::{evaluate, MetricReport};
use scenewalk_core::motion::{evaluate_pose, evaluate_route, train_pose, train_route, PoseNet, RouteNet};
use scenewalk_core::nn::Module;
use scenewalk_core::pipeline::{cvae_interpolation_baseline, plan_long_term, Models};
use scenewalk_core::scene::{build_sdf_with, SceneField, SdfGrid};
use scenewalk_core::sequence::MotionSequence;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::mesh_io::{read_mesh, write_obj};
use crate::records::{self, load_dataset, load_goal_spec, load_sequence, save_json, save_sequence};
use crate::runlog::{self, RunTimer};
use crate::{sdf_cache, weights};

#[derive(Debug, Parser)]
#[command(name = "scenewalk", version = runlog::version(), about = "Scene-aware long-term human motion synthesis")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config value, e.g. `--set cvae.epochs=2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Body template JSON; the built-in template when absent.
    #[arg(long, global = true)]
    pub template: Option<PathBuf>,
    /// Where to write the run log instead of next to the main output.
    #[arg(long, global = true)]
    pub log: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural dataset directory.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Build SDF caches for a mesh, or for every scene of a dataset.
    BuildSdf {
        #[arg(long, conflicts_with = "data", required_unless_present = "data")]
        mesh: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Cache path for `--mesh`; defaults to the mesh path with `.sdf`.
        #[arg(long, requires = "mesh")]
        out: Option<PathBuf>,
    },
    TrainCvae {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    TrainRoute {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the pose net against a frozen, trained route net.
    TrainPose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        route: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan a sequence through a goal spec (no refinement).
    Synthesize {
        #[arg(long)]
        goals: PathBuf,
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        cvae: PathBuf,
        #[arg(long)]
        route: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the staged energy refinement over a sequence.
    Refine {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        scene: SceneArgs,
        /// JSON list of `{weights, iters, lr}`; the config schedule otherwise.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Latent-interpolation baseline through the same goals.
    BaselineInterp {
        #[arg(long)]
        goals: PathBuf,
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        cvae: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Scene mesh for the collision and contact scores.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        sdf: Option<PathBuf>,
        /// MetricReport JSON; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Append a CSV row (header written for a new file).
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value = "scenewalk")]
        method: String,
    },
    /// Write one OBJ per frame plus a frame index.
    ExportMesh {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        every: usize,
    },
}

#[derive(Debug, clap::Args)]
pub struct SceneArgs {
    /// Scene mesh (.obj or .ply).
    #[arg(long = "scene")]
    pub mesh: PathBuf,
    /// SDF cache; `<mesh>.sdf` is used when present, else the grid is built.
    #[arg(long)]
    pub sdf: Option<PathBuf>,
}

struct Ctx {
    cfg: RunConfig,
    template: BodyTemplate,
    log: Option<PathBuf>,
}

/// Parses `argv` (program name first) and runs; returns the exit code.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let template = match &cli.template {
        Some(p) => records::load_template(p)?,
        None => BodyTemplate::default(),
    };
    let ctx = Ctx { cfg, template, log: cli.log };
    match cli.command {
        Command::GenData { out } => gen_data(&ctx, &out),
        Command::BuildSdf { mesh, data, out } => build_sdf(&ctx, mesh.as_deref(), data.as_deref(), out.as_deref()),
        Command::TrainCvae { data, out } => cmd_train_cvae(&ctx, &data, &out),
        Command::TrainRoute { data, out } => cmd_train_route(&ctx, &data, &out),
        Command::TrainPose { data, route, out } => cmd_train_pose(&ctx, &data, &route, &out),
        Command::Synthesize { goals, scene, cvae, route, pose, out } => synthesize(&ctx, &goals, &scene, &cvae, &route, &pose, &out),
        Command::Refine { input, scene, schedule, out } => cmd_refine(&ctx, &input, &scene, schedule.as_deref(), &out),
        Command::BaselineInterp { goals, scene, cvae, out } => baseline(&ctx, &goals, &scene, &cvae, &out),
        Command::Evaluate { pred, gt, scene, sdf, out, csv, method } => {
            cmd_evaluate(&ctx, &pred, gt.as_deref(), scene.as_deref(), sdf.as_deref(), out.as_deref(), csv.as_deref(), &method)
        }
        Command::ExportMesh { input, out, every } => export_mesh(&ctx, &input, &out, every),
    }
}

impl Ctx {
    /// Directory outputs log to `<dir>/<command>.log.json`, file outputs to
    /// `<file>.log.json`.
    fn write_log(&self, command: &str, main_out: &Path, timer: RunTimer, outputs: Vec<String>, metrics: serde_json::Value) -> Result<()> {
        let path = match &self.log {
            Some(p) => p.clone(),
            None if main_out.is_dir() => main_out.join(format!("{command}.log.json")),
            None => {
                let mut s = main_out.as_os_str().to_owned();
                s.push(".log.json");
                PathBuf::from(s)
            }
        };
        runlog::write(&path, &timer.finish(&self.cfg, outputs, metrics))
    }

    fn scene_field(&self, mesh_path: &Path, sdf: Option<&Path>) -> Result<SceneField> {
        let mesh = read_mesh(mesh_path)?;
        let opts = self.cfg.field_options();
        let cached = sdf.map(Path::to_path_buf).or_else(|| Some(mesh_path.with_extension("sdf")).filter(|p| p.exists()));
        match cached {
            Some(p) => Ok(SceneField::with_sdf(mesh, sdf_cache::load(&p)?, &opts)?),
            None => Ok(SceneField::build(mesh, &opts)?),
        }
    }

    fn scene_arg(&self, s: &SceneArgs) -> Result<SceneField> {
        self.scene_field(&s.mesh, s.sdf.as_deref())
    }

    fn dataset_fields(&self, dir: &Path, n: usize) -> Result<Vec<SceneField>> {
        (0..n).map(|i| self.scene_field(&records::scene_mesh_path(dir, i), None)).collect()
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn create_parent(p: &Path) -> Result<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(Error::io(d)),
        _ => Ok(()),
    }
}

fn gen_data(ctx: &Ctx, out: &Path) -> Result<()> {
    let timer = RunTimer::start("gen-data");
    let cc = ctx.cfg.corpus();
    let corpus = build_corpus(&cc, &ctx.template)?;
    let index = records::save_dataset(out, &corpus, &cc)?;
    log::info!("{} scenes, {} clips, {} goal bodies", index.scenes.len(), index.clips.len(), corpus.goals.len());
    let metrics = json!({"scenes": index.scenes.len(), "clips": index.clips.len(), "goals": corpus.goals.len()});
    ctx.write_log("gen-data", out, timer, vec![display(out)], metrics)
}

fn build_sdf(ctx: &Ctx, mesh: Option<&Path>, data: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let timer = RunTimer::start("build-sdf");
    let opts = ctx.cfg.field_options();
    let jobs: Vec<(PathBuf, PathBuf)> = match (mesh, data) {
        (Some(m), _) => vec![(m.to_path_buf(), out.map_or_else(|| m.with_extension("sdf"), Path::to_path_buf))],
        (None, Some(d)) => {
            let index: records::DatasetIndex = records::read_json(&d.join("index.json"))?;
            (0..index.scenes.len())
                .map(|i| {
                    let m = records::scene_mesh_path(d, i);
                    let o = m.with_extension("sdf");
                    (m, o)
                })
                .collect()
        }
        (None, None) => return Err(Error::Usage("build-sdf needs --mesh or --data".into())),
    };
    let mut outputs = Vec::new();
    let mut nodes = 0;
    for (m, o) in &jobs {
        let grid: SdfGrid = build_sdf_with(&read_mesh(m)?, &opts.sdf)?;
        nodes += grid.values.len();
        create_parent(o)?;
        sdf_cache::save(o, &grid)?;
        outputs.push(display(o));
    }
    let main = PathBuf::from(&outputs[0]);
    let main = match data {
        Some(d) => d.to_path_buf(),
        None => main,
    };
    ctx.write_log("build-sdf", &main, timer, outputs, json!({"grids": jobs.len(), "nodes": nodes}))
}

fn cmd_train_cvae(ctx: &Ctx, data: &Path, out: &Path) -> Result<()> {
    let timer = RunTimer::start("train-cvae");
    let (_, corpus) = load_dataset(data)?;
    let fields = ctx.dataset_fields(data, corpus.scenes.len())?;
    let tc = ctx.cfg.cvae_train();
    let mut net = Cvae::new(&ctx.cfg.cvae_net())?;
    let samples: Vec<CvaeSample> = corpus.goals;
    let before = evaluate_cvae(&net, &samples, &fields, &ctx.template, &tc, tc.seed)?;
    let history = train_cvae(&mut net, &samples, &fields, &ctx.template, &tc)?;
    let after = evaluate_cvae(&net, &samples, &fields, &ctx.template, &tc, tc.seed)?;
    log::info!("cvae total {:.4} -> {:.4}", before.total, after.total);
    create_parent(out)?;
    weights::save_cvae(out, &net, serde_json::to_value(tc).map_err(Error::json("train config"))?)?;
    let metrics = json!({"samples": samples.len(), "initial": before, "final": after, "epochs": history});
    ctx.write_log("train-cvae", out, timer, vec![display(out)], metrics)
}

fn cmd_train_route(ctx: &Ctx, data: &Path, out: &Path) -> Result<()> {
    let timer = RunTimer::start("train-route");
    let (_, corpus) = load_dataset(data)?;
    let fields = ctx.dataset_fields(data, corpus.scenes.len())?;
    let mc = ctx.cfg.motion_net();
    let mut net = RouteNet::new(&mc)?;
    let phase = ctx.cfg.route_phase();
    let history = train_route(&mut net, &corpus.clips, &fields, &phase)?;
    let final_loss = evaluate_route(&net, &corpus.clips, &fields)?;
    create_parent(out)?;
    weights::save_motion(out, "route", &mc, &net.net, serde_json::to_value(phase).map_err(Error::json("phase"))?)?;
    let metrics = json!({"clips": corpus.clips.len(), "epochs": history, "final": final_loss, "checksum": format!("{:016x}", net.net.checksum())});
    ctx.write_log("train-route", out, timer, vec![display(out)], metrics)
}

fn cmd_train_pose(ctx: &Ctx, data: &Path, route_path: &Path, out: &Path) -> Result<()> {
    let timer = RunTimer::start("train-pose");
    let route = weights::load_route(route_path)?;
    let (_, corpus) = load_dataset(data)?;
    let fields = ctx.dataset_fields(data, corpus.scenes.len())?;
    let mc = ctx.cfg.motion_net();
    if mc.k != route.k {
        return Err(Error::Usage(format!("config k = {} but the route net was trained with k = {}", mc.k, route.k)));
    }
    let mut net = PoseNet::new(&mc)?;
    let phase = ctx.cfg.pose_phase();
    let history = train_pose(&mut net, &route, &corpus.clips, &fields, &phase)?;
    let final_loss = evaluate_pose(&net, &route, &corpus.clips, &fields)?;
    create_parent(out)?;
    weights::save_motion(out, "pose", &mc, &net.net, serde_json::to_value(phase).map_err(Error::json("phase"))?)?;
    let metrics = json!({"clips": corpus.clips.len(), "epochs": history, "final": final_loss});
    ctx.write_log("train-pose", out, timer, vec![display(out)], metrics)
}

/// Reports every absent weight file at once.
fn require_weights(paths: &[&Path]) -> Result<()> {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(Error::MissingWeights(p.to_path_buf())),
        None => Ok(()),
    }
}

fn synthesize(ctx: &Ctx, goals: &Path, scene: &SceneArgs, cvae: &Path, route: &Path, pose: &Path, out: &Path) -> Result<()> {
    let timer = RunTimer::start("synthesize");
    require_weights(&[cvae, route, pose])?;
    let models = Models { cvae: weights::load_cvae(cvae)?, route: weights::load_route(route)?, pose: weights::load_pose(pose)? };
    let spec = load_goal_spec(goals)?;
    let field = ctx.scene_arg(scene)?;
    let plan = plan_long_term(&spec, &field, &models, &ctx.template, None)?;
    save_sequence(out, &plan.raw)?;
    let bodies = out.join("goal_bodies.bin");
    std::fs::write(&bodies, records::encode_frames(&plan.goal_bodies)).map_err(Error::io(&bodies))?;
    let metrics = json!({"frames": plan.raw.len(), "k": models.k(), "goals": spec.goals.len(), "energy": plan.report});
    ctx.write_log("synthesize", out, timer, vec![display(out)], metrics)
}

fn cmd_refine(ctx: &Ctx, input: &Path, scene: &SceneArgs, schedule: Option<&Path>, out: &Path) -> Result<()> {
    let timer = RunTimer::start("refine");
    let seq = load_sequence(input)?;
    let field = ctx.scene_arg(scene)?;
    let schedule = match schedule {
        Some(p) => RefinementSchedule { stages: records::read_json::<Vec<Stage>>(p)? },
        None => ctx.cfg.refine.clone(),
    };
    let r = refine(&seq, &ctx.template, &field, &schedule)?;
    if let Some(why) = &r.aborted {
        log::warn!("refinement stopped early: {why}");
    }
    save_sequence(out, &r.sequence)?;
    save_json(&out.join("energy.json"), &r.report)?;
    let metrics = json!({"energy": r.report, "aborted": r.aborted});
    ctx.write_log("refine", out, timer, vec![display(out)], metrics)
}

fn baseline(ctx: &Ctx, goals: &Path, scene: &SceneArgs, cvae_path: &Path, out: &Path) -> Result<()> {
    let timer = RunTimer::start("baseline-interp");
    require_weights(&[cvae_path])?;
    let cvae = weights::load_cvae(cvae_path)?;
    let spec = load_goal_spec(goals)?;
    if spec.goals.len() < 2 {
        return Err(Error::Usage("baseline needs at least two goals".into()));
    }
    let field = ctx.scene_arg(scene)?;
    let bodies = spec
        .goals
        .iter()
        .map(|g| cvae.sample_goal_body(&spec.beta, &g.t, &g.r, &field.cloud.points, g.seed))
        .collect::<scenewalk_core::error::Result<Vec<BodyParams>>>()?;
    let steps = ctx.cfg.baseline_steps();
    let fit = ctx.cfg.latent_fit();
    let mut frames = Vec::new();
    let mut boundaries = Vec::new();
    for (i, w) in bodies.windows(2).enumerate() {
        let clip = cvae_interpolation_baseline(&cvae, &w[0], &w[1], &field, steps, &fit)?;
        if i > 0 {
            boundaries.push(frames.len() - 1);
        }
        frames.extend_from_slice(&clip.frames[usize::from(i > 0)..]);
    }
    let seq = MotionSequence { boundaries, fps: ctx.cfg.fps, frames };
    save_sequence(out, &seq)?;
    ctx.write_log("baseline-interp", out, timer, vec![display(out)], json!({"frames": seq.len(), "steps": steps}))
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    ctx: &Ctx,
    pred: &Path,
    gt: Option<&Path>,
    scene: Option<&Path>,
    sdf: Option<&Path>,
    out: Option<&Path>,
    csv: Option<&Path>,
    method: &str,
) -> Result<()> {
    let timer = RunTimer::start("evaluate");
    let p = load_sequence(pred)?;
    let g = gt.map(load_sequence).transpose()?;
    let grid = match (scene, sdf) {
        (_, Some(s)) => Some(sdf_cache::load(s)?),
        (Some(m), None) => Some(ctx.scene_field(m, None)?.sdf),
        (None, None) => None,
    };
    let report: MetricReport = evaluate(&p, g.as_ref(), grid.as_ref(), &ctx.template)?;
    let mut outputs = Vec::new();
    match out {
        Some(o) => {
            create_parent(o)?;
            save_json(o, &report)?;
            outputs.push(display(o));
        }
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(Error::json("report"))?),
    }
    if let Some(c) = csv {
        use std::io::Write;
        let fresh = !c.exists();
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(c).map_err(Error::io(c))?;
        if fresh {
            writeln!(f, "{}", MetricReport::CSV_HEADER).map_err(Error::io(c))?;
        }
        writeln!(f, "{}", report.csv_row(method)).map_err(Error::io(c))?;
        outputs.push(display(c));
    }
    let metrics = serde_json::to_value(report).map_err(Error::json("report"))?;
    let anchor = out.or(csv).unwrap_or(pred);
    ctx.write_log("evaluate", anchor, timer, outputs, metrics)
}

fn export_mesh(ctx: &Ctx, input: &Path, out: &Path, every: usize) -> Result<()> {
    let timer = RunTimer::start("export-mesh");
    if every == 0 {
        return Err(Error::Usage("--every must be at least 1".into()));
    }
    let seq = load_sequence(input)?;
    std::fs::create_dir_all(out).map_err(Error::io(out))?;
    let mut entries = Vec::new();
    for (i, f) in seq.frames.iter().enumerate().step_by(every) {
        let mesh = forward(&ctx.template, f)?;
        let name = format!("frame_{i:05}.obj");
        let path = out.join(&name);
        std::fs::write(&path, write_obj(&mesh.vertices, &ctx.template.faces)).map_err(Error::io(&path))?;
        entries.push(json!({"frame": i, "time_s": i as f64 / seq.fps, "file": name}));
    }
    let index = json!({"version": records::FORMAT_VERSION, "fps": seq.fps, "frames": entries});
    save_json(&out.join("frames.json"), &index)?;
    ctx.write_log("export-mesh", out, timer, vec![display(out)], json!({"meshes": entries.len()}))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["scenewalk", "fly"]), 1);
        assert_eq!(run(["scenewalk", "evaluate", "--bogus"]), 1);
        assert_eq!(run(["scenewalk", "--help"]), 0);
    }
}
