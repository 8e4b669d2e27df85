//! Command line entry points.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use motionbank_core::checkpoint;
use motionbank_core::data::{make_shapes, ClipDataset};
use motionbank_core::experiment::{
    build_extractor, load_dataset, top_directions, train_loop, FidProbe, GenerateRequest, LoopHooks, ALPHA_BASE_SEED,
};
use motionbank_core::interpret::table::{render_deactivation, render_region};
use motionbank_core::interpret::{
    alpha_stats, deactivation_study, interpolate_appearance, region_motion, ColorwheelConfig, RegionMask, StudyConfig,
};
use motionbank_core::latent::load_trajectories;
use motionbank_core::training::MetricsLog;
use motionbank_core::{ExperimentConfig, Generator, NoiseBundle, Trainer, VideoTensor};
use serde::Deserialize;

use crate::media::{encode_gif, read_png_frames, write_png_frames};
use crate::service::{quantize_video, resolve_bind, serve, Model};

#[derive(Debug, Parser)]
#[command(name = "motionbank", version, about = "Train, probe and serve motion-dictionary video generators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a config, resuming from `<out>/model.ckpt` when present.
    Train(TrainArgs),
    /// Render one video from seeds, optionally with direction controls.
    Generate(GenerateArgs),
    /// Mean and variance of the predicted magnitudes per direction.
    AlphaStats(AlphaArgs),
    /// Optical flow and per-bin motion strength of one video.
    FlowEval(FlowArgs),
    /// Change in per-bin motion when single directions are switched off.
    DeactivationStudy(StudyArgs),
    /// Change in total motion inside pixel regions.
    RegionStudy(RegionArgs),
    /// Videos along a line between two appearance seeds.
    Interpolate(InterpolateArgs),
    /// Fréchet distance between generated and real clips.
    Fid(FidArgs),
    /// HTTP API over a checkpoint.
    Serve(ServeArgs),
    /// Write the synthetic moving-shapes dataset.
    MakeShapes(ShapesArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML experiment config.
    #[arg(long, conflicts_with = "profile")]
    pub config: Option<PathBuf>,
    /// Built-in profile: paper, desk or cpu.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut c = match (&self.config, &self.profile) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(name)) => ExperimentConfig::profile(name)?,
            (None, None) => ExperimentConfig::cpu(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Run directory: model.ckpt, metrics.jsonl, config.toml.
    #[arg(long)]
    pub out: PathBuf,
    /// Steps to run in this invocation; defaults to reaching `train.total_steps`.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Record a Fréchet snapshot every N steps (0 = never).
    #[arg(long, default_value_t = 0)]
    pub fid_every: u64,
    /// Ignore an existing checkpoint in `--out`.
    #[arg(long)]
    pub fresh: bool,
}

#[derive(Debug, Args)]
pub struct ModelArg {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VideoFormat {
    Png,
    Gif,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Appearance seed.
    #[arg(long)]
    pub seed: u64,
    /// Motion seed; the appearance seed when absent.
    #[arg(long)]
    pub motion_seed: Option<u64>,
    #[arg(long = "len")]
    pub length: usize,
    /// Directions left active (comma-separated); all when absent.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// Deactivate every direction.
    #[arg(long, conflicts_with = "dims")]
    pub static_video: bool,
    /// TOML or JSON trajectory file.
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "png")]
    pub format: VideoFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AlphaArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long = "n")]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = ALPHA_BASE_SEED)]
    pub base_seed: u64,
    /// Video length; the training length when absent.
    #[arg(long = "len")]
    pub length: Option<usize>,
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    /// Directory of PNG frames; otherwise a video is rendered from `--model`.
    #[arg(long, conflicts_with = "model")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "len")]
    pub length: Option<usize>,
    #[arg(long)]
    pub h_norm: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Output directory: pair_%04d.flo and quantization.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Directions to study; the top `--top` by variance when absent.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long, default_value_t = 2)]
    pub top: usize,
    #[arg(long = "n", default_value_t = 100)]
    pub videos: usize,
    #[arg(long, default_value_t = 5)]
    pub base_seed: u64,
    #[arg(long = "len")]
    pub length: Option<usize>,
    #[arg(long)]
    pub h_norm: Option<f64>,
    /// Writes `<out>.json` and `<out>.txt`... or the given file names when
    /// `out` ends in `.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegionArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    /// JSON list of `{"name": .., "rect": [x0, x1, y0, y1]}`; a rect may be
    /// omitted for the full frame.
    #[arg(long)]
    pub masks: PathBuf,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long)]
    pub from_seed: u64,
    #[arg(long)]
    pub to_seed: u64,
    /// Motion and synthesis noise come from this seed.
    #[arg(long, default_value_t = 0)]
    pub motion_seed: u64,
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    #[arg(long = "len")]
    pub length: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FidArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long = "n")]
    pub samples: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Address to bind; overrides the environment and the config.
    #[arg(long)]
    pub bind: Option<String>,
}

#[derive(Debug, Args)]
pub struct ShapesArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub count: Option<usize>,
    /// Single packed file instead of a PNG tree.
    #[arg(long)]
    pub packed: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` and runs the command; errors print with their context
/// chain and exit with status 1, usage errors with clap's status.
pub fn run<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() && !e.to_string().contains("Usage:") {
                eprintln!("\n{}", usage_for(argv.get(1)));
            }
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn usage_for(sub: Option<&OsString>) -> clap::builder::StyledStr {
    let mut root = Cli::command();
    root.build();
    let name = sub.and_then(|s| s.to_str()).unwrap_or_default();
    match root.find_subcommand_mut(name) {
        Some(c) => c.render_usage(),
        None => root.render_usage(),
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => train(a),
        Command::Generate(a) => generate(a),
        Command::AlphaStats(a) => alpha(a),
        Command::FlowEval(a) => flow_eval(a),
        Command::DeactivationStudy(a) => deactivation(a),
        Command::RegionStudy(a) => region(a),
        Command::Interpolate(a) => interpolate(a),
        Command::Fid(a) => fid(a),
        Command::Serve(a) => serve_cmd(a),
        Command::MakeShapes(a) => shapes(a),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_model(arg: &ModelArg) -> Result<(ExperimentConfig, Generator<f32>)> {
    checkpoint::load_generator(&arg.model).with_context(|| format!("loading model {}", arg.model.display()))
}

fn train(a: TrainArgs) -> Result<()> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let ckpt = a.out.join("model.ckpt");
    let mut trainer = if ckpt.exists() && !a.fresh {
        let t = checkpoint::load::<f32>(&ckpt).context("resuming")?;
        log::info!("resuming {} at step {}", ckpt.display(), t.step());
        t
    } else {
        Trainer::<f32>::new(a.cfg.load()?)?
    };
    let config = trainer.config.clone();
    fs::write(a.out.join("config.toml"), config.to_toml()).context("writing config.toml")?;
    let data = load_dataset(&config).context("loading training data")?;
    let until = match a.steps {
        Some(s) => trainer.step() + s,
        None => config.train.total_steps.max(trainer.step()),
    };
    let probe = if a.fid_every > 0 {
        let ext = build_extractor(&config, &data)?;
        Some(FidProbe::new(ext, &data, config.eval.fid_samples, config.seed)?)
    } else {
        None
    };
    let mut metrics = MetricsLog::append(&a.out.join("metrics.jsonl"))?;
    let mut print = |r: &motionbank_core::StepReport| {
        let fid = r.fid_snapshot.map(|f| format!(" fid {f:.3}")).unwrap_or_default();
        eprintln!("step {} g {:.4} d {:.4} r1 {:.4}{fid}", r.step, r.loss_g, r.loss_d(config.train.lambda_tpd), r.r1_value);
    };
    train_loop(
        &mut trainer,
        &data,
        until,
        LoopHooks {
            metrics: Some(&mut metrics),
            fid: probe.as_ref().map(|p| (p, a.fid_every)),
            checkpoint: Some(&ckpt),
            on_report: Some(&mut print),
        },
    )?;
    if trainer.step() == until {
        checkpoint::save(&trainer, &ckpt)?;
    }
    println!("{}", serde_json::json!({ "step": trainer.step(), "checkpoint": ckpt }));
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let (_, g) = load_model(&a.model)?;
    let trajectories = match &a.trajectories {
        Some(p) => Some(load_trajectories(p)?),
        None => None,
    };
    let req = GenerateRequest {
        appearance_seed: a.seed,
        motion_seed: a.motion_seed.unwrap_or(a.seed),
        length: a.length,
        active_dims: if a.static_video { Some(vec![]) } else { a.dims.clone() },
        trajectories,
    };
    let out = req.run(&g)?;
    save_video(&out.video, &a.out, a.format)?;
    write_json(&a.out.join("alphas.json"), &out.alphas.to_rows())?;
    write_json(&a.out.join("request.json"), &req)?;
    println!("{}", serde_json::json!({ "frames": out.video.frames, "out": a.out }));
    Ok(())
}

fn save_video(video: &VideoTensor, dir: &Path, format: VideoFormat) -> Result<()> {
    match format {
        VideoFormat::Png => write_png_frames(video, dir),
        VideoFormat::Gif => {
            fs::create_dir_all(dir)?;
            let p = dir.join("video.gif");
            fs::write(&p, encode_gif(video, 80)).with_context(|| format!("writing {}", p.display()))
        }
    }
}

fn alpha(a: AlphaArgs) -> Result<()> {
    let (cfg, g) = load_model(&a.model)?;
    let n = a.samples.unwrap_or(cfg.eval.num_samples);
    let len = a.length.unwrap_or(g.config().video_length);
    let stats = alpha_stats(&g, n, a.base_seed, len)?;
    let top = top_directions(&stats, a.top.unwrap_or(cfg.eval.top_k).min(g.config().n));
    let report = serde_json::json!({
        "samples": stats.samples,
        "base_seed": a.base_seed,
        "length": len,
        "top_directions": top,
        "top_by_mean": stats.top_by_mean(a.top.unwrap_or(cfg.eval.top_k)),
        "stats": stats,
    });
    match &a.out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report["top_directions"])?),
    }
    Ok(())
}

fn flow_eval(a: FlowArgs) -> Result<()> {
    let (cfg, video) = match (&a.input, &a.model) {
        (Some(dir), None) => (ExperimentConfig::cpu(), read_png_frames(dir)?),
        (None, Some(m)) => {
            let (cfg, g) = load_model(&ModelArg { model: m.clone() })?;
            let len = a.length.unwrap_or(g.config().video_length);
            let v = GenerateRequest::new(a.seed, a.seed, len).run(&g)?.video;
            (cfg, v)
        }
        _ => bail!("give one of --input or --model"),
    };
    let q = quantize_video(&cfg, &video, a.h_norm, a.epsilon).map_err(|e| anyhow::anyhow!("{e:?}"))?;
    let flow = motionbank_core::interpret::estimate_flow(&video, &motionbank_core::interpret::BlockMatching::default())?;
    fs::create_dir_all(&a.out)?;
    for p in 0..flow.pairs {
        flow.write_flo(p, &a.out.join(format!("pair_{p:04}.flo")))?;
    }
    write_json(&a.out.join("quantization.json"), &q)?;
    println!("{}", serde_json::to_string(&q)?);
    Ok(())
}

fn study_setup(a: &StudyArgs) -> Result<(ExperimentConfig, Generator<f32>, Vec<usize>, StudyConfig)> {
    let (cfg, g) = load_model(&a.model)?;
    let len = a.length.unwrap_or(g.config().video_length);
    let dims = match &a.dims {
        Some(d) => d.clone(),
        None => {
            let stats = alpha_stats(&g, cfg.eval.num_samples, ALPHA_BASE_SEED, g.config().video_length)?;
            stats.top_by_variance(a.top)
        }
    };
    let study = StudyConfig {
        num_videos: a.videos,
        base_seed: a.base_seed,
        length: len,
        colorwheel: ColorwheelConfig {
            epsilon: cfg.eval.epsilon,
            ..ColorwheelConfig::default()
        },
        h_norm: a.h_norm.or(cfg.eval.h_norm),
    };
    Ok((cfg, g, dims, study))
}

/// `x.json` → (`x.json`, `x.txt`); anything else gets both extensions.
fn table_paths(out: &Path) -> (PathBuf, PathBuf) {
    if out.extension().is_some_and(|e| e == "json") {
        (out.to_path_buf(), out.with_extension("txt"))
    } else {
        (out.with_extension("json"), out.with_extension("txt"))
    }
}

fn deactivation(a: StudyArgs) -> Result<()> {
    let (_, g, dims, study) = study_setup(&a)?;
    let table = deactivation_study(&g, &dims, &study, &motionbank_core::interpret::BlockMatching::default())?;
    let (json, txt) = table_paths(&a.out);
    write_json(&json, &table)?;
    let text = render_deactivation(&table);
    fs::write(&txt, &text).with_context(|| format!("writing {}", txt.display()))?;
    print!("{text}");
    Ok(())
}

#[derive(Debug, Deserialize)]
struct MaskSpec {
    name: String,
    #[serde(default)]
    rect: Option<[usize; 4]>,
}

fn region(a: RegionArgs) -> Result<()> {
    let (_, g, dims, study) = study_setup(&a.study)?;
    let text = fs::read_to_string(&a.masks).with_context(|| format!("reading {}", a.masks.display()))?;
    let specs: Vec<MaskSpec> = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.masks.display()))?;
    let r = g.config().resolution;
    let masks: Vec<RegionMask> = specs
        .iter()
        .map(|s| match s.rect {
            Some([x0, x1, y0, y1]) => RegionMask::rect(&s.name, r, r, (x0, x1), (y0, y1)),
            None => RegionMask::full(&s.name, r, r),
        })
        .collect();
    let table = region_motion(&g, &dims, &masks, &study, &motionbank_core::interpret::BlockMatching::default())?;
    let (json, txt) = table_paths(&a.study.out);
    write_json(&json, &table)?;
    let text = render_region(&table);
    fs::write(&txt, &text).with_context(|| format!("writing {}", txt.display()))?;
    print!("{text}");
    Ok(())
}

fn interpolate(a: InterpolateArgs) -> Result<()> {
    let (_, g) = load_model(&a.model)?;
    let len = a.length.unwrap_or(g.config().video_length);
    let base = NoiseBundle::from_seeds(g.config(), a.from_seed, a.motion_seed, len)?;
    let end = NoiseBundle::from_seeds(g.config(), a.to_seed, a.motion_seed, len)?;
    // synthesis noise follows the start seed throughout
    let videos = interpolate_appearance(&g, &base.z_a, &end.z_a, a.steps, &base)?;
    for (k, v) in videos.iter().enumerate() {
        save_video(v, &a.out.join(format!("step_{k:02}")), VideoFormat::Gif)?;
    }
    println!("{}", serde_json::json!({ "videos": videos.len(), "out": a.out }));
    Ok(())
}

fn fid(a: FidArgs) -> Result<()> {
    let (cfg, g) = load_model(&a.model)?;
    let data: ClipDataset = load_dataset(&cfg).context("loading reference clips")?;
    let ext = build_extractor(&cfg, &data)?;
    let n = a.samples.unwrap_or(cfg.eval.fid_samples);
    let probe = FidProbe::new(ext, &data, n, cfg.seed)?;
    let d = probe.score(&g)?;
    let report = serde_json::json!({ "fid": d, "samples": n, "extractor": cfg.eval.extractor });
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    println!("{report}");
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let (cfg, g) = load_model(&a.model)?;
    let bind = resolve_bind(a.bind.as_deref(), &cfg);
    let model = Model::new(cfg, g)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting runtime")?;
    rt.block_on(serve(model, &bind))
}

fn shapes(a: ShapesArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    let count = a.count.unwrap_or(cfg.data.count);
    let data = make_shapes(&cfg.data.shapes, count, cfg.generator.video_length)?;
    if a.packed {
        if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        data.save_packed(&a.out)?;
    } else {
        data.save_png_tree(&a.out)?;
    }
    println!("{}", serde_json::json!({ "videos": data.len(), "out": a.out }));
    Ok(())
}
