//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use vvt_core::caption::{drop_conditions, swap_appearance, CaptionRecord};
use vvt_core::codec::Stream;
use vvt_core::pose::{render_skeleton_map, BoneGraph, PoseConfig, AGNOSTIC_FILL};
use vvt_core::raster::{BBox, Image, Mask};

use crate::checkpoint;
use crate::config::{PipelineConfig, VideoConfig};
use crate::error::{Result, VvtError};
use crate::evaluation::{evaluate, fuse_frames, EvalMode, EvalSettings};
use crate::fixture;
use crate::fsio;
use crate::generation::{generate_video, segment_ranges, ModelKit};
use crate::imageio;
use crate::latent_file;
use crate::pipeline::{self, read_caption, CropsFile, Run, StageStatus};
use crate::prep::{subject_bbox, CropMap};
use crate::skeleton_file::read_skeletons;

#[derive(Debug, Parser)]
#[command(name = "vvt", version, about = "Two-stage video virtual try-on pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Pipeline config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `[output] run_dir`.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Re-run even when the manifest says the stage is up to date.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crops, agnostic masks and images, skeleton maps and the garment.
    Preprocess(RunArgs),
    /// Keyframe selection, from a run config or from explicit files.
    SampleKeyframes(KeyframeArgs),
    /// Keyframe try-on images (best of n).
    Stage1(RunArgs),
    /// Segment-wise video generation with latent continuation.
    Stage2(RunArgs),
    /// Pyramid fusion of generated crops into the original frames.
    Blend(BlendArgs),
    /// SSIM and Fréchet metrics.
    Eval(EvalArgs),
    /// Every stage in order.
    RunAll(RunArgs),
    /// Trains the stage-1 or stage-2 model on the configured inputs.
    Train(TrainArgs),
    /// Generates a clip from a checkpoint, skeletons, keyframes and a caption.
    Generate(GenerateArgs),
    /// Caption utilities.
    #[command(subcommand)]
    Caption(CaptionCommand),
    /// Writes a synthetic input bundle with a ready-to-run config.
    Fixture(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct KeyframeArgs {
    #[arg(long, conflicts_with_all = ["skeletons", "anchor", "bboxes", "out"])]
    pub config: Option<PathBuf>,
    #[arg(long, requires = "config")]
    pub run_dir: Option<PathBuf>,
    #[arg(long)]
    pub skeletons: Option<PathBuf>,
    #[arg(long)]
    pub anchor: Option<PathBuf>,
    /// JSON list of `{x, y, w, h}`; derived from the skeletons when absent.
    #[arg(long)]
    pub bboxes: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct BlendArgs {
    #[arg(long, conflicts_with_all = ["original", "generated", "mask", "window", "out"])]
    pub config: Option<PathBuf>,
    #[arg(long, requires = "config")]
    pub run_dir: Option<PathBuf>,
    #[arg(long)]
    pub original: Option<PathBuf>,
    #[arg(long)]
    pub generated: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// `crops.json` from preprocessing.
    #[arg(long)]
    pub window: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = vvt_core::fusion::DEFAULT_LEVELS)]
    pub levels: usize,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, conflicts_with_all = ["generated", "reference", "out"])]
    pub config: Option<PathBuf>,
    #[arg(long, requires = "config")]
    pub run_dir: Option<PathBuf>,
    #[arg(long)]
    pub generated: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EvalMode::Paired)]
    pub mode: EvalMode,
    /// `builtin`, `mean_color`, or a plugin path (unsupported).
    #[arg(long, default_value = "builtin")]
    pub features: String,
    #[arg(long, default_value_t = 8)]
    pub clip_frames: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Compare even when the embedded config hashes differ.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// Checkpoint directory; defaults to the configured one, then to
    /// `<run_dir>/checkpoints/stage<N>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub skeletons: PathBuf,
    /// Comma-separated keyframe PNGs.
    #[arg(long, value_delimiter = ',', required = true)]
    pub keyframes: Vec<PathBuf>,
    #[arg(long)]
    pub caption: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 2.5)]
    pub cfg: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub segments: usize,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 16)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 2)]
    pub guider_window: i64,
    #[arg(long, default_value_t = 1.0)]
    pub skeleton_thickness: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum CaptionCommand {
    /// Replaces the appearance field with a garment description.
    Swap {
        #[arg(long)]
        caption: PathBuf,
        /// Plain-text garment description.
        #[arg(long)]
        garment: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Randomly blanks appearance and environment.
    Drop {
        #[arg(long)]
        caption: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        p_appearance: f64,
        #[arg(long, default_value_t = 0.1)]
        p_environment: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Frame count; 16 + 12·(N − 1) for N segments.
    #[arg(long, default_value_t = 40)]
    pub frames: usize,
}

fn open_run(config: &Path, run_dir: Option<&PathBuf>, force: bool) -> Result<Run> {
    let mut cfg = PipelineConfig::load(config)?;
    if let Some(d) = run_dir {
        cfg.output.run_dir = d.clone();
    }
    let mut run = Run::new(cfg)?;
    run.force = force;
    Ok(run)
}

fn report(stage: &str, status: StageStatus) {
    let word = match status {
        StageStatus::Ran => "done",
        StageStatus::Skipped => "up to date",
    };
    println!("{stage}: {word}");
}

fn run_stage(args: &RunArgs, stage: &str) -> Result<()> {
    let run = open_run(&args.config, args.run_dir.as_ref(), args.force)?;
    report(stage, run.run_stage(stage)?);
    Ok(())
}

fn missing(flag: &str) -> VvtError {
    VvtError::Config(vec![format!("--{flag} is required without --config")])
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(a) => run_stage(&a, pipeline::PREPROCESS),
        Command::Stage1(a) => run_stage(&a, pipeline::STAGE1),
        Command::Stage2(a) => run_stage(&a, pipeline::STAGE2),
        Command::RunAll(a) => {
            let run = open_run(&a.config, a.run_dir.as_ref(), a.force)?;
            for (stage, status) in run.run_all()? {
                report(&stage, status);
            }
            Ok(())
        }
        Command::SampleKeyframes(a) => sample_keyframes(a),
        Command::Blend(a) => blend(a),
        Command::Eval(a) => eval(a),
        Command::Train(a) => {
            let mut run = open_run(&a.config, a.run_dir.as_ref(), false)?;
            if let Some(s) = a.steps {
                run.cfg.train.steps = s;
            }
            let (dir, reports) = run.train(a.stage, a.out)?;
            if let (Some(first), Some(last)) = (reports.first(), reports.last()) {
                println!("loss {:.6} -> {:.6} over {} steps", first.loss, last.loss, reports.len());
            }
            println!("checkpoint: {}", dir.display());
            Ok(())
        }
        Command::Generate(a) => generate(a).map_err(|e| e.in_stage("generate")),
        Command::Caption(c) => caption(c),
        Command::Fixture(a) => {
            let cfg = fixture::write_fixture(&a.out, a.frames)?;
            println!("config: {}", cfg.display());
            Ok(())
        }
    }
}

fn sample_keyframes(a: KeyframeArgs) -> Result<()> {
    if let Some(config) = &a.config {
        let run = open_run(config, a.run_dir.as_ref(), a.force)?;
        report(pipeline::KEYFRAMES, run.run_stage(pipeline::KEYFRAMES)?);
        return Ok(());
    }
    let seq = read_skeletons(a.skeletons.as_ref().ok_or_else(|| missing("skeletons"))?)?;
    let anchor = read_skeletons(a.anchor.as_ref().ok_or_else(|| missing("anchor"))?)?;
    let out = a.out.ok_or_else(|| missing("out"))?;
    let threshold = PoseConfig::default().confidence_threshold;
    let bboxes: Vec<BBox> = match &a.bboxes {
        Some(p) => fsio::read_json(p)?,
        None => seq.frames.iter().map(|s| subject_bbox(s, threshold)).collect(),
    };
    let (set, warnings) = pipeline::sample_keyframes(&seq, &anchor, &bboxes, a.k, a.lambda, a.alpha, threshold)
        .map_err(|e| e.in_stage(pipeline::KEYFRAMES))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    fsio::write_json(&out, &set)?;
    println!("keyframes: {:?}", set.indices);
    Ok(())
}

fn blend(a: BlendArgs) -> Result<()> {
    if let Some(config) = &a.config {
        let run = open_run(config, a.run_dir.as_ref(), a.force)?;
        report(pipeline::BLEND, run.run_stage(pipeline::BLEND)?);
        return Ok(());
    }
    let originals = imageio::read_frames(&a.original.ok_or_else(|| missing("original"))?)?;
    let generated = imageio::read_frames(&a.generated.ok_or_else(|| missing("generated"))?)?;
    let masks = imageio::read_masks(&a.mask.ok_or_else(|| missing("mask"))?)?;
    let crops: CropsFile = fsio::read_json(&a.window.ok_or_else(|| missing("window"))?)?;
    let out = a.out.ok_or_else(|| missing("out"))?;
    let fused =
        fuse_frames(&originals, &generated, &masks, &crops.window, a.levels).map_err(|e| e.in_stage("blend"))?;
    imageio::write_frames(&out, &fused, None)?;
    println!("blend: {} frames", fused.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if let Some(config) = &a.config {
        let run = open_run(config, a.run_dir.as_ref(), a.force)?;
        report(pipeline::EVAL, run.run_stage(pipeline::EVAL)?);
        return Ok(());
    }
    crate::evaluation::feature_extractor(&a.features)?;
    let gen = imageio::read_frames_with_hashes(&a.generated.ok_or_else(|| missing("generated"))?)?;
    let reference = imageio::read_frames_with_hashes(&a.reference.ok_or_else(|| missing("reference"))?)?;
    let out = a.out.ok_or_else(|| missing("out"))?;
    let hash_of = |v: &[imageio::Png]| v.iter().find_map(|p| p.config_hash.clone());
    let (gh, rh) = (hash_of(&gen), hash_of(&reference));
    if let (Some(g), Some(r)) = (&gh, &rh) {
        if g != r && !a.force {
            return Err(VvtError::HashMismatch(format!(
                "generated {g} vs reference {r}; pass --force to compare anyway"
            )));
        }
    }
    let to_rgb = |v: Vec<imageio::Png>| -> Vec<Image> {
        v.into_iter()
            .map(|p| {
                let i = p.image;
                if i.channels == 3 {
                    i
                } else {
                    Image::from_fn(i.width, i.height, 3, |x, y, _| i.get(x, y, 0))
                }
            })
            .collect()
    };
    let settings = EvalSettings {
        mode: a.mode,
        features: a.features,
        clip_frames: a.clip_frames,
        data_range: 255.0,
        dataset: "custom".into(),
        split: "test".into(),
    };
    let r = evaluate(&to_rgb(gen), &to_rgb(reference), &settings, gh).map_err(|e| e.in_stage("eval"))?;
    fsio::write_json(&out, &r)?;
    println!("{}", serde_json::to_string(&r.metrics).unwrap_or_default());
    Ok(())
}

/// Generation without source frames: the whole crop is masked and the
/// agnostic input is flat grey, so the clip comes from pose, keyframes and
/// caption alone.
fn generate(a: GenerateArgs) -> Result<()> {
    let (model, _) = checkpoint::load(&a.checkpoint)?;
    let kit = ModelKit::new(model, a.max_tokens, a.guider_window)?;
    let video = VideoConfig { height: a.height, width: a.width, ..VideoConfig::default() };
    if a.segments == 0 {
        return Err(VvtError::Config(vec!["--segments must be at least 1".into()]));
    }
    let frames = video.segment_frames + video.stride() * (a.segments - 1);
    let seq = read_skeletons(&a.skeletons)?;
    if seq.frames.len() < frames {
        return Err(VvtError::Invalid(format!(
            "{} segments need {frames} skeleton frames, got {}",
            a.segments,
            seq.frames.len()
        )));
    }
    let size = (a.width, a.height);
    let bones = BoneGraph::coco14();
    let pose_cfg = PoseConfig::default();
    let maps: Vec<Image> = seq.frames[..frames]
        .iter()
        .map(|sk| {
            let rect = vvt_core::raster::PixelRect {
                x: 0,
                y: 0,
                width: sk.frame_width as usize,
                height: sk.frame_height as usize,
            };
            let local = CropMap::new(rect, size).skeleton(sk, size);
            render_skeleton_map(&local, &bones, size, a.skeleton_thickness, &pose_cfg)
        })
        .collect();
    let keyframes = a
        .keyframes
        .iter()
        .map(|p| Ok(imageio::read_rgb(p)?.resize_bilinear(a.width, a.height)))
        .collect::<Result<Vec<_>>>()?;
    let caption_rec = read_caption(&a.caption)?;
    let agnostic = vec![Image::filled(a.width, a.height, 3, AGNOSTIC_FILL); frames];
    let masks = vec![Mask::filled(a.width, a.height, true); frames];
    let conds = segment_ranges(frames, &video)?
        .into_iter()
        .map(|r| kit.stage2_conditions(&agnostic[r.clone()], &masks[r.clone()], &maps[r], &keyframes, &caption_rec))
        .collect::<Result<Vec<_>>>()?;
    let sample = vvt_core::flow::SampleConfig { steps: a.steps, cfg_scale: a.cfg, seed: a.seed };
    let out = generate_video(&kit, &conds, &sample)?;
    imageio::write_frames(&a.out.join("frames"), &out.frames, None)?;
    latent_file::write_latent(&a.out.join("latent.bin"), &out.latent, Stream::Video, "")?;
    println!("generate: {} frames, junction diffs {:?}", out.frames.len(), out.junctions);
    Ok(())
}

fn caption(c: CaptionCommand) -> Result<()> {
    match c {
        CaptionCommand::Swap { caption, garment, out } => {
            let rec: CaptionRecord = read_caption(&caption)?;
            let text = String::from_utf8(fsio::read(&garment)?).map_err(|e| VvtError::format(&garment, e))?;
            fsio::write_json(&out, &swap_appearance(&rec, text.trim()))
        }
        CaptionCommand::Drop { caption, seed, p_appearance, p_environment, out } => {
            let rec: CaptionRecord = read_caption(&caption)?;
            let dropped = drop_conditions(&rec, seed, p_appearance, p_environment)
                .map_err(|e| VvtError::Config(vec![e.to_string()]))?;
            fsio::write_json(&out, &dropped)
        }
    }
}
