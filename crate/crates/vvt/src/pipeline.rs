//! Stage orchestration over a run directory.
//!
//! Stages communicate only through files. Each stage records its inputs
//! digest and output hashes in the run manifest and is skipped when both
//! still match.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use vvt_core::caption::CaptionRecord;
use vvt_core::codec::Stream;
use vvt_core::dit::Dit;
use vvt_core::flow::{StepReport, TrainSample};
use vvt_core::keyframe::{score_frames, select_keyframes, AnchorPose, KeyframeSet};
use vvt_core::pose::{BoneGraph, SkeletonSequence, TrackingWindow};
use vvt_core::raster::{BBox, Image, Mask};

use crate::checkpoint;
use crate::config::{validate_config, PipelineConfig};
use crate::error::{Result, VvtError};
use crate::evaluation::{evaluate, fuse_frames, EvalMode, EvalSettings};
use crate::fsio;
use crate::generation::{generate_keyframes, generate_video, segment_ranges, train, ModelKit};
use crate::imageio;
use crate::latent_file;
use crate::manifest::{artifacts, inputs_hash, record_timing, RunLock, RunManifest, StageEntry};
use crate::prep::{map_from_pixels, map_to_pixels, preprocess, Preprocessed};
use crate::skeleton_file::read_skeletons;

pub const PREPROCESS: &str = "preprocess";
pub const KEYFRAMES: &str = "sample-keyframes";
pub const STAGE1: &str = "stage1";
pub const STAGE2: &str = "stage2";
pub const BLEND: &str = "blend";
pub const EVAL: &str = "eval";
pub const ALL_STAGES: [&str; 6] = [PREPROCESS, KEYFRAMES, STAGE1, STAGE2, BLEND, EVAL];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Skipped,
}

/// Window layout written by preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropsFile {
    pub window: TrackingWindow,
    pub warnings: Vec<String>,
}

pub fn read_caption(path: &Path) -> Result<CaptionRecord> {
    fsio::read_json(path)
}

/// Keyframe selection with `k` clamped to the sequence length.
pub fn sample_keyframes(
    seq: &SkeletonSequence,
    anchor: &SkeletonSequence,
    bboxes: &[BBox],
    k: usize,
    lambda: f64,
    alpha: f64,
    threshold: f64,
) -> Result<(KeyframeSet, Vec<String>)> {
    let bones = BoneGraph::coco14();
    let pose_cfg = vvt_core::pose::PoseConfig { confidence_threshold: threshold, ..Default::default() };
    let anchor_sk = anchor.frames.first().ok_or_else(|| VvtError::Invalid("anchor file has no frames".into()))?;
    let anchor = AnchorPose::new(anchor_sk.clone(), &bones, &pose_cfg)?;
    let scores = score_frames(seq, &anchor, &bones, bboxes, lambda, &pose_cfg)?;
    let mut warnings = Vec::new();
    let k_eff = k.min(scores.len());
    if k_eff < k {
        warnings.push(format!("k = {k} exceeds {} frames; using {k_eff}", scores.len()));
    }
    Ok((select_keyframes(&scores, k_eff, alpha)?, warnings))
}

pub struct Run {
    pub cfg: PipelineConfig,
    pub dir: PathBuf,
    pub hash: String,
    /// Re-run stages even when fresh, and skip hash checks in evaluation.
    pub force: bool,
}

impl Run {
    /// Validates the config; violations become exit-code-2 errors.
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        let violations = validate_config(&cfg);
        if !violations.is_empty() {
            return Err(VvtError::Config(violations));
        }
        Ok(Self { dir: cfg.output.run_dir.clone(), hash: cfg.hash(), cfg, force: false })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        RunManifest::open(&self.dir, &self.hash)
    }

    fn upstream(&self, manifest: &RunManifest, stage: &str) -> Result<Vec<PathBuf>> {
        let e = manifest
            .latest(stage)
            .ok_or_else(|| VvtError::Invalid(format!("stage `{stage}` has not run in {}", self.dir.display())))?;
        Ok(e.outputs.iter().map(|a| self.dir.join(&a.path)).collect())
    }

    fn execute<F>(&self, stage: &str, inputs: Vec<PathBuf>, body: F) -> Result<StageStatus>
    where
        F: FnOnce(&Run) -> Result<(Vec<PathBuf>, serde_json::Value)>,
    {
        let mut manifest = self.manifest()?;
        let ih = inputs_hash(&self.hash, &inputs)?;
        if !self.force && manifest.is_fresh(&self.dir, stage, &ih) {
            return Ok(StageStatus::Skipped);
        }
        let start = Instant::now();
        let (outputs, summary) = body(self)?;
        manifest.record(StageEntry {
            stage: stage.into(),
            inputs_hash: ih,
            outputs: artifacts(&self.dir, &outputs)?,
            summary,
        });
        manifest.save(&self.dir)?;
        record_timing(&self.dir, stage, start.elapsed().as_secs_f64())?;
        Ok(StageStatus::Ran)
    }

    /// Runs one stage by name under the run lock.
    pub fn run_stage(&self, stage: &str) -> Result<StageStatus> {
        let _lock = RunLock::acquire(&self.dir)?;
        self.stage_unlocked(stage)
    }

    fn stage_unlocked(&self, stage: &str) -> Result<StageStatus> {
        let r = match stage {
            PREPROCESS => self.preprocess(),
            KEYFRAMES => self.keyframes(),
            STAGE1 => self.stage1(),
            STAGE2 => self.stage2(),
            BLEND => self.blend(),
            EVAL => self.eval(),
            other => return Err(VvtError::Invalid(format!("unknown stage `{other}`"))),
        };
        r.map_err(|e| e.in_stage(stage))
    }

    /// Every stage in order under one lock.
    pub fn run_all(&self) -> Result<Vec<(String, StageStatus)>> {
        let _lock = RunLock::acquire(&self.dir)?;
        ALL_STAGES.iter().map(|s| Ok((s.to_string(), self.stage_unlocked(s)?))).collect()
    }

    fn frame_files(&self) -> Result<Vec<PathBuf>> {
        fsio::list_files(&self.cfg.inputs.frames, "png")
    }

    fn preprocess(&self) -> Result<StageStatus> {
        let i = &self.cfg.inputs;
        let mut inputs = self.frame_files()?;
        inputs.extend([i.skeletons.clone(), i.garment.clone(), i.garment_mask.clone()]);
        self.execute(PREPROCESS, inputs, |run| {
            let frames = imageio::read_frames(&run.cfg.inputs.frames)?;
            let seq = read_skeletons(&run.cfg.inputs.skeletons)?;
            let garment = imageio::read_rgb(&run.cfg.inputs.garment)?;
            let gmask = imageio::read_mask(&run.cfg.inputs.garment_mask)?;
            let p = preprocess(&run.cfg, &frames, &seq, &garment, &gmask)?;
            run.write_preprocessed(&p)
        })
    }

    fn write_preprocessed(&self, p: &Preprocessed) -> Result<(Vec<PathBuf>, serde_json::Value)> {
        let h = Some(self.hash.as_str());
        let mut out = Vec::new();
        let bb = self.path("preprocess/bboxes.json");
        fsio::write_json(&bb, &p.bboxes)?;
        let crops = self.path("preprocess/crops.json");
        fsio::write_json(&crops, &CropsFile { window: p.window.clone(), warnings: p.warnings.clone() })?;
        out.extend([bb, crops]);
        out.extend(imageio::write_frames(&self.path("preprocess/crops"), &p.crops, h)?);
        out.extend(imageio::write_frames(&self.path("preprocess/agnostic"), &p.agnostic, h)?);
        let maps: Vec<Image> = p.pose_maps.iter().map(map_to_pixels).collect();
        out.extend(imageio::write_frames(&self.path("preprocess/pose"), &maps, h)?);
        out.extend(imageio::write_masks(&self.path("preprocess/masks"), &p.masks, h)?);
        out.extend(imageio::write_masks(&self.path("preprocess/window_masks"), &p.window_masks, h)?);
        let g = self.path("preprocess/garment.png");
        imageio::write_image(&g, &p.garment, h)?;
        out.push(g);
        let summary = json!({
            "frames": p.crops.len(),
            "window": [p.window.width, p.window.height],
            "warnings": p.warnings,
        });
        Ok((out, summary))
    }

    pub fn load_preprocessed(&self) -> Result<Preprocessed> {
        let crops: CropsFile = fsio::read_json(&self.path("preprocess/crops.json"))?;
        Ok(Preprocessed {
            bboxes: fsio::read_json(&self.path("preprocess/bboxes.json"))?,
            window: crops.window,
            warnings: crops.warnings,
            crops: imageio::read_frames(&self.path("preprocess/crops"))?,
            masks: imageio::read_masks(&self.path("preprocess/masks"))?,
            agnostic: imageio::read_frames(&self.path("preprocess/agnostic"))?,
            pose_maps: read_maps(&self.path("preprocess/pose"))?,
            window_masks: imageio::read_masks(&self.path("preprocess/window_masks"))?,
            garment: imageio::read_rgb(&self.path("preprocess/garment.png"))?,
        })
    }

    fn keyframes(&self) -> Result<StageStatus> {
        let manifest = self.manifest()?;
        self.upstream(&manifest, PREPROCESS)?;
        let i = &self.cfg.inputs;
        let inputs = vec![i.skeletons.clone(), i.anchor.clone(), self.path("preprocess/bboxes.json")];
        self.execute(KEYFRAMES, inputs, |run| {
            let seq = read_skeletons(&run.cfg.inputs.skeletons)?;
            let anchor = read_skeletons(&run.cfg.inputs.anchor)?;
            let bboxes: Vec<BBox> = fsio::read_json(&run.path("preprocess/bboxes.json"))?;
            let kc = &run.cfg.keyframe;
            let (set, warnings) =
                sample_keyframes(&seq, &anchor, &bboxes, kc.k, kc.lambda, kc.alpha, run.cfg.pose.confidence_threshold)?;
            let out = run.path("keyframes/keyframes.json");
            fsio::write_json(&out, &set)?;
            Ok((vec![out], json!({ "indices": set.indices, "warnings": warnings })))
        })
    }

    fn load_keyframes(&self) -> Result<KeyframeSet> {
        fsio::read_json(&self.path("keyframes/keyframes.json"))
    }

    fn checkpoint_inputs(path: Option<&PathBuf>) -> Vec<PathBuf> {
        path.map(|p| vec![p.join(checkpoint::MANIFEST), p.join(checkpoint::PAYLOAD)]).unwrap_or_default()
    }

    /// The configured checkpoint, or a freshly initialized model.
    pub fn model_kit(&self, stage: u8) -> Result<ModelKit> {
        let (ckpt, fresh) = match stage {
            1 => (self.cfg.model.stage1_checkpoint.as_ref(), self.cfg.stage1_model()),
            _ => (self.cfg.model.stage2_checkpoint.as_ref(), self.cfg.stage2_model()),
        };
        let model = match ckpt {
            Some(p) => checkpoint::load(p)?.0,
            None => Dit::new(fresh)?,
        };
        ModelKit::new(model, self.cfg.text.max_tokens, self.cfg.pose.guider_window)
    }

    fn stage1(&self) -> Result<StageStatus> {
        let manifest = self.manifest()?;
        let mut inputs = self.upstream(&manifest, PREPROCESS)?;
        inputs.extend(self.upstream(&manifest, KEYFRAMES)?);
        inputs.push(self.cfg.inputs.caption.clone());
        inputs.extend(Self::checkpoint_inputs(self.cfg.model.stage1_checkpoint.as_ref()));
        self.execute(STAGE1, inputs, |run| {
            let p = run.load_preprocessed()?;
            let keys = run.load_keyframes()?;
            let caption = read_caption(&run.cfg.inputs.caption)?;
            let kit = run.model_kit(1)?;
            let pick = |v: &[Image]| keys.indices.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
            let agnostic = pick(&p.agnostic);
            let masks: Vec<Mask> = keys.indices.iter().map(|&i| p.masks[i].clone()).collect();
            let cond = kit.stage1_conditions(&agnostic, &masks, &pick(&p.pose_maps), &p.garment, &caption)?;
            let out = generate_keyframes(&kit, &cond, &run.cfg.sample, run.cfg.stage1.best_of, &agnostic, &masks)?;
            let h = Some(run.hash.as_str());
            let mut files = Vec::new();
            for (j, img) in out.images.iter().enumerate() {
                let f = run.path(&format!("stage1/keyframe_{j:02}.png"));
                imageio::write_image(&f, img, h)?;
                files.push(f);
            }
            let lat = run.path("stage1/latent.bin");
            latent_file::write_latent(&lat, &out.latent, Stream::Image, &run.hash)?;
            files.push(lat);
            let summary = json!({
                "indices": keys.indices,
                "candidates": out.scores.len(),
                "selected_seed": out.seed,
                "scores": out.scores,
            });
            let sel = run.path("stage1/selection.json");
            fsio::write_json(&sel, &summary)?;
            files.push(sel);
            Ok((files, summary))
        })
    }

    fn stage1_images(&self, count: usize) -> Result<Vec<Image>> {
        (0..count).map(|j| imageio::read_rgb(&self.path(&format!("stage1/keyframe_{j:02}.png")))).collect()
    }

    fn stage2(&self) -> Result<StageStatus> {
        let manifest = self.manifest()?;
        let mut inputs = self.upstream(&manifest, PREPROCESS)?;
        inputs.extend(self.upstream(&manifest, STAGE1)?);
        inputs.push(self.cfg.inputs.caption.clone());
        inputs.extend(Self::checkpoint_inputs(self.cfg.model.stage2_checkpoint.as_ref()));
        self.execute(STAGE2, inputs, |run| {
            let p = run.load_preprocessed()?;
            let keys = run.load_keyframes()?;
            let keyframes = run.stage1_images(keys.indices.len())?;
            let caption = read_caption(&run.cfg.inputs.caption)?;
            let kit = run.model_kit(2)?;
            let ranges = segment_ranges(p.crops.len(), &run.cfg.video)?;
            let conds = ranges
                .iter()
                .enumerate()
                .map(|(s, r)| {
                    kit.stage2_conditions(
                        &p.agnostic[r.clone()],
                        &p.masks[r.clone()],
                        &p.pose_maps[r.clone()],
                        &keyframes,
                        &caption,
                    )
                    .map_err(|e| VvtError::Invalid(format!("segment {s}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let out = generate_video(&kit, &conds, &run.cfg.sample)?;
            let mut files = imageio::write_frames(&run.path("stage2/frames"), &out.frames, Some(&run.hash))?;
            let lat = run.path("stage2/latent.bin");
            latent_file::write_latent(&lat, &out.latent, Stream::Video, &run.hash)?;
            files.push(lat);
            let summary = json!({
                "segments": out.segments.len(),
                "frames": out.frames.len(),
                "junction_max_abs_diff": out.junctions,
            });
            let seg = run.path("stage2/segments.json");
            fsio::write_json(&seg, &summary)?;
            files.push(seg);
            Ok((files, summary))
        })
    }

    fn blend(&self) -> Result<StageStatus> {
        let manifest = self.manifest()?;
        let mut inputs = self.frame_files()?;
        inputs.extend(self.upstream(&manifest, PREPROCESS)?);
        inputs.extend(self.upstream(&manifest, STAGE2)?);
        self.execute(BLEND, inputs, |run| {
            let originals = imageio::read_frames(&run.cfg.inputs.frames)?;
            let generated = imageio::read_frames(&run.path("stage2/frames"))?;
            let masks = imageio::read_masks(&run.path("preprocess/window_masks"))?;
            let crops: CropsFile = fsio::read_json(&run.path("preprocess/crops.json"))?;
            let fused = fuse_frames(&originals, &generated, &masks, &crops.window, run.cfg.fusion.levels)?;
            let files = imageio::write_frames(&run.path("fused"), &fused, Some(&run.hash))?;
            Ok((files, json!({ "frames": fused.len(), "levels": run.cfg.fusion.levels })))
        })
    }

    fn eval(&self) -> Result<StageStatus> {
        let manifest = self.manifest()?;
        let reference_dir = self.cfg.inputs.reference.clone().unwrap_or_else(|| self.cfg.inputs.frames.clone());
        let mut inputs = self.upstream(&manifest, BLEND)?;
        inputs.extend(fsio::list_files(&reference_dir, "png")?);
        self.execute(EVAL, inputs, |run| {
            let generated = imageio::read_frames_with_hashes(&run.path("fused"))?;
            if !run.force {
                if let Some(bad) = generated.iter().find(|g| g.config_hash.as_deref() != Some(run.hash.as_str())) {
                    return Err(VvtError::HashMismatch(format!(
                        "fused frame carries {:?}, run is {}",
                        bad.config_hash, run.hash
                    )));
                }
            }
            let generated: Vec<Image> = generated.into_iter().map(|p| rgb(p.image)).collect();
            let reference = imageio::read_frames(&reference_dir)?;
            let e = &run.cfg.eval;
            let settings = EvalSettings {
                mode: EvalMode::Paired,
                features: e.features.clone(),
                clip_frames: e.clip_frames,
                data_range: e.data_range,
                dataset: e.dataset.clone(),
                split: e.split.clone(),
            };
            let report = evaluate(&generated, &reference, &settings, Some(run.hash.clone()))?;
            let out = run.path("eval/report.json");
            fsio::write_json(&out, &report)?;
            Ok((vec![out], serde_json::to_value(&report.metrics).unwrap_or_default()))
        })
    }

    /// Builds training samples for stage 1 (one sample over the keyframes)
    /// or stage 2 (one sample per segment) from the ground-truth crops.
    pub fn training_samples(&self, kit: &ModelKit, stage: u8) -> Result<Vec<TrainSample>> {
        let p = self.load_preprocessed()?;
        let keys = self.load_keyframes()?;
        let caption = read_caption(&self.cfg.inputs.caption)?;
        let pick = |v: &[Image]| keys.indices.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        let key_crops = pick(&p.crops);
        if stage == 1 {
            let masks: Vec<Mask> = keys.indices.iter().map(|&i| p.masks[i].clone()).collect();
            let cond = kit.stage1_conditions(&pick(&p.agnostic), &masks, &pick(&p.pose_maps), &p.garment, &caption)?;
            return Ok(vec![TrainSample { x0: kit.stage1_target(&key_crops)?, conditions: cond, noise: None }]);
        }
        segment_ranges(p.crops.len(), &self.cfg.video)?
            .into_iter()
            .map(|r| {
                Ok(TrainSample {
                    x0: kit.stage2_target(&p.crops[r.clone()])?,
                    conditions: kit.stage2_conditions(
                        &p.agnostic[r.clone()],
                        &p.masks[r.clone()],
                        &p.pose_maps[r],
                        &key_crops,
                        &caption,
                    )?,
                    noise: None,
                })
            })
            .collect()
    }

    /// Trains one stage's model on this run's fixture data, writing a JSONL
    /// log and a checkpoint. Returns the checkpoint directory.
    pub fn train(&self, stage: u8, out: Option<PathBuf>) -> Result<(PathBuf, Vec<StepReport>)> {
        let _lock = RunLock::acquire(&self.dir)?;
        for s in [PREPROCESS, KEYFRAMES] {
            self.stage_unlocked(s)?;
        }
        let run = || -> Result<(PathBuf, Vec<StepReport>)> {
            let mut kit = self.model_kit(stage)?;
            let samples = self.training_samples(&kit, stage)?;
            let log_path = self.path(&format!("train/stage{stage}.jsonl"));
            let mut log = String::new();
            let reports = train(&mut kit.model, &samples, &self.cfg.train, |r| {
                log.push_str(&serde_json::to_string(r).map_err(|e| VvtError::format(&log_path, e))?);
                log.push('\n');
                Ok(())
            })?;
            fsio::write(&log_path, log.as_bytes())?;
            let dir = out
                .clone()
                .or_else(|| {
                    if stage == 1 {
                        self.cfg.model.stage1_checkpoint.clone()
                    } else {
                        self.cfg.model.stage2_checkpoint.clone()
                    }
                })
                .unwrap_or_else(|| self.path(&format!("checkpoints/stage{stage}")));
            checkpoint::save(&dir, &kit.model, &self.hash)?;
            Ok((dir, reports))
        };
        run().map_err(|e| e.in_stage("train"))
    }
}

fn rgb(img: Image) -> Image {
    if img.channels == 3 {
        img
    } else {
        Image::from_fn(img.width, img.height, 3, |x, y, _| img.get(x, y, 0))
    }
}

/// Skeleton maps stored as {0, 255} grayscale PNGs.
pub fn read_maps(dir: &Path) -> Result<Vec<Image>> {
    let files = fsio::list_files(dir, "png")?;
    files.iter().map(|f| Ok(map_from_pixels(&imageio::read_image(f)?.image))).collect()
}
