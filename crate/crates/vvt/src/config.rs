//! Pipeline configuration (TOML).
//!
//! Relative paths resolve against the config file's directory. Every
//! section has defaults, so a config only needs `[inputs]` and `[output]`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vvt_core::codec::{IMAGE_CHANNELS, SPATIAL_FACTOR, TEMPORAL_FACTOR, VIDEO_CHANNELS};
use vvt_core::dit::DitConfig;
use vvt_core::flow::{SampleConfig, Task, TrainConfig};
use vvt_core::pose::{GarmentScope, PoseConfig};

use crate::error::{Result, VvtError};
use crate::fsio;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub inputs: InputPaths,
    pub output: OutputConfig,
    #[serde(default)]
    pub video: VideoConfig,
    #[serde(default)]
    pub pose: PoseSection,
    #[serde(default)]
    pub keyframe: KeyframeSection,
    #[serde(default)]
    pub text: TextSection,
    #[serde(default)]
    pub codec: CodecSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub stage1: Stage1Section,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    /// Directory of numbered PNG frames.
    pub frames: PathBuf,
    pub skeletons: PathBuf,
    pub garment: PathBuf,
    pub garment_mask: PathBuf,
    pub caption: PathBuf,
    /// Single-frame skeleton file holding the frontal A-pose.
    pub anchor: PathBuf,
    /// Ground-truth frames for paired evaluation; defaults to `frames`.
    #[serde(default)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub run_dir: PathBuf,
}

/// Model-space resolution of the cropped clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoConfig {
    pub height: usize,
    pub width: usize,
    pub segment_frames: usize,
}

impl Default for VideoConfig {
    fn default() -> Self {
        Self { height: 32, width: 32, segment_frames: 16 }
    }
}

impl VideoConfig {
    /// Frames shared between consecutive segments (one latent slice).
    pub fn overlap(&self) -> usize {
        TEMPORAL_FACTOR
    }

    pub fn stride(&self) -> usize {
        self.segment_frames - self.overlap()
    }

    /// Segment count for `frames` input frames, if it fits the
    /// `segment + stride·(n − 1)` rule.
    pub fn segments_for(&self, frames: usize) -> Option<usize> {
        if frames < self.segment_frames || self.stride() == 0 {
            return None;
        }
        let extra = frames - self.segment_frames;
        extra.is_multiple_of(self.stride()).then(|| 1 + extra / self.stride())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseSection {
    pub confidence_threshold: f64,
    /// Agnostic-mask dilation in model-resolution pixels.
    pub dilation_radius: f64,
    pub window_padding: f64,
    pub scope: GarmentScope,
    pub skeleton_thickness: f64,
    pub guider_channels: usize,
    pub guider_window: i64,
}

impl Default for PoseSection {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.3,
            dilation_radius: 3.0,
            window_padding: 0.1,
            scope: GarmentScope::Full,
            skeleton_thickness: 1.0,
            guider_channels: 4,
            guider_window: 2,
        }
    }
}

impl PoseSection {
    pub fn pose_config(&self) -> PoseConfig {
        PoseConfig { confidence_threshold: self.confidence_threshold, ..PoseConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyframeSection {
    pub lambda: f64,
    pub alpha: f64,
    pub k: usize,
}

impl Default for KeyframeSection {
    fn default() -> Self {
        Self {
            lambda: vvt_core::keyframe::DEFAULT_LAMBDA,
            alpha: vvt_core::keyframe::DEFAULT_ALPHA,
            k: vvt_core::keyframe::DEFAULT_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextSection {
    pub max_tokens: usize,
    pub channels: usize,
}

impl Default for TextSection {
    fn default() -> Self {
        Self { max_tokens: 16, channels: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    /// Leading latent channels kept (the rest are dropped, making the codec
    /// lossy). Equal to the full width by default.
    pub latent_channels: usize,
}

impl Default for CodecSection {
    fn default() -> Self {
        Self { latent_channels: VIDEO_CHANNELS }
    }
}

/// Toy transformer dimensions shared by both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ff_mult: usize,
    pub lora_rank: usize,
    pub lora_scale: f64,
    pub lora_on_ff: bool,
    pub time_channels: usize,
    pub stage1_checkpoint: Option<PathBuf>,
    pub stage2_checkpoint: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            width: 64,
            heads: 4,
            blocks: 2,
            ff_mult: 2,
            lora_rank: 4,
            lora_scale: 1.0,
            lora_on_ff: false,
            time_channels: 64,
            stage1_checkpoint: None,
            stage2_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Section {
    pub best_of: usize,
}

impl Default for Stage1Section {
    fn default() -> Self {
        Self { best_of: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub levels: usize,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self { levels: vvt_core::fusion::DEFAULT_LEVELS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub clip_frames: usize,
    pub data_range: f64,
    pub dataset: String,
    pub split: String,
    /// `builtin` or `mean_color`.
    pub features: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            clip_frames: 8,
            data_range: 255.0,
            dataset: "fixture".into(),
            split: "test".into(),
            features: "builtin".into(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML and resolves relative paths against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| VvtError::Config(vec![format!("parse error: {e}")]))?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsio::read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| VvtError::Config(vec!["config is not UTF-8".into()]))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.inputs;
        for p in [&mut i.frames, &mut i.skeletons, &mut i.garment, &mut i.garment_mask, &mut i.caption, &mut i.anchor] {
            fix(p);
        }
        if let Some(p) = i.reference.as_mut() {
            fix(p);
        }
        fix(&mut self.output.run_dir);
        for p in [self.model.stage1_checkpoint.as_mut(), self.model.stage2_checkpoint.as_mut()].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn latent_channels(&self) -> usize {
        self.codec.latent_channels
    }

    fn apply_model(&self, mut cfg: DitConfig) -> DitConfig {
        let m = &self.model;
        cfg.width = m.width;
        cfg.heads = m.heads;
        cfg.blocks = m.blocks;
        cfg.ff_mult = m.ff_mult;
        cfg.lora_rank = m.lora_rank;
        cfg.lora_scale = m.lora_scale;
        cfg.lora_on_ff = m.lora_on_ff;
        cfg.time_channels = m.time_channels;
        cfg
    }

    /// Keyframe generator: image latents stacked along time.
    pub fn stage1_model(&self) -> DitConfig {
        let mut cfg = self.apply_model(DitConfig::video(
            IMAGE_CHANNELS,
            self.pose.guider_channels,
            IMAGE_CHANNELS,
            self.text.channels,
        ));
        cfg.seed = self.seed ^ 0x5157_0001;
        cfg
    }

    pub fn stage2_model(&self) -> DitConfig {
        let mut cfg = self.apply_model(DitConfig::video(
            self.latent_channels(),
            self.pose.guider_channels,
            IMAGE_CHANNELS,
            self.text.channels,
        ));
        cfg.seed = self.seed ^ 0x5157_0002;
        cfg
    }

    /// Hash of everything that determines the outputs. The run directory is
    /// blanked so that two run directories with the same settings agree.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.run_dir = PathBuf::new();
        let value = serde_json::to_value(&c).expect("config serializes");
        fsio::sha256_hex(value.to_string().as_bytes())
    }
}

/// Every cross-module constraint, checked before any work starts. An empty
/// list means the config is valid.
pub fn validate_config(cfg: &PipelineConfig) -> Vec<String> {
    let mut v = Vec::new();
    let mut positive = |name: &str, x: f64| {
        if !(x > 0.0 && x.is_finite()) {
            v.push(format!("{name} must be positive, got {x}"));
        }
    };
    positive("pose.dilation_radius", cfg.pose.dilation_radius);
    positive("pose.skeleton_thickness", cfg.pose.skeleton_thickness);
    positive("train.learning_rate", cfg.train.learning_rate);
    positive("train.grad_clip_norm", cfg.train.grad_clip_norm);
    positive("sample.cfg_scale", cfg.sample.cfg_scale);
    positive("eval.data_range", cfg.eval.data_range);
    positive("model.lora_scale", cfg.model.lora_scale);

    let vid = &cfg.video;
    if vid.height == 0 || !vid.height.is_multiple_of(SPATIAL_FACTOR) {
        v.push(format!("H not divisible by {SPATIAL_FACTOR}"));
    }
    if vid.width == 0 || !vid.width.is_multiple_of(SPATIAL_FACTOR) {
        v.push(format!("W not divisible by {SPATIAL_FACTOR}"));
    }
    if vid.segment_frames == 0 || !vid.segment_frames.is_multiple_of(TEMPORAL_FACTOR) {
        v.push(format!("T not divisible by {TEMPORAL_FACTOR}"));
    } else if vid.segment_frames <= TEMPORAL_FACTOR {
        v.push(format!("segment_frames must exceed the {TEMPORAL_FACTOR}-frame overlap"));
    }
    if cfg.pose.window_padding < 0.0 {
        v.push("pose.window_padding must be non-negative".into());
    }
    if !(0.0..=1.0).contains(&cfg.pose.confidence_threshold) {
        v.push("pose.confidence_threshold must lie in [0, 1]".into());
    }
    if cfg.pose.guider_channels == 0 {
        v.push("pose.guider_channels must be positive".into());
    }
    if cfg.pose.guider_window < 0 {
        v.push("pose.guider_window must be non-negative".into());
    }
    if cfg.keyframe.k == 0 {
        v.push("keyframe.k must be positive".into());
    }
    if cfg.keyframe.lambda < 0.0 || cfg.keyframe.alpha < 0.0 {
        v.push("keyframe lambda and alpha must be non-negative".into());
    }
    if cfg.text.max_tokens == 0 || cfg.text.channels == 0 {
        v.push("text.max_tokens and text.channels must be positive".into());
    }
    if cfg.codec.latent_channels == 0 || cfg.codec.latent_channels > VIDEO_CHANNELS {
        v.push(format!("codec.latent_channels must lie in 1..={VIDEO_CHANNELS}"));
    }
    let m = &cfg.model;
    if m.width == 0 || m.heads == 0 || !m.width.is_multiple_of(m.heads) {
        v.push(format!("model.width {} not divisible by model.heads {}", m.width, m.heads));
    }
    if m.blocks == 0 || m.ff_mult == 0 || m.lora_rank == 0 || m.time_channels == 0 {
        v.push("model blocks, ff_mult, lora_rank and time_channels must be positive".into());
    }
    for (name, dit) in [("stage1", cfg.stage1_model()), ("stage2", cfg.stage2_model())] {
        let c = dit.out_channels;
        if dit.video_in_channels != 2 * c + 1 + cfg.pose.guider_channels {
            v.push(format!("{name} input channels {} != 2c+1+c_p", dit.video_in_channels));
        }
    }
    let sum: f64 = cfg.train.task_probabilities.values().sum();
    if (sum - 1.0).abs() > 1e-9 {
        v.push(format!("schedule sums to {}", fmt_sum(sum)));
    }
    if cfg.train.task_probabilities.values().any(|&p| p < 0.0) {
        v.push("task probabilities must be non-negative".into());
    }
    if !(0.0..=1.0).contains(&cfg.train.uncond_prob) {
        v.push(format!("train.uncond_prob {} outside [0, 1]", cfg.train.uncond_prob));
    }
    if cfg.train.steps == 0 {
        v.push("train.steps must be positive".into());
    }
    if cfg.sample.steps == 0 {
        v.push("sample.steps must be positive".into());
    }
    if cfg.stage1.best_of == 0 {
        v.push("stage1.best_of must be positive".into());
    }
    if cfg.fusion.levels == 0 {
        v.push("fusion.levels must be positive".into());
    }
    if cfg.eval.clip_frames == 0 {
        v.push("eval.clip_frames must be positive".into());
    }
    if !matches!(cfg.eval.features.as_str(), "builtin" | "mean_color") {
        v.push(format!("eval.features `{}` is not a built-in extractor", cfg.eval.features));
    }
    v
}

/// Shortest decimal that reads back to the same sum, with float dust
/// rounded away (0.6 + 0.6 prints as 1.2).
fn fmt_sum(x: f64) -> String {
    let r = (x * 1e9).round() / 1e9;
    format!("{r}")
}

/// Schedule helper for hand-written configs.
pub fn schedule(pairs: &[(Task, f64)]) -> BTreeMap<Task, f64> {
    pairs.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn minimal() -> PipelineConfig {
        let text = r#"
            [inputs]
            frames = "frames"
            skeletons = "skeletons.json"
            garment = "garment.png"
            garment_mask = "garment_mask.png"
            caption = "caption.json"
            anchor = "anchor.json"
            [output]
            run_dir = "run"
        "#;
        PipelineConfig::from_toml(text, Path::new("/data")).unwrap()
    }

    #[test]
    fn defaults_validate_and_resolve_paths() {
        let cfg = minimal();
        assert!(validate_config(&cfg).is_empty(), "{:?}", validate_config(&cfg));
        assert_eq!(cfg.inputs.frames, PathBuf::from("/data/frames"));
        assert_eq!(cfg.keyframe.k, 2);
        assert_eq!(cfg.sample.steps, 50);
        assert_eq!(cfg.stage1.best_of, 3);
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn reports_documented_violations() {
        let mut cfg = minimal();
        cfg.video.height = 250;
        cfg.train.task_probabilities = schedule(&[(Task::Full, 0.6), (Task::PoseText, 0.6)]);
        let v = validate_config(&cfg);
        assert!(v.contains(&"H not divisible by 16".to_string()), "{v:?}");
        assert!(v.contains(&"schedule sums to 1.2".to_string()), "{v:?}");
    }

    #[test]
    fn toml_roundtrip_and_hash_ignores_run_dir() {
        let cfg = minimal();
        let back = PipelineConfig::from_toml(&cfg.to_toml(), Path::new("/elsewhere")).unwrap();
        assert_eq!(back, cfg);
        let mut other = cfg.clone();
        other.output.run_dir = "/tmp/x".into();
        assert_eq!(other.hash(), cfg.hash());
        other.seed = 7;
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn segment_rule() {
        let v = VideoConfig::default();
        assert_eq!(v.segments_for(16), Some(1));
        assert_eq!(v.segments_for(40), Some(3));
        assert_eq!(v.segments_for(20), None);
        assert_eq!(v.segments_for(8), None);
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = PipelineConfig::from_toml("bogus = 1", Path::new(".")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
