//! Fusion of generated crops into the source frames, and the metrics report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use vvt_core::fusion::pyramid_fuse;
use vvt_core::metrics::{clip_frechet, ssim, Builtin, FeatureExtractor, MeanColor};
use vvt_core::pose::TrackingWindow;
use vvt_core::raster::{Image, Mask};

use crate::error::{Result, VvtError};

/// Blends each generated model-resolution crop into its frame. The crop is
/// resized to the window, the window-resolution mask selects the region.
pub fn fuse_frames(
    originals: &[Image],
    generated: &[Image],
    window_masks: &[Mask],
    window: &TrackingWindow,
    levels: usize,
) -> Result<Vec<Image>> {
    let n = originals.len();
    if generated.len() != n || window_masks.len() != n || window.origins.len() != n {
        return Err(VvtError::Invalid(format!(
            "blend needs equal counts: {n} originals, {} generated, {} masks, {} windows",
            generated.len(),
            window_masks.len(),
            window.origins.len()
        )));
    }
    (0..n)
        .map(|i| {
            let rect = window.rect(i);
            let g = generated[i].resize_bilinear(rect.width, rect.height);
            let m = &window_masks[i];
            if (m.width, m.height) != (rect.width, rect.height) {
                return Err(VvtError::Invalid(format!("mask {i} does not match the window size")));
            }
            pyramid_fuse(&originals[i], &g, &m.to_image(), rect, levels)
                .map_err(|e| VvtError::Invalid(format!("frame {i}: {e}")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Paired,
    Unpaired,
}

/// Stable metrics layout. Absent metrics are `null`, never estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub format: String,
    pub dataset: String,
    pub split: String,
    pub mode: EvalMode,
    pub features: String,
    pub config_hash: Option<String>,
    pub frames: usize,
    pub clips: usize,
    pub metrics: BTreeMap<String, Option<f64>>,
}

pub fn feature_extractor(name: &str) -> Result<Box<dyn FeatureExtractor>> {
    match name {
        "builtin" => Ok(Box::new(Builtin::default())),
        "mean_color" => Ok(Box::new(MeanColor)),
        other => Err(VvtError::Config(vec![format!(
            "feature extractor `{other}` is not available; external plugins are not supported in this build"
        )])),
    }
}

/// Non-overlapping clips of `len` frames; a shorter tail is dropped unless
/// it is the only clip.
pub fn split_clips(frames: &[Image], len: usize) -> Vec<Vec<Image>> {
    let clips: Vec<Vec<Image>> = frames.chunks_exact(len.max(1)).map(<[Image]>::to_vec).collect();
    if clips.is_empty() && !frames.is_empty() {
        return vec![frames.to_vec()];
    }
    clips
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub mode: EvalMode,
    pub features: String,
    pub clip_frames: usize,
    pub data_range: f64,
    pub dataset: String,
    pub split: String,
}

pub fn evaluate(
    generated: &[Image],
    reference: &[Image],
    settings: &EvalSettings,
    config_hash: Option<String>,
) -> Result<MetricsReport> {
    let extractor = feature_extractor(&settings.features)?;
    if generated.is_empty() || reference.is_empty() {
        return Err(VvtError::Invalid("evaluation needs generated and reference frames".into()));
    }
    let mut metrics = BTreeMap::new();
    if settings.mode == EvalMode::Paired {
        if generated.len() != reference.len() {
            return Err(VvtError::Invalid(format!(
                "paired mode needs a reference for every frame: {} generated, {} reference",
                generated.len(),
                reference.len()
            )));
        }
        let mut total = 0.0;
        for (i, (g, r)) in generated.iter().zip(reference).enumerate() {
            total += ssim(g, r, settings.data_range).map_err(|e| VvtError::Invalid(format!("frame {i}: {e}")))?;
        }
        metrics.insert("ssim".to_string(), Some(total / generated.len() as f64));
    } else {
        metrics.insert("ssim".to_string(), None);
    }
    let gc = split_clips(generated, settings.clip_frames);
    let rc = split_clips(reference, settings.clip_frames);
    metrics.insert("frechet".to_string(), Some(clip_frechet(&gc, &rc, extractor.as_ref())?));
    metrics.insert("perceptual".to_string(), None);
    Ok(MetricsReport {
        format: "vvt-metrics-1".into(),
        dataset: settings.dataset.clone(),
        split: settings.split.clone(),
        mode: settings.mode,
        features: extractor.name(),
        config_hash,
        frames: generated.len(),
        clips: gc.len(),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(mode: EvalMode) -> EvalSettings {
        EvalSettings {
            mode,
            features: "builtin".into(),
            clip_frames: 2,
            data_range: 255.0,
            dataset: "d".into(),
            split: "s".into(),
        }
    }

    fn frames(seed: u64, n: usize) -> Vec<Image> {
        (0..n)
            .map(|i| {
                let noise = vvt_core::rng::noise(seed + i as u64, 16 * 16 * 3);
                Image { width: 16, height: 16, channels: 3, data: noise.iter().map(|v| 128.0 + 40.0 * v).collect() }
            })
            .collect()
    }

    #[test]
    fn identical_inputs_score_perfectly() {
        let f = frames(1, 6);
        let r = evaluate(&f, &f, &settings(EvalMode::Paired), None).unwrap();
        assert_eq!(r.metrics["ssim"], Some(1.0));
        assert!(r.metrics["frechet"].unwrap() <= 1e-8);
        assert_eq!(r.metrics["perceptual"], None);
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<MetricsReport>(&text).unwrap(), r);
    }

    #[test]
    fn paired_mode_needs_matching_counts() {
        assert!(evaluate(&frames(1, 4), &frames(2, 3), &settings(EvalMode::Paired), None).is_err());
        let r = evaluate(&frames(1, 4), &frames(2, 3), &settings(EvalMode::Unpaired), None).unwrap();
        assert_eq!(r.metrics["ssim"], None);
    }

    #[test]
    fn external_plugins_are_a_config_error() {
        let err = feature_extractor("/opt/i3d.so").err().unwrap();
        assert_eq!(err.exit_code(), 2);
    }
}
