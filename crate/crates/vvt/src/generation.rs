//! Condition assembly, sampling and training for both stages.
//!
//! Stage 1 runs the transformer on keyframe images: `k` image latents are
//! stacked along time in the video stream and the garment occupies the
//! image stream. Stage 2 runs it on 16-frame video segments with the
//! generated keyframes in the image stream.

use std::ops::Range;

use vvt_core::caption::{encode_text, CaptionRecord, PoseGuider, TextEncoderConfig};
use vvt_core::codec::{
    resize_mask_to_latent, Codec, LatentMask, LatentVideo, VideoTensor, IMAGE_CHANNELS, TEMPORAL_FACTOR, VIDEO_CHANNELS,
};
use vvt_core::dit::Dit;
use vvt_core::flow::{
    best_of_n, generate_segments, sample_video, segment_noise, stitch_segments, Conditions, SampleConfig, StepReport,
    TrainConfig, TrainSample, Trainer,
};
use vvt_core::raster::{Image, Mask};
use vvt_core::rng;

use crate::config::VideoConfig;
use crate::error::{Result, VvtError};
use crate::prep::{to_pixels, to_unit};

/// A model plus the encoders whose shapes it implies.
pub struct ModelKit {
    pub model: Dit,
    pub codec: Codec,
    pub guider: PoseGuider,
    pub text: TextEncoderConfig,
    pub guider_window: i64,
}

impl ModelKit {
    /// Latent width, pose channels and text width all come from the model
    /// config. The pose guider is seeded from the model seed.
    pub fn new(model: Dit, max_tokens: usize, guider_window: i64) -> Result<Self> {
        let c = model.config.out_channels;
        let cp = model
            .config
            .video_in_channels
            .checked_sub(2 * c + 1)
            .filter(|&cp| cp > 0)
            .ok_or_else(|| VvtError::Invalid("model input width leaves no pose channels".into()))?;
        if c > VIDEO_CHANNELS {
            return Err(VvtError::Invalid(format!("latent width {c} exceeds {VIDEO_CHANNELS}")));
        }
        let codec = Codec::new((c < VIDEO_CHANNELS).then_some(c));
        let guider = PoseGuider::new(cp, model.config.seed);
        let text = TextEncoderConfig { max_tokens, channels: model.config.text_channels };
        Ok(Self { model, codec, guider, text, guider_window })
    }

    fn text_pair(&self, caption: &CaptionRecord) -> (vvt_core::caption::TextTokens, vvt_core::caption::TextTokens) {
        (encode_text(caption, &self.text), encode_text(&CaptionRecord::default(), &self.text))
    }

    fn encode_images(&self, images: &[Image]) -> Result<LatentVideo> {
        let mut out: Option<LatentVideo> = None;
        for img in images {
            let lat = self.codec.encode_image(&to_unit(img))?;
            match out.as_mut() {
                None => out = Some(lat),
                Some(o) => {
                    o.data.extend_from_slice(&lat.data);
                    o.t += 1;
                }
            }
        }
        out.ok_or_else(|| VvtError::Invalid("no images to encode".into()))
    }

    fn require_image_model(&self) -> Result<()> {
        if self.model.config.out_channels != IMAGE_CHANNELS {
            return Err(VvtError::Invalid(format!(
                "keyframe model must produce {IMAGE_CHANNELS}-channel latents, got {}",
                self.model.config.out_channels
            )));
        }
        Ok(())
    }

    /// Stage-1 clean target: the ground-truth keyframe crops.
    pub fn stage1_target(&self, crops: &[Image]) -> Result<LatentVideo> {
        self.encode_images(crops)
    }

    pub fn stage1_conditions(
        &self,
        agnostic: &[Image],
        masks: &[Mask],
        pose_maps: &[Image],
        garment: &Image,
        caption: &CaptionRecord,
    ) -> Result<Conditions> {
        self.require_image_model()?;
        let mut mask: Option<LatentMask> = None;
        for m in masks {
            let one = resize_mask_to_latent(&vec![m.clone(); TEMPORAL_FACTOR])?;
            match mask.as_mut() {
                None => mask = Some(one),
                Some(acc) => {
                    acc.data.extend_from_slice(&one.data);
                    acc.t += 1;
                }
            }
        }
        let (text, null_text) = self.text_pair(caption);
        Ok(Conditions {
            agnostic: self.encode_images(agnostic)?,
            mask: mask.ok_or_else(|| VvtError::Invalid("no keyframe masks".into()))?,
            pose: self.guider.encode_frames(pose_maps)?,
            keyframes: self.codec.encode_keyframes(&[to_unit(garment)])?,
            text,
            null_text,
        })
    }

    pub fn stage2_target(&self, crops: &[Image]) -> Result<LatentVideo> {
        Ok(self.codec.encode_video(&VideoTensor::from_images(crops)?)?)
    }

    pub fn stage2_conditions(
        &self,
        agnostic: &[Image],
        masks: &[Mask],
        pose_maps: &[Image],
        keyframes: &[Image],
        caption: &CaptionRecord,
    ) -> Result<Conditions> {
        let units: Vec<Image> = keyframes.iter().map(to_unit).collect();
        let (text, null_text) = self.text_pair(caption);
        Ok(Conditions {
            agnostic: self.codec.encode_video(&VideoTensor::from_images(agnostic)?)?,
            mask: resize_mask_to_latent(masks)?,
            pose: self.guider.forward(pose_maps, self.guider_window)?,
            keyframes: self.codec.encode_keyframes(&units)?,
            text,
            null_text,
        })
    }

    /// Splits a stacked image latent back into 0..=255 images.
    pub fn decode_images(&self, latent: &LatentVideo) -> Result<Vec<Image>> {
        let n = latent.slice_len();
        (0..latent.t)
            .map(|i| {
                let one = LatentVideo { t: 1, data: latent.data[i * n..(i + 1) * n].to_vec(), ..latent.clone() };
                Ok(to_pixels(&self.codec.decode_image(&one)?))
            })
            .collect()
    }

    pub fn decode_video(&self, latent: &LatentVideo) -> Result<Vec<Image>> {
        let video = self.codec.decode_video(latent)?;
        Ok((0..video.frames)
            .map(|i| {
                let mut f = video.frame_image(i);
                f.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 255.0));
                f
            })
            .collect())
    }
}

/// Frame ranges of each segment: `segment_frames` long, overlapping by one
/// latent slice.
pub fn segment_ranges(frames: usize, video: &VideoConfig) -> Result<Vec<Range<usize>>> {
    let n = video.segments_for(frames).ok_or_else(|| {
        VvtError::Invalid(format!(
            "{frames} frames do not fit {} + {}·(N−1) for any N ≥ 1",
            video.segment_frames,
            video.stride()
        ))
    })?;
    Ok((0..n).map(|s| s * video.stride()..s * video.stride() + video.segment_frames).collect())
}

/// Negative mean absolute difference to the agnostic images over pixels
/// outside the mask. Higher is better.
pub fn agnostic_similarity(images: &[Image], agnostic: &[Image], masks: &[Mask]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for ((img, ag), m) in images.iter().zip(agnostic).zip(masks) {
        for y in 0..img.height {
            for x in 0..img.width {
                if m.get(x, y) {
                    continue;
                }
                for c in 0..img.channels {
                    total += (img.get(x, y, c) - ag.get(x, y, c)).abs();
                }
                count += img.channels;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        -total / count as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Output {
    pub latent: LatentVideo,
    pub images: Vec<Image>,
    pub seed: u64,
    pub scores: Vec<f64>,
}

/// Best-of-`n` keyframe generation; candidate `i` uses seed
/// `sample.seed + i`.
pub fn generate_keyframes(
    kit: &ModelKit,
    cond: &Conditions,
    sample: &SampleConfig,
    best_of: usize,
    agnostic: &[Image],
    masks: &[Mask],
) -> Result<Stage1Output> {
    let n = cond.agnostic.data.len();
    let best = best_of_n(
        best_of,
        sample.seed,
        |seed| {
            let cfg = SampleConfig { seed, ..sample.clone() };
            sample_video(&kit.model, cond, &cfg, rng::noise(seed, n), None)
        },
        |lat| match kit.decode_images(lat) {
            Ok(images) => agnostic_similarity(&images, agnostic, masks),
            Err(_) => f64::NEG_INFINITY,
        },
    )?;
    Ok(Stage1Output {
        images: kit.decode_images(&best.output)?,
        latent: best.output,
        seed: best.seed,
        scores: best.scores,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Output {
    pub segments: Vec<LatentVideo>,
    pub latent: LatentVideo,
    pub frames: Vec<Image>,
    /// Max abs difference between each segment's first slice and the
    /// previous segment's last slice.
    pub junctions: Vec<f64>,
}

/// Samples every segment in order, seeding each with the previous one's
/// final latent slice.
pub fn generate_video(kit: &ModelKit, conds: &[Conditions], sample: &SampleConfig) -> Result<Stage2Output> {
    let segments = generate_segments(conds.len(), |i, clamp| {
        let n = conds[i].agnostic.data.len();
        sample_video(&kit.model, &conds[i], sample, segment_noise(sample.seed, i as u64, n), clamp)
    })?;
    let junctions = segments
        .windows(2)
        .map(|p| vvt_core::math::max_abs_diff(p[0].temporal_slice(p[0].t - 1), p[1].temporal_slice(0)))
        .collect();
    let latent = stitch_segments(&segments)?;
    let frames = kit.decode_video(&latent)?;
    Ok(Stage2Output { segments, latent, frames, junctions })
}

/// Runs `cfg.steps` optimizer steps over the whole sample set, calling
/// `on_step` after each.
pub fn train(
    model: &mut Dit,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepReport) -> Result<()>,
) -> Result<Vec<StepReport>> {
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut reports = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let r = trainer.training_step(model, samples)?;
        on_step(&r)?;
        reports.push(r);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_follow_the_overlap_rule() {
        let v = VideoConfig::default();
        assert_eq!(segment_ranges(40, &v).unwrap(), vec![0..16, 12..28, 24..40]);
        assert!(segment_ranges(17, &v).is_err());
    }

    #[test]
    fn similarity_ignores_masked_pixels() {
        let a = Image::filled(4, 4, 3, 10.0);
        let mut b = a.clone();
        b.set(0, 0, 0, 200.0);
        let m = Mask::from_fn(4, 4, |x, y| x == 0 && y == 0);
        assert_eq!(agnostic_similarity(&[b.clone()], std::slice::from_ref(&a), &[m]), 0.0);
        assert!(agnostic_similarity(&[b], &[a], &[Mask::new(4, 4)]) < 0.0);
    }
}
