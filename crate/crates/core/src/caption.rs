//! Caption schema, caption edits, the hashed toy text encoder, the pose
//! guider and channel-wise conditioning assembly.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::codec::{LatentMask, LatentVideo, SPATIAL_FACTOR, TEMPORAL_FACTOR};
use crate::math::{exp, sqrt};
use crate::raster::Image;
use crate::rng::{self, streams};
use crate::{Error, Result};

/// Three-field video description. Field names on the wire follow the
/// captioning template verbatim, including `APPERANCE`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionRecord {
    #[serde(rename = "ENVIRONMENT")]
    pub environment: String,
    #[serde(rename = "APPERANCE")]
    pub appearance: String,
    #[serde(rename = "MOTION")]
    pub motion: String,
}

impl CaptionRecord {
    pub fn new(environment: &str, appearance: &str, motion: &str) -> Self {
        Self { environment: environment.into(), appearance: appearance.into(), motion: motion.into() }
    }
}

pub fn swap_appearance(caption: &CaptionRecord, garment_description: &str) -> CaptionRecord {
    CaptionRecord { appearance: garment_description.into(), ..caption.clone() }
}

/// Blanks appearance and environment independently. Motion is never dropped.
pub fn drop_conditions(
    caption: &CaptionRecord,
    seed: u64,
    p_drop_appearance: f64,
    p_drop_environment: f64,
) -> Result<CaptionRecord> {
    for p in [p_drop_appearance, p_drop_environment] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("drop probability {p} outside [0, 1]")));
        }
    }
    let u_app = rng::uniform(&mut rng::at(seed, streams::CAPTION_DROP, 0));
    let u_env = rng::uniform(&mut rng::at(seed, streams::CAPTION_DROP, 1));
    let mut out = caption.clone();
    if u_app < p_drop_appearance {
        out.appearance.clear();
    }
    if u_env < p_drop_environment {
        out.environment.clear();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    pub max_tokens: usize,
    pub channels: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self { max_tokens: 128, channels: 32 }
    }
}

/// `max_tokens × channels` block; rows past `len` hold the null vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTokens {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl TextTokens {
    pub fn rows(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }
}

/// 64-bit FNV-1a over a field tag and the word bytes.
pub fn word_hash(field: u8, word: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in core::iter::once(field).chain(word.bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

fn caption_words(caption: &CaptionRecord) -> impl Iterator<Item = (u8, &str)> {
    [(0u8, caption.environment.as_str()), (1, caption.appearance.as_str()), (2, caption.motion.as_str())]
        .into_iter()
        .flat_map(|(tag, text)| text.split_whitespace().map(move |w| (tag, w)))
}

pub fn encode_text(caption: &CaptionRecord, cfg: &TextEncoderConfig) -> TextTokens {
    let mut data = vec![0.0; cfg.max_tokens * cfg.channels];
    let mut len = 0;
    for (tag, word) in caption_words(caption).take(cfg.max_tokens) {
        let mut r = rng::stream(word_hash(tag, word), streams::TEXT_HASH);
        let row = &mut data[len * cfg.channels..(len + 1) * cfg.channels];
        for v in row.iter_mut() {
            *v = rng::normal(&mut r);
        }
        len += 1;
    }
    TextTokens { channels: cfg.channels, len, data }
}

/// Number of distinct words in `vocab` that share a hash with another word.
pub fn hash_collisions<'a>(vocab: impl IntoIterator<Item = (u8, &'a str)>) -> usize {
    let mut seen: Vec<(u64, u8, &str)> = Vec::new();
    let mut collisions = 0;
    for (tag, w) in vocab {
        let h = word_hash(tag, w);
        if seen.iter().any(|&(sh, st, sw)| sh == h && (st, sw) != (tag, w)) {
            collisions += 1;
        }
        if !seen.iter().any(|&(_, st, sw)| (st, sw) == (tag, w)) {
            seen.push((h, tag, w));
        }
    }
    collisions
}

/// Per-frame skeleton-map encoder followed by windowed temporal attention.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGuider {
    pub channels: usize,
    /// `256 × channels` projection of each 16×16 map cell.
    pub projection: Vec<f64>,
}

impl PoseGuider {
    pub fn new(channels: usize, seed: u64) -> Self {
        let fan_in = SPATIAL_FACTOR * SPATIAL_FACTOR;
        let mut r = rng::stream(seed, streams::INIT);
        let scale = 4.0 / sqrt(fan_in as f64);
        let projection = rng::normal_vec(&mut r, fan_in * channels).into_iter().map(|v| v * scale).collect();
        Self { channels, projection }
    }

    /// `(T, h, w, channels)` embedding of each frame, no temporal mixing.
    pub fn encode_frames(&self, maps: &[Image]) -> Result<LatentVideo> {
        let first = maps.first().ok_or(Error::Empty("skeleton maps"))?;
        if first.height % SPATIAL_FACTOR != 0 || first.width % SPATIAL_FACTOR != 0 {
            return Err(Error::Shape(format!(
                "skeleton map {}x{} not divisible by {SPATIAL_FACTOR}",
                first.width, first.height
            )));
        }
        let (h, w) = (first.height / SPATIAL_FACTOR, first.width / SPATIAL_FACTOR);
        let cp = self.channels;
        let mut out = LatentVideo::zeros(maps.len(), h, w, cp);
        for (f, m) in maps.iter().enumerate() {
            if m.width != first.width || m.height != first.height || m.channels != 1 {
                return Err(Error::Shape(format!("skeleton map {f} has a different shape")));
            }
            for hi in 0..h {
                for wi in 0..w {
                    let o = ((f * h + hi) * w + wi) * cp;
                    for dy in 0..SPATIAL_FACTOR {
                        for dx in 0..SPATIAL_FACTOR {
                            let v = m.get(wi * SPATIAL_FACTOR + dx, hi * SPATIAL_FACTOR + dy, 0);
                            if v == 0.0 {
                                continue;
                            }
                            let row = (dy * SPATIAL_FACTOR + dx) * cp;
                            for c in 0..cp {
                                out.data[o + c] += v * self.projection[row + c];
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Similarity-weighted average over a `±window` frame neighbourhood,
    /// independently per grid cell.
    pub fn smooth(&self, frames: &LatentVideo, window: i64) -> Result<LatentVideo> {
        if window < 0 {
            return Err(Error::InvalidArgument(format!("smoothing window {window} is negative")));
        }
        if window == 0 {
            return Ok(frames.clone());
        }
        let win = window as usize;
        let (t, h, w, c) = (frames.t, frames.h, frames.w, frames.c);
        let scale = 1.0 / sqrt(c as f64);
        let mut out = LatentVideo::zeros(t, h, w, c);
        let mut weights = Vec::with_capacity(2 * win + 1);
        for hi in 0..h {
            for wi in 0..w {
                for f in 0..t {
                    let q = frames.cell(f, hi, wi);
                    let lo = f.saturating_sub(win);
                    let hi_f = (f + win).min(t - 1);
                    weights.clear();
                    for g in lo..=hi_f {
                        weights.push(crate::math::dot(q, frames.cell(g, hi, wi)) * scale);
                    }
                    let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for wgt in weights.iter_mut() {
                        *wgt = exp(*wgt - max);
                        total += *wgt;
                    }
                    let o = ((f * h + hi) * w + wi) * c;
                    for (g, wgt) in (lo..=hi_f).zip(&weights) {
                        let k = frames.cell(g, hi, wi);
                        for ch in 0..c {
                            out.data[o + ch] += wgt / total * k[ch];
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Full guider: per-frame encode, temporal smoothing, then 4× temporal
    /// mean pooling onto the latent grid.
    pub fn forward(&self, maps: &[Image], window: i64) -> Result<LatentVideo> {
        if window < 0 {
            return Err(Error::InvalidArgument(format!("smoothing window {window} is negative")));
        }
        if !maps.len().is_multiple_of(TEMPORAL_FACTOR) {
            return Err(Error::Divisibility { dim: "T", value: maps.len(), divisor: TEMPORAL_FACTOR });
        }
        let smoothed = self.smooth(&self.encode_frames(maps)?, window)?;
        Ok(temporal_mean_pool(&smoothed))
    }
}

fn temporal_mean_pool(frames: &LatentVideo) -> LatentVideo {
    let t = frames.t / TEMPORAL_FACTOR;
    let n = frames.slice_len();
    let mut out = LatentVideo::zeros(t, frames.h, frames.w, frames.c);
    for ti in 0..t {
        let dst = &mut out.data[ti * n..(ti + 1) * n];
        for dt in 0..TEMPORAL_FACTOR {
            for (d, s) in dst.iter_mut().zip(frames.temporal_slice(ti * TEMPORAL_FACTOR + dt)) {
                *d += s;
            }
        }
        for d in dst.iter_mut() {
            *d /= TEMPORAL_FACTOR as f64;
        }
    }
    out
}

/// Sum over frames and cells of the L1 change between consecutive frames.
pub fn temporal_total_variation(frames: &LatentVideo) -> f64 {
    (1..frames.t)
        .map(|f| {
            frames.temporal_slice(f).iter().zip(frames.temporal_slice(f - 1)).map(|(a, b)| (a - b).abs()).sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditioningPart {
    Agnostic,
    Mask,
    Noise,
    Pose,
}

/// Channel-wise concatenation `[agnostic (c) | mask (1) | noise (c) | pose (c_p)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningLatent {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub c_pose: usize,
    pub data: Vec<f64>,
}

impl ConditioningLatent {
    pub fn channels(&self) -> usize {
        2 * self.c + 1 + self.c_pose
    }

    fn range(&self, part: ConditioningPart) -> core::ops::Range<usize> {
        let c = self.c;
        match part {
            ConditioningPart::Agnostic => 0..c,
            ConditioningPart::Mask => c..c + 1,
            ConditioningPart::Noise => c + 1..2 * c + 1,
            ConditioningPart::Pose => 2 * c + 1..2 * c + 1 + self.c_pose,
        }
    }

    pub fn part(&self, part: ConditioningPart) -> LatentVideo {
        let r = self.range(part);
        let ch = self.channels();
        let mut out = LatentVideo::zeros(self.t, self.h, self.w, r.len());
        for (cell, dst) in out.data.chunks_mut(r.len()).enumerate() {
            dst.copy_from_slice(&self.data[cell * ch + r.start..cell * ch + r.end]);
        }
        out
    }
}

pub fn assemble_conditioning(
    agnostic: &LatentVideo,
    mask: &LatentMask,
    noise: &LatentVideo,
    pose: &LatentVideo,
) -> Result<ConditioningLatent> {
    let (t, h, w) = (agnostic.t, agnostic.h, agnostic.w);
    if (mask.t, mask.h, mask.w) != (t, h, w) {
        return Err(Error::GridMismatch("mask"));
    }
    if !noise.same_grid(agnostic) {
        return Err(Error::GridMismatch("noise"));
    }
    if !pose.same_grid(agnostic) {
        return Err(Error::GridMismatch("pose"));
    }
    if noise.c != agnostic.c {
        return Err(Error::Shape(format!("noise has {} channels, agnostic latent has {}", noise.c, agnostic.c)));
    }
    let (c, cp) = (agnostic.c, pose.c);
    let ch = 2 * c + 1 + cp;
    let cells = t * h * w;
    let mut data = Vec::with_capacity(cells * ch);
    for i in 0..cells {
        data.extend_from_slice(&agnostic.data[i * c..(i + 1) * c]);
        data.push(f64::from(mask.data[i]));
        data.extend_from_slice(&noise.data[i * c..(i + 1) * c]);
        data.extend_from_slice(&pose.data[i * cp..(i + 1) * cp]);
    }
    Ok(ConditioningLatent { t, h, w, c, c_pose: cp, data })
}
