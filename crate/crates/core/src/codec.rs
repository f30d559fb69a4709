//! Toy video codec and token layout.
//!
//! Encoding folds every `4 × 16 × 16` pixel block (three colour channels) into
//! one latent cell of `3072` channels, then applies a fixed orthogonal
//! butterfly mixing across channels. The map is linear and exactly
//! invertible, so latent-space invariants can be checked to rounding error.
//! Single images use the spatial fold only (`16 × 16 × 3 = 768` channels),
//! which keeps keyframe and video tokens on the same `h × w` grid.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::math::{cos, sin};
use crate::raster::{Image, Mask};
use crate::{Error, Result};

pub const TEMPORAL_FACTOR: usize = 4;
pub const SPATIAL_FACTOR: usize = 16;
pub const PIXEL_CHANNELS: usize = 3;
/// Channels of a video latent cell.
pub const VIDEO_CHANNELS: usize = PIXEL_CHANNELS * TEMPORAL_FACTOR * SPATIAL_FACTOR * SPATIAL_FACTOR;
/// Channels of a single-image latent cell.
pub const IMAGE_CHANNELS: usize = PIXEL_CHANNELS * SPATIAL_FACTOR * SPATIAL_FACTOR;

/// `T × H × W × 3` clip with values in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl VideoTensor {
    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        Self { frames, height, width, data: vec![0.0; frames * height * width * PIXEL_CHANNELS] }
    }

    /// Builds a clip from 0..=255 RGB images.
    pub fn from_images(images: &[Image]) -> Result<Self> {
        let first = images.first().ok_or(Error::Empty("video frames"))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for (i, img) in images.iter().enumerate() {
            if img.width != first.width || img.height != first.height || img.channels != PIXEL_CHANNELS {
                return Err(Error::Shape(format!("frame {i} has a different shape")));
            }
            data.extend(img.data.iter().map(|&v| v / 127.5 - 1.0));
        }
        Ok(Self { frames: images.len(), height: first.height, width: first.width, data })
    }

    /// Frame `i` as a 0..=255 RGB image (unclamped).
    pub fn frame_image(&self, i: usize) -> Image {
        let n = self.height * self.width * PIXEL_CHANNELS;
        Image {
            width: self.width,
            height: self.height,
            channels: PIXEL_CHANNELS,
            data: self.data[i * n..(i + 1) * n].iter().map(|&v| (v + 1.0) * 127.5).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        check_div("T", self.frames, TEMPORAL_FACTOR)?;
        check_div("H", self.height, SPATIAL_FACTOR)?;
        check_div("W", self.width, SPATIAL_FACTOR)?;
        if self.data.len() != self.frames * self.height * self.width * PIXEL_CHANNELS {
            return Err(Error::Shape("video buffer length".into()));
        }
        Ok(())
    }
}

fn check_div(dim: &'static str, value: usize, divisor: usize) -> Result<()> {
    if value == 0 || !value.is_multiple_of(divisor) {
        return Err(Error::Divisibility { dim, value, divisor });
    }
    Ok(())
}

/// `t × h × w × c` latent grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl LatentVideo {
    pub fn zeros(t: usize, h: usize, w: usize, c: usize) -> Self {
        Self { t, h, w, c, data: vec![0.0; t * h * w * c] }
    }

    pub fn slice_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn temporal_slice(&self, i: usize) -> &[f64] {
        let n = self.slice_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn temporal_slice_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.slice_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn same_grid(&self, other: &LatentVideo) -> bool {
        self.t == other.t && self.h == other.h && self.w == other.w
    }

    pub fn cell(&self, ti: usize, hi: usize, wi: usize) -> &[f64] {
        let i = ((ti * self.h + hi) * self.w + wi) * self.c;
        &self.data[i..i + self.c]
    }
}

/// Fixed orthogonal channel mixer: a cascade of butterfly Givens rotations
/// with strides 1, 2, 4, ... below the channel count.
#[derive(Debug, Clone)]
pub struct ChannelMixer {
    n: usize,
    /// `(i, j, cos, sin)` per rotation, in application order.
    rotations: Vec<(usize, usize, f64, f64)>,
}

impl ChannelMixer {
    pub fn new(n: usize) -> Self {
        let mut rotations = Vec::new();
        let mut stride = 1;
        let mut stage = 0usize;
        while stride < n {
            for i in 0..n {
                let j = i | stride;
                if i & stride == 0 && j < n {
                    let theta = 0.45 + 0.3 * sin(i as f64 * 1.618 + stage as f64 * 0.7);
                    rotations.push((i, j, cos(theta), sin(theta)));
                }
            }
            stride <<= 1;
            stage += 1;
        }
        Self { n, rotations }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn forward(&self, v: &mut [f64]) {
        for &(i, j, c, s) in &self.rotations {
            let (a, b) = (v[i], v[j]);
            v[i] = c * a - s * b;
            v[j] = s * a + c * b;
        }
    }

    pub fn inverse(&self, v: &mut [f64]) {
        for &(i, j, c, s) in self.rotations.iter().rev() {
            let (a, b) = (v[i], v[j]);
            v[i] = c * a + s * b;
            v[j] = -s * a + c * b;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Codec {
    video_mixer: ChannelMixer,
    image_mixer: ChannelMixer,
    /// Keep only the first `n` latent channels (lossy). Off by default.
    pub truncate: Option<usize>,
}

impl Default for Codec {
    fn default() -> Self {
        Self::new(None)
    }
}

impl Codec {
    pub fn new(truncate: Option<usize>) -> Self {
        Self {
            video_mixer: ChannelMixer::new(VIDEO_CHANNELS),
            image_mixer: ChannelMixer::new(IMAGE_CHANNELS),
            truncate,
        }
    }

    pub fn latent_channels(&self) -> usize {
        self.truncate.map_or(VIDEO_CHANNELS, |n| n.min(VIDEO_CHANNELS))
    }

    pub fn encode_video(&self, video: &VideoTensor) -> Result<LatentVideo> {
        video.validate()?;
        let (t, h, w) = (video.frames / TEMPORAL_FACTOR, video.height / SPATIAL_FACTOR, video.width / SPATIAL_FACTOR);
        let c = self.latent_channels();
        let mut out = LatentVideo::zeros(t, h, w, c);
        let mut cell = vec![0.0; VIDEO_CHANNELS];
        for ti in 0..t {
            for hi in 0..h {
                for wi in 0..w {
                    let mut k = 0;
                    for dt in 0..TEMPORAL_FACTOR {
                        for dy in 0..SPATIAL_FACTOR {
                            let f = ti * TEMPORAL_FACTOR + dt;
                            let y = hi * SPATIAL_FACTOR + dy;
                            let start = ((f * video.height + y) * video.width + wi * SPATIAL_FACTOR) * PIXEL_CHANNELS;
                            let n = SPATIAL_FACTOR * PIXEL_CHANNELS;
                            cell[k..k + n].copy_from_slice(&video.data[start..start + n]);
                            k += n;
                        }
                    }
                    self.video_mixer.forward(&mut cell);
                    let o = ((ti * h + hi) * w + wi) * c;
                    out.data[o..o + c].copy_from_slice(&cell[..c]);
                }
            }
        }
        Ok(out)
    }

    pub fn decode_video(&self, latent: &LatentVideo) -> Result<VideoTensor> {
        if latent.c != self.latent_channels() || latent.data.len() != latent.t * latent.h * latent.w * latent.c {
            return Err(Error::Shape(format!(
                "latent has {} channels, codec expects {}",
                latent.c,
                self.latent_channels()
            )));
        }
        let mut video =
            VideoTensor::zeros(latent.t * TEMPORAL_FACTOR, latent.h * SPATIAL_FACTOR, latent.w * SPATIAL_FACTOR);
        let mut cell = vec![0.0; VIDEO_CHANNELS];
        for ti in 0..latent.t {
            for hi in 0..latent.h {
                for wi in 0..latent.w {
                    cell.fill(0.0);
                    cell[..latent.c].copy_from_slice(latent.cell(ti, hi, wi));
                    self.video_mixer.inverse(&mut cell);
                    let mut k = 0;
                    for dt in 0..TEMPORAL_FACTOR {
                        for dy in 0..SPATIAL_FACTOR {
                            let f = ti * TEMPORAL_FACTOR + dt;
                            let y = hi * SPATIAL_FACTOR + dy;
                            let start = ((f * video.height + y) * video.width + wi * SPATIAL_FACTOR) * PIXEL_CHANNELS;
                            let n = SPATIAL_FACTOR * PIXEL_CHANNELS;
                            video.data[start..start + n].copy_from_slice(&cell[k..k + n]);
                            k += n;
                        }
                    }
                }
            }
        }
        Ok(video)
    }

    /// Spatial-only encode of one image in [-1, 1]: `(h, w, 768)`.
    pub fn encode_image(&self, image: &Image) -> Result<LatentVideo> {
        if image.channels != PIXEL_CHANNELS {
            return Err(Error::Shape(format!("image has {} channels", image.channels)));
        }
        check_div("H", image.height, SPATIAL_FACTOR)?;
        check_div("W", image.width, SPATIAL_FACTOR)?;
        let (h, w) = (image.height / SPATIAL_FACTOR, image.width / SPATIAL_FACTOR);
        let mut out = LatentVideo::zeros(1, h, w, IMAGE_CHANNELS);
        let n = SPATIAL_FACTOR * PIXEL_CHANNELS;
        for hi in 0..h {
            for wi in 0..w {
                let o = (hi * w + wi) * IMAGE_CHANNELS;
                let cell = &mut out.data[o..o + IMAGE_CHANNELS];
                for dy in 0..SPATIAL_FACTOR {
                    let start = image.index(wi * SPATIAL_FACTOR, hi * SPATIAL_FACTOR + dy, 0);
                    cell[dy * n..(dy + 1) * n].copy_from_slice(&image.data[start..start + n]);
                }
                self.image_mixer.forward(cell);
            }
        }
        Ok(out)
    }

    pub fn decode_image(&self, latent: &LatentVideo) -> Result<Image> {
        if latent.t != 1 || latent.c != IMAGE_CHANNELS {
            return Err(Error::Shape(format!(
                "image latent must be (1, h, w, {IMAGE_CHANNELS}), got ({}, {}, {}, {})",
                latent.t, latent.h, latent.w, latent.c
            )));
        }
        let mut img = Image::filled(latent.w * SPATIAL_FACTOR, latent.h * SPATIAL_FACTOR, PIXEL_CHANNELS, 0.0);
        let n = SPATIAL_FACTOR * PIXEL_CHANNELS;
        let mut cell = vec![0.0; IMAGE_CHANNELS];
        for hi in 0..latent.h {
            for wi in 0..latent.w {
                cell.copy_from_slice(latent.cell(0, hi, wi));
                self.image_mixer.inverse(&mut cell);
                for dy in 0..SPATIAL_FACTOR {
                    let start = img.index(wi * SPATIAL_FACTOR, hi * SPATIAL_FACTOR + dy, 0);
                    img.data[start..start + n].copy_from_slice(&cell[dy * n..(dy + 1) * n]);
                }
            }
        }
        Ok(img)
    }

    /// Encodes `k` keyframes (values in [-1, 1]) into image-stream tokens,
    /// `l_i = k · h · w`.
    pub fn encode_keyframes(&self, images: &[Image]) -> Result<TokenSequence> {
        let mut seq = TokenSequence::empty(Stream::Image, IMAGE_CHANNELS);
        let Some(first) = images.first() else {
            return Ok(seq);
        };
        for (k, img) in images.iter().enumerate() {
            if img.width != first.width || img.height != first.height {
                return Err(Error::Shape(format!(
                    "keyframe {k} is {}x{}, keyframe 0 is {}x{}",
                    img.width, img.height, first.width, first.height
                )));
            }
            let lat = self.encode_image(img)?;
            seq.data.extend_from_slice(&lat.data);
            for hi in 0..lat.h {
                for wi in 0..lat.w {
                    seq.index.push([k, hi, wi]);
                }
            }
        }
        Ok(seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Text = 0,
    Image = 1,
    Video = 2,
}

impl Stream {
    pub fn tag(self) -> u32 {
        self as u32
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Stream::Text),
            1 => Some(Stream::Image),
            2 => Some(Stream::Video),
            _ => None,
        }
    }
}

/// Flattened tokens with their grid coordinates.
///
/// `index[i]` is `(t, h, w)` for video tokens, `(k, h, w)` for keyframe
/// tokens and `(position, 0, 0)` for text.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub stream: Stream,
    pub channels: usize,
    pub data: Vec<f64>,
    pub index: Vec<[usize; 3]>,
}

impl TokenSequence {
    pub fn empty(stream: Stream, channels: usize) -> Self {
        Self { stream, channels, data: Vec::new(), index: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }
}

/// Row-major (t, then h, then w) tokens, `l_v = t · h · w`.
pub fn patchify(latent: &LatentVideo) -> TokenSequence {
    let mut index = Vec::with_capacity(latent.t * latent.h * latent.w);
    for ti in 0..latent.t {
        for hi in 0..latent.h {
            for wi in 0..latent.w {
                index.push([ti, hi, wi]);
            }
        }
    }
    TokenSequence { stream: Stream::Video, channels: latent.c, data: latent.data.clone(), index }
}

/// Scatters tokens back onto a `(t, h, w)` grid through their index map.
pub fn unpatchify(tokens: &TokenSequence, grid: (usize, usize, usize)) -> Result<LatentVideo> {
    let (t, h, w) = grid;
    if tokens.len() != t * h * w {
        return Err(Error::Shape(format!("{} tokens for a {t}x{h}x{w} grid", tokens.len())));
    }
    let c = tokens.channels;
    let mut out = LatentVideo::zeros(t, h, w, c);
    let mut seen = vec![false; t * h * w];
    for (i, &[ti, hi, wi]) in tokens.index.iter().enumerate() {
        if ti >= t || hi >= h || wi >= w {
            return Err(Error::Shape(format!("token {i} index out of grid")));
        }
        let cell = (ti * h + hi) * w + wi;
        if core::mem::replace(&mut seen[cell], true) {
            return Err(Error::Shape(format!("token {i} duplicates cell {cell}")));
        }
        out.data[cell * c..(cell + 1) * c].copy_from_slice(tokens.token(i));
    }
    Ok(out)
}

/// Binary `(t, h, w)` mask on the latent grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentMask {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

/// Max-pools per-frame masks by 4 in time and 16 in space.
pub fn resize_mask_to_latent(masks: &[Mask]) -> Result<LatentMask> {
    let first = masks.first().ok_or(Error::Empty("mask frames"))?;
    check_div("T", masks.len(), TEMPORAL_FACTOR)?;
    check_div("H", first.height, SPATIAL_FACTOR)?;
    check_div("W", first.width, SPATIAL_FACTOR)?;
    if masks.iter().any(|m| m.width != first.width || m.height != first.height) {
        return Err(Error::Shape("mask frames differ in size".into()));
    }
    let (t, h, w) = (masks.len() / TEMPORAL_FACTOR, first.height / SPATIAL_FACTOR, first.width / SPATIAL_FACTOR);
    let mut data = vec![0u8; t * h * w];
    for (f, m) in masks.iter().enumerate() {
        for y in 0..m.height {
            for x in 0..m.width {
                if m.get(x, y) {
                    data[((f / TEMPORAL_FACTOR) * h + y / SPATIAL_FACTOR) * w + x / SPATIAL_FACTOR] = 1;
                }
            }
        }
    }
    Ok(LatentMask { t, h, w, data })
}
