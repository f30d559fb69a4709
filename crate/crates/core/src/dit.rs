//! Toy multi-stream diffusion transformer.
//!
//! Text, image and video tokens keep separate projection weights, are
//! concatenated along the token axis for one full self-attention, and are
//! split back by offset afterwards. The image stream reuses the video
//! stream's base weights (same [`ParamId`]s) with its own LoRA adapters.
//! Text weights, the timestep MLP and all base weights are frozen; the input
//! projections, the adapters and the velocity head train.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::{softmax_in_place, Gradients, Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::math::{cos, powf, sin, sqrt};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub trainable: bool,
}

impl ParamGroup {
    pub fn mat(&self) -> Mat {
        Mat::from_vec(self.rows, self.cols, self.data.clone())
    }
}

/// Named parameter groups. A group is stored once no matter how many
/// streams read it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    groups: Vec<ParamGroup>,
}

impl ParamStore {
    pub fn add(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>, trainable: bool) -> ParamId {
        assert!(self.find(name).is_none(), "duplicate parameter group {name}");
        assert_eq!(data.len(), rows * cols);
        self.groups.push(ParamGroup { name: name.to_string(), rows, cols, data, trainable });
        ParamId(self.groups.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.groups.iter().position(|g| g.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &ParamGroup {
        &self.groups[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamGroup {
        &mut self.groups[id.0]
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [ParamGroup] {
        &mut self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Lazily binds parameter groups to tape leaves, once per group.
///
/// With `track` off every group becomes a constant, which makes inference
/// skip all gradient bookkeeping.
pub struct Binder<'a> {
    store: &'a ParamStore,
    vars: Vec<Option<Var>>,
    track: bool,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore, track: bool) -> Self {
        Self { store, vars: vec![None; store.len()], track }
    }

    pub fn var(&mut self, tape: &mut Tape, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let g = self.store.get(id);
        let v = if self.track && g.trainable { tape.param(g.mat()) } else { tape.constant(g.mat()) };
        self.vars[id.0] = Some(v);
        v
    }

    /// Per-group gradients; groups that were never bound or are frozen get
    /// `None`.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Option<Mat>> {
        self.vars.iter().map(|v| v.and_then(|v| grads.get(v).cloned())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearIds {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoraIds {
    pub down: ParamId,
    pub up: ParamId,
}

/// A base linear map with an optional low-rank adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjIds {
    pub base: LinearIds,
    pub lora: Option<LoraIds>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamIds {
    pub q: ProjIds,
    pub k: ProjIds,
    pub v: ProjIds,
    pub o: ProjIds,
    pub ff1: ProjIds,
    pub ff2: ProjIds,
    /// `time → [shift1 | scale1 | shift2 | scale2]`.
    pub modulation: LinearIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockIds {
    pub text: StreamIds,
    pub image: StreamIds,
    pub video: StreamIds,
}

/// A standalone low-rank adapter, `y = base(x) + s · (x A) B`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub scale: f64,
    /// `d_in × r`.
    pub down: Mat,
    /// `r × d_out`.
    pub up: Mat,
}

impl LoraAdapter {
    pub fn zero_init(d_in: usize, d_out: usize, rank: usize, scale: f64, seed: u64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidArgument("LoRA rank must be at least 1".into()));
        }
        let std = 1.0 / sqrt(d_in as f64);
        let down = rng::normal_vec(&mut rng::stream(seed, rng::streams::INIT), d_in * rank)
            .into_iter()
            .map(|v| v * std)
            .collect();
        Ok(Self { scale, down: Mat::from_vec(d_in, rank, down), up: Mat::zeros(rank, d_out) })
    }

    pub fn rank(&self) -> usize {
        self.down.cols
    }
}

/// Row-vector convention: each row of `x` is one input.
pub fn lora_linear(x: &Mat, base: &Mat, adapter: &LoraAdapter) -> Result<Mat> {
    if x.cols != base.rows {
        return Err(Error::Shape(format!("input width {} vs base {}", x.cols, base.rows)));
    }
    if adapter.down.rows != base.rows || adapter.up.cols != base.cols || adapter.down.cols != adapter.up.rows {
        return Err(Error::Shape("adapter does not match base weight".into()));
    }
    let mut y = x.matmul(base);
    let delta = x.matmul(&adapter.down).matmul(&adapter.up);
    for (a, b) in y.data.iter_mut().zip(&delta.data) {
        *a += adapter.scale * b;
    }
    Ok(y)
}

/// Text, image and video rows joined along the token axis.
#[derive(Debug, Clone, PartialEq)]
pub struct JointBatch {
    pub text: Mat,
    pub image: Mat,
    pub video: Mat,
}

impl JointBatch {
    /// Concatenation plus the boundary offsets `[0, l_t, l_t + l_i, total]`.
    pub fn concat(&self) -> Result<(Mat, [usize; 4])> {
        let d = self.video.cols;
        if self.text.cols != d || self.image.cols != d {
            return Err(Error::Shape("streams differ in width".into()));
        }
        let (lt, li, lv) = (self.text.rows, self.image.rows, self.video.rows);
        let mut data = Vec::with_capacity((lt + li + lv) * d);
        data.extend_from_slice(&self.text.data);
        data.extend_from_slice(&self.image.data);
        data.extend_from_slice(&self.video.data);
        Ok((Mat::from_vec(lt + li + lv, d, data), [0, lt, lt + li, lt + li + lv]))
    }

    pub fn demux(joint: &Mat, offsets: [usize; 4]) -> Result<Self> {
        if offsets[3] != joint.rows || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Shape("offsets do not partition the sequence".into()));
        }
        let part =
            |a: usize, b: usize| Mat::from_vec(b - a, joint.cols, joint.data[a * joint.cols..b * joint.cols].to_vec());
        Ok(Self {
            text: part(offsets[0], offsets[1]),
            image: part(offsets[1], offsets[2]),
            video: part(offsets[2], offsets[3]),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DitConfig {
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ff_mult: usize,
    pub lora_rank: usize,
    pub lora_scale: f64,
    pub lora_on_ff: bool,
    pub video_in_channels: usize,
    pub image_channels: usize,
    pub text_channels: usize,
    pub out_channels: usize,
    pub time_channels: usize,
    /// Multiplier on the default `1/√fan_in` init std of the modulation
    /// weights; 0 gives zero-initialised modulation.
    pub modulation_init: f64,
    /// Same for the velocity head.
    pub head_init: f64,
    pub seed: u64,
}

impl DitConfig {
    /// Video denoiser over `[agnostic | mask | noisy | pose]` cells.
    pub fn video(latent_channels: usize, pose_channels: usize, image_channels: usize, text_channels: usize) -> Self {
        Self {
            width: 64,
            heads: 4,
            blocks: 2,
            ff_mult: 2,
            lora_rank: 4,
            lora_scale: 1.0,
            lora_on_ff: false,
            video_in_channels: 2 * latent_channels + 1 + pose_channels,
            image_channels,
            text_channels,
            out_channels: latent_channels,
            time_channels: 64,
            modulation_init: 1.0,
            head_init: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return bad("width must be a positive multiple of heads");
        }
        if self.blocks == 0 || self.ff_mult == 0 {
            return bad("blocks and ff_mult must be positive");
        }
        if self.video_in_channels == 0 || self.out_channels == 0 || self.image_channels == 0 || self.text_channels == 0
        {
            return bad("channel counts must be positive");
        }
        if self.time_channels == 0 || !self.time_channels.is_multiple_of(2) {
            return bad("time_channels must be positive and even");
        }
        if !(self.lora_scale.is_finite()) {
            return bad("lora_scale must be finite");
        }
        Ok(())
    }
}

/// Inputs of one forward pass. Positions are `(t, h, w)`; keyframe tokens
/// carry negative temporal tags (see [`keyframe_positions`]).
#[derive(Debug, Clone, PartialEq)]
pub struct DitInput {
    pub text: Mat,
    pub image: Mat,
    pub image_pos: Vec<[f64; 3]>,
    pub video: Mat,
    pub video_pos: Vec<[f64; 3]>,
    pub tau: f64,
}

pub fn grid_positions(index: &[[usize; 3]]) -> Vec<[f64; 3]> {
    index.iter().map(|&[t, h, w]| [t as f64, h as f64, w as f64]).collect()
}

/// Keyframe `k` sits at temporal position `-(k + 1)`, outside the timeline.
pub fn keyframe_positions(index: &[[usize; 3]]) -> Vec<[f64; 3]> {
    index.iter().map(|&[k, h, w]| [-(k as f64) - 1.0, h as f64, w as f64]).collect()
}

fn frequencies(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| 1.0 / powf(10_000.0, i as f64 / n as f64))
}

/// `[sin, cos]` pairs of `pos` at `dim / 2` frequencies.
pub fn sinusoidal(pos: f64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (i, f) in frequencies(dim / 2).enumerate() {
        out[2 * i] = sin(pos * f);
        out[2 * i + 1] = cos(pos * f);
    }
    out
}

/// Each axis gets `2·⌊d/6⌋` channels; leftover channels stay zero.
pub fn positional_3d(pos: &[[f64; 3]], d: usize) -> Mat {
    let per = 2 * (d / 6);
    let mut m = Mat::zeros(pos.len(), d);
    for (r, p) in pos.iter().enumerate() {
        for (axis, &coord) in p.iter().enumerate() {
            let enc = sinusoidal(coord, per);
            m.data[r * d + axis * per..r * d + (axis + 1) * per].copy_from_slice(&enc);
        }
    }
    m
}

pub fn positional_1d(len: usize, d: usize) -> Mat {
    let mut m = Mat::zeros(len, d);
    for r in 0..len {
        m.data[r * d..(r + 1) * d].copy_from_slice(&sinusoidal(r as f64, d));
    }
    m
}

/// Row-stochastic scaled dot-product weights `softmax(q kᵀ / √d)`.
pub fn attention_weights(q: &Mat, k: &Mat) -> Mat {
    let mut s = q.matmul_bt(k);
    let scale = 1.0 / sqrt(q.cols as f64);
    for v in s.data.iter_mut() {
        *v *= scale;
    }
    for row in s.data.chunks_mut(k.rows.max(1)) {
        softmax_in_place(row);
    }
    s
}

/// One contiguous run of tokens that shares projection weights.
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a> {
    pub x: Var,
    pub weights: &'a StreamIds,
}

pub struct Dit {
    pub config: DitConfig,
    pub store: ParamStore,
    text_in: LinearIds,
    image_in: LinearIds,
    video_in: LinearIds,
    time1: LinearIds,
    time2: LinearIds,
    blocks: Vec<BlockIds>,
    head: LinearIds,
}

fn name_counter(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // Keep the word position well inside the 68-bit ChaCha counter.
    h >> 8
}

struct Builder {
    store: ParamStore,
    seed: u64,
}

impl Builder {
    /// Values depend only on `(seed, name)`, so adding or removing other
    /// groups never changes a group's initial weights.
    fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, trainable: bool) -> ParamId {
        let mut r = rng::at(self.seed, rng::streams::INIT, name_counter(name));
        let data = (0..rows * cols).map(|_| rng::normal(&mut r) * std).collect();
        self.store.add(name, rows, cols, data, trainable)
    }

    fn zeros(&mut self, name: &str, rows: usize, cols: usize, trainable: bool) -> ParamId {
        self.store.add(name, rows, cols, vec![0.0; rows * cols], trainable)
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize, bias: bool, trainable: bool) -> LinearIds {
        self.linear_scaled(name, d_in, d_out, bias, trainable, 1.0)
    }

    fn linear_scaled(
        &mut self,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        trainable: bool,
        gain: f64,
    ) -> LinearIds {
        let weight = self.normal(&format!("{name}.weight"), d_in, d_out, gain / sqrt(d_in as f64), trainable);
        let bias = bias.then(|| self.zeros(&format!("{name}.bias"), 1, d_out, trainable));
        LinearIds { weight, bias }
    }

    fn lora(&mut self, name: &str, d_in: usize, d_out: usize, rank: usize) -> Option<LoraIds> {
        (rank > 0).then(|| LoraIds {
            down: self.normal(&format!("{name}.lora_down"), d_in, rank, 1.0 / sqrt(d_in as f64), true),
            up: self.zeros(&format!("{name}.lora_up"), rank, d_out, true),
        })
    }
}

impl Dit {
    pub fn new(config: DitConfig) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let hidden = d * config.ff_mult;
        let r = config.lora_rank;
        let mut b = Builder { store: ParamStore::default(), seed: config.seed };
        let text_in = b.linear("text.in", config.text_channels, d, true, false);
        let image_in = b.linear("image.in", config.image_channels, d, true, true);
        let video_in = b.linear("video.in", config.video_in_channels, d, true, true);
        let time1 = b.linear("time.fc1", config.time_channels, d, true, false);
        let time2 = b.linear("time.fc2", d, d, true, false);
        let mut blocks = Vec::with_capacity(config.blocks);
        for i in 0..config.blocks {
            let p = format!("blocks.{i}");
            let stream = |b: &mut Builder, s: &str, lora: bool| {
                let ff_rank = if config.lora_on_ff { r } else { 0 };
                let proj = |b: &mut Builder, m: &str, din: usize, dout: usize, rank: usize| ProjIds {
                    base: b.linear(&format!("{p}.{s}.{m}"), din, dout, false, false),
                    lora: if lora { b.lora(&format!("{p}.{s}.{m}"), din, dout, rank) } else { None },
                };
                StreamIds {
                    q: proj(b, "q", d, d, r),
                    k: proj(b, "k", d, d, r),
                    v: proj(b, "v", d, d, r),
                    o: proj(b, "o", d, d, r),
                    ff1: proj(b, "ff1", d, hidden, ff_rank),
                    ff2: proj(b, "ff2", hidden, d, ff_rank),
                    modulation: b.linear_scaled(
                        &format!("{p}.{s}.modulation"),
                        d,
                        4 * d,
                        true,
                        false,
                        config.modulation_init,
                    ),
                }
            };
            let text = stream(&mut b, "text", false);
            let video = stream(&mut b, "video", true);
            let mut image = video;
            // Same base storage as the video stream, separate adapters.
            for (slot, m, din, dout, rank) in [
                (&mut image.q, "q", d, d, r),
                (&mut image.k, "k", d, d, r),
                (&mut image.v, "v", d, d, r),
                (&mut image.o, "o", d, d, r),
                (&mut image.ff1, "ff1", d, hidden, if config.lora_on_ff { r } else { 0 }),
                (&mut image.ff2, "ff2", hidden, d, if config.lora_on_ff { r } else { 0 }),
            ] {
                slot.lora = b.lora(&format!("{p}.image.{m}"), din, dout, rank);
            }
            blocks.push(BlockIds { text, image, video });
        }
        let head = b.linear_scaled("video.head", d, config.out_channels, true, true, config.head_init);
        Ok(Self { config, store: b.store, text_in, image_in, video_in, time1, time2, blocks, head })
    }

    pub fn blocks(&self) -> &[BlockIds] {
        &self.blocks
    }

    /// The same weights with every adapter detached.
    pub fn without_adapters(&self) -> Self {
        let mut blocks = self.blocks.clone();
        for blk in &mut blocks {
            for s in [&mut blk.text, &mut blk.image, &mut blk.video] {
                for p in [&mut s.q, &mut s.k, &mut s.v, &mut s.o, &mut s.ff1, &mut s.ff2] {
                    p.lora = None;
                }
            }
        }
        Self {
            config: self.config.clone(),
            store: self.store.clone(),
            text_in: self.text_in,
            image_in: self.image_in,
            video_in: self.video_in,
            time1: self.time1,
            time2: self.time2,
            blocks,
            head: self.head,
        }
    }

    fn linear(&self, tape: &mut Tape, bind: &mut Binder, x: Var, ids: &LinearIds) -> Var {
        let w = bind.var(tape, ids.weight);
        let y = tape.matmul(x, w);
        match ids.bias {
            Some(b) => {
                let b = bind.var(tape, b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }

    fn proj(&self, tape: &mut Tape, bind: &mut Binder, x: Var, ids: &ProjIds) -> Var {
        let y = self.linear(tape, bind, x, &ids.base);
        match ids.lora {
            Some(l) => {
                let down = bind.var(tape, l.down);
                let up = bind.var(tape, l.up);
                let h = tape.matmul(x, down);
                let delta = tape.matmul(h, up);
                let delta = tape.scale(delta, self.config.lora_scale);
                tape.add(y, delta)
            }
            None => y,
        }
    }

    /// Full self-attention over the concatenation of `segments`, split back
    /// per segment and passed through each segment's output projection.
    pub fn joint_attention(&self, tape: &mut Tape, bind: &mut Binder, segments: &[Segment]) -> Result<Vec<Var>> {
        let live: Vec<&Segment> = segments.iter().filter(|s| tape.value(s.x).rows > 0).collect();
        if live.is_empty() {
            return Err(Error::Empty("attention sequence"));
        }
        let (mut qs, mut ks, mut vs) = (Vec::new(), Vec::new(), Vec::new());
        for s in &live {
            qs.push(self.proj(tape, bind, s.x, &s.weights.q));
            ks.push(self.proj(tape, bind, s.x, &s.weights.k));
            vs.push(self.proj(tape, bind, s.x, &s.weights.v));
        }
        let q = tape.concat_rows(&qs);
        let k = tape.concat_rows(&ks);
        let v = tape.concat_rows(&vs);
        let d = self.config.width;
        let dh = d / self.config.heads;
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
            let kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
            let vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
            let s = tape.matmul_bt(qh, kh);
            let s = tape.scale(s, 1.0 / sqrt(dh as f64));
            let p = tape.softmax_rows(s);
            heads.push(tape.matmul(p, vh));
        }
        let joint = tape.concat_cols(&heads);
        let mut outs = Vec::with_capacity(segments.len());
        let mut start = 0;
        for s in segments {
            let n = tape.value(s.x).rows;
            if n == 0 {
                outs.push(s.x);
                continue;
            }
            let part = tape.slice_rows(joint, start, start + n);
            outs.push(self.proj(tape, bind, part, &s.weights.o));
            start += n;
        }
        Ok(outs)
    }

    /// Queries of every keyframe attend over keys and values gathered from
    /// all keyframes and the garment branch. The garment branch uses the
    /// same weights as the frames.
    pub fn multiframe_reference_attention(
        &self,
        tape: &mut Tape,
        bind: &mut Binder,
        frames: &[Var],
        garment: Var,
        weights: &StreamIds,
    ) -> Result<(Vec<Var>, Var)> {
        if frames.is_empty() {
            return Err(Error::Empty("keyframes"));
        }
        let mut segs = vec![Segment { x: garment, weights }];
        segs.extend(frames.iter().map(|&x| Segment { x, weights }));
        let mut out = self.joint_attention(tape, bind, &segs)?;
        let g = out.remove(0);
        Ok((out, g))
    }

    fn modulate(&self, tape: &mut Tape, x: Var, shift: Var, scale: Var) -> Var {
        let n = tape.layer_norm(x);
        let one_plus = tape.add_const(scale, 1.0);
        let n = tape.mul_row(n, one_plus);
        tape.add_row(n, shift)
    }

    /// Pre-norm attention and feed-forward with residuals, modulated per
    /// stream by the timestep embedding `temb_act` (already passed through
    /// SiLU). Streams with zero rows pass through.
    pub fn block(
        &self,
        tape: &mut Tape,
        bind: &mut Binder,
        blk: &BlockIds,
        h: [Var; 3],
        temb_act: Var,
    ) -> Result<[Var; 3]> {
        let d = self.config.width;
        let ids = [&blk.text, &blk.image, &blk.video];
        let mut mods = Vec::with_capacity(3);
        let mut normed = [h[0]; 3];
        for s in 0..3 {
            let m = self.linear(tape, bind, temb_act, &ids[s].modulation);
            let parts: Vec<Var> = (0..4).map(|i| tape.slice_cols(m, i * d, (i + 1) * d)).collect();
            normed[s] = self.modulate(tape, h[s], parts[0], parts[1]);
            mods.push(parts);
        }
        let segs: Vec<Segment> = (0..3).map(|s| Segment { x: normed[s], weights: ids[s] }).collect();
        let att = self.joint_attention(tape, bind, &segs)?;
        let mut out = h;
        for s in 0..3 {
            if tape.value(h[s]).rows == 0 {
                continue;
            }
            let x = tape.add(h[s], att[s]);
            let n = self.modulate(tape, x, mods[s][2], mods[s][3]);
            let f = self.proj(tape, bind, n, &ids[s].ff1);
            let f = tape.gelu(f);
            let f = self.proj(tape, bind, f, &ids[s].ff2);
            out[s] = tape.add(x, f);
        }
        Ok(out)
    }

    fn check_input(&self, input: &DitInput) -> Result<()> {
        let c = &self.config;
        if input.video.rows == 0 {
            return Err(Error::Empty("video stream"));
        }
        if input.video.cols != c.video_in_channels {
            return Err(Error::Shape(format!(
                "video tokens have {} channels, model expects {}",
                input.video.cols, c.video_in_channels
            )));
        }
        if input.image.rows > 0 && input.image.cols != c.image_channels {
            return Err(Error::Shape(format!(
                "image tokens have {} channels, model expects {}",
                input.image.cols, c.image_channels
            )));
        }
        if input.text.rows > 0 && input.text.cols != c.text_channels {
            return Err(Error::Shape(format!(
                "text tokens have {} channels, model expects {}",
                input.text.cols, c.text_channels
            )));
        }
        if input.video_pos.len() != input.video.rows || input.image_pos.len() != input.image.rows {
            return Err(Error::Shape("positions do not match token counts".into()));
        }
        if !(0.0..=1.0).contains(&input.tau) {
            return Err(Error::InvalidArgument(format!("tau {} outside [0, 1]", input.tau)));
        }
        Ok(())
    }

    /// Records the forward pass on `tape` and returns the `l_v × c`
    /// velocity prediction.
    pub fn forward(&self, tape: &mut Tape, bind: &mut Binder, input: &DitInput) -> Result<Var> {
        self.check_input(input)?;
        let d = self.config.width;
        let temb = tape.constant(Mat::from_vec(
            1,
            self.config.time_channels,
            sinusoidal(input.tau * 1000.0, self.config.time_channels),
        ));
        let temb = self.linear(tape, bind, temb, &self.time1);
        let temb = tape.silu(temb);
        let temb = self.linear(tape, bind, temb, &self.time2);
        let temb_act = tape.silu(temb);

        let embed = |this: &Self, tape: &mut Tape, bind: &mut Binder, x: &Mat, ids: &LinearIds, pos: Mat| {
            if x.rows == 0 {
                return tape.constant(Mat::zeros(0, d));
            }
            let x = tape.constant(x.clone());
            let h = this.linear(tape, bind, x, ids);
            let p = tape.constant(pos);
            tape.add(h, p)
        };
        let ht = embed(self, tape, bind, &input.text, &self.text_in, positional_1d(input.text.rows, d));
        let hi = embed(self, tape, bind, &input.image, &self.image_in, positional_3d(&input.image_pos, d));
        let hv = embed(self, tape, bind, &input.video, &self.video_in, positional_3d(&input.video_pos, d));
        let mut h = [ht, hi, hv];
        for blk in &self.blocks {
            h = self.block(tape, bind, blk, h, temb_act)?;
        }
        Ok(self.linear(tape, bind, h[2], &self.head))
    }

    /// Inference without gradient tracking.
    pub fn predict(&self, input: &DitInput) -> Result<Mat> {
        let mut tape = Tape::new();
        let mut bind = Binder::new(&self.store, false);
        let v = self.forward(&mut tape, &mut bind, input)?;
        Ok(tape.value(v).clone())
    }

    /// Mean squared error against `target` plus one gradient slot per group.
    pub fn loss_and_gradients(&self, input: &DitInput, target: &Mat) -> Result<(f64, Vec<Option<Mat>>)> {
        let mut tape = Tape::new();
        let mut bind = Binder::new(&self.store, true);
        let v = self.forward(&mut tape, &mut bind, input)?;
        let out = tape.value(v);
        if (out.rows, out.cols) != (target.rows, target.cols) {
            return Err(Error::Shape(format!(
                "target is {}x{}, prediction {}x{}",
                target.rows, target.cols, out.rows, out.cols
            )));
        }
        let loss = tape.mse(v, target.clone());
        let grads = tape.backward(loss);
        Ok((tape.value(loss).data[0], bind.gradients(&grads)))
    }

    /// Whether a group belongs to the text stream.
    pub fn is_text_group(name: &str) -> bool {
        name.starts_with("text.") || name.contains(".text.")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCount {
    pub name: String,
    pub count: usize,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterReport {
    pub groups: Vec<GroupCount>,
    pub trainable: usize,
    pub total: usize,
    pub trainable_fraction: f64,
}

/// Shared groups are counted once.
pub fn trainable_parameter_report(store: &ParamStore) -> ParameterReport {
    let groups: Vec<GroupCount> = store
        .groups()
        .iter()
        .map(|g| GroupCount { name: g.name.clone(), count: g.rows * g.cols, trainable: g.trainable })
        .collect();
    let total: usize = groups.iter().map(|g| g.count).sum();
    let trainable: usize = groups.iter().filter(|g| g.trainable).map(|g| g.count).sum();
    ParameterReport {
        groups,
        trainable,
        total,
        trainable_fraction: if total == 0 { 0.0 } else { trainable as f64 / total as f64 },
    }
}
