//! Pose-driven visual conditions: bone directions, tracking crops,
//! clothing-agnostic masks and images, and garment normalisation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::math::{ceil, round, sqrt};
use crate::raster::{BBox, Image, Mask, PixelRect};
use crate::{Error, Result};

/// Codec alignment for crop sizes.
pub const WINDOW_ALIGN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Joint {
    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self { x, y, confidence }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
    pub frame_width: f64,
    pub frame_height: f64,
}

impl Skeleton {
    pub fn translated(&self, dx: f64, dy: f64) -> Skeleton {
        Skeleton {
            joints: self.joints.iter().map(|j| Joint::new(j.x + dx, j.y + dy, j.confidence)).collect(),
            frame_width: self.frame_width,
            frame_height: self.frame_height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSequence {
    pub frames: Vec<Skeleton>,
    pub fps: f64,
}

impl SkeletonSequence {
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.frames.first() else {
            return Ok(());
        };
        for (i, f) in self.frames.iter().enumerate() {
            if f.joints.len() != first.joints.len()
                || f.frame_width != first.frame_width
                || f.frame_height != first.frame_height
            {
                return Err(Error::Shape(format!("frame {i} differs in joint count or frame size from frame 0")));
            }
            if let Some(j) = f.joints.iter().find(|j| !(0.0..=1.0).contains(&j.confidence)) {
                return Err(Error::InvalidArgument(format!("frame {i}: confidence {} outside [0, 1]", j.confidence)));
            }
        }
        Ok(())
    }
}

/// COCO-17 joint ordering used by the default bone graph.
pub mod coco {
    pub const NOSE: usize = 0;
    pub const L_SHOULDER: usize = 5;
    pub const R_SHOULDER: usize = 6;
    pub const L_ELBOW: usize = 7;
    pub const R_ELBOW: usize = 8;
    pub const L_WRIST: usize = 9;
    pub const R_WRIST: usize = 10;
    pub const L_HIP: usize = 11;
    pub const R_HIP: usize = 12;
    pub const L_KNEE: usize = 13;
    pub const R_KNEE: usize = 14;
    pub const L_ANKLE: usize = 15;
    pub const R_ANKLE: usize = 16;
    pub const JOINT_COUNT: usize = 17;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoneGraph {
    pub bones: Vec<(usize, usize)>,
}

impl BoneGraph {
    pub fn new(bones: Vec<(usize, usize)>, joint_count: usize) -> Result<Self> {
        for &(a, b) in &bones {
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop bone ({a}, {b})")));
            }
            if a >= joint_count || b >= joint_count {
                return Err(Error::InvalidArgument(format!("bone ({a}, {b}) out of range for {joint_count} joints")));
            }
        }
        Ok(Self { bones })
    }

    /// The 14-bone body graph over COCO-17 joints: twelve limb and torso
    /// edges plus two head-to-shoulder edges.
    pub fn coco14() -> Self {
        use coco::*;
        Self {
            bones: alloc::vec![
                (L_SHOULDER, L_ELBOW),
                (L_ELBOW, L_WRIST),
                (R_SHOULDER, R_ELBOW),
                (R_ELBOW, R_WRIST),
                (L_HIP, L_KNEE),
                (L_KNEE, L_ANKLE),
                (R_HIP, R_KNEE),
                (R_KNEE, R_ANKLE),
                (L_SHOULDER, R_SHOULDER),
                (L_HIP, R_HIP),
                (L_SHOULDER, L_HIP),
                (R_SHOULDER, R_HIP),
                (NOSE, L_SHOULDER),
                (NOSE, R_SHOULDER),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.bones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bones.is_empty()
    }

    pub fn max_joint(&self) -> Option<usize> {
        self.bones.iter().map(|&(a, b)| a.max(b)).max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseConfig {
    /// Joints below this confidence are treated as missing.
    pub confidence_threshold: f64,
    /// Bones shorter than this (in pixels) are treated as missing.
    pub bone_epsilon: f64,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self { confidence_threshold: 0.3, bone_epsilon: 1e-6 }
    }
}

/// Unit direction of a bone, `None` when the bone is missing.
pub type BoneDirection = Option<[f64; 2]>;

pub fn compute_joint_directions(
    skeleton: &Skeleton,
    bones: &BoneGraph,
    cfg: &PoseConfig,
) -> Result<Vec<BoneDirection>> {
    if let Some(m) = bones.max_joint() {
        if m >= skeleton.joints.len() {
            return Err(Error::Shape(format!(
                "bone graph references joint {m} but skeleton has {}",
                skeleton.joints.len()
            )));
        }
    }
    Ok(bones
        .bones
        .iter()
        .map(|&(a, b)| {
            let (ja, jb) = (skeleton.joints[a], skeleton.joints[b]);
            if ja.confidence < cfg.confidence_threshold || jb.confidence < cfg.confidence_threshold {
                return None;
            }
            let (dx, dy) = (jb.x - ja.x, jb.y - ja.y);
            let len = sqrt(dx * dx + dy * dy);
            (len >= cfg.bone_epsilon).then(|| [dx / len, dy / len])
        })
        .collect())
}

/// Uniform-size crop windows, one origin per frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackingWindow {
    pub origins: Vec<(usize, usize)>,
    pub width: usize,
    pub height: usize,
}

impl TrackingWindow {
    pub fn rect(&self, frame: usize) -> PixelRect {
        let (x, y) = self.origins[frame];
        PixelRect { x, y, width: self.width, height: self.height }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingResult {
    pub window: TrackingWindow,
    pub warnings: Vec<String>,
}

fn align_up(v: usize, align: usize) -> usize {
    v.div_ceil(align) * align
}

fn fit_extent(needed: usize, frame: usize, axis: &str, warnings: &mut Vec<String>) -> usize {
    if needed <= frame {
        return needed;
    }
    // Keep codec alignment when the frame allows it.
    let clamped = if frame >= WINDOW_ALIGN { frame / WINDOW_ALIGN * WINDOW_ALIGN } else { frame };
    warnings.push(format!("padded {axis} extent {needed} exceeds frame size {frame}; clamped to {clamped}"));
    clamped
}

pub fn compute_tracking_windows(
    subject_bboxes: &[BBox],
    frame_size: (usize, usize),
    padding_ratio: f64,
) -> Result<TrackingResult> {
    if subject_bboxes.is_empty() {
        return Err(Error::Empty("subject bounding boxes"));
    }
    if padding_ratio < 0.0 {
        return Err(Error::InvalidArgument(format!("padding ratio {padding_ratio} is negative")));
    }
    let (fw, fh) = frame_size;
    let scale = 1.0 + 2.0 * padding_ratio;
    let max_w = subject_bboxes.iter().map(|b| b.w * scale).fold(0.0, f64::max);
    let max_h = subject_bboxes.iter().map(|b| b.h * scale).fold(0.0, f64::max);
    let mut warnings = Vec::new();
    let width = fit_extent(align_up(ceil(max_w) as usize, WINDOW_ALIGN), fw, "width", &mut warnings);
    let height = fit_extent(align_up(ceil(max_h) as usize, WINDOW_ALIGN), fh, "height", &mut warnings);
    let origins = subject_bboxes
        .iter()
        .map(|b| {
            let (cx, cy) = b.center();
            let ox = round(cx - width as f64 / 2.0).clamp(0.0, (fw - width) as f64);
            let oy = round(cy - height as f64 / 2.0).clamp(0.0, (fh - height) as f64);
            (ox as usize, oy as usize)
        })
        .collect();
    Ok(TrackingResult { window: TrackingWindow { origins, width, height }, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GarmentScope {
    Upper,
    Lower,
    #[default]
    Full,
}

impl GarmentScope {
    /// Joints whose bones are rasterised for this scope.
    fn limb_joints(self) -> &'static [usize] {
        use coco::*;
        match self {
            GarmentScope::Upper => &[L_SHOULDER, R_SHOULDER, L_ELBOW, R_ELBOW, L_WRIST, R_WRIST, L_HIP, R_HIP],
            GarmentScope::Lower => &[L_HIP, R_HIP, L_KNEE, R_KNEE, L_ANKLE, R_ANKLE],
            GarmentScope::Full => &[
                L_SHOULDER, R_SHOULDER, L_ELBOW, R_ELBOW, L_WRIST, R_WRIST, L_HIP, R_HIP, L_KNEE, R_KNEE, L_ANKLE,
                R_ANKLE,
            ],
        }
    }

    /// Joints spanning the torso-region box for this scope.
    fn box_joints(self) -> &'static [usize] {
        use coco::*;
        match self {
            GarmentScope::Upper => &[L_SHOULDER, R_SHOULDER, L_HIP, R_HIP],
            GarmentScope::Lower => &[L_HIP, R_HIP, L_KNEE, R_KNEE, L_ANKLE, R_ANKLE],
            GarmentScope::Full => &[L_SHOULDER, R_SHOULDER, L_HIP, R_HIP, L_KNEE, R_KNEE, L_ANKLE, R_ANKLE],
        }
    }
}

/// Squared distance from `(px, py)` to the segment `a`–`b`.
pub(crate) fn segment_dist2(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (px - a.0, py - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    dx * dx + dy * dy
}

fn present(skeleton: &Skeleton, j: usize, cfg: &PoseConfig) -> bool {
    skeleton.joints.get(j).is_some_and(|p| p.confidence >= cfg.confidence_threshold)
}

/// Clothing-agnostic mask at the skeleton's coordinate frame.
///
/// Pixel `(x, y)` is sampled at the point `(x, y)`. The mask is the union of
/// every in-scope bone dilated by `dilation_radius` and the box spanned by
/// the scope's torso joints, restricted to `subject_bbox`.
pub fn make_agnostic_mask(
    skeleton: &Skeleton,
    bones: &BoneGraph,
    subject_bbox: &BBox,
    dilation_radius: f64,
    scope: GarmentScope,
    size: (usize, usize),
    cfg: &PoseConfig,
) -> Result<Mask> {
    if dilation_radius <= 0.0 {
        return Err(Error::InvalidArgument(format!("dilation radius {dilation_radius} must be positive")));
    }
    let in_scope = scope.limb_joints();
    let segments: Vec<((f64, f64), (f64, f64))> = bones
        .bones
        .iter()
        .filter(|&&(a, b)| in_scope.contains(&a) && in_scope.contains(&b))
        .filter(|&&(a, b)| present(skeleton, a, cfg) && present(skeleton, b, cfg))
        .map(|&(a, b)| {
            let (ja, jb) = (skeleton.joints[a], skeleton.joints[b]);
            ((ja.x, ja.y), (jb.x, jb.y))
        })
        .collect();
    let box_pts: Vec<(f64, f64)> = scope
        .box_joints()
        .iter()
        .filter(|&&j| present(skeleton, j, cfg))
        .map(|&j| (skeleton.joints[j].x, skeleton.joints[j].y))
        .collect();
    let torso = (box_pts.len() >= 2).then(|| {
        let min_x = box_pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_x = box_pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_y = box_pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_y = box_pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        (min_x, max_x, min_y, max_y)
    });
    if segments.is_empty() && torso.is_none() {
        return Err(Error::InsufficientPose);
    }
    let r2 = dilation_radius * dilation_radius;
    let (bx0, by0) = (subject_bbox.x, subject_bbox.y);
    let (bx1, by1) = (subject_bbox.x + subject_bbox.w, subject_bbox.y + subject_bbox.h);
    Ok(Mask::from_fn(size.0, size.1, |x, y| {
        let (px, py) = (x as f64, y as f64);
        if px < bx0 || px > bx1 || py < by0 || py > by1 {
            return false;
        }
        if let Some((x0, x1, y0, y1)) = torso {
            if px >= x0 && px <= x1 && py >= y0 && py <= y1 {
                return true;
            }
        }
        segments.iter().any(|&(a, b)| segment_dist2(px, py, a, b) <= r2)
    }))
}

/// Renders the skeleton as a one-channel map with 1.0 within `thickness`
/// of any present bone.
pub fn render_skeleton_map(
    skeleton: &Skeleton,
    bones: &BoneGraph,
    size: (usize, usize),
    thickness: f64,
    cfg: &PoseConfig,
) -> Image {
    let segments: Vec<_> = bones
        .bones
        .iter()
        .filter(|&&(a, b)| present(skeleton, a, cfg) && present(skeleton, b, cfg))
        .map(|&(a, b)| {
            let (ja, jb) = (skeleton.joints[a], skeleton.joints[b]);
            ((ja.x, ja.y), (jb.x, jb.y))
        })
        .collect();
    let r2 = thickness * thickness;
    Image::from_fn(size.0, size.1, 1, |x, y, _| {
        let hit = segments.iter().any(|&(a, b)| segment_dist2(x as f64, y as f64, a, b) <= r2);
        if hit {
            1.0
        } else {
            0.0
        }
    })
}

/// Default occlusion value for agnostic images.
pub const AGNOSTIC_FILL: f64 = 128.0;

pub fn make_agnostic_image(frame: &Image, mask: &Mask, fill: f64) -> Result<Image> {
    if frame.width != mask.width || frame.height != mask.height {
        return Err(Error::Shape(format!(
            "frame {}x{} vs mask {}x{}",
            frame.width, frame.height, mask.width, mask.height
        )));
    }
    let mut out = frame.clone();
    for y in 0..frame.height {
        for x in 0..frame.width {
            if mask.get(x, y) {
                for c in 0..frame.channels {
                    out.set(x, y, c, fill);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GarmentImage {
    pub rgb: Image,
    pub foreground: Mask,
    /// Tight foreground rectangle in the source image.
    pub source_rect: PixelRect,
}

pub const WHITE: f64 = 255.0;

/// Whitens the background, crops to the tight foreground box and letterboxes
/// onto a white `target` canvas, preserving aspect ratio.
pub fn preprocess_garment(rgb: &Image, foreground: &Mask, target: (usize, usize)) -> Result<GarmentImage> {
    if rgb.width != foreground.width || rgb.height != foreground.height {
        return Err(Error::Shape(format!(
            "garment {}x{} vs mask {}x{}",
            rgb.width, rgb.height, foreground.width, foreground.height
        )));
    }
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::InvalidArgument("garment target resolution is empty".into()));
    }
    let rect = foreground.bounding_rect().ok_or(Error::NoGarmentForeground)?;
    let mut whitened = rgb.clone();
    for y in 0..rgb.height {
        for x in 0..rgb.width {
            if !foreground.get(x, y) {
                for c in 0..rgb.channels {
                    whitened.set(x, y, c, WHITE);
                }
            }
        }
    }
    let crop = whitened.crop(rect)?;
    let crop_mask = foreground.crop(rect)?;
    let s = (target.0 as f64 / rect.width as f64).min(target.1 as f64 / rect.height as f64);
    let nw = (round(rect.width as f64 * s) as usize).clamp(1, target.0);
    let nh = (round(rect.height as f64 * s) as usize).clamp(1, target.1);
    let resized = crop.resize_bilinear(nw, nh);
    let resized_mask = crop_mask.resize_nearest(nw, nh);
    let (ox, oy) = ((target.0 - nw) / 2, (target.1 - nh) / 2);
    let mut canvas = Image::filled(target.0, target.1, rgb.channels, WHITE);
    let mut fg = Mask::new(target.0, target.1);
    for y in 0..nh {
        for x in 0..nw {
            if resized_mask.get(x, y) {
                fg.set(ox + x, oy + y, true);
                for c in 0..rgb.channels {
                    canvas.set(ox + x, oy + y, c, resized.get(x, y, c));
                }
            }
        }
    }
    Ok(GarmentImage { rgb: canvas, foreground: fg, source_rect: rect })
}
