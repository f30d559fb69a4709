//! Preprocessing: subject boxes, tracking windows, crops, agnostic masks and
//! images, skeleton maps and the garment image.
//!
//! Everything the later stages consume is produced at model resolution,
//! except the window-resolution masks used for fusion.

use vvt_core::pose::{
    compute_tracking_windows, make_agnostic_image, make_agnostic_mask, preprocess_garment, render_skeleton_map,
    BoneGraph, Joint, Skeleton, SkeletonSequence, TrackingWindow, AGNOSTIC_FILL,
};
use vvt_core::raster::{BBox, Image, Mask, PixelRect};

use crate::config::PipelineConfig;
use crate::error::{Result, VvtError};

/// Margin added around the confident joints, as a fraction of the larger
/// side of their bounding box. Joints sit inside the body, so the raw joint
/// box undercuts the silhouette.
pub const BBOX_MARGIN: f64 = 0.15;

/// Subject box from the joints at or above `threshold`. Frames without any
/// confident joint fall back to the whole frame.
pub fn subject_bbox(sk: &Skeleton, threshold: f64) -> BBox {
    let pts: Vec<&Joint> = sk.joints.iter().filter(|j| j.confidence >= threshold).collect();
    if pts.is_empty() {
        return BBox::new(0.0, 0.0, sk.frame_width, sk.frame_height);
    }
    let x0 = pts.iter().map(|j| j.x).fold(f64::INFINITY, f64::min);
    let x1 = pts.iter().map(|j| j.x).fold(f64::NEG_INFINITY, f64::max);
    let y0 = pts.iter().map(|j| j.y).fold(f64::INFINITY, f64::min);
    let y1 = pts.iter().map(|j| j.y).fold(f64::NEG_INFINITY, f64::max);
    let m = BBOX_MARGIN * (x1 - x0).max(y1 - y0);
    let bx = (x0 - m).max(0.0);
    let by = (y0 - m).max(0.0);
    let bw = (x1 + m).min(sk.frame_width) - bx;
    let bh = (y1 + m).min(sk.frame_height) - by;
    BBox::new(bx, by, bw.max(0.0), bh.max(0.0))
}

/// Affine map from frame coordinates into a resized crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropMap {
    pub origin: (f64, f64),
    pub scale: (f64, f64),
}

impl CropMap {
    pub fn new(rect: PixelRect, size: (usize, usize)) -> Self {
        Self {
            origin: (rect.x as f64, rect.y as f64),
            scale: (size.0 as f64 / rect.width as f64, size.1 as f64 / rect.height as f64),
        }
    }

    pub fn point(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin.0) * self.scale.0, (y - self.origin.1) * self.scale.1)
    }

    pub fn skeleton(&self, sk: &Skeleton, size: (usize, usize)) -> Skeleton {
        Skeleton {
            joints: sk
                .joints
                .iter()
                .map(|j| {
                    let (x, y) = self.point(j.x, j.y);
                    Joint::new(x, y, j.confidence)
                })
                .collect(),
            frame_width: size.0 as f64,
            frame_height: size.1 as f64,
        }
    }

    pub fn bbox(&self, b: &BBox) -> BBox {
        let (x, y) = self.point(b.x, b.y);
        BBox::new(x, y, b.w * self.scale.0, b.h * self.scale.1)
    }
}

/// Per-frame products of preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub bboxes: Vec<BBox>,
    pub window: TrackingWindow,
    pub warnings: Vec<String>,
    /// Model-resolution crops of the original frames.
    pub crops: Vec<Image>,
    pub masks: Vec<Mask>,
    pub agnostic: Vec<Image>,
    /// One-channel skeleton maps with values in {0, 1}.
    pub pose_maps: Vec<Image>,
    /// Agnostic masks at window resolution, for fusion.
    pub window_masks: Vec<Mask>,
    pub garment: Image,
}

pub fn check_frames(frames: &[Image], seq: &SkeletonSequence) -> Result<()> {
    if frames.len() != seq.frames.len() {
        return Err(VvtError::Invalid(format!("{} frames but {} skeleton frames", frames.len(), seq.frames.len())));
    }
    let f = &frames[0];
    if let Some(i) = frames.iter().position(|g| g.width != f.width || g.height != f.height) {
        return Err(VvtError::Invalid(format!("frame {i} differs in size from frame 0")));
    }
    let sk = &seq.frames[0];
    if sk.frame_width != f.width as f64 || sk.frame_height != f.height as f64 {
        return Err(VvtError::Invalid(format!(
            "skeletons are for {}x{} frames, frames are {}x{}",
            sk.frame_width, sk.frame_height, f.width, f.height
        )));
    }
    Ok(())
}

pub fn preprocess(
    cfg: &PipelineConfig,
    frames: &[Image],
    seq: &SkeletonSequence,
    garment_rgb: &Image,
    garment_mask: &Mask,
) -> Result<Preprocessed> {
    check_frames(frames, seq)?;
    let p = &cfg.pose;
    let pose_cfg = p.pose_config();
    let bones = BoneGraph::coco14();
    let size = (cfg.video.width, cfg.video.height);
    let (fw, fh) = (frames[0].width, frames[0].height);

    let bboxes: Vec<BBox> = seq.frames.iter().map(|s| subject_bbox(s, p.confidence_threshold)).collect();
    let tracking = compute_tracking_windows(&bboxes, (fw, fh), p.window_padding)?;
    let window = tracking.window;
    let (ww, wh) = (window.width, window.height);

    let mut out = Preprocessed {
        bboxes: bboxes.clone(),
        window: window.clone(),
        warnings: tracking.warnings,
        crops: Vec::new(),
        masks: Vec::new(),
        agnostic: Vec::new(),
        pose_maps: Vec::new(),
        window_masks: Vec::new(),
        garment: preprocess_garment(garment_rgb, garment_mask, size)?.rgb,
    };
    let radius_window = p.dilation_radius * ww as f64 / size.0 as f64;
    for (i, (frame, sk)) in frames.iter().zip(&seq.frames).enumerate() {
        let rect = window.rect(i);
        let crop = frame.crop(rect)?.resize_bilinear(size.0, size.1);

        let to_model = CropMap::new(rect, size);
        let sk_model = to_model.skeleton(sk, size);
        let mask = make_agnostic_mask(
            &sk_model,
            &bones,
            &to_model.bbox(&bboxes[i]),
            p.dilation_radius,
            p.scope,
            size,
            &pose_cfg,
        )
        .map_err(|e| VvtError::Invalid(format!("frame {i}: {e}")))?;

        let to_window = CropMap::new(rect, (ww, wh));
        let window_mask = make_agnostic_mask(
            &to_window.skeleton(sk, (ww, wh)),
            &bones,
            &to_window.bbox(&bboxes[i]),
            radius_window,
            p.scope,
            (ww, wh),
            &pose_cfg,
        )
        .map_err(|e| VvtError::Invalid(format!("frame {i}: {e}")))?;

        out.agnostic.push(make_agnostic_image(&crop, &mask, AGNOSTIC_FILL)?);
        out.pose_maps.push(render_skeleton_map(&sk_model, &bones, size, p.skeleton_thickness, &pose_cfg));
        out.crops.push(crop);
        out.masks.push(mask);
        out.window_masks.push(window_mask);
    }
    Ok(out)
}

/// 0..=255 pixels to the codec's [-1, 1] range.
pub fn to_unit(img: &Image) -> Image {
    Image { data: img.data.iter().map(|&v| v / 127.5 - 1.0).collect(), ..img.clone() }
}

/// [-1, 1] back to 0..=255, clamped.
pub fn to_pixels(img: &Image) -> Image {
    Image { data: img.data.iter().map(|&v| ((v + 1.0) * 127.5).clamp(0.0, 255.0)).collect(), ..img.clone() }
}

/// {0, 1} map to a {0, 255} image and back.
pub fn map_to_pixels(map: &Image) -> Image {
    Image { data: map.data.iter().map(|&v| if v > 0.5 { 255.0 } else { 0.0 }).collect(), ..map.clone() }
}

pub fn map_from_pixels(img: &Image) -> Image {
    Image { data: img.data.iter().map(|&v| if v > 127.5 { 1.0 } else { 0.0 }).collect(), ..img.clone() }
}
