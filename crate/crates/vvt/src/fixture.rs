//! Synthetic input bundle: a stick-figure clip with matching skeletons, a
//! garment image and mask, a caption, an A-pose anchor and a config.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use vvt_core::caption::CaptionRecord;
use vvt_core::pose::{coco, Joint, Skeleton, SkeletonSequence};
use vvt_core::raster::{Image, Mask};

use crate::error::Result;
use crate::fsio;
use crate::imageio;
use crate::skeleton_file::write_skeletons;

pub const FRAME_W: usize = 64;
pub const FRAME_H: usize = 64;

fn seg_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    dx * dx + dy * dy
}

/// Joint positions with the arms raised by `swing` radians from hanging.
pub fn figure(cx: f64, swing_l: f64, swing_r: f64) -> Skeleton {
    let mut j = vec![Joint::new(0.0, 0.0, 0.0); coco::JOINT_COUNT];
    let c = 0.95;
    j[coco::NOSE] = Joint::new(cx, 16.0, c);
    j[1] = Joint::new(cx - 1.5, 15.0, c);
    j[2] = Joint::new(cx + 1.5, 15.0, c);
    j[3] = Joint::new(cx - 3.0, 16.0, c);
    j[4] = Joint::new(cx + 3.0, 16.0, c);
    let (ls, rs) = ((cx - 6.0, 22.0), (cx + 6.0, 22.0));
    j[coco::L_SHOULDER] = Joint::new(ls.0, ls.1, c);
    j[coco::R_SHOULDER] = Joint::new(rs.0, rs.1, c);
    let arm = |s: (f64, f64), dir: f64, swing: f64| {
        let (sx, sy) = (dir * swing.sin(), swing.cos());
        let e = (s.0 + 6.0 * sx, s.1 + 6.0 * sy);
        (e, (e.0 + 6.0 * sx, e.1 + 6.0 * sy))
    };
    let (le, lw) = arm(ls, -1.0, swing_l);
    let (re, rw) = arm(rs, 1.0, swing_r);
    j[coco::L_ELBOW] = Joint::new(le.0, le.1, c);
    j[coco::L_WRIST] = Joint::new(lw.0, lw.1, c);
    j[coco::R_ELBOW] = Joint::new(re.0, re.1, c);
    j[coco::R_WRIST] = Joint::new(rw.0, rw.1, c);
    j[coco::L_HIP] = Joint::new(cx - 4.0, 36.0, c);
    j[coco::R_HIP] = Joint::new(cx + 4.0, 36.0, c);
    j[coco::L_KNEE] = Joint::new(cx - 4.5, 43.0, c);
    j[coco::R_KNEE] = Joint::new(cx + 4.5, 43.0, c);
    j[coco::L_ANKLE] = Joint::new(cx - 5.0, 50.0, c);
    j[coco::R_ANKLE] = Joint::new(cx + 5.0, 50.0, c);
    Skeleton { joints: j, frame_width: FRAME_W as f64, frame_height: FRAME_H as f64 }
}

/// Frontal A-pose: arms out by about 30 degrees.
pub fn anchor() -> Skeleton {
    figure(32.0, PI / 6.0, PI / 6.0)
}

pub fn skeletons(frames: usize) -> SkeletonSequence {
    let frames = (0..frames)
        .map(|t| {
            let ph = 2.0 * PI * t as f64 / 12.0;
            figure(32.0 + 2.0 * (ph / 2.0).sin(), 0.9 + 0.7 * ph.sin(), 0.9 + 0.7 * (ph + 1.3).sin())
        })
        .collect();
    SkeletonSequence { frames, fps: 12.0 }
}

const SHIRT: [f64; 3] = [200.0, 40.0, 40.0];
const SKIN: [f64; 3] = [225.0, 180.0, 150.0];
const TROUSERS: [f64; 3] = [40.0, 40.0, 70.0];

pub fn render(sk: &Skeleton) -> Image {
    let p = |i: usize| (sk.joints[i].x, sk.joints[i].y);
    let torso = (p(coco::L_SHOULDER), p(coco::R_HIP));
    let limbs: [(usize, usize, f64, [f64; 3]); 8] = [
        (coco::L_SHOULDER, coco::L_ELBOW, 2.0, SHIRT),
        (coco::R_SHOULDER, coco::R_ELBOW, 2.0, SHIRT),
        (coco::L_ELBOW, coco::L_WRIST, 1.6, SKIN),
        (coco::R_ELBOW, coco::R_WRIST, 1.6, SKIN),
        (coco::L_HIP, coco::L_KNEE, 2.2, TROUSERS),
        (coco::R_HIP, coco::R_KNEE, 2.2, TROUSERS),
        (coco::L_KNEE, coco::L_ANKLE, 2.0, TROUSERS),
        (coco::R_KNEE, coco::R_ANKLE, 2.0, TROUSERS),
    ];
    let head = p(coco::NOSE);
    Image::from_fn(FRAME_W, FRAME_H, 3, |x, y, ch| {
        let q = (x as f64 + 0.5, y as f64 + 0.5);
        let mut colour =
            [60.0 + 2.0 * x as f64, 90.0 + y as f64, 150.0 - x as f64 + ((x / 4 + y / 4) % 2) as f64 * 12.0];
        if q.0 >= torso.0 .0 && q.0 <= torso.1 .0 && q.1 >= torso.0 .1 && q.1 <= torso.1 .1 {
            colour = SHIRT;
        }
        for &(a, b, r, c) in &limbs {
            if seg_dist2(q, p(a), p(b)) <= r * r {
                colour = c;
            }
        }
        if (q.0 - head.0).powi(2) + (q.1 - head.1 + 1.0).powi(2) <= 16.0 {
            colour = SKIN;
        }
        colour[ch]
    })
}

/// Flat-lay garment on white plus its foreground mask.
pub fn garment() -> (Image, Mask) {
    let (w, h) = (48usize, 48usize);
    let inside = |x: usize, y: usize| {
        let (x, y) = (x as f64, y as f64);
        let body = (14.0..=34.0).contains(&x) && (10.0..=42.0).contains(&y);
        let sleeves = (4.0..=44.0).contains(&x) && (10.0..=20.0).contains(&y);
        body || sleeves
    };
    let mask = Mask::from_fn(w, h, inside);
    let img = Image::from_fn(
        w,
        h,
        3,
        |x, y, c| {
            if inside(x, y) {
                [30.0, 70.0 + (y % 6) as f64 * 8.0, 200.0][c]
            } else {
                255.0
            }
        },
    );
    (img, mask)
}

pub fn caption() -> CaptionRecord {
    CaptionRecord::new(
        "a plain studio with a soft gradient backdrop",
        "a red long-sleeve top with dark trousers",
        "the person stands in place and swings both arms while swaying sideways",
    )
}

pub const CONFIG: &str = r#"seed = 42

[inputs]
frames = "frames"
skeletons = "skeletons.json"
garment = "garment.png"
garment_mask = "garment_mask.png"
caption = "caption.json"
anchor = "anchor.json"

[output]
run_dir = "run"

[pose]
scope = "upper"
"#;

/// Writes the bundle into `dir` and returns the config path. `frames` should
/// follow the `16 + 12·(N − 1)` rule to run both stages.
pub fn write_fixture(dir: &Path, frames: usize) -> Result<PathBuf> {
    let seq = skeletons(frames);
    let images: Vec<Image> = seq.frames.iter().map(render).collect();
    imageio::write_frames(&dir.join("frames"), &images, None)?;
    write_skeletons(&dir.join("skeletons.json"), &seq)?;
    write_skeletons(&dir.join("anchor.json"), &SkeletonSequence { frames: vec![anchor()], fps: seq.fps })?;
    let (g, m) = garment();
    imageio::write_image(&dir.join("garment.png"), &g, None)?;
    imageio::write_mask(&dir.join("garment_mask.png"), &m, None)?;
    fsio::write_json(&dir.join("caption.json"), &caption())?;
    let cfg = dir.join("config.toml");
    fsio::write(&cfg, CONFIG.as_bytes())?;
    Ok(cfg)
}
