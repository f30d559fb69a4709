//! Keyframe sampling against a frontal A-pose anchor.
//!
//! Every frame is scored by the summed cosine between its bone directions and
//! the anchor's, plus a weighted subject-area ratio. Selection starts from the
//! top-scoring frame and then walks the descending ranking from its tail,
//! admitting frames whose score differs from every admitted score by at least
//! `alpha * mean(score)`.

use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;
use serde::{Deserialize, Serialize};

use crate::pose::{compute_joint_directions, BoneDirection, BoneGraph, PoseConfig, Skeleton, SkeletonSequence};
use crate::raster::BBox;
use crate::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.3;
pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_K: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub index: usize,
    pub motion_similarity: f64,
    pub area_ratio: f64,
    #[serde(rename = "final")]
    pub final_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeSet {
    pub indices: Vec<usize>,
    pub scores: Vec<FrameScore>,
    /// Parallel to `indices`: true when the slot was filled by padding rather
    /// than by the interval rule.
    pub padded: Vec<bool>,
    pub threshold: f64,
}

/// Frontal A-pose reference skeleton; every bone must be present.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPose {
    skeleton: Skeleton,
    directions: Vec<[f64; 2]>,
}

impl AnchorPose {
    pub fn new(skeleton: Skeleton, bones: &BoneGraph, cfg: &PoseConfig) -> Result<Self> {
        let dirs = compute_joint_directions(&skeleton, bones, cfg)?;
        let directions = dirs
            .iter()
            .enumerate()
            .map(|(i, d)| d.ok_or_else(|| Error::InvalidArgument(format!("anchor bone {i} is missing"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { skeleton, directions })
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn directions(&self) -> Vec<BoneDirection> {
        self.directions.iter().copied().map(Some).collect()
    }
}

/// Sum of per-bone dot products over bones present on both sides.
pub fn motion_similarity(a: &[BoneDirection], b: &[BoneDirection]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("bone direction counts differ: {} vs {}", a.len(), b.len())));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| match (x, y) {
            (Some(p), Some(q)) => p[0] * q[0] + p[1] * q[1],
            _ => 0.0,
        })
        .sum())
}

pub fn score_frames(
    seq: &SkeletonSequence,
    anchor: &AnchorPose,
    bones: &BoneGraph,
    subject_bboxes: &[BBox],
    lambda: f64,
    cfg: &PoseConfig,
) -> Result<Vec<FrameScore>> {
    if seq.frames.is_empty() {
        return Err(Error::Empty("skeleton sequence"));
    }
    if subject_bboxes.len() != seq.frames.len() {
        return Err(Error::Shape(format!("{} bounding boxes for {} frames", subject_bboxes.len(), seq.frames.len())));
    }
    let anchor_dirs = anchor.directions();
    seq.frames
        .iter()
        .zip(subject_bboxes)
        .enumerate()
        .map(|(index, (sk, bbox))| {
            let dirs = compute_joint_directions(sk, bones, cfg)?;
            let motion = motion_similarity(&anchor_dirs, &dirs)?;
            let frame_area = sk.frame_width * sk.frame_height;
            let area_ratio = if frame_area > 0.0 { (bbox.area() / frame_area).clamp(0.0, 1.0) } else { 0.0 };
            Ok(FrameScore { index, motion_similarity: motion, area_ratio, final_score: motion + lambda * area_ratio })
        })
        .collect()
}

/// Descending by final score, ascending frame index on ties.
pub fn rank_descending(scores: &[FrameScore]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .final_score
            .partial_cmp(&scores[a].final_score)
            .unwrap_or(Ordering::Equal)
            .then(scores[a].index.cmp(&scores[b].index))
    });
    order
}

/// Minimum score interval `alpha * mean(final)`, clamped at zero.
pub fn score_threshold(scores: &[FrameScore], alpha: f64) -> f64 {
    let mean = scores.iter().map(|s| s.final_score).sum::<f64>() / scores.len() as f64;
    (alpha * mean).max(0.0)
}

pub fn select_keyframes(scores: &[FrameScore], k: usize, alpha: f64) -> Result<KeyframeSet> {
    if scores.is_empty() {
        return Err(Error::Empty("frame scores"));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > scores.len() {
        return Err(Error::TooManyKeyframes { requested: k, available: scores.len() });
    }
    let threshold = score_threshold(scores, alpha);
    let order = rank_descending(scores);
    // Positions into `scores`.
    let mut chosen: Vec<usize> = alloc::vec![order[0]];
    for &cur in order.iter().rev() {
        if chosen.contains(&cur) {
            continue;
        }
        let s = scores[cur].final_score;
        if chosen.iter().all(|&c| (s - scores[c].final_score).abs() >= threshold) {
            chosen.push(cur);
        }
    }
    chosen.truncate(k);
    let mut padded = alloc::vec![false; chosen.len()];
    while chosen.len() < k {
        let next = farthest_frame(scores, &chosen);
        chosen.push(next);
        padded.push(true);
    }
    Ok(KeyframeSet {
        indices: chosen.iter().map(|&p| scores[p].index).collect(),
        scores: scores.to_vec(),
        padded,
        threshold,
    })
}

/// Unselected frame maximising temporal distance to the selected set;
/// ties go to the smaller frame index.
fn farthest_frame(scores: &[FrameScore], chosen: &[usize]) -> usize {
    let mut best = None::<(usize, usize)>;
    for (pos, s) in scores.iter().enumerate() {
        if chosen.contains(&pos) {
            continue;
        }
        let dist = chosen.iter().map(|&c| s.index.abs_diff(scores[c].index)).min().unwrap_or(usize::MAX);
        let better = match best {
            None => true,
            Some((bd, bp)) => dist > bd || (dist == bd && s.index < scores[bp].index),
        };
        if better {
            best = Some((dist, pos));
        }
    }
    best.map(|(_, p)| p).expect("k <= frame count leaves a candidate")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Joint;
    use alloc::vec;

    fn score(index: usize, v: f64) -> FrameScore {
        FrameScore { index, motion_similarity: v, area_ratio: 0.0, final_score: v }
    }

    fn line_skeleton(angles: &[f64]) -> Skeleton {
        // Joint 0 at origin, one bone per angle to joint i+1.
        let mut joints = vec![Joint::new(0.0, 0.0, 1.0)];
        for &a in angles {
            joints.push(Joint::new(libm::cos(a) * 10.0, libm::sin(a) * 10.0, 1.0));
        }
        Skeleton { joints, frame_width: 100.0, frame_height: 100.0 }
    }

    fn star(n: usize) -> BoneGraph {
        BoneGraph::new((1..=n).map(|i| (0, i)).collect(), n + 1).unwrap()
    }

    #[test]
    fn identical_and_opposite_similarity() {
        let angles: Vec<f64> = (0..14).map(|i| i as f64 * 0.4).collect();
        let g = star(14);
        let cfg = PoseConfig::default();
        let a = compute_joint_directions(&line_skeleton(&angles), &g, &cfg).unwrap();
        let opposite: Vec<f64> = angles.iter().map(|x| x + core::f64::consts::PI).collect();
        let b = compute_joint_directions(&line_skeleton(&opposite), &g, &cfg).unwrap();
        assert!((motion_similarity(&a, &a).unwrap() - 14.0).abs() < 1e-12);
        assert!((motion_similarity(&a, &b).unwrap() + 14.0).abs() < 1e-12);
    }

    #[test]
    fn missing_bones_contribute_zero() {
        let a = vec![Some([1.0, 0.0]), None, Some([0.0, 1.0])];
        let b = vec![Some([1.0, 0.0]), Some([1.0, 0.0]), None];
        assert_eq!(motion_similarity(&a, &b).unwrap(), 1.0);
        assert!(motion_similarity(&a, &b[..2]).is_err());
    }

    #[test]
    fn random_similarity_matches_cosine_accumulation() {
        let mut rng = crate::rng::stream(3, 0);
        let g = star(14);
        let cfg = PoseConfig::default();
        let aa: Vec<f64> = (0..14).map(|_| crate::rng::uniform(&mut rng) * core::f64::consts::TAU).collect();
        let bb: Vec<f64> = (0..14).map(|_| crate::rng::uniform(&mut rng) * core::f64::consts::TAU).collect();
        let a = compute_joint_directions(&line_skeleton(&aa), &g, &cfg).unwrap();
        let b = compute_joint_directions(&line_skeleton(&bb), &g, &cfg).unwrap();
        let expect: f64 = aa.iter().zip(&bb).map(|(x, y)| libm::cos(x - y)).sum();
        assert!((motion_similarity(&a, &b).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn anchor_frame_filling_image_scores_bone_count_plus_lambda() {
        let angles: Vec<f64> = (0..14).map(|i| i as f64 * 0.3).collect();
        let g = star(14);
        let cfg = PoseConfig::default();
        let anchor = AnchorPose::new(line_skeleton(&angles), &g, &cfg).unwrap();
        let seq = SkeletonSequence { frames: vec![line_skeleton(&angles)], fps: 30.0 };
        let s = score_frames(&seq, &anchor, &g, &[BBox::new(0.0, 0.0, 100.0, 100.0)], DEFAULT_LAMBDA, &cfg).unwrap();
        assert!((s[0].final_score - 14.3).abs() < 1e-12);
        assert_eq!(s[0].final_score, s[0].motion_similarity + DEFAULT_LAMBDA * s[0].area_ratio);
    }

    #[test]
    fn score_frames_errors() {
        let g = star(2);
        let cfg = PoseConfig::default();
        let anchor = AnchorPose::new(line_skeleton(&[0.0, 1.0]), &g, &cfg).unwrap();
        let empty = SkeletonSequence { frames: vec![], fps: 30.0 };
        assert!(score_frames(&empty, &anchor, &g, &[], 0.3, &cfg).is_err());
        let one = SkeletonSequence { frames: vec![line_skeleton(&[0.0, 1.0])], fps: 30.0 };
        assert!(score_frames(&one, &anchor, &g, &[], 0.3, &cfg).is_err());
        let mut bad = line_skeleton(&[0.0, 1.0]);
        bad.joints[2] = bad.joints[0];
        assert!(AnchorPose::new(bad, &g, &cfg).is_err());
    }

    #[test]
    fn equal_scores_pad_with_farthest_frame() {
        let scores: Vec<FrameScore> = (0..5).map(|i| score(i, 3.0)).collect();
        let set = select_keyframes(&scores, 2, DEFAULT_ALPHA).unwrap();
        assert_eq!(set.indices, vec![0, 4]);
        assert_eq!(set.padded, vec![false, true]);
        assert!((set.threshold - 0.6).abs() < 1e-12);
    }

    #[test]
    fn reverse_pass_picks_low_scoring_frame() {
        let scores = vec![score(0, 5.0), score(1, 9.0), score(2, 1.0), score(3, 8.5)];
        let set = select_keyframes(&scores, 2, DEFAULT_ALPHA).unwrap();
        assert_eq!(set.indices, vec![1, 2]);
        assert_eq!(set.padded, vec![false, false]);
    }

    #[test]
    fn negative_mean_clamps_threshold() {
        let scores = vec![score(0, -5.0), score(1, -5.0), score(2, -1.0)];
        let set = select_keyframes(&scores, 3, DEFAULT_ALPHA).unwrap();
        assert_eq!(set.threshold, 0.0);
        assert_eq!(set.indices, vec![2, 1, 0]);
    }

    #[test]
    fn select_errors() {
        let scores = vec![score(0, 1.0)];
        assert!(matches!(select_keyframes(&scores, 2, 0.2), Err(Error::TooManyKeyframes { .. })));
        assert!(select_keyframes(&scores, 0, 0.2).is_err());
        assert!(select_keyframes(&[], 1, 0.2).is_err());
        assert_eq!(select_keyframes(&scores, 1, 0.2).unwrap().indices, vec![0]);
    }

    #[test]
    fn ties_in_ranking_break_by_index() {
        let scores = vec![score(0, 2.0), score(1, 7.0), score(2, 7.0), score(3, 2.0)];
        assert_eq!(rank_descending(&scores), vec![1, 2, 0, 3]);
        let set = select_keyframes(&scores, 2, 0.2).unwrap();
        assert_eq!(set.indices[0], 1);
        assert_eq!(set.indices[1], 3);
    }
}
