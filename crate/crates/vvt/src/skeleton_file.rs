//! Skeleton JSON: `{fps, width, height, frames: [{joints: [[x, y, c], ...]}]}`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vvt_core::pose::{Joint, Skeleton, SkeletonSequence};

use crate::error::{Result, VvtError};
use crate::fsio;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonFile {
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub frames: Vec<SkeletonFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonFrame {
    pub joints: Vec<[f64; 3]>,
}

impl SkeletonFile {
    pub fn to_sequence(&self) -> SkeletonSequence {
        let frames = self
            .frames
            .iter()
            .map(|f| Skeleton {
                joints: f.joints.iter().map(|&[x, y, c]| Joint::new(x, y, c)).collect(),
                frame_width: f64::from(self.width),
                frame_height: f64::from(self.height),
            })
            .collect();
        SkeletonSequence { frames, fps: self.fps }
    }

    pub fn from_sequence(seq: &SkeletonSequence) -> Self {
        let (width, height) = seq.frames.first().map_or((0, 0), |f| (f.frame_width as u32, f.frame_height as u32));
        Self {
            fps: seq.fps,
            width,
            height,
            frames: seq
                .frames
                .iter()
                .map(|f| SkeletonFrame { joints: f.joints.iter().map(|j| [j.x, j.y, j.confidence]).collect() })
                .collect(),
        }
    }
}

pub fn read_skeletons(path: &Path) -> Result<SkeletonSequence> {
    let file: SkeletonFile = fsio::read_json(path)?;
    let seq = file.to_sequence();
    seq.validate().map_err(|e| VvtError::format(path, e))?;
    Ok(seq)
}

pub fn write_skeletons(path: &Path, seq: &SkeletonSequence) -> Result<()> {
    fsio::write_json(path, &SkeletonFile::from_sequence(seq))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_documented_layout() {
        let text = r#"{"fps": 25, "width": 64, "height": 48,
            "frames": [{"joints": [[1, 2, 0.9], [3.5, 4, 0.1]]}]}"#;
        let f: SkeletonFile = serde_json::from_str(text).unwrap();
        let seq = f.to_sequence();
        assert_eq!(seq.frames[0].joints[1], Joint::new(3.5, 4.0, 0.1));
        assert_eq!(seq.frames[0].frame_width, 64.0);
        assert_eq!(SkeletonFile::from_sequence(&seq), f);
        assert!(serde_json::from_str::<SkeletonFile>(r#"{"fps":1,"width":1,"height":1,"frames":[],"x":1}"#).is_err());
    }
}
