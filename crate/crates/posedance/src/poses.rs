//! Pose sequence documents:
//! `{fps, canvas, frames: [[{id, keypoints: [[x, y, v] x 18]}]]}`.

use std::path::Path;

use posedance_core::pose::{Canvas, Keypoint, PoseSequence, PoseSkeleton, NUM_KEYPOINTS};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct PoseDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    /// `[width, height]` in pixels.
    pub canvas: [usize; 2],
    pub frames: Vec<Vec<PersonRecord>>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct PersonRecord {
    pub id: u32,
    pub keypoints: Vec<[f64; 3]>,
}

impl PoseDocument {
    pub fn from_sequence(seq: &PoseSequence) -> Self {
        let canvas = seq
            .frames
            .iter()
            .flatten()
            .next()
            .map(|p| [p.canvas.width, p.canvas.height])
            .unwrap_or([0, 0]);
        PoseDocument {
            fps: seq.fps,
            canvas,
            frames: seq
                .frames
                .iter()
                .map(|f| {
                    f.iter()
                        .map(|p| PersonRecord {
                            id: p.person_id,
                            keypoints: p.keypoints.iter().map(|k| [k.x, k.y, k.v as f64]).collect(),
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn to_sequence(&self) -> std::result::Result<PoseSequence, String> {
        let canvas = Canvas::new(self.canvas[0], self.canvas[1]);
        let frames = self
            .frames
            .iter()
            .enumerate()
            .map(|(f, persons)| {
                persons
                    .iter()
                    .map(|r| {
                        if r.keypoints.len() != NUM_KEYPOINTS {
                            return Err(format!(
                                "frame {f}: person {} has {} keypoints, expected {NUM_KEYPOINTS}",
                                r.id,
                                r.keypoints.len()
                            ));
                        }
                        let mut kps = [Keypoint::HIDDEN; NUM_KEYPOINTS];
                        for (k, [x, y, v]) in kps.iter_mut().zip(&r.keypoints) {
                            if !(*v == 0.0 || *v == 1.0 || *v == 2.0) {
                                return Err(format!("frame {f}: visibility must be 0, 1 or 2, got {v}"));
                            }
                            *k = Keypoint::new(*x, *y, *v as u8);
                        }
                        PoseSkeleton::new(kps, r.id, canvas).map_err(|e| format!("frame {f}: {e}"))
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        PoseSequence::new(frames, self.fps).map_err(|e| e.to_string())
    }
}

pub fn read_pose_sequence(path: &Path) -> Result<PoseSequence> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let doc: PoseDocument = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    doc.to_sequence().map_err(|e| Error::format(path, e))
}

pub fn write_pose_sequence(path: &Path, seq: &PoseSequence) -> Result<()> {
    let text = serde_json::to_string_pretty(&PoseDocument::from_sequence(seq)).expect("pose documents serialize");
    std::fs::write(path, text).map_err(Error::io(path))
}

/// A single frame of poses, stored as a one-frame sequence.
pub fn read_poses(path: &Path) -> Result<Vec<PoseSkeleton>> {
    let mut seq = read_pose_sequence(path)?;
    if seq.frames.len() != 1 {
        return Err(Error::format(path, format!("expected one frame, found {}", seq.frames.len())));
    }
    Ok(seq.frames.remove(0))
}

pub fn write_poses(path: &Path, poses: &[PoseSkeleton]) -> Result<()> {
    let seq = PoseSequence::new(vec![poses.to_vec()], None)?;
    write_pose_sequence(path, &seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use posedance_core::toy::ToyWorld;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sequences_round_trip_exactly() {
        let world = ToyWorld::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frames: Vec<_> = (0..3).map(|_| world.random_poses(&mut rng)).collect();
        let seq = PoseSequence::new(frames, Some(12.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("poses.json");
        write_pose_sequence(&p, &seq).unwrap();
        assert_eq!(read_pose_sequence(&p).unwrap(), seq);
    }

    #[test]
    fn short_keypoint_lists_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, r#"{"canvas":[8,8],"frames":[[{"id":0,"keypoints":[[1,1,2]]}]]}"#).unwrap();
        let err = read_pose_sequence(&p).unwrap_err();
        assert!(err.to_string().contains("expected 18"), "{err}");
    }
}
