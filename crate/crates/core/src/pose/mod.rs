//! 18-keypoint skeletons in OpenPose body order.

use alloc::vec::Vec;

use libm::{cos, sin};

use crate::error::{contract, Result};

mod markers;
mod raster;

pub use markers::{detect_toy_keypoints, draw_markers, MarkerPalette, ToyKeypointDetector};
pub use raster::{rasterize_pose, segment_distance, RasterStyle, CONTROL_CHANNELS};

pub const NUM_KEYPOINTS: usize = 18;

pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "nose",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_eye",
    "left_eye",
    "right_ear",
    "left_ear",
];

/// Limb segments between keypoint indices.
pub const LIMBS: [(usize, usize); 17] = [
    (1, 2),
    (1, 5),
    (2, 3),
    (3, 4),
    (5, 6),
    (6, 7),
    (1, 8),
    (8, 9),
    (9, 10),
    (1, 11),
    (11, 12),
    (12, 13),
    (1, 0),
    (0, 14),
    (14, 16),
    (0, 15),
    (15, 17),
];

/// Visibility flag: `0` means not labeled, `1` labeled but occluded, `2` visible.
pub type Visibility = u8;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub v: Visibility,
}

impl Keypoint {
    pub const HIDDEN: Keypoint = Keypoint {
        x: 0.0,
        y: 0.0,
        v: 0,
    };

    pub fn new(x: f64, y: f64, v: Visibility) -> Self {
        Self { x, y, v }
    }

    #[inline]
    pub fn is_visible(&self) -> bool {
        self.v > 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
}

impl Canvas {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    /// Pixel centres sit at integer coordinates, so the canvas spans
    /// `[0, width - 1] x [0, height - 1]`.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width as f64 - 1.0) && y <= (self.height as f64 - 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseSkeleton {
    pub keypoints: [Keypoint; NUM_KEYPOINTS],
    pub person_id: u32,
    pub canvas: Canvas,
}

impl PoseSkeleton {
    pub fn new(keypoints: [Keypoint; NUM_KEYPOINTS], person_id: u32, canvas: Canvas) -> Result<Self> {
        let pose = Self {
            keypoints,
            person_id,
            canvas,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, k) in self.keypoints.iter().enumerate() {
            if k.v > 2 {
                return Err(contract!("keypoint {} has visibility {}", i, k.v));
            }
            if !(k.x.is_finite() && k.y.is_finite()) {
                return Err(contract!("keypoint {} has non-finite coordinates", i));
            }
            if k.is_visible() && !self.canvas.contains(k.x, k.y) {
                return Err(contract!(
                    "visible keypoint {} at ({}, {}) lies outside the {}x{} canvas",
                    KEYPOINT_NAMES[i],
                    k.x,
                    k.y,
                    self.canvas.width,
                    self.canvas.height
                ));
            }
        }
        Ok(())
    }

    pub fn visible_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.is_visible()).count()
    }

    /// Tight box `(min_x, min_y, max_x, max_y)` of the visible keypoints.
    pub fn visible_bounds(&self) -> Option<(f64, f64, f64, f64)> {
        self.keypoints
            .iter()
            .filter(|k| k.is_visible())
            .fold(None, |acc, k| {
                Some(match acc {
                    None => (k.x, k.y, k.x, k.y),
                    Some((a, b, c, d)) => (a.min(k.x), b.min(k.y), c.max(k.x), d.max(k.y)),
                })
            })
    }

    pub fn visible_centroid(&self) -> Option<(f64, f64)> {
        let n = self.visible_count();
        if n == 0 {
            return None;
        }
        let (sx, sy) = self
            .keypoints
            .iter()
            .filter(|k| k.is_visible())
            .fold((0.0, 0.0), |(a, b), k| (a + k.x, b + k.y));
        Some((sx / n as f64, sy / n as f64))
    }
}

/// Per-frame, per-person skeletons.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PoseSequence {
    pub frames: Vec<Vec<PoseSkeleton>>,
    pub fps: Option<f64>,
}

impl PoseSequence {
    pub fn new(frames: Vec<Vec<PoseSkeleton>>, fps: Option<f64>) -> Result<Self> {
        let seq = Self { frames, fps };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.frames.first() else {
            return Ok(());
        };
        let ids: Vec<u32> = first.iter().map(|p| p.person_id).collect();
        for (f, frame) in self.frames.iter().enumerate() {
            let these: Vec<u32> = frame.iter().map(|p| p.person_id).collect();
            if these != ids {
                return Err(contract!(
                    "frame {} has persons {:?}, expected {:?}",
                    f,
                    these,
                    ids
                ));
            }
            for p in frame {
                p.validate()?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// `p -> pivot + scale * R(rotation) (p - pivot) + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    /// Radians, counter-clockwise in a y-down image frame appears clockwise.
    pub rotation: f64,
    pub translation: (f64, f64),
    pub pivot: (f64, f64),
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform {
        scale: 1.0,
        rotation: 0.0,
        translation: (0.0, 0.0),
        pivot: (0.0, 0.0),
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(contract!("similarity scale must be positive, got {}", self.scale));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (c, s) = (cos(self.rotation), sin(self.rotation));
        let (dx, dy) = (x - self.pivot.0, y - self.pivot.1);
        (
            self.pivot.0 + self.scale * (c * dx - s * dy) + self.translation.0,
            self.pivot.1 + self.scale * (s * dx + c * dy) + self.translation.1,
        )
    }

    pub fn inverse(&self) -> SimilarityTransform {
        SimilarityTransform {
            scale: 1.0 / self.scale,
            rotation: -self.rotation,
            translation: (-self.translation.0, -self.translation.1),
            pivot: (
                self.pivot.0 + self.translation.0,
                self.pivot.1 + self.translation.1,
            ),
        }
    }

    /// The transform applying `self` first, then `next`.
    pub fn then(&self, next: &SimilarityTransform) -> SimilarityTransform {
        let (bx, by) = next.apply(self.apply(0.0, 0.0).0, self.apply(0.0, 0.0).1);
        SimilarityTransform {
            scale: self.scale * next.scale,
            rotation: self.rotation + next.rotation,
            translation: (bx, by),
            pivot: (0.0, 0.0),
        }
    }
}

/// Applies `xf` to every keypoint; keypoints that leave the canvas become
/// unlabeled (`v = 0`) but keep their transformed coordinates.
pub fn transform_pose(pose: &PoseSkeleton, xf: &SimilarityTransform) -> PoseSkeleton {
    let mut out = pose.clone();
    for k in out.keypoints.iter_mut() {
        let (x, y) = xf.apply(k.x, k.y);
        k.x = x;
        k.y = y;
        if k.is_visible() && !pose.canvas.contains(x, y) {
            k.v = 0;
        }
    }
    out
}

/// Gathers single-person poses onto one canvas with distinct person ids.
///
/// Ids are kept when already distinct and renumbered `0..n` otherwise.
pub fn compose_poses(poses: &[PoseSkeleton]) -> Result<Vec<PoseSkeleton>> {
    let Some(first) = poses.first() else {
        return Ok(Vec::new());
    };
    if let Some(p) = poses.iter().find(|p| p.canvas != first.canvas) {
        return Err(contract!(
            "pose canvas {:?} differs from {:?}",
            p.canvas,
            first.canvas
        ));
    }
    let mut ids: Vec<u32> = poses.iter().map(|p| p.person_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let distinct = ids.len() == poses.len();
    Ok(poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut p = p.clone();
            if !distinct {
                p.person_id = i as u32;
            }
            p
        })
        .collect())
}
