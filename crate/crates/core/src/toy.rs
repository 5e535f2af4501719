//! Synthetic blob-scene world used to train and exercise the toy backend.
//!
//! Persons are limb-shaped blobs in a muted body color carrying one marker
//! disc per keypoint; backgrounds are smooth muted patterns. Each scene is
//! captioned by its background, and the caption goes through a hashing text
//! encoder, so the unconditional prediction is the mixture over backgrounds.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use libm::{cos, sin};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::backend::{Autoencoder, ControlMap, ScaledAutoencoder, TrainingExample};
use crate::compose::{compose_scene, ComposedScene, PersonEntry, SceneSpec};
use crate::error::Result;
use crate::pose::{
    draw_markers, rasterize_pose, segment_distance, Canvas, Keypoint, MarkerPalette, PoseSkeleton,
    RasterStyle, SimilarityTransform, LIMBS, NUM_KEYPOINTS,
};
use crate::tensor::{Image, Mask, Tensor};

/// Standing person relative to the neck, roughly 22 units tall.
const TEMPLATE: [(f64, f64); NUM_KEYPOINTS] = [
    (0.0, -2.8),
    (0.0, 0.0),
    (-3.2, 0.6),
    (-4.2, 4.8),
    (-4.6, 9.0),
    (3.2, 0.6),
    (4.2, 4.8),
    (4.6, 9.0),
    (-2.0, 8.4),
    (-2.4, 12.8),
    (-2.6, 17.2),
    (2.0, 8.4),
    (2.4, 12.8),
    (2.6, 17.2),
    (-1.8, -5.0),
    (1.8, -5.0),
    (-3.6, -3.6),
    (3.6, -3.6),
];

/// Body colors per person slot, each channel inside `[0.35, 0.65]`.
pub const BODY_COLORS: [[f64; 3]; 5] = [
    [0.64, 0.40, 0.36],
    [0.36, 0.44, 0.64],
    [0.40, 0.62, 0.38],
    [0.62, 0.58, 0.36],
    [0.52, 0.38, 0.60],
];

fn rotate_about(p: (f64, f64), pivot: (f64, f64), angle: f64) -> (f64, f64) {
    let (c, s) = (cos(angle), sin(angle));
    let (dx, dy) = (p.0 - pivot.0, p.1 - pivot.1);
    (pivot.0 + c * dx - s * dy, pivot.1 + s * dx + c * dy)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSampler {
    pub canvas: Canvas,
    pub scale: (f64, f64),
    /// Radians of upper-arm swing; the forearm swings by the same bound.
    pub arm_swing: f64,
    pub leg_swing: f64,
    /// Standard deviation of per-keypoint jitter in template units.
    pub jitter: f64,
}

impl PoseSampler {
    pub fn new(canvas: Canvas) -> Self {
        Self {
            canvas,
            scale: (0.75, 0.95),
            arm_swing: 0.8,
            leg_swing: 0.35,
            jitter: 0.25,
        }
    }

    fn articulate(&self, rng: &mut ChaCha8Rng) -> [(f64, f64); NUM_KEYPOINTS] {
        let mut p = TEMPLATE;
        let mut swing = |p: &mut [(f64, f64); NUM_KEYPOINTS], root: usize, mid: usize, end: usize, bound: f64| {
            let a = rng.random_range(-bound..=bound);
            p[mid] = rotate_about(p[mid], p[root], a);
            p[end] = rotate_about(p[end], p[root], a);
            let b = rng.random_range(-bound..=bound);
            p[end] = rotate_about(p[end], p[mid], b);
        };
        swing(&mut p, 2, 3, 4, self.arm_swing);
        swing(&mut p, 5, 6, 7, self.arm_swing);
        swing(&mut p, 8, 9, 10, self.leg_swing);
        swing(&mut p, 11, 12, 13, self.leg_swing);
        let noise = Normal::new(0.0, self.jitter.max(0.0)).expect("finite jitter");
        for q in p.iter_mut() {
            q.0 += noise.sample(rng);
            q.1 += noise.sample(rng);
        }
        p
    }

    /// A random pose with its neck horizontally inside `neck_x`, fully on
    /// the canvas with one pixel of margin.
    pub fn sample(&self, rng: &mut ChaCha8Rng, person_id: u32, neck_x: (f64, f64)) -> PoseSkeleton {
        let shape = self.articulate(rng);
        let s = rng.random_range(self.scale.0..=self.scale.1);
        let (lo_y, hi_y) = shape
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1 * s), b.max(p.1 * s)));
        let (lo_x, hi_x) = shape
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0 * s), b.max(p.0 * s)));
        let (w, h) = (self.canvas.width as f64, self.canvas.height as f64);
        let x_min = neck_x.0.max(1.0 - lo_x);
        let x_max = neck_x.1.min(w - 2.0 - hi_x).max(x_min);
        let y_min = 1.0 - lo_y;
        let y_max = (h - 2.0 - hi_y).max(y_min);
        let nx = rng.random_range(x_min..=x_max);
        let ny = rng.random_range(y_min..=y_max);
        let mut kps = [Keypoint::HIDDEN; NUM_KEYPOINTS];
        for (k, p) in kps.iter_mut().zip(shape.iter()) {
            let (x, y) = (nx + s * p.0, ny + s * p.1);
            let v = if self.canvas.contains(x, y) { 2 } else { 0 };
            *k = Keypoint::new(x, y, v);
        }
        PoseSkeleton {
            keypoints: kps,
            person_id,
            canvas: self.canvas,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PersonStyle {
    pub limb_radius: f64,
    pub torso_radius: f64,
    pub head_radius: f64,
    pub marker_radius: usize,
}

impl PersonStyle {
    pub fn for_width(width: usize) -> Self {
        let f = width as f64 / 32.0;
        Self {
            limb_radius: 1.3 * f,
            torso_radius: 2.2 * f,
            head_radius: 3.0 * f,
            marker_radius: 1,
        }
    }
}

/// Canvas-sized foreground and mask for one person.
pub fn render_person(
    pose: &PoseSkeleton,
    slot: usize,
    body: [f64; 3],
    style: PersonStyle,
    palette: &MarkerPalette,
) -> Result<(Image, Mask)> {
    let (w, h) = (pose.canvas.width, pose.canvas.height);
    let mut img = Tensor::zeros([3, h, w]);
    let mut mask = Mask::new(w, h, false);
    let kp = |i: usize| (pose.keypoints[i].x, pose.keypoints[i].y);
    let vis = |i: usize| pose.keypoints[i].is_visible();
    let mut segments: Vec<((f64, f64), (f64, f64), f64)> = Vec::new();
    for &(a, b) in LIMBS.iter() {
        if vis(a) && vis(b) {
            segments.push((kp(a), kp(b), style.limb_radius));
        }
    }
    for &(a, b) in &[(1usize, 8usize), (1, 11), (8, 11), (2, 5)] {
        if vis(a) && vis(b) {
            segments.push((kp(a), kp(b), style.torso_radius));
        }
    }
    if vis(0) {
        segments.push((kp(0), kp(0), style.head_radius));
    }
    for y in 0..h {
        for x in 0..w {
            let inside = segments
                .iter()
                .any(|&(a, b, r)| segment_distance(x as f64, y as f64, a, b) <= r);
            if inside {
                mask.set(x, y, true);
                for (c, v) in body.iter().enumerate() {
                    img.set(c, y, x, *v);
                }
            }
        }
    }
    let before = img.clone();
    draw_markers(&mut img, pose, slot, palette, style.marker_radius)?;
    for y in 0..h {
        for x in 0..w {
            if (0..3).any(|c| img.get(c, y, x) != before.get(c, y, x)) {
                mask.set(x, y, true);
            }
        }
    }
    Ok((img, mask))
}

/// Smooth muted background, each channel inside `[0.38, 0.62]`.
pub fn toy_background(canvas: Canvas, variant: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6267_0000 ^ variant);
    let (w, h) = (canvas.width, canvas.height);
    let mut img = Tensor::zeros([3, h, w]);
    for c in 0..3 {
        let base = rng.random_range(0.44..0.56);
        let waves: Vec<(f64, f64, f64, f64)> = (0..2)
            .map(|_| {
                (
                    rng.random_range(0.5..2.0),
                    rng.random_range(0.5..2.0),
                    rng.random_range(0.0..core::f64::consts::TAU),
                    rng.random_range(0.02..0.05),
                )
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let u = x as f64 / w as f64 * core::f64::consts::TAU;
                let v = y as f64 / h as f64 * core::f64::consts::TAU;
                let val = waves
                    .iter()
                    .fold(base, |acc, &(fx, fy, ph, amp)| acc + amp * sin(fx * u + fy * v + ph));
                img.set(c, y, x, val.clamp(0.38, 0.62));
            }
        }
    }
    img
}

/// Generator for the toy scene family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyWorld {
    pub canvas: Canvas,
    pub persons: usize,
    pub backgrounds: u64,
    pub embedding_dim: usize,
}

impl Default for ToyWorld {
    fn default() -> Self {
        Self {
            canvas: Canvas::new(32, 32),
            persons: 2,
            backgrounds: 8,
            embedding_dim: 16,
        }
    }
}

impl ToyWorld {
    pub fn sampler(&self) -> PoseSampler {
        PoseSampler::new(self.canvas)
    }

    pub fn raster_style(&self) -> RasterStyle {
        RasterStyle::for_width(self.canvas.width)
    }

    pub fn person_style(&self) -> PersonStyle {
        PersonStyle::for_width(self.canvas.width)
    }

    /// Horizontal band of the canvas assigned to person `slot`.
    pub fn neck_band(&self, slot: usize) -> (f64, f64) {
        let w = self.canvas.width as f64 / self.persons.max(1) as f64;
        (w * slot as f64 + 0.3 * w, w * slot as f64 + 0.7 * w)
    }

    /// One pose per person, each inside its own band.
    pub fn random_poses(&self, rng: &mut ChaCha8Rng) -> Vec<PoseSkeleton> {
        let sampler = self.sampler();
        (0..self.persons)
            .map(|s| sampler.sample(rng, s as u32, self.neck_band(s)))
            .collect()
    }

    /// Toy text encoder: a unit vector seeded by the FNV-1a hash of `prompt`.
    pub fn embed_prompt(&self, prompt: &str) -> Vec<f64> {
        let hash = prompt
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
        let mut rng = ChaCha8Rng::seed_from_u64(hash);
        let raw: Vec<f64> = (0..self.embedding_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = libm::sqrt(raw.iter().map(|v| v * v).sum::<f64>()).max(1e-12);
        raw.into_iter().map(|v| v / n).collect()
    }

    /// Caption of scenes drawn over background `variant`.
    pub fn caption(&self, variant: u64) -> String {
        format!("figures in front of backdrop {variant}")
    }

    /// Embedding of a caption that names no backdrop, for scenes without one.
    pub fn prompt_embedding(&self) -> Vec<f64> {
        self.embed_prompt("figures in front of a backdrop")
    }

    /// Scene with `poses` rendered in place over background `variant`.
    pub fn scene_spec(&self, poses: &[PoseSkeleton], variant: u64) -> Result<SceneSpec> {
        let palette = MarkerPalette::new();
        let persons = poses
            .iter()
            .enumerate()
            .map(|(slot, pose)| {
                let (fg, mask) = render_person(
                    pose,
                    slot,
                    BODY_COLORS[slot % BODY_COLORS.len()],
                    self.person_style(),
                    &palette,
                )?;
                Ok(PersonEntry {
                    foreground: fg,
                    mask,
                    base_pose: pose.clone(),
                    placement: SimilarityTransform::IDENTITY,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SceneSpec {
            background: toy_background(self.canvas, variant),
            persons,
            canvas: self.canvas,
        })
    }

    pub fn control_map(&self, poses: &[PoseSkeleton]) -> ControlMap {
        rasterize_pose(poses, (self.canvas.width, self.canvas.height), self.raster_style())
    }

    /// A random scene: random poses over one of the world's backgrounds.
    pub fn random_scene(&self, rng: &mut ChaCha8Rng) -> Result<ComposedScene> {
        Ok(self.random_captioned_scene(rng)?.0)
    }

    /// A random scene with its caption.
    pub fn random_captioned_scene(&self, rng: &mut ChaCha8Rng) -> Result<(ComposedScene, String)> {
        let poses = self.random_poses(rng);
        let variant = rng.random_range(0..self.backgrounds.max(1));
        Ok((compose_scene(&self.scene_spec(&poses, variant)?)?, self.caption(variant)))
    }

    /// The image/latent map the toy denoisers are trained under.
    pub fn autoencoder(&self) -> ScaledAutoencoder {
        ScaledAutoencoder::default()
    }

    /// `count` random scenes, encoded, as training examples.
    pub fn training_set(&self, count: usize, seed: u64) -> Result<Vec<TrainingExample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let (scene, caption) = self.random_captioned_scene(&mut rng)?;
                Ok(TrainingExample {
                    control: Some(self.control_map(&scene.poses)),
                    latent: self.autoencoder().encode(&scene.image)?,
                    embedding: self.embed_prompt(&caption),
                })
            })
            .collect()
    }
}
