//! Scene composition and compositional augmentation.

use alloc::string::ToString;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};
use crate::pose::{transform_pose, Canvas, PoseSkeleton, SimilarityTransform};
use crate::tensor::{Image, Mask, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct PersonEntry {
    /// Appearance in its own pixel frame; `base_pose` uses the same frame.
    pub foreground: Image,
    pub mask: Mask,
    pub base_pose: PoseSkeleton,
    /// Maps the foreground frame onto the scene canvas.
    pub placement: SimilarityTransform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub background: Image,
    pub persons: Vec<PersonEntry>,
    pub canvas: Canvas,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.background.shape();
        if (w, h) != (self.canvas.width, self.canvas.height) {
            return Err(contract!(
                "background is {}x{}, canvas is {}x{}",
                w,
                h,
                self.canvas.width,
                self.canvas.height
            ));
        }
        for (i, p) in self.persons.iter().enumerate() {
            let check = || -> Result<()> {
                p.mask.ensure_matches(&p.foreground)?;
                if p.foreground.channels() != c {
                    return Err(contract!(
                        "foreground has {} channels, background {}",
                        p.foreground.channels(),
                        c
                    ));
                }
                p.placement.validate()?;
                p.base_pose.validate()
            };
            check().map_err(|e| e.at("person", i))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComposedScene {
    pub image: Image,
    /// Placed poses; `person_id` is the person's index in the scene.
    pub poses: Vec<PoseSkeleton>,
    pub background_mask: Mask,
    /// Visible region of each person after occlusion; pairwise disjoint.
    pub person_masks: Vec<Mask>,
}

fn place_pose(entry: &PersonEntry, canvas: Canvas, index: usize) -> Result<PoseSkeleton> {
    let mut pose = entry.base_pose.clone();
    pose.canvas = canvas;
    let placed = transform_pose(&pose, &entry.placement);
    if entry.base_pose.visible_count() > 0 && placed.visible_count() == 0 {
        return Err(Error::Placement(alloc::format!(
            "placement of person {} moves every keypoint off the canvas",
            index
        )));
    }
    Ok(PoseSkeleton {
        person_id: index as u32,
        ..placed
    })
}

/// Nearest-neighbour warp of a masked foreground onto the canvas. Every
/// destination pixel samples its pre-image; source pixels no destination
/// sampled are then splatted forward into still-empty pixels, so thin
/// features survive downscaling.
fn warp(entry: &PersonEntry, canvas: Canvas) -> (Tensor, Mask) {
    let src = &entry.foreground;
    let (sw, sh) = (src.width(), src.height());
    let (w, h) = (canvas.width, canvas.height);
    let channels = src.channels();
    let mut out = Tensor::zeros([channels, h, w]);
    let mut mask = Mask::new(w, h, false);
    let mut sampled = Mask::new(sw, sh, false);
    let inv = entry.placement.inverse();
    let to_pixel = |v: f64, n: usize| {
        let r = libm::round(v);
        (r >= 0.0 && r < n as f64).then_some(r as usize)
    };
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = inv.apply(x as f64, y as f64);
            let (Some(sx), Some(sy)) = (to_pixel(fx, sw), to_pixel(fy, sh)) else {
                continue;
            };
            if entry.mask.get(sx, sy) {
                sampled.set(sx, sy, true);
                mask.set(x, y, true);
                for c in 0..channels {
                    out.set(c, y, x, src.get(c, sy, sx));
                }
            }
        }
    }
    for sy in 0..sh {
        for sx in 0..sw {
            if !entry.mask.get(sx, sy) || sampled.get(sx, sy) {
                continue;
            }
            let (fx, fy) = entry.placement.apply(sx as f64, sy as f64);
            let (Some(x), Some(y)) = (to_pixel(fx, w), to_pixel(fy, h)) else {
                continue;
            };
            if !mask.get(x, y) {
                mask.set(x, y, true);
                for c in 0..channels {
                    out.set(c, y, x, src.get(c, sy, sx));
                }
            }
        }
    }
    (out, mask)
}

/// Pastes each placed foreground over the background in list order.
pub fn compose_scene(spec: &SceneSpec) -> Result<ComposedScene> {
    spec.validate()?;
    let (w, h) = (spec.canvas.width, spec.canvas.height);
    let mut image = spec.background.clone();
    let mut poses = Vec::with_capacity(spec.persons.len());
    let mut person_masks: Vec<Mask> = Vec::with_capacity(spec.persons.len());
    for (i, entry) in spec.persons.iter().enumerate() {
        poses.push(place_pose(entry, spec.canvas, i)?);
        let (pixels, mask) = warp(entry, spec.canvas);
        for y in 0..h {
            for x in 0..w {
                if !mask.get(x, y) {
                    continue;
                }
                for c in 0..image.channels() {
                    image.set(c, y, x, pixels.get(c, y, x));
                }
                for earlier in person_masks.iter_mut() {
                    earlier.set(x, y, false);
                }
            }
        }
        person_masks.push(mask);
    }
    let covered = person_masks
        .iter()
        .try_fold(Mask::new(w, h, false), |acc, m| acc.union(m))?;
    Ok(ComposedScene {
        image,
        poses,
        background_mask: covered.complement(),
        person_masks,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationRanges {
    pub scale: (f64, f64),
    /// Degrees.
    pub rotation: (f64, f64),
    pub max_attempts: usize,
}

impl Default for AugmentationRanges {
    fn default() -> Self {
        Self {
            scale: (0.8, 1.2),
            rotation: (-15.0, 15.0),
            max_attempts: 100,
        }
    }
}

impl AugmentationRanges {
    pub fn validate(&self) -> Result<()> {
        let (s0, s1) = self.scale;
        let (r0, r1) = self.rotation;
        if !(s0 > 0.0 && s0 <= s1 && s1.is_finite()) {
            return Err(Error::Config(alloc::format!("invalid scale range {:?}", self.scale)));
        }
        if !(r0 <= r1 && r0.is_finite() && r1.is_finite()) {
            return Err(Error::Config(alloc::format!("invalid rotation range {:?}", self.rotation)));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be positive".to_string()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws a scale and rotation about the placed pose's keypoint centroid,
/// then a translation keeping every visible keypoint on the canvas.
fn perturb(
    rng: &mut ChaCha8Rng,
    placed: &PoseSkeleton,
    canvas: Canvas,
    ranges: &AugmentationRanges,
) -> Option<SimilarityTransform> {
    let pivot = placed.visible_centroid()?;
    let scale = uniform(rng, ranges.scale);
    let rotation = uniform(rng, ranges.rotation).to_radians();
    let base = SimilarityTransform {
        scale,
        rotation,
        translation: (0.0, 0.0),
        pivot,
    };
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for k in placed.keypoints.iter().filter(|k| k.is_visible()) {
        let (x, y) = base.apply(k.x, k.y);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let (dx0, dx1) = (-x0, canvas.width as f64 - 1.0 - x1);
    let (dy0, dy1) = (-y0, canvas.height as f64 - 1.0 - y1);
    if dx0 > dx1 || dy0 > dy1 {
        return None;
    }
    Some(SimilarityTransform {
        translation: (uniform(rng, (dx0, dx1)), uniform(rng, (dy0, dy1))),
        ..base
    })
}

/// Placements of `count` augmented scenes: each person's reference
/// placement followed by a fresh random similarity.
pub fn augmentation_placements(
    spec: &SceneSpec,
    count: usize,
    seed: u64,
    ranges: &AugmentationRanges,
) -> Result<Vec<Vec<SimilarityTransform>>> {
    ranges.validate()?;
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let placed: Vec<PoseSkeleton> = spec
        .persons
        .iter()
        .enumerate()
        .map(|(i, p)| place_pose(p, spec.canvas, i))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(count);
    for m in 0..count {
        let mut scene = Vec::with_capacity(spec.persons.len());
        for (i, (entry, pose)) in spec.persons.iter().zip(&placed).enumerate() {
            if pose.visible_count() == 0 {
                scene.push(entry.placement);
                continue;
            }
            let xf = (0..ranges.max_attempts)
                .find_map(|_| perturb(&mut rng, pose, spec.canvas, ranges))
                .ok_or_else(|| {
                    Error::Placement(alloc::format!(
                        "no in-canvas placement for person {} of augmentation {} after {} attempts",
                        i,
                        m,
                        ranges.max_attempts
                    ))
                })?;
            scene.push(entry.placement.then(&xf));
        }
        out.push(scene);
    }
    Ok(out)
}

/// `count` re-compositions of `spec` with every person randomly scaled,
/// rotated and displaced. The background is never perturbed.
pub fn generate_augmentations(
    spec: &SceneSpec,
    count: usize,
    seed: u64,
    ranges: &AugmentationRanges,
) -> Result<Vec<ComposedScene>> {
    augmentation_placements(spec, count, seed, ranges)?
        .into_iter()
        .enumerate()
        .map(|(m, placements)| {
            let mut s = spec.clone();
            for (p, xf) in s.persons.iter_mut().zip(placements) {
                p.placement = xf;
            }
            compose_scene(&s).map_err(|e| e.at("augmentation", m))
        })
        .collect()
}

/// Pixel-exact copy of a mask as a `[1, h, w]` tensor of 0/1 values.
pub fn mask_tensor(mask: &Mask) -> Tensor {
    Tensor::from_vec(
        [1, mask.height(), mask.width()],
        mask.as_slice().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    )
    .expect("mask length matches its shape")
}
