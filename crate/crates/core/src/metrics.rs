//! Keypoint similarity, mAP over OKS thresholds, embedding similarity and
//! the harmonic-mean summary score.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use libm::{exp, sqrt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{contract, Error, Result};
use crate::pose::{PoseSequence, PoseSkeleton, ToyKeypointDetector, NUM_KEYPOINTS};
use crate::tensor::Image;

/// COCO falloff constants (twice the published sigmas) in body-18 order.
/// The neck takes the mean of the two shoulders.
pub const COCO_BODY18_K: [f64; NUM_KEYPOINTS] = [
    0.052, // nose
    0.158, // neck
    0.158, 0.144, 0.124, // right arm
    0.158, 0.144, 0.124, // left arm
    0.214, 0.174, 0.178, // right leg
    0.214, 0.174, 0.178, // left leg
    0.050, 0.050, // eyes
    0.070, 0.070, // ears
];

/// OKS thresholds 0.50, 0.55, ..., 0.95.
pub const OKS_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObjectScaleRule {
    /// `0.53 * sqrt(area)` of the tight box around the visible ground-truth
    /// keypoints, floored at `min_scale` pixels.
    BoxArea { min_scale: f64 },
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OksParams {
    pub per_keypoint_k: [f64; NUM_KEYPOINTS],
    pub object_scale: ObjectScaleRule,
}

impl Default for OksParams {
    fn default() -> Self {
        Self {
            per_keypoint_k: COCO_BODY18_K,
            object_scale: ObjectScaleRule::BoxArea { min_scale: 1.0 },
        }
    }
}

impl OksParams {
    pub fn validate(&self) -> Result<()> {
        if self.per_keypoint_k.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(Error::Config("every k_i must be positive".to_string()));
        }
        let s = match self.object_scale {
            ObjectScaleRule::BoxArea { min_scale } => min_scale,
            ObjectScaleRule::Fixed(s) => s,
        };
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Config("object scale must be positive".to_string()));
        }
        Ok(())
    }

    /// Object scale of `gt`; `None` when no keypoint is visible.
    pub fn object_scale(&self, gt: &PoseSkeleton) -> Option<f64> {
        let (x0, y0, x1, y1) = gt.visible_bounds()?;
        Some(match self.object_scale {
            ObjectScaleRule::BoxArea { min_scale } => (0.53 * sqrt((x1 - x0) * (y1 - y0))).max(min_scale),
            ObjectScaleRule::Fixed(s) => s,
        })
    }
}

/// Object keypoint similarity of `det` against `gt`, averaged over the
/// visible ground-truth keypoints. A keypoint the detector missed scores 0.
pub fn oks(gt: &PoseSkeleton, det: &PoseSkeleton, params: &OksParams) -> Result<f64> {
    params.validate()?;
    let s = params
        .object_scale(gt)
        .ok_or_else(|| Error::UndefinedOks(format!("person {} has no visible ground-truth keypoint", gt.person_id)))?;
    let mut total = 0.0;
    let mut count = 0usize;
    for ((g, d), k) in gt.keypoints.iter().zip(&det.keypoints).zip(&params.per_keypoint_k) {
        if !g.is_visible() {
            continue;
        }
        count += 1;
        if d.is_visible() {
            let d2 = (g.x - d.x) * (g.x - d.x) + (g.y - d.y) * (g.y - d.y);
            total += exp(-d2 / (2.0 * s * s * k * k));
        }
    }
    Ok(total / count as f64)
}

/// Mean over [`OKS_THRESHOLDS`] of the fraction of values at or above each.
pub fn map_from_oks(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(contract!("mAP needs at least one OKS value"));
    }
    let n = values.len() as f64;
    let sum: f64 = OKS_THRESHOLDS
        .iter()
        .map(|tau| values.iter().filter(|v| **v >= *tau).count() as f64 / n)
        .sum();
    Ok(sum / OKS_THRESHOLDS.len() as f64)
}

/// OKS of every (frame, person) pair, matching persons by `person_id`.
pub fn pairwise_oks(gt: &PoseSequence, det: &PoseSequence, params: &OksParams) -> Result<Vec<Vec<(u32, f64)>>> {
    if gt.len() != det.len() {
        return Err(contract!("{} ground-truth frames vs {} detected", gt.len(), det.len()));
    }
    gt.frames
        .iter()
        .zip(&det.frames)
        .enumerate()
        .map(|(f, (g, d))| {
            g.iter()
                .map(|p| {
                    let q = d
                        .iter()
                        .find(|q| q.person_id == p.person_id)
                        .ok_or_else(|| contract!("person {} was not detected", p.person_id))?;
                    Ok((p.person_id, oks(p, q, params)?))
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at("frame", f))
        })
        .collect()
}

/// Pose mAP of `det` against `gt`: per threshold the pass rate of the
/// matched pairs, averaged over the ten thresholds.
pub fn map_over_thresholds(gt: &PoseSequence, det: &PoseSequence, params: &OksParams) -> Result<f64> {
    let table = pairwise_oks(gt, det, params)?;
    let values: Vec<f64> = table.iter().flatten().map(|(_, v)| *v).collect();
    map_from_oks(&values)
}

/// `2ab / (a + b)`, or 0 when both are 0.
pub fn harmonic_mean(dino: f64, map: f64) -> Result<f64> {
    if !(dino >= 0.0 && map >= 0.0) {
        return Err(contract!("harmonic mean inputs must be non-negative, got {} and {}", dino, map));
    }
    if dino + map == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * dino * map / (dino + map))
}

/// Maps images to unit-norm feature vectors.
pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;
    fn embed(&self, image: &Image) -> Result<Vec<f64>>;
}

fn normalized(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = sqrt(v.iter().map(|x| x * x).sum());
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::Numerical("embedding has zero norm".to_string()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// Box-filtered pixels on a `grid x grid` raster, centred on mid-grey,
/// plus a constant component so flat grey images stay embeddable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelEmbedder {
    pub grid: usize,
}

impl Default for PixelEmbedder {
    fn default() -> Self {
        Self { grid: 8 }
    }
}

fn downsample(image: &Image, grid: usize) -> Result<Vec<f64>> {
    let (h, w) = (image.height(), image.width());
    if grid == 0 || h < grid || w < grid {
        return Err(contract!("cannot pool a {}x{} image onto a {} grid", w, h, grid));
    }
    let mut out = Vec::with_capacity(image.channels() * grid * grid);
    for c in 0..image.channels() {
        for gy in 0..grid {
            let (y0, y1) = (gy * h / grid, (gy + 1) * h / grid);
            for gx in 0..grid {
                let (x0, x1) = (gx * w / grid, (gx + 1) * w / grid);
                let mut s = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        s += image.get(c, y, x);
                    }
                }
                out.push(s / ((y1 - y0) * (x1 - x0)) as f64 - 0.5);
            }
        }
    }
    Ok(out)
}

impl Embedder for PixelEmbedder {
    fn name(&self) -> &str {
        "pixel"
    }

    fn embed(&self, image: &Image) -> Result<Vec<f64>> {
        let mut v = downsample(image, self.grid)?;
        v.push(0.05);
        normalized(v)
    }
}

/// Fixed Gaussian projection of the centred pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomProjectionEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for RandomProjectionEmbedder {
    fn default() -> Self {
        Self { dim: 64, seed: 0x5eed }
    }
}

impl Embedder for RandomProjectionEmbedder {
    fn name(&self) -> &str {
        "random-projection"
    }

    fn embed(&self, image: &Image) -> Result<Vec<f64>> {
        if self.dim == 0 {
            return Err(Error::Config("projection dimension must be positive".to_string()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ image.len() as u64);
        let mut out = alloc::vec![0.0; self.dim];
        for v in image.as_slice() {
            let centred = v - 0.5;
            for o in out.iter_mut() {
                let w: f64 = StandardNormal.sample(&mut rng);
                *o += w * centred;
            }
        }
        out.push(1e-3);
        normalized(out)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(contract!("embedding lengths {} and {} differ", a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// Mean cosine similarity of the frames' embeddings to the reference's.
pub fn similarity_to_reference(frames: &[Image], reference: &Image, embedder: &dyn Embedder) -> Result<f64> {
    if frames.is_empty() {
        return Err(contract!("similarity needs at least one frame"));
    }
    let r = embedder.embed(reference)?;
    let mut total = 0.0;
    for (i, f) in frames.iter().enumerate() {
        total += cosine(&embedder.embed(f).map_err(|e| e.at("frame", i))?, &r)?;
    }
    Ok(total / frames.len() as f64)
}

/// Locates keypoints of a known number of persons in a frame.
pub trait KeypointDetector: Send + Sync {
    fn detect(&self, image: &Image, expected_persons: usize) -> Result<Vec<PoseSkeleton>>;
}

impl KeypointDetector for ToyKeypointDetector {
    fn detect(&self, image: &Image, expected_persons: usize) -> Result<Vec<PoseSkeleton>> {
        ToyKeypointDetector::detect(self, image, expected_persons)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub clip_i: f64,
    pub dino: f64,
    pub map: f64,
    pub h: f64,
    /// `(person_id, oks)` for every person of every frame.
    pub per_frame_oks: Vec<Vec<(u32, f64)>>,
    /// Mean pixel distance over keypoints visible in both, if any.
    pub mean_keypoint_error: Option<f64>,
    pub clip_embedder: String,
    pub dino_embedder: String,
    /// Persons with nothing detected; they score OKS 0.
    pub warnings: Vec<Error>,
}

/// Image-similarity embedders standing in for CLIP-I and DINO.
pub struct EvalEmbedders<'a> {
    pub clip: &'a dyn Embedder,
    pub dino: &'a dyn Embedder,
}

/// Detects keypoints in every frame and computes all four scores.
pub fn evaluate(
    frames: &[Image],
    reference: &Image,
    gt: &PoseSequence,
    detector: &dyn KeypointDetector,
    embedders: EvalEmbedders<'_>,
    params: &OksParams,
) -> Result<EvalReport> {
    if frames.len() != gt.len() {
        return Err(contract!("{} frames vs {} ground-truth poses", frames.len(), gt.len()));
    }
    gt.validate()?;
    let mut warnings = Vec::new();
    let mut table = Vec::with_capacity(frames.len());
    let (mut err_sum, mut err_n) = (0.0, 0usize);
    for (f, (image, persons)) in frames.iter().zip(&gt.frames).enumerate() {
        let slots = persons.iter().map(|p| p.person_id as usize + 1).max().unwrap_or(0);
        let detected = if slots == 0 {
            Vec::new()
        } else {
            detector.detect(image, slots).map_err(|e| e.at("frame", f))?
        };
        let mut row = Vec::with_capacity(persons.len());
        for p in persons {
            let det = detected.iter().find(|d| d.person_id == p.person_id);
            let value = match det.filter(|d| d.visible_count() > 0) {
                Some(d) => {
                    for (g, k) in p.keypoints.iter().zip(&d.keypoints) {
                        if g.is_visible() && k.is_visible() {
                            err_sum += sqrt((g.x - k.x) * (g.x - k.x) + (g.y - k.y) * (g.y - k.y));
                            err_n += 1;
                        }
                    }
                    oks(p, d, params).map_err(|e| e.at("frame", f))?
                }
                None => {
                    warnings.push(
                        Error::UndefinedOks(format!("no keypoints detected for person {}", p.person_id)).at("frame", f),
                    );
                    0.0
                }
            };
            row.push((p.person_id, value));
        }
        table.push(row);
    }
    let values: Vec<f64> = table.iter().flatten().map(|(_, v)| *v).collect();
    let map = map_from_oks(&values)?;
    let clip_i = similarity_to_reference(frames, reference, embedders.clip)?;
    let dino = similarity_to_reference(frames, reference, embedders.dino)?;
    let h = harmonic_mean(dino.max(0.0), map)?;
    Ok(EvalReport {
        clip_i,
        dino,
        map,
        h,
        per_frame_oks: table,
        mean_keypoint_error: (err_n > 0).then(|| err_sum / err_n as f64),
        clip_embedder: embedders.clip.name().to_string(),
        dino_embedder: embedders.dino.name().to_string(),
        warnings,
    })
}

/// Boxed embedder list for callers that pick embedders at run time.
pub fn toy_embedders() -> (Box<dyn Embedder>, Box<dyn Embedder>) {
    (Box::new(RandomProjectionEmbedder::default()), Box::new(PixelEmbedder::default()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{Canvas, Keypoint};
    use crate::tensor::Tensor;
    use alloc::vec;
    use proptest::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn pose(points: &[(usize, f64, f64)], id: u32) -> PoseSkeleton {
        let mut kps = [Keypoint::HIDDEN; NUM_KEYPOINTS];
        for &(i, x, y) in points {
            kps[i] = Keypoint::new(x, y, 2);
        }
        PoseSkeleton::new(kps, id, Canvas::new(64, 64)).unwrap()
    }

    fn fixed(s: f64) -> OksParams {
        OksParams {
            object_scale: ObjectScaleRule::Fixed(s),
            ..Default::default()
        }
    }

    #[test]
    fn falloff_constants() {
        assert_eq!(COCO_BODY18_K[1], (COCO_BODY18_K[2] + COCO_BODY18_K[5]) / 2.0);
        assert!(OksParams::default().validate().is_ok());
        let mut bad = OksParams::default();
        bad.per_keypoint_k[3] = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn oks_examples() {
        let gt = pose(&[(0, 10.0, 10.0), (2, 20.0, 14.0), (9, 15.0, 30.0)], 0);
        assert_eq!(oks(&gt, &gt, &OksParams::default()).unwrap(), 1.0);

        let s = 3.0;
        let k = COCO_BODY18_K[9];
        let d = s * k * core::f64::consts::SQRT_2;
        let one = pose(&[(9, 5.0, 5.0)], 0);
        let moved = pose(&[(9, 5.0 + d, 5.0)], 0);
        assert!((oks(&one, &moved, &fixed(s)).unwrap() - exp(-1.0)).abs() <= 1e-12);

        // Term-by-term evaluation with the box-area scale.
        let det = pose(&[(0, 11.0, 10.0), (2, 20.0, 16.0), (9, 15.5, 30.5)], 0);
        let s = 0.53 * sqrt(10.0 * 20.0);
        let term = |d2: f64, k: f64| exp(-d2 / (2.0 * s * s * k * k));
        let expected = (term(1.0, 0.052) + term(4.0, 0.158) + term(0.5, 0.174)) / 3.0;
        assert!((oks(&gt, &det, &OksParams::default()).unwrap() - expected).abs() <= 1e-12);

        let missed = pose(&[(0, 10.0, 10.0)], 0);
        assert!((oks(&gt, &missed, &OksParams::default()).unwrap() - 1.0 / 3.0).abs() <= 1e-12);
        assert!(matches!(oks(&pose(&[], 0), &gt, &OksParams::default()), Err(Error::UndefinedOks(_))));
    }

    #[test]
    fn single_keypoint_scale_is_floored() {
        let p = pose(&[(4, 3.0, 3.0)], 0);
        assert_eq!(OksParams::default().object_scale(&p), Some(1.0));
    }

    #[test]
    fn map_examples() {
        assert_eq!(map_from_oks(&[1.0; 4]).unwrap(), 1.0);
        assert_eq!(map_from_oks(&[0.7; 6]).unwrap(), 0.5);
        assert_eq!(map_from_oks(&[0.49; 3]).unwrap(), 0.0);
        // 0.5 clears one threshold and 0.95 clears all ten.
        assert!((map_from_oks(&[0.5, 0.95]).unwrap() - 0.55).abs() <= 1e-15);
        assert!(map_from_oks(&[]).is_err());
    }

    #[test]
    fn map_over_sequences() {
        let a = pose(&[(0, 10.0, 10.0), (8, 20.0, 30.0)], 0);
        let b = pose(&[(0, 40.0, 10.0), (8, 50.0, 30.0)], 1);
        let gt = PoseSequence::new(vec![vec![a.clone(), b.clone()]; 3], None).unwrap();
        let swapped = PoseSequence::new(vec![vec![b.clone(), a.clone()]; 3], None).unwrap();
        assert_eq!(map_over_thresholds(&gt, &swapped, &OksParams::default()).unwrap(), 1.0);
        let short = PoseSequence::new(vec![vec![a.clone(), b.clone()]; 2], None).unwrap();
        assert!(matches!(map_over_thresholds(&gt, &short, &OksParams::default()), Err(Error::Contract(_))));
        let lonely = PoseSequence::new(vec![vec![a.clone()]; 3], None).unwrap();
        let err = map_over_thresholds(&gt, &lonely, &OksParams::default()).unwrap_err();
        assert!(matches!(err, Error::At { what: "frame", index: 0, .. }));
    }

    #[test]
    fn harmonic_mean_examples() {
        let h = harmonic_mean(0.83, 0.91).unwrap();
        assert_eq!(format!("{:.2}", h), "0.87");
        assert!((harmonic_mean(0.4, 0.4).unwrap() - 0.4).abs() <= 1e-15);
        assert_eq!(harmonic_mean(0.0, 0.6).unwrap(), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0).unwrap(), 0.0);
        assert!(harmonic_mean(-0.1, 0.5).is_err());
    }

    struct Stub(Vec<(f64, Vec<f64>)>);

    impl Embedder for Stub {
        fn name(&self) -> &str {
            "stub"
        }
        fn embed(&self, image: &Image) -> Result<Vec<f64>> {
            let key = image.as_slice()[0];
            Ok(self.0.iter().find(|(k, _)| *k == key).unwrap().1.clone())
        }
    }

    #[test]
    fn similarity_examples() {
        let img = |v: f64| Tensor::filled([3, 8, 8], v);
        let stub = Stub(vec![
            (0.0, vec![1.0, 0.0]),
            (0.1, vec![0.8, 0.6]),
            (0.2, vec![0.6, 0.8]),
            (0.3, vec![0.0, 1.0]),
        ]);
        assert!((similarity_to_reference(&[img(0.1), img(0.2)], &img(0.0), &stub).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(similarity_to_reference(&[img(0.3)], &img(0.0), &stub).unwrap(), 0.0);
        assert!(similarity_to_reference(&[], &img(0.0), &stub).is_err());
        let r = Tensor::from_vec([3, 8, 8], (0..192).map(|i| (i % 7) as f64 / 6.0).collect()).unwrap();
        for e in [&PixelEmbedder::default() as &dyn Embedder, &RandomProjectionEmbedder::default()] {
            assert!((similarity_to_reference(&[r.clone()], &r, e).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn embedders_are_unit_norm() {
        for v in [0.0, 0.5, 1.0] {
            let img = Tensor::filled([3, 16, 16], v);
            for e in [&PixelEmbedder::default() as &dyn Embedder, &RandomProjectionEmbedder::default()] {
                let x = e.embed(&img).unwrap();
                assert!((x.iter().map(|a| a * a).sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert!(PixelEmbedder { grid: 8 }.embed(&Tensor::zeros([3, 4, 4])).is_err());
    }

    fn rounded(poses: &[PoseSkeleton]) -> Vec<PoseSkeleton> {
        poses
            .iter()
            .map(|p| {
                let mut q = p.clone();
                for k in q.keypoints.iter_mut() {
                    k.x = libm::round(k.x);
                    k.y = libm::round(k.y);
                }
                q
            })
            .collect()
    }

    #[test]
    fn perfect_frames_score_one() {
        use crate::compose::compose_scene;
        use crate::toy::ToyWorld;
        use rand::SeedableRng;
        let world = ToyWorld::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let poses = rounded(&world.random_poses(&mut rng));
        let scene = compose_scene(&world.scene_spec(&poses, 1).unwrap()).unwrap();
        let gt = PoseSequence::new(vec![scene.poses.clone(); 3], None).unwrap();
        let frames = vec![scene.image.clone(); 3];
        let pixel = PixelEmbedder::default();
        let embedders = EvalEmbedders { clip: &pixel, dino: &pixel };
        let r = evaluate(&frames, &scene.image, &gt, &ToyKeypointDetector::default(), embedders, &OksParams::default()).unwrap();
        assert_eq!(r.map, 1.0);
        assert!((r.dino - 1.0).abs() < 1e-12 && (r.clip_i - 1.0).abs() < 1e-12);
        assert!((r.h - harmonic_mean(r.dino, r.map).unwrap()).abs() <= 1e-9);
        // Overlapping marker discs nudge a few centroids.
        assert!(r.mean_keypoint_error.unwrap() < 0.5);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn blank_frames_warn_per_frame() {
        use crate::toy::ToyWorld;
        use rand::SeedableRng;
        let world = ToyWorld::default();
        let scene = world.random_scene(&mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let blank = Tensor::filled(scene.image.shape(), 0.5);
        let gt = PoseSequence::new(vec![scene.poses.clone(); 2], None).unwrap();
        let e = RandomProjectionEmbedder::default();
        let embedders = EvalEmbedders { clip: &e, dino: &e };
        let r = evaluate(&[blank.clone(), blank.clone()], &scene.image, &gt, &ToyKeypointDetector::default(), embedders, &OksParams::default()).unwrap();
        assert_eq!(r.warnings.len(), 2 * scene.poses.len());
        assert!(r.warnings.iter().all(|w| matches!(w.root(), Error::UndefinedOks(_))));
        assert!(matches!(r.warnings[2], Error::At { index: 1, .. }));
        assert_eq!(r.map, 0.0);
        assert_eq!(r.mean_keypoint_error, None);
        let direct = cosine(&e.embed(&blank).unwrap(), &e.embed(&scene.image).unwrap()).unwrap();
        assert!((r.dino - direct).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn oks_is_bounded_and_monotone(d in proptest::collection::vec(0.0f64..20.0, NUM_KEYPOINTS), i in 0usize..NUM_KEYPOINTS, extra in 0.0f64..5.0) {
            let gt = pose(&(0..NUM_KEYPOINTS).map(|k| (k, 20.0 + k as f64, 10.0 + 2.0 * k as f64)).collect::<Vec<_>>(), 0);
            let shifted = |d: &[f64]| pose(&(0..NUM_KEYPOINTS).map(|k| (k, 20.0 + k as f64 + d[k], 10.0 + 2.0 * k as f64)).collect::<Vec<_>>(), 0);
            let p = OksParams::default();
            let a = oks(&gt, &shifted(&d), &p).unwrap();
            prop_assert!(a > 0.0 && a <= 1.0);
            let mut farther = d.clone();
            farther[i] += extra;
            prop_assert!(oks(&gt, &shifted(&farther), &p).unwrap() <= a);
        }

        #[test]
        fn oks_is_similarity_invariant(c in 0.2f64..5.0, s in 0.5f64..10.0, offs in proptest::collection::vec(-3.0f64..3.0, 2 * NUM_KEYPOINTS)) {
            let base: Vec<(usize, f64, f64)> = (0..NUM_KEYPOINTS).map(|k| (k, 4.0 + k as f64 * 0.5, 3.0 + k as f64 * 0.3)).collect();
            let det: Vec<(usize, f64, f64)> = base.iter().map(|&(k, x, y)| (k, x + offs[2 * k], y + offs[2 * k + 1])).collect();
            let scale = |v: &[(usize, f64, f64)]| v.iter().map(|&(k, x, y)| (k, c * x, c * y)).collect::<Vec<_>>();
            let big = |v: &[(usize, f64, f64)]| {
                let mut kps = [Keypoint::HIDDEN; NUM_KEYPOINTS];
                for &(i, x, y) in v { kps[i] = Keypoint::new(x, y, 2); }
                PoseSkeleton { keypoints: kps, person_id: 0, canvas: Canvas::new(1000, 1000) }
            };
            let a = oks(&big(&base), &big(&det), &fixed(s)).unwrap();
            let b = oks(&big(&scale(&base)), &big(&scale(&det)), &fixed(c * s)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            let box_rule = OksParams { object_scale: ObjectScaleRule::BoxArea { min_scale: 1e-6 }, ..Default::default() };
            let a = oks(&big(&base), &big(&det), &box_rule).unwrap();
            let b = oks(&big(&scale(&base)), &big(&scale(&det)), &box_rule).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn map_is_monotone(values in proptest::collection::vec(0.0f64..1.0, 1..20), i in 0usize..20, bump in 0.0f64..0.5) {
            let i = i % values.len();
            let mut better = values.clone();
            better[i] = (better[i] + bump).min(1.0);
            prop_assert!(map_from_oks(&better).unwrap() >= map_from_oks(&values).unwrap());
        }

        #[test]
        fn harmonic_mean_lies_between_min_and_geometric_mean(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let h = harmonic_mean(a, b).unwrap();
            prop_assert!(h >= a.min(b) - 1e-15);
            prop_assert!(h <= sqrt(a * b) + 1e-15);
            prop_assert!(h <= a.max(b) + 1e-15);
        }

        #[test]
        fn similarity_ignores_frame_order(seeds in proptest::collection::vec(0u8..255, 2..5)) {
            let img = |s: u8| Tensor::from_vec([3, 8, 8], (0..192).map(|i| ((i * (s as usize + 3)) % 11) as f64 / 10.0).collect()).unwrap();
            let frames: Vec<Image> = seeds.iter().map(|s| img(*s)).collect();
            let mut rev = frames.clone();
            rev.reverse();
            let e = RandomProjectionEmbedder::default();
            let a = similarity_to_reference(&frames, &img(7), &e).unwrap();
            let b = similarity_to_reference(&rev, &img(7), &e).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
