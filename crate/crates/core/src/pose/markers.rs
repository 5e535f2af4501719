//! Color-keyed keypoint markers and their detector.
//!
//! Every (person slot, keypoint) pair owns a distinct saturated color. Toy
//! scenes keep body and background colors inside `[0.35, 0.65]` per channel,
//! while every marker color has a channel at 0 or 1, so markers never collide
//! with scene content.

use alloc::vec;
use alloc::vec::Vec;

use super::{Canvas, Keypoint, PoseSkeleton, NUM_KEYPOINTS};
use crate::error::{contract, Result};
use crate::tensor::Image;

const LEVELS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct MarkerPalette {
    colors: Vec<[f64; 3]>,
}

impl Default for MarkerPalette {
    fn default() -> Self {
        Self::new()
    }
}

fn level(i: usize) -> f64 {
    i as f64 / (LEVELS - 1) as f64
}

fn code(rgb: [usize; 3]) -> usize {
    (rgb[0] * LEVELS + rgb[1]) * LEVELS + rgb[2]
}

impl MarkerPalette {
    /// Colors on the `{0, 0.25, 0.5, 0.75, 1}` grid with at least one
    /// channel at 0 or 1, most saturated first.
    pub fn new() -> Self {
        let mut grid: Vec<([usize; 3], usize)> = Vec::new();
        for r in 0..LEVELS {
            for g in 0..LEVELS {
                for b in 0..LEVELS {
                    let extremes = [r, g, b].iter().filter(|&&c| c == 0 || c == LEVELS - 1).count();
                    if extremes > 0 {
                        grid.push(([r, g, b], extremes));
                    }
                }
            }
        }
        grid.sort_by_key(|&(rgb, e)| (core::cmp::Reverse(e), code(rgb)));
        Self {
            colors: grid
                .into_iter()
                .map(|(rgb, _)| [level(rgb[0]), level(rgb[1]), level(rgb[2])])
                .collect(),
        }
    }

    pub fn max_persons(&self) -> usize {
        self.colors.len() / NUM_KEYPOINTS
    }

    pub fn color(&self, slot: usize, keypoint: usize) -> [f64; 3] {
        self.colors[slot * NUM_KEYPOINTS + keypoint]
    }

    fn lookup(&self) -> Vec<Option<usize>> {
        let mut table = vec![None; LEVELS * LEVELS * LEVELS];
        for (i, c) in self.colors.iter().enumerate() {
            let q = c.map(|v| (v * (LEVELS - 1) as f64).round() as usize);
            table[code(q)] = Some(i);
        }
        table
    }
}

/// Paints the markers of `pose` as discs of `radius` pixels centred on the
/// rounded keypoint positions. Hidden keypoints are skipped.
pub fn draw_markers(image: &mut Image, pose: &PoseSkeleton, slot: usize, palette: &MarkerPalette, radius: usize) -> Result<()> {
    if image.channels() != 3 {
        return Err(contract!("markers need an RGB image, got {} channels", image.channels()));
    }
    if slot >= palette.max_persons() {
        return Err(contract!("person slot {} exceeds the palette's {} slots", slot, palette.max_persons()));
    }
    let (w, h) = (image.width() as i64, image.height() as i64);
    let r = radius as i64;
    for (i, k) in pose.keypoints.iter().enumerate() {
        if !k.is_visible() {
            continue;
        }
        let (cx, cy) = (libm::round(k.x) as i64, libm::round(k.y) as i64);
        let color = palette.color(slot, i);
        for y in (cy - r)..=(cy + r) {
            for x in (cx - r)..=(cx + r) {
                let (dx, dy) = (x - cx, y - cy);
                if dx * dx + dy * dy > r * r || x < 0 || y < 0 || x >= w || y >= h {
                    continue;
                }
                for (c, v) in color.iter().enumerate() {
                    image.set(c, y as usize, x as usize, *v);
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyKeypointDetector {
    pub palette: MarkerPalette,
    /// Per-channel tolerance when matching a pixel to a marker color.
    pub tolerance: f64,
}

impl Default for ToyKeypointDetector {
    fn default() -> Self {
        Self {
            palette: MarkerPalette::new(),
            tolerance: 0.12,
        }
    }
}

impl ToyKeypointDetector {
    /// Centroid of the pixels matching each marker color. Person `s` gets
    /// `person_id = s`; keypoints with no matching pixel get `v = 0`.
    pub fn detect(&self, image: &Image, expected_persons: usize) -> Result<Vec<PoseSkeleton>> {
        if expected_persons == 0 {
            return Err(contract!("expected person count must be positive"));
        }
        if expected_persons > self.palette.max_persons() {
            return Err(contract!(
                "{} persons exceed the palette's {} slots",
                expected_persons,
                self.palette.max_persons()
            ));
        }
        if image.channels() != 3 {
            return Err(contract!("detection needs an RGB image, got {} channels", image.channels()));
        }
        let table = self.palette.lookup();
        let keys = expected_persons * NUM_KEYPOINTS;
        let mut acc = vec![(0.0f64, 0.0f64, 0usize); keys];
        let steps = (LEVELS - 1) as f64;
        for y in 0..image.height() {
            'px: for x in 0..image.width() {
                let mut q = [0usize; 3];
                for (c, slot) in q.iter_mut().enumerate() {
                    let v = image.get(c, y, x);
                    let l = libm::round(v * steps).clamp(0.0, steps);
                    if (v - l / steps).abs() > self.tolerance {
                        continue 'px;
                    }
                    *slot = l as usize;
                }
                if let Some(i) = table[code(q)] {
                    if i < keys {
                        let a = &mut acc[i];
                        a.0 += x as f64;
                        a.1 += y as f64;
                        a.2 += 1;
                    }
                }
            }
        }
        let canvas = Canvas::new(image.width(), image.height());
        Ok((0..expected_persons)
            .map(|s| {
                let mut kps = [Keypoint::HIDDEN; NUM_KEYPOINTS];
                for (k, kp) in kps.iter_mut().enumerate() {
                    let (sx, sy, n) = acc[s * NUM_KEYPOINTS + k];
                    if n > 0 {
                        *kp = Keypoint::new(sx / n as f64, sy / n as f64, 2);
                    }
                }
                PoseSkeleton {
                    keypoints: kps,
                    person_id: s as u32,
                    canvas,
                }
            })
            .collect())
    }
}

/// [`ToyKeypointDetector::detect`] with the default palette and tolerance.
pub fn detect_toy_keypoints(image: &Image, expected_persons: usize) -> Result<Vec<PoseSkeleton>> {
    ToyKeypointDetector::default().detect(image, expected_persons)
}
