//! Skeleton rasterization into control maps.

use libm::sqrt;

use super::{PoseSkeleton, LIMBS};
use crate::backend::ControlMap;
use crate::tensor::Tensor;

/// One channel per limb group: head and torso, arms, legs.
pub const CONTROL_CHANNELS: usize = 3;

fn group(keypoint: usize) -> usize {
    match keypoint {
        2..=7 => 1,
        9 | 10 | 12 | 13 => 2,
        _ => 0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterStyle {
    pub keypoint_radius: f64,
    pub limb_radius: f64,
}

impl RasterStyle {
    /// Keypoint discs of radius 2 and limbs of radius 1 at width 16, scaled
    /// with the map width.
    pub fn for_width(width: usize) -> Self {
        let f = width as f64 / 16.0;
        Self {
            keypoint_radius: 2.0 * f,
            limb_radius: f,
        }
    }
}

/// Distance from `(px, py)` to the segment `a`-`b`.
pub fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq > 0.0 {
        (((px - a.0) * dx + (py - a.1) * dy) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx - px, a.1 + t * dy - py);
    sqrt(cx * cx + cy * cy)
}

/// Paints a thick segment with a one-pixel linear edge ramp, keeping the
/// channel maximum.
fn stamp(map: &mut Tensor, channel: usize, a: (f64, f64), b: (f64, f64), radius: f64) {
    let (h, w) = (map.height(), map.width());
    let reach = radius + 0.5;
    let lo_x = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
    let lo_y = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
    let hi_x = (a.0.max(b.0) + reach).ceil();
    let hi_y = (a.1.max(b.1) + reach).ceil();
    if hi_x < 0.0 || hi_y < 0.0 {
        return;
    }
    let hi_x = (hi_x as usize).min(w.saturating_sub(1));
    let hi_y = (hi_y as usize).min(h.saturating_sub(1));
    for y in lo_y..=hi_y {
        for x in lo_x..=hi_x {
            let v = (reach - segment_distance(x as f64, y as f64, a, b)).clamp(0.0, 1.0);
            if v > map.get(channel, y, x) {
                map.set(channel, y, x, v);
            }
        }
    }
}

/// Renders limbs between visible keypoint pairs and discs at visible
/// keypoints into a `[3, h, w]` map. Pose coordinates are rescaled from each
/// pose's canvas to the map resolution.
pub fn rasterize_pose(poses: &[PoseSkeleton], resolution: (usize, usize), style: RasterStyle) -> ControlMap {
    let (w, h) = resolution;
    let mut map = Tensor::zeros([CONTROL_CHANNELS, h, w]);
    if w == 0 || h == 0 {
        return ControlMap::zeros([CONTROL_CHANNELS, h, w]);
    }
    for pose in poses {
        let sx = w as f64 / pose.canvas.width.max(1) as f64;
        let sy = h as f64 / pose.canvas.height.max(1) as f64;
        let at = |i: usize| {
            let k = pose.keypoints[i];
            ((k.x + 0.5) * sx - 0.5, (k.y + 0.5) * sy - 0.5)
        };
        for &(a, b) in LIMBS.iter() {
            if pose.keypoints[a].is_visible() && pose.keypoints[b].is_visible() {
                stamp(&mut map, group(b), at(a), at(b), style.limb_radius);
            }
        }
        for (i, k) in pose.keypoints.iter().enumerate() {
            if k.is_visible() {
                stamp(&mut map, group(i), at(i), at(i), style.keypoint_radius);
            }
        }
    }
    ControlMap::new(map).expect("rasterized values lie in [0, 1]")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{transform_pose, Canvas, Keypoint, SimilarityTransform, NUM_KEYPOINTS};
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn only(points: &[(usize, f64, f64)], canvas: Canvas) -> PoseSkeleton {
        let mut kps = [Keypoint::HIDDEN; NUM_KEYPOINTS];
        for &(i, x, y) in points {
            kps[i] = Keypoint::new(x, y, 2);
        }
        PoseSkeleton::new(kps, 0, canvas).unwrap()
    }

    #[test]
    fn empty_list_gives_zero_map() {
        let m = rasterize_pose(&[], (16, 16), RasterStyle::for_width(16));
        assert_eq!(m.shape(), [3, 16, 16]);
        assert!(m.tensor().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lone_keypoint_is_one_disc() {
        let c = Canvas::new(16, 16);
        let m = rasterize_pose(&[only(&[(0, 7.0, 7.0)], c)], (16, 16), RasterStyle::for_width(16));
        let t = m.tensor();
        assert!(t.as_slice().iter().sum::<f64>() > 0.0);
        for y in 0..16 {
            for x in 0..16 {
                let d = libm::hypot(x as f64 - 7.0, y as f64 - 7.0);
                assert_eq!(t.get(0, y, x) > 0.0, d < 2.5, "({x},{y})");
                assert_eq!(t.get(1, y, x), 0.0);
            }
        }
    }

    #[test]
    fn limb_touches_pixels_near_the_segment() {
        // Right elbow to wrist: the arm channel.
        let c = Canvas::new(16, 16);
        let (a, b) = ((3.2, 4.7), (11.6, 9.1));
        let style = RasterStyle {
            keypoint_radius: 0.0,
            limb_radius: 1.0,
        };
        let m = rasterize_pose(&[only(&[(3, a.0, a.1), (4, b.0, b.1)], c)], (16, 16), style);
        let mut touched = Vec::new();
        let mut expected = Vec::new();
        for y in 0..16 {
            for x in 0..16 {
                if m.tensor().get(1, y, x) > 0.0 {
                    touched.push((x, y));
                }
                // Brute force: distance to 2001 samples along the segment.
                let d = (0..=2000)
                    .map(|i| {
                        let s = i as f64 / 2000.0;
                        libm::hypot(
                            a.0 + s * (b.0 - a.0) - x as f64,
                            a.1 + s * (b.1 - a.1) - y as f64,
                        )
                    })
                    .fold(f64::INFINITY, f64::min);
                if d < 1.5 - 1e-3 {
                    expected.push((x, y));
                }
            }
        }
        assert_eq!(touched, expected);
    }

    #[test]
    fn rescales_to_other_resolutions() {
        let c = Canvas::new(16, 16);
        let p = only(&[(0, 7.5, 7.5)], c);
        let m = rasterize_pose(&[p], (32, 32), RasterStyle::for_width(32));
        let t = m.tensor();
        assert_eq!(t.get(0, 15, 15), t.get(0, 16, 16));
        assert_eq!(t.get(0, 15, 15), 1.0);
    }

    proptest! {
        #[test]
        fn integer_translation_shifts_the_map(dx in -4i32..=4, dy in -4i32..=4) {
            let c = Canvas::new(32, 32);
            let p = only(&[(1, 15.3, 12.0), (2, 12.1, 13.4), (3, 11.0, 17.9), (0, 15.8, 8.2)], c);
            let q = transform_pose(&p, &SimilarityTransform {
                translation: (dx as f64, dy as f64), ..Default::default()
            });
            let style = RasterStyle::for_width(32);
            let a = rasterize_pose(&[p], (32, 32), style);
            let b = rasterize_pose(&[q], (32, 32), style);
            for ch in 0..3 {
                for y in 0..32i32 {
                    for x in 0..32i32 {
                        let (sx, sy) = (x - dx, y - dy);
                        let src = if (0..32).contains(&sx) && (0..32).contains(&sy) {
                            a.tensor().get(ch, sy as usize, sx as usize)
                        } else {
                            0.0
                        };
                        prop_assert!((b.tensor().get(ch, y as usize, x as usize) - src).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn hidden_keypoints_draw_nothing() {
        let c = Canvas::new(16, 16);
        let mut p = only(&[(0, 7.0, 7.0)], c);
        p.keypoints[0].v = 0;
        let m = rasterize_pose(&vec![p], (16, 16), RasterStyle::for_width(16));
        assert!(m.tensor().as_slice().iter().all(|&v| v == 0.0));
    }
}
