//! Pinhole camera and stick-figure rasteriser.

use super::{sub, Vec3};
use crate::image::{Frame, MaskImage};
use crate::pose::{Keypoint, KeypointKind, LimbTopology, Skeleton, N_KEYPOINTS};

/// Camera looking along +y with a level optical axis; image x grows with
/// world x, image y grows downwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Intrinsics proportional to the image size, horizon a quarter of the
    /// way down so standing people fill the lower part of the frame.
    pub fn for_image(position: Vec3, width: usize, height: usize) -> Self {
        Camera {
            position,
            focal_px: 0.42 * width as f64,
            cx: (width as f64 - 1.0) / 2.0,
            cy: 0.25 * height as f64,
            width,
            height,
        }
    }

    /// Image coordinates, or `None` behind the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let d = sub(p, self.position);
        if d[1] <= 1e-6 {
            return None;
        }
        Some((
            self.cx + self.focal_px * d[0] / d[1],
            self.cy - self.focal_px * d[2] / d[1],
        ))
    }

    /// 2-D skeleton; keypoints outside the image keep their coordinates but
    /// are marked invisible.
    pub fn skeleton(&self, keypoints: &[Vec3; N_KEYPOINTS]) -> Skeleton {
        let mut s = Skeleton::default();
        for (out, p) in s.keypoints.iter_mut().zip(keypoints) {
            if let Some((x, y)) = self.project(*p) {
                let inside = x >= 0.0
                    && y >= 0.0
                    && x <= (self.width - 1) as f64
                    && y <= (self.height - 1) as f64;
                *out = Keypoint {
                    x,
                    y,
                    visible: inside,
                    confidence: if inside { 1.0 } else { 0.0 },
                };
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderStyle {
    /// Full limb thickness in pixels.
    pub limb_px: f64,
    pub head_radius_px: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            limb_px: 4.0,
            head_radius_px: 4.0,
        }
    }
}

/// Fixed room backdrop: graded wall, darker floor, a door and a window.
pub fn background(h: usize, w: usize) -> Frame {
    let mut f = Frame::filled(h, w, [0.0; 3]);
    let horizon = (0.42 * h as f64) as usize;
    let in_rect = |y: usize, x: usize, r: [f64; 4]| {
        let (fy, fx) = (y as f64 / h as f64, x as f64 / w as f64);
        fx >= r[0] && fx < r[2] && fy >= r[1] && fy < r[3]
    };
    for y in 0..h {
        for x in 0..w {
            let fy = y as f64 / h as f64;
            let rgb = if in_rect(y, x, [0.08, 0.06, 0.2, 0.42]) {
                [0.52, 0.42, 0.33]
            } else if in_rect(y, x, [0.62, 0.08, 0.86, 0.3]) {
                [0.62, 0.70, 0.74]
            } else if y < horizon {
                let g = 0.80 - 0.12 * fy;
                [g, g - 0.02, g - 0.08]
            } else {
                let g = 0.40 + 0.12 * fy;
                [g, g - 0.03, g - 0.07]
            };
            f.set_pixel(y, x, rgb);
        }
    }
    f
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    (px - (a.0 + t * dx)).hypot(py - (a.1 + t * dy))
}

/// Paints every person over [`background`] in ascending index order (later
/// persons on top). Limbs are drawn between projected keypoints regardless
/// of visibility, so figures clip at the border. The mask is exactly the
/// painted pixel set.
pub fn render_frame(
    persons: &[Skeleton],
    colors: &[[f64; 3]],
    h: usize,
    w: usize,
    style: &RenderStyle,
) -> (Frame, MaskImage) {
    let mut frame = background(h, w);
    let mut mask = MaskImage::empty(h, w);
    let topo = LimbTopology::default();
    let half = style.limb_px / 2.0;
    for (p, color) in persons.iter().zip(colors) {
        let pt = |k: KeypointKind| {
            let kp = p.get(k);
            (kp.x, kp.y)
        };
        let mut shapes: Vec<((f64, f64), (f64, f64), f64)> = topo
            .limbs()
            .iter()
            .map(|&(a, b)| (pt(a), pt(b), half))
            .collect();
        let nose = pt(KeypointKind::Nose);
        shapes.push((nose, nose, style.head_radius_px));
        for (a, b, r) in shapes {
            if ![a.0, a.1, b.0, b.1].iter().all(|v| v.is_finite()) {
                continue;
            }
            let x_lo = (a.0.min(b.0) - r).floor().max(0.0) as usize;
            let y_lo = (a.1.min(b.1) - r).floor().max(0.0) as usize;
            let x_hi = (a.0.max(b.0) + r).ceil().min(w as f64 - 1.0);
            let y_hi = (a.1.max(b.1) + r).ceil().min(h as f64 - 1.0);
            if x_hi < 0.0 || y_hi < 0.0 {
                continue;
            }
            for y in y_lo..=y_hi as usize {
                for x in x_lo..=x_hi as usize {
                    if segment_distance(x as f64, y as f64, a, b) <= r {
                        frame.set_pixel(y, x, *color);
                        mask.set(y, x, true);
                    }
                }
            }
        }
    }
    (frame, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::body::PALETTE;

    fn stick(dx: f64) -> Skeleton {
        let pts: Vec<(f64, f64)> = (0..N_KEYPOINTS)
            .map(|i| (40.0 + dx + (i % 3) as f64 * 6.0, 20.0 + i as f64 * 5.0))
            .collect();
        Skeleton::from_points(&pts)
    }

    #[test]
    fn empty_scene_is_background() {
        let (f, m) = render_frame(&[], &[], 64, 128, &RenderStyle::default());
        assert_eq!(f, background(64, 128));
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn mask_is_exactly_the_painted_pixels() {
        let bg = background(96, 128);
        let (f, m) = render_frame(
            &[stick(0.0)],
            &[PALETTE[0]],
            96,
            128,
            &RenderStyle::default(),
        );
        assert!(m.count() > 0);
        assert_eq!(MaskImage::from_difference(&f, &bg, 0.0).unwrap(), m);
        for y in 0..96 {
            for x in 0..128 {
                if m.get(y, x) {
                    assert_eq!(f.pixel(y, x), PALETTE[0]);
                }
            }
        }
    }

    #[test]
    fn later_person_wins_overlaps() {
        let persons = [stick(0.0), stick(3.0)];
        let colors = [PALETTE[0], PALETTE[1]];
        let (f, m) = render_frame(&persons, &colors, 96, 128, &RenderStyle::default());
        let (_, m0) = render_frame(
            &persons[..1],
            &colors[..1],
            96,
            128,
            &RenderStyle::default(),
        );
        let (_, m1) = render_frame(
            &persons[1..],
            &colors[1..],
            96,
            128,
            &RenderStyle::default(),
        );
        assert_eq!(m, m0.union(&m1).unwrap());
        let mut overlaps = 0;
        for y in 0..96 {
            for x in 0..128 {
                if m1.get(y, x) {
                    assert_eq!(f.pixel(y, x), PALETTE[1]);
                    overlaps += usize::from(m0.get(y, x));
                } else if m0.get(y, x) {
                    assert_eq!(f.pixel(y, x), PALETTE[0]);
                }
            }
        }
        assert!(overlaps > 0);
    }

    #[test]
    fn projection_of_axis_point_is_principal_point() {
        let cam = Camera::for_image([4.0, 0.0, 1.8], 256, 128);
        let (x, y) = cam.project([4.0, 3.0, 1.8]).unwrap();
        assert_eq!((x, y), (cam.cx, cam.cy));
        assert!(cam.project([4.0, -1.0, 1.0]).is_none());
        let (x, _) = cam.project([5.0, 2.0, 1.8]).unwrap();
        assert!((x - (cam.cx + cam.focal_px / 2.0)).abs() < 1e-12);
    }
}
