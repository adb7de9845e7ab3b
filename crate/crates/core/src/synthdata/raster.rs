//! Skeleton layout and capsule rasterization for synthetic pedestrians.
//!
//! All raster math is `f32` with trigonometry from `libm`, so identical
//! specs produce bit-identical pixels on every platform.

use ndarray::{Array2, Array3};

use crate::geom::Mask;
use crate::keypoint::NUM_KEYPOINTS;
use crate::sample::Category;

/// A point in image corner coordinates (pixel (r, c) covers
/// [c, c+1) x [r, r+1); its centre is (c + 0.5, r + 0.5)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Pt {
    pub x: f32,
    pub y: f32,
}

/// A thick line segment; degenerate segments (a == b) draw a disc.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Capsule {
    pub a: Pt,
    pub b: Pt,
    pub radius: f32,
    /// Per-limb brightness factor applied to the body colour.
    pub shade: f32,
}

/// One pedestrian's sampled pose, in relative units of its height.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PedestrianSpec {
    /// Mid-hip position, corner coordinates.
    pub center_x: f32,
    pub center_y: f32,
    /// Nominal full-body height in pixels.
    pub height: f32,
    /// Whole-body lean angle (radians, clockwise).
    pub lean: f32,
    /// Upper/lower angles from straight-down for left and right arms.
    pub arm_angles: [f32; 4],
    /// Upper/lower angles from straight-down for left and right legs.
    pub leg_angles: [f32; 4],
    /// Body hue in [0, 1).
    pub hue: f32,
    pub category: Category,
}

fn rot(p: Pt, angle: f32) -> Pt {
    let (s, c) = (libm::sinf(angle), libm::cosf(angle));
    Pt {
        x: c * p.x - s * p.y,
        y: s * p.x + c * p.y,
    }
}

/// Offset of length `len` at `angle` radians from straight down (+y).
fn swing(len: f32, angle: f32) -> Pt {
    Pt {
        x: len * libm::sinf(angle),
        y: len * libm::cosf(angle),
    }
}

fn add(a: Pt, b: Pt) -> Pt {
    Pt { x: a.x + b.x, y: a.y + b.y }
}

/// Joint layout and capsule set for one pedestrian. Joint order follows the
/// 13-keypoint convention: nose, shoulders, elbows, wrists, hips, knees,
/// ankles (left before right).
pub(crate) fn skeleton(
    spec: &PedestrianSpec,
    limb_length_scale: f32,
    limb_width: f32,
) -> ([Pt; NUM_KEYPOINTS], Vec<Capsule>) {
    let h = spec.height;
    let s = limb_length_scale;

    let hip_l = Pt { x: -0.08 * h, y: 0.0 };
    let hip_r = Pt { x: 0.08 * h, y: 0.0 };
    let sho_c = Pt { x: 0.0, y: -0.34 * h };
    let sho_l = Pt { x: -0.10 * h, y: -0.34 * h };
    let sho_r = Pt { x: 0.10 * h, y: -0.34 * h };
    let nose = Pt { x: 0.0, y: -0.45 * h };

    let elb_l = add(sho_l, swing(0.15 * h * s, spec.arm_angles[0]));
    let wri_l = add(elb_l, swing(0.14 * h * s, spec.arm_angles[0] + spec.arm_angles[1]));
    let elb_r = add(sho_r, swing(0.15 * h * s, spec.arm_angles[2]));
    let wri_r = add(elb_r, swing(0.14 * h * s, spec.arm_angles[2] + spec.arm_angles[3]));

    let kne_l = add(hip_l, swing(0.24 * h * s, spec.leg_angles[0]));
    let ank_l = add(kne_l, swing(0.23 * h * s, spec.leg_angles[0] + spec.leg_angles[1]));
    let kne_r = add(hip_r, swing(0.24 * h * s, spec.leg_angles[2]));
    let ank_r = add(kne_r, swing(0.23 * h * s, spec.leg_angles[2] + spec.leg_angles[3]));

    let local = [
        nose, sho_l, sho_r, elb_l, elb_r, wri_l, wri_r, hip_l, hip_r, kne_l, kne_r, ank_l, ank_r,
    ];
    let centre = Pt { x: spec.center_x, y: spec.center_y };
    let joints = local.map(|p| add(rot(p, spec.lean), centre));

    let [nose, sho_l, sho_r, elb_l, elb_r, wri_l, wri_r, hip_l, hip_r, kne_l, kne_r, ank_l, ank_r] =
        joints;
    let hip_c = Pt {
        x: 0.5 * (hip_l.x + hip_r.x),
        y: 0.5 * (hip_l.y + hip_r.y),
    };
    let sho_cg = add(rot(sho_c, spec.lean), centre);

    let w = limb_width;
    let mut caps = vec![
        Capsule { a: hip_c, b: sho_cg, radius: 0.085 * h * w, shade: 1.0 },
        Capsule { a: hip_l, b: hip_r, radius: 0.055 * h * w, shade: 0.95 },
        Capsule { a: sho_l, b: sho_r, radius: 0.05 * h * w, shade: 1.05 },
        Capsule { a: sho_cg, b: nose, radius: 0.03 * h * w, shade: 1.1 },
        Capsule { a: nose, b: nose, radius: 0.075 * h * w, shade: 1.15 },
        Capsule { a: sho_l, b: elb_l, radius: 0.032 * h * w, shade: 0.9 },
        Capsule { a: elb_l, b: wri_l, radius: 0.03 * h * w, shade: 0.88 },
        Capsule { a: sho_r, b: elb_r, radius: 0.032 * h * w, shade: 0.92 },
        Capsule { a: elb_r, b: wri_r, radius: 0.03 * h * w, shade: 0.9 },
        Capsule { a: hip_l, b: kne_l, radius: 0.042 * h * w, shade: 0.85 },
        Capsule { a: kne_l, b: ank_l, radius: 0.038 * h * w, shade: 0.82 },
        Capsule { a: hip_r, b: kne_r, radius: 0.042 * h * w, shade: 0.87 },
        Capsule { a: kne_r, b: ank_r, radius: 0.038 * h * w, shade: 0.84 },
    ];
    if spec.category == Category::Rider {
        // A horizontal bar at ankle level reads as the vehicle frame.
        let mid = Pt {
            x: 0.5 * (ank_l.x + ank_r.x),
            y: 0.5 * (ank_l.y + ank_r.y),
        };
        caps.push(Capsule {
            a: Pt { x: mid.x - 0.26 * h, y: mid.y },
            b: Pt { x: mid.x + 0.26 * h, y: mid.y },
            radius: 0.035 * h * w,
            shade: 0.7,
        });
    }
    (joints, caps)
}

/// Extent of the capsule set: (min_x, min_y, max_x, max_y) in corner coords.
pub(crate) fn capsule_extent(caps: &[Capsule]) -> (f32, f32, f32, f32) {
    let mut ext = (f32::MAX, f32::MAX, f32::MIN, f32::MIN);
    for c in caps {
        for p in [c.a, c.b] {
            ext.0 = ext.0.min(p.x - c.radius);
            ext.1 = ext.1.min(p.y - c.radius);
            ext.2 = ext.2.max(p.x + c.radius);
            ext.3 = ext.3.max(p.y + c.radius);
        }
    }
    ext
}

fn dist_sq_to_segment(px: f32, py: f32, c: &Capsule) -> f32 {
    let (ax, ay, bx, by) = (c.a.x, c.a.y, c.b.x, c.b.y);
    let (dx, dy) = (bx - ax, by - ay);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq <= f32::EPSILON {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len_sq).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    (px - cx) * (px - cx) + (py - cy) * (py - cy)
}

/// Paint a capsule set into `image` (H, W, 3) and claim `owner` cells.
/// Pixels are tested at their centres.
pub(crate) fn paint_capsules(
    image: &mut Array3<f32>,
    owner: &mut Array2<Option<u16>>,
    caps: &[Capsule],
    base_rgb: [f32; 3],
    instance: u16,
) {
    let (h, w, _) = image.dim();
    for cap in caps {
        let x_lo = ((cap.a.x.min(cap.b.x) - cap.radius - 1.0).floor().max(0.0)) as usize;
        let y_lo = ((cap.a.y.min(cap.b.y) - cap.radius - 1.0).floor().max(0.0)) as usize;
        let x_hi = ((cap.a.x.max(cap.b.x) + cap.radius + 1.0).ceil()).min(w as f32) as usize;
        let y_hi = ((cap.a.y.max(cap.b.y) + cap.radius + 1.0).ceil()).min(h as f32) as usize;
        let r_sq = cap.radius * cap.radius;
        for r in y_lo..y_hi {
            for c in x_lo..x_hi {
                let (px, py) = (c as f32 + 0.5, r as f32 + 0.5);
                if dist_sq_to_segment(px, py, cap) <= r_sq {
                    for ch in 0..3 {
                        image[[r, c, ch]] = (base_rgb[ch] * cap.shade).clamp(0.0, 1.0);
                    }
                    owner[[r, c]] = Some(instance);
                }
            }
        }
    }
}

/// Rasterize a capsule set alone into a boolean grid (the full-body mask).
pub(crate) fn rasterize_mask(caps: &[Capsule], grid: (usize, usize)) -> Mask {
    let (h, w) = grid;
    let mut mask = Mask::from_elem((h, w), false);
    for cap in caps {
        let x_lo = ((cap.a.x.min(cap.b.x) - cap.radius - 1.0).floor().max(0.0)) as usize;
        let y_lo = ((cap.a.y.min(cap.b.y) - cap.radius - 1.0).floor().max(0.0)) as usize;
        let x_hi = ((cap.a.x.max(cap.b.x) + cap.radius + 1.0).ceil()).min(w as f32) as usize;
        let y_hi = ((cap.a.y.max(cap.b.y) + cap.radius + 1.0).ceil()).min(h as f32) as usize;
        let r_sq = cap.radius * cap.radius;
        for r in y_lo..y_hi {
            for c in x_lo..x_hi {
                if dist_sq_to_segment(c as f32 + 0.5, r as f32 + 0.5, cap) <= r_sq {
                    mask[[r, c]] = true;
                }
            }
        }
    }
    mask
}

/// HSV (h in [0,1), s/v in [0,1]) to RGB; pure arithmetic, no tables.
pub(crate) fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h - h.floor()) * 6.0;
    let sector = h6 as usize % 6;
    let f = h6 - sector as f32;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Procedural plasma background value for one pixel/channel. Phases make
/// each scene distinct; `scale` controls feature size (domain knob).
pub(crate) fn background_value(x: usize, y: usize, ch: usize, scale: f32, phases: &[f32; 6]) -> f32 {
    let fx = x as f32 / scale;
    let fy = y as f32 / scale;
    let a = libm::sinf(fx * 1.7 + phases[ch % 3]);
    let b = libm::sinf(fy * 1.3 + phases[3 + ch % 3]);
    let c = libm::sinf((fx + fy) * 0.9 + phases[(ch + 1) % 3]);
    0.42 + 0.11 * a + 0.09 * b + 0.06 * c
}

/// Quantize to the u8 grid (k / 255), matching lossless round-trips through
/// 8-bit image files.
pub(crate) fn quantize_u8(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}
