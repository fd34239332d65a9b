//! Box algebra: anchor offsets, in-plane rotation, 3D to 2D box projection and IoU.

use crate::error::{Error, Result};
use crate::types::{Anchor2, Anchor3, Box2, Box3};

/// Sine and cosine of an angle in degrees, exact at multiples of 90°.
pub fn sin_cos_deg(theta: f64) -> (f64, f64) {
    let r = theta.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        r.to_radians().sin_cos()
    }
}

/// Rotates `point` by `theta` degrees about `center` using
/// `[[cos, sin], [-sin, cos]]`, i.e. clockwise for positive angles in a
/// right-handed x/y frame.
pub fn rotate2(point: (f64, f64), theta: f64, center: (f64, f64)) -> (f64, f64) {
    let (s, c) = sin_cos_deg(theta);
    rotate_with(point, s, c, center)
}

#[inline]
fn rotate_with(point: (f64, f64), s: f64, c: f64, center: (f64, f64)) -> (f64, f64) {
    let dx = point.0 - center.0;
    let dy = point.1 - center.1;
    (c * dx + s * dy + center.0, -s * dx + c * dy + center.1)
}

/// Projects a 3D box onto the detector at `theta`: the four in-plane corners
/// are rotated, the rotated x range becomes the 2D x range and z passes through.
pub fn project_box3(b: &Box3, theta: f64, center: (f64, f64)) -> Box2 {
    let (s, c) = sin_cos_deg(theta);
    let corners = [
        (b.x1, b.y1),
        (b.x1, b.y2),
        (b.x2, b.y1),
        (b.x2, b.y2),
    ];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in corners {
        let (x, _) = rotate_with(p, s, c, center);
        lo = lo.min(x);
        hi = hi.max(x);
    }
    Box2 {
        x1: lo,
        z1: b.z1,
        x2: hi,
        z2: b.z2,
        score: b.score,
        label: b.label.clone(),
    }
}

fn check_extent(sizes: &[f64]) -> Result<()> {
    if sizes.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Encode(format!("box extents must be positive, got {sizes:?}")));
    }
    Ok(())
}

impl Anchor2 {
    /// The anchor coinciding with `b`.
    pub fn from_box(b: &Box2) -> Result<Self> {
        Anchor2::new(b.center(), [b.width(), b.height()])
    }
}

impl Anchor3 {
    pub fn from_box(b: &Box3) -> Result<Self> {
        Anchor3::new(b.center(), b.size())
    }
}

/// Offsets `(t_x, t_y, t_w, t_h)` of a 2D box relative to `anchor`.
/// The second axis of a projection box is its `z` axis.
pub fn encode_box2(b: &Box2, anchor: &Anchor2) -> Result<[f64; 4]> {
    let size = [b.width(), b.height()];
    check_extent(&size)?;
    let c = b.center();
    Ok([
        (c[0] - anchor.center[0]) / anchor.size[0],
        (c[1] - anchor.center[1]) / anchor.size[1],
        (size[0] / anchor.size[0]).ln(),
        (size[1] / anchor.size[1]).ln(),
    ])
}

pub fn decode_box2(t: &[f64; 4], anchor: &Anchor2) -> Box2 {
    let cx = t[0] * anchor.size[0] + anchor.center[0];
    let cz = t[1] * anchor.size[1] + anchor.center[1];
    let w = t[2].exp() * anchor.size[0];
    let h = t[3].exp() * anchor.size[1];
    Box2 {
        x1: cx - 0.5 * w,
        z1: cz - 0.5 * h,
        x2: cx + 0.5 * w,
        z2: cz + 0.5 * h,
        score: None,
        label: None,
    }
}

/// Offsets `(t_x, t_y, t_z, t_w, t_h, t_d)` of a 3D box relative to `anchor`.
pub fn encode_box3(b: &Box3, anchor: &Anchor3) -> Result<[f64; 6]> {
    let size = b.size();
    check_extent(&size)?;
    let c = b.center();
    let mut t = [0.0; 6];
    for a in 0..3 {
        t[a] = (c[a] - anchor.center[a]) / anchor.size[a];
        t[a + 3] = (size[a] / anchor.size[a]).ln();
    }
    Ok(t)
}

pub fn decode_box3(t: &[f64; 6], anchor: &Anchor3) -> Box3 {
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for a in 0..3 {
        let c = t[a] * anchor.size[a] + anchor.center[a];
        let s = t[a + 3].exp() * anchor.size[a];
        lo[a] = c - 0.5 * s;
        hi[a] = c + 0.5 * s;
    }
    Box3 {
        x1: lo[0],
        y1: lo[1],
        z1: lo[2],
        x2: hi[0],
        y2: hi[1],
        z2: hi[2],
        score: None,
        label: None,
    }
}

fn overlap(a1: f64, a2: f64, b1: f64, b2: f64) -> f64 {
    (a2.min(b2) - a1.max(b1)).max(0.0)
}

pub fn iou2(a: &Box2, b: &Box2) -> f64 {
    let inter = overlap(a.x1, a.x2, b.x1, b.x2) * overlap(a.z1, a.z2, b.z1, b.z2);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return if a.same_coords(b) { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn iou3(a: &Box3, b: &Box3) -> f64 {
    let inter = overlap(a.x1, a.x2, b.x1, b.x2)
        * overlap(a.y1, a.y2, b.y1, b.y2)
        * overlap(a.z1, a.z2, b.z1, b.z2);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return if a.same_coords(b) { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}
