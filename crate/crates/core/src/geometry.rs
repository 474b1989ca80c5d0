//! Vector and box primitives.
//!
//! Coordinates are right-handed and metric: `+x` is right, `+y` is backward
//! and `+z` is up. Object positions are box centers; an object resting on the
//! ground has `position.z == size.z / 2`. Yaw is a rotation about `+z` in
//! degrees, counterclockwise when viewed from above, and an unrotated object
//! faces `-y`.

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Distance between the xy projections of two points.
    pub fn planar_distance(&self, other: &Vec3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, rhs: f64) -> Vec3 {
        Vec3::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

/// The xy projection of a box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Footprint {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

impl Footprint {
    /// Closed inclusion of `self` in `outer`.
    pub fn within(&self, outer: &Footprint, eps: f64) -> bool {
        self.min_x >= outer.min_x - eps
            && self.max_x <= outer.max_x + eps
            && self.min_y >= outer.min_y - eps
            && self.max_y <= outer.max_y + eps
    }

    /// Area of the intersection of two footprints, zero when they are disjoint or only touch.
    pub fn overlap_area(&self, other: &Footprint) -> f64 {
        let dx = self.max_x.min(other.max_x) - self.min_x.max(other.min_x);
        let dy = self.max_y.min(other.max_y) - self.min_y.max(other.min_y);
        if dx > 0.0 && dy > 0.0 {
            dx * dy
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        debug_assert!(min.x <= max.x && min.y <= max.y && min.z <= max.z);
        Aabb { min, max }
    }

    pub fn from_center_half(center: Vec3, half: Vec3) -> Self {
        Aabb::new(center - half, center + half)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let e = self.extents();
        e.x * e.y * e.z
    }

    pub fn footprint(&self) -> Footprint {
        Footprint {
            min_x: self.min.x,
            max_x: self.max.x,
            min_y: self.min.y,
            max_y: self.max.y,
        }
    }

    pub fn bottom(&self) -> f64 {
        self.min.z
    }

    pub fn top(&self) -> f64 {
        self.max.z
    }
}

/// Normalizes an angle in degrees into `[0, 360)`.
pub fn normalize_degrees(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Sine and cosine of a yaw, exact at multiples of 90 degrees.
pub fn yaw_sin_cos(yaw_deg: f64) -> (f64, f64) {
    let yaw = normalize_degrees(yaw_deg);
    if yaw == 0.0 {
        (0.0, 1.0)
    } else if yaw == 90.0 {
        (1.0, 0.0)
    } else if yaw == 180.0 {
        (0.0, -1.0)
    } else if yaw == 270.0 {
        (-1.0, 0.0)
    } else {
        yaw.to_radians().sin_cos()
    }
}

/// Horizontal half extents of the axis-aligned box enclosing a footprint
/// of `size` rotated by `yaw_deg`.
pub fn rotated_half_extents(size: Vec3, yaw_deg: f64) -> (f64, f64) {
    let (s, c) = yaw_sin_cos(yaw_deg);
    let (hx, hy) = (size.x * 0.5, size.y * 0.5);
    (c.abs() * hx + s.abs() * hy, s.abs() * hx + c.abs() * hy)
}

/// Axis-aligned box of an object of `size` centered at `position` and rotated by `yaw_deg`.
pub fn aabb_from_pose(size: Vec3, position: Vec3, yaw_deg: f64) -> Result<Aabb, GeometryError> {
    if !(size.x > 0.0 && size.y > 0.0 && size.z > 0.0) || !size.is_finite() {
        return Err(GeometryError::InvalidDimension(size));
    }
    if !position.is_finite() || !yaw_deg.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let (hx, hy) = rotated_half_extents(size, yaw_deg);
    Ok(Aabb::from_center_half(position, Vec3::new(hx, hy, size.z * 0.5)))
}

/// Euclidean distance between the closest points of the two footprints.
pub fn horizontal_gap(a: &Aabb, b: &Aabb) -> f64 {
    let dx = (a.min.x - b.max.x).max(b.min.x - a.max.x).max(0.0);
    let dy = (a.min.y - b.max.y).max(b.min.y - a.max.y).max(0.0);
    dx.hypot(dy)
}

/// True when the boxes interpenetrate by more than `penetration_tol` on every axis.
pub fn boxes_collide(a: &Aabb, b: &Aabb, penetration_tol: f64) -> bool {
    let ox = a.max.x.min(b.max.x) - a.min.x.max(b.min.x);
    let oy = a.max.y.min(b.max.y) - a.min.y.max(b.min.y);
    let oz = a.max.z.min(b.max.z) - a.min.z.max(b.min.z);
    ox > penetration_tol && oy > penetration_tol && oz > penetration_tol
}

/// Unit forward vector (xy) of an object with the given yaw.
pub fn forward(yaw_deg: f64) -> (f64, f64) {
    let (s, c) = yaw_sin_cos(yaw_deg);
    // -y rotated counterclockwise by yaw
    (s, -c)
}

/// Yaw that points an object at `from` toward `to`.
pub fn yaw_toward(from: &Vec3, to: &Vec3) -> Option<f64> {
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    if dx == 0.0 && dy == 0.0 {
        return None;
    }
    Some(normalize_degrees(dx.atan2(-dy).to_degrees()))
}

/// Unsigned angle in `[0, 180]` between the source's forward direction and
/// the horizontal direction from source to target.
pub fn facing_angle(source_pos: Vec3, source_yaw: f64, target_pos: Vec3) -> Result<f64, GeometryError> {
    let dx = target_pos.x - source_pos.x;
    let dy = target_pos.y - source_pos.y;
    let len = dx.hypot(dy);
    if len == 0.0 || !len.is_finite() {
        return Err(GeometryError::UndefinedDirection);
    }
    let (fx, fy) = forward(source_yaw);
    let cross = fx * dy - fy * dx;
    let dot = fx * dx + fy * dy;
    Ok(cross.abs().atan2(dot).to_degrees())
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = Vec3> {
        (lo..hi, lo..hi, lo..hi).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    fn aabb() -> impl Strategy<Value = Aabb> {
        (vec3(0.1, 3.0), vec3(-5.0, 5.0), -720.0..720.0f64)
            .prop_map(|(s, p, yaw)| aabb_from_pose(s, p, yaw).unwrap())
    }

    proptest! {
        #[test]
        fn full_turn_is_identity(s in vec3(0.1, 3.0), p in vec3(-5.0, 5.0), yaw in -720.0..720.0f64) {
            let a = aabb_from_pose(s, p, yaw).unwrap();
            let b = aabb_from_pose(s, p, yaw + 360.0).unwrap();
            prop_assert!((a.min.x - b.min.x).abs() < 1e-9 && (a.max.y - b.max.y).abs() < 1e-9);
            prop_assert_eq!(a.min.z, b.min.z);
        }

        #[test]
        fn quarter_turn_volume_is_exact(s in vec3(0.1, 3.0), p in vec3(-5.0, 5.0), k in 0..4i32) {
            let b = aabb_from_pose(s, p, 90.0 * k as f64).unwrap();
            let v = s.x * s.y * s.z;
            prop_assert!((b.volume() - v).abs() <= 1e-12 * v.max(1.0));
        }

        #[test]
        fn gap_symmetric(a in aabb(), b in aabb()) {
            prop_assert_eq!(horizontal_gap(&a, &b), horizontal_gap(&b, &a));
            prop_assert_eq!(horizontal_gap(&a, &a), 0.0);
        }

        #[test]
        fn collide_symmetric(a in aabb(), b in aabb(), tol in 0.0001..0.01f64) {
            prop_assert_eq!(boxes_collide(&a, &b, tol), boxes_collide(&b, &a, tol));
            prop_assert!(boxes_collide(&a, &a, tol));
        }

        #[test]
        fn facing_full_turn(p in vec3(-5.0, 5.0), t in vec3(-5.0, 5.0), yaw in -360.0..360.0f64) {
            prop_assume!(p.planar_distance(&t) > 1e-6);
            let a = facing_angle(p, yaw, t).unwrap();
            let b = facing_angle(p, yaw + 360.0, t).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((0.0..=180.0).contains(&a));
        }
    }
}
