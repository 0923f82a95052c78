//! Small 3D vector type and the axis-aligned building box used by the scene.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A point or direction in meters, `[x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// Euclidean distance in the horizontal plane.
    pub fn distance_xy(self, o: Vec3) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self) * t
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Axis-aligned rectangle in the xy-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains_xy(&self, p: Vec3) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn depth(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.depth())
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.x_min, self.y_min),
            (self.x_max, self.y_min),
            (self.x_min, self.y_max),
            (self.x_max, self.y_max),
        ]
    }

    /// Closest point of the rectangle to `(x, y)`.
    pub fn clamp_xy(&self, x: f64, y: f64) -> (f64, f64) {
        (x.clamp(self.x_min, self.x_max), y.clamp(self.y_min, self.y_max))
    }
}

/// A building: an axis-aligned prism standing on the ground plane `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub height: f64,
}

/// Parametric slack applied to segment endpoints, relative to segment length.
const ENDPOINT_SLACK: f64 = 1e-9;

impl Building {
    pub fn footprint(&self) -> Rect {
        Rect {
            x_min: self.x_min,
            x_max: self.x_max,
            y_min: self.y_min,
            y_max: self.y_max,
        }
    }

    /// Closed point-in-box test; points on a face count as inside.
    pub fn contains(&self, p: Vec3) -> bool {
        self.footprint().contains_xy(p) && p.z >= 0.0 && p.z <= self.height
    }

    /// Whether the open segment `a -> b` touches the closed box.
    ///
    /// Endpoints are excluded (with a tiny parametric slack) so that legs
    /// starting on a reflecting face are not blocked by their own wall.
    /// Grazing a face or an edge anywhere in the interior counts as a hit.
    pub fn blocks_segment(&self, a: Vec3, b: Vec3) -> bool {
        let d = b - a;
        let mut t0 = ENDPOINT_SLACK;
        let mut t1 = 1.0 - ENDPOINT_SLACK;
        let slabs = [
            (a.x, d.x, self.x_min, self.x_max),
            (a.y, d.y, self.y_min, self.y_max),
            (a.z, d.z, 0.0, self.height),
        ];
        for (o, dir, lo, hi) in slabs {
            if dir == 0.0 {
                if o < lo || o > hi {
                    return false;
                }
                continue;
            }
            let inv = 1.0 / dir;
            let (mut ta, mut tb) = ((lo - o) * inv, (hi - o) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> Building {
        Building {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
            height: 1.0,
        }
    }

    #[test]
    fn segment_through_box_is_blocked() {
        let b = cube();
        assert!(b.blocks_segment(Vec3::new(-1.0, 0.5, 0.5), Vec3::new(2.0, 0.5, 0.5)));
        assert!(!b.blocks_segment(Vec3::new(-1.0, 2.0, 0.5), Vec3::new(2.0, 2.0, 0.5)));
        // passes over the roof
        assert!(!b.blocks_segment(Vec3::new(-1.0, 0.5, 1.5), Vec3::new(2.0, 0.5, 1.5)));
    }

    #[test]
    fn grazing_counts_as_blocked() {
        let b = cube();
        // runs along the y = 1 face
        assert!(b.blocks_segment(Vec3::new(-1.0, 1.0, 0.5), Vec3::new(2.0, 1.0, 0.5)));
        // skims the roof edge
        assert!(b.blocks_segment(Vec3::new(-1.0, 0.5, 1.0), Vec3::new(2.0, 0.5, 1.0)));
    }

    #[test]
    fn segment_leaving_a_face_is_not_blocked_by_it() {
        let b = cube();
        assert!(!b.blocks_segment(Vec3::new(1.0, 0.5, 0.5), Vec3::new(3.0, 4.0, 2.0)));
        assert!(!b.blocks_segment(Vec3::new(3.0, 4.0, 2.0), Vec3::new(1.0, 0.5, 0.5)));
    }

    #[test]
    fn short_segment_ending_before_box() {
        let b = cube();
        assert!(!b.blocks_segment(Vec3::new(-2.0, 0.5, 0.5), Vec3::new(-0.5, 0.5, 0.5)));
    }
}
