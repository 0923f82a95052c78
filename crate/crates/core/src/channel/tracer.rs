//! Image-method path tracer over the vertical walls of the scene's buildings.
//!
//! The source is mirrored across one or two wall planes; the straight line
//! from the user to the final image fixes the reflection points, which must
//! land inside the finite wall rectangles. Every leg is then checked for
//! visibility against all buildings.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Path, PathSet, SystemConfig, SPEED_OF_LIGHT};
use crate::geometry::Vec3;
use crate::scene::SceneMap;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracerConfig {
    /// Highest reflection order traced (1 or 2).
    pub max_order: usize,
    /// Amplitude reflection coefficient applied per bounce.
    pub reflection_coefficient: f64,
}

impl Default for TracerConfig {
    fn default() -> Self {
        TracerConfig {
            max_order: 2,
            reflection_coefficient: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    X,
    Y,
}

/// One vertical wall: the plane `axis = coord`, bounded by `[lo, hi]` along
/// the other horizontal axis and `[0, height]` in z. `outward` is the sign of
/// the outward normal.
#[derive(Debug, Clone, Copy)]
struct Wall {
    axis: Axis,
    coord: f64,
    lo: f64,
    hi: f64,
    height: f64,
    outward: f64,
}

impl Wall {
    fn normal_coord(&self, p: Vec3) -> f64 {
        match self.axis {
            Axis::X => p.x,
            Axis::Y => p.y,
        }
    }

    fn tangent_coord(&self, p: Vec3) -> f64 {
        match self.axis {
            Axis::X => p.y,
            Axis::Y => p.x,
        }
    }

    /// Signed distance on the outward side.
    fn side(&self, p: Vec3) -> f64 {
        (self.normal_coord(p) - self.coord) * self.outward
    }

    fn mirror(&self, p: Vec3) -> Vec3 {
        let c = 2.0 * self.coord;
        match self.axis {
            Axis::X => Vec3::new(c - p.x, p.y, p.z),
            Axis::Y => Vec3::new(p.x, c - p.y, p.z),
        }
    }

    /// Where segment `a -> b` crosses the wall plane, if it does so inside
    /// the finite wall.
    fn hit(&self, a: Vec3, b: Vec3) -> Option<Vec3> {
        let (na, nb) = (self.normal_coord(a), self.normal_coord(b));
        let denom = nb - na;
        if denom == 0.0 {
            return None;
        }
        let t = (self.coord - na) / denom;
        if !(0.0..=1.0).contains(&t) {
            return None;
        }
        let mut p = a.lerp(b, t);
        match self.axis {
            Axis::X => p.x = self.coord,
            Axis::Y => p.y = self.coord,
        }
        let u = self.tangent_coord(p);
        if u < self.lo || u > self.hi || p.z < 0.0 || p.z > self.height {
            return None;
        }
        Some(p)
    }
}

fn walls(scene: &SceneMap) -> Vec<Wall> {
    let mut out = Vec::with_capacity(4 * scene.buildings().len());
    for b in scene.buildings() {
        let h = b.height;
        out.push(Wall { axis: Axis::X, coord: b.x_min, lo: b.y_min, hi: b.y_max, height: h, outward: -1.0 });
        out.push(Wall { axis: Axis::X, coord: b.x_max, lo: b.y_min, hi: b.y_max, height: h, outward: 1.0 });
        out.push(Wall { axis: Axis::Y, coord: b.y_min, lo: b.x_min, hi: b.x_max, height: h, outward: -1.0 });
        out.push(Wall { axis: Axis::Y, coord: b.y_max, lo: b.x_min, hi: b.x_max, height: h, outward: 1.0 });
    }
    out
}

/// Angle of arrival at the array for a path leaving the BS towards `toward`.
pub fn aoa_towards(scene: &SceneMap, toward: Vec3) -> f64 {
    let d = toward - scene.bs_position();
    (d.dot(scene.ula_direction()) / d.norm()).clamp(-1.0, 1.0).asin()
}

fn make_path(cfg: &SystemConfig, rho: f64, order: usize, length: f64, aoa: f64) -> Path {
    let tau = length / SPEED_OF_LIGHT;
    let amp = cfg.wavelength() / (4.0 * PI * SPEED_OF_LIGHT * tau) * rho.powi(order as i32);
    Path {
        gain: Complex64::from_polar(amp, -2.0 * PI * cfg.carrier_frequency * tau),
        aoa,
        toa: tau,
    }
}

/// Trace the LoS path and specular wall reflections up to `tracer.max_order`.
pub fn trace_paths(
    scene: &SceneMap,
    cfg: &SystemConfig,
    p: Vec3,
    tracer: &TracerConfig,
) -> Result<PathSet> {
    if !(1..=2).contains(&tracer.max_order) {
        return Err(Error::Config("max_order must be 1 or 2".into()));
    }
    if !scene.is_feasible(p) {
        return Err(Error::domain("user position is not in the feasible region"));
    }
    let bs = scene.bs_position();
    let rho = tracer.reflection_coefficient;
    let mut paths = Vec::new();

    if scene.segment_clear(bs, p) {
        paths.push(make_path(cfg, rho, 0, bs.distance(p), aoa_towards(scene, p)));
    }

    let ws = walls(scene);
    for (i, w1) in ws.iter().enumerate() {
        if w1.side(bs) <= 0.0 {
            continue;
        }
        let img1 = w1.mirror(bs);
        // first order
        if w1.side(p) > 0.0 {
            if let Some(r1) = w1.hit(p, img1) {
                if scene.segment_clear(bs, r1) && scene.segment_clear(r1, p) {
                    paths.push(make_path(cfg, rho, 1, img1.distance(p), aoa_towards(scene, r1)));
                }
            }
        }
        if tracer.max_order < 2 {
            continue;
        }
        for (j, w2) in ws.iter().enumerate() {
            if i == j || w2.side(img1) <= 0.0 || w2.side(p) <= 0.0 {
                continue;
            }
            let img2 = w2.mirror(img1);
            let Some(r2) = w2.hit(p, img2) else { continue };
            if w1.side(r2) <= 0.0 {
                continue;
            }
            let Some(r1) = w1.hit(r2, img1) else { continue };
            if scene.segment_clear(bs, r1) && scene.segment_clear(r1, r2) && scene.segment_clear(r2, p) {
                paths.push(make_path(cfg, rho, 2, img2.distance(p), aoa_towards(scene, r1)));
            }
        }
    }

    if paths.is_empty() {
        return Err(Error::NoPath { x: p.x, y: p.y, z: p.z });
    }
    Ok(PathSet::new(paths))
}
