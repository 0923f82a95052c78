//! 2.5D urban map: building prisms, the feasible user region and its
//! partition into line-of-sight and blocked parts.
//!
//! Visibility is decided by a closed segment-box test against every
//! building. A segment that only grazes a face or an edge is blocked, so the
//! LoS/NLoS split of any point is unambiguous.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::SPEED_OF_LIGHT;
use crate::geometry::{Building, Rect, Vec3};
use crate::{Error, Result};

const STREET_CANYON: &str = include_str!("../scenes/street_canyon.toml");

/// On-disk scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub region: Rect,
    #[serde(default)]
    pub buildings: Vec<Building>,
    pub bs_position: Vec3,
    pub ula_direction: Vec3,
    pub user_height: f64,
}

/// Validated, immutable scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMap {
    cfg: SceneConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionFilter {
    All,
    LosOnly,
    NlosOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub spacing: f64,
    pub region_filter: RegionFilter,
}

impl GridSpec {
    pub fn new(spacing: f64, region_filter: RegionFilter) -> Self {
        GridSpec {
            spacing,
            region_filter,
        }
    }
}

impl SceneMap {
    pub fn new(cfg: SceneConfig) -> Result<Self> {
        let n = cfg.ula_direction;
        if ((n.norm() - 1.0).abs()) > 1e-12 {
            return Err(Error::Config(format!(
                "ula_direction must have unit norm, got {}",
                n.norm()
            )));
        }
        let r = cfg.region;
        if !(r.x_max > r.x_min && r.y_max > r.y_min) {
            return Err(Error::Config("region bounds are empty".into()));
        }
        if !(cfg.user_height > 0.0) {
            return Err(Error::Config("user_height must be positive".into()));
        }
        if !(cfg.bs_position.z > cfg.user_height) {
            return Err(Error::Config(
                "base station must sit above the user plane".into(),
            ));
        }
        for (i, b) in cfg.buildings.iter().enumerate() {
            let inside = b.x_min >= r.x_min
                && b.x_max <= r.x_max
                && b.y_min >= r.y_min
                && b.y_max <= r.y_max;
            if !inside || !(b.x_max > b.x_min && b.y_max > b.y_min && b.height > 0.0) {
                return Err(Error::Config(format!(
                    "building {i} is degenerate or outside the region"
                )));
            }
        }
        Ok(SceneMap { cfg })
    }

    /// The bundled street-canyon scene (two building rows and a back wall,
    /// BS at `[0, -9, 57]`).
    pub fn street_canyon() -> Self {
        Self::from_toml_str(STREET_CANYON).expect("bundled scene is valid")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SceneConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Self::new(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.cfg).expect("scene serializes")
    }

    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    pub fn buildings(&self) -> &[Building] {
        &self.cfg.buildings
    }

    pub fn region(&self) -> Rect {
        self.cfg.region
    }

    pub fn bs_position(&self) -> Vec3 {
        self.cfg.bs_position
    }

    pub fn ula_direction(&self) -> Vec3 {
        self.cfg.ula_direction
    }

    pub fn user_height(&self) -> f64 {
        self.cfg.user_height
    }

    /// Rigidly translated copy of the scene.
    pub fn translated(&self, offset: Vec3) -> Self {
        let mut cfg = self.cfg.clone();
        cfg.region.x_min += offset.x;
        cfg.region.x_max += offset.x;
        cfg.region.y_min += offset.y;
        cfg.region.y_max += offset.y;
        for b in &mut cfg.buildings {
            b.x_min += offset.x;
            b.x_max += offset.x;
            b.y_min += offset.y;
            b.y_max += offset.y;
        }
        cfg.bs_position = cfg.bs_position + offset;
        SceneMap { cfg }
    }

    pub fn in_region(&self, p: Vec3) -> bool {
        self.cfg.region.contains_xy(p)
    }

    pub fn inside_building(&self, p: Vec3) -> bool {
        self.cfg.buildings.iter().any(|b| b.contains(p))
    }

    /// In the region and outside every building.
    pub fn is_feasible(&self, p: Vec3) -> bool {
        self.in_region(p) && !self.inside_building(p)
    }

    /// Whether the segment between two points is free of buildings.
    pub fn segment_clear(&self, a: Vec3, b: Vec3) -> bool {
        !self.cfg.buildings.iter().any(|bd| bd.blocks_segment(a, b))
    }

    /// Line-of-sight test from the base station to `p`.
    pub fn is_los(&self, p: Vec3) -> Result<bool> {
        if !self.in_region(p) {
            return Err(Error::domain(format!(
                "point ({:.3}, {:.3}) lies outside the region",
                p.x, p.y
            )));
        }
        Ok(self.segment_clear(self.cfg.bs_position, p))
    }

    /// Region membership used by the identification rules: points outside
    /// the region or inside a building are treated as NLoS.
    pub fn in_los_region(&self, p: Vec3) -> bool {
        let q = Vec3::new(p.x, p.y, self.cfg.user_height);
        self.is_feasible(q) && self.segment_clear(self.cfg.bs_position, q)
    }

    /// Row-major lattice (y outer, x inner) over the region at the user
    /// height, skipping points inside buildings.
    pub fn generate_grid(&self, spec: GridSpec) -> Result<Vec<Vec3>> {
        if !(spec.spacing > 0.0) {
            return Err(Error::domain("grid spacing must be positive"));
        }
        let r = self.cfg.region;
        let nx = ((r.width() / spec.spacing) + 1e-9).floor() as usize + 1;
        let ny = ((r.depth() / spec.spacing) + 1e-9).floor() as usize + 1;
        let z = self.cfg.user_height;
        let mut out = Vec::new();
        for iy in 0..ny {
            let y = r.y_min + iy as f64 * spec.spacing;
            for ix in 0..nx {
                let p = Vec3::new(r.x_min + ix as f64 * spec.spacing, y, z);
                if self.inside_building(p) {
                    continue;
                }
                let keep = match spec.region_filter {
                    RegionFilter::All => true,
                    RegionFilter::LosOnly => self.segment_clear(self.cfg.bs_position, p),
                    RegionFilter::NlosOnly => !self.segment_clear(self.cfg.bs_position, p),
                };
                if keep {
                    out.push(p);
                }
            }
        }
        Ok(out)
    }

    /// Uniform users over the feasible region with `x >= 0`, `y >= 0`.
    pub fn sample_users(&self, n: usize, seed: u64) -> Result<Vec<Vec3>> {
        self.sample_users_where(n, seed, |_| true)
    }

    /// Rejection sampler with an extra acceptance predicate.
    pub fn sample_users_where(
        &self,
        n: usize,
        seed: u64,
        mut accept: impl FnMut(Vec3) -> bool,
    ) -> Result<Vec<Vec3>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let r = self.cfg.region;
        let (x_lo, y_lo) = (r.x_min.max(0.0), r.y_min.max(0.0));
        if x_lo > r.x_max || y_lo > r.y_max {
            return Err(Error::domain("feasible first-quadrant area is empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        let mut misses = 0usize;
        while out.len() < n {
            let p = Vec3::new(
                rng.gen_range(x_lo..=r.x_max),
                rng.gen_range(y_lo..=r.y_max),
                self.cfg.user_height,
            );
            if !self.inside_building(p) && accept(p) {
                out.push(p);
                misses = 0;
            } else {
                misses += 1;
                if misses > 1_000_000 {
                    return Err(Error::domain("feasible area is empty"));
                }
            }
        }
        Ok(out)
    }

    /// Geometric delay window `[tau_min, tau_max]` (seconds) that contains
    /// every traced path of a user in the region: the nearest region point
    /// bounds the direct delay from below, and the farthest ground corner
    /// plus two region crossings (at building height) bounds reflections
    /// of order up to two from above.
    pub fn delay_bounds(&self) -> (f64, f64) {
        let r = self.cfg.region;
        let bs = self.cfg.bs_position;
        let (cx, cy) = r.clamp_xy(bs.x, bs.y);
        let nearest = bs.distance(Vec3::new(cx, cy, self.cfg.user_height));
        let farthest = r
            .corners()
            .iter()
            .map(|&(x, y)| bs.distance(Vec3::new(x, y, 0.0)))
            .fold(0.0, f64::max);
        let h_max = self
            .cfg
            .buildings
            .iter()
            .map(|b| b.height)
            .fold(self.cfg.user_height, f64::max);
        let crossing = r.diagonal().hypot(h_max);
        (
            nearest / SPEED_OF_LIGHT,
            (farthest + 2.0 * crossing) / SPEED_OF_LIGHT,
        )
    }

    /// Area-weighted LoS fraction of the feasible first-quadrant region,
    /// measured on a lattice.
    pub fn los_fraction(&self, spacing: f64) -> Result<f64> {
        let all = self.generate_grid(GridSpec::new(spacing, RegionFilter::All))?;
        let los = all
            .iter()
            .filter(|p| self.segment_clear(self.cfg.bs_position, **p))
            .count();
        Ok(los as f64 / all.len().max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_scene(buildings: Vec<Building>) -> SceneMap {
        SceneMap::new(SceneConfig {
            region: Rect {
                x_min: 0.0,
                x_max: 10.0,
                y_min: 0.0,
                y_max: 10.0,
            },
            buildings,
            bs_position: Vec3::new(0.0, -9.0, 57.0),
            ula_direction: Vec3::new(1.0, 0.0, 0.0),
            user_height: 1.5,
        })
        .unwrap()
    }

    fn wall() -> Building {
        Building {
            x_min: 2.0,
            x_max: 8.0,
            y_min: 4.0,
            y_max: 5.0,
            height: 60.0,
        }
    }

    #[test]
    fn empty_scene_is_los() {
        let s = open_scene(vec![]);
        assert!(s.is_los(Vec3::new(0.5, 0.5, 1.5)).unwrap());
    }

    #[test]
    fn point_behind_tall_wall_is_blocked() {
        let s = open_scene(vec![wall()]);
        assert!(!s.is_los(Vec3::new(5.0, 8.0, 1.5)).unwrap());
        assert!(s.is_los(Vec3::new(5.0, 2.0, 1.5)).unwrap());
    }

    #[test]
    fn outside_region_is_domain_error() {
        let s = open_scene(vec![]);
        assert!(matches!(
            s.is_los(Vec3::new(-1.0, 5.0, 1.5)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn lattice_count() {
        let s = open_scene(vec![]);
        let g = s
            .generate_grid(GridSpec::new(5.0, RegionFilter::All))
            .unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[1], Vec3::new(5.0, 0.0, 1.5));
        let los = s
            .generate_grid(GridSpec::new(5.0, RegionFilter::LosOnly))
            .unwrap();
        assert_eq!(g, los);
    }

    #[test]
    fn grid_partitions_into_los_and_nlos() {
        let s = open_scene(vec![wall()]);
        let all = s
            .generate_grid(GridSpec::new(0.5, RegionFilter::All))
            .unwrap();
        let los = s
            .generate_grid(GridSpec::new(0.5, RegionFilter::LosOnly))
            .unwrap();
        let nlos = s
            .generate_grid(GridSpec::new(0.5, RegionFilter::NlosOnly))
            .unwrap();
        assert!(!nlos.is_empty() && !los.is_empty());
        assert_eq!(los.len() + nlos.len(), all.len());
        for p in &nlos {
            assert!(!los.contains(p));
        }
        for p in &all {
            assert!(los.contains(p) ^ nlos.contains(p));
        }
    }

    #[test]
    fn zero_spacing_rejected() {
        let s = open_scene(vec![]);
        assert!(s
            .generate_grid(GridSpec::new(0.0, RegionFilter::All))
            .is_err());
    }

    #[test]
    fn sampling_is_reproducible_and_feasible() {
        let s = open_scene(vec![wall()]);
        assert!(s.sample_users(0, 1).unwrap().is_empty());
        let a = s.sample_users(200, 7).unwrap();
        let b = s.sample_users(200, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| s.is_feasible(*p) && p.z == 1.5));
        assert_ne!(a, s.sample_users(200, 8).unwrap());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = open_scene(vec![]).config().clone();
        cfg.ula_direction = Vec3::new(1.0, 1.0, 0.0);
        assert!(SceneMap::new(cfg.clone()).is_err());
        cfg.ula_direction = Vec3::new(1.0, 0.0, 0.0);
        cfg.bs_position.z = 1.0;
        assert!(SceneMap::new(cfg.clone()).is_err());
        cfg.bs_position.z = 57.0;
        cfg.buildings.push(Building {
            x_min: 8.0,
            x_max: 12.0,
            y_min: 0.0,
            y_max: 1.0,
            height: 3.0,
        });
        assert!(SceneMap::new(cfg).is_err());
    }

    #[test]
    fn bundled_scene_round_trips_through_toml() {
        let s = SceneMap::street_canyon();
        let again = SceneMap::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn delay_bounds_are_ordered() {
        let s = SceneMap::street_canyon();
        let (lo, hi) = s.delay_bounds();
        assert!(hi > lo);
        assert!((lo * SPEED_OF_LIGHT - (81.0f64 + 55.5 * 55.5).sqrt()).abs() < 1e-9);
    }
}
