//! Model-based localization: sparse recovery of path parameters with
//! orthogonal matching pursuit over a separable angle × delay dictionary,
//! selection of the earliest path, and inversion of the range/angle
//! geometry into a position on the user plane.

use std::f64::consts::FRAC_PI_2;

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{array_steering, freq_steering, CsiMatrix, Path, PathSet, SystemConfig, SPEED_OF_LIGHT};
use crate::geometry::Vec3;
use crate::scene::SceneMap;
use crate::{Error, Result};

/// Points per side of the local refinement search, at a tenth of the
/// dictionary step.
const REFINE_FACTOR: usize = 10;

/// Iteration cap of the joint refit after each new atom.
const LM_ITERATIONS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DictionaryConfig {
    pub angle_grid: usize,
    pub delay_grid: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    pub max_paths: usize,
    pub residual_threshold: f64,
    pub refinement: bool,
}

impl DictionaryConfig {
    /// 512 × 512 atoms with refinement, delay range from the scene geometry.
    pub fn for_scene(scene: &SceneMap) -> Self {
        let (tau_min, tau_max) = scene.delay_bounds();
        DictionaryConfig {
            angle_grid: 512,
            delay_grid: 512,
            tau_min,
            tau_max,
            max_paths: 8,
            residual_threshold: 0.05,
            refinement: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.angle_grid < 2 || self.delay_grid < 2 {
            return Err(Error::Config("dictionary grids need at least 2 atoms".into()));
        }
        if !(self.residual_threshold > 0.0 && self.residual_threshold < 1.0) {
            return Err(Error::Config("residual_threshold must lie in (0, 1)".into()));
        }
        if !(self.tau_min >= 0.0 && self.tau_max > self.tau_min) {
            return Err(Error::Config("delay range must satisfy 0 <= tau_min < tau_max".into()));
        }
        Ok(())
    }

    fn angle_step(&self) -> f64 {
        2.0 * FRAC_PI_2 / (self.angle_grid - 1) as f64
    }

    fn delay_step(&self) -> f64 {
        (self.tau_max - self.tau_min) / (self.delay_grid - 1) as f64
    }

    pub fn angle(&self, i: usize) -> f64 {
        -FRAC_PI_2 + i as f64 * self.angle_step()
    }

    pub fn delay(&self, j: usize) -> f64 {
        self.tau_min + j as f64 * self.delay_step()
    }
}

/// Precomputed conjugate steering matrices for one system configuration.
#[derive(Debug, Clone)]
pub struct Dictionary {
    cfg: DictionaryConfig,
    system: SystemConfig,
    /// `A^H`, angle_grid × M.
    a_h: Array2<Complex64>,
    /// `conj(B)`, N_c × delay_grid.
    b_conj: Array2<Complex64>,
}

impl Dictionary {
    pub fn new(system: &SystemConfig, cfg: DictionaryConfig) -> Result<Self> {
        cfg.validate()?;
        system.validate()?;
        let m = system.num_antennas;
        let nc = system.num_subcarriers;
        let mut a_h = Array2::zeros((cfg.angle_grid, m));
        for (i, mut row) in a_h.axis_iter_mut(Axis(0)).enumerate() {
            row.assign(&array_steering(system, cfg.angle(i)).mapv(|c| c.conj()));
        }
        let mut b_conj = Array2::zeros((nc, cfg.delay_grid));
        for (j, mut col) in b_conj.axis_iter_mut(Axis(1)).enumerate() {
            col.assign(&freq_steering(system, cfg.delay(j)).mapv(|c| c.conj()));
        }
        Ok(Dictionary { cfg, system: *system, a_h, b_conj })
    }

    pub fn config(&self) -> &DictionaryConfig {
        &self.cfg
    }

    /// Correlations `A^H X conj(B)` of a matrix with every atom.
    fn project(&self, x: &Array2<Complex64>) -> Array2<Complex64> {
        let (m, nc) = x.dim();
        let (ga, gd) = (self.cfg.angle_grid, self.cfg.delay_grid);
        // pick the cheaper association order
        if ga * m * nc + ga * nc * gd <= m * nc * gd + ga * m * gd {
            self.a_h.dot(x).dot(&self.b_conj)
        } else {
            self.a_h.dot(&x.dot(&self.b_conj))
        }
    }

    /// Correlations of a single off-grid atom with the dictionary, as the
    /// separable pair `(A^H a, b^T conj(B))`.
    fn atom_projection(&self, a: &Array1<Complex64>, b: &Array1<Complex64>) -> (Array1<Complex64>, Array1<Complex64>) {
        (self.a_h.dot(a), b.dot(&self.b_conj))
    }
}

/// Result of a pursuit run.
#[derive(Debug, Clone)]
pub struct OmpOutput {
    pub paths: PathSet,
    /// Residual Frobenius norm after each iteration, starting with `‖H‖`.
    pub residual_history: Vec<f64>,
}

struct Atom {
    theta: f64,
    tau: f64,
    a: Array1<Complex64>,
    b: Array1<Complex64>,
    proj_a: Array1<Complex64>,
    proj_b: Array1<Complex64>,
}

/// Greedy sparse recovery of `(β, θ, τ)` triples from one CSI matrix.
pub fn omp_estimate(dict: &Dictionary, h: &CsiMatrix) -> Result<OmpOutput> {
    h.check_dims(&dict.system)?;
    let cfg = &dict.cfg;
    let sys = &dict.system;
    let h = &h.0;
    let h_norm = frob(h);
    let mut history = vec![h_norm];
    if h_norm == 0.0 {
        return Ok(OmpOutput { paths: PathSet::default(), residual_history: history });
    }
    let z_h = dict.project(h);
    let mut atoms: Vec<Atom> = Vec::new();
    let mut gains: Vec<Complex64> = Vec::new();
    let mut residual = h.clone();

    while atoms.len() < cfg.max_paths {
        // correlations of the residual: Z(H) minus the fitted atoms' images
        let mut z = z_h.clone();
        for (atom, g) in atoms.iter().zip(&gains) {
            for (mut row, pa) in z.axis_iter_mut(Axis(0)).zip(atom.proj_a.iter()) {
                let s = g * pa;
                row.zip_mut_with(&atom.proj_b, |x, pb| *x -= s * pb);
            }
        }
        let (mut best, mut bi, mut bj) = (-1.0, 0, 0);
        for ((i, j), v) in z.indexed_iter() {
            let n = v.norm_sqr();
            if n > best {
                best = n;
                bi = i;
                bj = j;
            }
        }
        let (mut theta, mut tau) = (cfg.angle(bi), cfg.delay(bj));
        if cfg.refinement {
            (theta, tau) = refine(sys, cfg, &residual, theta, tau);
        }
        if atoms.iter().any(|a| a.theta == theta && a.tau == tau) {
            break;
        }
        let a = array_steering(sys, theta);
        let b = freq_steering(sys, tau);
        let (proj_a, proj_b) = dict.atom_projection(&a, &b);
        atoms.push(Atom { theta, tau, a, b, proj_a, proj_b });

        gains = match least_squares(&atoms, h) {
            Some(g) => g,
            None => {
                atoms.pop();
                break;
            }
        };
        residual = residual_of(h, &atoms, &gains);
        if cfg.refinement {
            joint_refine(dict, h, &mut atoms, &mut gains, &mut residual);
        }
        let r = frob(&residual);
        history.push(r);
        if r < cfg.residual_threshold * h_norm {
            break;
        }
    }

    let paths = atoms
        .iter()
        .zip(&gains)
        .map(|(a, g)| Path { gain: *g, aoa: a.theta, toa: a.tau })
        .collect();
    Ok(OmpOutput { paths: PathSet::new(paths), residual_history: history })
}

fn residual_of(h: &Array2<Complex64>, atoms: &[Atom], gains: &[Complex64]) -> Array2<Complex64> {
    let mut r = h.clone();
    for (atom, g) in atoms.iter().zip(gains) {
        subtract_atom(&mut r, atom, *g);
    }
    r
}

/// Joint Levenberg-Marquardt refit of all path parameters.
///
/// Each model term is rank one, `β a(θ) b(τ)ᵀ`, and so is each of its
/// partial derivatives, so the normal matrix is assembled from inner
/// products of steering vectors and their derivatives alone. A step is
/// kept only if it lowers the residual norm.
fn joint_refine(dict: &Dictionary, h: &Array2<Complex64>, atoms: &mut [Atom], gains: &mut [Complex64], residual: &mut Array2<Complex64>) {
    let sys = &dict.system;
    let l = atoms.len();
    let n = 4 * l;
    let w_a = 2.0 * std::f64::consts::PI * sys.antenna_spacing / sys.wavelength();
    let w_d = -2.0 * std::f64::consts::PI * sys.subcarrier_spacing;
    let j = Complex64::new(0.0, 1.0);
    let floor = 1e-28 * frob(h).powi(2);
    let mut cost = frob(residual).powi(2);
    let mut mu = 1e-3;
    for _ in 0..LM_ITERATIONS {
        if cost <= floor {
            break;
        }
        // u-vectors: a_k, a'_k; v-vectors: b_k, b'_k
        let mut us = Vec::with_capacity(2 * l);
        let mut vs = Vec::with_capacity(2 * l);
        for atom in atoms.iter() {
            let c = w_a * atom.theta.cos();
            us.push(atom.a.clone());
            us.push(Array1::from_shape_fn(atom.a.len(), |m| atom.a[m] * j * (c * m as f64)));
            vs.push(atom.b.clone());
            vs.push(Array1::from_shape_fn(atom.b.len(), |q| atom.b[q] * j * (w_d * q as f64)));
        }
        // parameter p of atom k: (coefficient, u index, v index)
        let mut terms = Vec::with_capacity(n);
        for (k, g) in gains.iter().enumerate() {
            terms.push((Complex64::new(1.0, 0.0), 2 * k, 2 * k));
            terms.push((j, 2 * k, 2 * k));
            terms.push((*g, 2 * k + 1, 2 * k));
            terms.push((*g, 2 * k, 2 * k + 1));
        }
        let gram = |vecs: &[Array1<Complex64>]| {
            let m = vecs.len();
            let mut g = vec![vec![Complex64::default(); m]; m];
            for x in 0..m {
                for y in 0..m {
                    g[x][y] = vecs[x].iter().zip(vecs[y].iter()).map(|(p, q)| p.conj() * q).sum();
                }
            }
            g
        };
        let gu = gram(&us);
        let gv = gram(&vs);
        let mut v_conj = Array2::zeros((sys.num_subcarriers, 2 * l));
        for (c, v) in vs.iter().enumerate() {
            v_conj.column_mut(c).assign(&v.mapv(|z| z.conj()));
        }
        let rv = residual.dot(&v_conj);
        let mut jtj = vec![vec![0.0; n]; n];
        let mut jtr = vec![0.0; n];
        for (p, &(cp, up, vp)) in terms.iter().enumerate() {
            for (q, &(cq, uq, vq)) in terms.iter().enumerate() {
                jtj[p][q] = (cp.conj() * cq * gu[up][uq] * gv[vp][vq]).re;
            }
            let ur: Complex64 = us[up].iter().zip(rv.column(vp).iter()).map(|(x, y)| x.conj() * y).sum();
            jtr[p] = (cp.conj() * ur).re;
        }
        // unit-diagonal scaling keeps the elimination well conditioned
        let scale: Vec<f64> = (0..n).map(|p| jtj[p][p].sqrt().max(1e-300)).collect();
        let mut improved = false;
        for _ in 0..12 {
            let a: Vec<Vec<Complex64>> = (0..n)
                .map(|p| {
                    (0..n)
                        .map(|q| {
                            let d = if p == q { 1.0 + mu } else { jtj[p][q] / (scale[p] * scale[q]) };
                            Complex64::new(d, 0.0)
                        })
                        .collect()
                })
                .collect();
            let rhs: Vec<Complex64> = (0..n).map(|p| Complex64::new(jtr[p] / scale[p], 0.0)).collect();
            let Some(step) = solve_complex(a, rhs) else {
                mu *= 10.0;
                continue;
            };
            let step: Vec<Complex64> = step.iter().zip(&scale).map(|(y, s)| y / s).collect();
            let mut trial_atoms = Vec::with_capacity(l);
            let mut trial_gains = Vec::with_capacity(l);
            for (k, atom) in atoms.iter().enumerate() {
                let theta = (atom.theta + step[4 * k + 2].re).clamp(-FRAC_PI_2, FRAC_PI_2);
                let tau = (atom.tau + step[4 * k + 3].re).max(0.0);
                trial_gains.push(gains[k] + Complex64::new(step[4 * k].re, step[4 * k + 1].re));
                let a = array_steering(sys, theta);
                let b = freq_steering(sys, tau);
                trial_atoms.push((theta, tau, a, b));
            }
            let mut r = h.clone();
            for ((_, _, a, b), g) in trial_atoms.iter().zip(&trial_gains) {
                for (mut row, am) in r.axis_iter_mut(Axis(0)).zip(a.iter()) {
                    let s = g * am;
                    row.zip_mut_with(b, |x, bn| *x -= s * bn);
                }
            }
            let c = frob(&r).powi(2);
            if c < cost {
                for (atom, (theta, tau, a, b)) in atoms.iter_mut().zip(trial_atoms) {
                    let (proj_a, proj_b) = dict.atom_projection(&a, &b);
                    *atom = Atom { theta, tau, a, b, proj_a, proj_b };
                }
                gains.copy_from_slice(&trial_gains);
                *residual = r;
                let gain = (cost - c) / cost;
                cost = c;
                mu = (mu / 3.0).max(1e-12);
                improved = gain > 1e-10;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
}

fn frob(x: &Array2<Complex64>) -> f64 {
    x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn subtract_atom(r: &mut Array2<Complex64>, atom: &Atom, g: Complex64) {
    for (mut row, am) in r.axis_iter_mut(Axis(0)).zip(atom.a.iter()) {
        let s = g * am;
        row.zip_mut_with(&atom.b, |x, bn| *x -= s * bn);
    }
}

/// Two-level local search: a 10×-finer grid spanning one coarse step on
/// each side, then a further 10× zoom around its best point.
fn refine(sys: &SystemConfig, cfg: &DictionaryConfig, residual: &Array2<Complex64>, theta0: f64, tau0: f64) -> (f64, f64) {
    let f = REFINE_FACTOR as f64;
    let (t1, d1) = refine_grid(sys, residual, theta0, tau0, cfg.angle_step() / f, cfg.delay_step() / f);
    refine_grid(sys, residual, t1, d1, cfg.angle_step() / (f * f), cfg.delay_step() / (f * f))
}

/// Best correlation on a `(2K+1)²` grid with the given steps around a point.
fn refine_grid(sys: &SystemConfig, residual: &Array2<Complex64>, theta0: f64, tau0: f64, da: f64, dd: f64) -> (f64, f64) {
    let k = REFINE_FACTOR as i64;
    let thetas: Vec<f64> = (-k..=k)
        .map(|s| theta0 + s as f64 * da)
        .filter(|t| t.abs() <= FRAC_PI_2)
        .collect();
    let taus: Vec<f64> = (-k..=k).map(|s| tau0 + s as f64 * dd).filter(|t| *t >= 0.0).collect();
    let nc = sys.num_subcarriers;
    let m = sys.num_antennas;
    let mut b_conj = Array2::zeros((nc, taus.len()));
    for (j, t) in taus.iter().enumerate() {
        b_conj.column_mut(j).assign(&freq_steering(sys, *t).mapv(|c| c.conj()));
    }
    let rb = residual.dot(&b_conj);
    let mut a_h = Array2::zeros((thetas.len(), m));
    for (i, t) in thetas.iter().enumerate() {
        a_h.row_mut(i).assign(&array_steering(sys, *t).mapv(|c| c.conj()));
    }
    let z = a_h.dot(&rb);
    let (mut best, mut out) = (-1.0, (theta0, tau0));
    for ((i, j), v) in z.indexed_iter() {
        let n = v.norm_sqr();
        if n > best {
            best = n;
            out = (thetas[i], taus[j]);
        }
    }
    out
}

/// Joint least-squares gains for the selected atoms.
fn least_squares(atoms: &[Atom], h: &Array2<Complex64>) -> Option<Vec<Complex64>> {
    let l = atoms.len();
    let mut gram = vec![vec![Complex64::new(0.0, 0.0); l]; l];
    let mut rhs = vec![Complex64::new(0.0, 0.0); l];
    for (k, ak) in atoms.iter().enumerate() {
        for (q, aq) in atoms.iter().enumerate() {
            let aa: Complex64 = ak.a.iter().zip(aq.a.iter()).map(|(x, y)| x.conj() * y).sum();
            let bb: Complex64 = ak.b.iter().zip(aq.b.iter()).map(|(x, y)| x.conj() * y).sum();
            gram[k][q] = aa * bb;
        }
        let hb = h.dot(&ak.b.mapv(|c| c.conj()));
        rhs[k] = ak.a.iter().zip(hb.iter()).map(|(x, y)| x.conj() * y).sum();
    }
    solve_complex(gram, rhs)
}

/// Gaussian elimination with partial pivoting.
pub(crate) fn solve_complex(mut a: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> Option<Vec<Complex64>> {
    let n = b.len();
    let scale = a.iter().flatten().map(|c| c.norm()).fold(0.0, f64::max);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm()))?;
        if a[piv][col].norm() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            let (top, bottom) = a.split_at_mut(r);
            for (x, v) in bottom[0][col..].iter_mut().zip(&top[col][col..]) {
                *x -= f * v;
            }
            let v = b[col];
            b[r] -= f * v;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    Some(x)
}

/// Earliest path; equal delays resolve to the stronger gain.
pub fn select_shortest(paths: &PathSet) -> Result<(f64, f64)> {
    paths
        .paths()
        .iter()
        .min_by(|p, q| p.toa.total_cmp(&q.toa).then(q.gain.norm().total_cmp(&p.gain.norm())))
        .map(|p| (p.aoa, p.toa))
        .ok_or(Error::EmptyPaths)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateSource {
    ModelBased,
    Neural,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionEstimate {
    pub position: Vec3,
    pub source: EstimateSource,
    pub identified_los: bool,
}

/// Outcome of the geometric inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricFix {
    pub position: Vec3,
    /// False when neither mirror candidate was admissible (or the range/angle
    /// pair had no exact solution) and the point was projected into the region.
    pub exact: bool,
}

/// Invert range `cτ` and `sin θ = (p − p_BS)·n / ‖p − p_BS‖` into a point on
/// the user plane. Of the two mirror solutions, the one inside the region
/// with `x, y >= 0` wins; if both qualify, the one with larger `x`.
pub fn geometric_position(scene: &SceneMap, theta: f64, tau: f64) -> Result<GeometricFix> {
    let bs = scene.bs_position();
    let n = scene.ula_direction();
    let range = SPEED_OF_LIGHT * tau;
    let dz = scene.user_height() - bs.z;
    if range < dz.abs() * (1.0 - 1e-12) {
        return Err(Error::domain(format!(
            "range {range:.3} m cannot reach the user plane {:.3} m below the array",
            dz.abs()
        )));
    }
    let horiz_sq = (range * range - dz * dz).max(0.0);
    let s = n.x.hypot(n.y);
    if s < 1e-12 {
        return Err(Error::domain("a vertical array cannot resolve the horizontal position"));
    }
    let along = (range * theta.sin() - n.z * dz) / s;
    let (e1x, e1y) = (n.x / s, n.y / s);
    let (e2x, e2y) = (-e1y, e1x);
    let disc = horiz_sq - along * along;
    let exact = disc >= -1e-9 * horiz_sq.max(1.0);
    let perp = disc.max(0.0).sqrt();
    let cand = |sign: f64| {
        Vec3::new(
            bs.x + along * e1x + sign * perp * e2x,
            bs.y + along * e1y + sign * perp * e2y,
            scene.user_height(),
        )
    };
    let (p_plus, p_minus) = (cand(1.0), cand(-1.0));
    let admissible = |p: Vec3| scene.in_region(p) && p.x >= 0.0 && p.y >= 0.0;
    let chosen = match (admissible(p_plus), admissible(p_minus)) {
        (true, true) => Some(if p_minus.x > p_plus.x { p_minus } else { p_plus }),
        (true, false) => Some(p_plus),
        (false, true) => Some(p_minus),
        (false, false) => None,
    };
    if let Some(p) = chosen {
        return Ok(GeometricFix { position: p, exact });
    }
    let region = scene.region();
    let quad = |p: Vec3| {
        let (x, y) = region.clamp_xy(p.x.max(0.0), p.y.max(0.0));
        Vec3::new(x, y, scene.user_height())
    };
    let (q_plus, q_minus) = (quad(p_plus), quad(p_minus));
    let position = if q_minus.distance(p_minus) < q_plus.distance(p_plus) { q_minus } else { q_plus };
    Ok(GeometricFix { position, exact: false })
}

/// OMP → earliest path → geometry, sharing one precomputed dictionary.
#[derive(Debug, Clone)]
pub struct ModelBasedEstimator {
    scene: SceneMap,
    dict: Dictionary,
}

impl ModelBasedEstimator {
    pub fn new(scene: &SceneMap, system: &SystemConfig, cfg: DictionaryConfig) -> Result<Self> {
        Ok(ModelBasedEstimator { scene: scene.clone(), dict: Dictionary::new(system, cfg)? })
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn estimate(&self, h: &CsiMatrix) -> Result<PositionEstimate> {
        let paths = omp_estimate(&self.dict, h)?.paths;
        let (theta, tau) = select_shortest(&paths)?;
        let fix = geometric_position(&self.scene, theta, tau)?;
        Ok(PositionEstimate { position: fix.position, source: EstimateSource::ModelBased, identified_los: false })
    }
}

/// One-shot model-based estimate (builds a dictionary each call).
pub fn model_based_estimate(scene: &SceneMap, system: &SystemConfig, cfg: DictionaryConfig, h: &CsiMatrix) -> Result<PositionEstimate> {
    ModelBasedEstimator::new(scene, system, cfg)?.estimate(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::synthesize_csi;
    use crate::geometry::Rect;
    use crate::scene::SceneConfig;

    fn sys() -> SystemConfig {
        SystemConfig { num_antennas: 16, num_subcarriers: 32, ..SystemConfig::default() }
    }

    fn dict_cfg(refinement: bool) -> DictionaryConfig {
        DictionaryConfig {
            angle_grid: 64,
            delay_grid: 64,
            tau_min: 0.0,
            tau_max: 1.0e-6,
            max_paths: 4,
            residual_threshold: 1e-6,
            refinement,
        }
    }

    #[test]
    fn on_grid_single_path_is_exact() {
        let cfg = dict_cfg(true);
        let d = Dictionary::new(&sys(), cfg).unwrap();
        let (theta, tau) = (cfg.angle(40), cfg.delay(17));
        let gain = Complex64::new(0.3, -0.8);
        let h = synthesize_csi(&sys(), &PathSet::new(vec![Path { gain, aoa: theta, toa: tau }])).unwrap();
        let out = omp_estimate(&d, &h).unwrap();
        assert_eq!(out.paths.len(), 1);
        let p = out.paths.paths()[0];
        assert_eq!((p.aoa, p.toa), (theta, tau));
        assert!((p.gain - gain).norm() / gain.norm() < 1e-6);
    }

    #[test]
    fn two_on_grid_paths_recovered() {
        let s = sys();
        let cfg = DictionaryConfig { tau_max: 4.0e-6, ..dict_cfg(false) };
        let d = Dictionary::new(&s, cfg).unwrap();
        let p1 = Path { gain: Complex64::new(1.0, 0.0), aoa: cfg.angle(20), toa: cfg.delay(5) };
        let p2 = Path { gain: Complex64::new(0.0, 0.1), aoa: cfg.angle(45), toa: cfg.delay(30) };
        // delay separation well above 2 / (N_c Δf)
        assert!(p2.toa - p1.toa > 2.0 / (s.num_subcarriers as f64 * s.subcarrier_spacing));
        let h = synthesize_csi(&s, &PathSet::new(vec![p1, p2])).unwrap();
        let out = omp_estimate(&d, &h).unwrap();
        assert_eq!(out.paths.len(), 2);
        let got = out.paths.paths();
        assert_eq!((got[0].aoa, got[0].toa), (p1.aoa, p1.toa));
        assert_eq!((got[1].aoa, got[1].toa), (p2.aoa, p2.toa));
        assert!(*out.residual_history.last().unwrap() < 1e-6);
    }

    #[test]
    fn zero_matrix_gives_no_paths() {
        let d = Dictionary::new(&sys(), dict_cfg(true)).unwrap();
        let out = omp_estimate(&d, &CsiMatrix::zeros(&sys())).unwrap();
        assert!(out.paths.is_empty());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let d = Dictionary::new(&sys(), dict_cfg(true)).unwrap();
        let other = SystemConfig { num_antennas: 4, ..sys() };
        assert!(matches!(omp_estimate(&d, &CsiMatrix::zeros(&other)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn residual_never_increases() {
        let s = sys();
        let mut cfg = dict_cfg(true);
        cfg.max_paths = 6;
        let d = Dictionary::new(&s, cfg).unwrap();
        let ps = PathSet::new(vec![
            Path { gain: Complex64::new(1.0, 0.2), aoa: 0.31, toa: 211e-9 },
            Path { gain: Complex64::new(-0.4, 0.3), aoa: -0.52, toa: 377e-9 },
            Path { gain: Complex64::new(0.2, 0.1), aoa: 0.9, toa: 612e-9 },
        ]);
        let h = synthesize_csi(&s, &ps).unwrap();
        let out = omp_estimate(&d, &h).unwrap();
        for w in out.residual_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn shortest_path_selection() {
        let mk = |tau: f64, g: f64| Path { gain: Complex64::new(g, 0.0), aoa: tau * 1e7, toa: tau };
        let ps = PathSet::new(vec![mk(50e-9, 1.0), mk(30e-9, 0.2)]);
        assert_eq!(select_shortest(&ps).unwrap().1, 30e-9);
        let ps = PathSet::new(vec![mk(50e-9, 1.0)]);
        assert_eq!(select_shortest(&ps).unwrap().1, 50e-9);
        let ps = PathSet::new(vec![
            Path { gain: Complex64::new(0.1, 0.0), aoa: 0.1, toa: 40e-9 },
            Path { gain: Complex64::new(0.9, 0.0), aoa: 0.9, toa: 40e-9 },
        ]);
        assert_eq!(select_shortest(&ps).unwrap().0, 0.9);
        assert!(matches!(select_shortest(&PathSet::default()), Err(Error::EmptyPaths)));
    }

    fn overhead_scene() -> SceneMap {
        SceneMap::new(SceneConfig {
            region: Rect { x_min: -50.0, x_max: 50.0, y_min: -50.0, y_max: 50.0 },
            buildings: vec![],
            bs_position: Vec3::new(0.0, 0.0, 30.0),
            ula_direction: Vec3::new(1.0, 0.0, 0.0),
            user_height: 1.5,
        })
        .unwrap()
    }

    #[test]
    fn forward_then_inverse_round_trip() {
        let s = SceneMap::street_canyon();
        for p in s.sample_users(100, 11).unwrap() {
            let d = p - s.bs_position();
            let theta = (d.dot(s.ula_direction()) / d.norm()).asin();
            let tau = d.norm() / SPEED_OF_LIGHT;
            let fix = geometric_position(&s, theta, tau).unwrap();
            assert!(fix.exact);
            assert!(fix.position.distance(p) < 1e-6, "{p:?} -> {:?}", fix.position);
        }
    }

    #[test]
    fn broadside_lands_in_array_normal_plane() {
        let s = overhead_scene();
        let fix = geometric_position(&s, 0.0, 50.0 / SPEED_OF_LIGHT).unwrap();
        assert!(fix.exact);
        assert!(fix.position.x.abs() < 1e-9);
        assert!((fix.position.distance(s.bs_position()) - 50.0).abs() < 1e-9);
    }

    #[test]
    fn minimum_range_is_directly_below() {
        let s = overhead_scene();
        let fix = geometric_position(&s, 0.0, 28.5 / SPEED_OF_LIGHT).unwrap();
        assert!(fix.position.distance(Vec3::new(0.0, 0.0, 1.5)) < 1e-9);
        assert!(geometric_position(&s, 0.0, 20.0 / SPEED_OF_LIGHT).is_err());
    }
}
