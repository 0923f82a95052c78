//! Discrete optimal transport for label self-generation.
//!
//! Users identified as NLoS have model-based estimates that are displaced
//! by reflection detours. Transporting the empirical distribution of those
//! estimates onto a uniform distribution over the NLoS part of the map, and
//! reading each user's image off the coupling by barycentric averaging,
//! gives a training label for each such user.
//!
//! Two solvers are provided:
//!
//! * [`sinkhorn`], entropic regularization with log-domain stabilization,
//!   for production-size problems;
//! * [`exact_lp`], a transportation simplex for small instances, used as a
//!   correctness reference.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::estimator::PositionEstimate;
use crate::geometry::Vec3;
use crate::scene::{GridSpec, RegionFilter, SceneMap};
use crate::{Error, Result};

/// Largest number of cells accepted by [`exact_lp`].
pub const EXACT_LP_MAX_CELLS: usize = 10_000;

/// Absorb scalings into the potentials once they leave `[e^-B, e^B]`.
const ABSORB_BOUND: f64 = 1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OtSolver {
    #[default]
    Sinkhorn,
    ExactLp,
}

impl std::str::FromStr for OtSolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinkhorn" => Ok(OtSolver::Sinkhorn),
            "exact_lp" | "exact" => Ok(OtSolver::ExactLp),
            other => Err(Error::Config(format!("unknown OT solver `{other}`"))),
        }
    }
}

/// Entropic weight, either absolute (squared meters) or as a multiple of
/// the median cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularization {
    RelativeToMedian(f64),
    Absolute(f64),
}

impl Regularization {
    pub fn resolve(&self, c: &Array2<f64>) -> f64 {
        match *self {
            Regularization::Absolute(e) => e,
            Regularization::RelativeToMedian(r) => r * median(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtConfig {
    pub regularization: Regularization,
    pub max_iterations: usize,
    /// Stop once both marginals are met to this ∞-norm.
    pub convergence_tol: f64,
    pub solver: OtSolver,
    /// Move each barycentric label to its nearest target grid point.
    pub snap_to_grid: bool,
}

impl Default for OtConfig {
    fn default() -> Self {
        OtConfig {
            regularization: Regularization::RelativeToMedian(0.01),
            max_iterations: 100_000,
            convergence_tol: 1e-7,
            solver: OtSolver::Sinkhorn,
            snap_to_grid: false,
        }
    }
}

impl OtConfig {
    pub fn validate(&self) -> Result<()> {
        let eps = match self.regularization {
            Regularization::Absolute(e) | Regularization::RelativeToMedian(e) => e,
        };
        if !(eps > 0.0) {
            return Err(Error::Config("OT regularization must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("OT max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// A coupling between two discrete distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub gamma: Array2<f64>,
    pub source_marginal: Array1<f64>,
    pub target_marginal: Array1<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// ∞-norm of the worse of the two marginal residuals.
    pub marginal_error: f64,
}

impl TransportPlan {
    fn new(gamma: Array2<f64>, a: &Array1<f64>, b: &Array1<f64>, converged: bool, iterations: usize) -> Self {
        let marginal_error = marginal_residual(&gamma, a, b);
        TransportPlan {
            gamma,
            source_marginal: a.clone(),
            target_marginal: b.clone(),
            converged,
            iterations,
            marginal_error,
        }
    }

    /// `⟨Γ, C⟩`.
    pub fn cost(&self, c: &Array2<f64>) -> f64 {
        (&self.gamma * c).sum()
    }
}

fn marginal_residual(gamma: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let rows = gamma.sum_axis(Axis(1));
    let cols = gamma.sum_axis(Axis(0));
    let r = rows.iter().zip(a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let c = cols.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    r.max(c)
}

/// Squared Euclidean distances between every source and target.
pub fn cost_matrix(sources: &[Vec3], targets: &[Vec3]) -> Result<Array2<f64>> {
    if sources.is_empty() || targets.is_empty() {
        return Err(Error::domain("cost matrix needs at least one source and one target"));
    }
    Ok(Array2::from_shape_fn((sources.len(), targets.len()), |(i, j)| {
        (sources[i] - targets[j]).norm_sq()
    }))
}

/// Median entry of a matrix (mean of the two middle entries for even sizes).
pub fn median(c: &Array2<f64>) -> f64 {
    let mut v: Vec<f64> = c.iter().copied().collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Uniform probability vector of length `n`.
pub fn uniform(n: usize) -> Array1<f64> {
    Array1::from_elem(n, 1.0 / n as f64)
}

fn check_marginals(c: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>, strict: bool) -> Result<()> {
    let (ns, nt) = c.dim();
    if ns == 0 || nt == 0 {
        return Err(Error::domain("empty transport problem"));
    }
    if a.len() != ns {
        return Err(Error::dims(ns, a.len()));
    }
    if b.len() != nt {
        return Err(Error::dims(nt, b.len()));
    }
    let bad = |x: &f64| if strict { !(*x > 0.0) } else { !(*x >= 0.0) } || !x.is_finite();
    if a.iter().any(bad) || b.iter().any(bad) {
        return Err(Error::domain("marginals must be positive and finite"));
    }
    if (a.sum() - 1.0).abs() > 1e-9 || (b.sum() - 1.0).abs() > 1e-9 {
        return Err(Error::domain("marginals must each sum to one"));
    }
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("cost matrix has non-finite entries"));
    }
    Ok(())
}

/// Entropic OT by Sinkhorn scaling, stabilized in the log domain.
///
/// Costs are divided by their maximum so the kernel exponent stays in a
/// fixed range. Dual potentials `f`, `g` are kept in log space; the kernel
/// `exp((f_i + g_j − C_ij)/ε)` is rebuilt whenever the running scalings
/// grow past a bound and are absorbed into the potentials. The potentials
/// start at row and column minima so every row and column of the first
/// kernel has an entry equal to one.
pub fn sinkhorn(c: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>, cfg: &OtConfig) -> Result<TransportPlan> {
    cfg.validate()?;
    check_marginals(c, a, b, true)?;
    let (ns, nt) = c.dim();
    let eps_abs = cfg.regularization.resolve(c);
    if !(eps_abs > 0.0) {
        // all costs zero under relative scaling: any plan is optimal
        let gamma = Array2::from_shape_fn((ns, nt), |(i, j)| a[i] * b[j]);
        return Ok(TransportPlan::new(gamma, a, b, true, 0));
    }
    let scale = c.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let c = c / scale;
    let eps = eps_abs / scale;

    let mut f = Array1::<f64>::zeros(ns);
    let mut g = Array1::<f64>::zeros(nt);
    for (i, row) in c.axis_iter(Axis(0)).enumerate() {
        f[i] = row.iter().copied().fold(f64::INFINITY, f64::min);
    }
    for j in 0..nt {
        g[j] = (0..ns).map(|i| c[[i, j]] - f[i]).fold(f64::INFINITY, f64::min);
    }
    let build_kernel = |f: &Array1<f64>, g: &Array1<f64>, eps: f64| {
        Array2::from_shape_fn((ns, nt), |(i, j)| ((f[i] + g[j] - c[[i, j]]) / eps).exp())
    };

    // geometric ε-continuation down to the target, warm-starting each
    // stage from the previous potentials
    let mut stages = Vec::new();
    let mut e = 1.0f64;
    while e > eps {
        stages.push(e);
        e *= 0.5;
    }
    stages.push(eps);
    let stage_tol = 1e-2 * a.iter().copied().fold(f64::INFINITY, f64::min);

    let mut u = Array1::<f64>::ones(ns);
    let mut v = Array1::<f64>::ones(nt);
    let mut k = Array2::zeros((0, 0));
    let mut converged = false;
    let mut iterations = 0;
    for (s, &eps_s) in stages.iter().enumerate() {
        let last = s + 1 == stages.len();
        let tol = if last { cfg.convergence_tol } else { stage_tol.max(cfg.convergence_tol) };
        f.zip_mut_with(&u, |f, u| *f += eps_s * u.ln());
        g.zip_mut_with(&v, |g, v| *g += eps_s * v.ln());
        u.fill(1.0);
        v.fill(1.0);
        k = build_kernel(&f, &g, eps_s);
        let mut stage_iters = 0;
        while iterations < cfg.max_iterations && (last || stage_iters < 100) {
            let kv = k.dot(&v);
            if stage_iters > 0 {
                // columns are exact after the previous v-update; rows decide
                let err = kv
                    .iter()
                    .zip(&u)
                    .zip(a)
                    .map(|((kv, u), a)| (u * kv - a).abs())
                    .fold(0.0, f64::max);
                if err < tol {
                    converged = last;
                    break;
                }
            }
            iterations += 1;
            stage_iters += 1;
            u = a / &kv;
            let ktu = k.t().dot(&u);
            v = b / &ktu;
            if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!(
                    "Sinkhorn scaling overflowed at ε = {eps_abs:e}; increase the regularization"
                )));
            }
            let big = u.iter().chain(v.iter()).any(|&x| !(1.0 / ABSORB_BOUND..=ABSORB_BOUND).contains(&x));
            if big {
                f.zip_mut_with(&u, |f, u| *f += eps_s * u.ln());
                g.zip_mut_with(&v, |g, v| *g += eps_s * v.ln());
                u.fill(1.0);
                v.fill(1.0);
                k = build_kernel(&f, &g, eps_s);
            }
        }
    }

    let mut gamma = k;
    for (mut row, ui) in gamma.axis_iter_mut(Axis(0)).zip(&u) {
        row.zip_mut_with(&v, |x, vj| *x *= ui * vj);
    }
    if gamma.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("Sinkhorn produced a non-finite plan".into()));
    }
    if !converged {
        log::warn!("Sinkhorn stopped after {iterations} iterations without meeting the tolerance");
    }
    Ok(TransportPlan::new(gamma, a, b, converged, iterations))
}

/// Exact OT by the transportation simplex.
///
/// Starts from the northwest-corner basis, prices with dual potentials
/// on the spanning tree of basic cells, and pivots the most negative
/// reduced cost around the unique tree cycle.
pub fn exact_lp(c: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> Result<TransportPlan> {
    let (m, n) = c.dim();
    if m * n > EXACT_LP_MAX_CELLS {
        return Err(Error::TooLarge(m * n));
    }
    check_marginals(c, a, b, false)?;
    let mut simplex = Simplex::northwest(c, a, b);
    let max_pivots = 50 * (m + n) * (m + n) + 1000;
    let tol = 1e-12 * c.iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
    let mut pivots = 0;
    let converged = loop {
        simplex.compute_potentials();
        let Some((i, j)) = simplex.entering(tol) else { break true };
        if pivots == max_pivots {
            break false;
        }
        simplex.pivot(i, j);
        pivots += 1;
    };
    let mut gamma = Array2::zeros((m, n));
    for &(i, j, x) in &simplex.basis {
        gamma[[i, j]] = x.max(0.0);
    }
    Ok(TransportPlan::new(gamma, a, b, converged, pivots))
}

/// Transport problem solved by the configured solver.
pub fn solve(c: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>, cfg: &OtConfig) -> Result<TransportPlan> {
    match cfg.solver {
        OtSolver::Sinkhorn => sinkhorn(c, a, b, cfg),
        OtSolver::ExactLp => exact_lp(c, a, b),
    }
}

struct Simplex<'a> {
    c: &'a Array2<f64>,
    m: usize,
    n: usize,
    /// Basic cells `(row, col, flow)`; always `m + n − 1` of them.
    basis: Vec<(usize, usize, f64)>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl<'a> Simplex<'a> {
    fn northwest(c: &'a Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> Self {
        let (m, n) = c.dim();
        let mut ra = a.to_vec();
        let mut rb = b.to_vec();
        let mut basis = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = ra[i].min(rb[j]);
            basis.push((i, j, x));
            ra[i] -= x;
            rb[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && ra[i] <= rb[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        Simplex { c, m, n, basis, u: vec![0.0; m], v: vec![0.0; n] }
    }

    /// Adjacency over nodes `0..m` (rows) and `m..m+n` (columns); each
    /// entry is `(neighbor, basis index)`.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, &(i, j, _)) in self.basis.iter().enumerate() {
            adj[i].push((self.m + j, k));
            adj[self.m + j].push((i, k));
        }
        adj
    }

    fn compute_potentials(&mut self) {
        let adj = self.adjacency();
        let mut seen = vec![false; self.m + self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        self.u[0] = 0.0;
        while let Some(node) = stack.pop() {
            for &(next, k) in &adj[node] {
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                let (i, j, _) = self.basis[k];
                if next >= self.m {
                    self.v[j] = self.c[[i, j]] - self.u[i];
                } else {
                    self.u[i] = self.c[[i, j]] - self.v[j];
                }
                stack.push(next);
            }
        }
    }

    fn entering(&self, tol: f64) -> Option<(usize, usize)> {
        let mut best = -tol;
        let mut cell = None;
        for i in 0..self.m {
            for j in 0..self.n {
                let r = self.c[[i, j]] - self.u[i] - self.v[j];
                if r < best {
                    best = r;
                    cell = Some((i, j));
                }
            }
        }
        cell
    }

    /// Basis indices on the tree path from column node `m + j` to row
    /// node `i`, in walking order.
    fn tree_path(&self, i: usize, j: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let start = self.m + j;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        while let Some(node) = queue.pop_front() {
            if node == i {
                break;
            }
            for &(next, k) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, k));
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = i;
        while let Some((prev, k)) = parent[node] {
            path.push(k);
            node = prev;
        }
        path.reverse();
        path
    }

    fn pivot(&mut self, i: usize, j: usize) {
        let path = self.tree_path(i, j);
        // cells alternate −, +, −, ... starting next to the entering cell
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (step, &k) in path.iter().enumerate() {
            if step % 2 == 0 && self.basis[k].2 < theta {
                theta = self.basis[k].2;
                leave = k;
            }
        }
        for (step, &k) in path.iter().enumerate() {
            if step % 2 == 0 {
                self.basis[k].2 -= theta;
            } else {
                self.basis[k].2 += theta;
            }
        }
        self.basis[leave] = (i, j, theta);
    }
}

/// Row-normalized plan applied to target points.
pub fn barycentric_map(plan: &TransportPlan, targets: &[Vec3]) -> Result<Vec<Vec3>> {
    let (ns, nt) = plan.gamma.dim();
    if targets.len() != nt {
        return Err(Error::dims(nt, targets.len()));
    }
    let mut out = Vec::with_capacity(ns);
    for (i, row) in plan.gamma.axis_iter(Axis(0)).enumerate() {
        let mass: f64 = row.sum();
        if !(mass > 0.0) {
            return Err(Error::domain(format!("source {i} carries no mass")));
        }
        let mut acc = Vec3::default();
        for (w, t) in row.iter().zip(targets) {
            acc = acc + *t * *w;
        }
        out.push(acc * (1.0 / mass));
    }
    Ok(out)
}

/// Training labels for every user: identified-LoS users keep their
/// model-based estimate, identified-NLoS users receive the barycentric
/// image of their estimate under the transport to the NLoS grid at
/// spacing `delta_d`.
pub fn generate_labels(
    estimates: &[PositionEstimate],
    identified_los: &[bool],
    scene: &SceneMap,
    delta_d: f64,
    cfg: &OtConfig,
) -> Result<Vec<Vec3>> {
    if estimates.len() != identified_los.len() {
        return Err(Error::dims(estimates.len(), identified_los.len()));
    }
    let mut labels: Vec<Vec3> = estimates.iter().map(|e| e.position).collect();
    let nlos: Vec<usize> = (0..estimates.len()).filter(|&i| !identified_los[i]).collect();
    if nlos.is_empty() {
        return Ok(labels);
    }
    let targets = scene.generate_grid(GridSpec::new(delta_d, RegionFilter::NlosOnly))?;
    if targets.is_empty() {
        return Err(Error::domain("the NLoS grid is empty"));
    }
    let sources: Vec<Vec3> = nlos.iter().map(|&i| labels[i]).collect();
    let c = cost_matrix(&sources, &targets)?;
    let plan = solve(&c, &uniform(sources.len()), &uniform(targets.len()), cfg)?;
    log::info!(
        "label transport: {} sources, {} targets, {} iterations, marginal error {:.2e}",
        sources.len(),
        targets.len(),
        plan.iterations,
        plan.marginal_error
    );
    let mapped = barycentric_map(&plan, &targets)?;
    for (&i, p) in nlos.iter().zip(mapped) {
        labels[i] = if cfg.snap_to_grid { nearest(&targets, p) } else { p };
    }
    Ok(labels)
}

fn nearest(points: &[Vec3], p: Vec3) -> Vec3 {
    *points
        .iter()
        .min_by(|a, b| a.distance(p).total_cmp(&b.distance(p)))
        .expect("non-empty target set")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cfg() -> OtConfig {
        OtConfig::default()
    }

    #[test]
    fn cost_matrix_examples() {
        let c = cost_matrix(&[Vec3::new(0.0, 0.0, 0.0)], &[Vec3::new(3.0, 4.0, 0.0)]).unwrap();
        assert_eq!(c[[0, 0]], 25.0);
        let p = [Vec3::new(1.0, 2.0, 3.0)];
        assert_eq!(cost_matrix(&p, &p).unwrap()[[0, 0]], 0.0);
        assert!(cost_matrix(&[], &p).is_err());
    }

    #[test]
    fn single_cell_plan() {
        let c = array![[7.0]];
        let one = array![1.0];
        assert_eq!(sinkhorn(&c, &one, &one, &cfg()).unwrap().gamma, array![[1.0]]);
        assert_eq!(exact_lp(&c, &one, &one).unwrap().gamma, array![[1.0]]);
    }

    #[test]
    fn zero_cost_gives_product_plan() {
        let c = Array2::zeros((3, 4));
        let p = sinkhorn(&c, &uniform(3), &uniform(4), &cfg()).unwrap();
        assert!(p.gamma.iter().all(|x| (x - 1.0 / 12.0).abs() < 1e-15));
    }

    #[test]
    fn diagonal_matching() {
        let c = array![[0.0, 1.0], [1.0, 0.0]];
        let p = exact_lp(&c, &uniform(2), &uniform(2)).unwrap();
        assert_eq!(p.gamma, array![[0.5, 0.0], [0.0, 0.5]]);
        assert_eq!(p.cost(&c), 0.0);
    }

    #[test]
    fn single_source_splits() {
        let c = array![[3.0, 1.0]];
        let p = exact_lp(&c, &array![1.0], &array![0.4, 0.6]).unwrap();
        assert!((p.gamma[[0, 0]] - 0.4).abs() < 1e-15);
        assert!((p.gamma[[0, 1]] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn oversized_exact_problem_rejected() {
        let c = Array2::zeros((101, 100));
        assert!(matches!(exact_lp(&c, &uniform(101), &uniform(100)), Err(Error::TooLarge(_))));
    }

    #[test]
    fn sinkhorn_approaches_exact_from_above() {
        let c = array![
            [4.31, 1.27, 9.05, 2.66],
            [3.18, 8.42, 1.93, 6.07],
            [7.74, 2.51, 5.39, 3.12],
            [1.45, 9.68, 4.22, 8.81]
        ];
        let (a, b) = (uniform(4), uniform(4));
        let exact = exact_lp(&c, &a, &b).unwrap().cost(&c);
        let mut prev = f64::INFINITY;
        for eps in [2.0, 1.0, 0.5, 0.2, 0.1, 0.05] {
            let cfg = OtConfig { regularization: Regularization::Absolute(eps), max_iterations: 100_000, ..cfg() };
            let p = sinkhorn(&c, &a, &b, &cfg).unwrap();
            assert!(p.converged);
            let cost = p.cost(&c);
            assert!(cost >= exact - 1e-9 && cost <= prev + 1e-9, "eps {eps}: {cost} vs {exact}");
            prev = cost;
        }
        assert!(prev - exact < 1e-3);
    }

    #[test]
    fn barycentric_examples() {
        let z = 1.5;
        let plan = TransportPlan::new(array![[0.5, 0.5]], &array![1.0], &uniform(2), true, 0);
        let t = [Vec3::new(0.0, 0.0, z), Vec3::new(2.0, 0.0, z)];
        assert_eq!(barycentric_map(&plan, &t).unwrap(), vec![Vec3::new(1.0, 0.0, z)]);
        let empty = TransportPlan::new(array![[0.0, 0.0]], &array![1.0], &uniform(2), true, 0);
        assert!(barycentric_map(&empty, &t).is_err());
    }

    #[test]
    fn los_only_identification_passes_estimates_through() {
        let s = SceneMap::street_canyon();
        let est: Vec<PositionEstimate> = [Vec3::new(3.0, 4.0, 1.5), Vec3::new(30.0, 60.0, 1.5)]
            .into_iter()
            .map(|position| PositionEstimate {
                position,
                source: crate::estimator::EstimateSource::ModelBased,
                identified_los: true,
            })
            .collect();
        let labels = generate_labels(&est, &[true, true], &s, 0.5, &cfg()).unwrap();
        assert_eq!(labels, vec![est[0].position, est[1].position]);
    }

    #[test]
    fn solver_names_parse() {
        assert_eq!("exact_lp".parse::<OtSolver>().unwrap(), OtSolver::ExactLp);
        assert!("simplex2".parse::<OtSolver>().is_err());
    }
}
