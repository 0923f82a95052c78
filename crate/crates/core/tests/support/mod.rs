//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uniloc::features::Standardizer;
use uniloc::nn::{charting_loss, mse_loss, MlpModel};

/// Minimum of `(1/n) Σ_i C[i, σ(i)]` over all permutations σ.
pub fn permutation_optimum(c: &Array2<f64>) -> f64 {
    let n = c.nrows();
    assert_eq!(n, c.ncols());
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, c, &mut best);
    best / n as f64
}

fn permute(perm: &mut Vec<usize>, k: usize, c: &Array2<f64>, best: &mut f64) {
    if k == perm.len() {
        let cost: f64 = perm.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum();
        *best = best.min(cost);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, c, best);
        perm.swap(k, i);
    }
}

/// Minimum transport cost over all vertices of the transportation polytope,
/// found by enumerating every spanning tree of `m + n − 1` cells and
/// solving its flows by peeling leaves.
pub fn vertex_optimum(c: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let (m, n) = c.dim();
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let k = m + n - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(k);
    subsets(&cells, k, 0, &mut chosen, &mut |sel| {
        if let Some(flows) = tree_flows(sel, m, n, a, b) {
            if flows.iter().all(|&x| x >= -1e-12) {
                let cost: f64 = sel.iter().zip(&flows).map(|(&(i, j), x)| c[[i, j]] * x).sum();
                best = best.min(cost);
            }
        }
    });
    best
}

type Visitor<'a> = dyn FnMut(&[(usize, usize)]) + 'a;

fn subsets(
    cells: &[(usize, usize)],
    k: usize,
    start: usize,
    chosen: &mut Vec<(usize, usize)>,
    visit: &mut Visitor,
) {
    if chosen.len() == k {
        visit(chosen);
        return;
    }
    for idx in start..cells.len() {
        if cells.len() - idx < k - chosen.len() {
            break;
        }
        chosen.push(cells[idx]);
        subsets(cells, k, idx + 1, chosen, visit);
        chosen.pop();
    }
}

fn tree_flows(sel: &[(usize, usize)], m: usize, n: usize, a: &Array1<f64>, b: &Array1<f64>) -> Option<Vec<f64>> {
    let mut supply: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    let mut flows = vec![f64::NAN; sel.len()];
    let mut done = vec![false; sel.len()];
    for _ in 0..sel.len() {
        let mut degree = vec![0usize; m + n];
        for (e, &(i, j)) in sel.iter().enumerate() {
            if !done[e] {
                degree[i] += 1;
                degree[m + j] += 1;
            }
        }
        let (e, leaf) = sel.iter().enumerate().filter(|(e, _)| !done[*e]).find_map(|(e, &(i, j))| {
            if degree[i] == 1 {
                Some((e, i))
            } else if degree[m + j] == 1 {
                Some((e, m + j))
            } else {
                None
            }
        })?;
        let (i, j) = sel[e];
        let other = if leaf == i { m + j } else { i };
        let x = supply[leaf];
        flows[e] = x;
        supply[leaf] = 0.0;
        supply[other] -= x;
        done[e] = true;
    }
    if supply.iter().any(|s| s.abs() > 1e-12) {
        return None;
    }
    Some(flows)
}

/// Worst relative finite-difference deviation of the analytic gradients
/// of the MSE and charting losses on a `[4, 8, 4, 2]` model, including the
/// batch-norm parameters and, for the charting loss, `ε_cc`.
pub fn gradient_errors() -> (f64, f64) {
    let (model, p) = problem();
    let (_, dz) = mse(&model, &p);
    let (_, cache) = model.forward_train(&p.x).unwrap();
    let g = model.backward(&cache, &dz);
    let analytic: Vec<Vec<f64>> = g.slices(false).into_iter().map(|s| s.to_vec()).collect();
    let mut plain = model.clone();
    plain.eps_cc = None;
    let mse_worst = check(|m| mse(m, &p).0, analytic, &plain);

    let (_, dz, deps) = charting(&model, &p);
    let mut g = model.backward(&cache, &dz);
    g.eps_cc = deps;
    let analytic: Vec<Vec<f64>> = g.slices(true).into_iter().map(|s| s.to_vec()).collect();
    let cc_worst = check(|m| charting(m, &p).0, analytic, &model);
    (mse_worst, cc_worst)
}

const STEP: f64 = 1e-5;

pub struct Problem {
    pub x: Array2<f64>,
    pub labels: Array2<f64>,
    pub dissimilarity: Array2<f64>,
    pub anchored: Vec<bool>,
}

pub fn problem() -> (MlpModel, Problem) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let b = 7;
    let x = Array2::from_shape_simple_fn((b, 4), || rng.gen_range(-2.0..2.0));
    let labels = Array2::from_shape_simple_fn((b, 2), || rng.gen_range(0.0..30.0));
    let mut d = Array2::from_shape_simple_fn((b, b), || rng.gen_range(0.05..1.5));
    for i in 0..b {
        d[[i, i]] = 0.0;
        for j in 0..i {
            d[[i, j]] = d[[j, i]];
        }
    }
    let out = Standardizer::fit(&labels).unwrap();
    let mut model = MlpModel::new(&[4, 8, 4, 2], Standardizer::identity(4), out, 3).unwrap();
    // move batch-norm parameters away from their trivial initial values
    for bn in &mut model.norms {
        bn.gamma.mapv_inplace(|_| rng.gen_range(0.5..1.5));
        bn.beta.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    }
    for l in &mut model.layers {
        l.bias.mapv_inplace(|_| rng.gen_range(-0.3..0.3));
    }
    model.eps_cc = Some(1.3);
    let anchored = (0..b).map(|i| i % 3 == 0).collect();
    (model, Problem { x, labels, dissimilarity: d, anchored })
}

pub fn mse(model: &MlpModel, p: &Problem) -> (f64, Array2<f64>) {
    let (z, _) = model.forward_train(&p.x).unwrap();
    let pred = &z * &model.output_norm.std + &model.output_norm.mean;
    let (l, d) = mse_loss(&pred, &p.labels).unwrap();
    (l, d * &model.output_norm.std)
}

pub fn charting(model: &MlpModel, p: &Problem) -> (f64, Array2<f64>, f64) {
    let (z, _) = model.forward_train(&p.x).unwrap();
    let anchors = model.output_norm.apply(&p.labels);
    charting_loss(&z, p.dissimilarity.view(), &anchors, &p.anchored, model.eps_cc.unwrap()).unwrap()
}

/// Largest relative deviation between analytic and central-difference
/// gradients over every trainable scalar.
pub fn check(loss: impl Fn(&MlpModel) -> f64, analytic: Vec<Vec<f64>>, model: &MlpModel) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, block) in analytic.iter().enumerate() {
        for (i, &g) in block.iter().enumerate() {
            let mut plus = model.clone();
            plus.param_slices_mut()[k][i] += STEP;
            let mut minus = model.clone();
            minus.param_slices_mut()[k][i] -= STEP;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
            let scale = g.abs().max(fd.abs());
            // pre-normalization biases have an exactly zero gradient
            let err = if scale < 1e-7 { (g - fd).abs() } else { (g - fd).abs() / scale };
            worst = worst.max(err);
        }
    }
    worst
}

