use ndarray::{s, Array2, ArrayView2, Axis};

use super::MlpModel;
use crate::features::FeatureVector;
use crate::{Error, Result};

fn check_pairs(pred: &Array2<f64>, labels: &Array2<f64>) -> Result<()> {
    if pred.dim() != labels.dim() {
        return Err(Error::dims(format!("{:?}", pred.dim()), format!("{:?}", labels.dim())));
    }
    if pred.nrows() == 0 {
        return Err(Error::domain("loss over zero samples"));
    }
    Ok(())
}

/// `(1/N) Σ ‖p_i − l_i‖²`.
pub fn loss_mse(pred: &Array2<f64>, labels: &Array2<f64>) -> Result<f64> {
    check_pairs(pred, labels)?;
    Ok((pred - labels).mapv(|v| v * v).sum() / pred.nrows() as f64)
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &Array2<f64>, labels: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    check_pairs(pred, labels)?;
    let n = pred.nrows() as f64;
    let diff = pred - labels;
    let loss = diff.mapv(|v| v * v).sum() / n;
    Ok((loss, diff * (2.0 / n)))
}

/// `1 − cos` between the log-amplitude blocks of two feature vectors,
/// clamped to `[0, 2]`. A zero block gives 1.
pub fn cosine_dissimilarity(a: &FeatureVector, b: &FeatureVector) -> f64 {
    let (x, y) = (a.log_amplitude(), b.log_amplitude());
    let (nx, ny) = (x.dot(&x).sqrt(), y.dot(&y).sqrt());
    if nx == 0.0 || ny == 0.0 {
        return 1.0;
    }
    if x == y {
        return 0.0;
    }
    (1.0 - x.dot(&y) / (nx * ny)).clamp(0.0, 2.0)
}

/// Pairwise [`cosine_dissimilarity`] of feature rows (log-amplitude block
/// in the first half of each row), with an exact zero diagonal.
pub fn dissimilarity_matrix(features: &Array2<f64>) -> Array2<f64> {
    let half = features.ncols() / 2;
    let mut a = features.slice(s![.., ..half]).to_owned();
    let norms: Vec<f64> = a.axis_iter(Axis(0)).map(|r| r.dot(&r).sqrt()).collect();
    for (mut row, &n) in a.axis_iter_mut(Axis(0)).zip(&norms) {
        if n > 0.0 {
            row.mapv_inplace(|v| v / n);
        }
    }
    let mut d = a.dot(&a.t()).mapv(|c| (1.0 - c).clamp(0.0, 2.0));
    for (i, &ni) in norms.iter().enumerate() {
        for (j, &nj) in norms.iter().enumerate() {
            if ni == 0.0 || nj == 0.0 {
                d[[i, j]] = 1.0;
            }
        }
        d[[i, i]] = 0.0;
    }
    // symmetrize exactly
    for i in 0..d.nrows() {
        for j in 0..i {
            let v = d[[j, i]];
            d[[i, j]] = v;
        }
    }
    d
}

/// Channel-charting loss on one set of predictions.
///
/// The first term averages `(‖p_i − p_j‖ − ε·d_ij)² / d_ij` over ordered
/// pairs `i ≠ j` with `d_ij > 0`; the second is the mean squared distance
/// of the anchored rows to their anchors, and is omitted when no row is
/// anchored. Returns the loss with its gradients with respect to the
/// predictions and to `ε`.
pub fn charting_loss(
    pred: &Array2<f64>,
    dissimilarity: ArrayView2<'_, f64>,
    anchors: &Array2<f64>,
    anchored: &[bool],
    eps: f64,
) -> Result<(f64, Array2<f64>, f64)> {
    let n = pred.nrows();
    check_pairs(pred, anchors)?;
    if dissimilarity.dim() != (n, n) {
        return Err(Error::dims(format!("({n}, {n})"), format!("{:?}", dissimilarity.dim())));
    }
    if anchored.len() != n {
        return Err(Error::dims(n, anchored.len()));
    }
    let mut grad = Array2::zeros(pred.dim());
    let mut pairs = 0usize;
    let mut first = 0.0;
    let mut d_eps = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = dissimilarity[[i, j]];
            if i == j || !(d > 0.0) {
                continue;
            }
            pairs += 1;
            let diff = &pred.row(i) - &pred.row(j);
            let dist = diff.dot(&diff).sqrt();
            let r = dist - eps * d;
            first += r * r / d;
            d_eps += -2.0 * r;
            if dist > 0.0 {
                let g = &diff * (2.0 * r / (d * dist));
                grad.row_mut(i).zip_mut_with(&g, |a, b| *a += b);
                grad.row_mut(j).zip_mut_with(&g, |a, b| *a -= b);
            }
        }
    }
    let mut loss = 0.0;
    if pairs > 0 {
        let p = pairs as f64;
        loss += first / p;
        grad.mapv_inplace(|v| v / p);
        d_eps /= p;
    }
    let count = anchored.iter().filter(|&&a| a).count();
    if count > 0 {
        let c = count as f64;
        for i in (0..n).filter(|&i| anchored[i]) {
            let diff = &pred.row(i) - &anchors.row(i);
            loss += diff.dot(&diff) / c;
            grad.row_mut(i).zip_mut_with(&diff, |a, b| *a += 2.0 * b / c);
        }
    }
    Ok((loss, grad, d_eps))
}

/// Charting loss of a model over a whole dataset, in the model's
/// standardized output coordinates. `features` are raw feature rows and
/// `estimates` model-based positions in meters.
pub fn loss_charting(
    model: &MlpModel,
    features: &Array2<f64>,
    estimates: &Array2<f64>,
    identified_los: &[bool],
    eps_cc: f64,
) -> Result<f64> {
    let pred = model.forward_eval(&model.input_norm.apply(features))?;
    let anchors = model.output_norm.apply(estimates);
    let d = dissimilarity_matrix(features);
    Ok(charting_loss(&pred, d.view(), &anchors, identified_los, eps_cc)?.0)
}
