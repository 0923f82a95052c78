use ndarray::{Array1, Array2};

use crate::features::Standardizer;
use crate::geometry::Vec3;
use crate::nn::{dissimilarity_matrix, train, ChartingTargets, MlpModel, Targets, TrainConfig, TrainRegime, TrainReport};
use crate::{Error, Result};

use super::config::NetworkConfig;
use super::dataset::LabeledDataset;

fn xy_rows(points: impl ExactSizeIterator<Item = Vec3>) -> Array2<f64> {
    let n = points.len();
    let mut out = Array2::zeros((n, 2));
    for (i, p) in points.enumerate() {
        out[[i, 0]] = p.x;
        out[[i, 1]] = p.y;
    }
    out
}

/// Standardizer with one shared scale for both coordinates, so distances
/// in the standardized plane stay proportional to meters.
fn isotropic(x: &Array2<f64>) -> Result<Standardizer> {
    let s = Standardizer::fit(x)?;
    let scale = (s.std.mapv(|v| v * v).sum() / s.std.len() as f64).sqrt();
    Ok(Standardizer { std: Array1::from_elem(s.std.len(), scale), ..s })
}

/// Fits a fresh network to `data` under `regime`.
///
/// `SelfLabel` trains on the label block, `Fingerprint` on ground-truth
/// positions and `ChannelCharting` on the model-based estimates of the
/// identified-LoS users plus feature dissimilarities. Only `Fingerprint`
/// reads ground truth.
pub fn train_model(
    data: &LabeledDataset,
    regime: TrainRegime,
    net: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    if data.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    let x = data.features();
    let mut widths = vec![x.ncols()];
    widths.extend(&net.hidden);
    widths.push(2);
    let cfg = TrainConfig { regime, ..*cfg };
    let input_norm = Standardizer::fit(x)?;
    let (mut model, report) = match regime {
        TrainRegime::SelfLabel => {
            let y = xy_rows(data.require_labels()?.iter().map(|l| l.label));
            let mut model = MlpModel::new(&widths, input_norm, Standardizer::fit(&y)?, net.seed)?;
            let report = train(&mut model, x, Targets::Positions(&y), &cfg)?;
            (model, report)
        }
        TrainRegime::Fingerprint => {
            let y = xy_rows((0..data.len()).map(|i| data.ground_truth(i)));
            let mut model = MlpModel::new(&widths, input_norm, Standardizer::fit(&y)?, net.seed)?;
            let report = train(&mut model, x, Targets::Positions(&y), &cfg)?;
            (model, report)
        }
        TrainRegime::ChannelCharting => {
            let labels = data.require_labels()?;
            let estimates = xy_rows(labels.iter().map(|l| l.estimate));
            let identified: Vec<bool> = labels.iter().map(|l| l.identified_los).collect();
            let dissimilarity = dissimilarity_matrix(x);
            let mut model = MlpModel::new(&widths, input_norm, isotropic(&estimates)?, net.seed)?;
            let targets = ChartingTargets { estimates: &estimates, identified_los: &identified, dissimilarity: &dissimilarity };
            let report = train(&mut model, x, Targets::Charting(targets), &cfg)?;
            (model, report)
        }
    };
    model.window = Some(data.window());
    Ok((model, report))
}
