use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::channel::container::Dataset;
use crate::channel::CsiMatrix;
use crate::estimator::{EstimateSource, ModelBasedEstimator, PositionEstimate};
use crate::features::FeatureExtractor;
use crate::geometry::Vec3;
use crate::identify::{IdentifierConfig, IdentifyMode};
use crate::nn::{MlpModel, TrainRegime};
use crate::scene::SceneMap;
use crate::{Error, Result};

use super::config::PipelineConfig;
use super::dataset::{label_from_estimates, model_based_estimates, LabeledDataset};
use super::regimes::train_model;

/// Test users with everything the methods share precomputed.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub positions: Vec<Vec3>,
    pub true_los: Vec<bool>,
    pub features: Array2<f64>,
    pub estimates: Vec<PositionEstimate>,
}

impl TestSet {
    pub fn prepare(ds: &Dataset, scene: &SceneMap, cfg: &PipelineConfig) -> Result<Self> {
        let csi: Vec<&CsiMatrix> = ds.records.iter().map(|r| &r.csi).collect();
        let estimates = model_based_estimates(scene, &ds.system, cfg.dictionary.resolve(scene), &csi)?;
        let features = FeatureExtractor::for_scene(scene, &ds.system)?.extract_all(csi.iter().copied())?;
        Ok(TestSet {
            positions: ds.records.iter().map(|r| r.position).collect(),
            true_los: ds.records.iter().map(|r| r.true_los).collect(),
            features,
            estimates,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// How test users are localized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    ModelBased,
    /// Model-based estimate for identified-LoS users, network otherwise.
    /// The identification mode selects unified or conservative behavior.
    Unified(IdentifierConfig),
    /// Network for every user.
    Neural,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::ModelBased => "model_based",
            Method::Unified(c) if c.mode == IdentifyMode::Conservative => "conservative",
            Method::Unified(_) => "unified",
            Method::Neural => "neural",
        }
    }
}

/// One user through the unified rule: `model_based` is returned unchanged
/// when the user is identified LoS, otherwise the network's position at the
/// model-based estimate's height.
#[allow(clippy::too_many_arguments)]
pub fn unified_localize(
    h: &CsiMatrix,
    model: &MlpModel,
    extractor: &FeatureExtractor,
    estimator: &ModelBasedEstimator,
    scene: &SceneMap,
    identifier: &IdentifierConfig,
    true_los: bool,
    user_index: u64,
) -> Result<PositionEstimate> {
    let mb = estimator.estimate(h)?;
    if identifier.identify(true_los, user_index, mb.position, scene) {
        return Ok(PositionEstimate { identified_los: true, ..mb });
    }
    let row = extractor.extract(h)?.0.insert_axis(ndarray::Axis(0));
    let p = model.predict(&row)?;
    Ok(PositionEstimate {
        position: Vec3::new(p[[0, 0]], p[[0, 1]], scene.user_height()),
        source: EstimateSource::Neural,
        identified_los: false,
    })
}

/// Outputs of `method` for every test user.
pub fn localize(test: &TestSet, method: &Method, model: Option<&MlpModel>, scene: &SceneMap) -> Result<Vec<PositionEstimate>> {
    let identified: Vec<bool> = match method {
        Method::ModelBased => return Ok(test.estimates.clone()),
        Method::Neural => vec![false; test.len()],
        Method::Unified(cfg) => {
            cfg.validate()?;
            super::dataset::identify_all(cfg, &test.true_los, &test.estimates, scene)
        }
    };
    let model = model.ok_or_else(|| Error::Config(format!("method {} needs a trained model", method.name())))?;
    let pred = model.predict(&test.features)?;
    let z = scene.user_height();
    Ok((0..test.len())
        .map(|i| {
            if identified[i] {
                PositionEstimate { identified_los: true, ..test.estimates[i] }
            } else {
                PositionEstimate {
                    position: Vec3::new(pred[[i, 0]], pred[[i, 1]], z),
                    source: EstimateSource::Neural,
                    identified_los: false,
                }
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub error_m: f64,
    pub percentile: f64,
}

/// Seeds, configuration digest and a provenance string.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetadata {
    pub provenance: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
}

impl RunMetadata {
    pub fn for_config(cfg: &PipelineConfig) -> Self {
        let digest = super::manifest::config_digest(cfg);
        let seeds = BTreeMap::from([
            ("train_users".to_string(), cfg.data.train_seed),
            ("test_users".to_string(), cfg.data.test_seed),
            ("identify".to_string(), cfg.identify.seed),
            ("network".to_string(), cfg.network.seed),
            ("train".to_string(), cfg.train.seed),
            ("fingerprint".to_string(), cfg.fingerprint.seed),
        ]);
        RunMetadata { provenance: super::manifest::provenance(&digest), config_sha256: digest, seeds }
    }
}

/// Errors and mean absolute errors of one method on one test set.
///
/// Empty subsets report an MAE of 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub n_los: usize,
    pub n_nlos: usize,
    pub mae_los: f64,
    pub mae_nlos: f64,
    pub mae_all: f64,
    /// Horizontal error of each user, in test-set order.
    pub errors: Vec<f64>,
    pub identified_los: Vec<bool>,
    pub cdf: Vec<CdfPoint>,
    pub metadata: RunMetadata,
}

impl EvalReport {
    pub fn from_errors(method: &str, errors: Vec<f64>, true_los: &[bool], identified_los: Vec<bool>, metadata: RunMetadata) -> Result<Self> {
        if errors.len() != true_los.len() || identified_los.len() != true_los.len() {
            return Err(Error::dims(true_los.len(), errors.len()));
        }
        let mean = |keep: &dyn Fn(bool) -> bool| {
            let v: Vec<f64> = errors.iter().zip(true_los).filter(|(_, &l)| keep(l)).map(|(e, _)| *e).collect();
            (v.len(), if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 })
        };
        let (n_los, mae_los) = mean(&|l| l);
        let (n_nlos, mae_nlos) = mean(&|l| !l);
        let (_, mae_all) = mean(&|_| true);
        let mut sorted = errors.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let cdf = sorted
            .iter()
            .enumerate()
            .map(|(k, &e)| CdfPoint { error_m: e, percentile: 100.0 * (k + 1) as f64 / n })
            .collect();
        Ok(EvalReport {
            method: method.to_string(),
            n_los,
            n_nlos,
            mae_los,
            mae_nlos,
            mae_all,
            errors,
            identified_los,
            cdf,
            metadata,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }

    /// `error_m,percentile` rows of the empirical CDF.
    pub fn write_cdf_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "error_m,percentile")?;
        for p in &self.cdf {
            writeln!(w, "{},{}", p.error_m, p.percentile)?;
        }
        Ok(())
    }

    pub fn save_cdf_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_cdf_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// Runs `method` over the test set and scores it against ground truth.
pub fn evaluate(test: &TestSet, method: &Method, model: Option<&MlpModel>, scene: &SceneMap, metadata: RunMetadata) -> Result<EvalReport> {
    let out = localize(test, method, model, scene)?;
    let errors = out.iter().zip(&test.positions).map(|(e, p)| e.position.distance_xy(*p)).collect();
    let identified = out.iter().map(|e| e.identified_los).collect();
    EvalReport::from_errors(method.name(), errors, &test.true_los, identified, metadata)
}

/// The identifier used at test time: the labeling identifier with its
/// seed shifted by one.
pub fn test_identifier(cfg: &PipelineConfig, accuracy: f64, mode: IdentifyMode) -> IdentifierConfig {
    IdentifierConfig { accuracy, mode, seed: cfg.identify.seed.wrapping_add(1) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p_i: f64,
    pub method: String,
    pub mae_los: f64,
    pub mae_nlos: f64,
    pub mae_all: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// Unified reports in grid order.
    pub unified: Vec<(f64, EvalReport)>,
    pub conservative: EvalReport,
    /// Ground-truth position reads made by all training runs of the sweep.
    pub ground_truth_reads: usize,
}

/// Writes `p_i,method,mae_los,mae_nlos,mae_all` rows.
pub fn write_sweep_csv(rows: &[SweepRow], w: &mut impl Write) -> Result<()> {
    writeln!(w, "p_i,method,mae_los,mae_nlos,mae_all")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.p_i, r.method, r.mae_los, r.mae_nlos, r.mae_all)?;
    }
    Ok(())
}

/// Runs the self-labeled pipeline once per `p_I` in `cfg.sweep.p_i`, plus a
/// single conservative run whose MAEs are repeated on every grid row.
///
/// Model-based estimates of the training users are computed once and
/// shared by every run.
pub fn sweep_p_i(cfg: &PipelineConfig, scene: &SceneMap, train: &Dataset, test: &TestSet) -> Result<SweepOutcome> {
    cfg.validate()?;
    let csi: Vec<&CsiMatrix> = train.records.iter().map(|r| &r.csi).collect();
    let estimates = model_based_estimates(scene, &train.system, cfg.dictionary.resolve(scene), &csi)?;
    let true_los: Vec<bool> = train.records.iter().map(|r| r.true_los).collect();
    let metadata = RunMetadata::for_config(cfg);
    let unlabeled = Dataset { labels: None, ..train.clone() };
    let mut base = LabeledDataset::new(unlabeled, scene)?;

    let mut run = |identify: IdentifierConfig, test_id: IdentifierConfig| -> Result<EvalReport> {
        let labels = label_from_estimates(scene, &true_los, &estimates, &identify, &cfg.ot)?;
        base.set_labels(labels)?;
        let (model, _) = train_model(&base, TrainRegime::SelfLabel, &cfg.network, &cfg.train)?;
        evaluate(test, &Method::Unified(test_id), Some(&model), scene, metadata.clone())
    };

    let mut unified = Vec::new();
    for &p in &cfg.sweep.p_i {
        log::info!("sweep: p_I = {p}");
        let identify = IdentifierConfig { accuracy: p, mode: IdentifyMode::Refined, ..cfg.identify };
        unified.push((p, run(identify, test_identifier(cfg, p, IdentifyMode::Refined))?));
    }
    log::info!("sweep: conservative");
    let identify = IdentifierConfig { mode: IdentifyMode::Conservative, ..cfg.identify };
    let conservative = run(identify, test_identifier(cfg, cfg.identify.accuracy, IdentifyMode::Conservative))?;

    let mut rows = Vec::new();
    for (p, r) in &unified {
        for (name, rep) in [("unified", r), ("conservative", &conservative)] {
            rows.push(SweepRow { p_i: *p, method: name.into(), mae_los: rep.mae_los, mae_nlos: rep.mae_nlos, mae_all: rep.mae_all });
        }
    }
    let ground_truth_reads = base.ground_truth_reads();
    Ok(SweepOutcome { rows, unified, conservative, ground_truth_reads })
}
