use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::container::{quantize_f32, Dataset, LabelRecord, UserRecord};
use crate::channel::{synthesize_csi, trace_paths, CsiMatrix, SystemConfig, TracerConfig};
use crate::estimator::{DictionaryConfig, ModelBasedEstimator, PositionEstimate};
use crate::features::{DelayWindow, FeatureExtractor};
use crate::geometry::Vec3;
use crate::identify::IdentifierConfig;
use crate::ot::generate_labels;
use crate::scene::{GridSpec, RegionFilter, SceneMap};
use crate::{Error, Result};

use super::config::OtSettings;

fn make_record(scene: &SceneMap, system: &SystemConfig, tracer: &TracerConfig, p: Vec3) -> Result<UserRecord> {
    let paths = trace_paths(scene, system, p, tracer)?;
    let mut csi = synthesize_csi(system, &paths)?;
    // what is stored on disk is what every later stage sees
    quantize_f32(&mut csi);
    Ok(UserRecord { position: p, true_los: scene.is_los(p)?, paths, csi })
}

/// `n` random users with their traced paths and CSI. Positions from which
/// no path reaches the base station are redrawn.
pub fn generate_dataset(
    scene: &SceneMap,
    system: &SystemConfig,
    tracer: &TracerConfig,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    system.validate()?;
    let mut rejected = 0usize;
    let positions = scene.sample_users_where(n, seed, |p| {
        let ok = trace_paths(scene, system, p, tracer).is_ok();
        rejected += !ok as usize;
        ok
    })?;
    if rejected > 0 {
        log::info!("redrew {rejected} unreachable user positions");
    }
    let records = positions
        .par_iter()
        .map(|&p| make_record(scene, system, tracer, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { system: *system, user_height: scene.user_height(), records, labels: None })
}

/// Fingerprinting grid: reachable feasible points at spacing `delta_s`,
/// uniformly subsampled to `cap` points when there are more.
pub fn fingerprint_grid(
    scene: &SceneMap,
    system: &SystemConfig,
    tracer: &TracerConfig,
    delta_s: f64,
    cap: usize,
    seed: u64,
) -> Result<Dataset> {
    let grid = scene.generate_grid(GridSpec::new(delta_s, RegionFilter::All))?;
    let mut records: Vec<UserRecord> = grid
        .par_iter()
        .filter_map(|&p| match make_record(scene, system, tracer, p) {
            Err(Error::NoPath { .. }) => None,
            other => Some(other),
        })
        .collect::<Result<Vec<_>>>()?;
    if records.len() > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep: Vec<usize> = rand::seq::index::sample(&mut rng, records.len(), cap).into_vec();
        keep.sort_unstable();
        let mut taken: Vec<Option<UserRecord>> = records.into_iter().map(Some).collect();
        records = keep.iter().map(|&i| taken[i].take().expect("indices are distinct")).collect();
    }
    Ok(Dataset { system: *system, user_height: scene.user_height(), records, labels: None })
}

/// Model-based estimates of every CSI matrix, in input order.
pub fn model_based_estimates(
    scene: &SceneMap,
    system: &SystemConfig,
    dict: DictionaryConfig,
    csi: &[&CsiMatrix],
) -> Result<Vec<PositionEstimate>> {
    let est = ModelBasedEstimator::new(scene, system, dict)?;
    csi.par_iter().map(|h| est.estimate(h)).collect()
}

/// Identification verdicts for users indexed `0..n`.
pub fn identify_all(cfg: &IdentifierConfig, true_los: &[bool], estimates: &[PositionEstimate], scene: &SceneMap) -> Vec<bool> {
    true_los
        .iter()
        .zip(estimates)
        .enumerate()
        .map(|(i, (&los, e))| cfg.identify(los, i as u64, e.position, scene))
        .collect()
}

/// Label block from precomputed estimates: identification, then transport
/// of the identified-NLoS estimates onto the NLoS grid.
pub fn label_from_estimates(
    scene: &SceneMap,
    true_los: &[bool],
    estimates: &[PositionEstimate],
    identify: &IdentifierConfig,
    ot: &OtSettings,
) -> Result<Vec<LabelRecord>> {
    identify.validate()?;
    let identified = identify_all(identify, true_los, estimates, scene);
    let labels = generate_labels(estimates, &identified, scene, ot.delta_d, &ot.resolve())?;
    Ok(estimates
        .iter()
        .zip(identified)
        .zip(labels)
        .map(|((e, identified_los), label)| LabelRecord { estimate: e.position, identified_los, label })
        .collect())
}

/// Adds the label block to a channel dataset.
pub fn label_dataset(
    mut ds: Dataset,
    scene: &SceneMap,
    dict: DictionaryConfig,
    identify: &IdentifierConfig,
    ot: &OtSettings,
) -> Result<Dataset> {
    let csi: Vec<&CsiMatrix> = ds.records.iter().map(|r| &r.csi).collect();
    let estimates = model_based_estimates(scene, &ds.system, dict, &csi)?;
    let true_los: Vec<bool> = ds.records.iter().map(|r| r.true_los).collect();
    ds.labels = Some(label_from_estimates(scene, &true_los, &estimates, identify, ot)?);
    Ok(ds)
}

/// Training view of a dataset.
///
/// Ground-truth positions are reachable only through
/// [`LabeledDataset::ground_truth`], which counts every call, so a training
/// path that claims to be unsupervised can be checked for zero reads.
#[derive(Debug)]
pub struct LabeledDataset {
    system: SystemConfig,
    window: DelayWindow,
    positions: Vec<Vec3>,
    true_los: Vec<bool>,
    csi: Vec<CsiMatrix>,
    features: Array2<f64>,
    labels: Option<Vec<LabelRecord>>,
    reads: AtomicUsize,
}

impl LabeledDataset {
    pub fn new(ds: Dataset, scene: &SceneMap) -> Result<Self> {
        if let Some(l) = &ds.labels {
            if l.len() != ds.len() {
                return Err(Error::dims(ds.len(), l.len()));
            }
        }
        let extractor = FeatureExtractor::for_scene(scene, &ds.system)?;
        let features = extractor.extract_all(ds.records.iter().map(|r| &r.csi))?;
        let mut positions = Vec::with_capacity(ds.len());
        let mut true_los = Vec::with_capacity(ds.len());
        let mut csi = Vec::with_capacity(ds.len());
        for r in ds.records {
            positions.push(r.position);
            true_los.push(r.true_los);
            csi.push(r.csi);
        }
        Ok(LabeledDataset {
            system: ds.system,
            window: extractor.window,
            positions,
            true_los,
            csi,
            features,
            labels: ds.labels,
            reads: AtomicUsize::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn system(&self) -> &SystemConfig {
        &self.system
    }

    pub fn window(&self) -> DelayWindow {
        self.window
    }

    /// Raw feature rows, one per user.
    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn csi(&self, i: usize) -> &CsiMatrix {
        &self.csi[i]
    }

    pub fn true_los(&self) -> &[bool] {
        &self.true_los
    }

    pub fn labels(&self) -> Option<&[LabelRecord]> {
        self.labels.as_deref()
    }

    /// Replaces the label block, keeping features and ground truth.
    pub fn set_labels(&mut self, labels: Vec<LabelRecord>) -> Result<()> {
        if labels.len() != self.len() {
            return Err(Error::dims(self.len(), labels.len()));
        }
        self.labels = Some(labels);
        Ok(())
    }

    pub fn require_labels(&self) -> Result<&[LabelRecord]> {
        self.labels().ok_or_else(|| Error::Format("dataset has no label block; run the label stage first".into()))
    }

    /// Ground-truth position of user `i`. Every call is recorded.
    pub fn ground_truth(&self, i: usize) -> Vec3 {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.positions[i]
    }

    /// Number of [`LabeledDataset::ground_truth`] calls so far.
    pub fn ground_truth_reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }
}
