use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{SystemConfig, TracerConfig};
use crate::estimator::DictionaryConfig;
use crate::identify::{IdentifierConfig, IdentifyMode};
use crate::nn::{TrainConfig, DEFAULT_HIDDEN};
use crate::ot::{OtConfig, OtSolver, Regularization};
use crate::scene::SceneMap;
use crate::{Error, Result};

/// User sampling for the train and test layouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub train_seed: u64,
    pub test_seed: u64,
}

/// Dictionary settings; the delay range always comes from the scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionarySettings {
    pub angle_grid: usize,
    pub delay_grid: usize,
    pub max_paths: usize,
    pub residual_threshold: f64,
    pub refinement: bool,
}

impl Default for DictionarySettings {
    fn default() -> Self {
        DictionarySettings { angle_grid: 512, delay_grid: 512, max_paths: 8, residual_threshold: 0.05, refinement: true }
    }
}

impl DictionarySettings {
    pub fn resolve(&self, scene: &SceneMap) -> DictionaryConfig {
        DictionaryConfig {
            angle_grid: self.angle_grid,
            delay_grid: self.delay_grid,
            max_paths: self.max_paths,
            residual_threshold: self.residual_threshold,
            refinement: self.refinement,
            ..DictionaryConfig::for_scene(scene)
        }
    }
}

/// Label transport settings. `eps` is a multiple of the median cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OtSettings {
    pub solver: OtSolver,
    pub eps: f64,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    /// Target grid spacing in meters.
    pub delta_d: f64,
    pub snap_to_grid: bool,
}

impl Default for OtSettings {
    fn default() -> Self {
        let d = OtConfig::default();
        let Regularization::RelativeToMedian(eps) = d.regularization else { unreachable!("relative default") };
        OtSettings {
            solver: d.solver,
            eps,
            max_iterations: 5000,
            convergence_tol: d.convergence_tol,
            delta_d: 0.5,
            snap_to_grid: d.snap_to_grid,
        }
    }
}

impl OtSettings {
    pub fn resolve(&self) -> OtConfig {
        OtConfig {
            regularization: Regularization::RelativeToMedian(self.eps),
            max_iterations: self.max_iterations,
            convergence_tol: self.convergence_tol,
            solver: self.solver,
            snap_to_grid: self.snap_to_grid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Hidden layer widths; input and output widths follow from the data.
    pub hidden: Vec<usize>,
    pub seed: u64,
}

/// Grid used by the fingerprinting benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FingerprintConfig {
    pub delta_s: f64,
    pub cap: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub p_i: Vec<f64>,
}

/// Everything a run depends on. Serialized as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Scene file; the bundled street canyon when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    pub system: SystemConfig,
    pub tracer: TracerConfig,
    pub data: DataConfig,
    pub dictionary: DictionarySettings,
    /// Identification used when labeling. Evaluation draws its oracle
    /// verdicts from `seed + 1` so train and test flips are independent.
    pub identify: IdentifierConfig,
    pub ot: OtSettings,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub fingerprint: FingerprintConfig,
    pub sweep: SweepConfig,
}

impl PipelineConfig {
    /// Full-size settings: 256 antennas, 416 subcarriers of 120 kHz, the
    /// default network and 1600 epochs.
    pub fn reference() -> Self {
        PipelineConfig {
            scene: None,
            system: SystemConfig::default(),
            tracer: TracerConfig::default(),
            data: DataConfig { n_train: 1800, n_test: 1800, train_seed: 1, test_seed: 2 },
            dictionary: DictionarySettings::default(),
            identify: IdentifierConfig { accuracy: 1.0, mode: IdentifyMode::Refined, seed: 11 },
            ot: OtSettings::default(),
            network: NetworkConfig { hidden: DEFAULT_HIDDEN.to_vec(), seed: 7 },
            train: TrainConfig { seed: 5, ..TrainConfig::default() },
            fingerprint: FingerprintConfig { delta_s: 1.0, cap: 1800, seed: 3 },
            sweep: SweepConfig { p_i: vec![0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0] },
        }
    }

    /// Single-core settings: a 32-antenna array over the same bandwidth, a
    /// narrower network, fewer epochs and a 1 m transport grid.
    pub fn desk() -> Self {
        let r = Self::reference();
        PipelineConfig {
            system: SystemConfig::desk(),
            ot: OtSettings { delta_d: 1.0, ..r.ot },
            network: NetworkConfig { hidden: vec![256, 128, 64, 32], ..r.network },
            train: TrainConfig { epochs: 200, lr_decay: 0.99, ..r.train },
            sweep: SweepConfig { p_i: vec![0.5, 0.7, 0.9, 1.0] },
            ..r
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "reference" => Ok(Self::reference()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected reference or desk)"))),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.identify.validate()?;
        self.ot.resolve().validate()?;
        self.train.validate()?;
        if !(self.ot.delta_d > 0.0) || !(self.fingerprint.delta_s > 0.0) {
            return Err(Error::Config("grid spacings must be positive".into()));
        }
        if self.network.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        for &p in &self.sweep.p_i {
            IdentifierConfig { accuracy: p, ..self.identify }.validate()?;
        }
        Ok(())
    }

    pub fn load_scene(&self) -> Result<SceneMap> {
        match &self.scene {
            Some(p) => SceneMap::load(p),
            None => Ok(SceneMap::street_canyon()),
        }
    }
}
