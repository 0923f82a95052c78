//! LoS/NLoS identification.
//!
//! [`base_identify`] stands in for a CSI-based classifier of accuracy `p_I`:
//! it reports the true class with probability `p_I` and the opposite class
//! otherwise, with the same flip probability for both classes. The two
//! map-aware rules then combine that verdict with the region in which the
//! model-based estimate lands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::scene::SceneMap;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IdentifyMode {
    #[default]
    Refined,
    Conservative,
}

impl std::str::FromStr for IdentifyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "refined" => Ok(IdentifyMode::Refined),
            "conservative" => Ok(IdentifyMode::Conservative),
            other => Err(Error::Config(format!("unknown identification mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifierConfig {
    /// Probability `p_I` that the base identifier is correct.
    pub accuracy: f64,
    pub mode: IdentifyMode,
    pub seed: u64,
}

impl Default for IdentifierConfig {
    fn default() -> Self {
        IdentifierConfig { accuracy: 1.0, mode: IdentifyMode::Refined, seed: 0 }
    }
}

impl IdentifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.accuracy) {
            return Err(Error::Config(format!("identification accuracy {} outside [0.5, 1]", self.accuracy)));
        }
        Ok(())
    }

    /// Full identification of one user: the base verdict followed by the
    /// configured map rule.
    pub fn identify(&self, true_los: bool, user_index: u64, estimate: Vec3, scene: &SceneMap) -> bool {
        match self.mode {
            IdentifyMode::Refined => refine_identify(base_identify(true_los, self, user_index), estimate, scene),
            IdentifyMode::Conservative => conservative_identify(estimate, scene),
        }
    }
}

/// Noisy oracle verdict for one user. The random draw depends only on
/// `(cfg.seed, user_index)`, so results do not depend on evaluation order.
pub fn base_identify(true_los: bool, cfg: &IdentifierConfig, user_index: u64) -> bool {
    if cfg.accuracy >= 1.0 {
        return true_los;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(user_index);
    let correct = rng.gen::<f64>() < cfg.accuracy;
    if correct {
        true_los
    } else {
        !true_los
    }
}

/// Overrule a LoS verdict whose estimate falls in the NLoS region.
/// Estimates outside the region count as NLoS.
pub fn refine_identify(base: bool, estimate: Vec3, scene: &SceneMap) -> bool {
    base && scene.in_los_region(estimate)
}

/// Region membership of the estimate alone.
pub fn conservative_identify(estimate: Vec3, scene: &SceneMap) -> bool {
    scene.in_los_region(estimate)
}
