use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{charting_loss, mse_loss, MlpModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainRegime {
    #[default]
    SelfLabel,
    Fingerprint,
    ChannelCharting,
}

impl std::str::FromStr for TrainRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self_label" | "self-label" => Ok(TrainRegime::SelfLabel),
            "fingerprint" => Ok(TrainRegime::Fingerprint),
            "channel_charting" | "channel-charting" => Ok(TrainRegime::ChannelCharting),
            other => Err(Error::Config(format!("unknown training regime `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
    pub regime: TrainRegime,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1600,
            batch_size: 128,
            learning_rate: 1e-3,
            lr_decay: 0.998,
            seed: 0,
            regime: TrainRegime::SelfLabel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::Config("learning rate and decay must be positive".into()));
        }
        Ok(())
    }
}

/// Inputs of the channel-charting loss for every training user.
#[derive(Debug, Clone, Copy)]
pub struct ChartingTargets<'a> {
    /// Model-based estimates in meters, one row per user.
    pub estimates: &'a Array2<f64>,
    pub identified_los: &'a [bool],
    /// Pairwise feature dissimilarities, `N × N`.
    pub dissimilarity: &'a Array2<f64>,
}

/// What the network is fitted to.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    /// Positions in meters, for the supervised regimes.
    Positions(&'a Array2<f64>),
    Charting(ChartingTargets<'a>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean mini-batch loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient layouts differ");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Mini-batch training on raw feature rows.
///
/// Supervised losses are measured in meters. The charting loss works in
/// the model's standardized output coordinates and also learns `ε_cc`,
/// which is created at 1.0 if the model has none.
pub fn train(model: &mut MlpModel, features: &Array2<f64>, targets: Targets<'_>, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let n = features.nrows();
    match (&targets, cfg.regime) {
        (Targets::Positions(p), TrainRegime::SelfLabel | TrainRegime::Fingerprint) => {
            if p.nrows() != n || p.ncols() != model.output_dim() {
                return Err(Error::dims(format!("({n}, {})", model.output_dim()), format!("{:?}", p.dim())));
            }
        }
        (Targets::Charting(c), TrainRegime::ChannelCharting) => {
            if c.estimates.nrows() != n || c.identified_los.len() != n || c.dissimilarity.dim() != (n, n) {
                return Err(Error::dims(n, c.estimates.nrows()));
            }
            if !c.identified_los.iter().any(|&b| b) {
                log::warn!("no identified-LoS users: charting loss trains without its anchor term");
            }
            model.eps_cc.get_or_insert(1.0);
        }
        _ => return Err(Error::Config(format!("targets do not match the {:?} regime", cfg.regime))),
    }
    if cfg.epochs == 0 {
        return Ok(TrainReport { loss_history: Vec::new() });
    }
    if n < 2 {
        return Err(Error::domain("training needs at least two samples"));
    }

    let x = model.input_norm.apply(features);
    let out_std = model.output_norm.std.clone();
    let out_mean = model.output_norm.mean.clone();
    let anchors_std = match &targets {
        Targets::Charting(c) => Some(model.output_norm.apply(c.estimates)),
        Targets::Positions(_) => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam::new(cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            if idx.len() < 2 {
                continue;
            }
            let xb = x.select(Axis(0), idx);
            let (z, cache) = model.forward_train(&xb)?;
            let (loss, dz, d_eps) = match &targets {
                Targets::Positions(p) => {
                    let pred = &z * &out_std + &out_mean;
                    let (loss, dpred) = mse_loss(&pred, &p.select(Axis(0), idx))?;
                    (loss, dpred * &out_std, 0.0)
                }
                Targets::Charting(c) => {
                    let anchors = anchors_std.as_ref().expect("charting anchors").select(Axis(0), idx);
                    let mask: Vec<bool> = idx.iter().map(|&i| c.identified_los[i]).collect();
                    let d = c.dissimilarity.select(Axis(0), idx).select(Axis(1), idx);
                    let eps = model.eps_cc.expect("set above");
                    charting_loss(&z, d.view(), &anchors, &mask, eps)?
                }
            };
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss became {loss} in epoch {epoch}; lower the learning rate"
                )));
            }
            let mut grads = model.backward(&cache, &dz);
            grads.eps_cc = d_eps;
            model.update_running_stats(&cache);
            let with_eps = model.eps_cc.is_some();
            adam.step(model.param_slices_mut(), grads.slices(with_eps));
            total += loss;
            batches += 1;
        }
        let mean = total / batches.max(1) as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        history.push(mean);
        adam.lr *= cfg.lr_decay;
    }
    Ok(TrainReport { loss_history: history })
}
