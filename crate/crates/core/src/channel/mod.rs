//! Multipath OFDM channel model.
//!
//! A user's CSI is the antenna × subcarrier matrix
//!
//! ```text
//! H = Σ_l β_l · a(θ_l) · b(τ_l)ᵀ
//! [a(θ)]_m = exp( j·2π·m·(d/λ)·sin θ)      m = 0..M
//! [b(τ)]_n = exp(-j·2π·n·Δf·τ)             n = 0..N_c
//! ```
//!
//! Paths come from the image-method tracer in [`tracer`]; the binary dataset
//! container lives in [`container`].

pub mod container;
pub mod tracer;

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use tracer::{trace_paths, TracerConfig};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// OFDM array/system parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub num_antennas: usize,
    pub num_subcarriers: usize,
    pub subcarrier_spacing: f64,
    pub carrier_frequency: f64,
    pub antenna_spacing: f64,
}

impl Default for SystemConfig {
    /// 256 antennas at half-wavelength spacing, 10 GHz carrier, 50 MHz
    /// of 120 kHz subcarriers (416 subcarriers).
    fn default() -> Self {
        let fc = 10e9;
        let df: f64 = 120e3;
        SystemConfig {
            num_antennas: 256,
            num_subcarriers: (50e6_f64 / df).floor() as usize,
            subcarrier_spacing: df,
            carrier_frequency: fc,
            antenna_spacing: 0.5 * SPEED_OF_LIGHT / fc,
        }
    }
}

impl SystemConfig {
    /// Reduced array for single-core end-to-end experiments: 32 antennas and
    /// the same 50 MHz bandwidth split into 104 subcarriers of 480 kHz.
    pub fn desk() -> Self {
        let fc = 10e9;
        let df: f64 = 480e3;
        SystemConfig {
            num_antennas: 32,
            num_subcarriers: (50e6_f64 / df).floor() as usize,
            subcarrier_spacing: df,
            carrier_frequency: fc,
            antenna_spacing: 0.5 * SPEED_OF_LIGHT / fc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.num_antennas >= 1
            && self.num_subcarriers >= 1
            && self.subcarrier_spacing > 0.0
            && self.carrier_frequency > 0.0
            && self.antenna_spacing > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid system config {self:?}")))
        }
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    pub fn bandwidth(&self) -> f64 {
        self.subcarrier_spacing * self.num_subcarriers as f64
    }

    /// Spatial frequency per antenna index for a unit `sin θ`.
    fn spatial_step(&self) -> f64 {
        2.0 * PI * self.antenna_spacing / self.wavelength()
    }
}

/// Array steering vector `a(θ)`.
pub fn array_steering(cfg: &SystemConfig, theta: f64) -> Array1<Complex64> {
    let w = cfg.spatial_step() * theta.sin();
    Array1::from_shape_fn(cfg.num_antennas, |m| Complex64::cis(w * m as f64))
}

/// Frequency-domain steering vector `b(τ)`.
pub fn freq_steering(cfg: &SystemConfig, tau: f64) -> Array1<Complex64> {
    let w = -2.0 * PI * cfg.subcarrier_spacing * tau;
    Array1::from_shape_fn(cfg.num_subcarriers, |n| Complex64::cis(w * n as f64))
}

/// One propagation path: complex gain, angle of arrival (rad), delay (s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: Complex64,
    pub aoa: f64,
    pub toa: f64,
}

/// Paths of one user, sorted by ascending delay.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathSet {
    paths: Vec<Path>,
}

impl PathSet {
    pub fn new(mut paths: Vec<Path>) -> Self {
        paths.sort_by(|a, b| a.toa.total_cmp(&b.toa));
        PathSet { paths }
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn into_vec(self) -> Vec<Path> {
        self.paths
    }
}

/// Antenna × subcarrier channel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiMatrix(pub Array2<Complex64>);

impl CsiMatrix {
    pub fn zeros(cfg: &SystemConfig) -> Self {
        CsiMatrix(Array2::zeros((cfg.num_antennas, cfg.num_subcarriers)))
    }

    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn check_dims(&self, cfg: &SystemConfig) -> Result<()> {
        let want = (cfg.num_antennas, cfg.num_subcarriers);
        if self.dims() != want {
            return Err(Error::dims(format!("{want:?}"), format!("{:?}", self.dims())));
        }
        Ok(())
    }
}

/// Evaluate `Σ β a(θ) b(τ)ᵀ` over a path set.
pub fn synthesize_csi(cfg: &SystemConfig, paths: &PathSet) -> Result<CsiMatrix> {
    if paths.is_empty() {
        return Err(Error::EmptyPaths);
    }
    let mut h = CsiMatrix::zeros(cfg);
    for p in paths.paths() {
        let a = array_steering(cfg, p.aoa) * p.gain;
        let b = freq_steering(cfg, p.toa);
        for (mut row, am) in h.0.rows_mut().into_iter().zip(a.iter()) {
            row.zip_mut_with(&b, |x, bn| *x += am * bn);
        }
    }
    Ok(h)
}

/// Add circularly-symmetric complex Gaussian noise with per-entry variance
/// `noise_power`. Off by default in the pipeline (ideal CSI).
pub fn add_noise(h: &mut CsiMatrix, noise_power: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = (noise_power / 2.0).sqrt();
    for x in h.0.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *x += Complex64::new(re * s, im * s);
    }
}
