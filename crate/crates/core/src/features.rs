//! CSI preprocessing for the neural localizer.
//!
//! The antenna × subcarrier matrix is moved into the angle-delay domain
//! with a unitary DFT over antennas and a unitary inverse DFT over
//! subcarriers. Only the delay columns that a path inside the scene can
//! occupy are kept, and each kept entry contributes its natural-log
//! magnitude and its phase.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::channel::{CsiMatrix, SystemConfig};
use crate::scene::SceneMap;
use crate::{Error, Result};

/// Magnitudes below this are clamped before taking the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Angle-delay transform `F_a · H · F_b⁻¹` with unitary scaling.
pub fn to_angle_delay(h: &CsiMatrix) -> Array2<Complex64> {
    transform(&h.0, false)
}

/// Inverse of [`to_angle_delay`].
pub fn from_angle_delay(hbar: &Array2<Complex64>) -> CsiMatrix {
    CsiMatrix(transform(hbar, true))
}

fn transform(x: &Array2<Complex64>, inverse: bool) -> Array2<Complex64> {
    let (m, nc) = x.dim();
    let mut planner = FftPlanner::new();
    let (antenna, delay) = if inverse {
        (planner.plan_fft_inverse(m), planner.plan_fft_forward(nc))
    } else {
        (planner.plan_fft_forward(m), planner.plan_fft_inverse(nc))
    };
    let scale = 1.0 / ((m * nc) as f64).sqrt();
    let mut out = x.to_owned();
    let mut buf = vec![Complex64::default(); m.max(nc)];
    for mut row in out.axis_iter_mut(Axis(0)) {
        let b = &mut buf[..nc];
        b.iter_mut().zip(row.iter()).for_each(|(d, s)| *d = *s);
        delay.process(b);
        row.iter_mut().zip(b.iter()).for_each(|(d, s)| *d = *s);
    }
    for mut col in out.axis_iter_mut(Axis(1)) {
        let b = &mut buf[..m];
        b.iter_mut().zip(col.iter()).for_each(|(d, s)| *d = *s);
        antenna.process(b);
        col.iter_mut().zip(b.iter()).for_each(|(d, s)| *d = *s * scale);
    }
    out
}

/// Inclusive range of delay bins kept after truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayWindow {
    pub first: usize,
    pub last: usize,
}

impl DelayWindow {
    /// Bins `⌊τ_min Δf N_c⌋ ..= ⌈τ_max Δf N_c⌉`.
    pub fn new(tau_min: f64, tau_max: f64, cfg: &SystemConfig) -> Result<Self> {
        if !(tau_min >= 0.0 && tau_max >= tau_min) {
            return Err(Error::domain("delay window needs 0 <= tau_min <= tau_max"));
        }
        let bins = cfg.subcarrier_spacing * cfg.num_subcarriers as f64;
        let first = (tau_min * bins).floor() as usize;
        let last = ((tau_max * bins).ceil() as usize).max(first);
        if last >= cfg.num_subcarriers {
            return Err(Error::domain(format!(
                "delay window ends at bin {last} but only {} subcarriers exist",
                cfg.num_subcarriers
            )));
        }
        Ok(DelayWindow { first, last })
    }

    pub fn for_scene(scene: &SceneMap, cfg: &SystemConfig) -> Result<Self> {
        let (lo, hi) = scene.delay_bounds();
        Self::new(lo, hi, cfg)
    }

    pub fn width(&self) -> usize {
        self.last - self.first + 1
    }
}

/// Delay columns of an angle-delay matrix inside the window.
pub fn truncate(hbar: &Array2<Complex64>, window: DelayWindow) -> Result<Array2<Complex64>> {
    if window.last >= hbar.ncols() {
        return Err(Error::dims(format!("> {} delay bins", window.last), hbar.ncols()));
    }
    Ok(hbar.slice(s![.., window.first..=window.last]).to_owned())
}

/// Real feature vector: the log-amplitude block followed by the phase
/// block, each in column-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Array1<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn log_amplitude(&self) -> ndarray::ArrayView1<'_, f64> {
        self.0.slice(s![..self.0.len() / 2])
    }

    pub fn phase(&self) -> ndarray::ArrayView1<'_, f64> {
        self.0.slice(s![self.0.len() / 2..])
    }
}

pub fn feature_vector(ht: &Array2<Complex64>) -> FeatureVector {
    let n = ht.len();
    let mut v = Array1::zeros(2 * n);
    // column-major: walk columns, then rows within each column
    for (k, x) in ht.t().iter().enumerate() {
        v[k] = x.norm().max(LOG_FLOOR).ln();
        v[n + k] = phase(*x);
    }
    FeatureVector(v)
}

/// Argument in `(−π, π]`, zero for a zero entry.
fn phase(x: Complex64) -> f64 {
    if x == Complex64::default() {
        return 0.0;
    }
    let p = x.im.atan2(x.re);
    if p <= -PI {
        p + 2.0 * PI
    } else {
        p
    }
}

/// Complete preprocessing chain for one system and delay window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub system: SystemConfig,
    pub window: DelayWindow,
}

impl FeatureExtractor {
    pub fn for_scene(scene: &SceneMap, system: &SystemConfig) -> Result<Self> {
        Ok(FeatureExtractor { system: *system, window: DelayWindow::for_scene(scene, system)? })
    }

    /// Feature length `2 · M · W`.
    pub fn dim(&self) -> usize {
        2 * self.system.num_antennas * self.window.width()
    }

    pub fn extract(&self, h: &CsiMatrix) -> Result<FeatureVector> {
        h.check_dims(&self.system)?;
        Ok(feature_vector(&truncate(&to_angle_delay(h), self.window)?))
    }

    /// Features of many users as the rows of one matrix.
    pub fn extract_all<'a>(&self, hs: impl IntoIterator<Item = &'a CsiMatrix>) -> Result<Array2<f64>> {
        let rows = hs.into_iter().map(|h| self.extract(h)).collect::<Result<Vec<_>>>()?;
        let mut out = Array2::zeros((rows.len(), self.dim()));
        for (mut dst, f) in out.axis_iter_mut(Axis(0)).zip(rows) {
            dst.assign(&f.0);
        }
        Ok(out)
    }
}

/// Per-dimension affine normalization `(x − mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    /// Mean and population standard deviation of each column. Columns with
    /// (near) zero spread get unit scale.
    pub fn fit(x: &Array2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::domain("cannot fit a standardizer on zero rows"));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Ok(Standardizer { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Standardizer { mean: Array1::zeros(dim), std: Array1::ones(dim) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.std
    }

    pub fn invert(&self, z: &Array2<f64>) -> Array2<f64> {
        z * &self.std + &self.mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synthesize_csi, Path, PathSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sys() -> SystemConfig {
        SystemConfig { num_antennas: 8, num_subcarriers: 32, ..SystemConfig::default() }
    }

    fn random_csi(seed: u64) -> CsiMatrix {
        let s = sys();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CsiMatrix(Array2::from_shape_fn((s.num_antennas, s.num_subcarriers), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        }))
    }

    #[test]
    fn constant_matrix_concentrates_in_origin_bin() {
        let s = sys();
        let h = CsiMatrix(Array2::from_elem((8, 32), Complex64::new(1.0, 0.0)));
        let hb = to_angle_delay(&h);
        assert!((hb[[0, 0]] - Complex64::new((8.0f64 * 32.0).sqrt(), 0.0)).norm() < 1e-12);
        let rest: f64 = hb.iter().skip(1).map(|c| c.norm()).sum();
        assert!(rest < 1e-10);
        assert_eq!(hb.dim(), (s.num_antennas, s.num_subcarriers));
    }

    #[test]
    fn transform_is_unitary_and_invertible() {
        let h = random_csi(3);
        let hb = to_angle_delay(&h);
        let n = CsiMatrix(hb.clone()).frobenius_norm();
        assert!((n - h.frobenius_norm()).abs() < 1e-9 * n);
        let back = from_angle_delay(&hb);
        let err = CsiMatrix(&back.0 - &h.0).frobenius_norm();
        assert!(err < 1e-9 * h.frobenius_norm());
    }

    #[test]
    fn on_bin_path_peaks_at_predicted_bin() {
        let s = sys();
        // sin θ · (d/λ) · M = 3 and τ · Δf · N_c = 5
        let theta = (3.0f64 / (0.5 * 8.0)).asin();
        let tau = 5.0 / (s.subcarrier_spacing * 32.0);
        let h = synthesize_csi(&s, &PathSet::new(vec![Path { gain: Complex64::new(1.0, 0.0), aoa: theta, toa: tau }])).unwrap();
        let hb = to_angle_delay(&h);
        let (mut best, mut at) = (0.0, (0, 0));
        for ((i, j), v) in hb.indexed_iter() {
            if v.norm() > best {
                best = v.norm();
                at = (i, j);
            }
        }
        assert_eq!(at, (3, 5));
    }

    #[test]
    fn window_index_arithmetic() {
        let s = SystemConfig::default();
        let w = DelayWindow::new(100e-9, 1e-6, &s).unwrap();
        assert_eq!((w.first, w.last, w.width()), (4, 50, 47));
        let full = DelayWindow::new(0.0, 31.0 / (sys().subcarrier_spacing * 32.0), &sys()).unwrap();
        assert_eq!(full.width(), 32);
        let one = DelayWindow::new(0.0, 0.0, &sys()).unwrap();
        assert_eq!(one.width(), 1);
        assert!(DelayWindow::new(0.0, 40.0 / (sys().subcarrier_spacing * 32.0), &sys()).is_err());
    }

    #[test]
    fn feature_entries() {
        let ht = ndarray::array![[Complex64::new(1.0, 0.0), Complex64::new(0.0, std::f64::consts::E)], [
            Complex64::default(),
            Complex64::new(-1.0, 0.0)
        ]];
        let f = feature_vector(&ht);
        // column-major: (0,0), (1,0), (0,1), (1,1)
        let amp: Vec<f64> = f.log_amplitude().to_vec();
        let ph: Vec<f64> = f.phase().to_vec();
        assert_eq!(amp[0], 0.0);
        assert_eq!(amp[1], LOG_FLOOR.ln());
        assert!((amp[2] - 1.0).abs() < 1e-15);
        assert_eq!(ph[0], 0.0);
        assert_eq!(ph[1], 0.0);
        assert!((ph[2] - PI / 2.0).abs() < 1e-15);
        assert_eq!(ph[3], PI);
    }

    #[test]
    fn positive_scaling_shifts_log_block_only() {
        let h = random_csi(9);
        let hb = to_angle_delay(&h);
        let f1 = feature_vector(&hb);
        let f2 = feature_vector(&hb.mapv(|c| c * 3.5));
        for (a, b) in f1.log_amplitude().iter().zip(f2.log_amplitude().iter()) {
            assert!((b - a - 3.5f64.ln()).abs() < 1e-12);
        }
        for (a, b) in f1.phase().iter().zip(f2.phase().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardizer_round_trip() {
        let x = ndarray::array![[1.0, 5.0, 2.0], [3.0, 5.0, 4.0], [5.0, 5.0, 9.0]];
        let st = Standardizer::fit(&x).unwrap();
        let z = st.apply(&x);
        assert!(z.column(0).iter().map(|v| v * v).sum::<f64>() - 3.0 < 1e-12);
        assert!(z.column(1).iter().all(|v| *v == 0.0));
        let back = st.invert(&z);
        assert!((&back - &x).iter().all(|d| d.abs() < 1e-12));
    }
}
