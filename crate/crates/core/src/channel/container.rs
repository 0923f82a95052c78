//! `ULOC` binary dataset container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        b"ULOC"
//! version      u32            1 = channel data only, 2 = with label block
//! header       M u32, N_c u32, N_u u32,
//!              Δf f64, f_c f64, d f64, user_height f64
//! N_u records  position 3×f64
//!              true_los u8
//!              num_paths u32
//!              num_paths × (β_re f64, β_im f64, θ f64, τ f64)
//!              csi M·N_c × (re f32, im f32), antenna-major
//! label block  (version 2 only) N_u × (estimate 3×f64, identified_los u8,
//!              label 3×f64)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use ndarray::Array2;
use num_complex::Complex64;

use super::{CsiMatrix, Path, PathSet, SystemConfig};
use crate::geometry::Vec3;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ULOC";
pub const VERSION_CHANNEL: u32 = 1;
pub const VERSION_LABELED: u32 = 2;

/// One user as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub position: Vec3,
    pub true_los: bool,
    pub paths: PathSet,
    pub csi: CsiMatrix,
}

/// Per-user output of the labeling stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelRecord {
    pub estimate: Vec3,
    pub identified_los: bool,
    pub label: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub system: SystemConfig,
    pub user_height: f64,
    pub records: Vec<UserRecord>,
    pub labels: Option<Vec<LabelRecord>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn version(&self) -> u32 {
        if self.labels.is_some() {
            VERSION_LABELED
        } else {
            VERSION_CHANNEL
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let s = &self.system;
        if let Some(l) = &self.labels {
            if l.len() != self.records.len() {
                return Err(Error::dims(self.records.len(), l.len()));
            }
        }
        w.write_all(MAGIC)?;
        put_u32(w, self.version())?;
        put_u32(w, s.num_antennas as u32)?;
        put_u32(w, s.num_subcarriers as u32)?;
        put_u32(w, self.records.len() as u32)?;
        for v in [s.subcarrier_spacing, s.carrier_frequency, s.antenna_spacing, self.user_height] {
            put_f64(w, v)?;
        }
        for r in &self.records {
            r.csi.check_dims(s)?;
            put_vec3(w, r.position)?;
            w.write_all(&[r.true_los as u8])?;
            put_u32(w, r.paths.len() as u32)?;
            for p in r.paths.paths() {
                for v in [p.gain.re, p.gain.im, p.aoa, p.toa] {
                    put_f64(w, v)?;
                }
            }
            let mut buf = Vec::with_capacity(8 * r.csi.0.len());
            for c in r.csi.0.iter() {
                buf.extend_from_slice(&(c.re as f32).to_le_bytes());
                buf.extend_from_slice(&(c.im as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        if let Some(labels) = &self.labels {
            for l in labels {
                put_vec3(w, l.estimate)?;
                w.write_all(&[l.identified_los as u8])?;
                put_vec3(w, l.label)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic, not a ULOC container".into()));
        }
        let version = get_u32(r)?;
        if version != VERSION_CHANNEL && version != VERSION_LABELED {
            return Err(Error::Format(format!("unsupported ULOC version {version}")));
        }
        let m = get_u32(r)? as usize;
        let nc = get_u32(r)? as usize;
        let nu = get_u32(r)? as usize;
        let system = SystemConfig {
            num_antennas: m,
            num_subcarriers: nc,
            subcarrier_spacing: get_f64(r)?,
            carrier_frequency: get_f64(r)?,
            antenna_spacing: get_f64(r)?,
        };
        system.validate()?;
        let user_height = get_f64(r)?;
        let mut records = Vec::with_capacity(nu);
        let mut buf = vec![0u8; 8 * m * nc];
        for _ in 0..nu {
            let position = get_vec3(r)?;
            let true_los = get_u8(r)? != 0;
            let np = get_u32(r)? as usize;
            let mut paths = Vec::with_capacity(np);
            for _ in 0..np {
                let (re, im, aoa, toa) = (get_f64(r)?, get_f64(r)?, get_f64(r)?, get_f64(r)?);
                paths.push(Path { gain: Complex64::new(re, im), aoa, toa });
            }
            r.read_exact(&mut buf)?;
            let vals: Vec<Complex64> = buf
                .chunks_exact(8)
                .map(|c| {
                    let re = f32::from_le_bytes(c[0..4].try_into().unwrap());
                    let im = f32::from_le_bytes(c[4..8].try_into().unwrap());
                    Complex64::new(re as f64, im as f64)
                })
                .collect();
            let csi = CsiMatrix(Array2::from_shape_vec((m, nc), vals).expect("shape matches buffer"));
            records.push(UserRecord { position, true_los, paths: PathSet::new(paths), csi });
        }
        let labels = if version == VERSION_LABELED {
            let mut v = Vec::with_capacity(nu);
            for _ in 0..nu {
                let estimate = get_vec3(r)?;
                let identified_los = get_u8(r)? != 0;
                let label = get_vec3(r)?;
                v.push(LabelRecord { estimate, identified_los, label });
            }
            Some(v)
        } else {
            None
        };
        Ok(Dataset { system, user_height, records, labels })
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Round every entry to single precision, matching what the container
/// stores.
pub fn quantize_f32(h: &mut CsiMatrix) {
    for c in h.0.iter_mut() {
        *c = Complex64::new(c.re as f32 as f64, c.im as f32 as f64);
    }
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_vec3(w: &mut impl Write, v: Vec3) -> Result<()> {
    for x in v.to_array() {
        put_f64(w, x)?;
    }
    Ok(())
}

fn get_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_vec3(r: &mut impl Read) -> Result<Vec3> {
    Ok(Vec3::new(get_f64(r)?, get_f64(r)?, get_f64(r)?))
}
