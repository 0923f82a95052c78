//! `UMLP` model file, little-endian:
//!
//! ```text
//! magic "UMLP", version u32 = 1
//! L+1 u32, widths (L+1) × u32
//! per layer: weight (in × out, row-major) f64, bias f64
//! per hidden layer: gamma, beta, running_mean, running_var f64
//! input mean, input std (n_0 each) f64
//! output mean, output std (n_L each) f64
//! has ε_cc u8, ε_cc f64
//! has window u8, first u32, last u32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{BatchNorm, Linear, MlpModel};
use crate::features::{DelayWindow, Standardizer};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UMLP";
pub const VERSION: u32 = 1;

impl MlpModel {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.widths.len() as u32).to_le_bytes())?;
        for &n in &self.widths {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        for layer in &self.layers {
            put(w, layer.weight.iter())?;
            put(w, layer.bias.iter())?;
        }
        for bn in &self.norms {
            for a in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                put(w, a.iter())?;
            }
        }
        for s in [&self.input_norm, &self.output_norm] {
            put(w, s.mean.iter())?;
            put(w, s.std.iter())?;
        }
        w.write_all(&[self.eps_cc.is_some() as u8])?;
        w.write_all(&self.eps_cc.unwrap_or(0.0).to_le_bytes())?;
        w.write_all(&[self.window.is_some() as u8])?;
        let (first, last) = self.window.map_or((0, 0), |d| (d.first, d.last));
        w.write_all(&(first as u32).to_le_bytes())?;
        w.write_all(&(last as u32).to_le_bytes())?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic, not a UMLP model".into()));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported UMLP version {version}")));
        }
        let count = get_u32(r)? as usize;
        if !(2..=64).contains(&count) {
            return Err(Error::Format(format!("implausible layer count {count}")));
        }
        let widths = (0..count).map(|_| get_u32(r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let mut layers = Vec::new();
        for l in 0..count - 1 {
            let weight = Array2::from_shape_vec((widths[l], widths[l + 1]), get_vec(r, widths[l] * widths[l + 1])?)
                .expect("length matches shape");
            let bias = Array1::from(get_vec(r, widths[l + 1])?);
            layers.push(Linear { weight, bias });
        }
        let mut norms = Vec::new();
        for &n in &widths[1..count - 1] {
            norms.push(BatchNorm {
                gamma: Array1::from(get_vec(r, n)?),
                beta: Array1::from(get_vec(r, n)?),
                running_mean: Array1::from(get_vec(r, n)?),
                running_var: Array1::from(get_vec(r, n)?),
            });
        }
        let mut norm = |n: usize| -> Result<Standardizer> {
            Ok(Standardizer { mean: Array1::from(get_vec(r, n)?), std: Array1::from(get_vec(r, n)?) })
        };
        let input_norm = norm(widths[0])?;
        let output_norm = norm(widths[count - 1])?;
        let has_eps = get_u8(r)? != 0;
        let eps = get_f64(r)?;
        let has_window = get_u8(r)? != 0;
        let (first, last) = (get_u32(r)? as usize, get_u32(r)? as usize);
        Ok(MlpModel {
            widths,
            layers,
            norms,
            input_norm,
            output_norm,
            eps_cc: has_eps.then_some(eps),
            window: has_window.then_some(DelayWindow { first, last }),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn put<'a>(w: &mut impl Write, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    let buf: Vec<u8> = values.flat_map(|v| v.to_le_bytes()).collect();
    w.write_all(&buf)?;
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

fn get_vec(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}
