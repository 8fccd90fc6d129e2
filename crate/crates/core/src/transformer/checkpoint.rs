//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//! `"ABCK1"`, `u32` config length, config as `key=value` text, `u64` step,
//! `u32` tensor count, then per tensor: `u32` name length, name, `u32` rows,
//! `u32` cols, `rows*cols` f32 values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::config::ModelConfig;
use super::model::Transformer;
use super::optim::{Adam, Trainer};
use crate::error::{LabError, Result};
use crate::Scalar;

pub const MAGIC: &[u8; 5] = b"ABCK1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub tensors: Vec<(String, Array2<f32>)>,
}

fn to_f32<T: Scalar>(a: &Array2<T>) -> Array2<f32> {
    a.mapv(|v| v.to_f32().unwrap_or(f32::NAN))
}

fn from_f32<T: Scalar>(a: &Array2<f32>) -> Array2<T> {
    a.mapv(|v| T::of(v as f64))
}

impl Checkpoint {
    pub fn from_trainer<T: Scalar>(trainer: &Trainer<T>) -> Self {
        let p = &trainer.model.params;
        let mut tensors: Vec<(String, Array2<f32>)> = p
            .names
            .iter()
            .cloned()
            .zip(p.values.iter().map(to_f32))
            .collect();
        for (i, name) in p.names.iter().enumerate() {
            tensors.push((format!("adam.m/{name}"), to_f32(&trainer.adam.m[i])));
            tensors.push((format!("adam.v/{name}"), to_f32(&trainer.adam.v[i])));
        }
        tensors.push((
            "adam.t".into(),
            Array2::from_elem((1, 1), f32::from_bits(trainer.adam.t as u32)),
        ));
        Self {
            config: trainer.model.config.clone(),
            step: trainer.step,
            tensors,
        }
    }

    pub fn from_model<T: Scalar>(model: &Transformer<T>) -> Self {
        Self::from_trainer(&Trainer::new(model.clone()))
    }

    fn tensor(&self, name: &str) -> Option<&Array2<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_model<T: Scalar>(&self) -> Result<Transformer<T>> {
        let named = self
            .tensors
            .iter()
            .filter(|(n, _)| !n.starts_with("adam."))
            .map(|(n, t)| (n.clone(), from_f32(t)))
            .collect();
        Transformer::from_named(self.config.clone(), named)
    }

    pub fn to_trainer<T: Scalar>(&self) -> Result<Trainer<T>> {
        let model = self.to_model::<T>()?;
        let mut adam = Adam::new(self.config.learning_rate, &model.params.values);
        for (i, name) in model.params.names.iter().enumerate() {
            if let Some(m) = self.tensor(&format!("adam.m/{name}")) {
                adam.m[i] = from_f32(m);
            }
            if let Some(v) = self.tensor(&format!("adam.v/{name}")) {
                adam.v[i] = from_f32(v);
            }
        }
        adam.t = self.tensor("adam.t").map_or(0, |t| t[[0, 0]].to_bits() as u64);
        Ok(Trainer {
            model,
            adam,
            step: self.step,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        let cfg = self.config.to_text();
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(cfg.as_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.nrows() as u32).to_le_bytes())?;
            w.write_all(&(t.ncols() as u32).to_le_bytes())?;
            for v in t.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |detail: &str| LabError::Format {
            what: "checkpoint",
            detail: detail.to_string(),
        };
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let cfg_len = read_u32(&mut r)? as usize;
        let mut cfg = vec![0u8; cfg_len];
        r.read_exact(&mut cfg)?;
        let config = ModelConfig::from_text(
            std::str::from_utf8(&cfg).map_err(|_| bad("config is not utf-8"))?,
        )?;
        let mut step = [0u8; 8];
        r.read_exact(&mut step)?;
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| bad("tensor name is not utf-8"))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut raw = vec![0u8; rows * cols * 4];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Array2::from_shape_vec((rows, cols), data).map_err(|e| bad(&e.to_string()))?;
            tensors.push((name, t));
        }
        Ok(Self {
            config,
            step: u64::from_le_bytes(step),
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
