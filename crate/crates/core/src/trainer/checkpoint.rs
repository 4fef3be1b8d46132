//! Binary model checkpoint.
//!
//! ```text
//! "HMUQ"                      4 bytes
//! version                     u16 LE
//! landmark count              u32 LE
//! per landmark θ, σmaj, σmin  3 x f64 LE
//! parameter count             u64 LE
//! parameters                  f32 LE
//! config length               u32 LE
//! config                      UTF-8 `key = value` text
//! ```
//!
//! Image geometry is part of the config text (`width`, `height`). The loss
//! trace is not stored.

use std::io::{Read, Write};
use std::path::Path;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::gaussmath::CovarianceDecomposition;

use super::train::{TrainConfig, TrainedModel};

pub const MAGIC: &[u8; 4] = b"HMUQ";
pub const VERSION: u16 = 1;

fn config_text(model: &TrainedModel) -> String {
    let mut pairs = vec![
        ("width".to_string(), model.width.to_string()),
        ("height".to_string(), model.height.to_string()),
    ];
    pairs.extend(model.config.to_pairs());
    crate::config::write_kv(&pairs)
}

pub fn write_checkpoint<W: Write>(model: &TrainedModel, mut out: W) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(model.landmarks as u32).to_le_bytes())?;
    for d in &model.target_decomps {
        for v in [d.theta, d.sigma_maj, d.sigma_min] {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.write_all(&(model.predictor_params.len() as u64).to_le_bytes())?;
    for p in &model.predictor_params {
        out.write_all(&p.to_le_bytes())?;
    }
    let text = config_text(model);
    out.write_all(&(text.len() as u32).to_le_bytes())?;
    out.write_all(text.as_bytes())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<TrainedModel> {
    if &take::<4>(&mut r)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a model checkpoint".into()));
    }
    let version = u16::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let landmarks = u32::from_le_bytes(take(&mut r)?) as usize;
    let mut target_decomps = Vec::with_capacity(landmarks);
    for _ in 0..landmarks {
        let theta = f64::from_le_bytes(take(&mut r)?);
        let sigma_maj = f64::from_le_bytes(take(&mut r)?);
        let sigma_min = f64::from_le_bytes(take(&mut r)?);
        if !(sigma_maj > 0.0 && sigma_min > 0.0 && theta.is_finite()) {
            return Err(Error::Checkpoint(format!("invalid covariance ({theta}, {sigma_maj}, {sigma_min})")));
        }
        target_decomps.push(CovarianceDecomposition {
            theta,
            sigma_maj,
            sigma_min,
        });
    }
    let count = u64::from_le_bytes(take(&mut r)?) as usize;
    let mut bytes = vec![0u8; count.checked_mul(4).ok_or_else(|| Error::Checkpoint("parameter count overflow".into()))?];
    r.read_exact(&mut bytes).map_err(|e| Error::Checkpoint(format!("truncated parameters: {e}")))?;
    let predictor_params = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let len = u32::from_le_bytes(take(&mut r)?) as usize;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text).map_err(|e| Error::Checkpoint(format!("truncated config: {e}")))?;
    let text = String::from_utf8(text).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    let kv = KvConfig::parse(&text, "<checkpoint config>")?;
    let mut reader = kv.reader();
    let (mut width, mut height) = (0usize, 0usize);
    reader.set("width", &mut width)?;
    reader.set("height", &mut height)?;
    let mut config = TrainConfig::default();
    config.read_kv(&mut reader)?;
    reader.finish()?;

    let model = TrainedModel {
        config,
        width,
        height,
        landmarks,
        predictor_params,
        target_decomps,
        loss_trace: Vec::new(),
    };
    if let Ok(spec) = model.spec() {
        let expected = match model.config.predictor {
            super::train::PredictorKind::Reference => spec.param_count(),
            super::train::PredictorKind::Zero => 0,
        };
        if expected != model.predictor_params.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters stored, architecture needs {expected}",
                model.predictor_params.len()
            )));
        }
    }
    Ok(model)
}

pub fn save(model: &TrainedModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(bytes.as_slice())
}
