//! Checkpoint container: magic, JSON header, mask container, then every
//! parameter and normalization buffer as little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::arch::BackboneConfig;
use super::backbone::StagedBackbone;
use super::multi_exit::{fission_transform, MultiExitModel};
use super::Network;
use crate::error::{Error, Result};
use crate::fission::GroupMaskSet;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NFECKPT\x01";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: BackboneConfig,
    mask_bytes: u64,
    params: Vec<TensorEntry>,
    buffers: Vec<TensorEntry>,
}

pub fn write_checkpoint<F: Scalar, W: Write>(model: &mut MultiExitModel<F>, w: &mut W) -> Result<()> {
    let masks = model.masks.to_bytes()?;
    let mut params = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    model.visit_params(&mut |name, p| {
        params.push(TensorEntry {
            name: name.to_string(),
            shape: p.shape().to_vec(),
        });
        data.extend(p.value.iter().map(|v| v.as_f64()));
    });
    let mut buffers = Vec::new();
    model.visit_buffers(&mut |name, b| {
        buffers.push(TensorEntry {
            name: name.to_string(),
            shape: vec![b.len()],
        });
        data.extend(b.iter().map(|v| v.as_f64()));
    });
    let header = serde_json::to_vec(&Header {
        dtype: F::DTYPE.to_string(),
        config: model.config.clone(),
        mask_bytes: masks.len() as u64,
        params,
        buffers,
    })?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&masks)?;
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_checkpoint<F: Scalar, R: Read>(r: &mut R) -> Result<MultiExitModel<F>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(Error::Format("checkpoint header too large".into()));
    }
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(|_| Error::Format("truncated checkpoint header".into()))?;
    let header: Header = serde_json::from_slice(&header)?;
    let mut mask_bytes = vec![0u8; header.mask_bytes as usize];
    r.read_exact(&mut mask_bytes).map_err(|_| Error::Format("truncated mask container".into()))?;
    let masks = GroupMaskSet::from_bytes(&mask_bytes)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    let expected: usize = header
        .params
        .iter()
        .chain(&header.buffers)
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    if rest.len() != expected * 8 {
        return Err(Error::Format(format!(
            "tensor payload has {} bytes, header describes {}",
            rest.len(),
            expected * 8
        )));
    }
    let mut values = rest
        .chunks_exact(8)
        .map(|c| F::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes"))));

    let backbone = StagedBackbone::<F>::new(&header.config, 0)?;
    let mut model = fission_transform(&backbone, &masks.plan, &masks)?;

    let mut err: Option<Error> = None;
    let mut entries = header.params.iter();
    model.visit_params(&mut |name, p| {
        if err.is_some() {
            return;
        }
        match entries.next() {
            Some(e) if e.name == name && e.shape == p.shape() => {
                let v: Vec<F> = values.by_ref().take(p.numel()).collect();
                p.value = ArrayD::from_shape_vec(e.shape.clone(), v).expect("length checked");
            }
            Some(e) => {
                err = Some(Error::Format(format!(
                    "parameter `{}` {:?} does not match model tensor `{name}` {:?}",
                    e.name,
                    e.shape,
                    p.shape()
                )))
            }
            None => err = Some(Error::Format(format!("checkpoint lacks parameter `{name}`"))),
        }
    });
    if err.is_none() && entries.next().is_some() {
        err = Some(Error::Format("checkpoint has extra parameters".into()));
    }
    let mut entries = header.buffers.iter();
    model.visit_buffers(&mut |name, b| {
        if err.is_some() {
            return;
        }
        match entries.next() {
            Some(e) if e.name == name && e.shape == [b.len()] => {
                for (dst, v) in b.iter_mut().zip(values.by_ref()) {
                    *dst = v;
                }
            }
            _ => err = Some(Error::Format(format!("buffer `{name}` missing or mismatched"))),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if entries.next().is_some() {
        return Err(Error::Format("checkpoint has extra buffers".into()));
    }
    Ok(model)
}

pub fn save<F: Scalar>(model: &mut MultiExitModel<F>, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(model, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load<F: Scalar>(path: impl AsRef<Path>) -> Result<MultiExitModel<F>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut f)
}
