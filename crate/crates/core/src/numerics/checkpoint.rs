//! Binary parameter checkpoints.
//!
//! Layout (little endian): `"KGCK"`, version `u16`, tensor count `u32`,
//! then per tensor: name length `u32`, UTF-8 name, rank `u8`, dims as
//! `u32`, values as `f64`.

use std::fs;
use std::io;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use super::tensor::{ParameterSet, Tensor};

const MAGIC: &[u8; 4] = b"KGCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
}

pub fn write_checkpoint(params: &ParameterSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u16::<LittleEndian>(CHECKPOINT_VERSION)
        .expect("vec write");
    out.write_u32::<LittleEndian>(params.len() as u32)
        .expect("vec write");
    for (_, name, t) in params.iter() {
        out.write_u32::<LittleEndian>(name.len() as u32)
            .expect("vec write");
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.write_u32::<LittleEndian>(d as u32).expect("vec write");
        }
        for &v in t.data() {
            out.write_f64::<LittleEndian>(v).expect("vec write");
        }
    }
    out
}

/// Parses a checkpoint into a fresh parameter set (seed 0).
pub fn read_checkpoint(bytes: &[u8]) -> Result<ParameterSet, CheckpointError> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    io::Read::read_exact(&mut r, &mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let truncated = |_| CheckpointError::Malformed("truncated".into());
    let version = r.read_u16::<LittleEndian>().map_err(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let count = r.read_u32::<LittleEndian>().map_err(truncated)?;
    let mut params = ParameterSet::new(0);
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if r.len() < len {
            return Err(CheckpointError::Malformed("truncated name".into()));
        }
        let name = std::str::from_utf8(&r[..len])
            .map_err(|_| CheckpointError::Malformed("name is not UTF-8".into()))?
            .to_string();
        r = &r[len..];
        let rank = r.read_u8().map_err(truncated)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>().map_err(truncated)? as usize);
        }
        let n: usize = shape.iter().product();
        if r.len() < n * 8 {
            return Err(CheckpointError::Malformed(format!(
                "truncated values for `{name}`"
            )));
        }
        let mut data = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut data)
            .map_err(truncated)?;
        let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        params
            .insert(&name, t)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    }
    if !r.is_empty() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParameterSet, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, write_checkpoint(params))?;
    Ok(())
}

/// Loads a checkpoint into `params`, which must have the same names and
/// shapes in the same order.
pub fn load_checkpoint(params: &mut ParameterSet, path: &Path) -> Result<(), CheckpointError> {
    let loaded = read_checkpoint(&fs::read(path)?)?;
    if loaded.len() != params.len() {
        return Err(CheckpointError::Mismatch(format!(
            "{} tensors in file, {} in model",
            loaded.len(),
            params.len()
        )));
    }
    let ids: Vec<_> = params.ids().collect();
    for (id, (_, name, t)) in ids.into_iter().zip(loaded.iter()) {
        if params.name(id) != name || params.get(id).shape() != t.shape() {
            return Err(CheckpointError::Mismatch(format!(
                "`{}` {:?} vs `{name}` {:?}",
                params.name(id),
                params.get(id).shape(),
                t.shape()
            )));
        }
        params.get_mut(id).data_mut().copy_from_slice(t.data());
    }
    Ok(())
}
