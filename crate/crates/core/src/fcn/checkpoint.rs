//! Binary checkpoint of an [`FcnParams`].
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"LMFCNFCN"
//! 8       4     version (u32) = 1
//! 12      8     seed (u64)
//! 20      4     input channels c (u32)
//! 24      4     latent width φ (u32)
//! 28      4     tensor count (u32) = 18
//! 32      ...   tensors, each:
//!                 u16 name length, name bytes (UTF-8)
//!                 u64 value count, values as f64
//! ```
//!
//! Tensors appear in [`FcnParams::TENSOR_NAMES`] order: for each of conv1,
//! conv2, conv3 the weight (`c_out x c_in x 3 x 3`), bias, then the following
//! batch-norm layer's scale, shift, running mean and running variance.

use std::io::{Read, Write};

use super::{fcn_init, FcnParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LMFCNFCN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, params: &FcnParams) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&params.seed.to_le_bytes())?;
    w.write_all(&(params.in_channels as u32).to_le_bytes())?;
    w.write_all(&(params.phi as u32).to_le_bytes())?;
    let tensors = params.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in FcnParams::TENSOR_NAMES.iter().zip(tensors) {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.len() as u64).to_le_bytes())?;
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<FcnParams> {
    let magic: [u8; 8] = read_array(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let seed = u64::from_le_bytes(read_array(&mut r)?);
    let c = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let phi = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
    if count != FcnParams::TENSOR_NAMES.len() {
        return Err(Error::Checkpoint(format!("expected 18 tensors, found {count}")));
    }
    // shapes come from a fresh network of the same geometry
    let mut params = fcn_init(seed, c, phi)?;
    for (name, slot) in FcnParams::TENSOR_NAMES.iter().zip(params.tensors_mut()) {
        let len = u16::from_le_bytes(read_array(&mut r)?) as usize;
        let mut got = vec![0u8; len];
        r.read_exact(&mut got)
            .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
        if got != name.as_bytes() {
            return Err(Error::Checkpoint(format!(
                "expected tensor `{name}`, found `{}`",
                String::from_utf8_lossy(&got)
            )));
        }
        let n = u64::from_le_bytes(read_array(&mut r)?) as usize;
        if n != slot.len() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has {n} values, expected {}",
                slot.len()
            )));
        }
        for v in slot.iter_mut() {
            *v = f64::from_le_bytes(read_array(&mut r)?);
        }
    }
    Ok(params)
}
