//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic       4 bytes  "MHCK"
//! version     u32      1
//! n_layers    u32      number of entries in layer_sizes (>= 2)
//! sizes       u32 × n_layers
//! n_params    u64      must equal the count implied by sizes
//! params      f64 × n_params, flattened in ModelParams::flatten order
//! ```

use thiserror::Error;

use super::{ModelParams, ModelSpec};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MHCK";
const VERSION: u32 = 1;
const MAX_LAYERS: u32 = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("{0} trailing bytes after parameters")]
    TrailingBytes(usize),
    #[error("invalid layer layout: {0}")]
    BadLayout(String),
    #[error("non-finite parameter at {0}")]
    NonFinite(usize),
}

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let sizes = &params.spec().layer_sizes;
    let flat = params.flatten();
    let mut out = Vec::with_capacity(20 + 4 * sizes.len() + 8 * flat.dim());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for &s in sizes {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    out.extend_from_slice(&(flat.dim() as u64).to_le_bytes());
    for v in flat.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        if self.0.len() < N {
            return Err(CheckpointError::Truncated);
        }
        let (head, tail) = self.0.split_at(N);
        self.0 = tail;
        Ok(head.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take()?))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams, CheckpointError> {
    let mut cur = Cursor(bytes);
    if cur.take::<4>().map_err(|_| CheckpointError::BadMagic)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let n_layers = cur.u32()?;
    if !(2..=MAX_LAYERS).contains(&n_layers) {
        return Err(CheckpointError::BadLayout(format!("{n_layers} layers")));
    }
    let sizes = (0..n_layers)
        .map(|_| cur.u32().map(|s| s as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = ModelSpec::new(sizes).map_err(|e| CheckpointError::BadLayout(e.to_string()))?;
    let expected = sizes_param_count(&spec.layer_sizes)
        .ok_or_else(|| CheckpointError::BadLayout("parameter count overflows".into()))?;
    let n_params = u64::from_le_bytes(cur.take()?);
    if n_params != expected as u64 {
        return Err(CheckpointError::BadLayout(format!(
            "header says {n_params} parameters, layout implies {expected}"
        )));
    }
    let needed = expected.checked_mul(8).ok_or(CheckpointError::Truncated)?;
    if cur.0.len() < needed {
        return Err(CheckpointError::Truncated);
    }
    if cur.0.len() > needed {
        return Err(CheckpointError::TrailingBytes(cur.0.len() - needed));
    }
    let flat = cur
        .0
        .chunks_exact(8)
        .enumerate()
        .map(|(i, c)| {
            let v = f64::from_le_bytes(c.try_into().expect("chunk of 8"));
            if v.is_finite() {
                Ok(v)
            } else {
                Err(CheckpointError::NonFinite(i))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ModelParams::unflatten(&spec, &flat).expect("length checked"))
}

fn sizes_param_count(sizes: &[usize]) -> Option<usize> {
    sizes.windows(2).try_fold(0usize, |acc, w| {
        w[0].checked_mul(w[1])?.checked_add(w[1])?.checked_add(acc)
    })
}
