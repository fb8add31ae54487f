//! Binary checkpoints of [`Bau1Params`].
//!
//! Layout, all integers and floats little-endian:
//!
//! | bytes | content                                              |
//! |-------|------------------------------------------------------|
//! | 8     | magic `BAU1CKPT`                                     |
//! | 4     | format version, `u32` (currently 1)                  |
//! | 8 × 4 | `u64` feature size, hidden width 1, hidden width 2, classes |
//! | 8 × 4 | `f64` eps and stat momentum of batch-norm 1, then of batch-norm 2 |
//! | rest  | the 14 arrays of [`Bau1Params::arrays`] in order, `f64` row-major |
//!
//! Array lengths follow from the header, so there is no per-array framing.

use std::path::Path;

use super::{Bau1Params, HIDDEN1, HIDDEN2, NUM_CLASSES};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"BAU1CKPT";
const VERSION: u32 = 1;

pub fn to_bytes(params: &Bau1Params) -> Vec<u8> {
    let arrays = params.arrays();
    let floats: usize = arrays.iter().map(|a| a.len()).sum();
    let mut out = Vec::with_capacity(12 + 64 + 8 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [params.feature_size(), HIDDEN1, HIDDEN2, NUM_CLASSES] {
        out.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    for v in [
        params.bn1.eps,
        params.bn1.stat_momentum,
        params.bn2.eps,
        params.bn2.stat_momentum,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for a in arrays {
        for v in a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Bau1Params> {
    let mut cursor = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor.len() < n {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let (head, tail) = cursor.split_at(n);
        cursor = tail;
        Ok(head)
    };
    if take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    }
    if dims[1..] != [HIDDEN1, HIDDEN2, NUM_CLASSES] || dims[0] == 0 {
        return Err(Error::Checkpoint(format!("unexpected dimensions {dims:?}")));
    }
    let mut scalars = [0f64; 4];
    for s in &mut scalars {
        *s = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    }

    let mut params = Bau1Params::init(dims[0], 0);
    params.bn1.eps = scalars[0];
    params.bn1.stat_momentum = scalars[1];
    params.bn2.eps = scalars[2];
    params.bn2.stat_momentum = scalars[3];
    for array in params.arrays_mut() {
        let raw = take(8 * array.len())?;
        for (v, chunk) in array.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    if !cursor.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", cursor.len())));
    }
    Ok(params)
}

pub fn save(params: &Bau1Params, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Bau1Params> {
    let path = path.as_ref();
    from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
