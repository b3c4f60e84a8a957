//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RLPC" u32:version
//! u32:d_model u32:blocks u32:ff_dim u32:head_hidden
//! u32:n_heads u8×n_heads:predicate codes
//! u64:seed u32:epochs_completed u8:has_optimizer
//! f32 parameter tensors in declaration order (trunk, then heads by code)
//! [optimizer: u64 trunk step, trunk m, trunk v,
//!             per head: u64 step, m, v]
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::PredicateKind;

use super::params::{Head, ModelDims, ModelParams, Trunk};
use super::train::{AdamState, Moments, TrainState};

pub const MAGIC: &[u8; 4] = b"RLPC";
pub const VERSION: u32 = 1;

fn put_tensors(out: &mut Vec<u8>, tensors: Vec<&Vec<f64>>) {
    for t in tensors {
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

pub fn to_bytes(state: &TrainState, with_optimizer: bool) -> Vec<u8> {
    let p = &state.params;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [p.dims.d_model, p.dims.blocks, p.dims.ff_dim, p.dims.head_hidden] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(p.heads.len() as u32).to_le_bytes());
    out.extend(p.heads.keys().map(|k| k.code()));
    out.extend_from_slice(&p.seed.to_le_bytes());
    out.extend_from_slice(&(state.epochs_completed as u32).to_le_bytes());
    out.push(with_optimizer as u8);
    put_tensors(&mut out, p.tensors().into_iter().map(|(_, t)| t).collect());
    if with_optimizer {
        let a = &state.adam;
        out.extend_from_slice(&a.trunk.step.to_le_bytes());
        put_tensors(&mut out, a.trunk.m.tensors().into_iter().map(|(_, t)| t).collect());
        put_tensors(&mut out, a.trunk.v.tensors().into_iter().map(|(_, t)| t).collect());
        let zero = Head::zeros(&p.dims);
        for k in p.heads.keys() {
            match a.heads.get(k) {
                Some(h) => {
                    out.extend_from_slice(&h.step.to_le_bytes());
                    put_tensors(&mut out, h.m.tensors());
                    put_tensors(&mut out, h.v.tensors());
                }
                None => {
                    out.extend_from_slice(&0u64.to_le_bytes());
                    put_tensors(&mut out, zero.tensors());
                    put_tensors(&mut out, zero.tensors());
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::MalformedCheckpoint("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn fill(&mut self, tensors: Vec<&mut Vec<f64>>) -> Result<()> {
        for t in tensors {
            let bytes = self.take(4 * t.len())?;
            for (v, c) in t.iter_mut().zip(bytes.chunks_exact(4)) {
                *v = f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")));
            }
        }
        Ok(())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<(TrainState, bool)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::MalformedCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::MalformedCheckpoint(format!("unsupported version {version}")));
    }
    let dims = ModelDims {
        d_model: r.u32()? as usize,
        blocks: r.u32()? as usize,
        ff_dim: r.u32()? as usize,
        head_hidden: r.u32()? as usize,
    };
    dims.validate()
        .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
    if dims.d_model > 4096 || dims.blocks > 64 || dims.ff_dim > 65536 || dims.head_hidden > 65536 {
        return Err(Error::MalformedCheckpoint(format!("implausible dims {dims:?}")));
    }
    let n_heads = r.u32()? as usize;
    if n_heads == 0 || n_heads > PredicateKind::ALL.len() {
        return Err(Error::MalformedCheckpoint(format!("{n_heads} heads")));
    }
    let mut kinds = Vec::with_capacity(n_heads);
    for _ in 0..n_heads {
        let code = r.u8()?;
        let kind = PredicateKind::from_code(code)
            .ok_or_else(|| Error::MalformedCheckpoint(format!("unknown predicate code {code}")))?;
        if kinds.last().is_some_and(|&last| last >= kind) {
            return Err(Error::MalformedCheckpoint("predicate codes not ascending".into()));
        }
        kinds.push(kind);
    }
    let seed = r.u64()?;
    let epochs_completed = r.u32()? as usize;
    let has_optimizer = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::MalformedCheckpoint(format!("optimizer flag {v}"))),
    };
    let mut params = ModelParams {
        dims,
        seed,
        trunk: Trunk::zeros(&dims),
        heads: kinds.iter().map(|&k| (k, Head::zeros(&dims))).collect(),
    };
    r.fill(params.tensors_mut())?;
    let mut adam = AdamState::new(&dims);
    if has_optimizer {
        adam.trunk.step = r.u64()?;
        r.fill(adam.trunk.m.tensors_mut())?;
        r.fill(adam.trunk.v.tensors_mut())?;
        let mut heads = BTreeMap::new();
        for k in &kinds {
            let mut h = Moments {
                m: Head::zeros(&dims),
                v: Head::zeros(&dims),
                step: r.u64()?,
            };
            r.fill(h.m.tensors_mut())?;
            r.fill(h.v.tensors_mut())?;
            if h.step > 0 {
                heads.insert(*k, h);
            }
        }
        adam.heads = heads;
    }
    if r.pos != buf.len() {
        return Err(Error::MalformedCheckpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    if !params.is_finite() {
        return Err(Error::MalformedCheckpoint("non-finite parameters".into()));
    }
    Ok((
        TrainState {
            params,
            adam,
            epochs_completed,
        },
        has_optimizer,
    ))
}

pub fn save(path: &Path, state: &TrainState, with_optimizer: bool) -> Result<()> {
    std::fs::write(path, to_bytes(state, with_optimizer)).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint. The boolean reports whether optimizer state was
/// stored; without it the returned Adam state is fresh.
pub fn load(path: &Path) -> Result<(TrainState, bool)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}
