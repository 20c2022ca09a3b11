//! Versioned binary checkpoints.
//!
//! Layout: an 8-byte magic, a little-endian header describing the
//! architecture, the flat parameter vector, the fixed embedding table (when
//! embeddings are not learned), and a trailing SHA-256 over everything
//! before it. Round trips are byte-exact; loading verifies the checksum
//! and rejects version or architecture mismatches.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{ApexError, Result};
use crate::net::{Activation, NetSpec, VelocityModel};
use crate::util::write_atomic;

const MAGIC: &[u8; 8] = b"APEXCKPT";
const VERSION: u32 = 1;

/// Serializes the model to its checkpoint byte layout.
pub fn checkpoint_bytes(model: &VelocityModel) -> Vec<u8> {
    let spec = model.spec();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(spec.data_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.hidden.len() as u32).to_le_bytes());
    for &h in &spec.hidden {
        buf.extend_from_slice(&(h as u32).to_le_bytes());
    }
    buf.push(match spec.activation {
        Activation::Tanh => 0,
        Activation::Silu => 1,
    });
    buf.extend_from_slice(&(spec.time_freqs as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.cond_count as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.embed_dim as u32).to_le_bytes());
    buf.push(spec.learn_embeddings as u8);
    buf.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    buf.extend_from_slice(&(model.fixed_embed().len() as u64).to_le_bytes());
    for p in model.fixed_embed() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

/// Writes the checkpoint atomically (temp file + rename).
pub fn checkpoint_save(model: &VelocityModel, path: &Path) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(model))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(ApexError::Checkpoint("file truncated".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parses checkpoint bytes back into a model.
pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<VelocityModel> {
    if buf.len() < MAGIC.len() + 32 {
        return Err(ApexError::Checkpoint("file truncated".into()));
    }
    let (body, stored_digest) = buf.split_at(buf.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != stored_digest {
        return Err(ApexError::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(ApexError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ApexError::Checkpoint(format!(
            "version {version} unsupported; expected {VERSION}"
        )));
    }
    let data_dim = r.u32()? as usize;
    let n_hidden = r.u32()? as usize;
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(r.u32()? as usize);
    }
    let activation = match r.u8()? {
        0 => Activation::Tanh,
        1 => Activation::Silu,
        other => {
            return Err(ApexError::Checkpoint(format!(
                "unknown activation tag {other}"
            )))
        }
    };
    let time_freqs = r.u32()? as usize;
    let cond_count = r.u32()? as usize;
    let embed_dim = r.u32()? as usize;
    let learn_embeddings = r.u8()? != 0;
    let spec = NetSpec {
        data_dim,
        hidden,
        activation,
        time_freqs,
        cond_count,
        embed_dim,
        learn_embeddings,
    };
    let n_params = r.u64()? as usize;
    if n_params != spec.param_len() {
        return Err(ApexError::Checkpoint(format!(
            "parameter count {n_params} does not match architecture ({})",
            spec.param_len()
        )));
    }
    let params = r.f64s(n_params)?;
    let n_embed = r.u64()? as usize;
    let fixed_embed = r.f64s(n_embed)?;
    if r.pos != body.len() {
        return Err(ApexError::Checkpoint("trailing bytes after table".into()));
    }
    VelocityModel::from_parts(spec, params, fixed_embed)
        .map_err(|e| ApexError::Checkpoint(e.to_string()))
}

/// Loads a checkpoint from disk.
pub fn checkpoint_load(path: &Path) -> Result<VelocityModel> {
    let buf = std::fs::read(path)?;
    checkpoint_from_bytes(&buf)
}

/// Loads a checkpoint and rejects it unless the architecture matches.
pub fn checkpoint_load_expecting(path: &Path, want: &NetSpec) -> Result<VelocityModel> {
    let model = checkpoint_load(path)?;
    if model.spec() != want {
        return Err(ApexError::Checkpoint(format!(
            "architecture mismatch: checkpoint has {:?}, expected {:?}",
            model.spec(),
            want
        )));
    }
    Ok(model)
}
