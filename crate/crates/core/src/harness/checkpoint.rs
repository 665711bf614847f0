//! Versioned binary checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "LATPLNCK" | version u32 | header length u64 | header JSON
//! | parameter count u64 | parameters f64…
//! | moment count u64 | first moments f64… | second moments f64…
//! | SHA-256 of everything above
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, PolicySnapshot};
use crate::nnet::{OptimizerKind, OptimizerState};
use crate::rng::StreamState;

pub const MAGIC: &[u8; 8] = b"LATPLNCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy: PolicySnapshot,
    pub optimizer: Option<OptimizerState>,
    pub rng: Option<StreamState>,
    pub step: u64,
}

impl Checkpoint {
    pub fn new(policy: PolicySnapshot) -> Self {
        Checkpoint { policy, optimizer: None, rng: None, step: 0 }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: String,
    config: ModelConfig,
    optimizer: Option<OptimizerHeader>,
    rng: Option<StreamState>,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn to_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let header = Header {
        architecture: ck.policy.descriptor(),
        config: ck.policy.cfg.clone(),
        optimizer: ck.optimizer.as_ref().map(|o| OptimizerHeader { kind: o.kind, lr: o.lr, step: o.step }),
        rng: ck.rng,
        step: ck.step,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(64 + json.len() + 24 * ck.policy.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(ck.policy.params.len() as u64).to_le_bytes());
    put_f64s(&mut out, &ck.policy.params);
    let (m, v) = ck.optimizer.as_ref().map_or((&[][..], &[][..]), |o| (&o.m[..], &o.v[..]));
    out.extend_from_slice(&(m.len() as u64).to_le_bytes());
    put_f64s(&mut out, m);
    put_f64s(&mut out, v);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(e) => {
                let s = &self.buf[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::Corrupt(format!("truncated while reading {what}"))),
        }
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes =
            self.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt(format!("{what} count overflows")))?, what)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
    if buf.len() < MAGIC.len() + 4 || &buf[..8] != MAGIC {
        return Err(Error::Corrupt("missing checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: FORMAT_VERSION });
    }
    if buf.len() < 12 + 32 {
        return Err(Error::Corrupt("truncated checkpoint".into()));
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Corrupt("checksum mismatch (truncated or modified file)".into()));
    }
    let mut r = Reader { buf: body, pos: 12 };
    let hlen = r.u64("header length")? as usize;
    let header: Header =
        serde_json::from_slice(r.take(hlen, "header")?).map_err(|e| Error::Corrupt(format!("header: {e}")))?;
    let n = r.u64("parameter count")? as usize;
    let params = r.f64s(n, "parameters")?;
    let nm = r.u64("moment count")? as usize;
    let m = r.f64s(nm, "first moments")?;
    let v = r.f64s(nm, "second moments")?;
    if r.pos != body.len() {
        return Err(Error::Corrupt("trailing bytes after payload".into()));
    }
    let policy = PolicySnapshot::from_params(header.config, params)?;
    if policy.descriptor() != header.architecture {
        return Err(Error::Architecture(format!(
            "stored descriptor `{}` does not match its configuration `{}`",
            header.architecture,
            policy.descriptor()
        )));
    }
    let optimizer = header.optimizer.map(|o| OptimizerState { kind: o.kind, lr: o.lr, m, v, step: o.step });
    Ok(Checkpoint { policy, optimizer, rng: header.rng, step: header.step })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, to_bytes(ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    from_bytes(&std::fs::read(path)?)
}

/// Loads a checkpoint and insists on the given architecture.
pub fn load_checkpoint_for(path: &Path, cfg: &ModelConfig) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if &ck.policy.cfg != cfg {
        let want = PolicySnapshot::new(cfg.clone(), 0)?.descriptor();
        return Err(Error::Architecture(format!("checkpoint holds `{}`, expected `{want}`", ck.policy.descriptor())));
    }
    Ok(ck)
}
