//! Binary model files: an 8-byte magic, then for every parameter and
//! buffer group a little-endian u64 count followed by that many f64
//! values, then a u64 footer length and a TOML footer with the config.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::model::Model;

pub const MAGIC: &[u8; 8] = b"BLEFPM1\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Footer {
    version: u32,
    input_channels: usize,
    input_length: usize,
    network: NetworkConfig,
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    for group in model.param_groups().into_iter().chain(model.buffer_groups()) {
        out.extend_from_slice(&(group.len() as u64).to_le_bytes());
        for v in group {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let footer = toml::to_string(&Footer {
        version: FORMAT_VERSION,
        input_channels: model.input_channels,
        input_length: model.input_length,
        network: model.config.clone(),
    })?;
    out.extend_from_slice(&(footer.len() as u64).to_le_bytes());
    out.extend_from_slice(footer.as_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Model> {
    if buf.len() < 16 || &buf[..8] != MAGIC {
        return Err(Error::Checkpoint("missing magic bytes".into()));
    }
    // The footer sits at the end; the group layout depends on it.
    let mut r = Reader { buf, pos: 8 };
    let mut payload = Vec::new();
    let footer = loop {
        let n = r.u64()? as usize;
        let rest = buf.len() - r.pos;
        if n == rest {
            let text = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::Checkpoint("footer is not UTF-8".into()))?;
            break toml::from_str::<Footer>(text)?;
        }
        let bytes = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("bad count".into()))?)?;
        payload.push(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect::<Vec<f64>>(),
        );
    };
    if footer.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", footer.version)));
    }
    let mut model = Model::new(&footer.network, footer.input_channels, footer.input_length)?;
    let expected = model.param_groups().len() + model.buffer_groups().len();
    if payload.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{} groups stored, config implies {expected}",
            payload.len()
        )));
    }
    let mut stored = payload.into_iter();
    for g in model.param_groups_mut() {
        assign(g, stored.next().unwrap())?;
    }
    for g in model.buffer_groups_mut() {
        assign(g, stored.next().unwrap())?;
    }
    Ok(model)
}

fn assign(dst: &mut Vec<f64>, src: Vec<f64>) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::Checkpoint(format!(
            "group of {} values where {} expected",
            src.len(),
            dst.len()
        )));
    }
    *dst = src;
    Ok(())
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}
