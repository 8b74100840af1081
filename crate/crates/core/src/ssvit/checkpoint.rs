//! Binary parameter container:
//!
//! ```text
//! magic "UNMODSSV" | u32 version | u32 n + n bytes TOML config
//! | u32 count | count × (u32 n + name | u32 rank | rank × u32 dim | f64 values)
//! ```
//!
//! All integers and floats little-endian.

use std::path::Path;

use super::{ModelConfig, ParamStore, SsvitModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"UNMODSSV";
const VERSION: u32 = 1;

pub fn write_checkpoint(model: &SsvitModel) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = model.config().to_toml();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    let p = model.params();
    out.extend_from_slice(&(p.len() as u32).to_le_bytes());
    for i in 0..p.len() {
        let name = &p.names()[i];
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(p.shape(i).len() as u32).to_le_bytes());
        for &d in p.shape(i) {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.values(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                self.pos,
                format!("truncated checkpoint while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn text(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)? as usize;
        let at = self.pos;
        std::str::from_utf8(self.take(n, what)?).map_err(|_| Error::parse(at, format!("{what} is not UTF-8")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<SsvitModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::parse(0, "not a model checkpoint"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::parse(8, format!("unsupported checkpoint version {version}")));
    }
    let cfg_at = r.pos + 4;
    let cfg = ModelConfig::from_toml(r.text("config")?).map_err(|e| match e {
        Error::Parse { offset, message } => Error::parse(cfg_at + offset, message),
        other => other,
    })?;
    let count = r.u32("parameter count")? as usize;
    let mut names = Vec::with_capacity(count);
    let mut shapes = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        names.push(r.text("parameter name")?.to_string());
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let at = r.pos;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::parse(at, "parameter too large"))?, "values")?;
        let v: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::data(format!("non-finite value in {}", names.last().unwrap())));
        }
        shapes.push(shape);
        values.push(v);
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(r.pos, "trailing bytes after checkpoint"));
    }
    SsvitModel::from_params(cfg, ParamStore::from_parts(names, shapes, values))
}

pub fn save_checkpoint(path: &Path, model: &SsvitModel) -> Result<()> {
    std::fs::write(path, write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<SsvitModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
