//! Binary grid-field snapshots.
//!
//! Layout, all integers and floats little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `CPLXGRID` |
//! | 4 | format version (`u32`, currently 1) |
//! | 1 | role: 0 coefficient, 1 source, 2 state, 3 scalar, 4 weight |
//! | 1 | location: 0 cell, 1 node |
//! | 1 | space dimension `n` |
//! | 1 | reserved, zero |
//! | 8·n | cells per axis (`u64`) |
//! | 8 | spacing `h` (`f64`) |
//! | 4 | complex components per site (`u32`) |
//! | 4 + k | kind string, `u32` length then UTF-8 |
//! | 4 + m | parameters, `u32` length then UTF-8 JSON |
//! | 16 per value | payload, `Re` then `Im` as `f64` |
//!
//! Sites are cells or nodes in grid order; components vary fastest.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use thiserror::Error;

use super::GridDomain;

pub const MAGIC: &[u8; 8] = b"CPLXGRID";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed snapshot: {0}")]
    Format(String),
    #[error("snapshot parameters: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SnapshotError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Coefficient,
    Source,
    State,
    Scalar,
    Weight,
}

impl Role {
    fn code(self) -> u8 {
        match self {
            Role::Coefficient => 0,
            Role::Source => 1,
            Role::State => 2,
            Role::Scalar => 3,
            Role::Weight => 4,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => Role::Coefficient,
            1 => Role::Source,
            2 => Role::State,
            3 => Role::Scalar,
            4 => Role::Weight,
            _ => return Err(SnapshotError::Format(format!("unknown role code {c}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Location {
    Cell,
    Node,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub role: Role,
    pub location: Location,
    pub shape: Vec<usize>,
    pub h: f64,
    pub components: usize,
    pub kind: String,
    pub params: serde_json::Value,
    pub values: Vec<Complex64>,
}

impl Snapshot {
    /// Snapshot of a field living on `grid`; checks the payload size.
    pub fn for_grid(
        grid: &GridDomain,
        role: Role,
        location: Location,
        components: usize,
        kind: &str,
        params: serde_json::Value,
        values: Vec<Complex64>,
    ) -> Result<Self> {
        let s = Snapshot {
            role,
            location,
            shape: grid.shape().to_vec(),
            h: grid.h(),
            components,
            kind: kind.into(),
            params,
            values,
        };
        s.check()?;
        Ok(s)
    }

    pub fn sites(&self) -> usize {
        match self.location {
            Location::Cell => self.shape.iter().product(),
            Location::Node => self.shape.iter().map(|s| s + 1).product(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.shape.len() != 2 && self.shape.len() != 3 {
            return Err(SnapshotError::Format(format!(
                "dimension {} not in {{2, 3}}",
                self.shape.len()
            )));
        }
        if self.components == 0 {
            return Err(SnapshotError::Format("zero components per site".into()));
        }
        let want = self.sites() * self.components;
        if self.values.len() != want {
            return Err(SnapshotError::Format(format!(
                "payload has {} values, header implies {want}",
                self.values.len()
            )));
        }
        Ok(())
    }

    pub fn matches(&self, grid: &GridDomain) -> bool {
        self.shape == grid.shape() && self.h == grid.h()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check()?;
        let mut out = Vec::with_capacity(64 + 16 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.role.code());
        out.push(match self.location {
            Location::Cell => 0,
            Location::Node => 1,
        });
        out.push(self.shape.len() as u8);
        out.push(0);
        for &s in &self.shape {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.h.to_le_bytes());
        out.extend_from_slice(&(self.components as u32).to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &serde_json::to_string(&self.params)?);
        for v in &self.values {
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(SnapshotError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(SnapshotError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let role = Role::from_code(r.u8()?)?;
        let location = match r.u8()? {
            0 => Location::Cell,
            1 => Location::Node,
            c => return Err(SnapshotError::Format(format!("unknown location code {c}"))),
        };
        let n = r.u8()? as usize;
        r.u8()?;
        let shape = (0..n)
            .map(|_| r.u64().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let h = r.f64()?;
        let components = r.u32()? as usize;
        let kind = r.string()?;
        let params = serde_json::from_str(&r.string()?)?;
        let mut s = Snapshot {
            role,
            location,
            shape,
            h,
            components,
            kind,
            params,
            values: Vec::new(),
        };
        if n != 2 && n != 3 {
            return Err(SnapshotError::Format(format!(
                "dimension {n} not in {{2, 3}}"
            )));
        }
        let count = s.sites() * components;
        if r.bytes.len() - r.pos != 16 * count {
            return Err(SnapshotError::Format(format!(
                "payload is {} bytes, expected {}",
                r.bytes.len() - r.pos,
                16 * count
            )));
        }
        s.values = (0..count)
            .map(|_| Ok(Complex64::new(r.f64()?, r.f64()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < k {
            return Err(SnapshotError::Format("truncated header".into()));
        }
        let s = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| SnapshotError::Format(e.to_string()))
    }
}
