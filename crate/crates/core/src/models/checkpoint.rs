//! Checkpoint container: an 8-byte magic, a `u32` format version, the run
//! configuration digest, then named tensor records in raw dump format.
//! All integers are little-endian; strings are `u32` length + UTF-8.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{read_raw, write_raw, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FMIMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Longest record name or digest accepted when reading.
const MAX_STRING: u32 = 4096;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub digest: String,
    pub records: Vec<(String, Tensor<f32>)>,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        reason: reason.into(),
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)?;
    if n > MAX_STRING {
        return Err(bad(format!("string of {n} bytes")));
    }
    let mut b = vec![0u8; n as usize];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| bad(e.to_string()))
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_str(&mut w, &self.digest)?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for (name, t) in &self.records {
            write_str(&mut w, name)?;
            write_raw(t, &mut w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let digest = read_str(&mut r)?;
        let mut n = [0u8; 8];
        r.read_exact(&mut n)?;
        let n = u64::from_le_bytes(n);
        let mut records = Vec::new();
        for _ in 0..n {
            let name = read_str(&mut r)?;
            if records.iter().any(|(m, _)| *m == name) {
                return Err(bad(format!("duplicate record {name}")));
            }
            records.push((name, read_raw(&mut r)?));
        }
        Ok(Checkpoint { digest, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
