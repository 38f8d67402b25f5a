//! HOG field file: magic `FMIMHOGF`, `u32` version, the extraction config
//! (`u32` bins, `u32` cell, `u8` unsigned, `u8` per-channel, `f64` eps), then
//! the field as a raw tensor dump. Little-endian throughout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{HogConfig, HogField};
use crate::error::{Error, Result};
use crate::tensor::{read_raw, write_raw};

pub const HOG_MAGIC: &[u8; 8] = b"FMIMHOGF";
pub const HOG_VERSION: u32 = 1;

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "hog field",
        reason: reason.into(),
    }
}

impl HogField {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        w.write_all(HOG_MAGIC)?;
        w.write_all(&HOG_VERSION.to_le_bytes())?;
        w.write_all(&(c.bins as u32).to_le_bytes())?;
        w.write_all(&(c.cell as u32).to_le_bytes())?;
        w.write_all(&[c.unsigned_orientation as u8, c.per_channel as u8])?;
        w.write_all(&c.norm_eps.to_le_bytes())?;
        write_raw(&self.data, &mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != HOG_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut word = [0u8; 4];
        let mut next_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word))
        };
        let version = next_u32(&mut r)?;
        if version != HOG_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let bins = next_u32(&mut r)? as usize;
        let cell = next_u32(&mut r)? as usize;
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let mut eps = [0u8; 8];
        r.read_exact(&mut eps)?;
        let config = HogConfig {
            bins,
            cell,
            unsigned_orientation: flags[0] != 0,
            per_channel: flags[1] != 0,
            norm_eps: f64::from_le_bytes(eps),
        };
        config.validate().map_err(|e| bad(e.to_string()))?;
        let data = read_raw(&mut r)?;
        let s = data.shape();
        if s.len() != 4 || s[3] != config.cell_dim() {
            return Err(bad(format!("field shape {s:?} does not match {} features per cell", config.cell_dim())));
        }
        Ok(HogField { data, config })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
