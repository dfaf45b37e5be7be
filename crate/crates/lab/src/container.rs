//! Versioned binary container for checkpoints, trajectories, prompt tracks,
//! and latents: a magic string, a kind tag, a format version, then a table of
//! named f64 arrays.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! offset 0   8 bytes  magic "DIFFLAB\0"
//! offset 8   4 bytes  kind tag, ASCII: "CKPT" | "TRAJ" | "PTRK" | "LATF"
//! offset 12  u32      format version (currently 1)
//! offset 16  u32      entry count
//! then per entry:
//!     u16             name length in bytes
//!     ...             name, UTF-8
//!     u8              rank (number of dimensions)
//!     rank x u64      extents
//!     prod x f64      data, little-endian, row-major
//! ```
//!
//! Scalars are stored as rank-1 arrays of length 1. Integer metadata is
//! stored as exact f64 (all values here are far below 2^53).

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use difflab_core::Array;

use crate::error::LabError;

pub const MAGIC: &[u8; 8] = b"DIFFLAB\0";
pub const VERSION: u32 = 1;

pub const KIND_CHECKPOINT: [u8; 4] = *b"CKPT";
pub const KIND_TRAJECTORY: [u8; 4] = *b"TRAJ";
pub const KIND_PROMPT_TRACK: [u8; 4] = *b"PTRK";
pub const KIND_LATENT: [u8; 4] = *b"LATF";

/// An ordered table of named arrays under a kind tag.
#[derive(Debug, Clone)]
pub struct Container {
    pub kind: [u8; 4],
    entries: Vec<(String, Array)>,
}

impl Container {
    pub fn new(kind: [u8; 4]) -> Self {
        Container {
            kind,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, array: Array) {
        self.entries.push((name.into(), array));
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.push(name, Array::scalar(value));
    }

    pub fn entries(&self) -> &[(String, Array)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Result<&Array, LabError> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| LabError::Format(format!("container missing entry '{name}'")))
    }

    pub fn get_scalar(&self, name: &str) -> Result<f64, LabError> {
        let a = self.get(name)?;
        a.item()
            .map_err(|_| LabError::Format(format!("entry '{name}' is not a scalar")))
    }

    pub fn get_usize(&self, name: &str) -> Result<usize, LabError> {
        let v = self.get_scalar(name)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(LabError::Format(format!(
                "entry '{name}' is not a non-negative integer: {v}"
            )));
        }
        Ok(v as usize)
    }

    /// Entries whose names start with `prefix`, in stored order.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Array)> {
        self.entries
            .iter()
            .filter(move |(n, _)| n.starts_with(prefix))
            .map(|(n, a)| (n.as_str(), a))
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.kind)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, array) in &self.entries {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u16).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&[array.shape().len() as u8])?;
            for &d in array.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in array.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), LabError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read, expect_kind: [u8; 4]) -> Result<Self, LabError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(LabError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(MAGIC)
            )));
        }
        let mut kind = [0u8; 4];
        r.read_exact(&mut kind)?;
        if kind != expect_kind {
            return Err(LabError::Format(format!(
                "container kind '{}' does not match expected '{}'",
                String::from_utf8_lossy(&kind),
                String::from_utf8_lossy(&expect_kind)
            )));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != VERSION {
            return Err(LabError::Format(format!(
                "unsupported container version {version}, expected {VERSION}"
            )));
        }
        r.read_exact(&mut u32buf)?;
        let count = u32::from_le_bytes(u32buf) as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let mut u16buf = [0u8; 2];
            r.read_exact(&mut u16buf)?;
            let name_len = u16::from_le_bytes(u16buf) as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| LabError::Format("entry name is not UTF-8".into()))?;
            let mut rank_buf = [0u8; 1];
            r.read_exact(&mut rank_buf)?;
            let rank = rank_buf[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            let mut u64buf = [0u8; 8];
            for _ in 0..rank {
                r.read_exact(&mut u64buf)?;
                shape.push(u64::from_le_bytes(u64buf) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut u64buf)?;
                data.push(f64::from_le_bytes(u64buf));
            }
            let array = Array::from_vec(shape, data)
                .map_err(|e| LabError::Format(format!("entry '{name}': {e}")))?;
            entries.push((name, array));
        }
        Ok(Container {
            kind: expect_kind,
            entries,
        })
    }

    pub fn load(path: &Path, expect_kind: [u8; 4]) -> Result<Self, LabError> {
        let bytes = fs::read(path)
            .map_err(|e| LabError::MissingInput(format!("{}: {e}", path.display())))?;
        Self::read_from(bytes.as_slice(), expect_kind)
    }
}
