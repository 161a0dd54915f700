//! Classical data table backing the memory cells.
//!
//! Two on-disk formats, selected by file extension: `.bin` is raw
//! little-endian records (2^n records of ceil(k/8) bytes each) and `.csv`
//! holds `address,value` rows.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::topology::TreeShape;

/// The `2^n` classical words of `k` bits each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataTable {
    shape: TreeShape,
    entries: Vec<u64>,
}

impl DataTable {
    pub fn new(shape: TreeShape, entries: Vec<u64>) -> Result<Self> {
        if entries.len() as u64 != shape.cells() {
            return Err(CoreError::domain(format!(
                "table holds {} entries, shape needs {}",
                entries.len(),
                shape.cells()
            )));
        }
        let mask = Self::word_mask(shape.k);
        if let Some(bad) = entries.iter().find(|&&e| e & !mask != 0) {
            return Err(CoreError::domain(format!(
                "table entry {bad:#x} wider than k={} bits",
                shape.k
            )));
        }
        Ok(DataTable { shape, entries })
    }

    pub fn zeros(shape: TreeShape) -> Self {
        DataTable { shape, entries: vec![0; shape.cells() as usize] }
    }

    pub fn random(shape: TreeShape, rng: &mut impl Rng) -> Self {
        let mask = Self::word_mask(shape.k);
        let entries = (0..shape.cells()).map(|_| rng.gen::<u64>() & mask).collect();
        DataTable { shape, entries }
    }

    pub fn from_fn(shape: TreeShape, f: impl Fn(u64) -> u64) -> Result<Self> {
        let mask = Self::word_mask(shape.k);
        DataTable::new(shape, (0..shape.cells()).map(|a| f(a) & mask).collect())
    }

    fn word_mask(k: u8) -> u64 {
        (1u64 << k) - 1
    }

    pub fn shape(&self) -> TreeShape {
        self.shape
    }

    pub fn get(&self, address: u64) -> u64 {
        self.entries[address as usize]
    }

    pub fn entries(&self) -> &[u64] {
        &self.entries
    }

    /// Bytes of classical storage this table accounts for: 2^n * ceil(k/8).
    pub fn storage_bytes(&self) -> u64 {
        self.shape.cells() * Self::record_bytes(self.shape.k) as u64
    }

    fn record_bytes(k: u8) -> usize {
        (usize::from(k) + 7) / 8
    }

    /// Load from `.bin` or `.csv`, by extension.
    pub fn load(path: &Path, shape: TreeShape) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Self::load_bin(path, shape),
            Some("csv") => Self::load_csv(path, shape),
            other => Err(CoreError::config(format!(
                "unrecognized table extension {other:?} (want .bin or .csv)"
            ))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => self.save_bin(path),
            Some("csv") => self.save_csv(path),
            other => Err(CoreError::config(format!(
                "unrecognized table extension {other:?} (want .bin or .csv)"
            ))),
        }
    }

    fn load_bin(path: &Path, shape: TreeShape) -> Result<Self> {
        let record = Self::record_bytes(shape.k);
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let expected = record * shape.cells() as usize;
        if bytes.len() != expected {
            return Err(CoreError::config(format!(
                "{} is {} bytes, expected {expected} for n={} k={}",
                path.display(),
                bytes.len(),
                shape.n,
                shape.k
            )));
        }
        let entries = bytes
            .chunks_exact(record)
            .map(|chunk| {
                let mut word = [0u8; 8];
                word[..record].copy_from_slice(chunk);
                u64::from_le_bytes(word)
            })
            .collect();
        DataTable::new(shape, entries)
    }

    fn save_bin(&self, path: &Path) -> Result<()> {
        let record = Self::record_bytes(self.shape.k);
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for &entry in &self.entries {
            out.write_all(&entry.to_le_bytes()[..record])?;
        }
        out.flush()?;
        Ok(())
    }

    fn load_csv(path: &Path, shape: TreeShape) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = vec![None; shape.cells() as usize];
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (line_no == 0 && line.starts_with("address")) {
                continue;
            }
            let mut parts = line.split(',');
            let (addr, value) = match (parts.next(), parts.next()) {
                (Some(a), Some(v)) => (a.trim(), v.trim()),
                _ => {
                    return Err(CoreError::config(format!(
                        "{}:{}: expected `address,value`",
                        path.display(),
                        line_no + 1
                    )))
                }
            };
            let addr: u64 = addr.parse().map_err(|_| {
                CoreError::config(format!("{}:{}: bad address", path.display(), line_no + 1))
            })?;
            let value: u64 = value.parse().map_err(|_| {
                CoreError::config(format!("{}:{}: bad value", path.display(), line_no + 1))
            })?;
            if addr >= shape.cells() {
                return Err(CoreError::config(format!(
                    "{}:{}: address {addr} out of range",
                    path.display(),
                    line_no + 1
                )));
            }
            entries[addr as usize] = Some(value);
        }
        let entries: Vec<u64> = entries.into_iter().map(|e| e.unwrap_or(0)).collect();
        DataTable::new(shape, entries)
    }

    fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("address,value\n");
        for (addr, value) in self.entries.iter().enumerate() {
            out.push_str(&format!("{addr},{value}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}
