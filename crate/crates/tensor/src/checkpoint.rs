//! SKBA checkpoint container.
//!
//! Byte layout (all integers little-endian):
//!   magic "SKBA" | version u32 | entry count u32
//!   per entry: name length u32 | UTF-8 name | rank u32 | extents u64 x rank |
//!              values f32 x volume (little-endian)
//!
//! Entries are written sorted by name, so identical parameter sets serialize
//! to identical bytes. Values are stored as f32 regardless of the in-memory
//! element type.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::param::Param;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"SKBA";
pub const VERSION: u32 = 1;

/// One named array in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn write_entries(mut w: impl Write, entries: &[Entry]) -> Result<()> {
    let sorted: BTreeMap<&str, &Entry> = entries.iter().map(|e| (e.name.as_str(), e)).collect();
    if sorted.len() != entries.len() {
        return Err(TensorError::Checkpoint("duplicate entry names".into()));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(sorted.len() as u32).to_le_bytes())?;
    for e in sorted.values() {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
        for &d in &e.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let volume: usize = e.shape.iter().product();
        if volume != e.values.len() {
            return Err(TensorError::Checkpoint(format!(
                "entry {}: {} values for shape {:?}",
                e.name,
                e.values.len(),
                e.shape
            )));
        }
        for v in &e.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_entries(mut r: impl Read) -> Result<Vec<Entry>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| TensorError::Checkpoint(format!("bad name: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let volume: usize = shape.iter().product();
        let mut values = Vec::with_capacity(volume);
        for _ in 0..volume {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            values.push(f32::from_le_bytes(b));
        }
        entries.push(Entry { name, shape, values });
    }
    Ok(entries)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Save a parameter set to an SKBA file.
pub fn save_params<E: Scalar>(path: impl AsRef<Path>, params: &[Param<E>]) -> Result<()> {
    let entries: Vec<Entry> = params
        .iter()
        .map(|p| Entry {
            name: p.name(),
            shape: p.shape(),
            values: p.value().data().iter().map(|v| v.to_f64() as f32).collect(),
        })
        .collect();
    let file = std::fs::File::create(path)?;
    write_entries(std::io::BufWriter::new(file), &entries)
}

/// Load values into an existing parameter set by name. Every parameter must
/// be present in the file with a matching shape.
pub fn load_params<E: Scalar>(path: impl AsRef<Path>, params: &[Param<E>]) -> Result<()> {
    let file = std::fs::File::open(path)?;
    let entries = read_entries(std::io::BufReader::new(file))?;
    let by_name: BTreeMap<String, Entry> = entries.into_iter().map(|e| (e.name.clone(), e)).collect();
    for p in params {
        let e = by_name.get(&p.name()).ok_or_else(|| {
            TensorError::Checkpoint(format!("missing parameter {}", p.name()))
        })?;
        if e.shape != p.shape() {
            return Err(TensorError::Checkpoint(format!(
                "parameter {}: shape {:?} in file, {:?} expected",
                p.name(),
                e.shape,
                p.shape()
            )));
        }
        p.set_data(e.values.iter().map(|&v| E::from_f64(v as f64)).collect());
    }
    Ok(())
}
