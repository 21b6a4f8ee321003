//! Voxel label grids and the VOXL file format.
//!
//! Byte layout (integers little-endian):
//!   magic "VOXL" | version u32 | class count u32 | L u32 | W u32 | H u32 |
//!   voxel size f32 | L*W*H label bytes, row-major over (l, w, h)

use std::io::{Read, Write};
use std::path::Path;

use skimba_tensor::{Scalar, Tensor};

use crate::error::{ModelError, Result};

pub const VOXL_MAGIC: &[u8; 4] = b"VOXL";
pub const VOXL_VERSION: u32 = 1;

/// Dense grid of per-voxel class labels; 0 means empty.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub voxel_size: f32,
    pub class_count: usize,
    labels: Vec<u8>,
}

impl VoxelGrid {
    pub fn new_empty(dims: [usize; 3], voxel_size: f32, class_count: usize) -> Self {
        VoxelGrid { dims, voxel_size, class_count, labels: vec![0; dims[0] * dims[1] * dims[2]] }
    }

    pub fn from_labels(
        dims: [usize; 3],
        voxel_size: f32,
        class_count: usize,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let volume = dims[0] * dims[1] * dims[2];
        if labels.len() != volume {
            return Err(ModelError::Geometry(format!(
                "{} labels for dims {dims:?} (volume {volume})",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= class_count) {
            return Err(ModelError::LabelOutOfRange { label: bad as usize, classes: class_count });
        }
        Ok(VoxelGrid { dims, voxel_size, class_count, labels })
    }

    #[inline]
    pub fn index(&self, l: usize, w: usize, h: usize) -> usize {
        (l * self.dims[1] + w) * self.dims[2] + h
    }

    pub fn get(&self, l: usize, w: usize, h: usize) -> u8 {
        self.labels[self.index(l, w, h)]
    }

    pub fn set(&mut self, l: usize, w: usize, h: usize, label: u8) {
        debug_assert!((label as usize) < self.class_count);
        let i = self.index(l, w, h);
        self.labels[i] = label;
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn volume(&self) -> usize {
        self.labels.len()
    }

    pub fn occupied_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// One-hot embedding to a (C, L, W, H) tensor.
    pub fn one_hot<E: Scalar>(&self) -> Tensor<E> {
        let [l, w, h] = self.dims;
        let spatial = l * w * h;
        let mut data = vec![E::ZERO; self.class_count * spatial];
        for (i, &label) in self.labels.iter().enumerate() {
            data[label as usize * spatial + i] = E::ONE;
        }
        Tensor::from_vec(&[self.class_count, l, w, h], data).unwrap()
    }

    /// Binary occupancy embedding to a (2, L, W, H) tensor: channel 0 empty,
    /// channel 1 occupied.
    pub fn occupancy_one_hot<E: Scalar>(&self) -> Tensor<E> {
        let [l, w, h] = self.dims;
        let spatial = l * w * h;
        let mut data = vec![E::ZERO; 2 * spatial];
        for (i, &label) in self.labels.iter().enumerate() {
            let ch = usize::from(label != 0);
            data[ch * spatial + i] = E::ONE;
        }
        Tensor::from_vec(&[2, l, w, h], data).unwrap()
    }

    /// Argmax over the class axis of a (C, L, W, H) logit volume.
    pub fn from_logits<E: Scalar>(logits: &Tensor<E>, voxel_size: f32) -> Result<Self> {
        if logits.rank() != 4 {
            return Err(ModelError::Geometry(format!(
                "expected rank-4 logits, got {:?}",
                logits.shape()
            )));
        }
        let c = logits.shape()[0];
        let dims = [logits.shape()[1], logits.shape()[2], logits.shape()[3]];
        let spatial: usize = dims.iter().product();
        let data = logits.data();
        let mut labels = vec![0u8; spatial];
        for (i, label) in labels.iter_mut().enumerate() {
            let mut best = 0usize;
            let mut best_v = data[i];
            for ch in 1..c {
                let v = data[ch * spatial + i];
                if v > best_v {
                    best_v = v;
                    best = ch;
                }
            }
            *label = best as u8;
        }
        Ok(VoxelGrid { dims, voxel_size, class_count: c, labels })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(VOXL_MAGIC)?;
        w.write_all(&VOXL_VERSION.to_le_bytes())?;
        w.write_all(&(self.class_count as u32).to_le_bytes())?;
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&self.voxel_size.to_le_bytes())?;
        w.write_all(&self.labels)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != VOXL_MAGIC {
            return Err(ModelError::Io(format!("bad VOXL magic {magic:?}")));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VOXL_VERSION {
            return Err(ModelError::Io(format!("unsupported VOXL version {version}")));
        }
        r.read_exact(&mut b4)?;
        let class_count = u32::from_le_bytes(b4) as usize;
        let mut dims = [0usize; 3];
        for d in &mut dims {
            r.read_exact(&mut b4)?;
            *d = u32::from_le_bytes(b4) as usize;
        }
        r.read_exact(&mut b4)?;
        let voxel_size = f32::from_le_bytes(b4);
        let mut labels = vec![0u8; dims[0] * dims[1] * dims[2]];
        r.read_exact(&mut labels)?;
        Self::from_labels(dims, voxel_size, class_count, labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
