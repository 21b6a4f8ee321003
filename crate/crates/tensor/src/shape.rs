//! Shape arithmetic: volumes, strides, trailing-dimension broadcasting.

use crate::error::{Result, TensorError};

/// Product of extents.
pub fn volume(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Broadcast two shapes under trailing-dimension rules: align from the right,
/// each pair of extents must be equal or one of them 1. The shorter shape is
/// treated as having 1s prepended.
pub fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let ea = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let eb = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if ea == eb {
            ea
        } else if ea == 1 {
            eb
        } else if eb == 1 {
            ea
        } else {
            return Err(TensorError::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() });
        };
    }
    Ok(out)
}

/// For each element of the broadcast output, the flat index into an operand of
/// shape `from` (right-aligned against `to`). Broadcast extents contribute
/// stride 0.
pub fn broadcast_strides(from: &[usize], to: &[usize]) -> Vec<usize> {
    let from_strides = strides(from);
    let offset = to.len() - from.len();
    let mut s = vec![0usize; to.len()];
    for i in 0..to.len() {
        if i >= offset {
            let e = from[i - offset];
            s[i] = if e == 1 { 0 } else { from_strides[i - offset] };
        }
    }
    s
}

/// Walk all multi-indices of `shape`, yielding the flat offsets of two
/// broadcast operands at each position. Used by broadcast binary kernels.
pub struct BroadcastIter {
    shape: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
    idx: Vec<usize>,
    off_a: usize,
    off_b: usize,
    remaining: usize,
}

impl BroadcastIter {
    pub fn new(out_shape: &[usize], a: &[usize], b: &[usize]) -> Self {
        BroadcastIter {
            shape: out_shape.to_vec(),
            sa: broadcast_strides(a, out_shape),
            sb: broadcast_strides(b, out_shape),
            idx: vec![0; out_shape.len()],
            off_a: 0,
            off_b: 0,
            remaining: volume(out_shape),
        }
    }
}

impl Iterator for BroadcastIter {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        if self.remaining == 0 {
            return None;
        }
        let item = (self.off_a, self.off_b);
        self.remaining -= 1;
        // advance multi-index, updating offsets incrementally
        for d in (0..self.shape.len()).rev() {
            self.idx[d] += 1;
            self.off_a += self.sa[d];
            self.off_b += self.sb[d];
            if self.idx[d] < self.shape[d] {
                break;
            }
            self.off_a -= self.sa[d] * self.shape[d];
            self.off_b -= self.sb[d] * self.shape[d];
            self.idx[d] = 0;
        }
        Some(item)
    }
}
