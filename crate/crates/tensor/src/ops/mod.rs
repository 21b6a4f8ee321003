//! Forward operators and their backward rules.

mod conv;
mod norm;

pub use conv::{conv3d_out_extent, conv_transpose3d_out_extent};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::shape::{broadcast_shapes, strides, volume, BroadcastIter};
use crate::tensor::{ParentGrads, Tensor};

/// Reduce a gradient of `bshape` down to `shape` by summing over broadcast
/// dimensions (the reverse of trailing-dimension broadcasting).
fn reduce_broadcast<E: Scalar>(grad: &[E], bshape: &[usize], shape: &[usize]) -> Vec<E> {
    if bshape == shape {
        return grad.to_vec();
    }
    let mut out = vec![E::ZERO; volume(shape)];
    for ((_, off), &g) in BroadcastIter::new(bshape, shape, shape).zip(grad.iter()) {
        out[off] += g;
    }
    out
}

macro_rules! binary_op {
    ($name:ident, $opname:literal, $fwd:expr, $bwd_a:expr, $bwd_b:expr) => {
        pub fn $name(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
            let out_shape = broadcast_shapes($opname, self.shape(), other.shape())?;
            let a = self.data();
            let b = other.data();
            let n = volume(&out_shape);
            let mut data = Vec::with_capacity(n);
            if self.shape() == other.shape() {
                for i in 0..n {
                    data.push($fwd(a[i], b[i]));
                }
            } else {
                for (ia, ib) in BroadcastIter::new(&out_shape, self.shape(), other.shape()) {
                    data.push($fwd(a[ia], b[ib]));
                }
            }
            let (ta, tb) = (self.clone(), other.clone());
            let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
            let bshape = out_shape.clone();
            Ok(Tensor::from_op(
                out_shape,
                data,
                vec![self.clone(), other.clone()],
                Box::new(move |gy: &[E]| -> ParentGrads<E> {
                    let a = ta.data();
                    let b = tb.data();
                    let mut ga = vec![E::ZERO; volume(&bshape)];
                    let mut gb = vec![E::ZERO; volume(&bshape)];
                    if sa == sb {
                        for i in 0..gy.len() {
                            ga[i] = $bwd_a(gy[i], a[i], b[i]);
                            gb[i] = $bwd_b(gy[i], a[i], b[i]);
                        }
                    } else {
                        for (i, (ia, ib)) in BroadcastIter::new(&bshape, &sa, &sb).enumerate() {
                            ga[i] = $bwd_a(gy[i], a[ia], b[ib]);
                            gb[i] = $bwd_b(gy[i], a[ia], b[ib]);
                        }
                    }
                    vec![
                        Some(reduce_broadcast(&ga, &bshape, &sa)),
                        Some(reduce_broadcast(&gb, &bshape, &sb)),
                    ]
                }),
            ))
        }
    };
}

macro_rules! unary_op {
    ($name:ident, $fwd:expr, $bwd:expr) => {
        pub fn $name(&self) -> Result<Tensor<E>> {
            let data: Vec<E> = self.data().iter().map(|&x| $fwd(x)).collect();
            let tx = self.clone();
            Ok(Tensor::from_op(
                self.shape().to_vec(),
                data,
                vec![self.clone()],
                Box::new(move |gy: &[E]| {
                    let x = tx.data();
                    let g = gy.iter().zip(x).map(|(&g, &x)| $bwd(g, x)).collect();
                    vec![Some(g)]
                }),
            ))
        }
    };
}

impl<E: Scalar> Tensor<E> {
    binary_op!(add, "add", |a, b| a + b, |g, _a, _b| g, |g, _a, _b| g);
    binary_op!(sub, "sub", |a, b| a - b, |g, _a, _b| g, |g: E, _a, _b| -g);
    binary_op!(mul, "mul", |a, b| a * b, |g: E, _a, b: E| g * b, |g: E, a: E, _b| g * a);
    binary_op!(
        div,
        "div",
        |a, b| a / b,
        |g: E, _a, b: E| g / b,
        |g: E, a: E, b: E| -g * a / (b * b)
    );

    unary_op!(neg, |x: E| -x, |g: E, _x| -g);
    unary_op!(exp, |x: E| x.exp(), |g: E, x: E| g * x.exp());
    unary_op!(ln, |x: E| x.ln(), |g: E, x: E| g / x);
    unary_op!(sqrt, |x: E| x.sqrt(), |g: E, x: E| g / (E::from_f64(2.0) * x.sqrt()));
    unary_op!(silu, |x: E| x * x.sigmoid(), |g: E, x: E| {
        let s = x.sigmoid();
        g * (s + x * s * (E::ONE - s))
    });
    unary_op!(softplus, |x: E| x.softplus(), |g: E, x: E| g * x.sigmoid());

    /// y = scale * x + shift.
    pub fn affine(&self, scale: E, shift: E) -> Result<Tensor<E>> {
        let data: Vec<E> = self.data().iter().map(|&x| scale * x + shift).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |gy: &[E]| vec![Some(gy.iter().map(|&g| g * scale).collect())]),
        ))
    }

    pub fn add_scalar(&self, v: E) -> Result<Tensor<E>> {
        self.affine(E::ONE, v)
    }

    pub fn mul_scalar(&self, v: E) -> Result<Tensor<E>> {
        self.affine(v, E::ZERO)
    }

    pub fn leaky_relu(&self, slope: E) -> Result<Tensor<E>> {
        let data: Vec<E> =
            self.data().iter().map(|&x| if x > E::ZERO { x } else { slope * x }).collect();
        let tx = self.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |gy: &[E]| {
                let x = tx.data();
                let g = gy
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > E::ZERO { g } else { slope * g })
                    .collect();
                vec![Some(g)]
            }),
        ))
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        if self.rank() != 2 || other.rank() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = other.shape()[1];
        let data = matmul_raw(self.data(), other.data(), m, k, n);
        let (ta, tb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |gy: &[E]| {
                // gA = gY . B^T ; gB = A^T . gY
                let a = ta.data();
                let b = tb.data();
                let mut ga = vec![E::ZERO; m * k];
                for i in 0..m {
                    let ga_row = &mut ga[i * k..(i + 1) * k];
                    for j in 0..n {
                        let g = gy[i * n + j];
                        for p in 0..k {
                            ga_row[p] += g * b[p * n + j];
                        }
                    }
                }
                let mut gb = vec![E::ZERO; k * n];
                for p in 0..k {
                    for i in 0..m {
                        let av = a[i * k + p];
                        let gy_row = &gy[i * n..i * n + n];
                        let gb_row = &mut gb[p * n..p * n + n];
                        for j in 0..n {
                            gb_row[j] += av * gy_row[j];
                        }
                    }
                }
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Same data, new shape of equal volume.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<E>> {
        if volume(shape) != self.len() {
            return Err(TensorError::InvalidShape {
                op: "reshape",
                shape: shape.to_vec(),
                reason: format!("volume {} != tensor volume {}", volume(shape), self.len()),
            });
        }
        let old = self.shape().to_vec();
        let _ = &old;
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(move |gy: &[E]| vec![Some(gy.to_vec())]),
        ))
    }

    /// Reorder axes; `axes` is a permutation of 0..rank.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<E>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::InvalidShape {
                op: "permute",
                shape: self.shape().to_vec(),
                reason: format!("{axes:?} is not a permutation of axes"),
            });
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let data = permute_raw(self.data(), self.shape(), axes);
        // backward applies the inverse permutation
        let mut inv = vec![0usize; rank];
        for (i, &a) in axes.iter().enumerate() {
            inv[a] = i;
        }
        let oshape = out_shape.clone();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |gy: &[E]| vec![Some(permute_raw(gy, &oshape, &inv))]),
        ))
    }

    /// Reverse the order of indices along one axis.
    pub fn flip(&self, axis: usize) -> Result<Tensor<E>> {
        if axis >= self.rank() {
            return Err(TensorError::AxisOutOfRange { op: "flip", axis, rank: self.rank() });
        }
        let shape = self.shape().to_vec();
        let data = flip_raw(self.data(), &shape, axis);
        let sh = shape.clone();
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |gy: &[E]| vec![Some(flip_raw(gy, &sh, axis))]),
        ))
    }

    /// Select `indices` along `axis`, in order (gather). Backward scatter-adds.
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor<E>> {
        if axis >= self.rank() {
            return Err(TensorError::AxisOutOfRange { op: "index_select", axis, rank: self.rank() });
        }
        let extent = self.shape()[axis];
        if let Some(&bad) = indices.iter().find(|&&i| i >= extent) {
            return Err(TensorError::IndexOutOfRange { op: "index_select", index: bad, extent });
        }
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = indices.len();
        let st = strides(self.shape());
        let outer: usize = self.shape()[..axis].iter().product();
        let inner = st[axis];
        let x = self.data();
        let mut data = Vec::with_capacity(volume(&out_shape));
        for o in 0..outer {
            let base = o * extent * inner;
            for &idx in indices {
                data.extend_from_slice(&x[base + idx * inner..base + (idx + 1) * inner]);
            }
        }
        let idx_own = indices.to_vec();
        let in_len = self.len();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |gy: &[E]| {
                let mut gx = vec![E::ZERO; in_len];
                let mut pos = 0;
                for o in 0..outer {
                    let base = o * extent * inner;
                    for &idx in &idx_own {
                        let dst = &mut gx[base + idx * inner..base + (idx + 1) * inner];
                        for d in dst {
                            *d += gy[pos];
                            pos += 1;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
        if axis >= self.rank() {
            return Err(TensorError::AxisOutOfRange { op: "narrow", axis, rank: self.rank() });
        }
        if start + len > self.shape()[axis] {
            return Err(TensorError::IndexOutOfRange {
                op: "narrow",
                index: start + len,
                extent: self.shape()[axis],
            });
        }
        let indices: Vec<usize> = (start..start + len).collect();
        self.index_select(axis, &indices)
    }

    /// Concatenate tensors along `axis`; all other extents must match.
    pub fn concat(tensors: &[&Tensor<E>], axis: usize) -> Result<Tensor<E>> {
        assert!(!tensors.is_empty(), "concat of zero tensors");
        let first = tensors[0];
        if axis >= first.rank() {
            return Err(TensorError::AxisOutOfRange { op: "concat", axis, rank: first.rank() });
        }
        let mut out_shape = first.shape().to_vec();
        for t in &tensors[1..] {
            if t.rank() != first.rank()
                || (0..first.rank()).any(|d| d != axis && t.shape()[d] != first.shape()[d])
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            out_shape[axis] += t.shape()[axis];
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(volume(&out_shape));
        for o in 0..outer {
            for t in tensors {
                let e = t.shape()[axis];
                data.extend_from_slice(&t.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let extents: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let parents: Vec<Tensor<E>> = tensors.iter().map(|t| (*t).clone()).collect();
        Ok(Tensor::from_op(
            out_shape,
            data,
            parents,
            Box::new(move |gy: &[E]| {
                let total: usize = extents.iter().sum();
                let mut grads: Vec<Vec<E>> =
                    extents.iter().map(|&e| Vec::with_capacity(outer * e * inner)).collect();
                for o in 0..outer {
                    let mut off = o * total * inner;
                    for (gi, &e) in extents.iter().enumerate() {
                        grads[gi].extend_from_slice(&gy[off..off + e * inner]);
                        off += e * inner;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Sum of all elements as a scalar tensor.
    pub fn sum_all(&self) -> Result<Tensor<E>> {
        let s: E = self.data().iter().copied().sum();
        let n = self.len();
        Ok(Tensor::from_op(
            vec![],
            vec![s],
            vec![self.clone()],
            Box::new(move |gy: &[E]| vec![Some(vec![gy[0]; n])]),
        ))
    }

    /// Mean of all elements as a scalar tensor.
    pub fn mean_all(&self) -> Result<Tensor<E>> {
        let n = self.len();
        let inv = E::ONE / E::from_usize(n);
        let s: E = self.data().iter().copied().sum();
        Ok(Tensor::from_op(
            vec![],
            vec![s * inv],
            vec![self.clone()],
            Box::new(move |gy: &[E]| vec![Some(vec![gy[0] * inv; n])]),
        ))
    }

    /// Softmax along `axis`; slices sum to 1.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<E>> {
        if axis >= self.rank() {
            return Err(TensorError::AxisOutOfRange { op: "softmax", axis, rank: self.rank() });
        }
        let (outer, extent, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut data = vec![E::ZERO; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let mut m = x[base];
                for e in 1..extent {
                    m = m.max(x[base + e * inner]);
                }
                let mut z = E::ZERO;
                for e in 0..extent {
                    let v = (x[base + e * inner] - m).exp();
                    data[base + e * inner] = v;
                    z += v;
                }
                for e in 0..extent {
                    data[base + e * inner] = data[base + e * inner] / z;
                }
            }
        }
        let y = data.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |gy: &[E]| {
                // dx = y * (gy - sum(gy * y, axis))
                let mut gx = vec![E::ZERO; gy.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * extent * inner + i;
                        let mut dot = E::ZERO;
                        for e in 0..extent {
                            let k = base + e * inner;
                            dot += gy[k] * y[k];
                        }
                        for e in 0..extent {
                            let k = base + e * inner;
                            gx[k] = y[k] * (gy[k] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Log-softmax along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<E>> {
        if axis >= self.rank() {
            return Err(TensorError::AxisOutOfRange { op: "log_softmax", axis, rank: self.rank() });
        }
        let (outer, extent, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut data = vec![E::ZERO; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let mut m = x[base];
                for e in 1..extent {
                    m = m.max(x[base + e * inner]);
                }
                let mut z = E::ZERO;
                for e in 0..extent {
                    z += (x[base + e * inner] - m).exp();
                }
                let lz = z.ln() + m;
                for e in 0..extent {
                    data[base + e * inner] = x[base + e * inner] - lz;
                }
            }
        }
        let y = data.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |gy: &[E]| {
                // dx = gy - softmax(x) * sum(gy, axis)
                let mut gx = vec![E::ZERO; gy.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * extent * inner + i;
                        let mut gsum = E::ZERO;
                        for e in 0..extent {
                            gsum += gy[base + e * inner];
                        }
                        for e in 0..extent {
                            let k = base + e * inner;
                            gx[k] = gy[k] - y[k].exp() * gsum;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

/// (outer, extent, inner) decomposition of a shape around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn matmul_raw<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                out_row[j] += av * b_row[j];
            }
        }
    }
    out
}

fn permute_raw<E: Scalar>(x: &[E], shape: &[usize], axes: &[usize]) -> Vec<E> {
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    if x.is_empty() {
        return out;
    }
    loop {
        out.push(x[offset]);
        let mut d = rank;
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            idx[d] += 1;
            offset += step[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= step[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

fn flip_raw<E: Scalar>(x: &[E], shape: &[usize], axis: usize) -> Vec<E> {
    let (outer, extent, inner) = split_axis(shape, axis);
    let mut out = Vec::with_capacity(x.len());
    for o in 0..outer {
        let base = o * extent * inner;
        for e in (0..extent).rev() {
            out.extend_from_slice(&x[base + e * inner..base + (e + 1) * inner]);
        }
    }
    out
}
