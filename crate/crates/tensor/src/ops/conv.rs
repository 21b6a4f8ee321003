//! 3D cross-correlation, its transpose, and both gradient kernels.
//!
//! Layouts: inputs (C_in, L, W, H), weights (C_out, C_in, kL, kW, kH),
//! outputs (C_out, L', W', H'), all row-major. The inner loops run along H so
//! stride-1 spans vectorize; parallelism is over output channels, where each
//! worker owns a disjoint slice, so results are bit-identical for any thread
//! count.

use rayon::prelude::*;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Output extent of a convolution along one axis.
pub fn conv3d_out_extent(input: usize, k: usize, stride: usize, pad: usize, dil: usize) -> isize {
    let span = dil as isize * (k as isize - 1) + 1;
    let num = input as isize + 2 * pad as isize - span;
    if num < 0 {
        return -1;
    }
    num / stride as isize + 1
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transpose3d_out_extent(input: usize, k: usize, stride: usize) -> usize {
    (input - 1) * stride + k
}

/// Valid output range [start, end) along one axis for one kernel tap, i.e. the
/// positions whose sampled input index lands inside [0, in_extent).
fn tap_range(out_extent: usize, in_extent: usize, stride: usize, pad: usize, tap: usize) -> (usize, usize) {
    let tap = tap as isize;
    let pad = pad as isize;
    let s = stride as isize;
    let lo = pad - tap; // need o*s >= lo
    let start = if lo <= 0 { 0 } else { (lo + s - 1) / s };
    let hi = in_extent as isize - 1 + pad - tap; // need o*s <= hi
    if hi < 0 {
        return (0, 0);
    }
    let end = (hi / s + 1).min(out_extent as isize);
    if start >= end {
        (0, 0)
    } else {
        (start as usize, end as usize)
    }
}

struct Geometry {
    ci: usize,
    co: usize,
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    k: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    dil: [usize; 3],
}

impl Geometry {
    fn in_spatial(&self) -> usize {
        self.in_dims.iter().product()
    }
    fn out_spatial(&self) -> usize {
        self.out_dims.iter().product()
    }
    fn weight_len(&self) -> usize {
        self.co * self.ci * self.k.iter().product::<usize>()
    }
    fn macs(&self) -> usize {
        self.out_spatial() * self.co * self.ci * self.k.iter().product::<usize>()
    }
}

/// Forward cross-correlation for one output channel into `out` (spatial slice).
fn fwd_one_channel<E: Scalar>(out: &mut [E], co: usize, x: &[E], w: &[E], g: &Geometry) {
    let [l_in, w_in, h_in] = g.in_dims;
    let [l_out, w_out, h_out] = g.out_dims;
    let [kl, kw, kh] = g.k;
    let [sl, sw, sh] = g.stride;
    let [pl, pw, ph] = g.pad;
    let [dl, dw, dh] = g.dil;
    for ci in 0..g.ci {
        let x_ch = &x[ci * l_in * w_in * h_in..(ci + 1) * l_in * w_in * h_in];
        let w_base = ((co * g.ci) + ci) * kl * kw * kh;
        for tl in 0..kl {
            let (lo0, lo1) = tap_range(l_out, l_in, sl, pl, tl * dl);
            for tw in 0..kw {
                let (wo0, wo1) = tap_range(w_out, w_in, sw, pw, tw * dw);
                for th in 0..kh {
                    let (ho0, ho1) = tap_range(h_out, h_in, sh, ph, th * dh);
                    if ho0 >= ho1 {
                        continue;
                    }
                    let wv = w[w_base + (tl * kw + tw) * kh + th];
                    let h_off = (th * dh) as isize - ph as isize;
                    for lo in lo0..lo1 {
                        let li = (lo * sl + tl * dl) as isize - pl as isize;
                        let x_l = (li as usize) * w_in * h_in;
                        for wo in wo0..wo1 {
                            let wi = (wo * sw + tw * dw) as isize - pw as isize;
                            let x_base = x_l + (wi as usize) * h_in;
                            let o_base = (lo * w_out + wo) * h_out;
                            if sh == 1 {
                                let xs = &x_ch[(x_base as isize + h_off + ho0 as isize) as usize..];
                                let os = &mut out[o_base + ho0..o_base + ho1];
                                for (o, xv) in os.iter_mut().zip(xs) {
                                    *o += wv * *xv;
                                }
                            } else {
                                for ho in ho0..ho1 {
                                    let hi = (x_base as isize + (ho * sh) as isize + h_off) as usize;
                                    out[o_base + ho] += wv * x_ch[hi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_fwd<E: Scalar>(x: &[E], w: &[E], bias: Option<&[E]>, g: &Geometry) -> Vec<E> {
    let spatial = g.out_spatial();
    let mut out = vec![E::ZERO; g.co * spatial];
    if let Some(b) = bias {
        for (co, chunk) in out.chunks_mut(spatial).enumerate() {
            chunk.fill(b[co]);
        }
    }
    let run = |(co, chunk): (usize, &mut [E])| fwd_one_channel(chunk, co, x, w, g);
    if g.macs() > 200_000 && g.co > 1 {
        out.par_chunks_mut(spatial).enumerate().for_each(run);
    } else {
        out.chunks_mut(spatial).enumerate().for_each(run);
    }
    out
}

/// Gradient w.r.t. the convolution input for one input channel.
fn grad_input_one_channel<E: Scalar>(gx: &mut [E], ci: usize, gy: &[E], w: &[E], g: &Geometry) {
    let [l_in, w_in, h_in] = g.in_dims;
    let [l_out, w_out, h_out] = g.out_dims;
    let [kl, kw, kh] = g.k;
    let [sl, sw, sh] = g.stride;
    let [pl, pw, ph] = g.pad;
    let [dl, dw, dh] = g.dil;
    for co in 0..g.co {
        let gy_ch = &gy[co * l_out * w_out * h_out..(co + 1) * l_out * w_out * h_out];
        let w_base = ((co * g.ci) + ci) * kl * kw * kh;
        for tl in 0..kl {
            let (lo0, lo1) = tap_range(l_out, l_in, sl, pl, tl * dl);
            for tw in 0..kw {
                let (wo0, wo1) = tap_range(w_out, w_in, sw, pw, tw * dw);
                for th in 0..kh {
                    let (ho0, ho1) = tap_range(h_out, h_in, sh, ph, th * dh);
                    if ho0 >= ho1 {
                        continue;
                    }
                    let wv = w[w_base + (tl * kw + tw) * kh + th];
                    let h_off = (th * dh) as isize - ph as isize;
                    for lo in lo0..lo1 {
                        let li = ((lo * sl + tl * dl) as isize - pl as isize) as usize;
                        let x_l = li * w_in * h_in;
                        for wo in wo0..wo1 {
                            let wi = ((wo * sw + tw * dw) as isize - pw as isize) as usize;
                            let x_base = x_l + wi * h_in;
                            let o_base = (lo * w_out + wo) * h_out;
                            if sh == 1 {
                                let start = (x_base as isize + h_off + ho0 as isize) as usize;
                                let xs = &mut gx[start..start + (ho1 - ho0)];
                                let os = &gy_ch[o_base + ho0..o_base + ho1];
                                for (xv, o) in xs.iter_mut().zip(os) {
                                    *xv += wv * *o;
                                }
                            } else {
                                for ho in ho0..ho1 {
                                    let hi = (x_base as isize + (ho * sh) as isize + h_off) as usize;
                                    gx[hi] += wv * gy_ch[o_base + ho];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_grad_input<E: Scalar>(gy: &[E], w: &[E], g: &Geometry) -> Vec<E> {
    let spatial = g.in_spatial();
    let mut gx = vec![E::ZERO; g.ci * spatial];
    let run = |(ci, chunk): (usize, &mut [E])| grad_input_one_channel(chunk, ci, gy, w, g);
    if g.macs() > 200_000 && g.ci > 1 {
        gx.par_chunks_mut(spatial).enumerate().for_each(run);
    } else {
        gx.chunks_mut(spatial).enumerate().for_each(run);
    }
    gx
}

/// Gradient w.r.t. the weights for one output channel.
fn grad_weight_one_channel<E: Scalar>(gw: &mut [E], co: usize, x: &[E], gy: &[E], g: &Geometry) {
    let [l_in, w_in, h_in] = g.in_dims;
    let [l_out, w_out, h_out] = g.out_dims;
    let [kl, kw, kh] = g.k;
    let [sl, sw, sh] = g.stride;
    let [pl, pw, ph] = g.pad;
    let [dl, dw, dh] = g.dil;
    let gy_ch = &gy[co * l_out * w_out * h_out..(co + 1) * l_out * w_out * h_out];
    for ci in 0..g.ci {
        let x_ch = &x[ci * l_in * w_in * h_in..(ci + 1) * l_in * w_in * h_in];
        for tl in 0..kl {
            let (lo0, lo1) = tap_range(l_out, l_in, sl, pl, tl * dl);
            for tw in 0..kw {
                let (wo0, wo1) = tap_range(w_out, w_in, sw, pw, tw * dw);
                for th in 0..kh {
                    let (ho0, ho1) = tap_range(h_out, h_in, sh, ph, th * dh);
                    if ho0 >= ho1 {
                        continue;
                    }
                    let h_off = (th * dh) as isize - ph as isize;
                    let mut acc = E::ZERO;
                    for lo in lo0..lo1 {
                        let li = ((lo * sl + tl * dl) as isize - pl as isize) as usize;
                        let x_l = li * w_in * h_in;
                        for wo in wo0..wo1 {
                            let wi = ((wo * sw + tw * dw) as isize - pw as isize) as usize;
                            let x_base = x_l + wi * h_in;
                            let o_base = (lo * w_out + wo) * h_out;
                            if sh == 1 {
                                let start = (x_base as isize + h_off + ho0 as isize) as usize;
                                let xs = &x_ch[start..start + (ho1 - ho0)];
                                let os = &gy_ch[o_base + ho0..o_base + ho1];
                                for (xv, o) in xs.iter().zip(os) {
                                    acc += *xv * *o;
                                }
                            } else {
                                for ho in ho0..ho1 {
                                    let hi = (x_base as isize + (ho * sh) as isize + h_off) as usize;
                                    acc += x_ch[hi] * gy_ch[o_base + ho];
                                }
                            }
                        }
                    }
                    gw[(ci * kl + tl) * kw * kh + tw * kh + th] += acc;
                }
            }
        }
    }
}

fn conv_grad_weight<E: Scalar>(x: &[E], gy: &[E], g: &Geometry) -> Vec<E> {
    let per_co = g.ci * g.k.iter().product::<usize>();
    let mut gw = vec![E::ZERO; g.weight_len()];
    let run = |(co, chunk): (usize, &mut [E])| grad_weight_one_channel(chunk, co, x, gy, g);
    if g.macs() > 200_000 && g.co > 1 {
        gw.par_chunks_mut(per_co).enumerate().for_each(run);
    } else {
        gw.chunks_mut(per_co).enumerate().for_each(run);
    }
    gw
}

fn check_rank4(op: &'static str, t: &[usize]) -> Result<[usize; 3]> {
    if t.len() != 4 {
        return Err(TensorError::InvalidShape {
            op,
            shape: t.to_vec(),
            reason: "expected rank-4 (channels, L, W, H)".into(),
        });
    }
    Ok([t[1], t[2], t[3]])
}

impl<E: Scalar> Tensor<E> {
    /// 3D convolution (cross-correlation). `weight` is rank-5
    /// (C_out, C_in, kL, kW, kH); `bias`, when given, has C_out elements.
    pub fn conv3d(
        &self,
        weight: &Tensor<E>,
        bias: Option<&Tensor<E>>,
        stride: [usize; 3],
        padding: [usize; 3],
        dilation: [usize; 3],
    ) -> Result<Tensor<E>> {
        let in_dims = check_rank4("conv3d", self.shape())?;
        if weight.rank() != 5 || weight.shape()[1] != self.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "conv3d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        let co = weight.shape()[0];
        let k = [weight.shape()[2], weight.shape()[3], weight.shape()[4]];
        let mut out_dims = [0usize; 3];
        for a in 0..3 {
            let e = conv3d_out_extent(in_dims[a], k[a], stride[a], padding[a], dilation[a]);
            if e <= 0 {
                return Err(TensorError::EmptyConvOutput {
                    input: self.shape().to_vec(),
                    kernel: weight.shape().to_vec(),
                    stride,
                    padding,
                    dilation,
                });
            }
            out_dims[a] = e as usize;
        }
        if let Some(b) = bias {
            if b.len() != co {
                return Err(TensorError::ShapeMismatch {
                    op: "conv3d-bias",
                    lhs: vec![co],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let g = Geometry {
            ci: self.shape()[0],
            co,
            in_dims,
            out_dims,
            k,
            stride,
            pad: padding,
            dil: dilation,
        };
        let data = conv_fwd(self.data(), weight.data(), bias.map(|b| b.data()), &g);
        let out_shape = vec![co, out_dims[0], out_dims[1], out_dims[2]];

        let (tx, tw) = (self.clone(), weight.clone());
        let has_bias = bias.is_some();
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let out_spatial = g.out_spatial();
        Ok(Tensor::from_op(
            out_shape,
            data,
            parents,
            Box::new(move |gy: &[E]| {
                let gx = conv_grad_input(gy, tw.data(), &g);
                let gw = conv_grad_weight(tx.data(), gy, &g);
                let mut grads = vec![Some(gx), Some(gw)];
                if has_bias {
                    let gb = gy
                        .chunks(out_spatial)
                        .map(|c| c.iter().copied().sum())
                        .collect::<Vec<E>>();
                    grads.push(Some(gb));
                }
                grads
            }),
        ))
    }

    /// Transposed 3D convolution, the adjoint of `conv3d` with the same
    /// weight, zero padding, and unit dilation. Maps (C_out, M...) to
    /// (C_in, (M-1)*stride + k ...).
    pub fn conv_transpose3d(&self, weight: &Tensor<E>, stride: [usize; 3]) -> Result<Tensor<E>> {
        let x_dims = check_rank4("conv_transpose3d", self.shape())?;
        if weight.rank() != 5 || weight.shape()[0] != self.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose3d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        let k = [weight.shape()[2], weight.shape()[3], weight.shape()[4]];
        let mut big = [0usize; 3];
        for a in 0..3 {
            big[a] = conv_transpose3d_out_extent(x_dims[a], k[a], stride[a]);
        }
        // role swap: this op's input takes the "output" slot of the conv kernels
        let g = Geometry {
            ci: weight.shape()[1],
            co: self.shape()[0],
            in_dims: big,
            out_dims: x_dims,
            k,
            stride,
            pad: [0; 3],
            dil: [1; 3],
        };
        let data = conv_grad_input(self.data(), weight.data(), &g);
        let out_shape = vec![g.ci, big[0], big[1], big[2]];
        let (tx, tw) = (self.clone(), weight.clone());
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), weight.clone()],
            Box::new(move |gy: &[E]| {
                let gx = conv_fwd(gy, tw.data(), None, &g);
                let gw = conv_grad_weight(gy, tx.data(), &g);
                vec![Some(gx), Some(gw)]
            }),
        ))
    }
}
