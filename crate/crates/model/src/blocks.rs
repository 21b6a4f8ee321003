//! Convolutional building blocks: DDR decomposition, semantic block, the
//! multi-scale convolution block, and the down/up/residual trio.

use rand::Rng;
use skimba_tensor::{Param, Scalar, Tensor};

use crate::error::{ModelError, Result};

/// Negative slope shared by every LeakyReLU in the blocks.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Geometry of a decomposed-convolution block.
#[derive(Debug, Clone)]
pub struct BlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Kernel extent along each decomposed axis; must be odd.
    pub kernel: usize,
    pub dilation_rates: Vec<usize>,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(ModelError::Config(format!("kernel {} must be odd", self.kernel)));
        }
        if self.dilation_rates.is_empty() || self.dilation_rates.iter().any(|&d| d == 0) {
            return Err(ModelError::Config("dilation rates must be non-empty positives".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(ModelError::Config("channel counts must be positive".into()));
        }
        Ok(())
    }
}

/// A single 3D convolution with parameters, fixed geometry.
pub struct Conv3dLayer<E: Scalar> {
    pub weight: Param<E>,
    pub bias: Option<Param<E>>,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub dilation: [usize; 3],
}

impl<E: Scalar> Conv3dLayer<E> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        prefix: &str,
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        dilation: [usize; 3],
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = cin * kernel[0] * kernel[1] * kernel[2];
        let std = E::from_f64((2.0 / fan_in as f64).sqrt());
        Conv3dLayer {
            weight: Param::new(
                format!("{prefix}/weight"),
                Tensor::randn_scaled(&[cout, cin, kernel[0], kernel[1], kernel[2]], std, rng),
            ),
            bias: bias.then(|| Param::new(format!("{prefix}/bias"), Tensor::zeros(&[cout]))),
            stride,
            padding,
            dilation,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.conv3d(
            &self.weight.value(),
            self.bias.as_ref().map(|b| b.value()).as_ref(),
            self.stride,
            self.padding,
            self.dilation,
        )
        .map_err(Into::into)
    }

    pub fn collect_params(&self, out: &mut Vec<Param<E>>) {
        out.push(self.weight.clone());
        if let Some(b) = &self.bias {
            out.push(b.clone());
        }
    }

    pub fn zero_init(&self) {
        self.weight.set_data(vec![E::ZERO; self.weight.value().len()]);
        if let Some(b) = &self.bias {
            b.set_data(vec![E::ZERO; b.value().len()]);
        }
    }

    pub fn weight_count(&self) -> usize {
        self.weight.value().len()
    }
}

/// Dimensional decomposition residual block: a k^3 convolution factored into
/// 1x1xk, 1xkx1, and kx1x1 layers (k along h, then w, then l), closed by a
/// residual add (channel-projected when counts differ).
pub struct DdrBlock<E: Scalar> {
    pub config: BlockConfig,
    conv_h: Conv3dLayer<E>,
    conv_w: Conv3dLayer<E>,
    conv_l: Conv3dLayer<E>,
    projection: Option<Conv3dLayer<E>>,
    dilation: usize,
}

impl<E: Scalar> DdrBlock<E> {
    pub fn new(prefix: &str, config: BlockConfig, dilation: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let k = config.kernel;
        let pad = dilation * (k - 1) / 2;
        let (cin, cout) = (config.in_channels, config.out_channels);
        let conv_h = Conv3dLayer::new(
            &format!("{prefix}/conv_h"), cin, cout, [1, 1, k], [1; 3], [0, 0, pad], [1, 1, dilation], true, rng,
        );
        let conv_w = Conv3dLayer::new(
            &format!("{prefix}/conv_w"), cout, cout, [1, k, 1], [1; 3], [0, pad, 0], [1, dilation, 1], true, rng,
        );
        let conv_l = Conv3dLayer::new(
            &format!("{prefix}/conv_l"), cout, cout, [k, 1, 1], [1; 3], [pad, 0, 0], [dilation, 1, 1], true, rng,
        );
        let projection = (cin != cout).then(|| {
            Conv3dLayer::new(
                &format!("{prefix}/proj"), cin, cout, [1; 3], [1; 3], [0; 3], [1; 3], false, rng,
            )
        });
        Ok(DdrBlock { config, conv_h, conv_w, conv_l, projection, dilation })
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        if x.shape()[0] != self.config.in_channels {
            return Err(ModelError::ChannelMismatch {
                expected: self.config.in_channels,
                got: x.shape()[0],
            });
        }
        let h = self.conv_h.forward(x)?;
        let h = self.conv_w.forward(&h)?;
        let h = self.conv_l.forward(&h)?;
        let residual = match &self.projection {
            Some(p) => p.forward(x)?,
            None => x.clone(),
        };
        h.add(&residual).map_err(Into::into)
    }

    /// Weight-element count of the decomposed stack (biases excluded); equals
    /// 3k * C_in * C_out when the channel counts match.
    pub fn decomposed_weight_count(&self) -> usize {
        self.conv_h.weight_count() + self.conv_w.weight_count() + self.conv_l.weight_count()
    }

    /// Weight-element count a full k^3 kernel would need.
    pub fn full_kernel_weight_count(&self) -> usize {
        let k = self.config.kernel;
        self.config.in_channels * self.config.out_channels * k * k * k
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }

    pub fn collect_params(&self, out: &mut Vec<Param<E>>) {
        self.conv_h.collect_params(out);
        self.conv_w.collect_params(out);
        self.conv_l.collect_params(out);
        if let Some(p) = &self.projection {
            p.collect_params(out);
        }
    }

    pub fn zero_conv_init(&self) {
        self.conv_h.zero_init();
        self.conv_w.zero_init();
        self.conv_l.zero_init();
    }
}

/// Semantic block: parallel DDR branches at dilation rates [1, 2, 3], summed.
pub struct SemanticBlock<E: Scalar> {
    pub branches: Vec<DdrBlock<E>>,
}

pub const SEMANTIC_BLOCK_DILATIONS: [usize; 3] = [1, 2, 3];

impl<E: Scalar> SemanticBlock<E> {
    pub fn new(prefix: &str, channels: usize, kernel: usize, rng: &mut impl Rng) -> Result<Self> {
        let branches = SEMANTIC_BLOCK_DILATIONS
            .iter()
            .map(|&d| {
                DdrBlock::new(
                    &format!("{prefix}/ddr_d{d}"),
                    BlockConfig {
                        in_channels: channels,
                        out_channels: channels,
                        kernel,
                        dilation_rates: vec![d],
                    },
                    d,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SemanticBlock { branches })
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let mut acc: Option<Tensor<E>> = None;
        for b in &self.branches {
            let y = b.forward(x)?;
            acc = Some(match acc {
                Some(a) => a.add(&y)?,
                None => y,
            });
        }
        Ok(acc.unwrap())
    }

    pub fn collect_params(&self, out: &mut Vec<Param<E>>) {
        for b in &self.branches {
            b.collect_params(out);
        }
    }
}

/// Multi-scale convolution block: a stack of 3x3x3 same-padding convolutions.
/// Two emulate an effective 5x5x5 kernel, three a 7x7x7.
pub struct Mscb<E: Scalar> {
    pub convs: Vec<Conv3dLayer<E>>,
    pub effective_kernel: usize,
}

impl<E: Scalar> Mscb<E> {
    pub fn new(
        prefix: &str,
        cin: usize,
        cout: usize,
        effective_kernel: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let depth = match effective_kernel {
            5 => 2,
            7 => 3,
            k => return Err(ModelError::UnsupportedKernel(k)),
        };
        let mut convs = Vec::with_capacity(depth);
        for i in 0..depth {
            let c_in = if i == 0 { cin } else { cout };
            convs.push(Conv3dLayer::new(
                &format!("{prefix}/conv{i}"), c_in, cout, [3; 3], [1; 3], [1; 3], [1; 3], true, rng,
            ));
        }
        Ok(Mscb { convs, effective_kernel })
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(&h)?;
        }
        Ok(h)
    }

    pub fn collect_params(&self, out: &mut Vec<Param<E>>) {
        for c in &self.convs {
            c.collect_params(out);
        }
    }
}

/// Multiply count per output element for `channels`-wide features:
/// (stacked 3x3x3 cost, single full-kernel cost).
pub fn mscb_cost_report(effective_kernel: usize, channels: usize) -> Result<(usize, usize)> {
    let c2 = channels * channels;
    match effective_kernel {
        5 => Ok((54 * c2, 125 * c2)),
        7 => Ok((81 * c2, 343 * c2)),
        k => Err(ModelError::UnsupportedKernel(k)),
    }
}

/// Three 3x3x3 convolutions with instance normalization; the first is strided
/// and followed by a LeakyReLU. A strided 1x1x1 projection bypasses the main
/// path and merges before the final LeakyReLU.
pub struct DownsampleBlock<E: Scalar> {
    conv1: Conv3dLayer<E>,
    conv2: Conv3dLayer<E>,
    conv3: Conv3dLayer<E>,
    bypass: Bypass<E>,
}

enum Bypass<E: Scalar> {
    Identity,
    Projection(Conv3dLayer<E>),
}

impl<E: Scalar> DownsampleBlock<E> {
    pub fn new(prefix: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        Self::with_stride(prefix, cin, cout, 2, rng)
    }

    fn with_stride(prefix: &str, cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let s = [stride; 3];
        let conv1 = Conv3dLayer::new(&format!("{prefix}/conv1"), cin, cout, [3; 3], s, [1; 3], [1; 3], true, rng);
        let conv2 = Conv3dLayer::new(&format!("{prefix}/conv2"), cout, cout, [3; 3], [1; 3], [1; 3], [1; 3], true, rng);
        let conv3 = Conv3dLayer::new(&format!("{prefix}/conv3"), cout, cout, [3; 3], [1; 3], [1; 3], [1; 3], true, rng);
        let bypass = if stride == 1 && cin == cout {
            Bypass::Identity
        } else {
            Bypass::Projection(Conv3dLayer::new(
                &format!("{prefix}/bypass"), cin, cout, [1; 3], s, [0; 3], [1; 3], true, rng,
            ))
        };
        DownsampleBlock { conv1, conv2, conv3, bypass }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let slope = E::from_f64(LEAKY_SLOPE);
        let h = self.conv1.forward(x)?.instance_norm()?.leaky_relu(slope)?;
        let h = self.conv2.forward(&h)?.instance_norm()?;
        let h = self.conv3.forward(&h)?.instance_norm()?;
        let shortcut = match &self.bypass {
            Bypass::Identity => x.clone(),
            Bypass::Projection(p) => p.forward(x)?,
        };
        h.add(&shortcut)?.leaky_relu(slope).map_err(Into::into)
    }

    pub fn collect_params(&self, out: &mut Vec<Param<E>>) {
        self.conv1.collect_params(out);
        self.conv2.collect_params(out);
        self.conv3.collect_params(out);
        if let Bypass::Projection(p) = &self.bypass {
            p.collect_params(out);
        }
    }

    pub fn zero_main_path(&self) {
        self.conv1.zero_init();
        self.conv2.zero_init();
        self.conv3.zero_init();
    }

    pub fn bypass_forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        match &self.bypass {
            Bypass::Identity => Ok(x.clone()),
            Bypass::Projection(p) => p.forward(x),
        }
    }
}

/// Same topology as the downsample block with every stride 1; transmits
/// residue at unchanged resolution.
pub struct ConvResBlock<E: Scalar> {
    inner: DownsampleBlock<E>,
}

impl<E: Scalar> ConvResBlock<E> {
    pub fn new(prefix: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        ConvResBlock { inner: DownsampleBlock::with_stride(prefix, cin, cout, 1, rng) }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        self.inner.forward(x)
    }

    pub fn collect_params(&self, out: &mut Vec<Param<E>>) {
        self.inner.collect_params(out);
    }

    pub fn zero_main_path(&self) {
        self.inner.zero_main_path();
    }
}

/// Stride-2 transposed convolution (kernel 2, exact doubling) followed by the
/// ConvResblock topology.
pub struct UpsampleBlock<E: Scalar> {
    up_weight: Param<E>,
    up_bias: Param<E>,
    body: ConvResBlock<E>,
    cout: usize,
}

impl<E: Scalar> UpsampleBlock<E> {
    pub fn new(prefix: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let std = E::from_f64((2.0 / (cin * 8) as f64).sqrt());
        UpsampleBlock {
            up_weight: Param::new(
                format!("{prefix}/up/weight"),
                Tensor::randn_scaled(&[cin, cout, 2, 2, 2], std, rng),
            ),
            up_bias: Param::new(format!("{prefix}/up/bias"), Tensor::zeros(&[cout])),
            body: ConvResBlock::new(&format!("{prefix}/body"), cout, cout, rng),
            cout,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let up = x.conv_transpose3d(&self.up_weight.value(), [2; 3])?;
        let bias = self.up_bias.value().reshape(&[self.cout, 1, 1, 1])?;
        let up = up.add(&bias)?;
        self.body.forward(&up)
    }

    pub fn collect_params(&self, out: &mut Vec<Param<E>>) {
        out.push(self.up_weight.clone());
        out.push(self.up_bias.clone());
        self.body.collect_params(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cost_report_paper_constants() {
        assert_eq!(mscb_cost_report(5, 1).unwrap(), (54, 125));
        assert_eq!(mscb_cost_report(7, 1).unwrap(), (81, 343));
        let c = 16;
        assert_eq!(mscb_cost_report(5, c).unwrap(), (54 * c * c, 125 * c * c));
        assert_eq!(mscb_cost_report(7, c).unwrap(), (81 * c * c, 343 * c * c));
        assert!(matches!(mscb_cost_report(9, 4), Err(ModelError::UnsupportedKernel(9))));
    }

    #[test]
    fn ddr_parameter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in [3usize, 5, 7] {
            let cfg = BlockConfig { in_channels: 16, out_channels: 16, kernel: k, dilation_rates: vec![1] };
            let ddr = DdrBlock::<f32>::new("d", cfg, 1, &mut rng).unwrap();
            assert_eq!(ddr.decomposed_weight_count(), 3 * k * 16 * 16);
            assert_eq!(ddr.full_kernel_weight_count(), k * k * k * 16 * 16);
        }
        // one-third at k = 3 exactly
        let cfg = BlockConfig { in_channels: 16, out_channels: 16, kernel: 3, dilation_rates: vec![1] };
        let ddr = DdrBlock::<f32>::new("d3", cfg, 1, &mut rng).unwrap();
        assert_eq!(ddr.decomposed_weight_count(), 2304);
        assert_eq!(ddr.full_kernel_weight_count(), 6912);
        assert_eq!(ddr.decomposed_weight_count() * 3, ddr.full_kernel_weight_count());
    }

    #[test]
    fn ddr_zero_init_is_residual_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = BlockConfig { in_channels: 3, out_channels: 3, kernel: 3, dilation_rates: vec![1] };
        let ddr = DdrBlock::<f32>::new("d", cfg, 1, &mut rng).unwrap();
        ddr.zero_conv_init();
        let x = Tensor::randn(&[3, 4, 4, 4], &mut rng);
        let y = ddr.forward(&x).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn ddr_impulse_support_is_full_cube() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = 3usize;
        let cfg = BlockConfig { in_channels: 1, out_channels: 1, kernel: k, dilation_rates: vec![1] };
        let ddr = DdrBlock::<f32>::new("d", cfg, 1, &mut rng).unwrap();
        // all-ones weights, zero bias: the response of an impulse is positive
        // exactly on the k x k x k cross-composition region
        ddr.conv_h.weight.set_data(vec![1.0; k]);
        ddr.conv_w.weight.set_data(vec![1.0; k]);
        ddr.conv_l.weight.set_data(vec![1.0; k]);
        let e = 7usize;
        let mid = 3usize;
        let mut xdata = vec![0.0f32; e * e * e];
        xdata[(mid * e + mid) * e + mid] = 1.0;
        let x = Tensor::from_vec(&[1, e, e, e], xdata).unwrap();
        let y = ddr.forward(&x).unwrap();
        for l in 0..e {
            for w in 0..e {
                for h in 0..e {
                    let v = y.data()[(l * e + w) * e + h];
                    let inside = l.abs_diff(mid) <= 1 && w.abs_diff(mid) <= 1 && h.abs_diff(mid) <= 1;
                    let center = l == mid && w == mid && h == mid;
                    if inside {
                        // residual adds the impulse once at the center
                        let want = if center { 2.0 } else { 1.0 };
                        assert_eq!(v, want, "at ({l},{w},{h})");
                    } else {
                        assert_eq!(v, 0.0, "outside support at ({l},{w},{h})");
                    }
                }
            }
        }
    }

    #[test]
    fn mscb_impulse_support_spans_five() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mscb = Mscb::<f32>::new("m", 1, 1, 5, &mut rng).unwrap();
        for conv in &mscb.convs {
            conv.weight.set_data(vec![1.0; 27]);
        }
        let e = 9usize;
        let mid = 4usize;
        let mut xdata = vec![0.0f32; e * e * e];
        xdata[(mid * e + mid) * e + mid] = 1.0;
        let x = Tensor::from_vec(&[1, e, e, e], xdata).unwrap();
        let y = mscb.forward(&x).unwrap();
        for l in 0..e {
            for w in 0..e {
                for h in 0..e {
                    let v = y.data()[(l * e + w) * e + h];
                    let inside = l.abs_diff(mid) <= 2 && w.abs_diff(mid) <= 2 && h.abs_diff(mid) <= 2;
                    assert_eq!(v > 0.0, inside, "at ({l},{w},{h}) got {v}");
                }
            }
        }
    }

    #[test]
    fn semantic_block_matches_branch_sum_and_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sb = SemanticBlock::<f32>::new("sb", 4, 3, &mut rng).unwrap();
        let x = Tensor::randn(&[4, 4, 4, 4], &mut rng);
        let y = sb.forward(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        let mut want = sb.branches[0].forward(&x).unwrap().to_vec();
        for b in &sb.branches[1..] {
            for (w, v) in want.iter_mut().zip(b.forward(&x).unwrap().to_vec()) {
                *w += v;
            }
        }
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-5);
        }
        assert_eq!(
            sb.branches.iter().map(|b| b.dilation()).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
    }

    #[test]
    fn downsample_halves_and_zero_main_path_passes_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let block = DownsampleBlock::<f32>::new("down", 3, 6, &mut rng);
        let x = Tensor::randn(&[3, 8, 8, 4], &mut rng);
        let y = block.forward(&x).unwrap();
        assert_eq!(y.shape(), &[6, 4, 4, 2]);

        block.zero_main_path();
        let y = block.forward(&x).unwrap();
        let want = block.bypass_forward(&x).unwrap().leaky_relu(LEAKY_SLOPE as f32).unwrap();
        assert_eq!(y.to_vec(), want.to_vec());
    }

    #[test]
    fn conv_res_block_preserves_shape_and_identity_under_zero_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let block = ConvResBlock::<f32>::new("res", 4, 4, &mut rng);
        let x = Tensor::rand_uniform(&[4, 4, 4, 2], 0.1, 1.0, &mut rng);
        let y = block.forward(&x).unwrap();
        assert_eq!(y.shape(), x.shape());

        block.zero_main_path();
        // positive input passes the final LeakyReLU unchanged
        let y = block.forward(&x).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn upsample_doubles_and_roundtrips_extents() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let up = UpsampleBlock::<f32>::new("up", 6, 3, &mut rng);
        let x = Tensor::randn(&[6, 4, 4, 2], &mut rng);
        let y = up.forward(&x).unwrap();
        assert_eq!(y.shape(), &[3, 8, 8, 4]);

        // down then up restores even extents >= 4
        let down = DownsampleBlock::<f32>::new("down", 3, 6, &mut rng);
        let z = down.forward(&y).unwrap();
        assert_eq!(z.shape(), &[6, 4, 4, 2]);
    }
}
