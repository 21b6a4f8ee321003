//! Full network assembly: projection + feature extractor, the denoising
//! U-net with residue-carrying ConvResblocks, the segmentation network with
//! one bottleneck Skimba block and concatenation skips, and the end-to-end
//! pipeline with per-stage timing.

use std::time::Instant;

use rand::Rng;
use skimba_tensor::{check_unique_names, Param, Scalar, Tensor};

use crate::blocks::{
    Conv3dLayer, ConvResBlock, DownsampleBlock, Mscb, SemanticBlock, UpsampleBlock, LEAKY_SLOPE,
};
use crate::camera::{project_2d_to_3d, CameraModel, GridGeometry};
use crate::diffusion::{sample, Denoiser, MscbFuse, NoiseSchedule};
use crate::error::{ModelError, Result};
use crate::scan::SkimbaBlock;
use crate::vae::{ConditionNetwork, Vae, VaeConfig, DOWNSAMPLE_FACTOR};
use crate::voxel::VoxelGrid;

/// Architecture hyperparameters plus the ablation toggles of Table-style
/// block-removal studies.
#[derive(Debug, Clone)]
pub struct NetworkSpec {
    pub class_count: usize,
    pub grid_dims: [usize; 3],
    pub voxel_size: f32,
    pub image_width: usize,
    pub image_height: usize,
    /// Feature-extractor output channels (the projected feature dimension).
    pub feat_channels: usize,
    pub latent_channels: usize,
    /// Output channels of each of the two condition networks.
    pub cond_channels: usize,
    /// VAE encoder/decoder stage widths.
    pub vae_channels: [usize; 2],
    /// Denoiser stage widths, stem first; stages = len - 1.
    pub denoiser_channels: Vec<usize>,
    /// Segmenter stage widths, stem first; stages = len - 1.
    pub seg_channels: Vec<usize>,
    /// SSM state size N.
    pub state_size: usize,
    pub use_mscb: bool,
    pub use_sb: bool,
    pub use_skimba: bool,
}

impl NetworkSpec {
    pub fn desk_default() -> Self {
        NetworkSpec {
            class_count: 5,
            grid_dims: [32, 32, 8],
            voxel_size: 0.2,
            image_width: 40,
            image_height: 30,
            feat_channels: 8,
            latent_channels: 8,
            cond_channels: 8,
            vae_channels: [16, 32],
            denoiser_channels: vec![16, 32],
            seg_channels: vec![16, 32],
            state_size: 8,
            use_mscb: true,
            use_sb: true,
            use_skimba: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(ModelError::Config("need at least two classes".into()));
        }
        if self.grid_dims.iter().any(|&d| d == 0 || d % DOWNSAMPLE_FACTOR != 0) {
            return Err(ModelError::Config(format!(
                "grid dims {:?} must be positive multiples of {DOWNSAMPLE_FACTOR}",
                self.grid_dims
            )));
        }
        if self.denoiser_channels.len() < 2 || self.seg_channels.len() < 2 {
            return Err(ModelError::Config("channel schedules need at least two entries".into()));
        }
        let latent = self.latent_dims();
        let stages = self.denoiser_channels.len() - 1;
        if latent.iter().any(|&d| d % (1 << stages) != 0) {
            return Err(ModelError::Config(format!(
                "latent extents {latent:?} must halve cleanly through {stages} denoiser stage(s)"
            )));
        }
        let seg_stages = self.seg_channels.len() - 1;
        if self.grid_dims.iter().any(|&d| d % (1 << seg_stages) != 0) {
            return Err(ModelError::Config(format!(
                "grid dims {:?} must halve cleanly through {seg_stages} segmenter stage(s)",
                self.grid_dims
            )));
        }
        Ok(())
    }

    pub fn latent_dims(&self) -> [usize; 3] {
        [
            self.grid_dims[0] / DOWNSAMPLE_FACTOR,
            self.grid_dims[1] / DOWNSAMPLE_FACTOR,
            self.grid_dims[2] / DOWNSAMPLE_FACTOR,
        ]
    }

    pub fn latent_shape(&self) -> Vec<usize> {
        let d = self.latent_dims();
        vec![self.latent_channels, d[0], d[1], d[2]]
    }

    pub fn grid_geometry(&self) -> GridGeometry {
        GridGeometry { dims: self.grid_dims, voxel_size: self.voxel_size as f64 }
    }
}

/// 2D stem, ray back-projection, then alternating MSCB and DDR stages.
pub struct FeatureExtractor<E: Scalar> {
    stem1: Conv3dLayer<E>,
    stem2: Conv3dLayer<E>,
    mscb: Option<Mscb<E>>,
    ddr: crate::blocks::DdrBlock<E>,
    geometry: GridGeometry,
}

impl<E: Scalar> FeatureExtractor<E> {
    pub fn new(spec: &NetworkSpec, rng: &mut impl Rng) -> Result<Self> {
        let d = spec.feat_channels;
        let mscb = spec
            .use_mscb
            .then(|| Mscb::new("fe/mscb0", d, d, 5, rng))
            .transpose()?;
        let ddr = crate::blocks::DdrBlock::new(
            "fe/ddr0",
            crate::blocks::BlockConfig {
                in_channels: d,
                out_channels: d,
                kernel: 3,
                dilation_rates: vec![1],
            },
            1,
            rng,
        )?;
        Ok(FeatureExtractor {
            // 2D convolutions realized as 3D with a singleton leading extent
            stem1: Conv3dLayer::new("fe/stem1", 3, d, [1, 3, 3], [1; 3], [0, 1, 1], [1; 3], true, rng),
            stem2: Conv3dLayer::new("fe/stem2", d, d, [1, 3, 3], [1; 3], [0, 1, 1], [1; 3], true, rng),
            mscb,
            ddr,
            geometry: spec.grid_geometry(),
        })
    }

    /// image: (3, H_img, W_img) -> (D, L, W, H).
    pub fn forward(&self, image: &Tensor<E>, cam: &CameraModel) -> Result<Tensor<E>> {
        if image.rank() != 3 || image.shape()[0] != 3 {
            return Err(ModelError::Geometry(format!(
                "expected (3, H, W) image, got {:?}",
                image.shape()
            )));
        }
        let slope = E::from_f64(LEAKY_SLOPE);
        let (h_img, w_img) = (image.shape()[1], image.shape()[2]);
        let x = image.reshape(&[3, 1, h_img, w_img])?;
        let x = self.stem1.forward(&x)?.leaky_relu(slope)?;
        let x = self.stem2.forward(&x)?;
        let feat2d = x.reshape(&[x.shape()[0], h_img, w_img])?;
        let mut vol = project_2d_to_3d(&feat2d, cam, &self.geometry)?;
        if let Some(m) = &self.mscb {
            vol = m.forward(&vol)?.leaky_relu(slope)?;
        }
        vol = self.ddr.forward(&vol)?.leaky_relu(slope)?;
        Ok(vol)
    }

    pub fn collect_params(&self, out: &mut Vec<Param<E>>) {
        self.stem1.collect_params(out);
        self.stem2.collect_params(out);
        if let Some(m) = &self.mscb {
            m.collect_params(out);
        }
        self.ddr.collect_params(out);
    }
}

struct DenoiserStage<E: Scalar> {
    down: DownsampleBlock<E>,
    sb: Option<SemanticBlock<E>>,
    skimba: Option<SkimbaBlock<E>>,
    residue: ConvResBlock<E>,
}

struct DenoiserDecStage<E: Scalar> {
    up: UpsampleBlock<E>,
    sb: Option<SemanticBlock<E>>,
    skimba: Option<SkimbaBlock<E>>,
}

/// The denoising network: fuse, encoder of [down -> SB -> Skimba] stages,
/// a ConvResblock bottleneck, and a decoder of [up -> SB -> Skimba] stages.
/// ConvResblocks carry each encoder resolution's features to the matching
/// decoder stage as an additive residue. The head maps back to the latent
/// channel count, so prediction is shape-preserving on the latent.
pub struct DenoisingNetwork<E: Scalar> {
    fuse: MscbFuse<E>,
    stem: Conv3dLayer<E>,
    enc: Vec<DenoiserStage<E>>,
    bottleneck: ConvResBlock<E>,
    dec: Vec<DenoiserDecStage<E>>,
    head: Conv3dLayer<E>,
    stages: usize,
    latent_channels: usize,
}

pub fn build_denoiser<E: Scalar>(spec: &NetworkSpec, rng: &mut impl Rng) -> Result<DenoisingNetwork<E>> {
    spec.validate()?;
    let ch = &spec.denoiser_channels;
    let stages = ch.len() - 1;
    let cond_total = 2 * spec.cond_channels;
    let fuse = MscbFuse::new("denoiser/fuse", spec.latent_channels, cond_total, ch[0], spec.use_mscb, rng)?;
    let stem = Conv3dLayer::new("denoiser/stem", ch[0], ch[0], [1; 3], [1; 3], [0; 3], [1; 3], true, rng);
    let mut enc = Vec::with_capacity(stages);
    for i in 0..stages {
        enc.push(DenoiserStage {
            down: DownsampleBlock::new(&format!("denoiser/enc{i}/down"), ch[i], ch[i + 1], rng),
            sb: spec
                .use_sb
                .then(|| SemanticBlock::new(&format!("denoiser/enc{i}/sb"), ch[i + 1], 3, rng))
                .transpose()?,
            skimba: spec
                .use_skimba
                .then(|| SkimbaBlock::new(&format!("denoiser/enc{i}/skimba"), ch[i + 1], spec.state_size, rng)),
            residue: ConvResBlock::new(&format!("denoiser/enc{i}/residue"), ch[i], ch[i], rng),
        });
    }
    let bottleneck = ConvResBlock::new("denoiser/bottleneck", ch[stages], ch[stages], rng);
    let mut dec = Vec::with_capacity(stages);
    for i in (0..stages).rev() {
        dec.push(DenoiserDecStage {
            up: UpsampleBlock::new(&format!("denoiser/dec{i}/up"), ch[i + 1], ch[i], rng),
            sb: spec
                .use_sb
                .then(|| SemanticBlock::new(&format!("denoiser/dec{i}/sb"), ch[i], 3, rng))
                .transpose()?,
            skimba: spec
                .use_skimba
                .then(|| SkimbaBlock::new(&format!("denoiser/dec{i}/skimba"), ch[i], spec.state_size, rng)),
        });
    }
    let head = Conv3dLayer::new("denoiser/head", ch[0], spec.latent_channels, [1; 3], [1; 3], [0; 3], [1; 3], true, rng);
    Ok(DenoisingNetwork {
        fuse,
        stem,
        enc,
        bottleneck,
        dec,
        head,
        stages,
        latent_channels: spec.latent_channels,
    })
}

impl<E: Scalar> DenoisingNetwork<E> {
    pub fn collect_params(&self, out: &mut Vec<Param<E>>) {
        self.fuse.collect_params(out);
        self.stem.collect_params(out);
        for s in &self.enc {
            s.down.collect_params(out);
            if let Some(sb) = &s.sb {
                sb.collect_params(out);
            }
            if let Some(sk) = &s.skimba {
                sk.collect_params(out);
            }
            s.residue.collect_params(out);
        }
        self.bottleneck.collect_params(out);
        for s in &self.dec {
            s.up.collect_params(out);
            if let Some(sb) = &s.sb {
                sb.collect_params(out);
            }
            if let Some(sk) = &s.skimba {
                sk.collect_params(out);
            }
        }
        self.head.collect_params(out);
    }

    pub fn params(&self) -> Vec<Param<E>> {
        let mut out = Vec::new();
        self.collect_params(&mut out);
        check_unique_names(out)
    }
}

impl<E: Scalar> Denoiser<E> for DenoisingNetwork<E> {
    fn predict(&self, x_t: &Tensor<E>, t: usize, cond: &Tensor<E>) -> Result<Tensor<E>> {
        if x_t.rank() != 4 || x_t.shape()[0] != self.latent_channels {
            return Err(ModelError::Geometry(format!(
                "latent {:?} incompatible with {} channels",
                x_t.shape(),
                self.latent_channels
            )));
        }
        if x_t.shape()[1..].iter().any(|&d| d % (1 << self.stages) != 0) {
            return Err(ModelError::Geometry(format!(
                "latent extents {:?} must halve cleanly through {} stage(s)",
                &x_t.shape()[1..],
                self.stages
            )));
        }
        let fused = self.fuse.forward(x_t, cond, t)?;
        let mut x = self.stem.forward(&fused)?;
        let mut residues = Vec::with_capacity(self.stages);
        for stage in &self.enc {
            residues.push(stage.residue.forward(&x)?);
            x = stage.down.forward(&x)?;
            if let Some(sb) = &stage.sb {
                x = sb.forward(&x)?;
            }
            if let Some(sk) = &stage.skimba {
                x = sk.forward(&x)?;
            }
        }
        x = self.bottleneck.forward(&x)?;
        for (stage, residue) in self.dec.iter().zip(residues.iter().rev()) {
            x = stage.up.forward(&x)?;
            x = x.add(residue)?;
            if let Some(sb) = &stage.sb {
                x = sb.forward(&x)?;
            }
            if let Some(sk) = &stage.skimba {
                x = sk.forward(&x)?;
            }
        }
        self.head.forward(&x)
    }
}

struct SegEncStage<E: Scalar> {
    down: DownsampleBlock<E>,
    sb: Option<SemanticBlock<E>>,
}

struct SegDecStage<E: Scalar> {
    up: UpsampleBlock<E>,
    merge: Conv3dLayer<E>,
    sb: Option<SemanticBlock<E>>,
}

/// Segmentation network: encoder-decoder over an occupancy volume with
/// exactly one Skimba block before the decoder and concatenation skip
/// connections at every resolution; emits C class logits at grid resolution.
pub struct Segmenter<E: Scalar> {
    stem: Conv3dLayer<E>,
    enc: Vec<SegEncStage<E>>,
    bottleneck: Option<SkimbaBlock<E>>,
    dec: Vec<SegDecStage<E>>,
    head: Conv3dLayer<E>,
    stages: usize,
}

pub fn build_segmenter<E: Scalar>(spec: &NetworkSpec, rng: &mut impl Rng) -> Result<Segmenter<E>> {
    spec.validate()?;
    let ch = &spec.seg_channels;
    let stages = ch.len() - 1;
    let stem = Conv3dLayer::new("segmenter/stem", 2, ch[0], [3; 3], [1; 3], [1; 3], [1; 3], true, rng);
    let mut enc = Vec::with_capacity(stages);
    for i in 0..stages {
        enc.push(SegEncStage {
            down: DownsampleBlock::new(&format!("segmenter/enc{i}/down"), ch[i], ch[i + 1], rng),
            sb: spec
                .use_sb
                .then(|| SemanticBlock::new(&format!("segmenter/enc{i}/sb"), ch[i + 1], 3, rng))
                .transpose()?,
        });
    }
    let bottleneck = spec
        .use_skimba
        .then(|| SkimbaBlock::new("segmenter/skimba", ch[stages], spec.state_size, rng));
    let mut dec = Vec::with_capacity(stages);
    for i in (0..stages).rev() {
        dec.push(SegDecStage {
            up: UpsampleBlock::new(&format!("segmenter/dec{i}/up"), ch[i + 1], ch[i], rng),
            merge: Conv3dLayer::new(
                &format!("segmenter/dec{i}/merge"),
                2 * ch[i],
                ch[i],
                [1; 3],
                [1; 3],
                [0; 3],
                [1; 3],
                true,
                rng,
            ),
            sb: spec
                .use_sb
                .then(|| SemanticBlock::new(&format!("segmenter/dec{i}/sb"), ch[i], 3, rng))
                .transpose()?,
        });
    }
    let head = Conv3dLayer::new(
        "segmenter/head",
        ch[0],
        spec.class_count,
        [1; 3],
        [1; 3],
        [0; 3],
        [1; 3],
        true,
        rng,
    );
    Ok(Segmenter { stem, enc, bottleneck, dec, head, stages })
}

impl<E: Scalar> Segmenter<E> {
    /// occupancy: (2, L, W, H) -> (C, L, W, H) class logits.
    pub fn forward(&self, occupancy: &Tensor<E>) -> Result<Tensor<E>> {
        if occupancy.rank() != 4 || occupancy.shape()[0] != 2 {
            return Err(ModelError::Geometry(format!(
                "expected (2, L, W, H) occupancy, got {:?}",
                occupancy.shape()
            )));
        }
        if occupancy.shape()[1..].iter().any(|&d| d % (1 << self.stages) != 0) {
            return Err(ModelError::Geometry(format!(
                "grid extents {:?} must halve cleanly through {} stage(s)",
                &occupancy.shape()[1..],
                self.stages
            )));
        }
        let slope = E::from_f64(LEAKY_SLOPE);
        let mut x = self.stem.forward(occupancy)?.leaky_relu(slope)?;
        let mut skips = Vec::with_capacity(self.stages);
        for stage in &self.enc {
            skips.push(x.clone());
            x = stage.down.forward(&x)?;
            if let Some(sb) = &stage.sb {
                x = sb.forward(&x)?;
            }
        }
        if let Some(sk) = &self.bottleneck {
            x = sk.forward(&x)?;
        }
        for (stage, skip) in self.dec.iter().zip(skips.iter().rev()) {
            x = stage.up.forward(&x)?;
            x = Tensor::concat(&[&x, skip], 0)?;
            x = stage.merge.forward(&x)?.leaky_relu(slope)?;
            if let Some(sb) = &stage.sb {
                x = sb.forward(&x)?;
            }
        }
        self.head.forward(&x)
    }

    pub fn collect_params(&self, out: &mut Vec<Param<E>>) {
        self.stem.collect_params(out);
        for s in &self.enc {
            s.down.collect_params(out);
            if let Some(sb) = &s.sb {
                sb.collect_params(out);
            }
        }
        if let Some(sk) = &self.bottleneck {
            sk.collect_params(out);
        }
        for s in &self.dec {
            s.up.collect_params(out);
            s.merge.collect_params(out);
            if let Some(sb) = &s.sb {
                sb.collect_params(out);
            }
        }
        self.head.collect_params(out);
    }

    pub fn params(&self) -> Vec<Param<E>> {
        let mut out = Vec::new();
        self.collect_params(&mut out);
        check_unique_names(out)
    }

    /// Number of Skimba blocks in the network (1, or 0 when ablated).
    pub fn skimba_block_count(&self) -> usize {
        usize::from(self.bottleneck.is_some())
    }
}

/// Wall-clock seconds per pipeline stage: feature extractor, condition
/// networks, VAE decode, Skimba denoiser (sampling), Skimba segmenter, and
/// the full model.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub fe: f64,
    pub cn: f64,
    pub vae: f64,
    pub sd: f64,
    pub ss: f64,
    pub fm: f64,
}

impl StageTimings {
    pub const LABELS: [&'static str; 6] = ["FE", "CN", "VAE", "SD", "SS", "FM"];

    pub fn values(&self) -> [f64; 6] {
        [self.fe, self.cn, self.vae, self.sd, self.ss, self.fm]
    }

    pub fn add(&mut self, other: &StageTimings) {
        self.fe += other.fe;
        self.cn += other.cn;
        self.vae += other.vae;
        self.sd += other.sd;
        self.ss += other.ss;
        self.fm += other.fm;
    }

    pub fn scaled(&self, f: f64) -> StageTimings {
        StageTimings {
            fe: self.fe * f,
            cn: self.cn * f,
            vae: self.vae * f,
            sd: self.sd * f,
            ss: self.ss * f,
            fm: self.fm * f,
        }
    }
}

/// The assembled scene-completion pipeline.
pub struct FullPipeline<E: Scalar> {
    pub spec: NetworkSpec,
    pub feature_extractor: FeatureExtractor<E>,
    pub cond_a: ConditionNetwork<E>,
    pub cond_b: ConditionNetwork<E>,
    pub vae: Vae<E>,
    pub denoiser: DenoisingNetwork<E>,
    pub segmenter: Segmenter<E>,
    pub schedule: NoiseSchedule,
}

impl<E: Scalar> FullPipeline<E> {
    /// Each sub-network draws its initialization from an independent stream
    /// derived from `rng`, so ablating one block never shifts the weights of
    /// the others under the same seed.
    pub fn new(spec: NetworkSpec, schedule: NoiseSchedule, rng: &mut impl Rng) -> Result<Self> {
        use rand::SeedableRng;
        spec.validate()?;
        let mut stream = || rand_chacha::ChaCha8Rng::seed_from_u64(rng.gen());
        let (mut r_fe, mut r_ca, mut r_cb, mut r_vae, mut r_den, mut r_seg) =
            (stream(), stream(), stream(), stream(), stream(), stream());
        let cond_stage = [spec.vae_channels[0], spec.vae_channels[1]];
        Ok(FullPipeline {
            feature_extractor: FeatureExtractor::new(&spec, &mut r_fe)?,
            cond_a: ConditionNetwork::new("cond_a", spec.feat_channels, cond_stage, spec.cond_channels, &mut r_ca),
            cond_b: ConditionNetwork::new("cond_b", spec.feat_channels, cond_stage, spec.cond_channels, &mut r_cb),
            vae: Vae::new(
                VaeConfig {
                    class_count: spec.class_count,
                    channels: spec.vae_channels,
                    latent_channels: spec.latent_channels,
                },
                &mut r_vae,
            ),
            denoiser: build_denoiser(&spec, &mut r_den)?,
            segmenter: build_segmenter(&spec, &mut r_seg)?,
            schedule,
            spec,
        })
    }

    /// Conditioning volume from extracted features: the two condition
    /// networks' outputs, channel-concatenated.
    pub fn condition(&self, features: &Tensor<E>) -> Result<Tensor<E>> {
        let a = self.cond_a.forward(features)?;
        let b = self.cond_b.forward(features)?;
        Tensor::concat(&[&a, &b], 0).map_err(Into::into)
    }

    /// image + camera -> predicted grid, with per-stage wall-clock times.
    pub fn run(
        &self,
        image: &Tensor<E>,
        cam: &CameraModel,
        rng: &mut impl Rng,
        steps_override: Option<usize>,
    ) -> Result<(VoxelGrid, StageTimings)> {
        let schedule = match steps_override {
            Some(steps) if steps != self.schedule.steps => NoiseSchedule::linear(
                steps,
                self.schedule.betas[0],
                *self.schedule.betas.last().unwrap(),
            )?,
            _ => self.schedule.clone(),
        };
        let mut timings = StageTimings::default();
        let total = Instant::now();

        let t0 = Instant::now();
        let features = self.feature_extractor.forward(image, cam)?.detach();
        timings.fe = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let cond = self.condition(&features)?.detach();
        timings.cn = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let latent = sample(&self.denoiser, &schedule, &cond, &self.spec.latent_shape(), rng)?;
        timings.sd = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let logits = self.vae.decode(&latent)?.detach();
        let completed = VoxelGrid::from_logits(&logits, self.spec.voxel_size)?;
        timings.vae = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let occupancy = completed.occupancy_one_hot::<E>();
        let seg_logits = self.segmenter.forward(&occupancy)?.detach();
        let predicted = VoxelGrid::from_logits(&seg_logits, self.spec.voxel_size)?;
        timings.ss = t0.elapsed().as_secs_f64();

        timings.fm = total.elapsed().as_secs_f64();
        Ok((predicted, timings))
    }

    /// The completion stage alone: image -> decoded grid (before segmentation).
    pub fn complete(
        &self,
        image: &Tensor<E>,
        cam: &CameraModel,
        rng: &mut impl Rng,
    ) -> Result<VoxelGrid> {
        let features = self.feature_extractor.forward(image, cam)?.detach();
        let cond = self.condition(&features)?.detach();
        let latent = sample(&self.denoiser, &self.schedule, &cond, &self.spec.latent_shape(), rng)?;
        let logits = self.vae.decode(&latent)?.detach();
        VoxelGrid::from_logits(&logits, self.spec.voxel_size)
    }

    /// Parameters of the diffusion stage: denoiser, feature extractor, and
    /// both condition networks (trained jointly; the VAE stays frozen).
    pub fn diffusion_params(&self) -> Vec<Param<E>> {
        let mut out = Vec::new();
        self.denoiser.collect_params(&mut out);
        self.feature_extractor.collect_params(&mut out);
        self.cond_a.collect_params(&mut out);
        self.cond_b.collect_params(&mut out);
        check_unique_names(out)
    }

    pub fn all_params(&self) -> Vec<Param<E>> {
        let mut out = self.diffusion_params();
        self.vae.collect_params(&mut out);
        self.segmenter.collect_params(&mut out);
        check_unique_names(out)
    }
}
