//! f64 central finite-difference checks through every model component:
//! scans, STM, Skimba block, conv blocks, losses, VAE, denoiser, segmenter,
//! fuse, and the 2D-to-3D projection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skimba_model::blocks::{
    BlockConfig, ConvResBlock, DdrBlock, DownsampleBlock, Mscb, SemanticBlock, UpsampleBlock,
};
use skimba_model::camera::{axis_aligned_camera, project_2d_to_3d, GridGeometry};
use skimba_model::diffusion::{denoise_loss_at, MscbFuse, NoiseSchedule};
use skimba_model::loss::{combined_seg_loss, cross_entropy, lovasz_softmax};
use skimba_model::net::{build_denoiser, build_segmenter, NetworkSpec};
use skimba_model::scan::{
    dilated_scan, flatten_direction, sequential_scan, Direction, ScanParams, SkimbaBlock, StmLayer,
};
use skimba_model::vae::{kl_divergence, Vae, VaeConfig};
use skimba_model::voxel::VoxelGrid;
use skimba_tensor::gradcheck::{assert_param_gradcheck, GradCheckConfig};
use skimba_tensor::{Param, Tensor};

fn cfg() -> GradCheckConfig {
    GradCheckConfig::default()
}

fn subsampled(max: usize) -> GradCheckConfig {
    GradCheckConfig { max_elements_per_input: max, ..GradCheckConfig::default() }
}

/// Check gradients w.r.t. a set of parameters plus an input (wrapped as a
/// parameter so one code path drives both).
fn check<F>(loss_fn: F, params: &[Param<f64>], cfg: &GradCheckConfig)
where
    F: Fn() -> skimba_tensor::Result<Tensor<f64>>,
{
    assert_param_gradcheck(|| loss_fn().map_err(Into::into), params, cfg);
}

fn weighted_sum(y: &Tensor<f64>, rng: &mut ChaCha8Rng) -> skimba_tensor::Result<Tensor<f64>> {
    let w = Tensor::<f64>::randn(y.shape(), rng).detach();
    y.mul(&w)?.sum_all()
}

#[test]
fn scan_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = ScanParams::<f64>::new("scan", 3, 4, &mut rng);
    let input = Param::new("input", Tensor::<f64>::randn(&[3, 2, 3, 2], &mut rng));
    let w = Tensor::<f64>::randn(&[12, 3], &mut rng);
    let mut all = vec![input.clone()];
    params.collect_params(&mut all);

    for d in [0usize, 1, 3] {
        let loss = || {
            let seq = flatten_direction(&input.value(), Direction::Forward).map_err(to_tensor_err)?;
            let y = dilated_scan(&params, &seq, d).map_err(to_tensor_err)?;
            y.mul(&w)?.sum_all()
        };
        check(loss, &all, &cfg());
    }
}

fn to_tensor_err(e: skimba_model::ModelError) -> skimba_tensor::TensorError {
    skimba_tensor::TensorError::Io(e.to_string())
}

#[test]
fn sequential_scan_gradients_reverse_and_spatial() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = ScanParams::<f64>::new("scan", 2, 3, &mut rng);
    let input = Param::new("input", Tensor::<f64>::randn(&[2, 2, 2, 2], &mut rng));
    let w = Tensor::<f64>::randn(&[8, 2], &mut rng);
    let mut all = vec![input.clone()];
    params.collect_params(&mut all);
    for dir in [Direction::Reverse, Direction::Spatial] {
        let loss = || {
            let seq = flatten_direction(&input.value(), dir).map_err(to_tensor_err)?;
            let y = sequential_scan(&params, &seq).map_err(to_tensor_err)?;
            y.mul(&w)?.sum_all()
        };
        check(loss, &all, &cfg());
    }
}

#[test]
fn stm_layer_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let stm = StmLayer::<f64>::new("stm", 2, 2, 1, &mut rng);
    let input = Param::new("input", Tensor::<f64>::randn(&[2, 2, 2, 2], &mut rng));
    let w = Tensor::<f64>::randn(&[2, 2, 2, 2], &mut rng);
    let mut all = vec![input.clone()];
    stm.collect_params(&mut all);
    let loss = || {
        let y = stm.forward(&input.value()).map_err(to_tensor_err)?;
        y.mul(&w)?.sum_all()
    };
    check(loss, &all, &subsampled(24));
}

#[test]
fn skimba_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let block = SkimbaBlock::<f64>::new("blk", 3, 2, &mut rng);
    let input = Param::new("input", Tensor::<f64>::randn(&[3, 2, 2, 1], &mut rng));
    let w = Tensor::<f64>::randn(&[3, 2, 2, 1], &mut rng);
    let mut all = vec![input.clone()];
    block.collect_params(&mut all);
    let loss = || {
        let y = block.forward(&input.value()).map_err(to_tensor_err)?;
        y.mul(&w)?.sum_all()
    };
    check(loss, &all, &subsampled(12));
}

#[test]
fn ddr_and_semantic_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ddr = DdrBlock::<f64>::new(
        "ddr",
        BlockConfig { in_channels: 2, out_channels: 3, kernel: 3, dilation_rates: vec![2] },
        2,
        &mut rng,
    )
    .unwrap();
    let input = Param::new("input", Tensor::<f64>::randn(&[2, 3, 4, 3], &mut rng));
    let w = Tensor::<f64>::randn(&[3, 3, 4, 3], &mut rng);
    let mut all = vec![input.clone()];
    ddr.collect_params(&mut all);
    check(
        || {
            let y = ddr.forward(&input.value()).map_err(to_tensor_err)?;
            y.mul(&w)?.sum_all()
        },
        &all,
        &subsampled(24),
    );

    let sb = SemanticBlock::<f64>::new("sb", 2, 3, &mut rng).unwrap();
    let w2 = Tensor::<f64>::randn(&[2, 3, 4, 3], &mut rng);
    let mut all = vec![input.clone()];
    sb.collect_params(&mut all);
    check(
        || {
            let y = sb.forward(&input.value()).map_err(to_tensor_err)?;
            y.mul(&w2)?.sum_all()
        },
        &all,
        &subsampled(16),
    );
}

#[test]
fn mscb_and_updown_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mscb = Mscb::<f64>::new("m", 2, 3, 5, &mut rng).unwrap();
    let input = Param::new("input", Tensor::<f64>::randn(&[2, 3, 3, 3], &mut rng));
    let w = Tensor::<f64>::randn(&[3, 3, 3, 3], &mut rng);
    let mut all = vec![input.clone()];
    mscb.collect_params(&mut all);
    check(
        || {
            let y = mscb.forward(&input.value()).map_err(to_tensor_err)?;
            y.mul(&w)?.sum_all()
        },
        &all,
        &subsampled(16),
    );

    let down = DownsampleBlock::<f64>::new("down", 2, 3, &mut rng);
    let dinput = Param::new("dinput", Tensor::<f64>::randn(&[2, 4, 4, 4], &mut rng));
    let wd = Tensor::<f64>::randn(&[3, 2, 2, 2], &mut rng);
    let mut all = vec![dinput.clone()];
    down.collect_params(&mut all);
    check(
        || {
            let y = down.forward(&dinput.value()).map_err(to_tensor_err)?;
            y.mul(&wd)?.sum_all()
        },
        &all,
        &subsampled(16),
    );

    let res = ConvResBlock::<f64>::new("res", 2, 2, &mut rng);
    let wr = Tensor::<f64>::randn(&[2, 4, 4, 4], &mut rng);
    let mut all = vec![dinput.clone()];
    res.collect_params(&mut all);
    check(
        || {
            let y = res.forward(&dinput.value()).map_err(to_tensor_err)?;
            y.mul(&wr)?.sum_all()
        },
        &all,
        &subsampled(16),
    );

    let up = UpsampleBlock::<f64>::new("up", 2, 2, &mut rng);
    let uinput = Param::new("uinput", Tensor::<f64>::randn(&[2, 2, 2, 2], &mut rng));
    let wu = Tensor::<f64>::randn(&[2, 4, 4, 4], &mut rng);
    let mut all = vec![uinput.clone()];
    up.collect_params(&mut all);
    check(
        || {
            let y = up.forward(&uinput.value()).map_err(to_tensor_err)?;
            y.mul(&wu)?.sum_all()
        },
        &all,
        &subsampled(16),
    );
}

#[test]
fn loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let labels = vec![0u8, 1, 2, 1, 0, 2];
    let logits = Param::new("logits", Tensor::<f64>::randn(&[3, 6], &mut rng));
    check(
        || cross_entropy(&logits.value(), &labels).map_err(to_tensor_err),
        std::slice::from_ref(&logits),
        &cfg(),
    );
    check(
        || {
            lovasz_softmax(&logits.value().softmax(0)?, &labels).map_err(to_tensor_err)
        },
        std::slice::from_ref(&logits),
        &cfg(),
    );
    check(
        || combined_seg_loss(&logits.value(), &labels, 1.0).map_err(to_tensor_err),
        std::slice::from_ref(&logits),
        &cfg(),
    );
    let mean = Param::new("mean", Tensor::<f64>::randn(&[5], &mut rng));
    let log_var = Param::new("log_var", Tensor::<f64>::randn(&[5], &mut rng));
    check(
        || kl_divergence(&mean.value(), &log_var.value()).map_err(to_tensor_err),
        &[mean.clone(), log_var.clone()],
        &cfg(),
    );
}

#[test]
fn vae_reconstruction_gradients_on_tiny_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let vae = Vae::<f64>::new(VaeConfig { class_count: 3, channels: [3, 4], latent_channels: 2 }, &mut rng);
    // fill enough voxels that per-channel variances stay away from zero;
    // near-constant channels drive instance-norm curvature so high that
    // central differences lose accuracy
    let mut grid = VoxelGrid::new_empty([4, 4, 4], 0.2, 3);
    use rand::Rng;
    for l in 0..4 {
        for w in 0..4 {
            for h in 0..4 {
                grid.set(l, w, h, rng.gen_range(0..3) as u8);
            }
        }
    }
    let labels = grid.labels().to_vec();
    let params = vae.params();
    let loss = || {
        let lat = vae.encode_deterministic(&grid).map_err(to_tensor_err)?;
        let logits = vae.decode(&lat.z).map_err(to_tensor_err)?;
        let v = grid.volume();
        let flat = logits.reshape(&[3, v])?;
        let ce = cross_entropy(&flat, &labels).map_err(to_tensor_err)?;
        let kl = kl_divergence(&lat.mean, &lat.log_var).map_err(to_tensor_err)?;
        ce.add(&kl.mul_scalar(1e-6)?)
    };
    let cfg = GradCheckConfig { eps: 1e-5, max_elements_per_input: 6, ..GradCheckConfig::default() };
    check(loss, &params, &cfg);
}

#[test]
fn condition_network_and_projection_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cond = skimba_model::vae::ConditionNetwork::<f64>::new("cond", 2, [3, 4], 3, &mut rng);
    let input = Param::new("input", Tensor::<f64>::randn(&[2, 4, 4, 4], &mut rng));
    let w = Tensor::<f64>::randn(&[3, 1, 1, 1], &mut rng);
    let mut all = vec![input.clone()];
    cond.collect_params(&mut all);
    check(
        || {
            let y = cond.forward(&input.value()).map_err(to_tensor_err)?;
            y.mul(&w)?.sum_all()
        },
        &all,
        &subsampled(10),
    );

    // bilinear back-projection is linear in the features
    let cam = axis_aligned_camera([0.8, 0.8, -2.0], 8.0, 8.0, 10, 8);
    let grid = GridGeometry { dims: [2, 2, 2], voxel_size: 0.8 };
    let feats = Param::new("feats", Tensor::<f64>::randn(&[2, 8, 10], &mut rng));
    let w = Tensor::<f64>::randn(&[2, 2, 2, 2], &mut rng);
    check(
        || {
            let y = project_2d_to_3d(&feats.value(), &cam, &grid).map_err(to_tensor_err)?;
            y.mul(&w)?.sum_all()
        },
        std::slice::from_ref(&feats),
        &cfg(),
    );
}

#[test]
fn denoiser_end_to_end_gradients_on_tiny_latent() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let spec = NetworkSpec {
        class_count: 3,
        grid_dims: [16, 16, 8],
        voxel_size: 0.5,
        image_width: 8,
        image_height: 6,
        feat_channels: 2,
        latent_channels: 2,
        cond_channels: 2,
        vae_channels: [3, 4],
        denoiser_channels: vec![3, 4],
        seg_channels: vec![3, 4],
        state_size: 2,
        use_mscb: true,
        use_sb: true,
        use_skimba: true,
    };
    let net = build_denoiser::<f64>(&spec, &mut rng).unwrap();
    let x0 = Tensor::<f64>::randn(&[2, 4, 4, 2], &mut rng);
    let cond = Tensor::<f64>::randn(&[4, 4, 4, 2], &mut rng);
    let eps = Tensor::<f64>::randn(&[2, 4, 4, 2], &mut rng);
    let schedule = NoiseSchedule::default_schedule();
    let params = net.params();
    check(
        || denoise_loss_at(&net, &schedule, &x0, &cond, 40, &eps).map_err(to_tensor_err),
        &params,
        &subsampled(3),
    );
}

#[test]
fn fuse_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let fuse = MscbFuse::<f64>::new("fuse", 2, 3, 4, true, &mut rng).unwrap();
    let x = Param::new("x", Tensor::<f64>::randn(&[2, 2, 2, 2], &mut rng));
    let cond = Param::new("cond", Tensor::<f64>::randn(&[3, 2, 2, 2], &mut rng));
    let w = Tensor::<f64>::randn(&[4, 2, 2, 2], &mut rng);
    let mut all = vec![x.clone(), cond.clone()];
    fuse.collect_params(&mut all);
    check(
        || {
            let y = fuse.forward(&x.value(), &cond.value(), 7).map_err(to_tensor_err)?;
            y.mul(&w)?.sum_all()
        },
        &all,
        &subsampled(12),
    );
}

#[test]
fn segmenter_gradients_on_tiny_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let spec = NetworkSpec {
        class_count: 3,
        grid_dims: [8, 8, 4],
        voxel_size: 0.5,
        image_width: 8,
        image_height: 6,
        feat_channels: 2,
        latent_channels: 2,
        cond_channels: 2,
        vae_channels: [3, 4],
        denoiser_channels: vec![3, 4],
        seg_channels: vec![3, 4],
        state_size: 2,
        use_mscb: true,
        use_sb: true,
        use_skimba: true,
    };
    // segmenter runs at grid resolution; skip the denoiser geometry check by
    // validating only what the segmenter needs
    let seg = build_segmenter::<f64>(&spec, &mut rng);
    let seg = match seg {
        Ok(s) => s,
        Err(_) => {
            // 8x8x4 latent is 2x2x1 which fails denoiser validation; rebuild
            // with a grid the shared validator accepts
            let spec2 = NetworkSpec { grid_dims: [16, 16, 8], ..spec };
            build_segmenter::<f64>(&spec2, &mut rng).unwrap()
        }
    };
    let mut grid = VoxelGrid::new_empty([8, 8, 4], 0.5, 3);
    for (l, w, h, c) in [(0, 0, 0, 1), (3, 4, 2, 2), (7, 7, 3, 1), (2, 6, 1, 2)] {
        grid.set(l, w, h, c);
    }
    let occupancy = grid.occupancy_one_hot::<f64>();
    let labels = grid.labels().to_vec();
    let params = seg.params();
    check(
        || {
            let logits = seg.forward(&occupancy).map_err(to_tensor_err)?;
            let flat = logits.reshape(&[3, 8 * 8 * 4])?;
            combined_seg_loss(&flat, &labels, 1.0).map_err(to_tensor_err)
        },
        &params,
        &subsampled(3),
    );
}
