//! Central finite-difference verification of every differentiable op, run at
//! f64 where the numeric derivative is trustworthy, plus the f32 spot check
//! of a composite MLP loss at a looser tolerance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skimba_tensor::gradcheck::{assert_gradcheck, GradCheckConfig};
use skimba_tensor::{Result, Tensor};

fn cfg() -> GradCheckConfig {
    GradCheckConfig::default()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random shapes used by the elementwise checks; three per op as the contract
/// asks.
const SHAPES: [&[usize]; 3] = [&[3], &[2, 4], &[2, 3, 2]];

#[test]
fn elementwise_binary_grads() {
    let mut r = rng(10);
    for shape in SHAPES {
        let a = Tensor::<f64>::randn(shape, &mut r);
        let b = Tensor::<f64>::rand_uniform(shape, 0.5, 2.0, &mut r);
        assert_gradcheck(|xs| xs[0].add(&xs[1])?.mul(&xs[0])?.sum_all(), &[a.clone(), b.clone()], &cfg());
        assert_gradcheck(|xs| xs[0].sub(&xs[1])?.sum_all(), &[a.clone(), b.clone()], &cfg());
        assert_gradcheck(|xs| xs[0].mul(&xs[1])?.sum_all(), &[a.clone(), b.clone()], &cfg());
        assert_gradcheck(|xs| xs[0].div(&xs[1])?.sum_all(), &[a.clone(), b.clone()], &cfg());
    }
}

#[test]
fn broadcast_binary_grads() {
    let mut r = rng(11);
    let a = Tensor::<f64>::randn(&[3, 4], &mut r);
    let b = Tensor::<f64>::rand_uniform(&[4], 0.5, 1.5, &mut r);
    assert_gradcheck(|xs| xs[0].mul(&xs[1])?.sum_all(), &[a.clone(), b.clone()], &cfg());
    let c = Tensor::<f64>::randn(&[3, 1], &mut r);
    assert_gradcheck(|xs| xs[0].add(&xs[1])?.mul(&xs[0])?.sum_all(), &[a, c], &cfg());
}

#[test]
fn unary_grads() {
    let mut r = rng(12);
    for shape in SHAPES {
        let x = Tensor::<f64>::rand_uniform(shape, 0.3, 2.0, &mut r);
        assert_gradcheck(|xs| xs[0].neg()?.mul(&xs[0])?.sum_all(), std::slice::from_ref(&x), &cfg());
        assert_gradcheck(|xs| xs[0].exp()?.sum_all(), std::slice::from_ref(&x), &cfg());
        assert_gradcheck(|xs| xs[0].ln()?.sum_all(), std::slice::from_ref(&x), &cfg());
        assert_gradcheck(|xs| xs[0].sqrt()?.sum_all(), std::slice::from_ref(&x), &cfg());
        assert_gradcheck(|xs| xs[0].softplus()?.sum_all(), std::slice::from_ref(&x), &cfg());
        assert_gradcheck(|xs| xs[0].silu()?.sum_all(), std::slice::from_ref(&x), &cfg());
        assert_gradcheck(|xs| xs[0].affine(1.7, -0.3)?.sum_all(), std::slice::from_ref(&x), &cfg());
    }
}

#[test]
fn leaky_relu_grad_away_from_kink() {
    let mut r = rng(13);
    // keep samples off the kink so the numeric derivative is valid
    let raw = Tensor::<f64>::rand_uniform(&[24], 0.2, 1.5, &mut r);
    let signs = Tensor::<f64>::from_vec(
        &[24],
        (0..24).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect(),
    )
    .unwrap();
    let x = raw.mul(&signs).unwrap().detach();
    assert_gradcheck(|xs| xs[0].leaky_relu(0.01)?.sum_all(), &[x], &cfg());
}

#[test]
fn matmul_grad_vs_finite_differences() {
    let mut r = rng(14);
    let a = Tensor::<f64>::randn(&[3, 4], &mut r);
    let b = Tensor::<f64>::randn(&[4, 2], &mut r);
    // weight the product so the grad is not uniform
    let w = Tensor::<f64>::randn(&[3, 2], &mut r);
    assert_gradcheck(
        |xs| xs[0].matmul(&xs[1])?.mul(&w)?.sum_all(),
        &[a, b],
        &cfg(),
    );
}

#[test]
fn movement_op_grads() {
    let mut r = rng(15);
    let x = Tensor::<f64>::randn(&[2, 3, 4], &mut r);
    let w = Tensor::<f64>::randn(&[4, 3, 2], &mut r);
    assert_gradcheck(
        |xs| xs[0].permute(&[2, 1, 0])?.mul(&w)?.sum_all(),
        std::slice::from_ref(&x),
        &cfg(),
    );
    let w2 = Tensor::<f64>::randn(&[24], &mut r);
    assert_gradcheck(
        |xs| xs[0].reshape(&[24])?.mul(&w2)?.sum_all(),
        std::slice::from_ref(&x),
        &cfg(),
    );
    let w3 = Tensor::<f64>::randn(&[2, 3, 4], &mut r);
    assert_gradcheck(
        |xs| xs[0].flip(1)?.mul(&w3)?.sum_all(),
        std::slice::from_ref(&x),
        &cfg(),
    );
    let w4 = Tensor::<f64>::randn(&[2, 5, 4], &mut r);
    assert_gradcheck(
        |xs| xs[0].index_select(1, &[0, 2, 2, 1, 0])?.mul(&w4)?.sum_all(),
        std::slice::from_ref(&x),
        &cfg(),
    );
    let w5 = Tensor::<f64>::randn(&[2, 2, 4], &mut r);
    assert_gradcheck(
        |xs| xs[0].narrow(1, 1, 2)?.mul(&w5)?.sum_all(),
        std::slice::from_ref(&x),
        &cfg(),
    );
    let y = Tensor::<f64>::randn(&[2, 2, 4], &mut r);
    let w6 = Tensor::<f64>::randn(&[2, 5, 4], &mut r);
    assert_gradcheck(
        |xs| Tensor::concat(&[&xs[0], &xs[1]], 1)?.mul(&w6)?.sum_all(),
        &[x, y],
        &cfg(),
    );
}

#[test]
fn reduction_and_softmax_grads() {
    let mut r = rng(16);
    let x = Tensor::<f64>::randn(&[3, 5], &mut r);
    assert_gradcheck(|xs| xs[0].mul(&xs[0])?.mean_all(), std::slice::from_ref(&x), &cfg());
    let w = Tensor::<f64>::randn(&[3, 5], &mut r);
    assert_gradcheck(
        |xs| xs[0].softmax(1)?.mul(&w)?.sum_all(),
        std::slice::from_ref(&x),
        &cfg(),
    );
    assert_gradcheck(
        |xs| xs[0].softmax(0)?.mul(&w)?.sum_all(),
        std::slice::from_ref(&x),
        &cfg(),
    );
    assert_gradcheck(
        |xs| xs[0].log_softmax(1)?.mul(&w)?.sum_all(),
        std::slice::from_ref(&x),
        &cfg(),
    );
}

#[test]
fn conv3d_grads_vs_finite_differences() {
    let mut r = rng(17);
    for &(stride, pad, dil) in &[([1usize; 3], [1usize; 3], [1usize; 3]), ([2, 2, 1], [1, 0, 1], [1, 1, 2])] {
        let x = Tensor::<f64>::randn(&[2, 4, 4, 5], &mut r);
        let w = Tensor::<f64>::randn(&[3, 2, 3, 3, 3], &mut r).mul_scalar(0.3).unwrap().detach();
        let b = Tensor::<f64>::randn(&[3], &mut r);
        assert_gradcheck(
            |xs| {
                let y = xs[0].conv3d(&xs[1], Some(&xs[2]), stride, pad, dil)?;
                y.mul(&y)?.sum_all()
            },
            &[x, w, b],
            &cfg(),
        );
    }
}

#[test]
fn conv_transpose3d_grads_vs_finite_differences() {
    let mut r = rng(18);
    let x = Tensor::<f64>::randn(&[3, 3, 3, 2], &mut r);
    let w = Tensor::<f64>::randn(&[3, 2, 2, 2, 2], &mut r).mul_scalar(0.4).unwrap().detach();
    assert_gradcheck(
        |xs| {
            let y = xs[0].conv_transpose3d(&xs[1], [2, 2, 2])?;
            y.mul(&y)?.sum_all()
        },
        &[x, w],
        &cfg(),
    );
}

#[test]
fn norm_grads_vs_finite_differences() {
    let mut r = rng(19);
    let x = Tensor::<f64>::randn(&[3, 6], &mut r);
    let g = Tensor::<f64>::rand_uniform(&[6], 0.5, 1.5, &mut r);
    let b = Tensor::<f64>::randn(&[6], &mut r);
    let w = Tensor::<f64>::randn(&[3, 6], &mut r);
    assert_gradcheck(
        |xs| xs[0].layer_norm(1, &xs[1], &xs[2])?.mul(&w)?.sum_all(),
        &[x, g, b],
        &cfg(),
    );
    let v = Tensor::<f64>::randn(&[2, 3, 2, 4], &mut r);
    let wv = Tensor::<f64>::randn(&[2, 3, 2, 4], &mut r);
    assert_gradcheck(
        |xs| xs[0].instance_norm()?.mul(&wv)?.sum_all(),
        std::slice::from_ref(&v),
        &cfg(),
    );
}

/// The composite-MLP check at default (f32) precision: rel err < 1e-3.
#[test]
fn f32_mlp_composite_loss() {
    let mut r = rng(20);
    let x = Tensor::<f32>::randn(&[2, 6], &mut r);
    let w1 = Tensor::<f32>::randn_scaled(&[6, 8], 0.5, &mut r);
    let b1 = Tensor::<f32>::zeros(&[8]);
    let w2 = Tensor::<f32>::randn_scaled(&[8, 3], 0.5, &mut r);
    let f32_cfg = GradCheckConfig { eps: 3e-3, rel_tol: 1e-3, abs_floor: 1e-4, max_elements_per_input: 0 };
    let forward = |xs: &[Tensor<f32>]| -> Result<Tensor<f32>> {
        let h = xs[0].matmul(&xs[1])?.add(&xs[2])?.silu()?;
        let y = h.matmul(&xs[3])?;
        y.mul(&y)?.mean_all()
    };
    assert_gradcheck(forward, &[x, w1, b1, w2], &f32_cfg);
}

/// Backward through a shared subgraph reached twice accumulates, and a second
/// backward call doubles leaf gradients.
#[test]
fn backward_accumulation_contract() {
    let mut r = rng(21);
    let x = Tensor::<f64>::randn(&[4], &mut r).requires_grad();
    let y = x.exp().unwrap();
    let loss = y.mul(&y).unwrap().sum_all().unwrap();
    loss.backward().unwrap();
    let g1 = x.grad().unwrap();
    loss.backward().unwrap();
    let g2 = x.grad().unwrap();
    for (a, b) in g1.iter().zip(&g2) {
        assert!((2.0 * a - b).abs() < 1e-12);
    }
}
