//! Monte-Carlo and closed-form oracles for the forward process, the
//! objective, and the sampler.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skimba_model::diffusion::{
    denoise_loss, forward_diffuse, sample, Denoiser, NoiseSchedule,
};
use skimba_model::Result;
use skimba_tensor::{sample_standard_normal, Tensor};

#[test]
fn default_schedule_terminal_alpha_bar_is_small() {
    // independent product over the same linear ramp
    let steps = 100usize;
    let (b0, b1) = (1e-3f64, 0.2f64);
    let mut prod = 1.0f64;
    for t in 0..steps {
        let beta = b0 + (b1 - b0) * t as f64 / (steps - 1) as f64;
        prod *= 1.0 - beta;
    }
    assert!(prod < 0.05, "independent alpha_bar_T = {prod}");
    let s = NoiseSchedule::default_schedule();
    assert!((s.alpha_bar(steps) - prod).abs() < 1e-12);
}

#[test]
fn forward_moments_match_closed_form() {
    let s = NoiseSchedule::default_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0 = Tensor::<f64>::from_vec(&[1], vec![0.7]).unwrap();
    let n = 10_000usize;
    for t in [5usize, 50, 100] {
        let ab = s.alpha_bar(t);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let eps = Tensor::from_vec(&[1], vec![sample_standard_normal(&mut rng)]).unwrap();
            let v = forward_diffuse(&s, &x0, t, &eps).unwrap().item();
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let want_mean = ab.sqrt() * 0.7;
        let want_var = 1.0 - ab;
        let se_mean = (want_var / n as f64).sqrt();
        let se_var = want_var * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!(
            (mean - want_mean).abs() < 3.0 * se_mean,
            "t={t}: mean {mean} vs {want_mean} (3se {})",
            3.0 * se_mean
        );
        assert!(
            (var - want_var).abs() < 3.0 * se_var,
            "t={t}: var {var} vs {want_var} (3se {})",
            3.0 * se_var
        );
    }
}

struct ZeroNet;
impl Denoiser<f64> for ZeroNet {
    fn predict(&self, x_t: &Tensor<f64>, _t: usize, _cond: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(Tensor::zeros(x_t.shape()))
    }
}

#[test]
fn zero_predictor_loss_is_unit_noise_variance() {
    let s = NoiseSchedule::default_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x0 = Tensor::<f64>::zeros(&[4]);
    let cond = Tensor::<f64>::zeros(&[1]);
    let n = 10_000usize;
    let mut total = 0.0;
    for _ in 0..n {
        total += denoise_loss(&ZeroNet, &s, &x0, &cond, &mut rng).unwrap().item();
    }
    let mean = total / n as f64;
    assert!((mean - 1.0).abs() < 0.05, "zero-predictor loss {mean}");
}

/// Oracle that knows the one memorized x0 and predicts eps exactly.
struct PointOracle {
    schedule: NoiseSchedule,
    x0: Vec<f64>,
    evals: AtomicUsize,
}

impl Denoiser<f64> for PointOracle {
    fn predict(&self, x_t: &Tensor<f64>, t: usize, _cond: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        let ab = self.schedule.alpha_bar(t);
        let data: Vec<f64> = x_t
            .data()
            .iter()
            .zip(&self.x0)
            .map(|(&xt, &x0)| (xt - ab.sqrt() * x0) / (1.0 - ab).sqrt())
            .collect();
        Ok(Tensor::from_vec(x_t.shape(), data).unwrap())
    }
}

#[test]
fn point_oracle_sampling_recovers_x0_in_exactly_t_evals() {
    let schedule = NoiseSchedule::default_schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = Tensor::<f64>::randn(&[2, 2, 2, 1], &mut rng);
    let oracle =
        PointOracle { schedule: schedule.clone(), x0: x0.to_vec(), evals: AtomicUsize::new(0) };
    let cond = Tensor::<f64>::zeros(&[1]);
    let out = sample(&oracle, &schedule, &cond, &[2, 2, 2, 1], &mut rng).unwrap();
    assert_eq!(oracle.evals.load(Ordering::Relaxed), 100, "one eval per step");
    let rmse = (out
        .data()
        .iter()
        .zip(x0.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / out.len() as f64)
        .sqrt();
    assert!(rmse < 0.1, "sampling should recover the memorized x0, rmse {rmse}");
}
