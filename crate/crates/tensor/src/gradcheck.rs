//! Central finite-difference gradient checking.
//!
//! The checker only ever runs forward passes of the function under test, so
//! it is independent of the backward implementation it verifies. Meant to be
//! driven at f64, where central differences resolve ~1e-10 relative error.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct GradCheckConfig {
    /// Perturbation size for central differences.
    pub eps: f64,
    /// Maximum allowed relative error.
    pub rel_tol: f64,
    /// Differences below this are accepted regardless of relative error.
    pub abs_floor: f64,
    /// Check at most this many elements per input (all when 0).
    pub max_elements_per_input: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-4, rel_tol: 1e-4, abs_floor: 1e-6, max_elements_per_input: 0 }
    }
}

#[derive(Debug)]
pub struct GradCheckFailure {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

impl std::fmt::Display for GradCheckFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "input {} element {}: analytic {:.6e}, numeric {:.6e}, rel err {:.3e}",
            self.input, self.element, self.analytic, self.numeric, self.rel_err
        )
    }
}

/// Compare the backward pass of `f` against central finite differences at
/// each checked element of each input. Returns all failures (empty = pass).
///
/// `f` is called with leaves marked `requires_grad`; it must be deterministic.
pub fn gradcheck<E, F>(f: F, inputs: &[Tensor<E>], cfg: &GradCheckConfig) -> Result<Vec<GradCheckFailure>>
where
    E: Scalar,
    F: Fn(&[Tensor<E>]) -> Result<Tensor<E>>,
{
    // analytic gradients
    let tracked: Vec<Tensor<E>> = inputs.iter().map(|t| t.requires_grad()).collect();
    let loss = f(&tracked)?;
    assert_eq!(loss.len(), 1, "gradcheck requires a scalar loss");
    loss.backward()?;
    let analytic: Vec<Vec<E>> = tracked
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![E::ZERO; t.len()]))
        .collect();

    let eval = |xs: &[Tensor<E>]| -> Result<f64> {
        let out = f(xs)?;
        Ok(out.item().to_f64())
    };

    let mut failures = Vec::new();
    let base: Vec<Tensor<E>> = inputs.iter().map(|t| t.detach()).collect();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let stride = if cfg.max_elements_per_input > 0 && n > cfg.max_elements_per_input {
            n.div_ceil(cfg.max_elements_per_input)
        } else {
            1
        };
        for j in (0..n).step_by(stride) {
            let mut plus = input.to_vec();
            let mut minus = input.to_vec();
            plus[j] += E::from_f64(cfg.eps);
            minus[j] = minus[j] - E::from_f64(cfg.eps);
            let mut xs = base.clone();
            xs[i] = Tensor::from_vec(input.shape(), plus)?;
            let fp = eval(&xs)?;
            xs[i] = Tensor::from_vec(input.shape(), minus)?;
            let fm = eval(&xs)?;
            let numeric = (fp - fm) / (2.0 * cfg.eps);
            let a = analytic[i][j].to_f64();
            let diff = (a - numeric).abs();
            if diff <= cfg.abs_floor {
                continue;
            }
            let rel = diff / a.abs().max(numeric.abs()).max(cfg.abs_floor);
            if rel >= cfg.rel_tol {
                failures.push(GradCheckFailure {
                    input: i,
                    element: j,
                    analytic: a,
                    numeric,
                    rel_err: rel,
                });
            }
        }
    }
    Ok(failures)
}

/// Panic with a readable report if any checked element disagrees.
pub fn assert_gradcheck<E, F>(f: F, inputs: &[Tensor<E>], cfg: &GradCheckConfig)
where
    E: Scalar,
    F: Fn(&[Tensor<E>]) -> Result<Tensor<E>>,
{
    let failures = gradcheck(f, inputs, cfg).expect("gradcheck forward failed");
    if !failures.is_empty() {
        let head: Vec<String> = failures.iter().take(5).map(|f| f.to_string()).collect();
        panic!("{} gradient mismatches, first few:\n{}", failures.len(), head.join("\n"));
    }
}

/// Finite-difference check of a loss against the gradients accumulated on
/// named parameters. `loss_fn` must be deterministic; parameter values are
/// restored afterwards. Returns failures tagged with the parameter index.
pub fn param_gradcheck<E, F>(
    loss_fn: F,
    params: &[crate::param::Param<E>],
    cfg: &GradCheckConfig,
) -> Result<Vec<(String, GradCheckFailure)>>
where
    E: Scalar,
    F: Fn() -> Result<Tensor<E>>,
{
    for p in params {
        p.clear_grad();
    }
    let loss = loss_fn()?;
    assert_eq!(loss.len(), 1, "param_gradcheck requires a scalar loss");
    loss.backward()?;
    let analytic: Vec<Vec<E>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![E::ZERO; p.value().len()]))
        .collect();

    let mut failures = Vec::new();
    for (i, p) in params.iter().enumerate() {
        let original = p.value().to_vec();
        let n = original.len();
        let stride = if cfg.max_elements_per_input > 0 && n > cfg.max_elements_per_input {
            n.div_ceil(cfg.max_elements_per_input)
        } else {
            1
        };
        for j in (0..n).step_by(stride) {
            let mut plus = original.clone();
            plus[j] += E::from_f64(cfg.eps);
            p.set_data(plus);
            let fp = loss_fn()?.item().to_f64();
            let mut minus = original.clone();
            minus[j] = minus[j] - E::from_f64(cfg.eps);
            p.set_data(minus);
            let fm = loss_fn()?.item().to_f64();
            p.set_data(original.clone());
            let numeric = (fp - fm) / (2.0 * cfg.eps);
            let a = analytic[i][j].to_f64();
            let diff = (a - numeric).abs();
            if diff <= cfg.abs_floor {
                continue;
            }
            let rel = diff / a.abs().max(numeric.abs()).max(cfg.abs_floor);
            if rel >= cfg.rel_tol {
                failures.push((
                    p.name(),
                    GradCheckFailure { input: i, element: j, analytic: a, numeric, rel_err: rel },
                ));
            }
        }
    }
    Ok(failures)
}

/// Panic with a readable report if any parameter gradient disagrees.
pub fn assert_param_gradcheck<E, F>(loss_fn: F, params: &[crate::param::Param<E>], cfg: &GradCheckConfig)
where
    E: Scalar,
    F: Fn() -> Result<Tensor<E>>,
{
    let failures = param_gradcheck(loss_fn, params, cfg).expect("param_gradcheck forward failed");
    if !failures.is_empty() {
        let head: Vec<String> =
            failures.iter().take(5).map(|(n, f)| format!("{n}: {f}")).collect();
        panic!("{} parameter-gradient mismatches, first few:\n{}", failures.len(), head.join("\n"));
    }
}
