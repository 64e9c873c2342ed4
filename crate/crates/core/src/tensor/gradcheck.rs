//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::RngState;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so coordinates whose
    /// true gradient is ~0 are judged on absolute error.
    pub floor: f64,
    /// Check at most this many coordinates per input (sampled with `seed`).
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-6,
            floor: 1e-3,
            max_coords_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coords_checked: usize,
    /// (input, flat coordinate, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compare the analytic gradient of the scalar `f(inputs)` with central
/// differences, coordinate by coordinate.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], config: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let tracked: Vec<Tensor<f64>> = inputs.iter().map(|t| t.requiring_grad()).collect();
    let out = f(&tracked)?;
    if out.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar-valued function, got shape {:?}",
            out.shape()
        )));
    }
    let grads = out.backward()?;
    let mut rng = RngState::new(config.seed);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        coords_checked: 0,
        worst: None,
        tolerance: config.tolerance,
    };
    for (which, input) in tracked.iter().enumerate() {
        let analytic = grads.tensor(input).to_vec();
        let n = input.numel();
        let coords: Vec<usize> = match config.max_coords_per_input {
            Some(limit) if limit < n => {
                let mut c = sample(&mut rng, n, limit).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for coord in coords {
            let eval_at = |delta: f64| -> Result<f64> {
                let mut data = input.to_vec();
                data[coord] += delta;
                let mut args: Vec<Tensor<f64>> = inputs.to_vec();
                args[which] = Tensor::new(data, input.shape())?;
                f(&args)?.item()
            };
            let numeric = (eval_at(config.step)? - eval_at(-config.step)?) / (2.0 * config.step);
            let a = analytic[coord];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(config.floor);
            report.coords_checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((which, coord, a, numeric));
            }
        }
    }
    Ok(report)
}
