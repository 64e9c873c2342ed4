use crate::error::{input_err, Result};

/// Cosine decay from `lr_max` at step 0 to `lr_min` at `total_steps`.
pub fn lr_at_step(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(input_err!("schedule needs at least one step"));
    }
    if step > total_steps {
        return Err(input_err!("step {} beyond schedule of {}", step, total_steps));
    }
    let progress = step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Cosine schedule preceded by a linear ramp over `warmup` steps.
pub fn lr_with_warmup(step: usize, total_steps: usize, warmup: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if step < warmup {
        lr_at_step(0, total_steps, lr_max, lr_min)?;
        return Ok(lr_max * (step + 1) as f64 / warmup as f64);
    }
    lr_at_step(step, total_steps, lr_max, lr_min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(lr_at_step(0, 100, 1e-3, 1e-5).unwrap(), 1e-3);
        assert!((lr_at_step(100, 100, 1e-3, 1e-5).unwrap() - 1e-5).abs() < 1e-18);
        assert!((lr_at_step(50, 100, 1e-3, 1e-5).unwrap() - (1e-3 + 1e-5) / 2.0).abs() < 1e-15);
        assert!(lr_at_step(0, 0, 1e-3, 1e-5).is_err());
        assert!(lr_at_step(101, 100, 1e-3, 1e-5).is_err());
    }

    #[test]
    fn monotone_decay() {
        let lrs: Vec<f64> = (0..=40).map(|s| lr_at_step(s, 40, 3e-4, 3e-6).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn warmup_ramps_linearly() {
        assert!((lr_with_warmup(0, 100, 4, 1.0, 0.0).unwrap() - 0.25).abs() < 1e-12);
        assert!((lr_with_warmup(3, 100, 4, 1.0, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(lr_with_warmup(10, 100, 0, 1.0, 0.0).unwrap(), lr_at_step(10, 100, 1.0, 0.0).unwrap());
    }
}
