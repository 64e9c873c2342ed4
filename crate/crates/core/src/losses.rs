//! Contrastive objectives over the four stream embeddings.

use serde::{Deserialize, Serialize};

use crate::encoders::StreamBatch;
use crate::error::{dim_err, input_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// Rows must be unit-norm to within this tolerance.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
    pub lambda: f64,
    pub use_tag_loss: bool,
    pub use_mask_loss: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.05,
            lambda: 0.5,
            use_tag_loss: true,
            use_mask_loss: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }
}

fn check_pair<T: Real>(queries: &Tensor<T>, keys: &Tensor<T>) -> Result<usize> {
    let (&[k, d], &[k2, d2]) = (queries.shape(), keys.shape()) else {
        return Err(dim_err!(
            "contrastive inputs must be matrices, got {:?} and {:?}",
            queries.shape(),
            keys.shape()
        ));
    };
    if (k, d) != (k2, d2) {
        return Err(dim_err!("queries {:?} and keys {:?} differ", queries.shape(), keys.shape()));
    }
    if k < 2 {
        return Err(input_err!("contrastive loss needs at least 2 pairs, got {}", k));
    }
    for (name, t) in [("query", queries), ("key", keys)] {
        for (i, row) in t.data().chunks(d).enumerate() {
            let norm = row.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(input_err!("{} row {} has norm {}, expected 1", name, i, norm));
            }
        }
    }
    Ok(k)
}

/// InfoNCE with a (possibly learnable) similarity scale: the mean over rows
/// of `-log softmax(scale · q kᵀ)[i, i]`. `scale` broadcasts against `[K, K]`.
pub fn info_nce_scaled<T: Real>(queries: &Tensor<T>, keys: &Tensor<T>, scale: &Tensor<T>) -> Result<Tensor<T>> {
    let k = check_pair(queries, keys)?;
    let logits = queries.matmul(&keys.transpose(0, 1)?)?.mul(scale)?;
    let log_probs = logits.log_softmax(1)?;
    Ok(log_probs.mul(&Tensor::eye(k))?.sum_all().scale(-1.0 / k as f64))
}

/// `mean_i −log( exp(⟨q_i,k_i⟩/τ) / Σ_j exp(⟨q_i,k_j⟩/τ) )`.
pub fn info_nce<T: Real>(queries: &Tensor<T>, keys: &Tensor<T>, temperature: f64) -> Result<Tensor<T>> {
    if !(temperature > 0.0) {
        return Err(input_err!("temperature must be positive, got {}", temperature));
    }
    info_nce_scaled(queries, keys, &Tensor::scalar(T::from_f64_lossy(1.0 / temperature)))
}

fn stream<'a, T: Real>(s: &'a Option<Tensor<T>>, name: &str) -> Result<&'a Tensor<T>> {
    s.as_ref()
        .ok_or_else(|| Error::Contract(format!("stream `{name}` is required by the loss but absent")))
}

/// Video-to-text plus text-to-video.
pub fn matching_loss<T: Real>(batch: &StreamBatch<T>, config: &LossConfig) -> Result<Tensor<T>> {
    matching_scaled(batch, &inverse_temperature(config))
}

/// Tag stream as query against the videos.
pub fn tag_loss<T: Real>(batch: &StreamBatch<T>, config: &LossConfig) -> Result<Tensor<T>> {
    tag_scaled(batch, &inverse_temperature(config))
}

/// Masked anchor as query against the captions.
pub fn mask_loss<T: Real>(batch: &StreamBatch<T>, config: &LossConfig) -> Result<Tensor<T>> {
    mask_scaled(batch, &inverse_temperature(config))
}

fn inverse_temperature<T: Real>(config: &LossConfig) -> Tensor<T> {
    Tensor::scalar(T::from_f64_lossy(1.0 / config.temperature))
}

fn matching_scaled<T: Real>(batch: &StreamBatch<T>, scale: &Tensor<T>) -> Result<Tensor<T>> {
    info_nce_scaled(&batch.v, &batch.t, scale)?.add(&info_nce_scaled(&batch.t, &batch.v, scale)?)
}

fn tag_scaled<T: Real>(batch: &StreamBatch<T>, scale: &Tensor<T>) -> Result<Tensor<T>> {
    info_nce_scaled(stream(&batch.t_l, "t_l")?, &batch.v, scale)
}

fn mask_scaled<T: Real>(batch: &StreamBatch<T>, scale: &Tensor<T>) -> Result<Tensor<T>> {
    info_nce_scaled(stream(&batch.v_l, "v_l")?, &batch.t, scale)
}

/// The objective and its parts; disabled terms are `None`.
#[derive(Debug, Clone)]
pub struct LossTerms<T: Real = f32> {
    pub total: Tensor<T>,
    pub matching: Tensor<T>,
    pub tag: Option<Tensor<T>>,
    pub mask: Option<Tensor<T>>,
}

/// `L_M + λ (L_tag + L_mask)` over the enabled terms.
pub fn total_loss<T: Real>(batch: &StreamBatch<T>, config: &LossConfig) -> Result<LossTerms<T>> {
    config.validate()?;
    total_loss_scaled(batch, config, &inverse_temperature(config))
}

/// As [`total_loss`], with the similarity scale (1/τ) given as a tensor so
/// it can be learned. `config.temperature` is ignored.
pub fn total_loss_scaled<T: Real>(
    batch: &StreamBatch<T>,
    config: &LossConfig,
    scale: &Tensor<T>,
) -> Result<LossTerms<T>> {
    let matching = matching_scaled(batch, scale)?;
    let tag = config.use_tag_loss.then(|| tag_scaled(batch, scale)).transpose()?;
    let mask = config.use_mask_loss.then(|| mask_scaled(batch, scale)).transpose()?;
    let oac = match (&tag, &mask) {
        (Some(a), Some(b)) => Some(a.add(b)?),
        (Some(a), None) | (None, Some(a)) => Some(a.clone()),
        (None, None) => None,
    };
    let total = match oac {
        Some(o) if config.lambda != 0.0 => matching.add(&o.scale(config.lambda))?,
        _ => matching.clone(),
    };
    Ok(LossTerms {
        total,
        matching,
        tag,
        mask,
    })
}

#[cfg(test)]
mod tests;
