use rand::seq::SliceRandom;
use rand::Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::{StreamPlan, TrainConfig};
use crate::data::sampler::sample_indices;
use crate::data::{tokenize, Frame, LoadedSample, Vocabulary};
use crate::encoders::{DualEncoder, StreamBatch};
use crate::error::{Error, Result};
use crate::losses::{total_loss_scaled, LossTerms};
use crate::objects::{build_masked_anchor, build_tag_stream, nearest_clip_slot, MaskedAnchorFrame};
use crate::rng::RngState;
use crate::tensor::{Real, Tensor};

const SAMPLE_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

/// Largest similarity scale a learned temperature may reach.
pub const MAX_LOGIT_SCALE: f64 = 100.0;

/// Token and frame inputs for one batch, before any encoder runs.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub clips: Vec<Vec<Frame>>,
    pub captions: Vec<Vec<u32>>,
    pub anchors: Vec<MaskedAnchorFrame>,
    pub slots: Vec<usize>,
    pub tag_streams: Vec<Vec<u32>>,
}

impl PreparedBatch {
    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }
}

/// Sample order for one epoch, derived from the seed and epoch alone.
pub fn epoch_order(seed: u64, epoch: usize, num_samples: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..num_samples).collect();
    order.shuffle(&mut RngState::new(seed).derive(&[SHUFFLE_STREAM, epoch as u64]));
    order
}

/// Sample a caption and clip per sample and run the object pipeline where
/// the plan needs it. Randomness is keyed by `(seed, epoch, sample index)`.
pub fn prepare_batch(
    samples: &[LoadedSample],
    indices: &[usize],
    epoch: usize,
    config: &TrainConfig,
    plan: &StreamPlan,
    vocab: &Vocabulary,
    tag_tokens: &[Vec<u32>],
) -> Result<PreparedBatch> {
    let max_len = config.encoder.max_text_tokens;
    let mut out = PreparedBatch {
        clips: Vec::with_capacity(indices.len()),
        captions: Vec::with_capacity(indices.len()),
        anchors: Vec::new(),
        slots: Vec::new(),
        tag_streams: Vec::new(),
    };
    for &i in indices {
        let s = samples
            .get(i)
            .ok_or_else(|| Error::Input(format!("sample index {i} beyond {} samples", samples.len())))?;
        let mut rng = RngState::new(config.seed).derive(&[SAMPLE_STREAM, epoch as u64, i as u64]);
        let caption = &s.sample.captions[rng.gen_range(0..s.sample.captions.len())];
        let mut tokens = tokenize(caption, vocab, max_len);
        let clip_idx = sample_indices(s.frames.len(), config.frames_per_clip)?;
        out.clips.push(clip_idx.iter().map(|&f| s.frames[f].clone()).collect());
        if plan.needs_objects() {
            let anchor = build_masked_anchor(
                &s.frames,
                &clip_idx,
                &s.sample.objects,
                config.encoder.patch_size,
                &config.objects,
                &mut rng,
            )?;
            let streams = build_tag_stream(&anchor.kept_objects, config.tag_strategy, &tokens, tag_tokens, max_len)?;
            if plan.pad_caption_with_tags {
                tokens = streams.caption;
            }
            if plan.tag_stream {
                out.tag_streams.push(streams.tags.unwrap_or_default());
            }
            if plan.anchor {
                out.slots.push(nearest_clip_slot(&clip_idx, anchor.anchor_frame_index));
                out.anchors.push(anchor);
            }
        }
        out.captions.push(tokens);
    }
    Ok(out)
}

/// Encode every stream the plan asks for. Under mask-only input the masked
/// anchor takes the place of the clip.
pub fn encode_streams<T: Real>(
    model: &DualEncoder<T>,
    batch: &PreparedBatch,
    plan: &StreamPlan,
) -> Result<StreamBatch<T>> {
    let t = model.encode_text(&batch.captions)?;
    let anchor = if plan.anchor {
        let refs: Vec<&MaskedAnchorFrame> = batch.anchors.iter().collect();
        Some(model.encode_masked_anchor(&refs, &batch.slots)?)
    } else {
        None
    };
    let (v, v_l) = if plan.raw_video {
        let clips: Vec<&[Frame]> = batch.clips.iter().map(Vec::as_slice).collect();
        (model.encode_video(&clips)?, anchor.filter(|_| plan.loss.use_mask_loss))
    } else {
        let v = anchor.ok_or_else(|| Error::Contract("mask-only input without an anchor stream".into()))?;
        (v, None)
    };
    let t_l = if plan.tag_stream {
        Some(model.encode_tags(&batch.tag_streams)?)
    } else {
        None
    };
    Ok(StreamBatch { v, t, v_l, t_l })
}

/// Scalar loss values of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub matching: f64,
    pub tag: Option<f64>,
    pub mask: Option<f64>,
}

impl StepLosses {
    fn from_terms(terms: &LossTerms<f32>) -> Result<Self> {
        let value = |t: &Tensor<f32>| t.item().map(f64::from);
        Ok(Self {
            total: value(&terms.total)?,
            matching: value(&terms.matching)?,
            tag: terms.tag.as_ref().map(value).transpose()?,
            mask: terms.mask.as_ref().map(value).transpose()?,
        })
    }
}

/// Model, optimizer state and step counter.
pub struct Trainer {
    pub config: TrainConfig,
    pub plan: StreamPlan,
    pub model: DualEncoder<f32>,
    /// `ln(1/τ)` when the temperature is learned.
    pub log_scale: Option<Tensor<f32>>,
    pub adam: AdamState,
    pub step: usize,
}

impl Trainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = DualEncoder::init(config.seed, &config.encoder)?;
        let log_scale = config
            .learnable_temperature
            .then(|| Tensor::scalar((1.0 / config.loss.temperature).ln() as f32).requiring_grad());
        let mut sizes: Vec<usize> = model.named_params().iter().map(|(_, t)| t.numel()).collect();
        if log_scale.is_some() {
            sizes.push(1);
        }
        Ok(Self {
            plan: config.plan(),
            config: config.clone(),
            model,
            log_scale,
            adam: AdamState::new(&sizes),
            step: 0,
        })
    }

    /// Names of every optimized tensor, in optimizer-state order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.model.named_params().into_iter().map(|(n, _)| n).collect();
        if self.log_scale.is_some() {
            names.push("logit_scale".into());
        }
        names
    }

    /// Similarity scale currently in effect (1/τ).
    pub fn scale(&self) -> f64 {
        match &self.log_scale {
            Some(s) => f64::from(s.data()[0]).exp(),
            None => 1.0 / self.config.loss.temperature,
        }
    }

    pub fn losses(&self, batch: &PreparedBatch) -> Result<LossTerms<f32>> {
        let streams = encode_streams(&self.model, batch, &self.plan)?;
        let scale = match &self.log_scale {
            Some(s) => s.exp(),
            None => Tensor::scalar((1.0 / self.config.loss.temperature) as f32),
        };
        total_loss_scaled(&streams, &self.plan.loss, &scale)
    }

    /// One optimizer step at learning rate `lr`. Parameters are untouched
    /// when the loss or any gradient is non-finite.
    pub fn train_step(&mut self, batch: &PreparedBatch, lr: f64) -> Result<StepLosses> {
        let terms = self.losses(batch)?;
        let losses = StepLosses::from_terms(&terms)?;
        if !losses.total.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let grads = terms.total.backward()?;
        let names = self.param_names();
        let mut tensors: Vec<&Tensor<f32>> = self.model.named_params().into_iter().map(|(_, t)| t).collect();
        if let Some(s) = &self.log_scale {
            tensors.push(s);
        }
        let mut values: Vec<Vec<f32>> = tensors.iter().map(|t| t.to_vec()).collect();
        let shapes: Vec<Vec<usize>> = tensors.iter().map(|t| t.shape().to_vec()).collect();
        let grad_slices: Vec<Option<&[f32]>> = tensors.iter().map(|t| grads.get(t)).collect();
        let adam = AdamConfig {
            weight_decay: self.config.weight_decay,
            ..AdamConfig::default()
        };
        adam_step(&names, &mut values, &grad_slices, &mut self.adam, lr, &adam)?;
        drop(grad_slices);
        drop(tensors);

        let mut values = values.into_iter().zip(shapes);
        for (_, slot) in self.model.named_params_mut() {
            let (v, shape) = values.next().expect("one value per parameter");
            *slot = Tensor::param(v, &shape)?;
        }
        if let Some((mut v, shape)) = values.next() {
            v[0] = v[0].min(MAX_LOGIT_SCALE.ln() as f32);
            self.log_scale = Some(Tensor::param(v, &shape)?);
        }
        self.step += 1;
        Ok(losses)
    }
}
