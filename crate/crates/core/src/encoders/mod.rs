//! Dual encoders and the shared projection space.

pub mod layers;
pub mod text;
pub mod video;

use serde::{Deserialize, Serialize};

use crate::data::vocab::{CLS, NOOBJ, PAD};
use crate::data::Frame;
use crate::error::{dim_err, Error, Result};
use crate::objects::MaskedAnchorFrame;
use crate::tensor::checkpoint::Entry;
use crate::tensor::{Real, Tensor};

use layers::{Linear, Module};
use text::TextEncoder;
use video::{Pooling, VideoEncoder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub patch_size: usize,
    pub image_size: usize,
    pub channels: usize,
    pub max_frames: usize,
    pub max_text_tokens: usize,
    pub shared_embed_dim: usize,
    pub vocab_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            num_layers: 4,
            num_heads: 4,
            mlp_ratio: 4,
            patch_size: 16,
            image_size: 64,
            channels: 3,
            max_frames: 8,
            max_text_tokens: 32,
            shared_embed_dim: 128,
            vocab_size: 512,
        }
    }
}

impl EncoderConfig {
    /// Scale used for the synthetic corpus on a single CPU core.
    pub fn synthetic(vocab_size: usize) -> Self {
        Self {
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            mlp_ratio: 2,
            patch_size: 8,
            image_size: 32,
            channels: 3,
            max_frames: 8,
            max_text_tokens: 24,
            shared_embed_dim: 64,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("embed_dim", self.embed_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("mlp_ratio", self.mlp_ratio),
            ("patch_size", self.patch_size),
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("max_frames", self.max_frames),
            ("max_text_tokens", self.max_text_tokens),
            ("shared_embed_dim", self.shared_embed_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.vocab_size <= NOOBJ as usize {
            return Err(Error::Config(format!(
                "vocab_size {} leaves no room past the reserved tokens",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }
}

/// Normalized embeddings of the four streams for one batch. The object
/// streams are absent when the configuration does not produce them.
#[derive(Debug, Clone)]
pub struct StreamBatch<T: Real = f32> {
    pub v: Tensor<T>,
    pub t: Tensor<T>,
    pub v_l: Option<Tensor<T>>,
    pub t_l: Option<Tensor<T>>,
}

/// Text and video transformers with projection heads into a shared space.
#[derive(Clone)]
pub struct DualEncoder<T: Real = f32> {
    pub config: EncoderConfig,
    pub text: TextEncoder<T>,
    pub video: VideoEncoder<T>,
    pub proj_text: Linear<T>,
    pub proj_video: Linear<T>,
}

impl<T: Real> DualEncoder<T> {
    pub fn init(seed: u64, config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            text: TextEncoder::init(seed, config),
            video: VideoEncoder::init(seed, config),
            proj_text: Self::fresh_head(seed, "proj_text", config),
            proj_video: Self::fresh_head(seed, "proj_video", config),
        })
    }

    pub(crate) fn fresh_head(seed: u64, name: &str, config: &EncoderConfig) -> Linear<T> {
        Linear::init(seed, name, config.embed_dim, config.shared_embed_dim)
    }

    /// Text features before projection, `[B, D]`.
    pub fn text_features(&self, batch: &[Vec<u32>]) -> Result<Tensor<T>> {
        self.text.forward(batch)
    }

    /// Video CLS features before projection, `[B, D]`.
    pub fn video_features(&self, clips: &[&[Frame]]) -> Result<Tensor<T>> {
        let batch = self.video.clip_batch(clips)?;
        self.video.pooled(&batch, false, Pooling::Cls)
    }

    pub fn project_text(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        self.proj_text.forward(features)?.l2_normalize()
    }

    pub fn project_video(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        self.proj_video.forward(features)?.l2_normalize()
    }

    /// Caption embeddings `[B, E]`.
    pub fn encode_text(&self, batch: &[Vec<u32>]) -> Result<Tensor<T>> {
        self.project_text(&self.text_features(batch)?)
    }

    /// Tag-stream embeddings through the text weights. A stream carrying no
    /// tag tokens is encoded as `[CLS, NOOBJ]`.
    pub fn encode_tags(&self, batch: &[Vec<u32>]) -> Result<Tensor<T>> {
        let streams: Vec<Vec<u32>> = batch
            .iter()
            .map(|s| {
                if s.iter().all(|&id| id == CLS || id == PAD) {
                    vec![CLS, NOOBJ]
                } else {
                    s.clone()
                }
            })
            .collect();
        self.encode_text(&streams)
    }

    /// Clip embeddings `[B, E]`; every clip must have the same frame count.
    pub fn encode_video(&self, clips: &[&[Frame]]) -> Result<Tensor<T>> {
        self.project_video(&self.video_features(clips)?)
    }

    /// Single frames through the closed-form one-step temporal path, pooled
    /// at the CLS token.
    pub fn encode_image(&self, frames: &[&Frame]) -> Result<Tensor<T>> {
        self.encode_frames(frames, Pooling::Cls)
    }

    /// Single frames pooled as the mean over all patch tokens.
    pub fn encode_image_pooled(&self, frames: &[&Frame]) -> Result<Tensor<T>> {
        self.encode_frames(frames, Pooling::MeanKept)
    }

    fn encode_frames(&self, frames: &[&Frame], pooling: Pooling) -> Result<Tensor<T>> {
        let clips: Vec<&[Frame]> = frames.iter().map(|f| std::slice::from_ref(*f)).collect();
        let batch = self.video.clip_batch(&clips)?;
        self.project_video(&self.video.pooled(&batch, true, pooling)?)
    }

    /// Masked anchor frames through the video weights: only kept patches are
    /// embedded and attended, and the output is their mean token.
    /// `temporal_slots` picks each anchor's temporal position embedding.
    pub fn encode_masked_anchor(
        &self,
        anchors: &[&MaskedAnchorFrame],
        temporal_slots: &[usize],
    ) -> Result<Tensor<T>> {
        let frames: Vec<&Frame> = anchors.iter().map(|a| &a.pixels).collect();
        let grids: Vec<&[bool]> = anchors.iter().map(|a| a.keep_grid.as_slice()).collect();
        let batch = self.video.masked_batch(&frames, &grids, temporal_slots)?;
        self.project_video(&self.video.pooled(&batch, true, Pooling::MeanKept)?)
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.text.visit("text", &mut out);
        self.video.visit("video", &mut out);
        self.proj_text.visit("proj_text", &mut out);
        self.proj_video.visit("proj_video", &mut out);
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.text.visit_mut("text", &mut out);
        self.video.visit_mut("video", &mut out);
        self.proj_text.visit_mut("proj_text", &mut out);
        self.proj_video.visit_mut("proj_video", &mut out);
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn to_entries(&self) -> Vec<Entry> {
        self.named_params()
            .into_iter()
            .map(|(name, t)| Entry::from_tensor(name, t))
            .collect()
    }

    /// Replace every parameter from checkpoint entries; names and shapes
    /// must match exactly.
    pub fn load_entries(&mut self, entries: &[Entry]) -> Result<()> {
        let mut params = self.named_params_mut();
        if entries.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model has {}",
                entries.len(),
                params.len()
            )));
        }
        let by_name: std::collections::HashMap<&str, &Entry> =
            entries.iter().map(|e| (e.name.as_str(), e)).collect();
        for (name, slot) in params.iter_mut() {
            let entry = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if entry.shape != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, model expects {:?}",
                    entry.shape,
                    slot.shape()
                )));
            }
            **slot = entry.to_tensor::<T>().requiring_grad();
        }
        Ok(())
    }

    /// The same weights in another precision.
    pub fn cast<U: Real>(&self) -> DualEncoder<U> {
        let mut other = DualEncoder::<U>::init(0, &self.config).expect("validated config");
        let source: Vec<Tensor<U>> = self.named_params().iter().map(|(_, t)| t.cast::<U>()).collect();
        for ((_, slot), t) in other.named_params_mut().into_iter().zip(source) {
            *slot = t.requiring_grad();
        }
        other
    }

    /// A copy whose parameters are `params`, in `named_params` order.
    pub fn with_params(&self, params: &[Tensor<T>]) -> Result<Self> {
        let mut out = self.clone();
        let mut slots = out.named_params_mut();
        if slots.len() != params.len() {
            return Err(dim_err!("{} parameters given, model has {}", params.len(), slots.len()));
        }
        for ((name, slot), p) in slots.iter_mut().zip(params) {
            if slot.shape() != p.shape() {
                return Err(dim_err!("parameter `{}` is {:?}, got {:?}", name, slot.shape(), p.shape()));
            }
            **slot = p.clone();
        }
        drop(slots);
        Ok(out)
    }

    /// Overwrite one named parameter.
    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        for (n, slot) in self.named_params_mut() {
            if n == name {
                if slot.shape() != value.shape() {
                    return Err(dim_err!(
                        "parameter `{}` is {:?}, got {:?}",
                        name,
                        slot.shape(),
                        value.shape()
                    ));
                }
                *slot = value.requiring_grad();
                return Ok(());
            }
        }
        Err(Error::Config(format!("no parameter named `{name}`")))
    }
}
