//! Pre-training: configuration, per-step stream assembly, optimization,
//! checkpointing and metrics.

pub mod adam;
mod gradcheck;
mod run;
pub mod schedule;
mod step;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::objects::{ObjectConfig, TagStrategy};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{micro_encoder_config, objective_grad_check};
pub use run::{load_checkpoint, run_pretrain, save_checkpoint, Checkpoint, PretrainOutput, StepMetrics};
pub use schedule::lr_at_step;
pub use step::{encode_streams, epoch_order, prepare_batch, PreparedBatch, StepLosses, Trainer, MAX_LOGIT_SCALE};

/// Which visual streams feed the losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualInput {
    /// Raw clip only; no masked anchor and no mask loss.
    RawOnly,
    /// The masked anchor stands in for the clip in every loss.
    MaskOnly,
    /// Raw clip in the matching loss plus the masked anchor in the mask loss.
    Joint,
}

impl FromStr for VisualInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "raw" | "raw_only" => Ok(Self::RawOnly),
            "mask" | "mask_only" => Ok(Self::MaskOnly),
            "joint" => Ok(Self::Joint),
            _ => Err(Error::Config(format!("unknown visual input `{s}` (expected raw, mask or joint)"))),
        }
    }
}

/// Loss-term presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Matching loss only.
    Baseline,
    /// Matching plus tag loss.
    Tag,
    /// Matching plus mask loss.
    Mask,
    /// Matching plus tag and mask losses.
    Full,
}

impl Ablation {
    pub fn apply(self, config: &mut TrainConfig) {
        let (tag, mask) = match self {
            Ablation::Baseline => (false, false),
            Ablation::Tag => (true, false),
            Ablation::Mask => (false, true),
            Ablation::Full => (true, true),
        };
        config.loss.use_tag_loss = tag;
        config.loss.use_mask_loss = mask;
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "tag" => Ok(Self::Tag),
            "mask" => Ok(Self::Mask),
            "full" => Ok(Self::Full),
            _ => Err(Error::Config(format!(
                "unknown ablation `{s}` (expected baseline, tag, mask or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub loss: LossConfig,
    pub learnable_temperature: bool,
    pub tag_strategy: TagStrategy,
    pub visual_input: VisualInput,
    pub frames_per_clip: usize,
    pub objects: ObjectConfig,
    pub encoder: EncoderConfig,
    pub seed: u64,
    /// Save a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
    /// Stop after this many steps in total, keeping the schedule of the
    /// full run.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr_max: 3e-4,
            lr_min: 3e-6,
            weight_decay: 0.01,
            warmup_steps: 0,
            loss: LossConfig::default(),
            learnable_temperature: false,
            tag_strategy: TagStrategy::TwoStream,
            visual_input: VisualInput::Joint,
            frames_per_clip: crate::data::sampler::PRETRAIN_FRAMES,
            objects: ObjectConfig::default(),
            encoder: EncoderConfig::default(),
            seed: 0,
            checkpoint_every: 0,
            max_steps: None,
        }
    }
}

/// What a configuration actually computes each step.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamPlan {
    pub raw_video: bool,
    pub anchor: bool,
    pub tag_stream: bool,
    pub pad_caption_with_tags: bool,
    /// Loss switches after resolving the visual input and tag strategy.
    pub loss: LossConfig,
}

impl StreamPlan {
    pub fn needs_objects(&self) -> bool {
        self.anchor || self.tag_stream || self.pad_caption_with_tags
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.objects.validate()?;
        self.loss.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.lr_min > 0.0 && self.lr_max >= self.lr_min) {
            return Err(Error::Config(format!(
                "need lr_max >= lr_min > 0, got {} and {}",
                self.lr_max, self.lr_min
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.frames_per_clip == 0 || self.frames_per_clip > self.encoder.max_frames {
            return Err(Error::Config(format!(
                "frames_per_clip {} must be in 1..={}",
                self.frames_per_clip, self.encoder.max_frames
            )));
        }
        if self.visual_input == VisualInput::MaskOnly && !self.loss.use_mask_loss {
            return Err(Error::Config(
                "mask_only visual input trains on the masked anchor, which needs the mask loss enabled".into(),
            ));
        }
        Ok(())
    }

    /// Resolve flags into the streams and loss terms a step computes.
    ///
    /// The tag loss needs a separate tag stream, so the padding strategy
    /// disables it and appends tags to captions instead. The mask loss is
    /// only distinct under joint input: raw-only has no anchor, and
    /// mask-only folds the anchor into the matching loss.
    pub fn plan(&self) -> StreamPlan {
        let tags_on = self.loss.use_tag_loss;
        let padding = self.tag_strategy == TagStrategy::Padding;
        let joint = self.visual_input == VisualInput::Joint;
        StreamPlan {
            raw_video: self.visual_input != VisualInput::MaskOnly,
            anchor: self.visual_input == VisualInput::MaskOnly || (joint && self.loss.use_mask_loss),
            tag_stream: tags_on && !padding,
            pad_caption_with_tags: tags_on && padding,
            loss: LossConfig {
                use_tag_loss: tags_on && !padding,
                use_mask_loss: joint && self.loss.use_mask_loss,
                ..self.loss.clone()
            },
        }
    }

    /// Optimizer steps per epoch; a trailing batch of one sample is dropped.
    pub fn steps_per_epoch(&self, num_samples: usize) -> usize {
        let full = num_samples / self.batch_size;
        full + usize::from(num_samples % self.batch_size >= 2)
    }

    pub fn total_steps(&self, num_samples: usize) -> usize {
        self.epochs * self.steps_per_epoch(num_samples)
    }
}
