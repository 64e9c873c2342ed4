use super::step::{encode_streams, prepare_batch};
use super::{Ablation, TrainConfig};
use crate::data::load_samples;
use crate::data::synth::{generate_synthetic_corpus, SynthConfig};
use crate::encoders::{DualEncoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::losses::total_loss;
use crate::tensor::{grad_check, GradCheckConfig, GradCheckReport, Tensor};

/// A deliberately tiny encoder for finite-difference checks.
pub fn micro_encoder_config(vocab_size: usize) -> EncoderConfig {
    EncoderConfig {
        embed_dim: 8,
        num_layers: 1,
        num_heads: 2,
        mlp_ratio: 2,
        patch_size: 16,
        image_size: 32,
        channels: 3,
        max_frames: 8,
        max_text_tokens: 12,
        shared_embed_dim: 8,
        vocab_size,
    }
}

/// Finite-difference check of the full objective (all four streams) with
/// respect to every parameter, in 64-bit, on a two-sample synthetic batch.
pub fn objective_grad_check(seed: u64, check: &GradCheckConfig) -> Result<GradCheckReport> {
    let corpus = generate_synthetic_corpus(&SynthConfig {
        num_samples: 2,
        num_frames: 4,
        seed,
        ..SynthConfig::default()
    })?;
    let samples = load_samples(&corpus.samples, std::path::Path::new("."))?;
    let mut config = TrainConfig {
        encoder: micro_encoder_config(corpus.vocab.len()),
        frames_per_clip: 2,
        batch_size: 2,
        seed,
        ..TrainConfig::default()
    };
    Ablation::Full.apply(&mut config);
    config.validate()?;
    let plan = config.plan();
    let tag_tokens = corpus.tags.token_table(&corpus.vocab);
    let batch = prepare_batch(&samples, &[0, 1], 0, &config, &plan, &corpus.vocab, &tag_tokens)?;
    let model = DualEncoder::<f64>::init(seed, &config.encoder)?;
    let params: Vec<Tensor<f64>> = model.named_params().iter().map(|(_, t)| (*t).clone()).collect();
    grad_check(
        |p| {
            let streams = encode_streams(&model.with_params(p)?, &batch, &plan)?;
            let terms = total_loss(&streams, &plan.loss)?;
            if terms.tag.is_none() || terms.mask.is_none() {
                return Err(Error::Contract("objective check needs every loss term".into()));
            }
            Ok(terms.total)
        },
        &params,
        check,
    )
}
