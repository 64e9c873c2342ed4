use rand::Rng;
use serde::{Deserialize, Serialize};

use super::zeroshot::{split_features, without_objects};
use super::{zero_shot_eval, EvalOptions, RetrievalReport};
use crate::data::{LoadedSample, Vocabulary};
use crate::encoders::{DualEncoder, StreamBatch};
use crate::error::Result;
use crate::losses::{matching_loss, LossConfig};
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::trainer::{adam_step, epoch_order, AdamConfig, AdamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub seed: u64,
    pub eval: EvalOptions,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-3,
            batch_size: 32,
            temperature: 0.05,
            seed: 0,
            eval: EvalOptions::default(),
        }
    }
}

pub struct ProbeOutput {
    /// The frozen encoders with the trained heads.
    pub model: DualEncoder<f32>,
    pub t2v: RetrievalReport,
    pub v2t: RetrievalReport,
}

/// Freeze both encoders, reinitialize the projection heads and fit only
/// them with the matching loss on `train`; report retrieval on `test`.
pub fn linear_probe(
    model: &DualEncoder<f32>,
    train: &[LoadedSample],
    test: &[LoadedSample],
    vocab: &Vocabulary,
    config: &ProbeConfig,
) -> Result<ProbeOutput> {
    let loss_cfg = LossConfig {
        temperature: config.temperature,
        use_tag_loss: false,
        use_mask_loss: false,
        ..LossConfig::default()
    };
    loss_cfg.validate()?;
    let mut probed = model.clone();
    probed.proj_text = DualEncoder::fresh_head(config.seed, "proj_text", &model.config);
    probed.proj_video = DualEncoder::fresh_head(config.seed, "proj_video", &model.config);

    let (video_feats, text_feats, text_video, _) =
        without_objects(|| split_features(model, train, vocab, &config.eval))?;
    let mut captions_of = vec![Vec::new(); train.len()];
    for (row, &v) in text_video.iter().enumerate() {
        captions_of[v].push(row);
    }
    let d = model.config.embed_dim;
    let rows = |src: &Tensor<f32>, ids: &[usize]| -> Result<Tensor<f32>> {
        let data = ids.iter().flat_map(|&i| src.data()[i * d..(i + 1) * d].iter().copied()).collect();
        Tensor::new(data, &[ids.len(), d])
    };

    let names = ["proj_text.weight", "proj_text.bias", "proj_video.weight", "proj_video.bias"].map(String::from);
    let sizes = [&probed.proj_text.weight, &probed.proj_text.bias, &probed.proj_video.weight, &probed.proj_video.bias]
        .map(|t| t.numel());
    let mut adam = AdamState::new(&sizes);
    let k = config.batch_size.max(2);
    for epoch in 0..config.epochs {
        let order = epoch_order(config.seed, epoch, train.len());
        for ids in order.chunks(k).filter(|c| c.len() >= 2) {
            let texts: Vec<usize> = ids
                .iter()
                .map(|&v| {
                    let mut rng = RngState::new(config.seed).derive(&[epoch as u64, v as u64]);
                    captions_of[v][rng.gen_range(0..captions_of[v].len())]
                })
                .collect();
            let batch = StreamBatch {
                v: probed.project_video(&rows(&video_feats, ids)?)?,
                t: probed.project_text(&rows(&text_feats, &texts)?)?,
                v_l: None,
                t_l: None,
            };
            let grads = matching_loss(&batch, &loss_cfg)?.backward()?;
            let heads = [&probed.proj_text.weight, &probed.proj_text.bias, &probed.proj_video.weight, &probed.proj_video.bias];
            let mut values: Vec<Vec<f32>> = heads.iter().map(|t| t.to_vec()).collect();
            let shapes: Vec<Vec<usize>> = heads.iter().map(|t| t.shape().to_vec()).collect();
            let g: Vec<Option<&[f32]>> = heads.iter().map(|t| grads.get(t)).collect();
            adam_step(&names, &mut values, &g, &mut adam, config.lr, &AdamConfig::default())?;
            let mut new = values.into_iter().zip(shapes).map(|(v, s)| Tensor::param(v, &s));
            probed.proj_text.weight = new.next().expect("four heads")?;
            probed.proj_text.bias = new.next().expect("four heads")?;
            probed.proj_video.weight = new.next().expect("four heads")?;
            probed.proj_video.bias = new.next().expect("four heads")?;
        }
    }
    let (t2v, v2t) = zero_shot_eval(&probed, test, vocab, &config.eval)?;
    Ok(ProbeOutput { model: probed, t2v, v2t })
}
