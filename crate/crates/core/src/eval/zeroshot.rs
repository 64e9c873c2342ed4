use serde::{Deserialize, Serialize};

use super::{similarity_matrix, Direction, RetrievalReport};
use crate::data::sampler::{sample_indices, DOWNSTREAM_FRAMES};
use crate::data::vocab::multi_sentence_query;
use crate::data::{tokenize, Frame, LoadedSample, Vocabulary};
use crate::encoders::DualEncoder;
use crate::error::{input_err, Error, Result};
use crate::objects::thread_invocation_count;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub frames_per_clip: usize,
    pub batch_size: usize,
    /// One query per video joining all of its captions.
    pub multi_sentence: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            frames_per_clip: DOWNSTREAM_FRAMES,
            batch_size: 32,
            multi_sentence: false,
        }
    }
}

/// Encoder outputs for a split. Without multi-sentence queries every caption
/// is a text row; `first_text[v]` is the row of video `v`'s first caption.
pub struct SplitEmbeddings {
    pub videos: Tensor<f32>,
    pub texts: Tensor<f32>,
    pub text_video: Vec<usize>,
    pub first_text: Vec<usize>,
}

/// Fail if `f` reaches the object pipeline on this thread.
pub(crate) fn without_objects<R>(f: impl FnOnce() -> Result<R>) -> Result<R> {
    let before = thread_invocation_count();
    let out = f()?;
    if thread_invocation_count() != before {
        return Err(Error::Contract("evaluation invoked the object pipeline".into()));
    }
    Ok(out)
}

fn stack(parts: Vec<Tensor<f32>>) -> Result<Tensor<f32>> {
    if parts.len() == 1 {
        return Ok(parts.into_iter().next().expect("one part"));
    }
    Tensor::concat(&parts, 0)
}

/// Unprojected features: (videos `[N, D]`, texts `[M, D]`, text → video,
/// first text row per video).
pub(crate) fn split_features(
    model: &DualEncoder<f32>,
    samples: &[LoadedSample],
    vocab: &Vocabulary,
    options: &EvalOptions,
) -> Result<(Tensor<f32>, Tensor<f32>, Vec<usize>, Vec<usize>)> {
    if samples.is_empty() {
        return Err(input_err!("evaluation split is empty"));
    }
    let batch = options.batch_size.max(1);
    let max_len = model.config.max_text_tokens;
    let mut texts = Vec::new();
    let (mut text_video, mut first_text) = (Vec::new(), Vec::new());
    for (v, s) in samples.iter().enumerate() {
        first_text.push(texts.len());
        if options.multi_sentence {
            texts.push(multi_sentence_query(&s.sample.captions, vocab, max_len));
            text_video.push(v);
        } else {
            for c in &s.sample.captions {
                texts.push(tokenize(c, vocab, max_len));
                text_video.push(v);
            }
        }
    }
    let mut video_parts = Vec::new();
    for chunk in samples.chunks(batch) {
        let clips: Vec<Vec<Frame>> = chunk
            .iter()
            .map(|s| {
                let idx = sample_indices(s.frames.len(), options.frames_per_clip)?;
                Ok(idx.iter().map(|&i| s.frames[i].clone()).collect())
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&[Frame]> = clips.iter().map(Vec::as_slice).collect();
        video_parts.push(model.video_features(&refs)?.detach());
    }
    let mut text_parts = Vec::new();
    for chunk in texts.chunks(batch) {
        text_parts.push(model.text_features(chunk)?.detach());
    }
    Ok((stack(video_parts)?, stack(text_parts)?, text_video, first_text))
}

/// Projected, normalized embeddings of a split.
pub fn embed_split(
    model: &DualEncoder<f32>,
    samples: &[LoadedSample],
    vocab: &Vocabulary,
    options: &EvalOptions,
) -> Result<SplitEmbeddings> {
    without_objects(|| {
        let (v, t, text_video, first_text) = split_features(model, samples, vocab, options)?;
        Ok(SplitEmbeddings {
            videos: model.project_video(&v)?.detach(),
            texts: model.project_text(&t)?.detach(),
            text_video,
            first_text,
        })
    })
}

impl SplitEmbeddings {
    /// Text-to-video over every text row, and video-to-text against each
    /// video's first caption.
    pub fn reports(&self) -> Result<(RetrievalReport, RetrievalReport)> {
        let t2v = RetrievalReport::from_similarity(
            Direction::TextToVideo,
            &similarity_matrix(&self.texts, &self.videos)?,
            &self.text_video,
        )?;
        let d = self.texts.shape()[1];
        let firsts: Vec<f32> = self
            .first_text
            .iter()
            .flat_map(|&r| self.texts.data()[r * d..(r + 1) * d].iter().copied())
            .collect();
        let gallery = Tensor::new(firsts, &[self.first_text.len(), d])?;
        let truth: Vec<usize> = (0..self.first_text.len()).collect();
        let v2t = RetrievalReport::from_similarity(
            Direction::VideoToText,
            &similarity_matrix(&self.videos, &gallery)?,
            &truth,
        )?;
        Ok((t2v, v2t))
    }
}

/// Zero-shot retrieval on a split: plain dual-encoder embeddings only.
pub fn zero_shot_eval(
    model: &DualEncoder<f32>,
    samples: &[LoadedSample],
    vocab: &Vocabulary,
    options: &EvalOptions,
) -> Result<(RetrievalReport, RetrievalReport)> {
    without_objects(|| embed_split(model, samples, vocab, options)?.reports())
}
