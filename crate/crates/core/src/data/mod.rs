//! Frames, manifests, vocabularies, clip sampling and the synthetic corpus.

pub mod frames;
pub mod manifest;
pub mod sampler;
pub mod synth;
pub mod vocab;

use std::path::Path;

use crate::error::Result;
use crate::rng::stable_hash;

pub use frames::Frame;
pub use manifest::{load_manifest, write_manifest, FrameRef, VideoSample};
pub use sampler::{sample_frames, sample_indices, SamplerConfig};
pub use vocab::{tokenize, TagVocabulary, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// 80/10/10 by a stable hash of the video id.
    pub fn of(video_id: &str) -> Split {
        match stable_hash(video_id.as_bytes()) % 10 {
            0..=7 => Split::Train,
            8 => Split::Val,
            _ => Split::Test,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// A sample with its frames decoded.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub sample: VideoSample,
    pub frames: Vec<Frame>,
}

pub fn load_samples(samples: &[VideoSample], base_dir: &Path) -> Result<Vec<LoadedSample>> {
    samples
        .iter()
        .map(|s| {
            Ok(LoadedSample {
                frames: s.load_frames(base_dir)?,
                sample: s.clone(),
            })
        })
        .collect()
}
