use serde::{Deserialize, Serialize};

use super::frames::Frame;
use crate::error::{dim_err, input_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub frames_per_clip: usize,
    pub image_size: usize,
    pub seed: u64,
}

pub const PRETRAIN_FRAMES: usize = 4;
pub const DOWNSTREAM_FRAMES: usize = 8;

/// Centered uniform indices `⌊(i + 0.5)·n / L⌋`, clamped to the last frame.
pub fn sample_indices(num_frames: usize, frames_per_clip: usize) -> Result<Vec<usize>> {
    if num_frames == 0 {
        return Err(input_err!("video has no frames"));
    }
    if frames_per_clip == 0 {
        return Err(input_err!("frames_per_clip must be at least 1"));
    }
    Ok((0..frames_per_clip)
        .map(|i| (((2 * i + 1) * num_frames) / (2 * frames_per_clip)).min(num_frames - 1))
        .collect())
}

/// The clip's frames and their indices into `frames`.
pub fn sample_frames(frames: &[Frame], config: &SamplerConfig) -> Result<(Vec<Frame>, Vec<usize>)> {
    let idx = sample_indices(frames.len(), config.frames_per_clip)?;
    let clip: Vec<Frame> = idx.iter().map(|&i| frames[i].clone()).collect();
    if let Some(f) = clip
        .iter()
        .find(|f| f.width != config.image_size || f.height != config.image_size)
    {
        return Err(dim_err!(
            "frame is {}x{}, sampler expects {}x{}",
            f.width,
            f.height,
            config.image_size,
            config.image_size
        ));
    }
    Ok((clip, idx))
}
