use std::path::Path;

use crate::data::frames::tile_horizontally;
use crate::data::vocab::PAD;
use crate::data::Frame;
use crate::encoders::DualEncoder;
use crate::error::{input_err, Result};

/// Softmax attention of one text token over each frame's patches.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub grid_width: usize,
    pub grid_height: usize,
    /// `weights[frame][patch]`, row-major patches; each frame sums to 1.
    pub weights: Vec<Vec<f64>>,
}

/// Scaled dot products between text token `token_index` and every patch
/// token, both taken after the first transformer layer, normalized per frame.
pub fn attention_map(
    model: &DualEncoder<f32>,
    clip: &[Frame],
    tokens: &[u32],
    token_index: usize,
) -> Result<AttentionMap> {
    match tokens.get(token_index) {
        Some(&id) if id != PAD => {}
        _ => {
            return Err(input_err!(
                "token index {} is not a token of the {}-token caption",
                token_index,
                tokens.len()
            ))
        }
    }
    let (text, _) = model.text.hidden(&[tokens.to_vec()], 1)?;
    let d = model.config.embed_dim;
    let query = &text.data()[token_index * d..(token_index + 1) * d];
    let batch = model.video.clip_batch(&[clip])?;
    let (_, patches) = model.video.run(&batch, false, 1)?;
    let s = model.config.num_patches();
    let scale = 1.0 / (d as f64).sqrt();
    let weights = patches
        .data()
        .chunks(s * d)
        .map(|frame| {
            let scores: Vec<f64> = frame
                .chunks(d)
                .map(|p| scale * p.iter().zip(query).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum::<f64>())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = scores.iter().map(|x| (x - max).exp()).collect();
            let sum: f64 = exp.iter().sum();
            exp.into_iter().map(|e| e / sum).collect()
        })
        .collect();
    let grid = model.config.grid();
    Ok(AttentionMap {
        grid_width: grid,
        grid_height: grid,
        weights,
    })
}

/// Paint a red heat overlay of `map` onto the clip frames, side by side.
pub fn render_attention(clip: &[Frame], map: &AttentionMap) -> Result<Frame> {
    let mut painted = Vec::with_capacity(clip.len());
    for (frame, w) in clip.iter().zip(&map.weights) {
        let mut f = frame.clone();
        let peak = w.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let (pw, ph) = (f.width / map.grid_width, f.height / map.grid_height);
        for y in 0..f.height {
            for x in 0..f.width {
                let cell = (y / ph).min(map.grid_height - 1) * map.grid_width + (x / pw).min(map.grid_width - 1);
                let alpha = 0.7 * w[cell] / peak;
                let px: Vec<u8> = f
                    .get(x, y)
                    .iter()
                    .zip([255.0, 0.0, 0.0])
                    .map(|(&c, target)| ((1.0 - alpha) * f64::from(c) + alpha * target).round() as u8)
                    .collect();
                f.set(x, y, &px);
            }
        }
        painted.push(f);
    }
    tile_horizontally(&painted)
}

/// Compute the attention map and write its overlay as a PPM image.
pub fn dump_attention_map(
    model: &DualEncoder<f32>,
    clip: &[Frame],
    tokens: &[u32],
    token_index: usize,
    out_path: &Path,
) -> Result<AttentionMap> {
    let map = attention_map(model, clip, tokens, token_index)?;
    render_attention(clip, &map)?.write_ppm(out_path)?;
    Ok(map)
}
