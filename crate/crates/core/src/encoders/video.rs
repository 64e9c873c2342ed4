//! Patch transformer with divided space-time attention.
//!
//! Each block runs temporal attention across frames at a fixed patch
//! position, then spatial attention within each frame (with a per-frame copy
//! of the CLS token whose updates are averaged back), then an MLP.

use super::layers::{join, trunc_normal, Attention, LayerNorm, Mlp, Module, INIT_STD};
use super::EncoderConfig;
use crate::data::Frame;
use crate::error::{dim_err, input_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone)]
pub struct SpaceTimeBlock<T: Real> {
    pub ln_time: LayerNorm<T>,
    pub attn_time: Attention<T>,
    pub ln_space: LayerNorm<T>,
    pub attn_space: Attention<T>,
    pub ln_mlp: LayerNorm<T>,
    pub mlp: Mlp<T>,
}

impl<T: Real> SpaceTimeBlock<T> {
    fn init(seed: u64, name: &str, cfg: &EncoderConfig) -> Self {
        let d = cfg.embed_dim;
        Self {
            ln_time: LayerNorm::init(d),
            attn_time: Attention::init(seed, &join(name, "attn_time"), d, cfg.num_heads),
            ln_space: LayerNorm::init(d),
            attn_space: Attention::init(seed, &join(name, "attn_space"), d, cfg.num_heads),
            ln_mlp: LayerNorm::init(d),
            mlp: Mlp::init(seed, &join(name, "mlp"), d, d * cfg.mlp_ratio),
        }
    }

    /// `cls` is `[B, 1, D]`, `x` is `[B, L, S, D]`. `keep` (`[B·L·S]`) drops
    /// patch tokens from spatial keys. With `single_step`, L must be 1 and
    /// temporal attention is evaluated in its closed form.
    fn forward(
        &self,
        cls: &Tensor<T>,
        x: &Tensor<T>,
        keep: Option<&[bool]>,
        single_step: bool,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let &[b, l, s, d] = x.shape() else {
            return Err(dim_err!("space-time block input must be [B, L, S, D], got {:?}", x.shape()));
        };
        let h_time = if single_step {
            debug_assert_eq!(l, 1);
            self.attn_time.forward_single_key(&self.ln_time.forward(x)?)?
        } else {
            let xt = x.permute(&[0, 2, 1, 3])?.reshape(&[b * s, l, d])?;
            self.attn_time
                .forward(&self.ln_time.forward(&xt)?, None)?
                .reshape(&[b, s, l, d])?
                .permute(&[0, 2, 1, 3])?
        };
        let x = x.add(&h_time)?;

        let cls_rep = Tensor::zeros(&[b, l, 1, d]).add(&cls.reshape(&[b, 1, 1, d])?)?;
        let seq = Tensor::concat(&[cls_rep, x.clone()], 2)?.reshape(&[b * l, 1 + s, d])?;
        let keep_space = keep.map(|k| {
            k.chunks(s)
                .flat_map(|row| std::iter::once(true).chain(row.iter().copied()))
                .collect::<Vec<bool>>()
        });
        let h = self
            .attn_space
            .forward(&self.ln_space.forward(&seq)?, keep_space.as_deref())?
            .reshape(&[b, l, 1 + s, d])?;
        let cls = cls.add(&h.narrow(2, 0, 1)?.mean_axis(1)?)?;
        let x = x.add(&h.narrow(2, 1, s)?)?;

        let cls = cls.add(&self.mlp.forward(&self.ln_mlp.forward(&cls)?)?)?;
        let x = x.add(&self.mlp.forward(&self.ln_mlp.forward(&x)?)?)?;
        Ok((cls, x))
    }
}

impl<T: Real> Module<T> for SpaceTimeBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.ln_time.visit(&join(prefix, "ln_time"), out);
        self.attn_time.visit(&join(prefix, "attn_time"), out);
        self.ln_space.visit(&join(prefix, "ln_space"), out);
        self.attn_space.visit(&join(prefix, "attn_space"), out);
        self.ln_mlp.visit(&join(prefix, "ln_mlp"), out);
        self.mlp.visit(&join(prefix, "mlp"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.ln_time.visit_mut(&join(prefix, "ln_time"), out);
        self.attn_time.visit_mut(&join(prefix, "attn_time"), out);
        self.ln_space.visit_mut(&join(prefix, "ln_space"), out);
        self.attn_space.visit_mut(&join(prefix, "attn_space"), out);
        self.ln_mlp.visit_mut(&join(prefix, "ln_mlp"), out);
        self.mlp.visit_mut(&join(prefix, "mlp"), out);
    }
}

/// How the final token states become one vector per input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Cls,
    /// Mean over the patch tokens that were kept.
    MeanKept,
}

/// Patch tokens ready for embedding: `B` inputs of `L` frames of `S` tokens.
pub(crate) struct PatchBatch<T> {
    b: usize,
    l: usize,
    s: usize,
    values: Vec<T>,
    spatial: Vec<usize>,
    temporal: Vec<usize>,
    keep: Option<Vec<bool>>,
}

#[derive(Clone)]
pub struct VideoEncoder<T: Real> {
    pub patch_embed: super::layers::Linear<T>,
    pub cls: Tensor<T>,
    pub spatial_pos: Tensor<T>,
    pub temporal_pos: Tensor<T>,
    pub blocks: Vec<SpaceTimeBlock<T>>,
    pub ln_final: LayerNorm<T>,
    cfg: EncoderConfig,
}

impl<T: Real> VideoEncoder<T> {
    pub fn init(seed: u64, cfg: &EncoderConfig) -> Self {
        let d = cfg.embed_dim;
        Self {
            patch_embed: super::layers::Linear::init(seed, "video.patch_embed", cfg.patch_dim(), d),
            cls: trunc_normal(seed, "video.cls", &[1, d], INIT_STD),
            spatial_pos: trunc_normal(seed, "video.spatial_pos", &[cfg.num_patches(), d], INIT_STD),
            temporal_pos: trunc_normal(seed, "video.temporal_pos", &[cfg.max_frames, d], INIT_STD),
            blocks: (0..cfg.num_layers)
                .map(|i| SpaceTimeBlock::init(seed, &format!("video.blocks.{i}"), cfg))
                .collect(),
            ln_final: LayerNorm::init(d),
            cfg: cfg.clone(),
        }
    }

    fn check_frame(&self, f: &Frame) -> Result<()> {
        let c = &self.cfg;
        if f.width != c.image_size || f.height != c.image_size || f.channels != c.channels {
            return Err(dim_err!(
                "frame is {}x{}x{}, encoder expects {}x{}x{}",
                f.width,
                f.height,
                f.channels,
                c.image_size,
                c.image_size,
                c.channels
            ));
        }
        Ok(())
    }

    pub(crate) fn clip_batch(&self, clips: &[&[Frame]]) -> Result<PatchBatch<T>> {
        let l = clips.first().map(|c| c.len()).ok_or_else(|| input_err!("empty clip batch"))?;
        if l == 0 || l > self.cfg.max_frames {
            return Err(input_err!("clip of {} frames; allowed 1..={}", l, self.cfg.max_frames));
        }
        if clips.iter().any(|c| c.len() != l) {
            return Err(input_err!("clips in a batch must share their frame count"));
        }
        let (grid, p) = (self.cfg.grid(), self.cfg.patch_size);
        let s = grid * grid;
        let mut raw = Vec::with_capacity(clips.len() * l * s * self.cfg.patch_dim());
        for clip in clips {
            for f in clip.iter() {
                self.check_frame(f)?;
                for r in 0..grid {
                    for c in 0..grid {
                        f.patch_values(p, r, c, &mut raw);
                    }
                }
            }
        }
        Ok(PatchBatch {
            b: clips.len(),
            l,
            s,
            values: raw.into_iter().map(|v| T::from_f64_lossy(v as f64)).collect(),
            spatial: (0..clips.len() * l).flat_map(|_| 0..s).collect(),
            temporal: (0..clips.len()).flat_map(|_| 0..l).collect(),
            keep: None,
        })
    }

    /// Single frames keeping only the patches flagged in `keep_grids`
    /// (row-major over the patch grid). Masked patches are never read.
    pub(crate) fn masked_batch(
        &self,
        frames: &[&Frame],
        keep_grids: &[&[bool]],
        temporal_slots: &[usize],
    ) -> Result<PatchBatch<T>> {
        if frames.is_empty() || frames.len() != keep_grids.len() || frames.len() != temporal_slots.len() {
            return Err(input_err!("masked batch needs matching, nonempty frame/mask/slot lists"));
        }
        let (grid, p) = (self.cfg.grid(), self.cfg.patch_size);
        let cells = grid * grid;
        let mut s = 0;
        for (f, k) in frames.iter().zip(keep_grids) {
            self.check_frame(f)?;
            if k.len() != cells {
                return Err(dim_err!("keep grid of {} cells for a {}x{} patch grid", k.len(), grid, grid));
            }
            let kept = k.iter().filter(|&&x| x).count();
            if kept == 0 {
                return Err(input_err!("masked frame keeps no patches"));
            }
            s = s.max(kept);
        }
        if let Some(&bad) = temporal_slots.iter().find(|&&t| t >= self.cfg.max_frames) {
            return Err(input_err!("temporal slot {} beyond {} frames", bad, self.cfg.max_frames));
        }
        let pd = self.cfg.patch_dim();
        let mut raw = Vec::with_capacity(frames.len() * s * pd);
        let mut spatial = Vec::with_capacity(frames.len() * s);
        let mut keep = Vec::with_capacity(frames.len() * s);
        for (f, k) in frames.iter().zip(keep_grids) {
            let idx: Vec<usize> = (0..cells).filter(|&i| k[i]).collect();
            for &i in &idx {
                f.patch_values(p, i / grid, i % grid, &mut raw);
                spatial.push(i);
                keep.push(true);
            }
            for _ in idx.len()..s {
                raw.extend(std::iter::repeat_n(0.0, pd));
                spatial.push(0);
                keep.push(false);
            }
        }
        Ok(PatchBatch {
            b: frames.len(),
            l: 1,
            s,
            values: raw.into_iter().map(|v| T::from_f64_lossy(v as f64)).collect(),
            spatial,
            temporal: temporal_slots.to_vec(),
            keep: Some(keep),
        })
    }

    /// Run embedding and the first `layers` blocks; returns (cls, tokens).
    pub(crate) fn run(
        &self,
        batch: &PatchBatch<T>,
        single_step: bool,
        layers: usize,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let PatchBatch { b, l, s, .. } = *batch;
        if single_step && l != 1 {
            return Err(input_err!("single-step temporal path needs one frame, got {}", l));
        }
        let d = self.cfg.embed_dim;
        let patches = Tensor::new(batch.values.clone(), &[b * l * s, self.cfg.patch_dim()])?;
        let mut x = self
            .patch_embed
            .forward(&patches)?
            .add(&self.spatial_pos.embedding(&batch.spatial)?)?
            .reshape(&[b, l, s, d])?
            .add(&self.temporal_pos.embedding(&batch.temporal)?.reshape(&[b, l, 1, d])?)?;
        let mut cls = Tensor::zeros(&[b, 1, d]).add(&self.cls)?;
        for block in self.blocks.iter().take(layers) {
            (cls, x) = block.forward(&cls, &x, batch.keep.as_deref(), single_step)?;
        }
        Ok((cls, x))
    }

    /// Final representation `[B, D]` (before projection).
    pub(crate) fn pooled(&self, batch: &PatchBatch<T>, single_step: bool, pooling: Pooling) -> Result<Tensor<T>> {
        let (cls, x) = self.run(batch, single_step, self.blocks.len())?;
        let PatchBatch { b, l, s, .. } = *batch;
        let d = self.cfg.embed_dim;
        match pooling {
            Pooling::Cls => self.ln_final.forward(&cls.reshape(&[b, d])?),
            Pooling::MeanKept => {
                let tokens = self.ln_final.forward(&x)?.reshape(&[b, l * s, d])?;
                let mut weights = vec![T::zero(); b * l * s];
                for (bi, w) in weights.chunks_mut(l * s).enumerate() {
                    let kept: Vec<bool> = match &batch.keep {
                        Some(k) => k[bi * l * s..(bi + 1) * l * s].to_vec(),
                        None => vec![true; l * s],
                    };
                    let inv = T::one() / T::from_usize(kept.iter().filter(|&&k| k).count()).unwrap();
                    for (wi, k) in w.iter_mut().zip(kept) {
                        if k {
                            *wi = inv;
                        }
                    }
                }
                Tensor::new(weights, &[b, 1, l * s])?.bmm(&tokens)?.reshape(&[b, d])
            }
        }
    }
}

impl<T: Real> Module<T> for VideoEncoder<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.patch_embed.visit(&join(prefix, "patch_embed"), out);
        out.push((join(prefix, "cls"), &self.cls));
        out.push((join(prefix, "spatial_pos"), &self.spatial_pos));
        out.push((join(prefix, "temporal_pos"), &self.temporal_pos));
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), out);
        }
        self.ln_final.visit(&join(prefix, "ln_final"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.patch_embed.visit_mut(&join(prefix, "patch_embed"), out);
        out.push((join(prefix, "cls"), &mut self.cls));
        out.push((join(prefix, "spatial_pos"), &mut self.spatial_pos));
        out.push((join(prefix, "temporal_pos"), &mut self.temporal_pos));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), out);
        }
        self.ln_final.visit_mut(&join(prefix, "ln_final"), out);
    }
}
