//! Token transformer for captions and tag sequences.

use super::layers::{join, trunc_normal, Attention, LayerNorm, Mlp, Module, INIT_STD};
use super::EncoderConfig;
use crate::data::vocab::PAD;
use crate::error::{input_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone)]
pub struct TextBlock<T: Real> {
    pub ln1: LayerNorm<T>,
    pub attn: Attention<T>,
    pub ln2: LayerNorm<T>,
    pub mlp: Mlp<T>,
}

impl<T: Real> TextBlock<T> {
    fn init(seed: u64, name: &str, cfg: &EncoderConfig) -> Self {
        let d = cfg.embed_dim;
        Self {
            ln1: LayerNorm::init(d),
            attn: Attention::init(seed, &join(name, "attn"), d, cfg.num_heads),
            ln2: LayerNorm::init(d),
            mlp: Mlp::init(seed, &join(name, "mlp"), d, d * cfg.mlp_ratio),
        }
    }

    fn forward(&self, x: &Tensor<T>, keep: &[bool]) -> Result<Tensor<T>> {
        let x = x.add(&self.attn.forward(&self.ln1.forward(x)?, Some(keep))?)?;
        x.add(&self.mlp.forward(&self.ln2.forward(&x)?)?)
    }
}

impl<T: Real> Module<T> for TextBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.ln1.visit(&join(prefix, "ln1"), out);
        self.attn.visit(&join(prefix, "attn"), out);
        self.ln2.visit(&join(prefix, "ln2"), out);
        self.mlp.visit(&join(prefix, "mlp"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.ln1.visit_mut(&join(prefix, "ln1"), out);
        self.attn.visit_mut(&join(prefix, "attn"), out);
        self.ln2.visit_mut(&join(prefix, "ln2"), out);
        self.mlp.visit_mut(&join(prefix, "mlp"), out);
    }
}

#[derive(Clone)]
pub struct TextEncoder<T: Real> {
    pub token_embed: Tensor<T>,
    pub pos_embed: Tensor<T>,
    pub blocks: Vec<TextBlock<T>>,
    pub ln_final: LayerNorm<T>,
    vocab_size: usize,
    max_tokens: usize,
}

impl<T: Real> TextEncoder<T> {
    pub fn init(seed: u64, cfg: &EncoderConfig) -> Self {
        let d = cfg.embed_dim;
        Self {
            token_embed: trunc_normal(seed, "text.token_embed", &[cfg.vocab_size, d], INIT_STD),
            pos_embed: trunc_normal(seed, "text.pos_embed", &[cfg.max_text_tokens, d], INIT_STD),
            blocks: (0..cfg.num_layers)
                .map(|i| TextBlock::init(seed, &format!("text.blocks.{i}"), cfg))
                .collect(),
            ln_final: LayerNorm::init(d),
            vocab_size: cfg.vocab_size,
            max_tokens: cfg.max_text_tokens,
        }
    }

    /// Validate and right-pad a batch; returns (ids, key mask, seq len).
    fn prepare(&self, batch: &[Vec<u32>]) -> Result<(Vec<usize>, Vec<bool>, usize)> {
        if batch.is_empty() {
            return Err(input_err!("empty text batch"));
        }
        let mut s = 0;
        for seq in batch {
            if seq.is_empty() {
                return Err(input_err!("empty token sequence"));
            }
            if seq.len() > self.max_tokens {
                return Err(input_err!("sequence of {} tokens exceeds {}", seq.len(), self.max_tokens));
            }
            if let Some(&bad) = seq.iter().find(|&&id| id as usize >= self.vocab_size) {
                return Err(input_err!("token id {} outside vocabulary of {}", bad, self.vocab_size));
            }
            if seq.iter().all(|&id| id == PAD) {
                return Err(input_err!("sequence holds only padding"));
            }
            let used = seq.iter().rposition(|&id| id != PAD).map_or(0, |p| p + 1);
            s = s.max(used);
        }
        let mut ids = Vec::with_capacity(batch.len() * s);
        let mut keep = Vec::with_capacity(batch.len() * s);
        for seq in batch {
            for i in 0..s {
                let id = seq.get(i).copied().unwrap_or(PAD);
                ids.push(id as usize);
                keep.push(id != PAD);
            }
        }
        Ok((ids, keep, s))
    }

    /// Token states after `layers` blocks, `[B, S, D]`, plus the key mask.
    pub fn hidden(&self, batch: &[Vec<u32>], layers: usize) -> Result<(Tensor<T>, Vec<bool>)> {
        let (ids, keep, s) = self.prepare(batch)?;
        let b = batch.len();
        let d = self.token_embed.shape()[1];
        let pos = self.pos_embed.narrow(0, 0, s)?;
        let mut x = self
            .token_embed
            .embedding(&ids)?
            .reshape(&[b, s, d])?
            .add(&pos)?;
        for block in self.blocks.iter().take(layers) {
            x = block.forward(&x, &keep)?;
        }
        Ok((x, keep))
    }

    /// Final-layer CLS state, `[B, D]`.
    pub fn forward(&self, batch: &[Vec<u32>]) -> Result<Tensor<T>> {
        let (x, _) = self.hidden(batch, self.blocks.len())?;
        let (b, d) = (x.shape()[0], x.shape()[2]);
        self.ln_final.forward(&x.narrow(1, 0, 1)?.reshape(&[b, d])?)
    }
}

impl<T: Real> Module<T> for TextEncoder<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((join(prefix, "token_embed"), &self.token_embed));
        out.push((join(prefix, "pos_embed"), &self.pos_embed));
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), out);
        }
        self.ln_final.visit(&join(prefix, "ln_final"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((join(prefix, "token_embed"), &mut self.token_embed));
        out.push((join(prefix, "pos_embed"), &mut self.pos_embed));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), out);
        }
        self.ln_final.visit_mut(&join(prefix, "ln_final"), out);
    }
}
