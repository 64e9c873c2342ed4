use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::schedule::lr_with_warmup;
use super::step::{epoch_order, prepare_batch, Trainer};
use super::TrainConfig;
use crate::data::manifest::check_tags;
use crate::data::{LoadedSample, TagVocabulary, Vocabulary};
use crate::encoders::DualEncoder;
use crate::error::{Error, Result};
use crate::tensor::checkpoint::{self, Entry};
use crate::tensor::Tensor;

pub const MODEL_FILE: &str = "model.oatr";
pub const OPTIM_FILE: &str = "optim.oatr";
pub const SIDECAR_FILE: &str = "model.json";
pub const METRICS_FILE: &str = "metrics.jsonl";

/// One line of `metrics.jsonl`; disabled loss terms are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_m: f64,
    pub loss_tag: Option<f64>,
    pub loss_mask: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    step: usize,
    adam_step: u64,
    config: TrainConfig,
}

/// A trained model with the configuration that produced it.
pub struct Checkpoint {
    pub model: DualEncoder<f32>,
    pub config: TrainConfig,
    pub step: usize,
}

pub struct PretrainOutput {
    pub trainer: Trainer,
    /// Metrics of the steps run by this call.
    pub metrics: Vec<StepMetrics>,
    /// False when `max_steps` stopped the run early.
    pub completed: bool,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Write model, optimizer state and sidecar into `dir`.
pub fn save_checkpoint(dir: &Path, trainer: &Trainer) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    checkpoint::save(&dir.join(MODEL_FILE), &trainer.model.to_entries())?;
    let mut optim = Vec::new();
    for (i, name) in trainer.param_names().iter().enumerate() {
        let n = trainer.adam.m[i].len();
        optim.push(Entry::from_tensor(format!("adam.m.{name}"), &Tensor::new(trainer.adam.m[i].clone(), &[n])?));
        optim.push(Entry::from_tensor(format!("adam.v.{name}"), &Tensor::new(trainer.adam.v[i].clone(), &[n])?));
    }
    if let Some(s) = &trainer.log_scale {
        optim.push(Entry::from_tensor("logit_scale", s));
    }
    checkpoint::save(&dir.join(OPTIM_FILE), &optim)?;
    let sidecar = Sidecar {
        step: trainer.step,
        adam_step: trainer.adam.step,
        config: trainer.config.clone(),
    };
    write_atomic(&dir.join(SIDECAR_FILE), serde_json::to_string_pretty(&sidecar)?.as_bytes())
}

fn checkpoint_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn read_sidecar(dir: &Path) -> Result<Sidecar> {
    let path = dir.join(SIDECAR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Load a model from a checkpoint directory or its `model.oatr` file.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let dir = checkpoint_dir(path);
    let sidecar = read_sidecar(&dir)?;
    let model_path = if path.is_dir() { dir.join(MODEL_FILE) } else { path.to_path_buf() };
    let mut model = DualEncoder::init(sidecar.config.seed, &sidecar.config.encoder)?;
    model.load_entries(&checkpoint::load(&model_path)?)?;
    Ok(Checkpoint {
        model,
        config: sidecar.config,
        step: sidecar.step,
    })
}

fn resume_trainer(dir: &Path, config: &TrainConfig) -> Result<Trainer> {
    let sidecar = read_sidecar(dir)?;
    let comparable = |c: &TrainConfig| TrainConfig {
        max_steps: None,
        checkpoint_every: 0,
        ..c.clone()
    };
    if comparable(&sidecar.config) != comparable(config) {
        return Err(Error::Config(format!(
            "checkpoint in {} was written by a different configuration",
            dir.display()
        )));
    }
    let mut trainer = Trainer::new(config)?;
    trainer.model.load_entries(&checkpoint::load(&dir.join(MODEL_FILE))?)?;
    let optim = checkpoint::load(&dir.join(OPTIM_FILE))?;
    let find = |name: &str| {
        optim
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("optimizer state lacks `{name}`")))
    };
    let names = trainer.param_names();
    let mut adam = AdamState::new(&[]);
    for (i, name) in names.iter().enumerate() {
        let (m, v) = (find(&format!("adam.m.{name}"))?, find(&format!("adam.v.{name}"))?);
        if m.values.len() != trainer.adam.m[i].len() || v.values.len() != trainer.adam.v[i].len() {
            return Err(Error::Checkpoint(format!("optimizer state for `{name}` has the wrong size")));
        }
        adam.m.push(m.values.clone());
        adam.v.push(v.values.clone());
    }
    adam.step = sidecar.adam_step;
    trainer.adam = adam;
    if trainer.log_scale.is_some() {
        trainer.log_scale = Some(find("logit_scale")?.to_tensor::<f32>().requiring_grad());
    }
    trainer.step = sidecar.step;
    Ok(trainer)
}

/// Keep the first `steps` lines of an existing metrics log.
fn truncate_metrics(path: &Path, steps: usize) -> Result<()> {
    let kept: Vec<String> = match fs::File::open(path) {
        Ok(f) => BufReader::new(f)
            .lines()
            .take(steps)
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path, e))?,
        Err(_) => Vec::new(),
    };
    let mut text = kept.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Pre-train on `samples`. With `out_dir`, checkpoints and metrics are
/// written there, and an existing checkpoint in it is resumed. `progress`
/// sees every step's metrics.
pub fn run_pretrain(
    config: &TrainConfig,
    samples: &[LoadedSample],
    vocab: &Vocabulary,
    tags: &TagVocabulary,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&StepMetrics),
) -> Result<PretrainOutput> {
    config.validate()?;
    if config.encoder.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "encoder vocab_size {} does not match the vocabulary of {} tokens",
            config.encoder.vocab_size,
            vocab.len()
        )));
    }
    for s in samples {
        check_tags(std::slice::from_ref(&s.sample), tags.len())?;
    }
    let per_epoch = config.steps_per_epoch(samples.len());
    if per_epoch == 0 {
        return Err(Error::Input(format!("{} samples cannot form a batch of two", samples.len())));
    }
    let total = config.epochs * per_epoch;
    let tag_tokens = tags.token_table(vocab);

    let resume = out_dir.filter(|d| d.join(SIDECAR_FILE).exists());
    let mut trainer = match resume {
        Some(dir) => resume_trainer(dir, config)?,
        None => Trainer::new(config)?,
    };
    // The stored config may carry another max_steps; this call's wins.
    trainer.config = config.clone();
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(METRICS_FILE);
            truncate_metrics(&path, trainer.step)?;
            Some(
                fs::OpenOptions::new()
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?,
            )
        }
        None => None,
    };

    let stop = config.max_steps.map_or(total, |m| m.min(total));
    let mut metrics = Vec::new();
    let mut order_epoch = usize::MAX;
    let mut order = Vec::new();
    while trainer.step < stop {
        let step = trainer.step;
        let (epoch, b) = (step / per_epoch, step % per_epoch);
        if epoch != order_epoch {
            order = epoch_order(config.seed, epoch, samples.len());
            order_epoch = epoch;
        }
        let ids = &order[b * config.batch_size..((b + 1) * config.batch_size).min(samples.len())];
        let batch = prepare_batch(samples, ids, epoch, config, &trainer.plan, vocab, &tag_tokens)?;
        let lr = lr_with_warmup(step, total, config.warmup_steps, config.lr_max, config.lr_min)?;
        let losses = trainer.train_step(&batch, lr)?;
        let m = StepMetrics {
            step: step + 1,
            epoch,
            lr,
            loss_total: losses.total,
            loss_m: losses.matching,
            loss_tag: losses.tag,
            loss_mask: losses.mask,
        };
        if let (Some(f), Some(dir)) = (log.as_mut(), out_dir) {
            writeln!(f, "{}", serde_json::to_string(&m)?).map_err(|e| Error::io(dir.join(METRICS_FILE), e))?;
        }
        progress(&m);
        metrics.push(m);
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && trainer.step % config.checkpoint_every == 0 {
                save_checkpoint(dir, &trainer)?;
            }
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(dir, &trainer)?;
    }
    Ok(PretrainOutput {
        completed: trainer.step >= total,
        trainer,
        metrics,
    })
}
