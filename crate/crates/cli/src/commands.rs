use std::path::{Path, PathBuf};

use oatr::data::manifest::{base_dir, load_manifest};
use oatr::data::sampler::sample_indices;
use oatr::data::synth::{generate_synthetic_corpus, SynthConfig};
use oatr::data::{load_samples, tokenize, Frame, LoadedSample, TagVocabulary, Vocabulary};
use oatr::encoders::EncoderConfig;
use oatr::eval::{dump_attention_map, linear_probe, report_table, zero_shot_eval, EvalOptions, ProbeConfig};
use oatr::objects::{build_masked_anchor, ObjectConfig};
use oatr::tensor::GradCheckConfig;
use oatr::trainer::{load_checkpoint, objective_grad_check, run_pretrain, TrainConfig};
use oatr::RngState;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{file_sets, read_json, resolve};
use crate::{Cli, CliError, Command};

fn echo<T: Serialize>(command: &str, config: &T) -> Result<(), CliError> {
    let line = json!({ "command": command, "config": config });
    println!("{line}");
    Ok(())
}

fn sibling(manifest: &Path, given: Option<PathBuf>, name: &str) -> PathBuf {
    given.unwrap_or_else(|| base_dir(manifest).join(name))
}

fn load_split(manifest: &Path) -> Result<Vec<LoadedSample>, CliError> {
    let samples = load_manifest(manifest)?;
    Ok(load_samples(&samples, &base_dir(manifest))?)
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file: Option<Value> = cli.config.as_deref().map(read_json).transpose()?;
    let file = file.as_ref();
    let seed = cli.seed;
    match cli.command {
        Command::GenSynth {
            out,
            samples,
            classes,
            frames,
            image_size,
            captions_per_video,
        } => {
            let cfg = resolve(SynthConfig::default(), file, |c| {
                set(&mut c.num_samples, samples);
                set(&mut c.num_classes, classes);
                set(&mut c.num_frames, frames);
                set(&mut c.image_size, image_size);
                set(&mut c.captions_per_video, captions_per_video);
                set(&mut c.seed, seed);
            })?;
            echo("gen-synth", &cfg)?;
            let corpus = generate_synthetic_corpus(&cfg)?;
            corpus.write(&out)?;
            println!("{}", json!({ "out": out, "samples": corpus.samples.len() }));
            Ok(())
        }
        Command::Pretrain {
            manifest,
            vocab,
            tags,
            out,
            ablation,
            tag_strategy,
            visual_input,
            epochs,
            batch_size,
            lr,
            lr_min,
            lambda,
            temperature,
            learnable_temperature,
            frames,
            max_steps,
            checkpoint_every,
        } => {
            let vocab = Vocabulary::load(&sibling(&manifest, vocab, "vocab.txt"))?;
            let tag_vocab = TagVocabulary::load(&sibling(&manifest, tags, "tags.txt"))?;
            let samples = load_split(&manifest)?;
            let mut defaults = TrainConfig {
                encoder: EncoderConfig::synthetic(vocab.len()),
                ..TrainConfig::default()
            };
            if let Some(f) = samples.first().and_then(|s| s.frames.first()) {
                if !file_sets(file, "/encoder/image_size") {
                    defaults.encoder.image_size = f.width;
                }
            }
            let cfg = resolve(defaults, file, |c| {
                if let Some(a) = ablation {
                    a.apply(c);
                }
                set(&mut c.tag_strategy, tag_strategy);
                set(&mut c.visual_input, visual_input);
                set(&mut c.epochs, epochs);
                set(&mut c.batch_size, batch_size);
                set(&mut c.lr_max, lr);
                set(&mut c.lr_min, lr_min);
                set(&mut c.loss.lambda, lambda);
                set(&mut c.loss.temperature, temperature);
                c.learnable_temperature |= learnable_temperature;
                set(&mut c.frames_per_clip, frames);
                if max_steps.is_some() {
                    c.max_steps = max_steps;
                }
                set(&mut c.checkpoint_every, checkpoint_every);
                set(&mut c.seed, seed);
            })?;
            echo("pretrain", &cfg)?;
            let per_epoch = cfg.steps_per_epoch(samples.len()).max(1);
            let (mut sum, mut n) = (0.0, 0usize);
            let out_run = run_pretrain(&cfg, &samples, &vocab, &tag_vocab, Some(&out), &mut |m| {
                sum += m.loss_total;
                n += 1;
                if m.step % per_epoch == 0 {
                    eprintln!("epoch {:>3}  step {:>6}  lr {:.2e}  loss {:.4}", m.epoch + 1, m.step, m.lr, sum / n as f64);
                    (sum, n) = (0.0, 0);
                }
            })?;
            println!(
                "{}",
                json!({ "out": out, "steps": out_run.trainer.step, "completed": out_run.completed })
            );
            Ok(())
        }
        Command::EvalZeroshot {
            checkpoint,
            manifest,
            vocab,
            frames,
            multi_sentence,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let vocab = Vocabulary::load(&sibling(&manifest, vocab, "vocab.txt"))?;
            let opts = resolve(EvalOptions::default(), file, |o| {
                set(&mut o.frames_per_clip, frames);
                o.multi_sentence |= multi_sentence;
            })?;
            check_frames(opts.frames_per_clip, &ckpt.model.config)?;
            echo("eval-zeroshot", &opts)?;
            let samples = load_split(&manifest)?;
            let (t2v, v2t) = zero_shot_eval(&ckpt.model, &samples, &vocab, &opts)?;
            for r in [&t2v, &v2t] {
                println!("{}", serde_json::to_string(r).map_err(oatr::Error::from)?);
            }
            println!("{}", report_table(&[t2v, v2t]));
            Ok(())
        }
        Command::LinearProbe {
            checkpoint,
            train,
            test,
            vocab,
            epochs,
            lr,
            batch_size,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let vocab = Vocabulary::load(&sibling(&train, vocab, "vocab.txt"))?;
            let cfg = resolve(ProbeConfig::default(), file, |c| {
                set(&mut c.epochs, epochs);
                set(&mut c.lr, lr);
                set(&mut c.batch_size, batch_size);
                set(&mut c.seed, seed);
            })?;
            check_frames(cfg.eval.frames_per_clip, &ckpt.model.config)?;
            echo("linear-probe", &cfg)?;
            let (train, test) = (load_split(&train)?, load_split(&test)?);
            let out = linear_probe(&ckpt.model, &train, &test, &vocab, &cfg)?;
            for r in [&out.t2v, &out.v2t] {
                println!("{}", serde_json::to_string(r).map_err(oatr::Error::from)?);
            }
            println!("{}", report_table(&[out.t2v, out.v2t]));
            Ok(())
        }
        Command::DumpMask {
            manifest,
            index,
            out,
            patch_size,
            frames,
        } => {
            let cfg = resolve(ObjectConfig::default(), file, |_| {})?;
            cfg.validate()?;
            let seed = seed.unwrap_or(0);
            echo("dump-mask", &json!({ "objects": cfg, "seed": seed, "index": index, "patch_size": patch_size }))?;
            let samples = load_split(&manifest)?;
            let s = samples
                .get(index)
                .ok_or_else(|| usage(format!("--index {index}: manifest has {} samples", samples.len())))?;
            let clip = sample_indices(s.frames.len(), frames)?;
            let mut rng = RngState::new(seed);
            let anchor = build_masked_anchor(&s.frames, &clip, &s.sample.objects, patch_size, &cfg, &mut rng)?;
            anchor.render().write_ppm(&out)?;
            println!(
                "{}",
                json!({
                    "video_id": s.sample.video_id,
                    "anchor_frame": anchor.anchor_frame_index,
                    "kept_tags": anchor.kept_objects.iter().map(|a| a.tag_id).collect::<Vec<_>>(),
                    "kept_patches": anchor.kept_count(),
                    "used_fallback": anchor.used_fallback,
                    "out": out,
                })
            );
            Ok(())
        }
        Command::DumpAttn {
            checkpoint,
            manifest,
            vocab,
            index,
            caption,
            token_index,
            frames,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            check_frames(frames, &ckpt.model.config)?;
            let vocab = Vocabulary::load(&sibling(&manifest, vocab, "vocab.txt"))?;
            echo(
                "dump-attn",
                &json!({ "index": index, "caption": caption, "token_index": token_index, "frames": frames }),
            )?;
            let samples = load_split(&manifest)?;
            let s = samples
                .get(index)
                .ok_or_else(|| usage(format!("--index {index}: manifest has {} samples", samples.len())))?;
            let text = s
                .sample
                .captions
                .get(caption)
                .ok_or_else(|| usage(format!("--caption {caption}: sample has {} captions", s.sample.captions.len())))?;
            let tokens: Vec<u32> = tokenize(text, &vocab, ckpt.model.config.max_text_tokens)
                .into_iter()
                .filter(|&t| t != oatr::data::vocab::PAD)
                .collect();
            if token_index >= tokens.len() {
                return Err(usage(format!("--token-index {token_index}: caption has {} tokens", tokens.len())));
            }
            let clip: Vec<Frame> = sample_indices(s.frames.len(), frames)?
                .into_iter()
                .map(|i| s.frames[i].clone())
                .collect();
            let map = dump_attention_map(&ckpt.model, &clip, &tokens, token_index, &out)?;
            let token = vocab.token(tokens[token_index]).unwrap_or("?");
            println!("{}", json!({ "token": token, "weights": map.weights, "out": out }));
            Ok(())
        }
        Command::GradCheck { tolerance, coords } => {
            let cfg = GradCheckConfig {
                tolerance,
                max_coords_per_input: (coords > 0).then_some(coords),
                seed: seed.unwrap_or(0),
                ..GradCheckConfig::default()
            };
            echo("grad-check", &json!({ "tolerance": tolerance, "coords": coords, "seed": cfg.seed }))?;
            let report = objective_grad_check(cfg.seed, &cfg)?;
            println!("{}", serde_json::to_string(&report).map_err(oatr::Error::from)?);
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::Runtime(oatr::Error::Contract(format!(
                    "gradient check failed: max relative error {:.3e} above {:.1e}",
                    report.max_rel_error, tolerance
                ))))
            }
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn check_frames(frames: usize, config: &EncoderConfig) -> Result<(), CliError> {
    if frames == 0 || frames > config.max_frames {
        return Err(usage(format!("--frames {frames}: model supports 1..={} frames", config.max_frames)));
    }
    Ok(())
}
