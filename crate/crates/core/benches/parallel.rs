//! Data-parallel kernels and one training step, timed under the rayon pool
//! and under a single-thread pool. Run with `--no-default-features` to time
//! the sequential build instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use oatr::data::load_samples;
use oatr::data::synth::{generate_synthetic_corpus, SynthConfig};
use oatr::encoders::EncoderConfig;
use oatr::trainer::{epoch_order, prepare_batch, TrainConfig, Trainer};
use oatr::{RngState, Tensor};
use rand::Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = RngState::new(seed);
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape).unwrap()
}

fn mode() -> &'static str {
    if cfg!(feature = "parallel") {
        "parallel"
    } else {
        "sequential"
    }
}

/// Run `f` in the global pool and, in the parallel build, in a one-thread pool.
fn compare(c: &mut Criterion, name: &str, mut f: impl FnMut() + Send) {
    let mut group = c.benchmark_group(name);
    group.sample_size(10);
    group.bench_function(BenchmarkId::new(mode(), "default-pool"), |b| b.iter(&mut f));
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        group.bench_function(BenchmarkId::new(mode(), "one-thread"), |b| b.iter(|| single.install(&mut f)));
    }
    group.finish();
}

fn kernels(c: &mut Criterion) {
    let (a, b) = (random(&[32, 64, 64], 1), random(&[32, 64, 64], 2));
    compare(c, "bmm_32x64x64", || {
        a.bmm(&b).unwrap();
    });
    let x = random(&[4096, 64], 3);
    let (gain, bias) = (Tensor::full(&[64], 1.0f32), Tensor::zeros(&[64]));
    compare(c, "layer_norm_4096x64", || {
        x.layer_norm(&gain, &bias, 1e-5).unwrap();
    });
}

fn train_step(c: &mut Criterion) {
    let corpus = generate_synthetic_corpus(&SynthConfig {
        num_samples: 16,
        ..SynthConfig::default()
    })
    .unwrap();
    let samples = load_samples(&corpus.samples, std::path::Path::new(".")).unwrap();
    let config = TrainConfig {
        encoder: EncoderConfig::synthetic(corpus.vocab.len()),
        batch_size: 16,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&config).unwrap();
    let tags = corpus.tags.token_table(&corpus.vocab);
    let batch = prepare_batch(&samples, &epoch_order(0, 0, 16), 0, &config, &trainer.plan, &corpus.vocab, &tags).unwrap();
    compare(c, "train_step_k16", || {
        trainer.train_step(&batch, 1e-4).unwrap();
    });
}

criterion_group!(benches, kernels, train_step);
criterion_main!(benches);
