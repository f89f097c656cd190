//! Parallel versus sequential execution of the three data-parallel hot
//! paths: convolution, batch preprocessing and batch inference.
//!
//! Run with `cargo bench`. Without the `parallel` feature both variants
//! take the sequential path.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ecg_ensemble::exec;
use ecg_ensemble::nn::{predict_probs, Conv1d, SeResNet, SeResNetConfig};
use ecg_ensemble::preprocess::{make_examples, PreprocessConfig};
use ecg_ensemble::record_io::{ClassMap, EcgRecord};
use ecg_ensemble::synth::{generate, SynthSpec};
use ecg_ensemble::Tensor;

const MODES: [(&str, bool); 2] = [("parallel", true), ("sequential", false)];

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn conv_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let conv = Conv1d::new(32, 32, 7, 1, 3, &mut rng);
    let x = random_tensor(&[8, 32, 2500], 2);
    let mut group = c.benchmark_group("conv1d_forward");
    for (name, parallel) in MODES {
        exec::set_parallel(parallel);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| conv.forward(black_box(&x)).unwrap())
        });
    }
    group.finish();
    exec::set_parallel(true);
}

fn records(n: usize, map: &ClassMap) -> Vec<EcgRecord> {
    (0..n)
        .map(|i| {
            let spec = SynthSpec {
                bpm: 50.0 + 5.0 * i as f64,
                duration: 30.0,
                noise_sigma: 0.03,
                seed: i as u64,
                ..SynthSpec::default()
            };
            generate(&spec, map).unwrap().record
        })
        .collect()
}

fn batch_preprocess(c: &mut Criterion) {
    let map = ClassMap::default_map();
    let recs = records(16, &map);
    let cfg = PreprocessConfig::default();
    let mut group = c.benchmark_group("batch_preprocess");
    group.sample_size(10);
    for (name, parallel) in MODES {
        exec::set_parallel(parallel);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| make_examples(black_box(&recs), &cfg, &map).unwrap())
        });
    }
    group.finish();
    exec::set_parallel(true);
}

fn batch_inference(c: &mut Criterion) {
    let model = SeResNet::new(SeResNetConfig::tiny()).unwrap();
    let inputs: Vec<Tensor> = (0..64).map(|i| random_tensor(&[8, 512], 100 + i)).collect();
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let mut group = c.benchmark_group("batch_inference");
    group.sample_size(20);
    for (name, parallel) in MODES {
        exec::set_parallel(parallel);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| predict_probs(&model, black_box(&refs), 8).unwrap())
        });
    }
    group.finish();
    exec::set_parallel(true);
}

criterion_group!(benches, conv_forward, batch_preprocess, batch_inference);
criterion_main!(benches);
