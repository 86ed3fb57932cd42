//! Sequential versus pooled execution of the data-parallel stages.
//!
//! Each group runs the same workload on a one-thread pool and on rayon's
//! default pool. Build with `--no-default-features` to time the plain
//! iterator fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use wiopen_core::net::DeskScale;
use wiopen_core::osgr::{train, TrainConfig, TrainSample};
use wiopen_core::par;
use wiopen_core::preprocess::{preprocess_record, PreprocessConfig};
use wiopen_core::synth::{synth_record, SynthConfig};
use wiopen_core::uncertainty::{psi_domain, Metric};

const MODES: [(&str, usize); 2] = [("threads=1", 1), ("pool", 0)];

fn mode_name(name: &str) -> String {
    if par::is_parallel() {
        name.to_string()
    } else {
        format!("{name}/sequential-build")
    }
}

fn records(n: usize) -> (SynthConfig, Vec<wiopen_core::data::CsiRecord>) {
    let mut cfg = SynthConfig::default();
    cfg.classes.truncate(4);
    cfg.instances = vec![n / 4];
    let recs = cfg.plan().unwrap().iter().map(|p| synth_record(&cfg, p, 3).unwrap()).collect();
    (cfg, recs)
}

fn bench_preprocess(c: &mut Criterion) {
    let (_, recs) = records(8);
    let pc = PreprocessConfig::default();
    let mut g = c.benchmark_group("preprocess_8_records");
    g.sample_size(10);
    for (name, threads) in MODES {
        g.bench_function(BenchmarkId::from_parameter(mode_name(name)), |b| {
            b.iter(|| {
                par::with_threads(threads, || {
                    par::map(&recs, |r| preprocess_record(r, &pc).unwrap().dfs.len()).len()
                })
            })
        });
    }
    g.finish();
}

fn bench_train(c: &mut Criterion) {
    let (_, recs) = records(16);
    let pc = PreprocessConfig::default();
    let samples: Vec<TrainSample> = recs
        .iter()
        .map(|r| {
            let p = preprocess_record(r, &pc).unwrap();
            TrainSample {
                input: p.input,
                dfs: p.dfs,
                label: r.label,
            }
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 1,
        k: 5,
        arch: DeskScale {
            enc_channels: vec![4, 8, 8],
            embed_dim: 16,
            ..DeskScale::default()
        },
        ..TrainConfig::default()
    };
    let mut g = c.benchmark_group("train_epoch_16_samples");
    g.sample_size(10);
    for (name, threads) in MODES {
        g.bench_function(BenchmarkId::from_parameter(mode_name(name)), |b| {
            b.iter(|| par::with_threads(threads, || black_box(train(&samples, &cfg, 1).unwrap().history.trained)))
        });
    }
    g.finish();
}

fn bench_psi_domain(c: &mut Criterion) {
    let n = 400;
    let feats: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..256).map(|j| ((i * 31 + j * 7) % 97) as f64 / 97.0).collect())
        .collect();
    let labels: Vec<u32> = (0..n as u32).map(|i| i % 5).collect();
    let mut g = c.benchmark_group("psi_domain_400x256");
    for (name, threads) in MODES {
        g.bench_function(BenchmarkId::from_parameter(mode_name(name)), |b| {
            b.iter(|| par::with_threads(threads, || psi_domain(&feats, &labels, Metric::Euclidean).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_preprocess, bench_train, bench_psi_domain);
criterion_main!(benches);
