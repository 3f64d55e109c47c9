use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use geognn_bench::{molecules, samples};
use geognn_core::train::rocauc;
use geognn_core::{FeatureConfig, GeoGnn, Graph, ModelConfig, Precision, Sample, SplitMix64};

fn featurize(c: &mut Criterion) {
    let mols = molecules(32, 1);
    let features = FeatureConfig::default();
    c.bench_function("featurize_32", |b| {
        b.iter_batched(
            || mols.clone(),
            |mols| {
                for m in mols {
                    black_box(Sample::new(m, &features).unwrap());
                }
            },
            BatchSize::SmallInput,
        )
    });
}

fn forward_backward(c: &mut Criterion) {
    let data = samples(8, 2);
    let model = GeoGnn::new(ModelConfig::default(), FeatureConfig::default().layout(), 0, Precision::F64).unwrap();
    c.bench_function("forward_8", |b| {
        b.iter(|| {
            let mut rng = SplitMix64::new(3);
            for s in &data {
                let mut g = Graph::new();
                black_box(model.forward(&mut g, &s.encoded, &s.graph, false, &mut rng).unwrap());
            }
        })
    });
    c.bench_function("forward_backward_8", |b| {
        b.iter(|| {
            let mut rng = SplitMix64::new(3);
            for s in &data {
                let mut g = Graph::new();
                let emb = model.forward(&mut g, &s.encoded, &s.graph, true, &mut rng).unwrap();
                let loss = g.sum(emb.graph).unwrap();
                black_box(g.backward(loss).unwrap());
            }
        })
    });
}

fn auc(c: &mut Criterion) {
    let mut rng = SplitMix64::new(4);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.next_f64()).collect();
    let labels: Vec<Option<f64>> = (0..10_000)
        .map(|i| if i % 17 == 0 { None } else { Some((rng.next_f64() < 0.3) as u8 as f64) })
        .collect();
    c.bench_function("rocauc_10k", |b| b.iter(|| black_box(rocauc(&scores, &labels).unwrap())));
}

criterion_group!(benches, featurize, forward_backward, auc);
criterion_main!(benches);
