use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sqgen_bench::{matrix, sentence_pairs, toy_model};
use sqgen_core::decoding::{beam_search, ContextDecoder};
use sqgen_core::genmetrics::{bleu, rouge_l};
use sqgen_core::BeamConfig;
use std::hint::black_box;

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [32, 64, 128] {
        let a = matrix(n, n, 1);
        let b = matrix(n, n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn bench_encoder(c: &mut Criterion) {
    let mut group = c.benchmark_group("encoder_forward");
    group.sample_size(20);
    for len in [32, 64] {
        let (model, ids, types) = toy_model(200, len);
        group.bench_with_input(BenchmarkId::from_parameter(len), &len, |bench, _| {
            bench.iter(|| model.encode_context(black_box(&ids), black_box(&types)).unwrap())
        });
    }
    group.finish();
}

fn bench_beam(c: &mut Criterion) {
    let mut group = c.benchmark_group("beam_search");
    group.sample_size(10);
    let (model, ids, types) = toy_model(200, 32);
    let decoder = ContextDecoder::new(&model, &ids, &types).unwrap();
    for beam in [1, 3] {
        let cfg = BeamConfig {
            beam,
            max_len: 8,
            length_normalize: true,
        };
        group.bench_with_input(BenchmarkId::from_parameter(beam), &cfg, |bench, cfg| {
            bench.iter(|| beam_search(&decoder, *cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let (cands, refs) = sentence_pairs(1000, 12);
    c.bench_function("bleu4_corpus_1000", |b| b.iter(|| bleu(black_box(&cands), black_box(&refs), 4).unwrap()));
    c.bench_function("rouge_l_1000", |b| {
        b.iter(|| cands.iter().zip(&refs).map(|(c, r)| rouge_l(c, r)).sum::<f64>())
    });
}

criterion_group!(benches, bench_matmul, bench_encoder, bench_beam, bench_metrics);
criterion_main!(benches);
