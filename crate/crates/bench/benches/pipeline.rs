use criterion::{black_box, criterion_group, criterion_main, Criterion};

use cfloss_bench::{batch, dataset, state};
use cfloss_core::eval::{self, valid_ndcg20};
use cfloss_core::losses::{loss_and_grad, LossConfig, LossKind};
use cfloss_core::optim::AdamState;
use cfloss_core::{Encoder, NegativeMode, NormalizedAdjacency};

fn lightgcn(c: &mut Criterion) {
    let ds = dataset(1000, 1500, 50_000);
    let s = state(&ds, 64);
    let adj = NormalizedAdjacency::from_pairs(ds.num_users, ds.num_items, &ds.train_pairs());
    let enc = Encoder::lightgcn(adj, 2);
    c.bench_function("lightgcn/forward", |b| b.iter(|| black_box(enc.forward(&s))));
    let cfg = LossConfig::new(LossKind::Ssm);
    let bt = batch(&ds, 512, 0, NegativeMode::InBatch);
    c.bench_function("lightgcn/ssm_step", |b| b.iter(|| loss_and_grad(&cfg, &s, &enc, &bt).unwrap()));
}

fn adam(c: &mut Criterion) {
    let ds = dataset(1000, 1500, 50_000);
    let mut s = state(&ds, 64);
    let cfg = LossConfig::new(LossKind::Bpr);
    let bt = batch(&ds, 2048, 1, NegativeMode::Uniform);
    let ev = loss_and_grad(&cfg, &s, &Encoder::Mf, &bt).unwrap();
    let mut opt = AdamState::new(1e-3, 0.0);
    c.bench_function("adam/lazy_step_2048", |b| b.iter(|| opt.step(&mut s, &ev.grads).unwrap()));
}

fn ranking(c: &mut Criterion) {
    let ds = dataset(1000, 1500, 50_000);
    let s = state(&ds, 64);
    let emb = Encoder::Mf.forward(&s);
    let mut g = c.benchmark_group("eval");
    g.sample_size(10);
    g.bench_function("valid_ndcg20", |b| b.iter(|| valid_ndcg20(&ds, &emb)));
    g.bench_function("full_report", |b| b.iter(|| eval::evaluate(&ds, &emb, cfloss_core::SplitLabel::Test)));
    g.finish();
}

criterion_group!(benches, lightgcn, adam, ranking);
criterion_main!(benches);
