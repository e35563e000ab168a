use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use e2fl_core::data::{make_grouped_dataset, GroupSpec, GroupedDataSpec, TransformKind};
use e2fl_core::edgepopup::{local_ranking, EpConfig};
use e2fl_core::groupinfer::{lowest_loss, oneshot};
use e2fl_core::ranking::{ranking_to_mask, spearman_distance, vote};
use e2fl_core::{NetSpec, Ranking, SuperNetwork};

fn rankings(spec: &NetSpec, n: u64) -> Vec<Ranking> {
    (0..n).map(|s| Ranking::from_scores(&spec.init_scores(s)).unwrap()).collect()
}

fn bench_vote(c: &mut Criterion) {
    let spec = NetSpec::new(vec![16, 32, 4]).unwrap();
    let mut g = c.benchmark_group("vote");
    for n in [10u64, 30, 100] {
        let rs = rankings(&spec, n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &rs, |b, rs| b.iter(|| vote(black_box(rs)).unwrap()));
    }
    g.finish();
}

fn bench_spearman(c: &mut Criterion) {
    let spec = NetSpec::new(vec![64, 256, 10]).unwrap();
    let rs = rankings(&spec, 2);
    c.bench_function("spearman_distance", |b| b.iter(|| spearman_distance(black_box(&rs[0]), black_box(&rs[1])).unwrap()));
}

fn bench_client_round(c: &mut Criterion) {
    let spec = NetSpec::new(vec![16, 32, 4]).unwrap();
    let data = GroupedDataSpec {
        groups: GroupSpec::new(vec![1], TransformKind::CoordinatePermutation, 16, 0),
        samples_per_client: 200,
        n_classes: 4,
        feature_dim: 16,
        noise_std: 0.3,
        train_fraction: 0.8,
    };
    let client = make_grouped_dataset(0, &data).unwrap().remove(0);
    let net = SuperNetwork::init(spec.clone(), 0);
    let global = Ranking::from_scores(net.scores()).unwrap();
    let ep = EpConfig::default();
    c.bench_function("local_ranking", |b| {
        b.iter(|| local_ranking(&net, &global, black_box(&client.train), &ep, 1).unwrap())
    });
    let masks: Vec<_> = rankings(&spec, 10).iter().map(|r| ranking_to_mask(r, 50.0).unwrap()).collect();
    c.bench_function("lowest_loss_q10", |b| b.iter(|| lowest_loss(&net, &masks, black_box(&client.train)).unwrap()));
    c.bench_function("oneshot_q10", |b| b.iter(|| oneshot(&net, &masks, black_box(&client.train)).unwrap()));
}

criterion_group!(benches, bench_vote, bench_spearman, bench_client_round);
criterion_main!(benches);
