use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng as _;

use bicorec::autograd::{CeTarget, Graph};
use bicorec::corpus::{leave_one_out, AuxTable, UserSequence};
use bicorec::evaluation::{rank_target, top_n};
use bicorec::network::{Binder, Dropout, Network, NetworkConfig, NetworkParameters};
use bicorec::popularity::compute_popularity_scores;
use bicorec::rng::substream;
use bicorec::training::{train_epoch, DualTrainerState, TrainConfig, TrainingData};

const ITEMS: usize = 500;

fn config(d: usize, n: usize) -> NetworkConfig {
    NetworkConfig {
        d,
        k: d,
        n,
        ffn_dim: 4 * d,
        ..Default::default()
    }
}

fn sequence(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = substream(seed, "bench");
    (0..n).map(|t| if t < n / 4 { 0 } else { rng.gen_range(1..=ITEMS) }).collect()
}

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward");
    for (d, n) in [(32, 20), (64, 50)] {
        let cfg = config(d, n);
        let params = NetworkParameters::init(&cfg, ITEMS, 8, &mut substream(1, "init"));
        let aux = AuxTable::zeros(ITEMS, 8);
        let positions = sequence(n, 2);
        let popularity: Vec<f64> = positions.iter().map(|&v| if v == 0 { 0.0 } else { 0.1 }).collect();
        let targets: Vec<CeTarget> = (n / 4..n)
            .map(|t| CeTarget { row: t, class: 1 + t % ITEMS, weight: 1.0 })
            .collect();
        let net = Network::new(&cfg, &params, &aux);
        group.bench_with_input(BenchmarkId::new("train_step", format!("d{d}_n{n}")), &(), |b, _| {
            b.iter(|| {
                let mut g = Graph::new();
                let mut binder = Binder::new(&params);
                let mut dropout = Dropout::train(substream(3, "dropout"));
                let nodes = net
                    .forward_nodes(&mut g, &mut binder, &positions, &popularity, &mut dropout)
                    .unwrap();
                let loss = g.catalog_cross_entropy(nodes.logits, targets.clone());
                black_box(g.backward(loss))
            })
        });
        group.bench_with_input(BenchmarkId::new("score_last", format!("d{d}_n{n}")), &(), |b, _| {
            b.iter(|| black_box(net.score_last(&positions, &popularity).unwrap()))
        });
    }
    group.finish();
}

fn ranking(c: &mut Criterion) {
    let mut rng = substream(4, "scores");
    let scores: Vec<f64> = (0..=10_000).map(|_| rng.gen::<f64>()).collect();
    c.bench_function("rank_target_10k", |b| b.iter(|| rank_target(black_box(&scores), 77).unwrap()));
    c.bench_function("top_10_of_10k", |b| b.iter(|| top_n(black_box(&scores), 10)));
}

fn popularity(c: &mut Criterion) {
    let seqs: Vec<UserSequence> = (0..1000)
        .map(|u| {
            let items: Vec<usize> = sequence(50, u as u64).into_iter().filter(|&v| v != 0).collect();
            UserSequence::from_items(u, &items, 50)
        })
        .collect();
    c.bench_function("tfidf_1000x50", |b| b.iter(|| compute_popularity_scores(black_box(&seqs), ITEMS)));
}

fn epoch(c: &mut Criterion) {
    let seqs: Vec<UserSequence> = (0..200)
        .map(|u| {
            let items: Vec<usize> = sequence(20, 100 + u as u64).into_iter().filter(|&v| v != 0).collect();
            UserSequence::from_items(u, &items, 20)
        })
        .collect();
    let split = leave_one_out(&seqs).unwrap();
    let data = TrainingData::from_split(&split, ITEMS).unwrap();
    let net = config(16, 20);
    let aux = AuxTable::zeros(ITEMS, 0);
    let train = TrainConfig::from_root_seed(5);
    let mut group = c.benchmark_group("epoch");
    group.sample_size(10);
    group.bench_function("dual_200_users", |b| {
        b.iter(|| {
            let mut state = DualTrainerState::init(&net, &train, ITEMS, 0);
            train_epoch(&mut state, &net, &aux, &data, &mut |_| Ok(())).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, forward_backward, ranking, popularity, epoch);
criterion_main!(benches);
