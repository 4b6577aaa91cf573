//! Rayon batch path vs. the sequential fallback on the workbench's hot
//! loops: batch win-rate scoring, store retrieval, guard voting, and
//! gray-box candidate evaluation.
//!
//! With the default `parallel` feature, `map_batch` fans out over rayon;
//! `map_batch_seq` is the sequential reference. Building with
//! `--no-default-features` makes both paths sequential, which is the
//! fallback configuration this suite exists to compare.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use routelab::corpus::{
    generate_synthetic_corpus, synthesize_preferences, CorpusParams, PreferenceParams,
};
use routelab::embed::{embed_hashed, Vocab, HASH_DIM};
use routelab::guard::{GuardConfig, SiameseModel};
use routelab::nn::TrainConfig;
use routelab::parallel::{map_batch, map_batch_seq};
use routelab::routers::{train_router, Router, RouterKind};

fn bench_batch_scoring(c: &mut Criterion) {
    let params = CorpusParams {
        n_simple: 150,
        n_complex: 150,
        noise_fraction: 0.1,
    };
    let corpus = generate_synthetic_corpus(7, &params).unwrap();
    let prefs = synthesize_preferences(&corpus, 8, &PreferenceParams::default()).unwrap();
    let vocab = Vocab::from_texts(corpus.iter().map(|q| q.text.as_str()));
    let cfg = TrainConfig {
        max_epochs: 4,
        seed: 5,
        ..TrainConfig::default()
    };

    let mut group = c.benchmark_group("batch_win_rates");
    for kind in [RouterKind::Cls, RouterKind::Sw] {
        let router = train_router(kind, &corpus, &prefs, &vocab, &cfg).unwrap();
        group.bench_with_input(
            BenchmarkId::new("parallel", kind.as_str()),
            &router,
            |b, router| {
                b.iter(|| {
                    map_batch(&corpus, |q| router.win_rate(&q.text).unwrap().value())
                })
            },
        );
        group.bench_with_input(
            BenchmarkId::new("sequential", kind.as_str()),
            &router,
            |b, router| {
                b.iter(|| {
                    map_batch_seq(&corpus, |q| router.win_rate(&q.text).unwrap().value())
                })
            },
        );
    }
    group.finish();
}

fn bench_hashed_embedding(c: &mut Criterion) {
    let params = CorpusParams {
        n_simple: 200,
        n_complex: 200,
        noise_fraction: 0.1,
    };
    let corpus = generate_synthetic_corpus(9, &params).unwrap();
    let texts: Vec<String> = corpus.into_iter().map(|q| q.text).collect();

    let mut group = c.benchmark_group("hashed_embeddings");
    group.bench_function("parallel", |b| {
        b.iter(|| map_batch(&texts, |t| embed_hashed(t, HASH_DIM)))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| map_batch_seq(&texts, |t| embed_hashed(t, HASH_DIM)))
    });
    group.finish();
}

fn bench_guard_votes(c: &mut Criterion) {
    let gcfg = GuardConfig::default();
    let model = SiameseModel::init(&gcfg, 3);
    let refs: Vec<Vec<f64>> = (0..4)
        .map(|i| model.encode(&format!("reference query number {i}")).unwrap())
        .collect();
    let queries: Vec<String> = (0..128)
        .map(|i| format!("what is the capital of country number {i}"))
        .collect();

    let mut group = c.benchmark_group("guard_probabilities");
    group.bench_function("parallel", |b| {
        b.iter(|| map_batch(&queries, |q| model.guard_prob(q, &refs).unwrap()))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| map_batch_seq(&queries, |q| model.guard_prob(q, &refs).unwrap()))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_batch_scoring,
    bench_hashed_embedding,
    bench_guard_votes
);
criterion_main!(benches);
