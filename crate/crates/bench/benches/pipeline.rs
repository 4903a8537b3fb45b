use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use gecrefine::corpus::tokenize;
use gecrefine::metrics::levenshtein;
use gecrefine::refine::refine_corpus;
use gecrefine::subword::learn_bpe;
use gecrefine::{Corrector, PerplexityScorer, RefineOptions};
use gecrefine_bench::fixture;

fn components(c: &mut Criterion) {
    let f = fixture(1000, 1);
    let pair = &f.corpus.pairs[0];

    c.bench_function("tokenize", |b| {
        b.iter(|| tokenize(black_box("She doesn't want to discuss the report, does she?")))
    });
    c.bench_function("levenshtein", |b| {
        b.iter(|| levenshtein(black_box(&pair.source), black_box(&pair.target)))
    });
    c.bench_function("perplexity", |b| b.iter(|| f.lm.perplexity(black_box(&pair.target))));
    c.bench_function("beam_correct", |b| b.iter(|| f.corrector.correct(black_box(&pair.target))));
    c.bench_function("learn_bpe_200", |b| {
        b.iter_batched(|| f.native[..200].to_vec(), |s| learn_bpe(&s, 100), BatchSize::SmallInput)
    });
}

fn refinement(c: &mut Criterion) {
    let f = fixture(500, 2);
    let mut group = c.benchmark_group("refine_corpus_500");
    group.sample_size(10);
    for workers in [1, 4] {
        group.bench_function(format!("workers_{workers}"), |b| {
            b.iter(|| {
                let options = RefineOptions { workers: Some(workers), ..Default::default() };
                refine_corpus(&f.corpus, &f.corrector, &f.lm as &dyn PerplexityScorer, options)
            })
        });
    }
    group.finish();
}

criterion_group!(benches, components, refinement);
criterion_main!(benches);
