//! Sequential versus data-parallel paths on the synthetic corpus. Build with
//! `--no-default-features` to measure the crate without rayon at all.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tfcovr::eval::{evaluate, EvalOptions};
use tfcovr::fixture::{generate, FixtureConfig};
use tfcovr::fusion::{contrastive_loss_and_grad, ContrastiveSample, FusionConfig, FusionParams};
use tfcovr::loss::LossConfig;
use tfcovr::modification::TemplateGenerator;
use tfcovr::par;
use tfcovr::taxonomy::pair_labels;
use tfcovr::tripletgen::{build_dataset, BuildConfig, Partition};

const MODES: [(&str, bool); 2] = [("sequential", true), ("parallel", false)];

fn bench(c: &mut Criterion) {
    let f = generate(&FixtureConfig::default()).expect("fixture");
    let ds = build_dataset(
        &BuildConfig::default(),
        &f.labels,
        &f.captions,
        &f.clips,
        &TemplateGenerator,
        &[],
    )
    .expect("dataset");
    let gallery: Vec<String> = ds
        .plan
        .clips_in(&f.clips, Partition::Test)
        .iter()
        .map(|c| c.clip_id.clone())
        .collect();
    let params = FusionParams::init(&FusionConfig::new(f.video.dim(), f.text.dim()), 0).expect("init");

    let batch: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = ds
        .train
        .iter()
        .take(512)
        .map(|t| {
            (
                f.video.require(&t.query_clip_id).unwrap().vector_f64(),
                f.text.require(&t.modification_text).unwrap().vector_f64(),
                f.video.require(&t.target_clip_id).unwrap().vector_f64(),
            )
        })
        .collect();
    let samples: Vec<ContrastiveSample<'_>> = batch
        .iter()
        .map(|(q, m, t)| ContrastiveSample {
            query: q,
            text: m,
            target: t,
        })
        .collect();
    let loss = LossConfig {
        beta: 0.5,
        ..Default::default()
    };

    let mut g = c.benchmark_group("loss_and_grad_512");
    for (name, seq) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::force_sequential(seq);
            b.iter(|| contrastive_loss_and_grad(&params, &samples, &loss).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("evaluate");
    let opts = EvalOptions::default();
    for (name, seq) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::force_sequential(seq);
            b.iter(|| evaluate(&params, &ds.queries, &f.video, &f.text, &gallery, &opts).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("pair_labels");
    for (name, seq) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::force_sequential(seq);
            b.iter(|| pair_labels(&f.labels, &f.captions, 0.9).unwrap())
        });
    }
    g.finish();
    par::force_sequential(false);
}

criterion_group!(benches, bench);
criterion_main!(benches);
