//! Parallel against sequential execution of the batch stages.

use std::path::Path;

use archive_census::cdx::{count_by_format_year_with, SnapshotRef, Status};
use archive_census::extract::{extract_batch, ExtractOptions};
use archive_census::par::Execution;
use archive_census::stats::{fit_many, logistic};
use archive_census::Timestamp;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn snapshot(url: &str, ts: &str) -> SnapshotRef {
    SnapshotRef {
        original_url: url.to_string(),
        timestamp: Timestamp::parse(ts).unwrap(),
        status: Status::Code(200),
        digest: "-".into(),
        mime: "text/html".into(),
    }
}

/// The bundled corpus pages, repeated to a batch of a few hundred.
fn corpus_pages() -> Vec<(SnapshotRef, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus");
    let mut rdr = csv::Reader::from_path(dir.join("manifest.csv")).unwrap();
    let pages: Vec<(SnapshotRef, Vec<u8>)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (snapshot(&r[0], &r[1]), std::fs::read(dir.join(&r[2])).unwrap())
        })
        .collect();
    pages.iter().cycle().take(pages.len() * 40).cloned().collect()
}

fn index_rows(n: usize) -> Vec<SnapshotRef> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let paths = [
        "/user/a",
        "/profile?user=b",
        "/channel/UCaaaaaaaaaaaaaaaaaaaaaa",
        "/c/d",
        "/@e",
        "/f",
        "/watch?v=g",
    ];
    (0..n)
        .map(|_| {
            let url = format!(
                "http://www.youtube.com{}{}",
                paths[rng.random_range(0..paths.len())],
                rng.random_range(0..1000)
            );
            snapshot(&url, &format!("{}0601000000", rng.random_range(2005..2024)))
        })
        .collect()
}

fn growth_series(n: usize) -> Vec<Vec<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    (0..n)
        .map(|_| {
            let p = [
                rng.random_range(1e3..1e7),
                rng.random_range(0.005..0.05),
                rng.random_range(14_000.0..18_000.0),
            ];
            (0..40)
                .map(|i| {
                    let t = p[2] - 4.0 / p[1] + 8.0 / p[1] * i as f64 / 39.0;
                    (t, logistic(p, t) * (1.0 + rng.random_range(-0.01..0.01)))
                })
                .collect()
        })
        .collect()
}

fn bench_extract(c: &mut Criterion) {
    let pages = corpus_pages();
    let opts = ExtractOptions::default();
    let mut g = c.benchmark_group("extract_batch");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, pages.len()), &pages, |b, p| {
            b.iter(|| extract_batch(exec, p, &opts))
        });
    }
    g.finish();
}

fn bench_accounting(c: &mut Criterion) {
    let rows = index_rows(200_000);
    let mut g = c.benchmark_group("count_by_format_year");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, rows.len()), &rows, |b, r| {
            b.iter(|| count_by_format_year_with(exec, r))
        });
    }
    g.finish();
}

fn bench_fits(c: &mut Criterion) {
    let series = growth_series(500);
    let mut g = c.benchmark_group("fit_many");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, series.len()), &series, |b, s| {
            b.iter(|| fit_many(exec, s))
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_extract, bench_accounting, bench_fits
}
criterion_main!(benches);
