//! Sequential versus parallel: pool execution, pairwise selection, and a
//! full fixture evaluation.

use std::hint::black_box;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sqlrank::eval::{evaluate, load_dataset, DbRoot};
use sqlrank::exec::{execute_pool, ExecOptions};
use sqlrank::rank::{Backends, StubBackend, StubTable};
use sqlrank::select::select;
use sqlrank::{BackendError, Candidate, Parallelism, Pass, ResamplingMode, SelectionConfig, Task};

const MODES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("parallel", Parallelism::Parallel),
];

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn scratch_db() -> tempfile::NamedTempFile {
    let f = tempfile::NamedTempFile::new().unwrap();
    rusqlite::Connection::open(f.path())
        .unwrap()
        .execute_batch(
            "CREATE TABLE t(x INTEGER, y INTEGER);
             WITH RECURSIVE s(i) AS (SELECT 1 UNION ALL SELECT i + 1 FROM s WHERE i < 20000)
             INSERT INTO t SELECT i, i % 97 FROM s;",
        )
        .unwrap();
    f
}

/// `size` candidates spread over `groups` result sets; each query scans the table.
fn pool(size: usize, groups: usize) -> Vec<Candidate> {
    sqlrank::pool_from_sql(
        (0..size).map(|i| {
            format!(
                "SELECT COUNT(*) FROM t WHERE y < {} AND x > {i} - {i}",
                (i % groups) + 1
            )
        }),
        Pass::Initial,
    )
}

/// Deterministic fake models keyed on SQL text, so no table has to be built.
fn synthetic_backends() -> Backends {
    fn h(s: &str) -> u64 {
        s.bytes().fold(1469598103934665603u64, |a, b| {
            (a ^ u64::from(b)).wrapping_mul(1099511628211)
        })
    }
    Backends {
        pointwise: Arc::new(|_: &Task, c: &Candidate| Ok((h(&c.sql) % 1000) as f64)),
        pairwise: Arc::new(|_: &Task, a: &Candidate, b: &Candidate, _: u32| {
            Ok(if h(&a.sql) % 7 >= h(&b.sql) % 7 {
                "<answer>A</answer>"
            } else {
                "<answer>B</answer>"
            }
            .to_string())
        }),
        judge: Arc::new(|_: &Task, _: &[Candidate], _: u32| {
            Err(BackendError::Protocol("unused".into()))
        }),
        generator: Arc::new(|_: &Task, _: Pass, _: usize| {
            Err(BackendError::Protocol("unused".into()))
        }),
    }
}

fn bench_execute(c: &mut Criterion) {
    let db = scratch_db();
    let mut group = c.benchmark_group("execute_pool");
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::new(name, 64), &mode, |b, &mode| {
            b.iter(|| {
                let mut p = pool(64, 8);
                execute_pool(db.path(), &mut p, &ExecOptions::default(), mode).unwrap();
                black_box(p)
            })
        });
    }
    group.finish();
}

fn bench_select(c: &mut Criterion) {
    let db = scratch_db();
    let task = Task::new("bench", "q", db.path());
    let backends = synthetic_backends();
    let mut group = c.benchmark_group("select_r3");
    for (name, mode) in MODES {
        let config = SelectionConfig {
            resampling: ResamplingMode::Off,
            parallelism: mode,
            ..SelectionConfig::default()
        };
        group.bench_with_input(BenchmarkId::new(name, 32), &config, |b, config| {
            b.iter(|| black_box(select(&task, pool(32, 12), config, &backends).unwrap()))
        });
    }
    group.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let root = fixtures();
    let tasks = load_dataset(
        &root.join("datasets/eval12.json"),
        &DbRoot::Dir(root.join("db")),
    )
    .unwrap();
    let table = StubTable::load(&root.join("stubs/eval12.json")).unwrap();
    let base: SelectionConfig =
        serde_json::from_str(&std::fs::read_to_string(root.join("configs/eval12.json")).unwrap())
            .unwrap();
    let mut group = c.benchmark_group("evaluate_eval12");
    for (name, mode) in MODES {
        let config = SelectionConfig {
            parallelism: mode,
            ..base.clone()
        };
        group.bench_function(name, |b| {
            b.iter(|| {
                let backends = Backends::from_stub(Arc::new(StubBackend::new(table.clone())));
                black_box(evaluate(&tasks, &config, &backends, 0).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_execute, bench_select, bench_evaluate);
criterion_main!(benches);
