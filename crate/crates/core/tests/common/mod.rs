//! Shared fixtures for the integration suites.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use sqlrank::rank::{Backends, StubBackend, StubTable};
use sqlrank::{BackendError, Candidate, Pass, SelectionConfig, Task};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn load_config(name: &str) -> SelectionConfig {
    let text = std::fs::read_to_string(fixtures().join("configs").join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn stub_backends(name: &str) -> (Arc<StubBackend>, Backends) {
    let table = StubTable::load(&fixtures().join("stubs").join(name)).unwrap();
    let stub = Arc::new(StubBackend::new(table));
    (stub.clone(), Backends::from_stub(stub))
}

/// A scratch database with one table; random pools only need it to exist.
pub fn scratch_db() -> tempfile::NamedTempFile {
    let f = tempfile::NamedTempFile::new().unwrap();
    rusqlite::Connection::open(f.path())
        .unwrap()
        .execute_batch("CREATE TABLE t(x INTEGER); INSERT INTO t VALUES (1);")
        .unwrap();
    f
}

/// What the fake ranker says when `first` is listed as A.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Answer {
    A,
    B,
    Garbage,
}

impl Answer {
    fn text(self) -> &'static str {
        match self {
            Answer::A => "<think>x</think>\n<answer>A</answer>",
            Answer::B => "<think>x</think>\n<answer>B</answer>",
            Answer::Garbage => "I cannot decide.",
        }
    }
}

/// A random pool whose result label, pointwise score, and ranker answers are
/// all fixed per SQL text, so any permutation of the pool sees the same model.
#[derive(Debug, Clone)]
pub struct Instance {
    /// Result label per candidate; `None` means the SQL fails.
    pub labels: Vec<Option<u32>>,
    pub sqls: Vec<String>,
    pub raw: HashMap<String, f64>,
    pub answers: HashMap<(String, String), Answer>,
}

pub fn sql_for(i: usize, label: Option<u32>) -> String {
    match label {
        Some(l) => format!("SELECT {l} AS v /* c{i} */"),
        None => format!("SELECT missing_col FROM t /* c{i} */"),
    }
}

pub struct InstanceSpec {
    pub max_groups: u32,
    pub max_pool: usize,
    pub error_rate: f64,
    /// Distinct pointwise scores when set, else small integers with ties.
    pub distinct_raw: bool,
    /// Ranker prefers a hidden quality, with no unparseable answers.
    pub antisymmetric: bool,
}

pub fn random_instance(rng: &mut impl Rng, spec: &InstanceSpec) -> Instance {
    let groups = rng.gen_range(1..=spec.max_groups);
    let size = rng.gen_range(1..=spec.max_pool);
    let labels: Vec<Option<u32>> = (0..size)
        .map(|_| {
            if rng.gen_bool(spec.error_rate) {
                None
            } else {
                Some(rng.gen_range(0..groups))
            }
        })
        .collect();
    let sqls: Vec<String> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| sql_for(i, *l))
        .collect();
    let mut raw = HashMap::new();
    let mut perm: Vec<usize> = (0..size).collect();
    perm.sort_by_key(|_| rng.gen::<u64>());
    for (i, s) in sqls.iter().enumerate() {
        let r = if spec.distinct_raw {
            perm[i] as f64 / 10.0
        } else {
            f64::from(rng.gen_range(0..4u8))
        };
        raw.insert(s.clone(), r);
    }
    let quality: Vec<f64> = (0..size).map(|_| rng.gen()).collect();
    let mut answers = HashMap::new();
    for (i, a) in sqls.iter().enumerate() {
        for (j, b) in sqls.iter().enumerate() {
            if i == j {
                continue;
            }
            let ans = if spec.antisymmetric {
                if quality[i] > quality[j] {
                    Answer::A
                } else {
                    Answer::B
                }
            } else {
                match rng.gen_range(0..10) {
                    0 => Answer::Garbage,
                    1..=5 => Answer::A,
                    _ => Answer::B,
                }
            };
            answers.insert((a.clone(), b.clone()), ans);
        }
    }
    Instance {
        labels,
        sqls,
        raw,
        answers,
    }
}

impl Instance {
    pub fn pool(&self) -> Vec<Candidate> {
        sqlrank::pool_from_sql(self.sqls.iter().cloned(), Pass::Initial)
    }

    pub fn answer(&self, first: &str, second: &str) -> Answer {
        self.answers[&(first.to_string(), second.to_string())]
    }

    pub fn backends(&self) -> Backends {
        let raw = self.raw.clone();
        let answers = self.answers.clone();
        Backends {
            pointwise: Arc::new(move |_: &Task, c: &Candidate| Ok(raw[&c.sql])),
            pairwise: Arc::new(move |_: &Task, f: &Candidate, s: &Candidate, _: u32| {
                Ok(answers[&(f.sql.clone(), s.sql.clone())].text().to_string())
            }),
            judge: Arc::new(move |_: &Task, _: &[Candidate], _: u32| Err(unused("judge"))),
            generator: Arc::new(move |_: &Task, _: Pass, _: usize| Err(unused("generator"))),
        }
    }
}

fn unused(role: &str) -> BackendError {
    BackendError::Protocol(format!("{role} is not part of this fixture"))
}

/// Selection settings for random pools: no resampling, no generation.
pub fn offline_config() -> SelectionConfig {
    SelectionConfig {
        resampling: sqlrank::ResamplingMode::Off,
        ..SelectionConfig::default()
    }
}
