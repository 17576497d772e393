//! Deterministic fixture-driven backends.
//!
//! A stub table is a JSON file of per-task lookups. Every lookup is strict:
//! a missing entry is a [`BackendError::StubMissing`], never a made-up answer.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{GeneratorBackend, JudgeBackend, PairwiseBackend, PointwiseBackend};
use crate::error::{BackendError, ConfigError};
use crate::model::{Candidate, Pass, Task};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StubTask {
    /// Completions replayed for the initial pass, by sequence number.
    pub initial: Vec<String>,
    /// Completions replayed for the resampling pass.
    pub resampled: Vec<String>,
    /// Pointwise raw score by SQL text.
    pub pointwise: HashMap<String, f64>,
    /// Latent quality by SQL text; the pairwise stub prefers the higher one
    /// and answers "A" on ties.
    pub quality: HashMap<String, f64>,
    /// Explicit pairwise answers keyed `"first,second"` by cand_idx. These
    /// win over `quality`.
    pub votes: HashMap<String, String>,
    /// Answer "A" to every comparison.
    pub position_bias: bool,
    /// Judge response: a decision object, a raw string, or one raw string per attempt.
    pub judge: Option<Value>,
    /// Judge responses for specific pools, keyed by [`pool_digest`].
    pub judge_by_digest: HashMap<String, Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StubTable {
    pub tasks: HashMap<String, StubTask>,
}

impl StubTable {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::io(path, e))?;
        Self::from_json(&text)
            .map_err(|e| ConfigError::parse(path.display().to_string(), e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn task(&self, task_id: &str) -> Result<&StubTask, BackendError> {
        self.tasks
            .get(task_id)
            .ok_or_else(|| BackendError::StubMissing(format!("task {task_id}")))
    }
}

/// Identifies a pool by the SQL of its members, in order.
pub fn pool_digest(pool: &[Candidate]) -> String {
    let mut h = Sha256::new();
    for c in pool {
        h.update(c.sql.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

/// Calls made against a [`StubBackend`], per role.
#[derive(Debug, Default)]
pub struct StubCounters {
    pub pointwise: AtomicUsize,
    pub pairwise: AtomicUsize,
    pub judge: AtomicUsize,
    pub generate_initial: AtomicUsize,
    pub generate_resampled: AtomicUsize,
}

impl StubCounters {
    pub fn generator_calls(&self) -> usize {
        self.generate_initial.load(Ordering::SeqCst)
            + self.generate_resampled.load(Ordering::SeqCst)
    }

    pub fn get(counter: &AtomicUsize) -> usize {
        counter.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        for c in [
            &self.pointwise,
            &self.pairwise,
            &self.judge,
            &self.generate_initial,
            &self.generate_resampled,
        ] {
            c.store(0, Ordering::SeqCst);
        }
    }
}

#[derive(Debug, Default)]
pub struct StubBackend {
    pub table: StubTable,
    pub counters: StubCounters,
}

impl StubBackend {
    pub fn new(table: StubTable) -> Self {
        Self {
            table,
            counters: StubCounters::default(),
        }
    }
}

fn judge_text(v: &Value, attempt: u32) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) if !items.is_empty() => {
            let i = (attempt as usize).min(items.len() - 1);
            judge_text(&items[i], 0)
        }
        Value::Object(o) if o.contains_key("decision") => v.to_string(),
        other => serde_json::json!({ "decision": other }).to_string(),
    }
}

impl PointwiseBackend for StubBackend {
    fn score(&self, task: &Task, cand: &Candidate) -> Result<f64, BackendError> {
        self.counters.pointwise.fetch_add(1, Ordering::SeqCst);
        self.table
            .task(&task.task_id)?
            .pointwise
            .get(&cand.sql)
            .copied()
            .ok_or_else(|| {
                BackendError::StubMissing(format!(
                    "task {}: no pointwise score for {:?}",
                    task.task_id, cand.sql
                ))
            })
    }
}

impl PairwiseBackend for StubBackend {
    fn answer(
        &self,
        task: &Task,
        first: &Candidate,
        second: &Candidate,
        _attempt: u32,
    ) -> Result<String, BackendError> {
        self.counters.pairwise.fetch_add(1, Ordering::SeqCst);
        let t = self.table.task(&task.task_id)?;
        if let Some(v) = t
            .votes
            .get(&format!("{},{}", first.cand_idx, second.cand_idx))
        {
            return Ok(v.clone());
        }
        if t.position_bias {
            return Ok("<answer>A</answer>".into());
        }
        let q = |c: &Candidate| {
            t.quality.get(&c.sql).copied().ok_or_else(|| {
                BackendError::StubMissing(format!(
                    "task {}: no pairwise entry for {:?}",
                    task.task_id, c.sql
                ))
            })
        };
        let winner = if q(first)? >= q(second)? { "A" } else { "B" };
        Ok(format!("<think>stub</think>\n<answer>{winner}</answer>"))
    }
}

impl JudgeBackend for StubBackend {
    fn respond(
        &self,
        task: &Task,
        pool: &[Candidate],
        attempt: u32,
    ) -> Result<String, BackendError> {
        self.counters.judge.fetch_add(1, Ordering::SeqCst);
        let t = self.table.task(&task.task_id)?;
        t.judge_by_digest
            .get(&pool_digest(pool))
            .or(t.judge.as_ref())
            .map(|v| judge_text(v, attempt))
            .ok_or_else(|| {
                BackendError::StubMissing(format!("task {}: no judge entry", task.task_id))
            })
    }
}

impl GeneratorBackend for StubBackend {
    fn complete(&self, task: &Task, pass: Pass, seq: usize) -> Result<String, BackendError> {
        let t = self.table.task(&task.task_id)?;
        let (list, counter) = match pass {
            Pass::Initial => (&t.initial, &self.counters.generate_initial),
            Pass::Resampled => (&t.resampled, &self.counters.generate_resampled),
        };
        counter.fetch_add(1, Ordering::SeqCst);
        list.get(seq).cloned().ok_or_else(|| {
            BackendError::StubMissing(format!(
                "task {}: no {pass:?} completion #{seq}",
                task.task_id
            ))
        })
    }
}
