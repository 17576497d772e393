//! Shared domain types.
//!
//! Every type here is a plain value object: constructed once, then shared
//! between pipeline stages and serialized into traces as snake_case JSON.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::exec::CanonicalCell;

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub question: String,
    #[serde(default)]
    pub evidence: String,
    pub db_ref: PathBuf,
    #[serde(default)]
    pub gold_sql: Option<String>,
    #[serde(default = "default_dialect")]
    pub dialect: String,
}

fn default_dialect() -> String {
    "sqlite".to_string()
}

impl Task {
    pub fn new(
        task_id: impl Into<String>,
        question: impl Into<String>,
        db_ref: impl Into<PathBuf>,
    ) -> Self {
        Self {
            task_id: task_id.into(),
            question: question.into(),
            evidence: String::new(),
            db_ref: db_ref.into(),
            gold_sql: None,
            dialect: default_dialect(),
        }
    }

    pub fn with_evidence(mut self, evidence: impl Into<String>) -> Self {
        self.evidence = evidence.into();
        self
    }

    pub fn with_gold(mut self, gold_sql: impl Into<String>) -> Self {
        self.gold_sql = Some(gold_sql.into());
        self
    }
}

/// Which sampling pass produced a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pass {
    Initial,
    Resampled,
}

/// One generated SQL query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Dense index within the owning pool.
    pub cand_idx: usize,
    /// Generation sequence number within its pass; stable across re-indexing.
    pub source_seq: usize,
    pub sql: String,
    pub pass: Pass,
    #[serde(default)]
    pub outcome: Option<ExecOutcome>,
    #[serde(default)]
    pub pointwise: Option<PointwiseScore>,
}

impl Candidate {
    pub fn new(cand_idx: usize, sql: impl Into<String>, pass: Pass) -> Self {
        Self {
            cand_idx,
            source_seq: cand_idx,
            sql: sql.into(),
            pass,
            outcome: None,
            pointwise: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.outcome
            .as_ref()
            .is_some_and(|o| o.status == ExecStatus::Ok)
    }

    pub fn fingerprint(&self) -> Option<&str> {
        self.outcome.as_ref().and_then(|o| o.fingerprint.as_deref())
    }
}

/// Builds a pool from SQL strings, indexing from zero.
pub fn pool_from_sql<I, S>(sqls: I, pass: Pass) -> Vec<Candidate>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    sqls.into_iter()
        .enumerate()
        .map(|(i, s)| Candidate::new(i, s, pass))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    SqlError,
    Timeout,
}

/// Result of running one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub status: ExecStatus,
    pub column_count: usize,
    /// Normalized cells in execution order.
    pub rows: Vec<Vec<CanonicalCell>>,
    /// Lowercase hex SHA-256 of the canonical result.
    pub fingerprint: Option<String>,
    pub error_message: Option<String>,
    pub elapsed_ms: u64,
}

impl ExecOutcome {
    pub fn failed(status: ExecStatus, message: impl Into<String>, elapsed_ms: u64) -> Self {
        debug_assert!(status != ExecStatus::Ok);
        Self {
            status,
            column_count: 0,
            rows: Vec::new(),
            fingerprint: None,
            error_message: Some(message.into()),
            elapsed_ms,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }

    /// True for an ok outcome that returned at least one row.
    pub fn has_rows(&self) -> bool {
        self.is_ok() && !self.rows.is_empty()
    }
}

/// Pointwise ranker output for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointwiseScore {
    pub raw: f64,
    /// 1-based position after a descending sort by `raw`.
    pub rank: usize,
    /// Reciprocal rank, `1 / rank`.
    pub rr: f64,
}

/// An execution-equivalence class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecGroup {
    pub group_id: usize,
    pub fingerprint: String,
    pub members: Vec<usize>,
    pub size: usize,
    pub representative: usize,
    pub r_list: u32,
    pub r_point: f64,
}

impl ExecGroup {
    pub fn smallest_member(&self) -> usize {
        self.members.iter().copied().min().unwrap_or(usize::MAX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    Single,
    #[default]
    Dual,
}

/// One pairwise ranker vote: preference of `a` over `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairVote {
    pub a: usize,
    pub b: usize,
    pub vote: f64,
    pub order_policy: OrderPolicy,
    /// Set when at least one answer was unparseable and the fallback applied.
    #[serde(default)]
    pub fallback: bool,
}

/// Aggregated preference of group `i` over group `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupPreference {
    pub i: usize,
    pub j: usize,
    pub p: f64,
    pub decisive: u8,
}

/// Pool audit verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeDecision {
    pub likely_has_correct: bool,
    pub confidence: f64,
    #[serde(default)]
    pub reason_tags: Vec<String>,
    #[serde(default)]
    pub best_cand_idx: Option<usize>,
    #[serde(default)]
    pub notes: Option<String>,
    /// True when the response could not be parsed and the default was used.
    #[serde(default)]
    pub defaulted: bool,
}

impl JudgeDecision {
    /// Used when the judge response cannot be parsed: keep the pool.
    pub fn conservative_default() -> Self {
        Self {
            likely_has_correct: true,
            confidence: 0.0,
            reason_tags: Vec::new(),
            best_cand_idx: None,
            notes: None,
            defaulted: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplingMode {
    Off,
    Always,
    #[default]
    Agentic,
}

/// How a resampled pool is combined with the original one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergePolicy {
    #[default]
    Replace,
    Union,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    R3,
    Fmv,
    Pointwise,
    PointwiseAvg,
    Listwise,
}

/// Resolution of the top-2 comparison when the preference is exactly 1/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalTie {
    /// Strict `> 1/2`: a tie goes to the runner-up.
    #[default]
    Strict,
    /// A tie keeps the lexicographic winner.
    KeepLeader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Sequential,
    #[default]
    Parallel,
}

/// Every tunable of one selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub tau: f64,
    pub n: usize,
    pub m: usize,
    pub lambda_c: f64,
    pub order_policy: OrderPolicy,
    pub float_tol: f64,
    pub exec_timeout_ms: u64,
    pub row_cap: usize,
    pub order_sensitive: bool,
    pub resampling: ResamplingMode,
    pub merge: MergePolicy,
    pub mode: SelectionMode,
    pub final_tie: FinalTie,
    /// Cap on member pairs queried per group pair; `None` queries all.
    pub max_pairs_per_group_pair: Option<usize>,
    pub prompt_token_budget: usize,
    pub judge_preview_rows: usize,
    pub parallelism: Parallelism,
    /// Seeds every stochastic choice (pair sampling under a cap).
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            n: 32,
            m: 1024,
            lambda_c: 0.5,
            order_policy: OrderPolicy::Dual,
            float_tol: 1e-6,
            exec_timeout_ms: 30_000,
            row_cap: 100_000,
            order_sensitive: false,
            resampling: ResamplingMode::Agentic,
            merge: MergePolicy::Replace,
            mode: SelectionMode::R3,
            final_tie: FinalTie::Strict,
            max_pairs_per_group_pair: None,
            prompt_token_budget: 8192,
            judge_preview_rows: 5,
            parallelism: Parallelism::Parallel,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.m < self.n {
            return bad(format!("m ({}) must be >= n ({})", self.m, self.n));
        }
        if self.lambda_c.is_nan() || self.lambda_c < 0.0 {
            return bad(format!("lambda_c must be >= 0, got {}", self.lambda_c));
        }
        if self.float_tol.is_nan() || self.float_tol < 0.0 {
            return bad(format!("float_tol must be >= 0, got {}", self.float_tol));
        }
        if self.max_pairs_per_group_pair == Some(0) {
            return bad("max_pairs_per_group_pair must be positive when set".into());
        }
        Ok(())
    }
}

/// Wall-clock time spent in each stage of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub execute_ms: u64,
    pub resample_ms: u64,
    pub pointwise_ms: u64,
    pub pairwise_ms: u64,
    pub scoring_ms: u64,
    pub total_ms: u64,
}

/// Audit record of one selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub task_id: String,
    pub mode: SelectionMode,
    pub pool_before: Vec<Candidate>,
    pub pool_after: Vec<Candidate>,
    pub judge: Option<JudgeDecision>,
    pub resampled: bool,
    pub groups: Vec<ExecGroup>,
    pub preferences: Vec<GroupPreference>,
    pub votes: Vec<PairVote>,
    /// Group ids in final ranked order.
    pub ranking: Vec<usize>,
    pub final_group_id: Option<usize>,
    pub final_cand_idx: usize,
    pub chosen_sql: String,
    pub flags: Vec<String>,
    pub timings: StageTimings,
}

impl SelectionTrace {
    pub fn final_group(&self) -> Option<&ExecGroup> {
        let id = self.final_group_id?;
        self.groups.iter().find(|g| g.group_id == id)
    }

    pub fn final_fingerprint(&self) -> Option<&str> {
        self.final_group().map(|g| g.fingerprint.as_str())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serialization is infallible")
    }
}
