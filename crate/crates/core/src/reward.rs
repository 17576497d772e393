//! Position-consistency reward and correct/incorrect pair export.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{compare_results, execute_pool, execute_sql, read_schema, ExecOptions};
use crate::model::{Candidate, Parallelism, SelectionConfig, Task};
use crate::rank::{
    ask_ordered, render_prompt, Backends, ChatMessage, OrderedAnswer, PromptOptions, PromptPayload,
};
use crate::seed::rng_for;

/// Size of the hard-negative window.
pub const HARD_NEGATIVE_TOP: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub decision_original_correct: bool,
    pub decision_swapped_correct: bool,
    pub r_base: u8,
    pub r_c: u8,
    pub r_total: f64,
}

/// Base reward for a correct decision plus `lambda_c` when the correct
/// decision also survives swapping the candidate order.
pub fn compute_reward(orig_correct: bool, swapped_correct: bool, lambda_c: f64) -> RewardRecord {
    let r_base = u8::from(orig_correct);
    let r_c = u8::from(orig_correct && swapped_correct);
    RewardRecord {
        decision_original_correct: orig_correct,
        decision_swapped_correct: swapped_correct,
        r_base,
        r_c,
        r_total: f64::from(r_base) + lambda_c * f64::from(r_c),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    Random,
    #[default]
    HardTop15,
}

/// One training pair with the pairwise prompt rendered in both orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub task_id: String,
    pub positive_sql: String,
    pub negative_sql: String,
    pub positive_idx: usize,
    pub negative_idx: usize,
    pub negative_source: NegativeSource,
    /// Positive shown as candidate A.
    pub prompt_positive_first: Vec<ChatMessage>,
    /// Negative shown as candidate A.
    pub prompt_negative_first: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedTask {
    pub task_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairExport {
    pub pairs: Vec<PairRecord>,
    pub skipped: Vec<SkippedTask>,
}

impl PairExport {
    pub fn to_jsonl(&self) -> String {
        self.pairs
            .iter()
            .map(|p| serde_json::to_string(p).expect("pair record serializes") + "\n")
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), crate::ConfigError> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| crate::ConfigError::io(path, e))
    }
}

enum Built {
    Pair(Box<PairRecord>),
    Skip(SkippedTask),
}

fn skip(task: &Task, reason: &str) -> Built {
    Built::Skip(SkippedTask {
        task_id: task.task_id.clone(),
        reason: reason.to_string(),
    })
}

fn build_one(
    task: &Task,
    pool: &[Candidate],
    policy: NegativeSource,
    seed: u64,
    config: &SelectionConfig,
) -> Result<Built> {
    let opts = ExecOptions::from(config);
    let Some(gold_sql) = task.gold_sql.as_deref() else {
        return Ok(skip(task, "no_gold_sql"));
    };
    let gold = execute_sql(&task.db_ref, gold_sql, &opts)?;
    if !gold.has_rows() {
        return Ok(skip(task, "gold_empty_or_failed"));
    }
    let mut pool = pool.to_vec();
    execute_pool(&task.db_ref, &mut pool, &opts, Parallelism::Sequential)?;
    let (correct, incorrect): (Vec<&Candidate>, Vec<&Candidate>) = pool.iter().partition(|c| {
        c.outcome
            .as_ref()
            .is_some_and(|o| compare_results(o, &gold, config.float_tol))
    });
    if correct.is_empty() {
        return Ok(skip(task, "no_correct_candidate"));
    }
    if incorrect.is_empty() {
        return Ok(skip(task, "no_incorrect_candidate"));
    }
    let negatives: Vec<&Candidate> = match policy {
        NegativeSource::Random => incorrect,
        NegativeSource::HardTop15 => {
            let mut ranked = incorrect;
            for c in &ranked {
                if c.pointwise.is_none() {
                    return Err(Error::MissingScore(c.cand_idx));
                }
            }
            ranked.sort_by(|a, b| {
                let (ra, rb) = (a.pointwise.unwrap().raw, b.pointwise.unwrap().raw);
                rb.total_cmp(&ra).then(a.cand_idx.cmp(&b.cand_idx))
            });
            ranked.truncate(HARD_NEGATIVE_TOP);
            ranked
        }
    };
    let mut rng = rng_for(seed, &task.task_id);
    let pos = *correct.choose(&mut rng).expect("non-empty");
    let neg = *negatives.choose(&mut rng).expect("non-empty");

    let schema = read_schema(&task.db_ref)?;
    let opts = PromptOptions::from(config);
    let render = |a: &Candidate, b: &Candidate| {
        render_prompt(
            task,
            PromptPayload::Pairwise {
                schema: &schema,
                a,
                b,
            },
            &opts,
        )
    };
    Ok(Built::Pair(Box::new(PairRecord {
        task_id: task.task_id.clone(),
        positive_sql: pos.sql.clone(),
        negative_sql: neg.sql.clone(),
        positive_idx: pos.cand_idx,
        negative_idx: neg.cand_idx,
        negative_source: policy,
        prompt_positive_first: render(pos, neg),
        prompt_negative_first: render(neg, pos),
        reward: None,
    })))
}

/// One correct/incorrect pair per task.
///
/// Pools are executed if needed; `hard_top15` requires pointwise scores on
/// every incorrect candidate. Tasks without usable gold, or lacking either
/// side, are skipped and reported.
pub fn build_pairs(
    items: &[(Task, Vec<Candidate>)],
    policy: NegativeSource,
    seed: u64,
    config: &SelectionConfig,
) -> Result<PairExport> {
    let built = crate::par::try_map(config.parallelism, items, |(task, pool)| {
        build_one(task, pool, policy, seed, config)
    })?;
    let mut out = PairExport::default();
    for b in built {
        match b {
            Built::Pair(p) => out.pairs.push(*p),
            Built::Skip(s) => out.skipped.push(s),
        }
    }
    Ok(out)
}

/// Scores the current ranker on a pair in both orders.
pub fn reward_for_pair(
    backends: &Backends,
    task: &Task,
    positive: &Candidate,
    negative: &Candidate,
    lambda_c: f64,
) -> Result<RewardRecord> {
    let orig = ask_ordered(backends, task, positive, negative)? == OrderedAnswer::First;
    let swapped = ask_ordered(backends, task, negative, positive)? == OrderedAnswer::Second;
    Ok(compute_reward(orig, swapped, lambda_c))
}
