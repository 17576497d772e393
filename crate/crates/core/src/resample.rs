//! Judge-gated pool replacement.
//!
//! When the judge believes the pool holds no correct query, a larger batch
//! is generated, executed and pointwise-scored, and its top `n` replace the
//! pool.

use crate::error::Result;
use crate::exec::{execute_pool, ExecOptions};
use crate::model::{
    Candidate, JudgeDecision, MergePolicy, Pass, ResamplingMode, SelectionConfig, Task,
};
use crate::rank::{generate_batch, judge_pool, score_pointwise, Backends};

pub const FLAG_JUDGE_BYPASSED: &str = "judge_bypassed_uninformative_pool";
pub const FLAG_JUDGE_DEFAULTED: &str = "judge_defaulted";
pub const FLAG_GENERATOR_PARTIAL: &str = "generator_partial";
pub const FLAG_RESAMPLE_FAILED: &str = "resample_failed_kept_original";

#[derive(Debug, Clone)]
pub struct ResampleOutcome {
    pub pool: Vec<Candidate>,
    pub decision: Option<JudgeDecision>,
    pub resampled: bool,
    pub generator_calls: usize,
    pub flags: Vec<String>,
}

impl ResampleOutcome {
    fn keep(pool: Vec<Candidate>, decision: Option<JudgeDecision>) -> Self {
        Self {
            pool,
            decision,
            resampled: false,
            generator_calls: 0,
            flags: Vec::new(),
        }
    }
}

/// The `n` highest-scoring candidates in descending score order; ties go to
/// the lower `source_seq`.
pub fn prune_top_n(cands: Vec<Candidate>, scores: &[f64], n: usize) -> Vec<Candidate> {
    assert_eq!(cands.len(), scores.len(), "one score per candidate");
    let mut scored: Vec<(f64, Candidate)> = scores.iter().copied().zip(cands).collect();
    scored.sort_by(|(sa, a), (sb, b)| sb.total_cmp(sa).then(a.source_seq.cmp(&b.source_seq)));
    scored.truncate(n);
    scored.into_iter().map(|(_, c)| c).collect()
}

/// No candidate has a non-empty result, so previews say nothing.
fn uninformative(pool: &[Candidate]) -> bool {
    !pool
        .iter()
        .any(|c| c.outcome.as_ref().is_some_and(|o| o.has_rows()))
}

/// Runs the exploration step on an executed pool `S`.
pub fn run_resampling(
    task: &Task,
    pool_s: Vec<Candidate>,
    config: &SelectionConfig,
    backends: &Backends,
) -> Result<ResampleOutcome> {
    let mut flags = Vec::new();
    let decision = match config.resampling {
        ResamplingMode::Off => return Ok(ResampleOutcome::keep(pool_s, None)),
        ResamplingMode::Always => None,
        ResamplingMode::Agentic if uninformative(&pool_s) => {
            flags.push(FLAG_JUDGE_BYPASSED.to_string());
            None
        }
        ResamplingMode::Agentic => {
            let d = judge_pool(backends, task, &pool_s)?;
            if d.defaulted {
                flags.push(FLAG_JUDGE_DEFAULTED.to_string());
            }
            if d.likely_has_correct {
                let mut out = ResampleOutcome::keep(pool_s, Some(d));
                out.flags = flags;
                return Ok(out);
            }
            Some(d)
        }
    };

    let mode = config.parallelism;
    let batch = generate_batch(backends, task, config.m, Pass::Resampled, mode);
    let generator_calls = config.m;
    if let Some(e) = &batch.first_error {
        if batch.candidates.len() < config.n {
            log::warn!(
                "task {}: resampling got {} of {} candidates ({e}); keeping the original pool",
                task.task_id,
                batch.candidates.len(),
                config.m
            );
            flags.push(FLAG_RESAMPLE_FAILED.to_string());
            return Ok(ResampleOutcome {
                pool: pool_s,
                decision,
                resampled: false,
                generator_calls,
                flags,
            });
        }
        flags.push(FLAG_GENERATOR_PARTIAL.to_string());
    }

    let mut fresh = batch.candidates;
    execute_pool(&task.db_ref, &mut fresh, &ExecOptions::from(config), mode)?;
    let scores = score_pointwise(backends, task, &fresh, mode)?;
    let raw: Vec<f64> = scores.iter().map(|s| s.raw).collect();
    for (c, s) in fresh.iter_mut().zip(scores) {
        c.pointwise = Some(s);
    }
    let top = prune_top_n(fresh, &raw, config.n);

    let pool = match config.merge {
        MergePolicy::Replace => top,
        MergePolicy::Union => pool_s.into_iter().chain(top).collect(),
    };
    let pool = pool
        .into_iter()
        .enumerate()
        .map(|(i, mut c)| {
            c.cand_idx = i;
            c
        })
        .collect();
    Ok(ResampleOutcome {
        pool,
        decision,
        resampled: true,
        generator_calls,
        flags,
    })
}
