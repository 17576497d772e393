//! End-to-end selection over one candidate pool.

pub mod score;

use std::collections::HashMap;
use std::time::Instant;

pub use score::{
    decisive, final_select, group_preference, leader_survives, lexicographic_sort, listwise_scores,
    listwise_sort, mean_vote, pick_representative, pointwise_utility, preferences, sort_by_key,
    PairPlan, ScoreFn, VoteFn,
};

use crate::error::{ConfigError, Error, Result};
use crate::exec::{execute_pool, group_candidates, ExecOptions};
use crate::model::{
    Candidate, ExecGroup, PairVote, PointwiseScore, ResamplingMode, SelectionConfig, SelectionMode,
    SelectionTrace, StageTimings, Task,
};
use crate::rank::{collect_answers, ensure_pointwise, Backends, PairAnswers};
use crate::resample::run_resampling;

pub const FLAG_NO_VALID_GROUP: &str = "no_valid_group";
pub const FLAG_PAIRS_CAPPED: &str = "pairs_capped";
pub const FLAG_FINAL_SWAP: &str = "final_comparison_swapped";
pub const FLAG_VOTE_FALLBACK: &str = "vote_fallback";

fn ms(since: Instant) -> u64 {
    since.elapsed().as_millis() as u64
}

fn check_pool(pool: &[Candidate]) -> Result<(), ConfigError> {
    if pool.is_empty() {
        return Err(ConfigError::Invalid("candidate pool is empty".into()));
    }
    for (i, c) in pool.iter().enumerate() {
        if c.cand_idx != i {
            return Err(ConfigError::Invalid(format!(
                "cand_idx must be dense 0..{}; position {i} holds {}",
                pool.len(),
                c.cand_idx
            )));
        }
    }
    Ok(())
}

fn needs_pointwise(mode: SelectionMode) -> bool {
    matches!(
        mode,
        SelectionMode::R3 | SelectionMode::Pointwise | SelectionMode::PointwiseAvg
    )
}

fn needs_pairwise(mode: SelectionMode) -> bool {
    matches!(mode, SelectionMode::R3 | SelectionMode::Listwise)
}

/// Representative by pointwise rank when every member is scored, else the
/// smallest member.
fn representative(group: &ExecGroup, scores: &ScoreFn<'_>) -> usize {
    pick_representative(group, scores).unwrap_or_else(|_| group.smallest_member())
}

/// Runs the full selection pipeline on `pool` under `config`.
pub fn select(
    task: &Task,
    pool: Vec<Candidate>,
    config: &SelectionConfig,
    backends: &Backends,
) -> Result<SelectionTrace> {
    config.validate()?;
    check_pool(&pool)?;
    let start = Instant::now();
    let par = config.parallelism;
    let mut timings = StageTimings::default();
    let mut flags: Vec<String> = Vec::new();

    let t = Instant::now();
    let mut pool = pool;
    execute_pool(&task.db_ref, &mut pool, &ExecOptions::from(config), par)?;
    timings.execute_ms = ms(t);

    let t = Instant::now();
    if needs_pointwise(config.mode) || config.resampling != ResamplingMode::Off {
        ensure_pointwise(backends, task, &mut pool, par)?;
    }
    timings.pointwise_ms = ms(t);
    let pool_before = pool.clone();

    let t = Instant::now();
    let outcome = run_resampling(task, pool, config, backends)?;
    timings.resample_ms = ms(t);
    flags.extend(outcome.flags);
    let mut pool = outcome.pool;

    let t = Instant::now();
    if needs_pointwise(config.mode) || pool.iter().any(|c| c.pointwise.is_some()) {
        ensure_pointwise(backends, task, &mut pool, par)?;
    }
    timings.pointwise_ms += ms(t);

    let mut groups = group_candidates(&pool);
    let score_map: HashMap<usize, PointwiseScore> = pool
        .iter()
        .filter_map(|c| c.pointwise.map(|s| (c.cand_idx, s)))
        .collect();
    let scores = |i: usize| score_map.get(&i).copied();
    for g in &mut groups {
        g.representative = representative(g, &scores);
        if let Ok((u, _)) = pointwise_utility(g, &scores) {
            g.r_point = u;
        }
    }

    let mut trace = SelectionTrace {
        task_id: task.task_id.clone(),
        mode: config.mode,
        pool_before,
        pool_after: Vec::new(),
        judge: outcome.decision,
        resampled: outcome.resampled,
        groups: Vec::new(),
        preferences: Vec::new(),
        votes: Vec::new(),
        ranking: Vec::new(),
        final_group_id: None,
        final_cand_idx: 0,
        chosen_sql: String::new(),
        flags: Vec::new(),
        timings: StageTimings::default(),
    };

    let group_of = |idx: usize, groups: &[ExecGroup]| {
        groups
            .iter()
            .find(|g| g.members.contains(&idx))
            .map(|g| g.group_id)
    };

    if config.mode == SelectionMode::Pointwise {
        // rank 1 is the arg-max raw score with ties to the lower index
        let best = pool
            .iter()
            .find(|c| c.pointwise.is_some_and(|s| s.rank == 1))
            .ok_or(Error::MissingScore(0))?;
        trace.final_cand_idx = best.cand_idx;
        trace.final_group_id = group_of(best.cand_idx, &groups);
        trace.ranking = groups.iter().map(|g| g.group_id).collect();
    } else if groups.is_empty() {
        flags.push(FLAG_NO_VALID_GROUP.to_string());
        trace.final_cand_idx = pool[0].cand_idx;
    } else {
        let t = Instant::now();
        let mut answers = PairAnswers::new();
        let mut plan = PairPlan::default();
        if needs_pairwise(config.mode) && groups.len() > 1 {
            plan = PairPlan::new(
                &groups,
                config.max_pairs_per_group_pair,
                config.seed,
                &task.task_id,
            );
            if plan.capped {
                flags.push(FLAG_PAIRS_CAPPED.to_string());
            }
            answers = collect_answers(backends, task, &pool, &plan.flat(), par)?;
        }
        timings.pairwise_ms = ms(t);

        let t = Instant::now();
        let policy = config.order_policy;
        let votes = |a: usize, b: usize| answers.vote(a, b, policy).map(|v| v.vote);
        if needs_pairwise(config.mode) && groups.len() > 1 {
            trace.votes = plan
                .flat()
                .iter()
                .flat_map(|&(a, b)| [answers.vote(a, b, policy), answers.vote(b, a, policy)])
                .collect::<Option<Vec<PairVote>>>()
                .ok_or(Error::MissingVote { a: 0, b: 0 })?;
            if trace.votes.iter().any(|v| v.fallback) {
                flags.push(FLAG_VOTE_FALLBACK.to_string());
            }
            trace.preferences = preferences(&groups, &plan, &votes, config.tau)?;
            let r_list = listwise_scores(groups.len(), &trace.preferences);
            for g in &mut groups {
                g.r_list = r_list[g.group_id];
            }
        }

        trace.ranking = match config.mode {
            SelectionMode::Fmv => groups.iter().map(|g| g.group_id).collect(),
            SelectionMode::Listwise => listwise_sort(&groups),
            SelectionMode::PointwiseAvg => {
                let mean = |g: &ExecGroup| {
                    g.members
                        .iter()
                        .map(|&m| scores(m).map_or(f64::NAN, |s| s.raw))
                        .sum::<f64>()
                        / g.size as f64
                };
                sort_by_key(&groups, &mean)
            }
            SelectionMode::R3 => lexicographic_sort(&groups),
            SelectionMode::Pointwise => unreachable!("handled above"),
        };

        let mut chosen = trace.ranking[0];
        if config.mode == SelectionMode::R3 && trace.ranking.len() > 1 {
            let (g1, g2) = (trace.ranking[0], trace.ranking[1]);
            let p = trace
                .preferences
                .iter()
                .find(|p| p.i == g1 && p.j == g2)
                .map(|p| p.p)
                .ok_or(Error::MissingVote { a: g1, b: g2 })?;
            if !leader_survives(p, config.final_tie) {
                chosen = g2;
                flags.push(FLAG_FINAL_SWAP.to_string());
            }
        }
        let g = groups
            .iter()
            .find(|g| g.group_id == chosen)
            .expect("ranked id exists");
        trace.final_group_id = Some(chosen);
        trace.final_cand_idx = g.representative;
        timings.scoring_ms = ms(t);
    }

    trace.chosen_sql = pool[trace.final_cand_idx].sql.clone();
    trace.groups = groups;
    trace.pool_after = pool;
    trace.flags = flags;
    timings.total_ms = ms(start);
    trace.timings = timings;
    Ok(trace)
}
