//! Execution-accuracy evaluation and ablation sweeps.

mod ablate;
mod dataset;

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use ablate::{ablate, AblationReport, Grid, GridVariant, VariantResult, CSV_HEADER};
pub use dataset::{load_dataset, DbRoot};

use crate::error::{ConfigError, Result};
use crate::exec::{compare_results, execute_sql, ExecOptions};
use crate::model::{ExecStatus, Pass, SelectionConfig, SelectionTrace, StageTimings, Task};
use crate::par;
use crate::rank::{generate_candidates, Backends};
use crate::select::select;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Scored,
    Excluded,
    /// A backend failed on this task.
    Failed,
    /// Not attempted because an earlier task hit a backend failure.
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: String,
    pub status: RowStatus,
    pub chosen_sql: Option<String>,
    pub correct: bool,
    pub excluded: bool,
    pub exclusion_reason: Option<String>,
    pub final_cand_idx: Option<usize>,
    pub n_candidates: usize,
    pub n_groups: usize,
    /// Mean decisive-win count over this task's groups.
    pub mean_r_list: Option<f64>,
    pub judge_called: bool,
    pub resampled: bool,
    pub flags: Vec<String>,
    pub error: Option<String>,
}

impl TaskRow {
    fn new(task: &Task, status: RowStatus) -> Self {
        Self {
            task_id: task.task_id.clone(),
            status,
            chosen_sql: None,
            correct: false,
            excluded: false,
            exclusion_reason: None,
            final_cand_idx: None,
            n_candidates: 0,
            n_groups: 0,
            mean_r_list: None,
            judge_called: false,
            resampled: false,
            flags: Vec::new(),
            error: None,
        }
    }
}

/// Deterministic part of an evaluation: identical inputs give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub report_version: u32,
    pub complete: bool,
    pub error: Option<String>,
    pub seed: u64,
    pub n_tasks: usize,
    pub n_included: usize,
    pub n_excluded: usize,
    pub n_correct: usize,
    /// `100 * correct / included`.
    pub ex: f64,
    /// Share of included tasks whose pool was replaced.
    pub resample_rate: f64,
    /// Share of included tasks on which the judge was consulted.
    pub judge_rate: f64,
    pub mean_r_list: f64,
    pub config: SelectionConfig,
    pub rows: Vec<TaskRow>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn summary_line(&self) -> String {
        format!(
            "EX {:.2} ({}/{} correct, {} excluded, {} tasks){}",
            self.ex,
            self.n_correct,
            self.n_included,
            self.n_excluded,
            self.n_tasks,
            if self.complete { "" } else { " INCOMPLETE" }
        )
    }

    /// Aligned per-task table followed by the summary line.
    pub fn render_text(&self) -> String {
        let w = self
            .rows
            .iter()
            .map(|r| r.task_id.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let mut out = format!("{:<w$}  {:<8}  {:<7}  note\n", "task", "status", "correct");
        for r in &self.rows {
            let status = match r.status {
                RowStatus::Scored => "scored",
                RowStatus::Excluded => "excluded",
                RowStatus::Failed => "failed",
                RowStatus::NotRun => "not_run",
            };
            let note = r
                .exclusion_reason
                .as_deref()
                .or(r.error.as_deref())
                .unwrap_or("");
            out.push_str(&format!(
                "{:<w$}  {:<8}  {:<7}  {note}\n",
                r.task_id, status, r.correct
            ));
        }
        out.push_str(&self.summary_line());
        out.push('\n');
        out
    }
}

/// Wall-clock aggregates, kept out of [`EvalReport`] so reports stay byte-stable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub wall_ms: u64,
    pub stages: StageTimings,
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: EvalReport,
    pub timings: TimingSummary,
    pub traces: Vec<SelectionTrace>,
}

#[derive(Debug, Default)]
pub struct EvalOptions<'a> {
    /// Append one JSON trace per task here as tasks finish.
    pub trace_sink: Option<&'a Path>,
}

fn exclusion(status: ExecStatus, has_rows: bool) -> Option<&'static str> {
    match status {
        ExecStatus::SqlError => Some("gold_error"),
        ExecStatus::Timeout => Some("gold_timeout"),
        ExecStatus::Ok if !has_rows => Some("gold_empty"),
        ExecStatus::Ok => None,
    }
}

fn run_task(
    task: &Task,
    config: &SelectionConfig,
    backends: &Backends,
) -> Result<(TaskRow, Option<SelectionTrace>)> {
    let gold_sql = task
        .gold_sql
        .as_deref()
        .ok_or_else(|| ConfigError::Invalid(format!("task {} has no gold SQL", task.task_id)))?;
    let opts = ExecOptions::from(config);
    let gold = execute_sql(&task.db_ref, gold_sql, &opts)?;
    if let Some(reason) = exclusion(gold.status, gold.has_rows()) {
        let mut row = TaskRow::new(task, RowStatus::Excluded);
        row.excluded = true;
        row.exclusion_reason = Some(reason.to_string());
        return Ok((row, None));
    }
    let pool = generate_candidates(backends, task, config.n, Pass::Initial, config.parallelism)?;
    let trace = select(task, pool, config, backends)?;
    let pred = trace.pool_after[trace.final_cand_idx].outcome.as_ref();
    let mut row = TaskRow::new(task, RowStatus::Scored);
    row.correct = pred.is_some_and(|o| compare_results(o, &gold, config.float_tol));
    row.chosen_sql = Some(trace.chosen_sql.clone());
    row.final_cand_idx = Some(trace.final_cand_idx);
    row.n_candidates = trace.pool_after.len();
    row.n_groups = trace.groups.len();
    if !trace.groups.is_empty() {
        let total: u32 = trace.groups.iter().map(|g| g.r_list).sum();
        row.mean_r_list = Some(f64::from(total) / trace.groups.len() as f64);
    }
    row.judge_called = trace.judge.is_some();
    row.resampled = trace.resampled;
    row.flags = trace.flags.clone();
    Ok((row, Some(trace)))
}

fn add_timings(acc: &mut StageTimings, t: &StageTimings) {
    acc.execute_ms += t.execute_ms;
    acc.resample_ms += t.resample_ms;
    acc.pointwise_ms += t.pointwise_ms;
    acc.pairwise_ms += t.pairwise_ms;
    acc.scoring_ms += t.scoring_ms;
    acc.total_ms += t.total_ms;
}

/// Evaluates every task: gold is executed first and tasks whose gold fails
/// or returns no rows are excluded; the rest are generated, selected, and
/// compared against gold.
///
/// A backend failure stops further tasks and yields a report with
/// `complete = false`. Local problems (bad paths, missing gold) are errors.
pub fn evaluate(
    tasks: &[Task],
    config: &SelectionConfig,
    backends: &Backends,
    seed: u64,
) -> Result<EvalRun> {
    evaluate_with(tasks, config, backends, seed, &EvalOptions::default())
}

pub fn evaluate_with(
    tasks: &[Task],
    config: &SelectionConfig,
    backends: &Backends,
    seed: u64,
    options: &EvalOptions<'_>,
) -> Result<EvalRun> {
    let config = SelectionConfig {
        seed,
        ..config.clone()
    };
    config.validate()?;
    let start = Instant::now();
    let sink = match options.trace_sink {
        Some(p) => Some(Mutex::new(
            File::create(p).map_err(|e| ConfigError::io(p, e))?,
        )),
        None => None,
    };
    let abort = AtomicBool::new(false);
    let results = par::map(config.parallelism, tasks, |task| {
        if abort.load(Ordering::SeqCst) {
            return Ok((TaskRow::new(task, RowStatus::NotRun), None));
        }
        match run_task(task, &config, backends) {
            Ok((row, trace)) => {
                if let (Some(sink), Some(tr)) = (&sink, &trace) {
                    let mut f = sink.lock().expect("trace sink lock");
                    if let Err(e) = writeln!(f, "{}", tr.to_json_line()) {
                        log::warn!("trace write failed: {e}");
                    }
                }
                Ok((row, trace))
            }
            Err(e) if e.is_backend() => {
                abort.store(true, Ordering::SeqCst);
                log::error!("task {}: {e}", task.task_id);
                let mut row = TaskRow::new(task, RowStatus::Failed);
                row.error = Some(e.to_string());
                Ok((row, None))
            }
            Err(e) => Err(e),
        }
    });

    let mut rows = Vec::with_capacity(tasks.len());
    let mut traces = Vec::new();
    let mut stages = StageTimings::default();
    for r in results {
        let (row, trace) = r?;
        if let Some(tr) = trace {
            add_timings(&mut stages, &tr.timings);
            traces.push(tr);
        }
        rows.push(row);
    }
    Ok(EvalRun {
        report: build_report(rows, &config, seed),
        timings: TimingSummary {
            wall_ms: start.elapsed().as_millis() as u64,
            stages,
        },
        traces,
    })
}

fn build_report(rows: Vec<TaskRow>, config: &SelectionConfig, seed: u64) -> EvalReport {
    let scored: Vec<&TaskRow> = rows
        .iter()
        .filter(|r| r.status == RowStatus::Scored)
        .collect();
    let n_included = scored.len();
    let n_correct = scored.iter().filter(|r| r.correct).count();
    let rate = |k: usize| {
        if n_included == 0 {
            0.0
        } else {
            k as f64 / n_included as f64
        }
    };
    let r_lists: Vec<f64> = scored.iter().filter_map(|r| r.mean_r_list).collect();
    let error = rows.iter().find_map(|r| r.error.clone());
    EvalReport {
        report_version: REPORT_VERSION,
        complete: error.is_none(),
        error,
        seed,
        n_tasks: rows.len(),
        n_included,
        n_excluded: rows.iter().filter(|r| r.excluded).count(),
        n_correct,
        ex: 100.0 * rate(n_correct),
        resample_rate: rate(scored.iter().filter(|r| r.resampled).count()),
        judge_rate: rate(scored.iter().filter(|r| r.judge_called).count()),
        mean_r_list: if r_lists.is_empty() {
            0.0
        } else {
            r_lists.iter().sum::<f64>() / r_lists.len() as f64
        },
        config: config.clone(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(status: RowStatus, correct: bool) -> TaskRow {
        let mut r = TaskRow::new(&Task::new("t", "q", "/x"), status);
        r.correct = correct;
        r.excluded = status == RowStatus::Excluded;
        r
    }

    #[test]
    fn ex_arithmetic() {
        let rows = vec![
            row(RowStatus::Scored, true),
            row(RowStatus::Scored, true),
            row(RowStatus::Scored, false),
            row(RowStatus::Excluded, false),
        ];
        let r = build_report(rows, &SelectionConfig::default(), 1);
        assert!((r.ex - 66.67).abs() < 0.01);
        assert_eq!((r.n_included, r.n_excluded, r.n_tasks), (3, 1, 4));
        assert!(r.complete);
    }

    #[test]
    fn exclusion_rule() {
        assert_eq!(exclusion(ExecStatus::Ok, false), Some("gold_empty"));
        assert_eq!(exclusion(ExecStatus::SqlError, false), Some("gold_error"));
        assert_eq!(exclusion(ExecStatus::Timeout, false), Some("gold_timeout"));
        assert_eq!(exclusion(ExecStatus::Ok, true), None);
    }

    #[test]
    fn failures_mark_incomplete() {
        let mut failed = row(RowStatus::Failed, false);
        failed.error = Some("down".into());
        let r = build_report(
            vec![row(RowStatus::Scored, true), failed],
            &SelectionConfig::default(),
            0,
        );
        assert!(!r.complete);
        assert_eq!(r.ex, 100.0);
        assert!(r.summary_line().ends_with("INCOMPLETE"));
    }
}
