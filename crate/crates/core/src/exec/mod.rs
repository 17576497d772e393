//! Sandboxed SQLite execution, result canonicalization, and grouping.

mod canon;
mod group;

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rusqlite::limits::Limit;
use rusqlite::types::Value;
use rusqlite::{Connection, ErrorCode, OpenFlags};

pub use canon::{
    canonicalize, fingerprint_rows, normalize_real, normalize_rows, quantize, render_rows,
    Canonical, CanonicalCell,
};
pub use group::group_candidates;

use crate::error::ConfigError;
use crate::model::{Candidate, ExecOutcome, ExecStatus, Parallelism, SelectionConfig};
use crate::par;

/// Marker SQL used when nothing could be extracted from a completion.
pub const EMPTY_SQL_MARKER: &str = "/* no sql extracted */";

/// Limits and normalization knobs for one execution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecOptions {
    pub timeout_ms: u64,
    pub row_cap: usize,
    pub float_tol: f64,
    pub order_sensitive: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self::from(&SelectionConfig::default())
    }
}

impl From<&SelectionConfig> for ExecOptions {
    fn from(cfg: &SelectionConfig) -> Self {
        Self {
            timeout_ms: cfg.exec_timeout_ms,
            row_cap: cfg.row_cap,
            float_tol: cfg.float_tol,
            order_sensitive: cfg.order_sensitive,
        }
    }
}

impl ExecOptions {
    pub fn with_timeout_ms(mut self, timeout_ms: u64) -> Self {
        self.timeout_ms = timeout_ms;
        self
    }
}

/// Opens `db_ref` read-only. Attaching further databases is disabled.
pub fn open_read_only(db_ref: &Path) -> Result<Connection, ConfigError> {
    if !db_ref.is_file() {
        return Err(ConfigError::MissingDatabase(db_ref.to_path_buf()));
    }
    let open_err = |e: rusqlite::Error| ConfigError::OpenDatabase {
        path: db_ref.to_path_buf(),
        message: e.to_string(),
    };
    let conn = Connection::open_with_flags(
        db_ref,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(open_err)?;
    conn.set_limit(Limit::SQLITE_LIMIT_ATTACHED, 0)
        .map_err(open_err)?;
    conn.execute_batch("PRAGMA query_only = ON;")
        .map_err(open_err)?;
    // forces the header read so a non-database file fails here, not per query
    conn.query_row("PRAGMA schema_version", [], |r| r.get::<_, i64>(0))
        .map_err(open_err)?;
    Ok(conn)
}

/// Runs one query against a read-only connection to `db_ref`.
///
/// Engine errors and write attempts become `sql_error`; exceeding the
/// wall-clock budget or the row cap becomes `timeout`. Only an unusable
/// database path is reported as an `Err`.
pub fn execute_sql(
    db_ref: &Path,
    sql: &str,
    opts: &ExecOptions,
) -> Result<ExecOutcome, ConfigError> {
    let start = Instant::now();
    let conn = open_read_only(db_ref)?;
    Ok(run_on(&conn, sql, opts, start))
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

fn run_on(conn: &Connection, sql: &str, opts: &ExecOptions, start: Instant) -> ExecOutcome {
    let trimmed = sql.trim();
    if trimmed.is_empty() || trimmed == EMPTY_SQL_MARKER {
        return ExecOutcome::failed(ExecStatus::SqlError, "empty SQL", elapsed_ms(start));
    }

    let deadline = start + Duration::from_millis(opts.timeout_ms);
    let fired = Arc::new(AtomicBool::new(false));
    {
        let fired = Arc::clone(&fired);
        let handler = move || {
            if Instant::now() >= deadline {
                fired.store(true, Ordering::Relaxed);
                true
            } else {
                false
            }
        };
        if conn.progress_handler(1000, Some(handler)).is_err() {
            return ExecOutcome::failed(
                ExecStatus::SqlError,
                "cannot install progress handler",
                elapsed_ms(start),
            );
        }
    }

    let outcome = collect(conn, trimmed, opts, start, &fired);
    let _ = conn.progress_handler(0, None::<fn() -> bool>);
    outcome
}

fn collect(
    conn: &Connection,
    sql: &str,
    opts: &ExecOptions,
    start: Instant,
    fired: &AtomicBool,
) -> ExecOutcome {
    let classify = |e: rusqlite::Error| {
        let interrupted = fired.load(Ordering::Relaxed)
            || e.sqlite_error_code() == Some(ErrorCode::OperationInterrupted);
        if interrupted {
            ExecOutcome::failed(
                ExecStatus::Timeout,
                format!("exceeded {} ms", opts.timeout_ms),
                elapsed_ms(start),
            )
        } else {
            ExecOutcome::failed(ExecStatus::SqlError, e.to_string(), elapsed_ms(start))
        }
    };

    let mut stmt = match conn.prepare(sql) {
        Ok(s) => s,
        Err(e) => return classify(e),
    };
    if !stmt.readonly() {
        return ExecOutcome::failed(
            ExecStatus::SqlError,
            "statement would modify the database",
            elapsed_ms(start),
        );
    }
    let column_count = stmt.column_count();
    if column_count == 0 {
        return ExecOutcome::failed(
            ExecStatus::SqlError,
            "statement returns no columns",
            elapsed_ms(start),
        );
    }

    let mut raw: Vec<Vec<Value>> = Vec::new();
    let mut rows = match stmt.query([]) {
        Ok(r) => r,
        Err(e) => return classify(e),
    };
    loop {
        match rows.next() {
            Ok(Some(row)) => {
                if raw.len() >= opts.row_cap {
                    return ExecOutcome::failed(
                        ExecStatus::Timeout,
                        format!("row cap of {} exceeded", opts.row_cap),
                        elapsed_ms(start),
                    );
                }
                let mut cells = Vec::with_capacity(column_count);
                for i in 0..column_count {
                    match row.get::<_, Value>(i) {
                        Ok(v) => cells.push(v),
                        Err(e) => return classify(e),
                    }
                }
                raw.push(cells);
            }
            Ok(None) => break,
            Err(e) => return classify(e),
        }
    }

    let rows = normalize_rows(&raw, opts.float_tol);
    let fingerprint = fingerprint_rows(column_count, &rows, opts.order_sensitive);
    ExecOutcome {
        status: ExecStatus::Ok,
        column_count,
        rows,
        fingerprint: Some(fingerprint),
        error_message: None,
        elapsed_ms: elapsed_ms(start),
    }
}

/// Executes every candidate in `pool` that has no outcome yet.
pub fn execute_pool(
    db_ref: &Path,
    pool: &mut [Candidate],
    opts: &ExecOptions,
    mode: Parallelism,
) -> Result<(), ConfigError> {
    let pending: Vec<(usize, String)> = pool
        .iter()
        .enumerate()
        .filter(|(_, c)| c.outcome.is_none())
        .map(|(i, c)| (i, c.sql.clone()))
        .collect();
    if pending.is_empty() {
        return Ok(());
    }
    // surface a bad path once instead of per candidate
    open_read_only(db_ref)?;
    let outcomes = par::try_map(mode, &pending, |(_, sql)| execute_sql(db_ref, sql, opts))?;
    for ((i, _), outcome) in pending.into_iter().zip(outcomes) {
        pool[i].outcome = Some(outcome);
    }
    Ok(())
}

/// Execution-accuracy comparison: same column count and same row multiset.
///
/// A non-ok prediction never matches. Both sides are re-fingerprinted under
/// `float_tol` so the answer does not depend on how they were produced.
pub fn compare_results(pred: &ExecOutcome, gold: &ExecOutcome, float_tol: f64) -> bool {
    if !pred.is_ok() || !gold.is_ok() || pred.column_count != gold.column_count {
        return false;
    }
    if pred.rows.len() != gold.rows.len() {
        return false;
    }
    let renorm = |rows: &[Vec<CanonicalCell>]| -> Vec<Vec<CanonicalCell>> {
        rows.iter()
            .map(|r| r.iter().map(|c| c.renormalize(float_tol)).collect())
            .collect()
    };
    fingerprint_rows(pred.column_count, &renorm(&pred.rows), false)
        == fingerprint_rows(gold.column_count, &renorm(&gold.rows), false)
}

/// Table and view DDL, in creation order, for prompt rendering.
pub fn read_schema(db_ref: &Path) -> Result<String, ConfigError> {
    let conn = open_read_only(db_ref)?;
    let err = |e: rusqlite::Error| ConfigError::OpenDatabase {
        path: db_ref.to_path_buf(),
        message: e.to_string(),
    };
    let mut stmt = conn
        .prepare(
            "SELECT sql FROM sqlite_master \
             WHERE sql IS NOT NULL AND type IN ('table', 'view') AND name NOT LIKE 'sqlite_%' \
             ORDER BY rowid",
        )
        .map_err(err)?;
    let ddl = stmt
        .query_map([], |r| r.get::<_, String>(0))
        .map_err(err)?
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    Ok(ddl
        .iter()
        .map(|s| format!("{};", s.trim_end_matches(';')))
        .collect::<Vec<_>>()
        .join("\n\n"))
}
