//! BIRD-style dataset ingestion.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use crate::error::ConfigError;
use crate::model::Task;

/// Where databases live: a directory, or an explicit `db_id -> path` map.
#[derive(Debug, Clone, PartialEq)]
pub enum DbRoot {
    Dir(PathBuf),
    Map(HashMap<String, PathBuf>),
}

impl DbRoot {
    /// A `.json` file is read as a map (relative paths resolve against its
    /// directory); anything else is a directory.
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::io(path, e))?;
            let raw: HashMap<String, PathBuf> = serde_json::from_str(&text)
                .map_err(|e| ConfigError::parse(path.display().to_string(), e))?;
            let base = path.parent().unwrap_or(Path::new("."));
            Ok(DbRoot::Map(
                raw.into_iter().map(|(k, v)| (k, base.join(v))).collect(),
            ))
        } else {
            Ok(DbRoot::Dir(path.to_path_buf()))
        }
    }

    /// `{root}/{db_id}/{db_id}.sqlite`, then `{root}/{db_id}.sqlite`.
    pub fn resolve(&self, db_id: &str) -> Option<PathBuf> {
        match self {
            DbRoot::Map(m) => m.get(db_id).filter(|p| p.is_file()).cloned(),
            DbRoot::Dir(root) => [
                root.join(db_id).join(format!("{db_id}.sqlite")),
                root.join(format!("{db_id}.sqlite")),
            ]
            .into_iter()
            .find(|p| p.is_file()),
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    question_id: Option<Value>,
    question: Option<String>,
    evidence: Option<String>,
    db_id: Option<String>,
    #[serde(rename = "SQL", alias = "sql")]
    sql: Option<String>,
}

fn parse_records(text: &str) -> Result<Vec<Result<RawRecord, String>>, String> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let items: Vec<Value> = serde_json::from_str(trimmed).map_err(|e| e.to_string())?;
        Ok(items
            .into_iter()
            .map(|v| serde_json::from_value(v).map_err(|e| e.to_string()))
            .collect())
    } else {
        Ok(text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
            .collect())
    }
}

/// Loads a JSON array or JSON-lines file of tasks.
///
/// Every bad record is reported in one error: missing fields, duplicate
/// ids, and `db_id`s that do not resolve under `db_root`.
pub fn load_dataset(path: &Path, db_root: &DbRoot) -> Result<Vec<Task>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::io(path, e))?;
    let records =
        parse_records(&text).map_err(|e| ConfigError::parse(path.display().to_string(), e))?;
    let mut problems = Vec::new();
    let mut tasks = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in records.into_iter().enumerate() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("record {i}: {e}"));
                continue;
            }
        };
        let id = match rec.question_id {
            Some(Value::String(s)) if !s.is_empty() => s,
            Some(Value::Number(n)) => n.to_string(),
            _ => {
                problems.push(format!("record {i}: missing question_id"));
                continue;
            }
        };
        let mut bad = |what: &str| problems.push(format!("record {i} ({id}): {what}"));
        let Some(question) = rec.question.filter(|q| !q.trim().is_empty()) else {
            bad("missing question");
            continue;
        };
        let Some(db_id) = rec.db_id else {
            bad("missing db_id");
            continue;
        };
        let Some(db) = db_root.resolve(&db_id) else {
            bad(&format!("unknown db_id {db_id:?}"));
            continue;
        };
        if !seen.insert(id.clone()) {
            bad("duplicate question_id");
            continue;
        }
        let mut task = Task::new(id, question, db).with_evidence(rec.evidence.unwrap_or_default());
        task.gold_sql = rec.sql;
        tasks.push(task);
    }
    if problems.is_empty() {
        Ok(tasks)
    } else {
        Err(ConfigError::Dataset {
            path: path.to_path_buf(),
            problems,
        })
    }
}
