//! Prompt templates for generation, pairwise comparison, and pool judging.
//!
//! Templates are reproduced verbatim; only the `{placeholder}` slots change.
//! Execution previews are the one part that may be shortened, and only when
//! the rendered prompt would exceed the token budget.

use serde::{Deserialize, Serialize};

use crate::exec::render_rows;
use crate::model::{Candidate, ExecOutcome, SelectionConfig, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptOptions {
    pub token_budget: usize,
    pub judge_preview_rows: usize,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self::from(&SelectionConfig::default())
    }
}

impl From<&SelectionConfig> for PromptOptions {
    fn from(cfg: &SelectionConfig) -> Self {
        Self {
            token_budget: cfg.prompt_token_budget,
            judge_preview_rows: cfg.judge_preview_rows,
        }
    }
}

/// What to render.
#[derive(Debug, Clone, Copy)]
pub enum PromptPayload<'a> {
    Generate {
        schema: &'a str,
    },
    Pairwise {
        schema: &'a str,
        a: &'a Candidate,
        b: &'a Candidate,
    },
    Judge {
        schema: &'a str,
        pool: &'a [Candidate],
    },
}

/// Rough token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

fn message_tokens(messages: &[ChatMessage]) -> usize {
    messages.iter().map(|m| estimate_tokens(&m.content)).sum()
}

/// Substitutes `{name}` slots in one left-to-right pass, so substituted
/// values are never themselves scanned for slots.
fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        for (name, value) in slots {
            let tail = &rest[open + 1..];
            if tail.starts_with(name) && tail[name.len()..].starts_with('}') {
                out.push_str(&rest[..open]);
                out.push_str(value);
                rest = &tail[name.len() + 1..];
                continue 'scan;
            }
        }
        out.push_str(&rest[..=open]);
        rest = &rest[open + 1..];
    }
    out.push_str(rest);
    out
}

/// Question text as shown to models: evidence first when present.
fn question_text(task: &Task) -> String {
    if task.evidence.trim().is_empty() {
        task.question.clone()
    } else {
        format!("{}\n{}", task.evidence, task.question)
    }
}

const GENERATE_SYSTEM: &str = "You are a data science expert. Below, you are provided with a database schema and a natural language question. Your task is to understand the schema and generate a valid SQL query to answer the question.";

const GENERATE_USER: &str = "Database Engine:
SQLite

Database Schema:
{schema}
This schema describes the database's structure, including tables, columns, primary keys, foreign keys, and any relevant relationships or constraints.

Question:
{question}

Instructions:
- Make sure you only output the information that is asked in the question. If the question asks for a specific column, make sure to only include that column in the SELECT clause, nothing more.
- The generated query should return all of the information asked in the question without any missing or extra information.
- Before generating the final SQL query, please think through the steps of how to write the query.

Output Format:
Please provide a detailed chain-of-thought reasoning process and include your thought process within <thinking> tags. Your final answer should be enclosed within <answer> tags. Ensure that your SQL query follows the correct syntax and is formatted as follows:

```sql
-- Your SQL query here
```

Example format:
<thinking>
Step-by-step reasoning, including self-reflection and corrections if necessary. [Limited by 4K tokens]
</thinking>

<answer>
Summary of the thought process leading to the final SQL query. [Limited by 1K tokens]

```sql
Correct SQL query here
```
</answer>";

const PAIRWISE_SYSTEM: &str = "You are a SQL expert. When given a SQL question along with two proposed solutions candidates A and B, your task is to evaluate the options based on clarity, efficiency, and adherence to best practices. Provide your answer strictly as either \"A\" or \"B\".";

const PAIRWISE_USER: &str = "Instruction:
Given the DB info and question, there are two candidate queries. There is correct one and incorrect one.
- First, think why one candidate is better than the other by comparing the two candidate answers and analyzing the differences of the query and the result.
- Then, based on your analysis, the original question, and the provided database info, select the better candidate query.
- Do not generate a new SQL query; focus solely on comparing the two given candidates.

**************************

Database Schema
{schema}

**************************

Question:
{question}

**************************

Candidate A
{sql_a}
Execution result
{result_a}

**************************

Candidate B
{sql_b}
Execution result
{result_b}

**************************

Output Format:
Please provide a detailed chain-of-thought reasoning process and include your thought process within <think> tags. Your final answer should be enclosed within <answer> tags.

**************************

Example format:
<think> Step-by-step reasoning, including self-reflection and corrections if necessary. [Limited by 4K tokens] </think>
<answer> Only write \"A\" or \"B\" depending on which is the correct answer. Do not include any other text. </answer>";

const PAIRWISE_ASSISTANT: &str = "Let me solve this step by step.\n<think>";

const JUDGE_SYSTEM: &str = r#"You are a SQL Candidate Gatekeeper.
Your job is to decide whether there is AT LEAST ONE LIKELY-CORRECT SQL among the given candidates.

Use the following criteria to judge whether a candidate is "likely-correct":
1) Intent match: entities, filters, metrics, order, and top-k behavior align with the user query.
2) Schema validity: the query uses correct tables/columns, required joins are present, and aggregations are legal.
3) Execution sanity: the exec_preview has a plausible shape/values for the query (no obvious contradictions).
4) No major red flags: units/ratios are handled reasonably, limit/order are coherent, and there are no clearly spurious tables or conditions.

You should make a balanced judgment:
- Mark likely_has_correct=true if at least one candidate appears reasonably correct according to the above criteria.
- Minor ambiguities are acceptable as long as the query and SQL are broadly aligned and there are no obvious fatal issues.

Special handling for the first candidate (sorted pool):
- Always inspect the first candidate carefully first.
- If multiple candidates are likely-correct, prefer the first candidate as best_cand_idx when it also appears likely-correct.
- If the first candidate is clearly incorrect, then consider other candidates for best_cand_idx.

You MUST output JSON with a SINGLE top-level key "decision":

{
  "decision": {
    "likely_has_correct": true/false,
    "confidence": 0.0~1.0,
    "reason_tags": ["MISMATCH_INTENT","MISSING_JOIN", ...],
    "support": {
      "best_cand_idx": <int or null>,
      "notes": "≤200 chars optional"
    }
  }
}

Strict output rules:
- Do NOT output any other top-level keys (NO "sampling", NO "guidance", NO "compat_drop_mode").
- Keep all fields in "decision" present; if unknown, use null or [] rather than omitting.
- cand_idx refers to ids provided with candidates (not array positions); use the given cand_idx integers.
- Output MUST be valid JSON, with double quotes on all keys and string values."#;

const JUDGE_USER: &str = r#"You are given a Text2SQL problem.

## User query
{user_query}

## DB dialect
{db_dialect}

## Schema (summary or DDL)
{db_schema}

## Candidate SQLs (with id and execution preview)
Each item provides (cand_idx, SQL, and exec_preview: a few rows from a dry-run; None means error/missing).
The first candidate in the sorted pool is the primary candidate; pay particular attention to whether it is likely-correct.

{items_block}

### Matching checklist (for your internal reasoning)
- Entities/filters/metrics/order/top-k extracted from user query must be reflected in the SQL.
- If metric and filter come from different tables, valid explicit JOIN is required.
- Ratios should reasonably avoid wrong integer division (e.g., using casting when appropriate).
- Avoid undocumented mappings; rely only on provided schema/metadata.

Return JSON ONLY with a single top-level key "decision", following the schema in the system prompt."#;

/// Renders an execution result, keeping at most `keep` rows.
///
/// Missing outcomes render as `None`, failures as `Error: ...`, an empty
/// result as `[]`.
pub fn render_result(outcome: Option<&ExecOutcome>, keep: Option<usize>) -> String {
    let Some(o) = outcome else {
        return "None".to_string();
    };
    if !o.is_ok() {
        return format!("Error: {}", o.error_message.as_deref().unwrap_or("unknown"));
    }
    let total = o.rows.len();
    let k = keep.unwrap_or(total).min(total);
    if k == total {
        render_rows(&o.rows)
    } else {
        format!(
            "{} ... ({k} of {total} rows shown)",
            render_rows(&o.rows[..k])
        )
    }
}

fn row_count(c: &Candidate) -> usize {
    c.outcome
        .as_ref()
        .filter(|o| o.is_ok())
        .map_or(0, |o| o.rows.len())
}

fn generate_messages(task: &Task, schema: &str) -> Vec<ChatMessage> {
    let question = question_text(task);
    vec![
        ChatMessage::new(Role::System, GENERATE_SYSTEM),
        ChatMessage::new(
            Role::User,
            fill(
                GENERATE_USER,
                &[("schema", schema), ("question", &question)],
            ),
        ),
    ]
}

fn pairwise_messages(
    task: &Task,
    schema: &str,
    a: &Candidate,
    b: &Candidate,
    keep: Option<(usize, usize)>,
) -> Vec<ChatMessage> {
    let question = question_text(task);
    let result_a = render_result(a.outcome.as_ref(), keep.map(|k| k.0));
    let result_b = render_result(b.outcome.as_ref(), keep.map(|k| k.1));
    let user = fill(
        PAIRWISE_USER,
        &[
            ("schema", schema),
            ("question", &question),
            ("sql_a", &a.sql),
            ("result_a", &result_a),
            ("sql_b", &b.sql),
            ("result_b", &result_b),
        ],
    );
    vec![
        ChatMessage::new(Role::System, PAIRWISE_SYSTEM),
        ChatMessage::new(Role::User, user),
        ChatMessage::new(Role::Assistant, PAIRWISE_ASSISTANT),
    ]
}

/// Largest proportional truncation of both previews that fits the budget.
fn render_pairwise(
    task: &Task,
    schema: &str,
    a: &Candidate,
    b: &Candidate,
    budget: usize,
) -> Vec<ChatMessage> {
    let full = pairwise_messages(task, schema, a, b, None);
    if message_tokens(&full) <= budget {
        return full;
    }
    let (na, nb) = (row_count(a), row_count(b));
    let top = na.max(nb);
    let keep_at = |t: usize| -> (usize, usize) {
        match (na * t).checked_div(top) {
            Some(ka) => (ka, nb * t / top),
            None => (0, 0),
        }
    };
    let fits = |t: usize| {
        message_tokens(&pairwise_messages(task, schema, a, b, Some(keep_at(t)))) <= budget
    };
    // largest t in [0, top) that fits; t = top is the full render that did not
    let (mut lo, mut hi) = (0usize, top);
    if !fits(0) {
        return pairwise_messages(task, schema, a, b, Some((0, 0)));
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    pairwise_messages(task, schema, a, b, Some(keep_at(lo)))
}

/// Pool items for the judge, ordered by pointwise rank when every candidate
/// has one, else by `cand_idx`.
pub fn render_items_block(pool: &[Candidate], preview_rows: usize) -> String {
    let mut ordered: Vec<&Candidate> = pool.iter().collect();
    if ordered.iter().all(|c| c.pointwise.is_some()) {
        ordered.sort_by_key(|c| (c.pointwise.map_or(usize::MAX, |p| p.rank), c.cand_idx));
    } else {
        ordered.sort_by_key(|c| c.cand_idx);
    }
    ordered
        .iter()
        .map(|c| {
            let preview = match c.outcome.as_ref() {
                Some(o) if o.is_ok() => render_result(Some(o), Some(preview_rows)),
                _ => "None".to_string(),
            };
            format!(
                "cand_idx: {}\nSQL: {}\nexec_preview: {}",
                c.cand_idx, c.sql, preview
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn judge_messages(
    task: &Task,
    schema: &str,
    pool: &[Candidate],
    preview_rows: usize,
) -> Vec<ChatMessage> {
    let query = question_text(task);
    let items = render_items_block(pool, preview_rows);
    vec![
        ChatMessage::new(Role::System, JUDGE_SYSTEM),
        ChatMessage::new(
            Role::User,
            fill(
                JUDGE_USER,
                &[
                    ("user_query", &query),
                    ("db_dialect", &task.dialect),
                    ("db_schema", schema),
                    ("items_block", &items),
                ],
            ),
        ),
    ]
}

/// Renders the message list for one model call.
pub fn render_prompt(
    task: &Task,
    payload: PromptPayload<'_>,
    opts: &PromptOptions,
) -> Vec<ChatMessage> {
    match payload {
        PromptPayload::Generate { schema } => generate_messages(task, schema),
        PromptPayload::Pairwise { schema, a, b } => {
            render_pairwise(task, schema, a, b, opts.token_budget)
        }
        PromptPayload::Judge { schema, pool } => {
            // previews shrink uniformly for every candidate until the prompt fits
            let mut rows = opts.judge_preview_rows;
            loop {
                let msgs = judge_messages(task, schema, pool, rows);
                if rows == 0 || message_tokens(&msgs) <= opts.token_budget {
                    return msgs;
                }
                rows -= 1;
            }
        }
    }
}
