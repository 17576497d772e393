//! Parsing of raw model output.

use serde_json::Value;

use crate::exec::EMPTY_SQL_MARKER;
use crate::model::{Candidate, JudgeDecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    A,
    B,
}

/// Content of the last `<tag>...</tag>` span; an unclosed final tag runs to the end.
fn last_tag_span<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.rfind(&open)? + open.len();
    let rest = &text[start..];
    Some(match rest.find(&close) {
        Some(end) => &rest[..end],
        None => rest,
    })
}

#[derive(Debug, PartialEq, Eq, Clone, Copy)]
enum FenceLang {
    Sql,
    Untagged,
    Other,
}

/// Every fenced block in `text` as (language, body), in order.
fn fenced_blocks(text: &str) -> Vec<(FenceLang, &str)> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let Some(close) = after.find("```") else {
            break;
        };
        let inner = &after[..close];
        let word_len = inner
            .find(|c: char| !c.is_ascii_alphabetic())
            .unwrap_or(inner.len());
        let word = &inner[..word_len];
        let next = inner[word_len..].chars().next();
        let (lang, body) = match word.to_ascii_lowercase().as_str() {
            "sql" | "sqlite" => (FenceLang::Sql, &inner[word_len..]),
            "" => (FenceLang::Untagged, inner),
            // a bare word on the fence line is a language tag; otherwise it is inline code
            _ if matches!(next, Some('\n') | Some('\r') | None) => {
                (FenceLang::Other, &inner[word_len..])
            }
            _ => (FenceLang::Untagged, inner),
        };
        out.push((lang, body.trim()));
        rest = &after[close + 3..];
    }
    out
}

fn last_sql_block(text: &str) -> Option<&str> {
    let blocks = fenced_blocks(text);
    blocks
        .iter()
        .rev()
        .find(|(l, _)| *l == FenceLang::Sql)
        .or_else(|| blocks.iter().rev().find(|(l, _)| *l == FenceLang::Untagged))
        .map(|(_, b)| *b)
}

/// SQL from a generation completion.
///
/// Precedence: last SQL fence inside the last `<answer>` span, then the last
/// SQL fence anywhere, then the whole completion. An empty result becomes
/// [`EMPTY_SQL_MARKER`], which executes to `sql_error`.
pub fn extract_sql(completion: &str) -> String {
    let sql = last_tag_span(completion, "answer")
        .and_then(last_sql_block)
        .or_else(|| last_sql_block(completion))
        .unwrap_or_else(|| completion.trim());
    let sql = sql.trim();
    if sql.is_empty() {
        EMPTY_SQL_MARKER.to_string()
    } else {
        sql.to_string()
    }
}

/// Reads an "A"/"B" verdict from the answer span (or the whole text when
/// there is no `<answer>` tag). Both or neither letter present means no verdict.
pub fn parse_choice(text: &str) -> Option<Choice> {
    let span = last_tag_span(text, "answer").unwrap_or(text);
    let mut seen_a = false;
    let mut seen_b = false;
    for token in span.split(|c: char| !c.is_ascii_alphanumeric()) {
        match token {
            "A" => seen_a = true,
            "B" => seen_b = true,
            _ => {}
        }
    }
    match (seen_a, seen_b) {
        (true, false) => Some(Choice::A),
        (false, true) => Some(Choice::B),
        _ => None,
    }
}

fn json_object(text: &str) -> Option<Value> {
    let trimmed = text.trim();
    if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(trimmed) {
        return Some(v);
    }
    let start = trimmed.find('{')?;
    let end = trimmed.rfind('}')?;
    if end <= start {
        return None;
    }
    match serde_json::from_str::<Value>(&trimmed[start..=end]) {
        Ok(v @ Value::Object(_)) => Some(v),
        _ => None,
    }
}

/// Parses a judge response into a decision.
///
/// Only the `"decision"` key is read; extra top-level keys are dropped.
/// `likely_has_correct` must be a boolean. Other fields are lenient:
/// confidence is clamped to [0, 1] (null reads as 0), a `best_cand_idx` that
/// names no pool member is discarded, notes are cut to 200 characters.
pub fn parse_judge(text: &str, pool: &[Candidate]) -> Option<JudgeDecision> {
    let root = json_object(text)?;
    let decision = root.get("decision")?.as_object()?;
    let likely_has_correct = decision.get("likely_has_correct")?.as_bool()?;
    let confidence = decision
        .get("confidence")
        .and_then(Value::as_f64)
        .unwrap_or(0.0)
        .clamp(0.0, 1.0);
    let reason_tags = decision
        .get("reason_tags")
        .and_then(Value::as_array)
        .map(|tags| {
            tags.iter()
                .filter_map(|t| t.as_str().map(str::to_string))
                .collect()
        })
        .unwrap_or_default();
    let support = decision.get("support").and_then(Value::as_object);
    let best_cand_idx = support
        .and_then(|s| s.get("best_cand_idx"))
        .and_then(Value::as_u64)
        .map(|i| i as usize)
        .filter(|i| pool.iter().any(|c| c.cand_idx == *i));
    let notes = support
        .and_then(|s| s.get("notes"))
        .and_then(Value::as_str)
        .map(|n| n.chars().take(200).collect::<String>());
    Some(JudgeDecision {
        likely_has_correct,
        confidence,
        reason_tags,
        best_cand_idx,
        notes,
        defaulted: false,
    })
}
