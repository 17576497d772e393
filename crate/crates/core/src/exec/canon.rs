//! Result canonicalization and fingerprinting.
//!
//! Two executions are "the same result" when they have the same column count
//! and the same multiset of canonical rows. Reals are quantized so that values
//! agreeing within the relative tolerance collapse onto one representative,
//! and reals that quantize to an integer take the integer tag.

use std::cmp::Ordering;

use rusqlite::types::Value;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A normalized scalar.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanonicalCell {
    Null,
    Bool(bool),
    Integer(i64),
    Real(#[serde(with = "real_repr")] f64),
    Text(String),
    /// Lowercase hex SHA-256 of the blob contents.
    Blob(String),
}

impl CanonicalCell {
    fn tag(&self) -> u8 {
        match self {
            CanonicalCell::Null => 0,
            CanonicalCell::Bool(_) => 1,
            CanonicalCell::Integer(_) => 2,
            CanonicalCell::Real(_) => 3,
            CanonicalCell::Text(_) => 4,
            CanonicalCell::Blob(_) => 5,
        }
    }

    pub fn from_value(value: &Value, float_tol: f64) -> Self {
        match value {
            Value::Null => CanonicalCell::Null,
            Value::Integer(i) => CanonicalCell::Integer(*i),
            Value::Real(r) => normalize_real(*r, float_tol),
            Value::Text(s) => CanonicalCell::Text(s.clone()),
            Value::Blob(b) => CanonicalCell::Blob(hex::encode(Sha256::digest(b))),
        }
    }

    /// Re-applies real normalization; a no-op for every other tag.
    pub fn renormalize(&self, float_tol: f64) -> Self {
        match self {
            CanonicalCell::Real(r) => normalize_real(*r, float_tol),
            other => other.clone(),
        }
    }

    fn write_to(&self, hasher: &mut Sha256) {
        hasher.update([self.tag()]);
        match self {
            CanonicalCell::Null => {}
            CanonicalCell::Bool(b) => hasher.update([u8::from(*b)]),
            CanonicalCell::Integer(i) => hasher.update(i.to_le_bytes()),
            CanonicalCell::Real(r) => hasher.update(r.to_bits().to_le_bytes()),
            CanonicalCell::Text(s) | CanonicalCell::Blob(s) => {
                hasher.update((s.len() as u64).to_le_bytes());
                hasher.update(s.as_bytes());
            }
        }
    }
}

impl PartialEq for CanonicalCell {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for CanonicalCell {}

impl PartialOrd for CanonicalCell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// NULL first, then by tag, then by value within a tag.
impl Ord for CanonicalCell {
    fn cmp(&self, other: &Self) -> Ordering {
        use CanonicalCell::*;
        match (self, other) {
            (Null, Null) => Ordering::Equal,
            (Bool(a), Bool(b)) => a.cmp(b),
            (Integer(a), Integer(b)) => a.cmp(b),
            (Real(a), Real(b)) => a.total_cmp(b),
            (Text(a), Text(b)) | (Blob(a), Blob(b)) => a.as_bytes().cmp(b.as_bytes()),
            _ => self.tag().cmp(&other.tag()),
        }
    }
}

impl std::fmt::Display for CanonicalCell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CanonicalCell::Null => f.write_str("None"),
            CanonicalCell::Bool(b) => write!(f, "{}", if *b { "True" } else { "False" }),
            CanonicalCell::Integer(i) => write!(f, "{i}"),
            CanonicalCell::Real(r) => write!(f, "{r:?}"),
            CanonicalCell::Text(s) => write!(f, "'{}'", s.replace('\'', "\\'")),
            CanonicalCell::Blob(d) => write!(f, "<blob sha256:{}>", &d[..d.len().min(12)]),
        }
    }
}

/// Number of decimal digits retained for a tolerance, or `None` for exact.
fn tolerance_digits(float_tol: f64) -> Option<usize> {
    if float_tol.is_nan() || float_tol <= 0.0 || float_tol.is_infinite() {
        return None;
    }
    Some((-float_tol.log10()).round().clamp(0.0, 16.0) as usize)
}

/// Quantizes `x` onto the tolerance grid: an absolute grid of `float_tol`
/// below magnitude one, a relative grid of the same size above it.
pub fn quantize(x: f64, float_tol: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let Some(digits) = tolerance_digits(float_tol) else {
        return x;
    };
    let text = if x.abs() < 1.0 {
        format!("{x:.digits$}")
    } else {
        format!("{x:.digits$e}")
    };
    text.parse().unwrap_or(x)
}

const MAX_EXACT_INT: f64 = 9_007_199_254_740_992.0; // 2^53

pub fn normalize_real(x: f64, float_tol: f64) -> CanonicalCell {
    if x.is_nan() {
        return CanonicalCell::Real(f64::NAN);
    }
    let q = quantize(x, float_tol);
    if q.is_finite() && q.fract() == 0.0 && q.abs() <= MAX_EXACT_INT {
        return CanonicalCell::Integer(q as i64);
    }
    // collapse -0.0 onto 0.0
    CanonicalCell::Real(if q == 0.0 { 0.0 } else { q })
}

/// Canonical form of one result set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canonical {
    /// Normalized rows in the canonical total order.
    pub rows: Vec<Vec<CanonicalCell>>,
    pub fingerprint: String,
}

pub fn normalize_rows(raw_rows: &[Vec<Value>], float_tol: f64) -> Vec<Vec<CanonicalCell>> {
    raw_rows
        .iter()
        .map(|row| {
            row.iter()
                .map(|v| CanonicalCell::from_value(v, float_tol))
                .collect()
        })
        .collect()
}

/// Normalizes and sorts `raw_rows`, then hashes `(column_count, rows)`.
pub fn canonicalize(column_count: usize, raw_rows: &[Vec<Value>], float_tol: f64) -> Canonical {
    let mut rows = normalize_rows(raw_rows, float_tol);
    rows.sort();
    let fingerprint = hash_rows(column_count, &rows);
    Canonical { rows, fingerprint }
}

/// Fingerprint of already-normalized rows; sorts first unless `order_sensitive`.
pub fn fingerprint_rows(
    column_count: usize,
    rows: &[Vec<CanonicalCell>],
    order_sensitive: bool,
) -> String {
    if order_sensitive {
        hash_rows_with_mode(column_count, rows, true)
    } else {
        let mut sorted = rows.to_vec();
        sorted.sort();
        hash_rows(column_count, &sorted)
    }
}

fn hash_rows(column_count: usize, rows: &[Vec<CanonicalCell>]) -> String {
    hash_rows_with_mode(column_count, rows, false)
}

fn hash_rows_with_mode(column_count: usize, rows: &[Vec<CanonicalCell>], ordered: bool) -> String {
    let mut hasher = Sha256::new();
    hasher.update(if ordered {
        b"ordered-v1"
    } else {
        b"multiset-v1" as &[u8]
    });
    hasher.update((column_count as u64).to_le_bytes());
    hasher.update((rows.len() as u64).to_le_bytes());
    for row in rows {
        hasher.update((row.len() as u64).to_le_bytes());
        for cell in row {
            cell.write_to(&mut hasher);
        }
    }
    hex::encode(hasher.finalize())
}

/// Renders rows the way the prompts show execution results: `[[1, 'a'], [2, 'b']]`.
pub fn render_rows(rows: &[Vec<CanonicalCell>]) -> String {
    let mut out = String::from("[");
    for (i, row) in rows.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push('[');
        for (j, cell) in row.iter().enumerate() {
            if j > 0 {
                out.push_str(", ");
            }
            out.push_str(&cell.to_string());
        }
        out.push(']');
    }
    out.push(']');
    out
}

mod real_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("bad real {other:?}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ints(rows: &[&[i64]]) -> Vec<Vec<Value>> {
        rows.iter()
            .map(|r| r.iter().map(|&i| Value::Integer(i)).collect())
            .collect()
    }

    #[test]
    fn row_order_does_not_change_fingerprint() {
        let a = canonicalize(1, &ints(&[&[1], &[2]]), 1e-6);
        let b = canonicalize(1, &ints(&[&[2], &[1]]), 1e-6);
        assert_eq!(a.fingerprint, b.fingerprint);
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn integral_real_matches_integer() {
        let a = canonicalize(1, &[vec![Value::Real(1.0)]], 1e-6);
        let b = canonicalize(1, &ints(&[&[1]]), 1e-6);
        assert_eq!(a.fingerprint, b.fingerprint);
        assert_eq!(a.rows[0][0], CanonicalCell::Integer(1));
    }

    #[test]
    fn reals_within_tolerance_collapse() {
        let a = 0.333333300_f64;
        let b = 1.0_f64 / 3.0;
        // the pair is inside the relative tolerance
        assert!((a - b).abs() / b.abs().max(1.0) <= 1e-6);
        let fa = canonicalize(1, &[vec![Value::Real(a)]], 1e-6);
        let fb = canonicalize(1, &[vec![Value::Real(b)]], 1e-6);
        assert_eq!(fa.fingerprint, fb.fingerprint);
    }

    #[test]
    fn reals_outside_tolerance_stay_distinct() {
        let fa = canonicalize(1, &[vec![Value::Real(0.3333)]], 1e-6);
        let fb = canonicalize(1, &[vec![Value::Real(1.0 / 3.0)]], 1e-6);
        assert_ne!(fa.fingerprint, fb.fingerprint);
    }

    #[test]
    fn large_reals_use_relative_grid() {
        assert_eq!(quantize(123_456_789.4, 1e-6), 123_456_800.0);
        assert_eq!(
            normalize_real(2.000_000_000_1, 1e-6),
            CanonicalCell::Integer(2)
        );
        assert_eq!(
            normalize_real(-0.0000000001, 1e-6),
            CanonicalCell::Integer(0)
        );
    }

    #[test]
    fn zero_tolerance_is_exact() {
        assert_eq!(quantize(0.1 + 0.2, 0.0), 0.1 + 0.2);
        assert_ne!(
            canonicalize(1, &[vec![Value::Real(0.1 + 0.2)]], 0.0).fingerprint,
            canonicalize(1, &[vec![Value::Real(0.3)]], 0.0).fingerprint
        );
    }

    #[test]
    fn duplicate_rows_are_kept() {
        let once = canonicalize(1, &ints(&[&[1]]), 1e-6);
        let twice = canonicalize(1, &ints(&[&[1], &[1]]), 1e-6);
        assert_ne!(once.fingerprint, twice.fingerprint);
    }

    #[test]
    fn column_count_is_part_of_identity() {
        assert_ne!(
            canonicalize(1, &[], 1e-6).fingerprint,
            canonicalize(2, &[], 1e-6).fingerprint
        );
    }

    #[test]
    fn null_sorts_first_and_tags_order_across_types() {
        let mut cells = [
            CanonicalCell::Text("a".into()),
            CanonicalCell::Real(0.5),
            CanonicalCell::Integer(7),
            CanonicalCell::Null,
        ];
        cells.sort();
        assert_eq!(cells[0], CanonicalCell::Null);
        assert_eq!(cells[1], CanonicalCell::Integer(7));
        assert_eq!(cells[3], CanonicalCell::Text("a".into()));
    }

    #[test]
    fn blobs_hash_by_content() {
        let a = CanonicalCell::from_value(&Value::Blob(vec![1, 2, 3]), 1e-6);
        let b = CanonicalCell::from_value(&Value::Blob(vec![1, 2, 3]), 1e-6);
        let c = CanonicalCell::from_value(&Value::Blob(vec![3, 2, 1]), 1e-6);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn order_sensitive_mode_distinguishes_order() {
        let a = normalize_rows(&ints(&[&[1], &[2]]), 1e-6);
        let b = normalize_rows(&ints(&[&[2], &[1]]), 1e-6);
        assert_eq!(
            fingerprint_rows(1, &a, false),
            fingerprint_rows(1, &b, false)
        );
        assert_ne!(fingerprint_rows(1, &a, true), fingerprint_rows(1, &b, true));
    }

    #[test]
    fn non_finite_reals_serialize() {
        let cells = vec![
            CanonicalCell::Real(f64::INFINITY),
            CanonicalCell::Real(f64::NEG_INFINITY),
            CanonicalCell::Real(2.5),
        ];
        let json = serde_json::to_string(&cells).unwrap();
        let back: Vec<CanonicalCell> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cells);
    }

    #[test]
    fn rows_render_like_python_lists() {
        let rows = vec![
            vec![CanonicalCell::Integer(1), CanonicalCell::Text("x".into())],
            vec![CanonicalCell::Null, CanonicalCell::Real(0.5)],
        ];
        assert_eq!(render_rows(&rows), "[[1, 'x'], [None, 0.5]]");
        assert_eq!(render_rows(&[]), "[]");
    }

    fn value_strategy() -> impl Strategy<Value = Value> {
        prop_oneof![
            Just(Value::Null),
            (-50i64..50).prop_map(Value::Integer),
            (-100.0f64..100.0).prop_map(Value::Real),
            "[a-c]{0,3}".prop_map(Value::Text),
        ]
    }

    proptest! {
        #[test]
        fn fingerprint_is_permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(value_strategy(), 2), 0..12),
            seed in any::<u64>(),
        ) {
            let mut shuffled = rows.clone();
            // deterministic Fisher-Yates driven by the seed
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (s >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let a = canonicalize(2, &rows, 1e-6);
            let b = canonicalize(2, &shuffled, 1e-6);
            prop_assert_eq!(a.fingerprint, b.fingerprint);
        }

        #[test]
        fn quantization_is_idempotent(x in -1e9f64..1e9) {
            let once = normalize_real(x, 1e-6);
            let twice = once.renormalize(1e-6);
            prop_assert_eq!(once, twice);
        }
    }
}
