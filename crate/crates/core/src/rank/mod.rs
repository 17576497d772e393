//! Model backends: pointwise scorer, pairwise ranker, pool judge, generator.
//!
//! Each role is a trait returning raw model text (or a raw score) so that
//! answer parsing, retries, and fallbacks live here and behave identically
//! for the HTTP and stub implementations.

mod cache;
mod http;
mod parse;
mod prompt;
mod stub;

use std::collections::HashMap;
use std::sync::Arc;

pub use cache::{cache_key, ResponseCache};
pub use http::{
    BackendKind, BackendSpec, CachedChatClient, ChatClient, HttpChatClient, LlmBackends,
    SamplingParams,
};
pub use parse::{extract_sql, parse_choice, parse_judge, Choice};
pub use prompt::{
    estimate_tokens, render_items_block, render_prompt, render_result, ChatMessage, PromptOptions,
    PromptPayload, Role,
};
pub use stub::{pool_digest, StubBackend, StubCounters, StubTable, StubTask};

use crate::error::{BackendError, Error};
use crate::model::{
    Candidate, JudgeDecision, OrderPolicy, PairVote, Parallelism, Pass, PointwiseScore, Task,
};
use crate::par;

pub trait PointwiseBackend: Send + Sync {
    /// Raw, order-independent quality score for one candidate.
    fn score(&self, task: &Task, cand: &Candidate) -> Result<f64, BackendError>;
}

pub trait PairwiseBackend: Send + Sync {
    /// Raw answer text with `first` shown as candidate A and `second` as B.
    fn answer(
        &self,
        task: &Task,
        first: &Candidate,
        second: &Candidate,
        attempt: u32,
    ) -> Result<String, BackendError>;
}

pub trait JudgeBackend: Send + Sync {
    /// Raw JSON-ish response auditing `pool`, listed in the given order.
    fn respond(
        &self,
        task: &Task,
        pool: &[Candidate],
        attempt: u32,
    ) -> Result<String, BackendError>;
}

pub trait GeneratorBackend: Send + Sync {
    /// Raw completion number `seq` of the given pass.
    fn complete(&self, task: &Task, pass: Pass, seq: usize) -> Result<String, BackendError>;
}

impl<F> PointwiseBackend for F
where
    F: Fn(&Task, &Candidate) -> Result<f64, BackendError> + Send + Sync,
{
    fn score(&self, task: &Task, cand: &Candidate) -> Result<f64, BackendError> {
        self(task, cand)
    }
}

impl<F> PairwiseBackend for F
where
    F: Fn(&Task, &Candidate, &Candidate, u32) -> Result<String, BackendError> + Send + Sync,
{
    fn answer(
        &self,
        task: &Task,
        first: &Candidate,
        second: &Candidate,
        attempt: u32,
    ) -> Result<String, BackendError> {
        self(task, first, second, attempt)
    }
}

impl<F> JudgeBackend for F
where
    F: Fn(&Task, &[Candidate], u32) -> Result<String, BackendError> + Send + Sync,
{
    fn respond(
        &self,
        task: &Task,
        pool: &[Candidate],
        attempt: u32,
    ) -> Result<String, BackendError> {
        self(task, pool, attempt)
    }
}

impl<F> GeneratorBackend for F
where
    F: Fn(&Task, Pass, usize) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(&self, task: &Task, pass: Pass, seq: usize) -> Result<String, BackendError> {
        self(task, pass, seq)
    }
}

/// The four roles a selection run talks to.
#[derive(Clone)]
pub struct Backends {
    pub pointwise: Arc<dyn PointwiseBackend>,
    pub pairwise: Arc<dyn PairwiseBackend>,
    pub judge: Arc<dyn JudgeBackend>,
    pub generator: Arc<dyn GeneratorBackend>,
}

impl Backends {
    pub fn from_stub(stub: Arc<StubBackend>) -> Self {
        Self {
            pointwise: stub.clone(),
            pairwise: stub.clone(),
            judge: stub.clone(),
            generator: stub,
        }
    }

    pub fn from_llm(llm: Arc<LlmBackends>) -> Self {
        Self {
            pointwise: llm.clone(),
            pairwise: llm.clone(),
            judge: llm.clone(),
            generator: llm,
        }
    }
}

/// Ranks `(cand_idx, raw)` pairs by descending raw score, ties to the lower
/// index, and returns scores in input order.
pub fn assign_ranks(raw: &[(usize, f64)]) -> Vec<PointwiseScore> {
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&x, &y| {
        let (ix, rx) = raw[x];
        let (iy, ry) = raw[y];
        // NaN ranks last
        let key = |r: f64| if r.is_nan() { f64::NEG_INFINITY } else { r };
        key(ry).total_cmp(&key(rx)).then(ix.cmp(&iy))
    });
    let mut out = vec![
        PointwiseScore {
            raw: 0.0,
            rank: 0,
            rr: 0.0
        };
        raw.len()
    ];
    for (pos, &i) in order.iter().enumerate() {
        let rank = pos + 1;
        out[i] = PointwiseScore {
            raw: raw[i].1,
            rank,
            rr: 1.0 / rank as f64,
        };
    }
    out
}

/// Scores every candidate in `pool`, returning one score per candidate.
///
/// Any backend failure fails the whole call with the set of failing indices;
/// partial results are never returned.
pub fn score_pointwise(
    backends: &Backends,
    task: &Task,
    pool: &[Candidate],
    mode: Parallelism,
) -> Result<Vec<PointwiseScore>, Error> {
    let raw = par::map(mode, pool, |c| match c.pointwise {
        Some(s) => Ok(s.raw),
        None => backends.pointwise.score(task, c),
    });
    let mut failed = Vec::new();
    let mut first_err = None;
    let mut pairs = Vec::with_capacity(pool.len());
    for (c, r) in pool.iter().zip(raw) {
        match r {
            Ok(x) => pairs.push((c.cand_idx, x)),
            Err(e) => {
                failed.push(c.cand_idx);
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(source) = first_err {
        return Err(Error::Pointwise { failed, source });
    }
    Ok(assign_ranks(&pairs))
}

/// Fills `pointwise` on every candidate of `pool`, re-ranking within the pool.
pub fn ensure_pointwise(
    backends: &Backends,
    task: &Task,
    pool: &mut [Candidate],
    mode: Parallelism,
) -> Result<(), Error> {
    let scores = score_pointwise(backends, task, pool, mode)?;
    for (c, s) in pool.iter_mut().zip(scores) {
        c.pointwise = Some(s);
    }
    Ok(())
}

/// Outcome of one ordered comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderedAnswer {
    /// The first-listed candidate won.
    First,
    Second,
    /// Unparseable after one retry.
    Unparsed,
}

/// Asks the ranker once with `first` as A, retrying once on an unparseable answer.
pub fn ask_ordered(
    backends: &Backends,
    task: &Task,
    first: &Candidate,
    second: &Candidate,
) -> Result<OrderedAnswer, BackendError> {
    for attempt in 0..2 {
        let text = backends.pairwise.answer(task, first, second, attempt)?;
        match parse_choice(&text) {
            Some(Choice::A) => return Ok(OrderedAnswer::First),
            Some(Choice::B) => return Ok(OrderedAnswer::Second),
            None => continue,
        }
    }
    Ok(OrderedAnswer::Unparsed)
}

/// Ordered answers keyed by `(first, second)` cand_idx.
#[derive(Debug, Clone, Default)]
pub struct PairAnswers {
    answers: HashMap<(usize, usize), OrderedAnswer>,
}

impl PairAnswers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, first: usize, second: usize, answer: OrderedAnswer) {
        self.answers.insert((first, second), answer);
    }

    pub fn get(&self, first: usize, second: usize) -> Option<OrderedAnswer> {
        self.answers.get(&(first, second)).copied()
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    /// `v(a, b)` under `policy`, or `None` if a required answer is missing.
    ///
    /// Single order reads only the call that listed `a` first; an unparsed
    /// answer counts as 0. Dual order averages the a-preferred indicator over
    /// both listings; an unparsed listing contributes 0.5.
    pub fn vote(&self, a: usize, b: usize, policy: OrderPolicy) -> Option<PairVote> {
        let (vote, fallback) = match policy {
            OrderPolicy::Single => match self.get(a, b)? {
                OrderedAnswer::First => (1.0, false),
                OrderedAnswer::Second => (0.0, false),
                OrderedAnswer::Unparsed => (0.0, true),
            },
            OrderPolicy::Dual => {
                let (x, fx) = match self.get(a, b)? {
                    OrderedAnswer::First => (1.0, false),
                    OrderedAnswer::Second => (0.0, false),
                    OrderedAnswer::Unparsed => (0.5, true),
                };
                let (y, fy) = match self.get(b, a)? {
                    OrderedAnswer::First => (0.0, false),
                    OrderedAnswer::Second => (1.0, false),
                    OrderedAnswer::Unparsed => (0.5, true),
                };
                ((x + y) / 2.0, fx || fy)
            }
        };
        Some(PairVote {
            a,
            b,
            vote,
            order_policy: policy,
            fallback,
        })
    }
}

/// Collects both orderings for every unordered pair in `pairs`.
pub fn collect_answers(
    backends: &Backends,
    task: &Task,
    pool: &[Candidate],
    pairs: &[(usize, usize)],
    mode: Parallelism,
) -> Result<PairAnswers, BackendError> {
    let by_idx: HashMap<usize, &Candidate> = pool.iter().map(|c| (c.cand_idx, c)).collect();
    let ordered: Vec<(usize, usize)> = pairs.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
    let results = par::try_map(mode, &ordered, |&(first, second)| {
        let (f, s) = match (by_idx.get(&first), by_idx.get(&second)) {
            (Some(f), Some(s)) => (*f, *s),
            _ => {
                return Err(BackendError::Protocol(format!(
                    "pair ({first}, {second}) references a candidate outside the pool"
                )))
            }
        };
        ask_ordered(backends, task, f, s).map(|ans| (first, second, ans))
    })?;
    let mut answers = PairAnswers::new();
    for (first, second, ans) in results {
        answers.insert(first, second, ans);
    }
    Ok(answers)
}

/// One pairwise preference of `a` over `b`.
///
/// Single order makes one call with `a` listed first; dual order makes two
/// calls, one per listing, and averages.
pub fn compare_pair(
    backends: &Backends,
    task: &Task,
    a: &Candidate,
    b: &Candidate,
    policy: OrderPolicy,
) -> Result<PairVote, BackendError> {
    let mut answers = PairAnswers::new();
    answers.insert(a.cand_idx, b.cand_idx, ask_ordered(backends, task, a, b)?);
    if policy == OrderPolicy::Dual {
        answers.insert(b.cand_idx, a.cand_idx, ask_ordered(backends, task, b, a)?);
    }
    Ok(answers
        .vote(a.cand_idx, b.cand_idx, policy)
        .expect("both required orderings were just recorded"))
}

/// Audits a pool. A response that cannot be parsed twice yields the
/// conservative "keep the pool" default with `defaulted` set.
pub fn judge_pool(
    backends: &Backends,
    task: &Task,
    pool: &[Candidate],
) -> Result<JudgeDecision, BackendError> {
    for attempt in 0..2 {
        let text = backends.judge.respond(task, pool, attempt)?;
        if let Some(decision) = parse_judge(&text, pool) {
            return Ok(decision);
        }
        log::warn!(
            "task {}: malformed judge response (attempt {attempt})",
            task.task_id
        );
    }
    Ok(JudgeDecision::conservative_default())
}

/// Result of a generation batch that may have stopped early.
#[derive(Debug)]
pub struct GenerationBatch {
    pub candidates: Vec<Candidate>,
    pub failures: usize,
    pub first_error: Option<BackendError>,
}

/// Requests `count` completions and keeps whatever succeeded, in sequence order.
pub fn generate_batch(
    backends: &Backends,
    task: &Task,
    count: usize,
    pass: Pass,
    mode: Parallelism,
) -> GenerationBatch {
    let seqs: Vec<usize> = (0..count).collect();
    let results = par::map(mode, &seqs, |&seq| {
        backends.generator.complete(task, pass, seq)
    });
    let mut candidates = Vec::with_capacity(count);
    let mut failures = 0;
    let mut first_error = None;
    for (seq, r) in seqs.into_iter().zip(results) {
        match r {
            Ok(text) => {
                let mut c = Candidate::new(candidates.len(), extract_sql(&text), pass);
                c.source_seq = seq;
                candidates.push(c);
            }
            Err(e) => {
                failures += 1;
                first_error.get_or_insert(e);
            }
        }
    }
    GenerationBatch {
        candidates,
        failures,
        first_error,
    }
}

/// Exactly `count` candidates, or the first backend error.
pub fn generate_candidates(
    backends: &Backends,
    task: &Task,
    count: usize,
    pass: Pass,
    mode: Parallelism,
) -> Result<Vec<Candidate>, BackendError> {
    let batch = generate_batch(backends, task, count, pass, mode);
    match batch.first_error {
        Some(e) => Err(e),
        None => Ok(batch.candidates),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn task() -> Task {
        Task::new("t", "q?", "/dev/null")
    }

    fn cands(n: usize) -> Vec<Candidate> {
        crate::model::pool_from_sql((0..n).map(|i| format!("SELECT {i}")), Pass::Initial)
    }

    fn backends_with_pairwise(p: impl PairwiseBackend + 'static) -> Backends {
        let stub = Arc::new(StubBackend::new(StubTable::default()));
        let mut b = Backends::from_stub(stub);
        b.pairwise = Arc::new(p);
        b
    }

    #[test]
    fn ranks_break_ties_by_index() {
        let s = assign_ranks(&[(0, 0.9), (1, 0.2), (2, 0.9)]);
        assert_eq!(s.iter().map(|x| x.rank).collect::<Vec<_>>(), vec![1, 3, 2]);
        assert_eq!(s[1].rr, 1.0 / 3.0);
        assert_eq!(s[2].rr, 0.5);
    }

    #[test]
    fn single_candidate_is_rank_one() {
        let s = assign_ranks(&[(0, -4.2)]);
        assert_eq!((s[0].rank, s[0].rr), (1, 1.0));
    }

    #[test]
    fn fixture_pool_ranks_match_hand_sort() {
        // hand-sorted: idx 2 (3.1) > idx 0 (1.5) > idx 3 (-0.25) > idx 1 (-2.0)
        let s = assign_ranks(&[(0, 1.5), (1, -2.0), (2, 3.1), (3, -0.25)]);
        assert_eq!(
            s.iter().map(|x| x.rank).collect::<Vec<_>>(),
            vec![2, 4, 1, 3]
        );
    }

    #[test]
    fn pointwise_failure_names_failed_candidates() {
        let stub = Arc::new(StubBackend::new(StubTable::default()));
        let mut b = Backends::from_stub(stub);
        b.pointwise = Arc::new(|_: &Task, c: &Candidate| {
            if c.cand_idx % 2 == 1 {
                Err(BackendError::Transport("down".into()))
            } else {
                Ok(1.0)
            }
        });
        match score_pointwise(&b, &task(), &cands(4), Parallelism::Parallel) {
            Err(Error::Pointwise { failed, .. }) => assert_eq!(failed, vec![1, 3]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dual_unanimous_vote_is_one() {
        // prefers the lower index whichever order it sees
        let b = backends_with_pairwise(|_: &Task, f: &Candidate, s: &Candidate, _| {
            Ok(if f.cand_idx < s.cand_idx { "A" } else { "B" }.to_string())
        });
        let c = cands(2);
        let v = compare_pair(&b, &task(), &c[0], &c[1], OrderPolicy::Dual).unwrap();
        assert_eq!(v.vote, 1.0);
    }

    #[test]
    fn pure_position_bias_cancels_in_dual_mode() {
        let b = backends_with_pairwise(|_: &Task, _: &Candidate, _: &Candidate, _| {
            Ok("<answer>A</answer>".into())
        });
        let c = cands(2);
        assert_eq!(
            compare_pair(&b, &task(), &c[0], &c[1], OrderPolicy::Dual)
                .unwrap()
                .vote,
            0.5
        );
        assert_eq!(
            compare_pair(&b, &task(), &c[0], &c[1], OrderPolicy::Single)
                .unwrap()
                .vote,
            1.0
        );
    }

    #[test]
    fn single_mode_b_answer_is_zero() {
        let b = backends_with_pairwise(|_: &Task, _: &Candidate, _: &Candidate, _| Ok("B".into()));
        let c = cands(2);
        assert_eq!(
            compare_pair(&b, &task(), &c[0], &c[1], OrderPolicy::Single)
                .unwrap()
                .vote,
            0.0
        );
    }

    #[test]
    fn unparseable_answers_retry_once_then_fall_back() {
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        let b = backends_with_pairwise(move |_: &Task, _: &Candidate, _: &Candidate, _| {
            counter.fetch_add(1, Ordering::SeqCst);
            Ok("I cannot decide".into())
        });
        let c = cands(2);
        let single = compare_pair(&b, &task(), &c[0], &c[1], OrderPolicy::Single).unwrap();
        assert_eq!((single.vote, single.fallback), (0.0, true));
        assert_eq!(calls.load(Ordering::SeqCst), 2);
        let dual = compare_pair(&b, &task(), &c[0], &c[1], OrderPolicy::Dual).unwrap();
        assert_eq!((dual.vote, dual.fallback), (0.5, true));
    }

    #[test]
    fn retry_recovers_on_second_attempt() {
        let b = backends_with_pairwise(|_: &Task, _: &Candidate, _: &Candidate, attempt: u32| {
            Ok(if attempt == 0 {
                "hmm"
            } else {
                "<answer>B</answer>"
            }
            .to_string())
        });
        let c = cands(2);
        let v = compare_pair(&b, &task(), &c[0], &c[1], OrderPolicy::Single).unwrap();
        assert_eq!((v.vote, v.fallback), (0.0, false));
    }

    #[test]
    fn judge_falls_back_after_two_malformed_responses() {
        let stub = Arc::new(StubBackend::new(StubTable::default()));
        let mut b = Backends::from_stub(stub);
        b.judge = Arc::new(|_: &Task, _: &[Candidate], _| Ok("not json".to_string()));
        let d = judge_pool(&b, &task(), &cands(3)).unwrap();
        assert!(d.likely_has_correct && d.defaulted);
    }

    #[test]
    fn generation_extracts_sql_in_sequence_order() {
        let stub = Arc::new(StubBackend::new(StubTable::default()));
        let mut b = Backends::from_stub(stub);
        b.generator = Arc::new(|_: &Task, _: Pass, seq: usize| {
            Ok(format!(
                "<thinking>x</thinking><answer>ok\n```sql\nSELECT {seq}\n```</answer>"
            ))
        });
        let out =
            generate_candidates(&b, &task(), 5, Pass::Initial, Parallelism::Parallel).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(out[3].sql, "SELECT 3");
        assert_eq!(out[3].cand_idx, 3);
    }

    #[test]
    fn partial_generation_keeps_successes() {
        let stub = Arc::new(StubBackend::new(StubTable::default()));
        let mut b = Backends::from_stub(stub);
        b.generator = Arc::new(|_: &Task, _: Pass, seq: usize| {
            if seq == 2 {
                Err(BackendError::Transport("flaky".into()))
            } else {
                Ok(format!("SELECT {seq}"))
            }
        });
        let batch = generate_batch(&b, &task(), 4, Pass::Resampled, Parallelism::Sequential);
        assert_eq!(batch.failures, 1);
        let seqs: Vec<_> = batch
            .candidates
            .iter()
            .map(|c| (c.cand_idx, c.source_seq))
            .collect();
        assert_eq!(seqs, vec![(0, 0), (1, 1), (2, 3)]);
    }
}
