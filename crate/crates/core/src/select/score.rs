//! Group scoring: cross-group preference, decisive wins, pointwise utility,
//! lexicographic order, and the final top-2 comparison.
//!
//! Everything here is pure. Votes come in through a lookup closure so the
//! same code serves the pipeline, tests, and brute-force checks.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::model::{ExecGroup, FinalTie, GroupPreference, PointwiseScore};
use crate::seed::rng_for;

/// `v(a, b)`: preference of candidate `a` over `b` in [0, 1].
pub type VoteFn<'a> = dyn Fn(usize, usize) -> Option<f64> + 'a;

/// Pointwise score of one candidate.
pub type ScoreFn<'a> = dyn Fn(usize) -> Option<PointwiseScore> + 'a;

/// Member pairs to compare per group pair, keyed `(i, j)` with `i < j` by
/// group id; each pair is `(a, b)` with `a` in `g_i` and `b` in `g_j`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairPlan {
    pub pairs: BTreeMap<(usize, usize), Vec<(usize, usize)>>,
    /// True when a cap dropped some cross pairs.
    pub capped: bool,
}

impl PairPlan {
    /// Every cross pair, each group pair capped at `cap` pairs sampled
    /// uniformly without replacement.
    pub fn new(groups: &[ExecGroup], cap: Option<usize>, seed: u64, label: &str) -> Self {
        let mut plan = PairPlan::default();
        for (x, gi) in groups.iter().enumerate() {
            for gj in &groups[x + 1..] {
                let (gi, gj) = if gi.group_id < gj.group_id {
                    (gi, gj)
                } else {
                    (gj, gi)
                };
                let all: Vec<(usize, usize)> = gi
                    .members
                    .iter()
                    .flat_map(|&a| gj.members.iter().map(move |&b| (a, b)))
                    .collect();
                let chosen = match cap {
                    Some(c) if c < all.len() => {
                        plan.capped = true;
                        let mut rng =
                            rng_for(seed, &format!("{label}/{}/{}", gi.group_id, gj.group_id));
                        let mut idx = sample(&mut rng, all.len(), c).into_vec();
                        idx.sort_unstable();
                        idx.into_iter().map(|k| all[k]).collect()
                    }
                    _ => all,
                };
                plan.pairs.insert((gi.group_id, gj.group_id), chosen);
            }
        }
        plan
    }

    /// All planned pairs, in group-pair order.
    pub fn flat(&self) -> Vec<(usize, usize)> {
        self.pairs.values().flatten().copied().collect()
    }

    /// Pairs oriented so the first element is in `i` and the second in `j`.
    pub fn oriented(&self, i: usize, j: usize) -> Option<Vec<(usize, usize)>> {
        if i < j {
            self.pairs.get(&(i, j)).cloned()
        } else {
            self.pairs
                .get(&(j, i))
                .map(|ps| ps.iter().map(|&(a, b)| (b, a)).collect())
        }
    }
}

/// Mean vote over `pairs`.
pub fn mean_vote(pairs: &[(usize, usize)], votes: &VoteFn<'_>) -> Result<f64> {
    let mut sum = 0.0;
    for &(a, b) in pairs {
        sum += votes(a, b).ok_or(Error::MissingVote { a, b })?;
    }
    Ok(sum / pairs.len() as f64)
}

/// `P(g_i ≻ g_j)`: the mean of `v(s_i, s_j)` over all cross pairs.
pub fn group_preference(gi: &ExecGroup, gj: &ExecGroup, votes: &VoteFn<'_>) -> Result<f64> {
    let pairs: Vec<(usize, usize)> = gi
        .members
        .iter()
        .flat_map(|&a| gj.members.iter().map(move |&b| (a, b)))
        .collect();
    mean_vote(&pairs, votes)
}

/// 1 iff `p >= tau`.
pub fn decisive(p: f64, tau: f64) -> u8 {
    u8::from(p >= tau)
}

/// Preferences for every ordered group pair.
pub fn preferences(
    groups: &[ExecGroup],
    plan: &PairPlan,
    votes: &VoteFn<'_>,
    tau: f64,
) -> Result<Vec<GroupPreference>> {
    let mut out = Vec::with_capacity(groups.len() * groups.len().saturating_sub(1));
    for gi in groups {
        for gj in groups {
            if gi.group_id == gj.group_id {
                continue;
            }
            let pairs = plan
                .oriented(gi.group_id, gj.group_id)
                .ok_or(Error::MissingVote {
                    a: gi.smallest_member(),
                    b: gj.smallest_member(),
                })?;
            let p = mean_vote(&pairs, votes)?;
            out.push(GroupPreference {
                i: gi.group_id,
                j: gj.group_id,
                p,
                decisive: decisive(p, tau),
            });
        }
    }
    Ok(out)
}

/// Decisive-win counts, indexed by group id.
pub fn listwise_scores(group_count: usize, prefs: &[GroupPreference]) -> Vec<u32> {
    let mut r = vec![0u32; group_count];
    for p in prefs {
        r[p.i] += u32::from(p.decisive);
    }
    r
}

/// Member with the highest reciprocal rank, ties to the lower index.
pub fn pick_representative(group: &ExecGroup, scores: &ScoreFn<'_>) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &m in &group.members {
        let rr = scores(m).ok_or(Error::MissingScore(m))?.rr;
        match best {
            Some((bm, brr)) if rr < brr || (rr == brr && bm < m) => {}
            _ => best = Some((m, rr)),
        }
    }
    Ok(best.expect("groups are non-empty").0)
}

/// `|g| * max rr` and the member attaining the max.
pub fn pointwise_utility(group: &ExecGroup, scores: &ScoreFn<'_>) -> Result<(f64, usize)> {
    let rep = pick_representative(group, scores)?;
    let rr = scores(rep).ok_or(Error::MissingScore(rep))?.rr;
    Ok((group.size as f64 * rr, rep))
}

fn tie_break(a: &ExecGroup, b: &ExecGroup) -> Ordering {
    b.size
        .cmp(&a.size)
        .then(a.smallest_member().cmp(&b.smallest_member()))
}

/// Group ids ordered by descending `(r_list, r_point)`, then larger size,
/// then smaller smallest member.
pub fn lexicographic_sort(groups: &[ExecGroup]) -> Vec<usize> {
    let mut order: Vec<&ExecGroup> = groups.iter().collect();
    order.sort_by(|a, b| {
        b.r_list
            .cmp(&a.r_list)
            .then(b.r_point.total_cmp(&a.r_point))
            .then_with(|| tie_break(a, b))
    });
    order.iter().map(|g| g.group_id).collect()
}

/// Group ids ordered by `r_list` alone, ties as in [`lexicographic_sort`].
pub fn listwise_sort(groups: &[ExecGroup]) -> Vec<usize> {
    let mut order: Vec<&ExecGroup> = groups.iter().collect();
    order.sort_by(|a, b| b.r_list.cmp(&a.r_list).then_with(|| tie_break(a, b)));
    order.iter().map(|g| g.group_id).collect()
}

/// Group ids ordered by a per-group key, descending, ties as in [`lexicographic_sort`].
pub fn sort_by_key(groups: &[ExecGroup], key: &dyn Fn(&ExecGroup) -> f64) -> Vec<usize> {
    let mut order: Vec<&ExecGroup> = groups.iter().collect();
    order.sort_by(|a, b| key(b).total_cmp(&key(a)).then_with(|| tie_break(a, b)));
    order.iter().map(|g| g.group_id).collect()
}

/// Whether the leader survives the final comparison with preference `p`.
pub fn leader_survives(p: f64, tie: FinalTie) -> bool {
    match tie {
        FinalTie::Strict => p > 0.5,
        FinalTie::KeepLeader => p >= 0.5,
    }
}

/// The top-2 refinement: `g'` if `P(g' ≻ g'') > 1/2`, else `g''`.
pub fn final_select<'g>(
    g_prime: &'g ExecGroup,
    g_dprime: Option<&'g ExecGroup>,
    votes: &VoteFn<'_>,
    tie: FinalTie,
) -> Result<&'g ExecGroup> {
    let Some(g2) = g_dprime else {
        return Ok(g_prime);
    };
    let p = group_preference(g_prime, g2, votes)?;
    Ok(if leader_survives(p, tie) { g_prime } else { g2 })
}
