use std::collections::HashMap;

use crate::model::{Candidate, ExecGroup};

/// Partitions ok-status candidates by fingerprint.
///
/// Errors and timeouts are left out. Groups come back ordered by descending
/// size, then ascending smallest member, with `group_id` equal to position.
/// Scores start at zero and the representative at the smallest member.
pub fn group_candidates(pool: &[Candidate]) -> Vec<ExecGroup> {
    let mut by_fp: HashMap<&str, Vec<usize>> = HashMap::new();
    for cand in pool {
        if !cand.is_ok() {
            continue;
        }
        if let Some(fp) = cand.fingerprint() {
            by_fp.entry(fp).or_default().push(cand.cand_idx);
        }
    }
    let mut groups: Vec<ExecGroup> = by_fp
        .into_iter()
        .map(|(fp, mut members)| {
            members.sort_unstable();
            ExecGroup {
                group_id: 0,
                fingerprint: fp.to_string(),
                size: members.len(),
                representative: members[0],
                members,
                r_list: 0,
                r_point: 0.0,
            }
        })
        .collect();
    groups.sort_by(|a, b| b.size.cmp(&a.size).then(a.members[0].cmp(&b.members[0])));
    for (i, g) in groups.iter_mut().enumerate() {
        g.group_id = i;
    }
    groups
}
