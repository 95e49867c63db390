//! Global Q-ranking: the execution layer that enforces the daily test budget.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ClusterId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateAction {
    pub cluster_id: ClusterId,
    pub individual_id: usize,
    pub delta_q: f64,
}

/// Outcome of one ranking call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Selected `(cluster, individual)` pairs in ranking order.
    pub selected: Vec<(ClusterId, usize)>,
    pub candidates: usize,
    /// Candidates with `delta_q > 0` (the unconstrained demand).
    pub positive: usize,
    pub budget: usize,
}

impl Allocation {
    pub fn executed(&self) -> usize {
        self.selected.len()
    }
}

/// Ranking order: larger `delta_q` first, then ascending cluster and individual ids.
fn rank_order(a: &CandidateAction, b: &CandidateAction) -> Ordering {
    b.delta_q
        .total_cmp(&a.delta_q)
        .then(a.cluster_id.cmp(&b.cluster_id))
        .then(a.individual_id.cmp(&b.individual_id))
}

/// Number of candidates with strictly positive marginal value.
pub fn demand(delta_qs: impl IntoIterator<Item = f64>) -> usize {
    delta_qs.into_iter().filter(|&d| d > 0.0).count()
}

/// Test the top `min(B, |C+|)` candidates with `delta_q > 0`; the rest of
/// the budget is left unused.
pub fn q_rank_allocate(candidates: &[CandidateAction], budget: usize) -> Result<Allocation> {
    let mut seen = BTreeSet::new();
    for c in candidates {
        if !seen.insert((c.cluster_id, c.individual_id)) {
            return Err(Error::Input(format!(
                "duplicate candidate (cluster {}, individual {})",
                c.cluster_id, c.individual_id
            )));
        }
        if c.delta_q.is_nan() {
            return Err(Error::Input(format!(
                "candidate (cluster {}, individual {}) has a NaN score",
                c.cluster_id, c.individual_id
            )));
        }
    }
    let mut positive: Vec<CandidateAction> = candidates.iter().copied().filter(|c| c.delta_q > 0.0).collect();
    let n_pos = positive.len();
    positive.sort_by(rank_order);
    let k = budget.min(n_pos);
    Ok(Allocation {
        selected: positive[..k].iter().map(|c| (c.cluster_id, c.individual_id)).collect(),
        candidates: candidates.len(),
        positive: n_pos,
        budget,
    })
}
