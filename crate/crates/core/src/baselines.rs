//! Heuristic allocation baselines.

use std::str::FromStr;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ClusterId, Day};
use crate::rng::{Channel, StreamKey};
use crate::sim::{ClusterState, TestResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicKind {
    /// Equal split, symptom/positive-result quarantine.
    SympAvgRand,
    /// Equal split, threshold quarantine.
    ThresAvgRand,
    /// Size-proportional split, threshold quarantine.
    ThresSizeRand,
}

impl HeuristicKind {
    pub fn uses_symptom_quarantine(self) -> bool {
        matches!(self, HeuristicKind::SympAvgRand)
    }

    pub fn name(self) -> &'static str {
        match self {
            HeuristicKind::SympAvgRand => "symp_avg_rand",
            HeuristicKind::ThresAvgRand => "thres_avg_rand",
            HeuristicKind::ThresSizeRand => "thres_size_rand",
        }
    }
}

impl FromStr for HeuristicKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symp_avg_rand" => Ok(Self::SympAvgRand),
            "thres_avg_rand" => Ok(Self::ThresAvgRand),
            "thres_size_rand" => Ok(Self::ThresSizeRand),
            other => Err(Error::param("heuristic", format!("unknown heuristic `{other}`"))),
        }
    }
}

/// Equal split: `floor(B / C)` each, remainder to the lowest ids.
pub fn avg_quotas(n_clusters: usize, budget: usize) -> Vec<usize> {
    if n_clusters == 0 {
        return Vec::new();
    }
    let base = budget / n_clusters;
    let rem = budget % n_clusters;
    (0..n_clusters).map(|k| base + usize::from(k < rem)).collect()
}

/// Largest-remainder split proportional to `sizes`; ties go to the lowest index.
pub fn size_quotas(sizes: &[usize], budget: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| budget * s / total).collect();
    let assigned: usize = quotas.iter().sum();
    // Remainder numerators (budget * s) mod total compare exactly.
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = (budget * sizes[a]) % total;
        let rb = (budget * sizes[b]) % total;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(budget - assigned) {
        quotas[k] += 1;
    }
    quotas
}

/// Per-cluster test selections of a heuristic.
///
/// `clusters` are the traced clusters in ascending id order. Sampling is
/// keyed by `(root seed, cluster, day)` so runs sharing a seed share draws.
pub fn heuristic_allocate(kind: HeuristicKind, clusters: &[&ClusterState], budget: usize, root_seed: u64, day: Day) -> Vec<(ClusterId, Vec<usize>)> {
    let quotas = match kind {
        HeuristicKind::SympAvgRand | HeuristicKind::ThresAvgRand => avg_quotas(clusters.len(), budget),
        HeuristicKind::ThresSizeRand => size_quotas(&clusters.iter().map(|c| c.size).collect::<Vec<_>>(), budget),
    };
    clusters
        .iter()
        .zip(quotas)
        .map(|(c, quota)| {
            let k = quota.min(c.size);
            let mut rng = StreamKey::new(root_seed, c.id, 0, day, Channel::HeuristicSample).stream();
            let mut picked = sample(&mut rng, c.size, k).into_vec();
            picked.sort_unstable();
            (c.id, picked)
        })
        .collect()
}

/// Quarantine flags of the symptom-based rule: isolate after a symptom report
/// within the last `window` days, and for good after a positive result.
pub fn symptom_quarantine(cluster: &ClusterState, window: usize) -> Vec<bool> {
    let t = cluster.local_day;
    cluster
        .individuals
        .iter()
        .map(|ind| {
            let recent = (t.saturating_sub(window)..t).any(|d| ind.symptom_observed_history.get(d).copied().unwrap_or(false));
            let positive = ind.reported_results.iter().any(|r| *r == TestResult::Positive);
            recent || positive
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn avg_split_examples() {
        assert_eq!(avg_quotas(2, 5), vec![3, 2]);
        assert_eq!(avg_quotas(3, 2), vec![1, 1, 0]);
        assert!(avg_quotas(0, 4).is_empty());
    }

    #[test]
    fn size_split_examples() {
        assert_eq!(size_quotas(&[30, 10], 4), vec![3, 1]);
        assert_eq!(size_quotas(&[5, 5, 5], 4), vec![2, 1, 1]);
        assert_eq!(size_quotas(&[2, 9], 0), vec![0, 0]);
        assert_eq!(size_quotas(&[3, 7], 10).iter().sum::<usize>(), 10);
    }
}
