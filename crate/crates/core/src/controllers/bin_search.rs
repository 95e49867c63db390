use serde::{Deserialize, Serialize};

/// Demand evaluations allowed per decision, the slack probe included.
pub const DEFAULT_TOL_ITERS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSearchResult {
    pub m: f64,
    pub evaluations: usize,
    /// Demand at the returned multiplier, when it was evaluated.
    pub demand: Option<usize>,
}

/// Smallest multiplier whose proposed demand fits the budget.
///
/// The baseline `m = 1` is probed first and kept when its demand already
/// fits. Otherwise `[1, m_max]` is bisected with the remaining evaluations,
/// assuming `demand` is non-increasing in `m`; `m_max` is returned when no
/// probe fits.
pub fn bin_search_m(mut demand: impl FnMut(f64) -> usize, budget: usize, m_min: f64, m_max: f64, tol_iters: usize) -> BinSearchResult {
    let base = 1.0_f64.clamp(m_min, m_max);
    if tol_iters == 0 {
        return BinSearchResult {
            m: m_max,
            evaluations: 0,
            demand: None,
        };
    }
    let d0 = demand(base);
    if d0 <= budget {
        return BinSearchResult {
            m: base,
            evaluations: 1,
            demand: Some(d0),
        };
    }
    let mut lo = base;
    let mut hi = m_max;
    let mut hi_demand = None;
    let mut evaluations = 1;
    while evaluations < tol_iters {
        let mid = 0.5 * (lo + hi);
        let d = demand(mid);
        evaluations += 1;
        if d <= budget {
            hi = mid;
            hi_demand = Some(d);
        } else {
            lo = mid;
        }
    }
    BinSearchResult {
        m: hi,
        evaluations,
        demand: hi_demand,
    }
}
