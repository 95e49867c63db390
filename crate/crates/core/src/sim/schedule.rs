use crate::error::{Error, Result};
use crate::params::{ActivationMode, ClusterId, Day};
use crate::rng::{Channel, StreamKey};

/// Activation day of every cluster, sorted by `(day, cluster id)`.
///
/// Asynchronous activations are drawn uniformly from `[0, stagger_window]`.
pub fn make_schedule(
    mode: ActivationMode,
    n_clusters: usize,
    n_max: usize,
    stagger_window: usize,
    seed: u64,
) -> Result<Vec<(ClusterId, Day)>> {
    if n_clusters > n_max {
        return Err(Error::param(
            "n_clusters",
            format!("{n_clusters} clusters exceed n_max = {n_max}"),
        ));
    }
    let mut schedule: Vec<(ClusterId, Day)> = (0..n_clusters)
        .map(|id| {
            let day = match mode {
                ActivationMode::Synchronous => 0,
                ActivationMode::Asynchronous => StreamKey::new(seed, id, 0, 0, Channel::Schedule)
                    .stream()
                    .int_inclusive(0, stagger_window),
            };
            (id, day)
        })
        .collect();
    schedule.sort_by_key(|&(id, day)| (day, id));
    Ok(schedule)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synchronous_is_all_zero() {
        let s = make_schedule(ActivationMode::Synchronous, 10, 40, 20, 3).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.iter().all(|&(_, d)| d == 0));
    }

    #[test]
    fn zero_window_matches_synchronous() {
        let a = make_schedule(ActivationMode::Asynchronous, 12, 40, 0, 5).unwrap();
        let b = make_schedule(ActivationMode::Synchronous, 12, 40, 20, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reproducible_and_in_window() {
        let a = make_schedule(ActivationMode::Asynchronous, 40, 40, 20, 11).unwrap();
        let b = make_schedule(ActivationMode::Asynchronous, 40, 40, 20, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&(_, d)| d <= 20));
        assert!(a.windows(2).all(|w| (w[0].1, w[0].0) < (w[1].1, w[1].0)));
    }

    #[test]
    fn too_many_clusters() {
        assert!(make_schedule(ActivationMode::Synchronous, 41, 40, 20, 0).is_err());
    }
}
