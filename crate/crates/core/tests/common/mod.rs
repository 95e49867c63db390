//! Brute-force oracles shared by the oracle and acceptance tests.
#![allow(dead_code)]

use outbreak_core::allocator::CandidateAction;
use outbreak_core::params::EpiParams;
use outbreak_core::sim::TestResult;
use statrs::distribution::{ContinuousCDF, LogNormal};

/// Observations of one contact.
#[derive(Clone, Debug)]
pub struct Obs {
    pub symptoms: Vec<bool>,
    /// Results indexed by test day.
    pub results: Vec<TestResult>,
}

#[derive(Clone, Copy, Debug)]
enum Latent {
    Healthy,
    Infected { onset: usize, symptomatic: bool },
}

/// Posterior of one contact: `P(infected)` and `P(infectious on t+1..t+3)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Marginal {
    pub q_infected: f64,
    pub q_future: [f64; 3],
}

/// Enumerates the joint latent trajectories of a whole cluster: index type,
/// then infection, onset day and symptom status of every contact. Nothing
/// is shared with the filter except the parameter values.
pub struct EnumerationOracle {
    epi: EpiParams,
    dist: LogNormal,
}

impl EnumerationOracle {
    pub fn new(epi: &EpiParams) -> Self {
        let (m, s) = (epi.incubation_mean_days, epi.incubation_std_days);
        let var_log = (1.0 + s * s / (m * m)).ln();
        let dist = LogNormal::new(m.ln() - var_log / 2.0, var_log.sqrt()).unwrap();
        Self { epi: epi.clone(), dist }
    }

    /// `P(onset = k)` for incubation rounded to the nearest day, with every
    /// onset at or beyond `last` lumped into `last`.
    fn onset_probs(&self, last: usize) -> Vec<f64> {
        let cdf = |x: f64| if x <= 0.0 { 0.0 } else { self.dist.cdf(x) };
        let mut p: Vec<f64> = (0..last).map(|k| cdf(k as f64 + 0.5) - cdf(k as f64 - 0.5)).collect();
        p.push(1.0 - cdf(last as f64 - 0.5));
        p
    }

    fn infectious(&self, l: Latent, day: usize) -> bool {
        match l {
            Latent::Healthy => false,
            Latent::Infected { onset, .. } => {
                day + self.epi.infectious_pre_onset_days >= onset && day < onset + self.epi.infectious_post_onset_days
            }
        }
    }

    fn likelihood(&self, l: Latent, obs: &Obs, t: usize) -> f64 {
        let e = &self.epi;
        let mut lik = 1.0;
        for (d, &seen) in obs.symptoms.iter().enumerate().take(t) {
            let true_sym = match l {
                Latent::Infected { onset, symptomatic: true } => d >= onset && d < onset + e.infectious_post_onset_days,
                _ => false,
            };
            let p = if true_sym { 1.0 } else { e.p_false_symptom_per_day };
            lik *= if seen { p } else { 1.0 - p };
        }
        for (d, r) in obs.results.iter().enumerate() {
            if d + e.result_delay_days > t {
                continue;
            }
            let p_pos = if self.infectious(l, d) {
                e.test_sensitivity
            } else {
                1.0 - e.test_specificity
            };
            lik *= match r {
                TestResult::None => 1.0,
                TestResult::Positive => p_pos,
                TestResult::Negative => 1.0 - p_pos,
            };
        }
        lik
    }

    /// Exact marginals of every contact at decision day `t`, conditioning on
    /// all observations in the cluster.
    pub fn marginals(&self, cluster: &[Obs], t: usize) -> Vec<Marginal> {
        let e = &self.epi;
        // Onsets past this day cannot affect anything observed or queried.
        let last = t + 3 + e.infectious_pre_onset_days + 1;
        let onset_p = self.onset_probs(last);
        let mut states = vec![(Latent::Healthy, None)];
        for (k, &p) in onset_p.iter().enumerate() {
            for s in [true, false] {
                let ps = if s {
                    e.p_symptomatic_given_infected
                } else {
                    1.0 - e.p_symptomatic_given_infected
                };
                states.push((Latent::Infected { onset: k, symptomatic: s }, Some(p * ps)));
            }
        }
        let n = cluster.len();
        let lik: Vec<Vec<f64>> = cluster
            .iter()
            .map(|o| states.iter().map(|&(l, _)| self.likelihood(l, o, t)).collect())
            .collect();
        let mut total = 0.0;
        let mut inf = vec![0.0; n];
        let mut fut = vec![[0.0; 3]; n];
        for (high, p_type) in [(true, e.p_high_transmissive_index), (false, 1.0 - e.p_high_transmissive_index)] {
            if p_type == 0.0 {
                continue;
            }
            let q = e.exposure_prob(high);
            let prior: Vec<f64> = states.iter().map(|&(_, w)| w.map_or(1.0 - q, |w| q * w)).collect();
            // Odometer over the joint assignment.
            let mut idx = vec![0usize; n];
            loop {
                let mut w = p_type;
                for i in 0..n {
                    w *= prior[idx[i]] * lik[i][idx[i]];
                }
                total += w;
                for i in 0..n {
                    let l = states[idx[i]].0;
                    if let Latent::Infected { .. } = l {
                        inf[i] += w;
                    }
                    for k in 0..3 {
                        if self.infectious(l, t + k + 1) {
                            fut[i][k] += w;
                        }
                    }
                }
                let mut pos = 0;
                loop {
                    if pos == n {
                        break;
                    }
                    idx[pos] += 1;
                    if idx[pos] < states.len() {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
                if pos == n {
                    break;
                }
            }
        }
        (0..n)
            .map(|i| Marginal {
                q_infected: inf[i] / total,
                q_future: [fut[i][0] / total, fut[i][1] / total, fut[i][2] / total],
            })
            .collect()
    }
}

/// Exposure-only parameters with a single index type, so contacts are
/// independent given the parameters.
pub fn exposure_only(size_max: usize) -> EpiParams {
    EpiParams {
        onward_transmission: false,
        p_high_transmissive_index: 0.0,
        cluster_size_min: 2,
        cluster_size_max: size_max,
        ..EpiParams::desk()
    }
}

/// Best objective `sum of delta_q` over all subsets of at most `budget`
/// candidates, by enumeration.
pub fn best_subset_value(cands: &[CandidateAction], budget: usize) -> f64 {
    let n = cands.len();
    assert!(n <= 20);
    let mut best = 0.0f64;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize > budget {
            continue;
        }
        let v: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| cands[i].delta_q).sum();
        best = best.max(v);
    }
    best
}
