//! Per-individual Bayesian infection beliefs and the threshold quarantine rule.
//!
//! Each contact is modelled as either uninfected or infected at exposure
//! (local day 0) with an onset offset drawn from the rounded incubation law
//! and a symptomatic flag. The posterior over these hypotheses is exact given
//! the individual's own symptom reports and delivered test results.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Day, EpiParams};
use crate::sim::{ClusterState, IndividualState, TestResult};

/// Number of past and future days summarized in a belief record.
pub const WINDOW: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Hypothesis {
    infected: bool,
    onset: Day,
    symptomatic: bool,
}

/// Enumerated latent hypotheses for one contact, with their prior weights.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisSpace {
    hyps: Vec<Hypothesis>,
    prior: Vec<f64>,
    epi: EpiParams,
}

impl HypothesisSpace {
    pub fn new(epi: &EpiParams) -> Self {
        let q0 = epi.prior_infection_prob();
        let ps = epi.p_symptomatic_given_infected;
        let pmf = epi.onset_pmf();
        let mut hyps = vec![Hypothesis {
            infected: false,
            onset: 0,
            symptomatic: false,
        }];
        let mut prior = vec![1.0 - q0];
        for (onset, &p) in pmf.iter().enumerate() {
            for (symptomatic, ps_branch) in [(true, ps), (false, 1.0 - ps)] {
                hyps.push(Hypothesis {
                    infected: true,
                    onset,
                    symptomatic,
                });
                prior.push(q0 * p * ps_branch);
            }
        }
        Self {
            hyps,
            prior,
            epi: epi.clone(),
        }
    }

    pub fn shared(epi: &EpiParams) -> Arc<Self> {
        Arc::new(Self::new(epi))
    }

    pub fn len(&self) -> usize {
        self.hyps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hyps.is_empty()
    }

    pub fn epi(&self) -> &EpiParams {
        &self.epi
    }

    pub fn prior(&self) -> Posterior {
        Posterior {
            weights: self.prior.clone(),
        }
    }

    #[inline]
    fn infectious(&self, h: usize, day: Day) -> bool {
        let hy = self.hyps[h];
        hy.infected && self.epi.infectious_window(0, hy.onset, day)
    }

    #[inline]
    fn symptom_likelihood(&self, h: usize, day: Day, observed: bool) -> f64 {
        let hy = self.hyps[h];
        let true_symptoms = hy.infected && hy.symptomatic && self.epi.symptom_window(hy.onset, day);
        let p = if true_symptoms {
            1.0
        } else {
            self.epi.p_false_symptom_per_day
        };
        if observed {
            p
        } else {
            1.0 - p
        }
    }

    #[inline]
    fn positive_prob(&self, h: usize, day: Day) -> f64 {
        if self.infectious(h, day) {
            self.epi.test_sensitivity
        } else {
            1.0 - self.epi.test_specificity
        }
    }

    #[inline]
    fn result_likelihood(&self, h: usize, test_day: Day, positive: bool) -> f64 {
        let p = self.positive_prob(h, test_day);
        if positive {
            p
        } else {
            1.0 - p
        }
    }
}

/// Normalized posterior weights over a [`HypothesisSpace`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub weights: Vec<f64>,
}

impl Posterior {
    /// Multiply in a likelihood and renormalize. An update with zero total
    /// likelihood is skipped and reported as `false`.
    fn update(&mut self, lik: impl Fn(usize) -> f64) -> bool {
        let mut next: Vec<f64> = self.weights.iter().enumerate().map(|(h, w)| w * lik(h)).collect();
        let total: f64 = next.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return false;
        }
        for w in &mut next {
            *w /= total;
        }
        self.weights = next;
        true
    }

    pub fn observe_symptom(&mut self, space: &HypothesisSpace, day: Day, observed: bool) -> bool {
        self.update(|h| space.symptom_likelihood(h, day, observed))
    }

    pub fn observe_result(&mut self, space: &HypothesisSpace, test_day: Day, positive: bool) -> bool {
        self.update(|h| space.result_likelihood(h, test_day, positive))
    }

    /// Probability of being infected.
    pub fn q_infected(&self, space: &HypothesisSpace) -> f64 {
        clamp01(
            self.weights
                .iter()
                .zip(&space.hyps)
                .filter(|(_, h)| h.infected)
                .map(|(w, _)| w)
                .sum(),
        )
    }

    pub fn q_infectious_on(&self, space: &HypothesisSpace, day: Day) -> f64 {
        clamp01(
            self.weights
                .iter()
                .enumerate()
                .filter(|&(h, _)| space.infectious(h, day))
                .map(|(_, w)| w)
                .sum(),
        )
    }

    /// Probability that a test taken on `day` comes back positive.
    pub fn p_positive(&self, space: &HypothesisSpace, day: Day) -> f64 {
        clamp01(
            self.weights
                .iter()
                .enumerate()
                .map(|(h, w)| w * space.positive_prob(h, day))
                .sum(),
        )
    }

    /// `(P(positive), q | positive, q | negative)` for a test taken on `day`.
    pub fn test_branches(&self, space: &HypothesisSpace, day: Day) -> (f64, f64, f64) {
        let mut p_pos = 0.0;
        let mut inf_pos = 0.0;
        let mut p_neg = 0.0;
        let mut inf_neg = 0.0;
        for (h, &w) in self.weights.iter().enumerate() {
            let lp = space.positive_prob(h, day);
            let (a, b) = (w * lp, w * (1.0 - lp));
            p_pos += a;
            p_neg += b;
            if space.hyps[h].infected {
                inf_pos += a;
                inf_neg += b;
            }
        }
        let q_pos = if p_pos > 0.0 { clamp01(inf_pos / p_pos) } else { 0.0 };
        let q_neg = if p_neg > 0.0 { clamp01(inf_neg / p_neg) } else { 0.0 };
        (clamp01(p_pos), q_pos, q_neg)
    }
}

#[inline]
fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Belief summary of one individual at decision day `t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BeliefRecord {
    /// Infection probability held at decisions `t-3, t-2, t-1`.
    pub q_past: [f64; WINDOW],
    pub q_now: f64,
    /// Probability of being infectious on days `t+1, t+2, t+3`.
    pub q_future: [f64; WINDOW],
}

/// Observations of one individual visible at decision day `t`.
#[derive(Clone, Copy, Debug)]
pub struct History<'a> {
    /// Observed symptom flags for days `0..`.
    pub symptoms: &'a [bool],
    /// Delivered test results indexed by test day.
    pub results: &'a [TestResult],
}

impl<'a> History<'a> {
    pub fn of(ind: &'a IndividualState) -> Self {
        Self {
            symptoms: &ind.symptom_observed_history,
            results: &ind.reported_results,
        }
    }
}

/// Posterior at decision day `t`: symptoms of days before `t` and results
/// whose reporting delay has elapsed by `t`.
pub fn posterior_at(space: &HypothesisSpace, history: History<'_>, t: Day) -> Posterior {
    let delay = space.epi.result_delay_days;
    let mut post = space.prior();
    for (day, &obs) in history.symptoms.iter().enumerate().take(t) {
        post.observe_symptom(space, day, obs);
    }
    for (test_day, r) in history.results.iter().enumerate() {
        if test_day + delay > t {
            break;
        }
        match r {
            TestResult::None => {}
            TestResult::Positive => {
                post.observe_result(space, test_day, true);
            }
            TestResult::Negative => {
                post.observe_result(space, test_day, false);
            }
        }
    }
    post
}

/// Exact belief record at decision day `t`, recomputed from scratch.
pub fn posterior(space: &HypothesisSpace, history: History<'_>, t: Day) -> (Posterior, BeliefRecord) {
    let post = posterior_at(space, history, t);
    let q0 = space.prior().q_infected(space);
    let mut q_past = [q0; WINDOW];
    for (k, slot) in q_past.iter_mut().enumerate() {
        let back = WINDOW - k;
        if t >= back {
            *slot = posterior_at(space, history, t - back).q_infected(space);
        }
    }
    let mut q_future = [0.0; WINDOW];
    for (k, slot) in q_future.iter_mut().enumerate() {
        *slot = post.q_infectious_on(space, t + k + 1);
    }
    let rec = BeliefRecord {
        q_past,
        q_now: post.q_infected(space),
        q_future,
    };
    (post, rec)
}

/// Incrementally maintained beliefs of every individual in one cluster.
#[derive(Clone, Debug)]
pub struct ClusterBeliefs {
    space: Arc<HypothesisSpace>,
    posteriors: Vec<Posterior>,
    /// `q_now` of each individual at every decision day absorbed so far.
    q_history: Vec<Vec<f64>>,
    /// Records at `next_day`, refreshed on every sync.
    cached: Vec<BeliefRecord>,
    /// Next local day whose observations will be absorbed.
    next_day: Day,
    skipped_updates: usize,
}

impl ClusterBeliefs {
    pub fn new(space: Arc<HypothesisSpace>, size: usize) -> Self {
        let prior = space.prior();
        let q0 = prior.q_infected(&space);
        let mut b = Self {
            posteriors: vec![prior; size],
            q_history: vec![vec![q0]; size],
            cached: Vec::new(),
            space,
            next_day: 0,
            skipped_updates: 0,
        };
        b.cached = (0..size).map(|i| b.compute_record(i)).collect();
        b
    }

    pub fn space(&self) -> &Arc<HypothesisSpace> {
        &self.space
    }

    /// Current decision day: observations up to the previous day are absorbed.
    pub fn day(&self) -> Day {
        self.next_day
    }

    /// Impossible observations skipped so far (only with degenerate test parameters).
    pub fn skipped_updates(&self) -> usize {
        self.skipped_updates
    }

    /// Absorb every observation of `cluster` made since the last call.
    pub fn sync(&mut self, cluster: &ClusterState) -> Result<()> {
        if cluster.size != self.posteriors.len() {
            return Err(Error::Input("belief tracker and cluster sizes differ".into()));
        }
        let delay = self.space.epi.result_delay_days;
        let mut advanced = false;
        while self.next_day < cluster.local_day {
            let d = self.next_day;
            for (i, ind) in cluster.individuals.iter().enumerate() {
                let post = &mut self.posteriors[i];
                if !post.observe_symptom(&self.space, d, ind.symptom_observed_history[d]) {
                    self.skipped_updates += 1;
                }
                if d + 1 >= delay {
                    let test_day = d + 1 - delay;
                    let ok = match ind.result_for(test_day) {
                        TestResult::None => true,
                        TestResult::Positive => post.observe_result(&self.space, test_day, true),
                        TestResult::Negative => post.observe_result(&self.space, test_day, false),
                    };
                    if !ok {
                        self.skipped_updates += 1;
                    }
                }
                let q = post.q_infected(&self.space);
                self.q_history[i].push(q);
            }
            self.next_day += 1;
            advanced = true;
        }
        if advanced {
            self.cached = (0..self.posteriors.len()).map(|i| self.compute_record(i)).collect();
        }
        Ok(())
    }

    pub fn posterior(&self, i: usize) -> &Posterior {
        &self.posteriors[i]
    }

    pub fn q_now(&self, i: usize) -> f64 {
        *self.q_history[i].last().expect("history starts with the prior")
    }

    pub fn record(&self, i: usize) -> BeliefRecord {
        self.cached[i]
    }

    fn compute_record(&self, i: usize) -> BeliefRecord {
        let t = self.next_day;
        let hist = &self.q_history[i];
        let q0 = hist[0];
        let mut q_past = [q0; WINDOW];
        for (k, slot) in q_past.iter_mut().enumerate() {
            let back = WINDOW - k;
            if t >= back {
                *slot = hist[t - back];
            }
        }
        let post = &self.posteriors[i];
        let mut q_future = [0.0; WINDOW];
        for (k, slot) in q_future.iter_mut().enumerate() {
            *slot = post.q_infectious_on(&self.space, t + k + 1);
        }
        BeliefRecord {
            q_past,
            q_now: hist[t],
            q_future,
        }
    }

    pub fn records(&self) -> &[BeliefRecord] {
        &self.cached
    }

    pub fn q_now_all(&self) -> Vec<f64> {
        (0..self.posteriors.len()).map(|i| self.q_now(i)).collect()
    }
}

/// The cost-minimizing quarantine rule for unnecessary-quarantine weight `alpha2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuarantinePolicy {
    pub alpha2: f64,
    pub threshold: f64,
}

impl QuarantinePolicy {
    pub fn new(alpha2: f64) -> Result<Self> {
        if !(alpha2 >= 0.0) || !alpha2.is_finite() {
            return Err(Error::param("alpha2", "must be a finite value >= 0"));
        }
        Ok(Self {
            alpha2,
            threshold: alpha2 / (1.0 + alpha2),
        })
    }

    #[inline]
    pub fn quarantine(&self, q: f64) -> bool {
        q > self.threshold
    }
}

/// Quarantine iff `q > alpha2 / (1 + alpha2)`.
pub fn quarantine_decision(q_now: f64, alpha2: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&q_now) {
        return Err(Error::param("q_now", "must lie in [0, 1]"));
    }
    Ok(QuarantinePolicy::new(alpha2)?.quarantine(q_now))
}

/// Expected one-day cost of the best quarantine decision under belief `q`.
#[inline]
pub fn decision_cost(q: f64, alpha2: f64) -> f64 {
    (alpha2 * (1.0 - q)).min(q)
}
