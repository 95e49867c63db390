//! Epidemiological and system parameters, plus the schema-versioned config document.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Day = usize;
pub type ClusterId = usize;

/// Epidemiological parameters of the cluster simulator.
///
/// Defaults reproduce the published SARS-CoV-2 parameterization with contact
/// clusters of 2 to 40 people; [`EpiParams::desk`] caps clusters at 10 people.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpiParams {
    /// Mean of the incubation period in days (of the log-normal itself).
    pub incubation_mean_days: f64,
    /// Standard deviation of the incubation period in days.
    pub incubation_std_days: f64,
    pub infectious_pre_onset_days: usize,
    pub infectious_post_onset_days: usize,
    /// Per contact-day transmission probability.
    pub base_transmission_prob: f64,
    pub p_symptomatic_given_infected: f64,
    pub p_false_symptom_per_day: f64,
    pub p_high_transmissive_index: f64,
    pub infectiousness_multiplier: f64,
    pub test_sensitivity: f64,
    pub test_specificity: f64,
    pub tracing_delay_days: usize,
    pub result_delay_days: usize,
    pub cluster_size_min: usize,
    pub cluster_size_max: usize,
    pub episode_days: usize,
    pub decision_start_day: usize,
    /// Daily fully-mixed transmission inside a cluster after the initial exposure.
    /// When false only the index case transmits (exposure-only mode).
    pub onward_transmission: bool,
}

impl Default for EpiParams {
    fn default() -> Self {
        Self {
            incubation_mean_days: 1.57,
            incubation_std_days: 0.65,
            infectious_pre_onset_days: 2,
            infectious_post_onset_days: 5,
            base_transmission_prob: 0.03,
            p_symptomatic_given_infected: 0.8,
            p_false_symptom_per_day: 0.01,
            p_high_transmissive_index: 0.109,
            infectiousness_multiplier: 24.4,
            test_sensitivity: 0.71,
            test_specificity: 0.99,
            tracing_delay_days: 3,
            result_delay_days: 1,
            cluster_size_min: 2,
            cluster_size_max: 40,
            episode_days: 30,
            decision_start_day: 3,
            onward_transmission: true,
        }
    }
}

fn check_prob(field: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param(field, format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

impl EpiParams {
    /// Desk-scale defaults: clusters of at most 10 contacts.
    pub fn desk() -> Self {
        Self {
            cluster_size_max: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, p) in [
            ("base_transmission_prob", self.base_transmission_prob),
            ("p_symptomatic_given_infected", self.p_symptomatic_given_infected),
            ("p_false_symptom_per_day", self.p_false_symptom_per_day),
            ("p_high_transmissive_index", self.p_high_transmissive_index),
            ("test_sensitivity", self.test_sensitivity),
            ("test_specificity", self.test_specificity),
        ] {
            check_prob(field, p)?;
        }
        if !(self.incubation_std_days > 0.0) {
            return Err(Error::param("incubation_std_days", "must be positive"));
        }
        if !(self.incubation_mean_days > 0.0) {
            return Err(Error::param("incubation_mean_days", "must be positive"));
        }
        if !(self.infectiousness_multiplier >= 0.0) {
            return Err(Error::param("infectiousness_multiplier", "must be non-negative"));
        }
        if self.cluster_size_min < 2 {
            return Err(Error::param("cluster_size_min", "must be at least 2"));
        }
        if self.cluster_size_max < self.cluster_size_min {
            return Err(Error::param("cluster_size_max", "must be >= cluster_size_min"));
        }
        if self.decision_start_day >= self.episode_days {
            return Err(Error::param("decision_start_day", "must be before episode_days"));
        }
        if self.decision_start_day < self.tracing_delay_days {
            return Err(Error::param(
                "decision_start_day",
                "decisions cannot start before contacts are traced",
            ));
        }
        if self.result_delay_days == 0 {
            return Err(Error::param("result_delay_days", "must be at least one day"));
        }
        Ok(())
    }

    /// `(mu, sigma)` of the underlying normal, solved so that the log-normal
    /// itself has the configured mean and standard deviation.
    pub fn lognormal_params(&self) -> (f64, f64) {
        let m = self.incubation_mean_days;
        let s = self.incubation_std_days;
        let sigma2 = (1.0 + (s * s) / (m * m)).ln();
        (m.ln() - 0.5 * sigma2, sigma2.sqrt())
    }

    fn incubation_cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let (mu, sigma) = self.lognormal_params();
        0.5 * libm::erfc(-(x.ln() - mu) / (sigma * std::f64::consts::SQRT_2))
    }

    /// Largest onset offset tracked explicitly. Onsets at or beyond this value
    /// start being infectious only after the episode horizon.
    pub fn onset_cap(&self) -> usize {
        self.episode_days + self.infectious_pre_onset_days
    }

    /// Probability that the onset happens `k` days after infection, for
    /// `k = 0..=onset_cap()`. Incubation draws are rounded to the nearest day;
    /// the tail beyond the cap is lumped into the last entry.
    pub fn onset_pmf(&self) -> Vec<f64> {
        let cap = self.onset_cap();
        let mut pmf = Vec::with_capacity(cap + 1);
        let mut prev = 0.0;
        for k in 0..cap {
            let c = self.incubation_cdf(k as f64 + 0.5);
            pmf.push(c - prev);
            prev = c;
        }
        pmf.push(1.0 - prev);
        pmf
    }

    /// Per-contact infection probability at exposure, given the index type.
    pub fn exposure_prob(&self, high_transmissive: bool) -> f64 {
        let mult = if high_transmissive {
            self.infectiousness_multiplier
        } else {
            1.0
        };
        (self.base_transmission_prob * mult).min(1.0)
    }

    /// Marginal exposure probability, mixing over the index type.
    pub fn prior_infection_prob(&self) -> f64 {
        let ph = self.p_high_transmissive_index;
        (1.0 - ph) * self.exposure_prob(false) + ph * self.exposure_prob(true)
    }

    /// Infectious on `day` for an individual infected on `infection_day` with onset `onset`.
    #[inline]
    pub fn infectious_window(&self, infection_day: Day, onset: Day, day: Day) -> bool {
        day >= infection_day
            && day + self.infectious_pre_onset_days >= onset
            && day < onset + self.infectious_post_onset_days
    }

    /// True symptoms are shown on `[onset, onset + post)` by symptomatic infections.
    #[inline]
    pub fn symptom_window(&self, onset: Day, day: Day) -> bool {
        day >= onset && day < onset + self.infectious_post_onset_days
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ActivationMode {
    Synchronous,
    #[default]
    Asynchronous,
}

impl std::str::FromStr for ActivationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sync" | "synchronous" => Ok(Self::Synchronous),
            "async" | "asynchronous" => Ok(Self::Asynchronous),
            other => Err(Error::param("mode", format!("unknown activation mode `{other}`"))),
        }
    }
}

/// Multi-cluster system configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub mode: ActivationMode,
    pub n_clusters: usize,
    /// Capacity of the global observation (number of cluster slots).
    pub n_max: usize,
    /// Daily testing budget.
    pub budget: usize,
    /// Days over which asynchronous activations are spread uniformly.
    pub stagger_window: usize,
    /// Fix every cluster to this size instead of drawing it.
    pub fixed_cluster_size: Option<usize>,
    pub epi: EpiParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mode: ActivationMode::Asynchronous,
            n_clusters: 5,
            n_max: 40,
            budget: 5,
            stagger_window: 20,
            fixed_cluster_size: None,
            epi: EpiParams::desk(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.epi.validate()?;
        if self.n_clusters > self.n_max {
            return Err(Error::param(
                "n_clusters",
                format!("{} clusters exceed n_max = {}", self.n_clusters, self.n_max),
            ));
        }
        if let Some(size) = self.fixed_cluster_size {
            if size < 2 {
                return Err(Error::param("fixed_cluster_size", "must be at least 2"));
            }
        }
        Ok(())
    }

    /// Largest cluster size this configuration can produce.
    pub fn max_cluster_size(&self) -> usize {
        self.fixed_cluster_size.unwrap_or(self.epi.cluster_size_max)
    }
}

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Cost and controller settings shared by every policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub alpha2: f64,
    pub alpha3_true: f64,
    pub gamma: f64,
    pub m_min: f64,
    pub m_max: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            alpha2: 0.1,
            alpha3_true: 0.05,
            gamma: 0.99,
            m_min: 0.25,
            m_max: 4.0,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha2 >= 0.0) || !self.alpha2.is_finite() {
            return Err(Error::param("alpha2", "must be a finite value >= 0"));
        }
        if !(self.alpha3_true >= 0.0) || !self.alpha3_true.is_finite() {
            return Err(Error::param("alpha3_true", "must be a finite value >= 0"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::param("gamma", "must lie in (0, 1]"));
        }
        if !(self.m_min >= 0.0 && self.m_min < self.m_max) {
            return Err(Error::param("m_min", "need 0 <= m_min < m_max"));
        }
        Ok(())
    }
}

/// The on-disk config document (TOML).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub costs: CostConfig,
}

impl Default for ConfigDocument {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seeds: vec![0, 1, 2, 3, 4],
            sim: SimConfig::default(),
            costs: CostConfig::default(),
        }
    }
}

impl ConfigDocument {
    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: ConfigDocument =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if doc.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        doc.sim.validate()?;
        doc.costs.validate()?;
        Ok(doc)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        EpiParams::default().validate().unwrap();
        SimConfig::default().validate().unwrap();
        CostConfig::default().validate().unwrap();
    }

    #[test]
    fn high_transmissive_exposure_is_capped_product() {
        let epi = EpiParams::default();
        assert!((epi.exposure_prob(true) - 0.03 * 24.4).abs() < 1e-15);
        let capped = EpiParams {
            infectiousness_multiplier: 100.0,
            ..epi
        };
        assert_eq!(capped.exposure_prob(true), 1.0);
    }

    #[test]
    fn lognormal_moments_match_configuration() {
        let epi = EpiParams::default();
        let (mu, sigma) = epi.lognormal_params();
        let mean = (mu + sigma * sigma / 2.0).exp();
        let var = ((sigma * sigma).exp() - 1.0) * (2.0 * mu + sigma * sigma).exp();
        assert!((mean - 1.57).abs() < 1e-12);
        assert!((var.sqrt() - 0.65).abs() < 1e-12);
    }

    #[test]
    fn onset_pmf_sums_to_one() {
        let pmf = EpiParams::default().onset_pmf();
        assert_eq!(pmf.len(), 33);
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(pmf.iter().all(|&p| p >= 0.0));
        // Most onsets fall on day 1 or 2.
        assert!(pmf[1] + pmf[2] > 0.8);
    }

    #[test]
    fn invalid_fields_are_rejected() {
        let bad = EpiParams {
            test_sensitivity: 1.2,
            ..EpiParams::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Param { field, .. }) if field == "test_sensitivity"));
        let bad = EpiParams {
            decision_start_day: 30,
            ..EpiParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = EpiParams {
            cluster_size_min: 1,
            ..EpiParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_document_round_trips_through_toml() {
        let doc = ConfigDocument::default();
        let text = doc.to_toml().unwrap();
        assert_eq!(ConfigDocument::from_toml(&text).unwrap(), doc);
    }

    #[test]
    fn config_rejects_wrong_schema_version() {
        let text = "schema_version = 99\n";
        assert!(matches!(ConfigDocument::from_toml(text), Err(Error::Config(_))));
    }
}
