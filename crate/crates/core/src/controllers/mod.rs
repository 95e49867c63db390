//! Global multiplier controllers.

mod bin_search;
pub mod ppo;

pub use bin_search::{bin_search_m, BinSearchResult, DEFAULT_TOL_ITERS};
pub use ppo::{clipped_surrogate, ppo_train, PpoConfig, PpoController, PpoNet, PpoReport, PolicyOutput};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Emits the same multiplier at every step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedM {
    pub m: f64,
}

impl FixedM {
    pub fn new(m: f64, m_min: f64, m_max: f64) -> Result<Self> {
        if !(m >= m_min && m <= m_max) {
            return Err(Error::param("m", format!("{m} outside [{m_min}, {m_max}]")));
        }
        Ok(Self { m })
    }

    pub fn decide(&self) -> f64 {
        self.m
    }
}
