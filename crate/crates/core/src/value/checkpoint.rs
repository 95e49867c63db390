//! Self-describing JSON checkpoints shared by estimators and controllers.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;

use super::QEstimator;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub const CHECKPOINT_FORMAT: &str = "outbreak-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// `analytic`, `learned` or `ppo`.
    pub backend: String,
    pub meta: Value,
    /// Training configuration, when the payload was trained.
    pub config: Value,
    pub params: Value,
    pub rng_state: Option<StreamRng>,
}

impl Checkpoint {
    pub fn new<P: Serialize, C: Serialize>(backend: &str, meta: Value, config: Option<&C>, params: &P, rng_state: Option<StreamRng>) -> Result<Self> {
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            backend: backend.into(),
            meta,
            config: match config {
                Some(c) => serde_json::to_value(c)?,
                None => Value::Null,
            },
            params: serde_json::to_value(params)?,
            rng_state,
        })
    }

    pub fn for_estimator<C: Serialize>(est: &QEstimator, config: Option<&C>) -> Result<Self> {
        let meta = match est {
            QEstimator::Analytic(a) => serde_json::json!({ "alpha2": a.alpha2, "lookahead": a.lookahead }),
            QEstimator::Learned(l) => serde_json::to_value(&l.meta)?,
        };
        Self::new(est.backend_name(), meta, config, est, None)
    }

    pub fn payload<T: DeserializeOwned>(&self, backend: &str) -> Result<T> {
        if self.backend != backend {
            return Err(Error::Checkpoint(format!(
                "expected a `{backend}` checkpoint, found `{}`",
                self.backend
            )));
        }
        serde_json::from_value(self.params.clone()).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn to_estimator(&self) -> Result<QEstimator> {
        match self.backend.as_str() {
            "analytic" | "learned" => {
                serde_json::from_value(self.params.clone()).map_err(|e| Error::Checkpoint(e.to_string()))
            }
            other => Err(Error::Checkpoint(format!("`{other}` checkpoints do not hold an estimator"))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::{EstimatorMeta, LearnedQ, TrainConfig};

    #[test]
    fn learned_round_trip_is_bit_exact() {
        let meta = EstimatorMeta {
            alpha2: 0.1,
            alpha3_range: (0.0, 0.1),
            alpha2_range: None,
            obs_dim: 16,
            lambda_gp: 1.0,
            g_target: -1.0,
            trained_steps: 0,
            version: 1,
        };
        let est = QEstimator::Learned(LearnedQ::new(meta, &[64, 64], 9));
        let ck = Checkpoint::for_estimator(&est, Some(&TrainConfig::default())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap().to_estimator().unwrap();
        let (QEstimator::Learned(a), QEstimator::Learned(b)) = (&est, &back) else {
            panic!("backend changed");
        };
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(a.net.params_flat()), bits(b.net.params_flat()));
    }

    #[test]
    fn wrong_version_rejected() {
        let est = QEstimator::analytic(0.1);
        let mut ck = Checkpoint::for_estimator::<()>(&est, None).unwrap();
        ck.version = 99;
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
    }
}
