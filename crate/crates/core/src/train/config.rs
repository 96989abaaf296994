use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest N trained full-batch when no batch size is given.
pub const FULL_BATCH_LIMIT: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub learning_rate: f64,
    /// `None` trains full-batch up to [`FULL_BATCH_LIMIT`] points and uses
    /// batches of that size beyond it.
    pub batch_size: Option<usize>,
    pub mc_samples_discrete: usize,
    pub seed: u64,
    pub convergence_window: usize,
    pub convergence_tol: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Iterations between full-batch evaluations of the snapshot objective.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            learning_rate: 0.01,
            batch_size: None,
            mc_samples_discrete: 20,
            seed: 0,
            convergence_window: 100,
            convergence_tol: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            eval_every: 50,
        }
    }
}

impl TrainConfig {
    /// Settings for optimizing test latents against a frozen model.
    pub fn decode_default() -> Self {
        Self {
            max_iters: 300,
            learning_rate: 0.05,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", "must be positive and finite"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::param(name, format!("must lie in (0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::param("adam_eps", "must be positive"));
        }
        if self.mc_samples_discrete == 0 {
            return Err(Error::param("mc_samples_discrete", "must be at least 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::param("convergence_tol", "must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::param("eval_every", "must be at least 1"));
        }
        Ok(())
    }

    /// Effective batch size for `n` training points.
    pub fn effective_batch(&self, n: usize) -> Result<usize> {
        match self.batch_size {
            Some(b) if b > n => Err(Error::param(
                "batch_size",
                format!("{b} exceeds the {n} training points"),
            )),
            Some(b) => Ok(b),
            None => Ok(n.min(FULL_BATCH_LIMIT)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        TrainConfig::decode_default().validate().unwrap();
        assert_eq!(TrainConfig::default().effective_batch(100).unwrap(), 100);
        assert_eq!(TrainConfig::default().effective_batch(1000).unwrap(), 256);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            TrainConfig {
                adam_beta1: 1.0,
                ..Default::default()
            },
            TrainConfig {
                adam_beta2: 0.0,
                ..Default::default()
            },
            TrainConfig {
                mc_samples_discrete: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: Some(0),
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        let c = TrainConfig {
            batch_size: Some(50),
            ..Default::default()
        };
        assert!(c.effective_batch(10).is_err());
    }
}
