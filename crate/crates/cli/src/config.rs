//! TOML run configuration, one section per pipeline stage.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use stagewise_core::bc::{BcConfig, PolicyConfig};
use stagewise_core::estimator::EstimatorConfig;
use stagewise_core::rabc::WeightConfig;
use stagewise_core::sampler::{MinLengthPolicy, SamplerConfig};
use stagewise_core::sim::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub experts: usize,
    pub suboptimal: usize,
    /// Rollouts per class; zero skips the rollout set.
    pub rollouts_per_class: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            experts: 40,
            suboptimal: 20,
            rollouts_per_class: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Windows drawn per training trajectory.
    pub per_trajectory: usize,
    pub holdout: f64,
    pub min_length_policy: MinLengthPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            per_trajectory: 16,
            holdout: 0.1,
            min_length_policy: MinLengthPolicy::Error,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Overrides every section's seed when set.
    pub seed: Option<u64>,
    pub sim: SimConfig,
    pub gen: GenConfig,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub estimator: EstimatorConfig,
    pub weights: WeightConfig,
    pub policy: PolicyConfig,
    pub bc: BcConfig,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| stagewise_core::Error::Config(format!("{}: {e}", path.display())).into())
    }

    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.sim.seed = s;
            self.sampler.seed = s;
            self.estimator.seed = s;
            self.policy.seed = s;
            self.bc.seed = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_parse_and_seed_propagates() {
        let mut c: Config = toml::from_str(
            r#"
            seed = 7
            [sampler]
            gap = 10
            [weights]
            kappa = 0.02
            [train]
            min_length_policy = "shrink-gap"
            "#,
        )
        .unwrap();
        c.apply_seed(None);
        assert_eq!(c.sampler.gap, 10);
        assert_eq!(c.weights.kappa, 0.02);
        assert_eq!(c.weights.delta, 25);
        assert_eq!(c.train.min_length_policy, MinLengthPolicy::ShrinkGap);
        assert_eq!((c.sim.seed, c.estimator.seed, c.bc.seed), (7, 7, 7));
        c.apply_seed(Some(3));
        assert_eq!(c.sampler.seed, 3);
    }

    #[test]
    fn unknown_sections_are_rejected() {
        assert!(toml::from_str::<Config>("[samplr]\ngap = 3").is_err());
    }
}
