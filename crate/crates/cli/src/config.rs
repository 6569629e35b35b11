// SPDX-License-Identifier: Apache-2.0

//! Run configuration: built-in defaults, then an optional JSON file, then
//! command-line flags.

use std::path::Path;

use dynahull::filter::DynaHullParams;
use dynahull::metrics::DEFAULT_EMD_SAMPLES;
use dynahull::scenegen::ScenarioConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub emd_samples: usize,
    pub emd_seed: u64,
    pub strip_ground: bool,
    pub strip_ceiling: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            emd_samples: DEFAULT_EMD_SAMPLES,
            emd_seed: 0,
            strip_ground: false,
            strip_ceiling: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the seed of every randomized stage.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker cap. Never echoed into reports: output must not depend on it.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    pub filter: DynaHullParams,
    pub eval: EvalConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))
    }

    /// Pushes a global seed down into every seeded stage.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.filter.seed = seed;
        self.filter.ground.seed = seed;
        self.eval.emd_seed = seed;
        if let Some(s) = self.scenario.as_mut() {
            s.seed = seed;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"filter": {"k_neighbors": 30}}"#).unwrap();
        assert_eq!(c.filter.k_neighbors, 30);
        assert_eq!(c.filter.n_clusters, 5);
        assert_eq!(c.eval.emd_samples, 512);
    }

    #[test]
    fn unknown_top_level_key_is_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"filtr": {}}"#).is_err());
    }

    #[test]
    fn threads_are_not_echoed() {
        let c = RunConfig {
            threads: Some(4),
            ..RunConfig::default()
        };
        let v = serde_json::to_value(&c).unwrap();
        assert!(v.get("threads").is_none());
    }

    #[test]
    fn seed_reaches_every_stage() {
        let mut c = RunConfig::default();
        c.apply_seed(9);
        assert_eq!(
            (c.filter.seed, c.filter.ground.seed, c.eval.emd_seed),
            (9, 9, 9)
        );
    }
}
