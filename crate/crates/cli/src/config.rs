use std::path::Path;

use anyhow::Context;
use regmap::forest::ForestConfig;
use regmap::pipeline::{E2eConfig, FeatureOptions};
use regmap::pooling::Schema;
use regmap::sampling::NeighborhoodRule;
use regmap::synth::PairConfig;
use regmap::toyreg::RegConfig;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub size: usize,
    pub perturb_range_mm: f64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            size: 20,
            perturb_range_mm: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    /// Lattice stride (voxels) when targets come from a dense truth field.
    pub stride: usize,
    pub neighborhood: NeighborhoodRule,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            stride: 8,
            neighborhood: NeighborhoodRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
    /// When set, repeated random splits holding out `test_pairs` pairs
    /// replace k-fold.
    pub repeats: Option<usize>,
    pub test_pairs: usize,
}

impl Default for CvSection {
    fn default() -> Self {
        Self {
            folds: 3,
            repeats: None,
            test_pairs: 1,
        }
    }
}

/// Contents of a `--config` TOML file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub schema: Option<Schema>,
    pub pair: PairConfig,
    pub registration: RegConfig,
    pub ensemble: EnsembleSection,
    pub features: FeatureOptions,
    pub sampling: SamplingSection,
    pub forest: ForestConfig,
    pub cv: CvSection,
    pub e2e: E2eConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Missing(format!("config {}: {e}", path.display())))?;
        let cfg: FileConfig = toml::from_str(&text)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        cfg.registration
            .validate()
            .and_then(|_| cfg.forest.validate())
            .map_err(|e| Failure::Config(e.to_string()))
            .with_context(|| format!("in {}", path.display()))?;
        Ok(cfg)
    }
}
