//! Experiment configuration: a sectioned key-value file (TOML). Unknown keys
//! are hard errors, every run embeds the content hash of the resolved
//! configuration, and the file representation round-trips losslessly.

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sos_lab::sampler::{SamplerConfig, SamplerKind};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub chain: ChainSection,
    #[serde(default)]
    pub percolation: PercolationSection,
    #[serde(default)]
    pub coarse_grain: CoarseGrainSection,
    #[serde(default)]
    pub clt: CltSection,
    #[serde(default)]
    pub solver: SolverSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ModelSection {
    /// Spatial dimension (1..=3).
    pub dim: usize,
    /// Box half-side `L`.
    pub half_side: i64,
    /// The regularization parameter of the interaction potential.
    pub delta: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            dim: 2,
            half_side: 16,
            delta: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ChainSection {
    pub seed: u64,
    pub burn_in: usize,
    pub thinning: usize,
    pub n_samples: usize,
    pub kind: SamplerKind,
    /// Independent chains run in parallel with derived seeds.
    pub chains: usize,
}

impl Default for ChainSection {
    fn default() -> Self {
        ChainSection {
            seed: 1,
            burn_in: 1000,
            thinning: 10,
            n_samples: 200,
            kind: SamplerKind::JointAlternating,
            chains: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct PercolationSection {
    /// Threshold grid for the exceedance tails.
    pub tail_thresholds: Vec<f64>,
    /// Longest straight edge path in the tail family.
    pub max_path_len: usize,
    /// Threshold for cluster decomposition / the hat operation.
    pub cluster_threshold: f64,
    /// Threshold used for good-cube classification (subcritical regime).
    pub good_cube_threshold: f64,
    /// Scales for the good-cube fraction sweep.
    pub good_cube_levels: Vec<u32>,
    /// Exponents k of the inverse moments <a^-k>.
    pub inverse_moment_orders: Vec<f64>,
}

impl Default for PercolationSection {
    fn default() -> Self {
        PercolationSection {
            tail_thresholds: vec![3.0, 4.0, 5.0, 6.0, 7.0],
            max_path_len: 6,
            cluster_threshold: 5.0,
            good_cube_threshold: 12.0,
            good_cube_levels: vec![1, 2, 3, 4],
            inverse_moment_orders: vec![1.0, 2.0, 4.0, 8.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct CoarseGrainSection {
    pub scales: Vec<u32>,
    /// Hat-operation threshold; swept values are reported alongside.
    pub threshold: f64,
    /// Corrector-flatness slope direction.
    pub corrector_slope: Vec<f64>,
}

impl Default for CoarseGrainSection {
    fn default() -> Self {
        CoarseGrainSection {
            scales: vec![1, 2, 3],
            threshold: 5.0,
            corrector_slope: vec![1.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct CltSection {
    /// Macroscopic scale `R`; the box is `half-side = ratio * R`.
    pub scale: f64,
    /// Box-to-scale ratio `L / R`.
    pub box_ratio: i64,
    /// Scale used to estimate the effective coefficient for the prediction.
    pub coarse_level: u32,
    /// Highest Wick ratio order `k` (moments up to 2k).
    pub wick_order: usize,
    /// `R` grid for the energy-convergence profile.
    pub energy_scales: Vec<f64>,
}

impl Default for CltSection {
    fn default() -> Self {
        CltSection {
            scale: 8.0,
            box_ratio: 8,
            coarse_level: 3,
            wick_order: 2,
            energy_scales: vec![4.0, 8.0, 16.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SolverSection {
    pub tolerance: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection { tolerance: 1e-10 }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelSection::default(),
            chain: ChainSection::default(),
            percolation: PercolationSection::default(),
            coarse_grain: CoarseGrainSection::default(),
            clt: CltSection::default(),
            solver: SolverSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.model.dim == 0 || self.model.dim > 3 {
            bail!("model.dim must be 1, 2, or 3 (got {})", self.model.dim);
        }
        if self.model.delta < 0.0 {
            bail!("model.delta must be nonnegative (got {})", self.model.delta);
        }
        if self.model.half_side < 1 {
            bail!(
                "model.half-side must be at least 1 (got {})",
                self.model.half_side
            );
        }
        if self.chain.thinning == 0 {
            bail!("chain.thinning must be at least 1");
        }
        if self.chain.chains == 0 {
            bail!("chain.chains must be at least 1");
        }
        if self.solver.tolerance <= 0.0 {
            bail!("solver.tolerance must be positive");
        }
        Ok(())
    }

    /// Canonical serialized form (stable field order via the struct).
    pub fn canonical_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Content hash of the resolved configuration.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_toml().as_bytes());
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            dim: self.model.dim,
            delta: self.model.delta,
            half_side: self.model.half_side,
            seed: self.chain.seed,
            burn_in: self.chain.burn_in,
            thinning: self.chain.thinning,
            n_samples: self.chain.n_samples,
            kind: self.chain.kind,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_losslessly() {
        let config = ExperimentConfig::default();
        let text = config.canonical_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(config, back);
        assert_eq!(config.content_hash(), back.content_hash());
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = "[model]\ndim = 2\nhalf-side = 8\ndelta = 0.0\ntypo-key = 1\n";
        let parsed: Result<ExperimentConfig, _> = toml::from_str(text);
        assert!(parsed.is_err());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.chain.seed = 2;
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
