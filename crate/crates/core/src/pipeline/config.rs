//! Training configuration with per-dataset profiles.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::atlas::SweepRule;
use crate::attention::RefinementWeights;
use crate::error::{Error, Result};
use crate::feature_net::{FeatureLossWeights, FeatureNetConfig};
use crate::generator::GeneratorConfig;
use crate::mesh::FeatureMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Lv,
    Liver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub kl: f64,
    pub norm: f64,
    pub cd: f64,
    pub lap: f64,
}

impl LossWeights {
    pub fn feature(&self) -> FeatureLossWeights {
        FeatureLossWeights { kl: self.kl, norm: self.norm }
    }

    pub fn refinement(&self) -> RefinementWeights {
        RefinementWeights { cd: self.cd, lap: self.lap }
    }
}

/// Log-linear β interpolation; `steps = 0` spreads it over the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaConfig {
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtlasConfig {
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Fixed `γ`; the neighbourhood rule is used when absent.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Fixed `α` for cluster weights; `1 / std(d)` when absent.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Scale each cluster's `γ` by its share `Σ_k w_km / K` of the cohort; no effect for one cluster.
    #[serde(default = "yes")]
    pub mass_scaled_gamma: bool,
    /// Initial atlas meshes, one per cluster; chosen from the cohort when empty.
    #[serde(default)]
    pub init: Vec<PathBuf>,
}

impl AtlasConfig {
    pub fn rule(&self) -> SweepRule {
        SweepRule { tolerance: self.tolerance, max_sweeps: self.max_sweeps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub profile: Profile,
    pub mode: FeatureMode,
    /// Number of atlases `M`; one is the single-atlas model.
    pub clusters: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Shapes per gradient step; zero means the whole cohort.
    pub batch_size: usize,
    pub seed: u64,
    /// `λ = temperature_scale / √d_z`
    pub temperature_scale: f64,
    /// `false` drops the refinement loss (the plain attention-matching ablation).
    pub refinement: bool,
    /// `false` sets every reparameterisation draw to zero.
    pub stochastic: bool,
    /// Write a checkpoint every this many epochs; zero disables intermediate checkpoints.
    pub checkpoint_every: usize,
    pub weights: LossWeights,
    pub beta: BetaConfig,
    pub network: NetworkConfig,
    pub generator: GeneratorConfig,
    pub atlas: AtlasConfig,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
}

impl TrainConfig {
    pub fn profile(profile: Profile) -> Self {
        let (lap, beta) = match profile {
            Profile::Lv => (1.0, BetaConfig { start: 2e-3, end: 2e-6, steps: 0 }),
            Profile::Liver => (1.2, BetaConfig { start: 1e-3, end: 2e-3, steps: 0 }),
        };
        Self {
            profile,
            mode: FeatureMode::Hybrid,
            clusters: 1,
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 4,
            seed: 0,
            temperature_scale: 30.0,
            refinement: true,
            stochastic: true,
            checkpoint_every: 0,
            weights: LossWeights { kl: 1e-3, norm: 1e-2, cd: 1.0, lap },
            beta,
            network: NetworkConfig { hidden: vec![16, 32], latent_dim: 16, heads: 4 },
            generator: GeneratorConfig::default(),
            atlas: AtlasConfig { tolerance: 1e-6, max_sweeps: 100, gamma: None, alpha: None, mass_scaled_gamma: true, init: Vec::new() },
            dataset: None,
        }
    }

    pub fn lambda(&self) -> f64 {
        crate::attention::temperature(self.temperature_scale, self.network.latent_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.clusters == 0 {
            return bad("clusters must be at least 1".into());
        }
        let w = &self.weights;
        for (name, v) in [("kl", w.kl), ("norm", w.norm), ("cd", w.cd), ("lap", w.lap)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("weight {name} must be non-negative, got {v}"));
            }
        }
        if !(self.beta.start > 0.0 && self.beta.end > 0.0) {
            return bad("β schedule values must be positive".into());
        }
        if !(self.learning_rate >= 0.0) {
            return bad(format!("learning rate must be non-negative, got {}", self.learning_rate));
        }
        if !(self.temperature_scale >= 0.0) {
            return bad("temperature scale must be non-negative".into());
        }
        if self.network.latent_dim == 0 || self.generator.latent_dim == 0 || self.network.heads == 0 {
            return bad("latent widths and head count must be positive".into());
        }
        if !self.atlas.init.is_empty() && self.atlas.init.len() != self.clusters {
            return bad(format!("{} initial atlases given for {} clusters", self.atlas.init.len(), self.clusters));
        }
        if self.atlas.gamma.is_some_and(|g| g < 0.0) || self.atlas.alpha.is_some_and(|a| a < 0.0) {
            return bad("γ and α must be non-negative".into());
        }
        Ok(())
    }

    /// Parses TOML. A `profile` key selects the base values; any other key overrides them.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let profile = match user.get("profile") {
            None => Profile::Lv,
            Some(v) => Profile::deserialize(v.clone()).map_err(|e| Error::Config(format!("profile: {e}")))?,
        };
        let base = toml::Table::try_from(Self::profile(profile)).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(base, user);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn feature_net(&self) -> FeatureNetConfig {
        FeatureNetConfig {
            mode: self.mode,
            hidden: self.network.hidden.clone(),
            latent_dim: self.network.latent_dim,
            heads: self.network.heads,
        }
    }
}

fn merge(mut base: toml::Table, user: toml::Table) -> toml::Table {
    for (k, v) in user {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => {
                base.insert(k, toml::Value::Table(merge(b, u)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_preload_weights() {
        let lv = TrainConfig::from_toml("").unwrap();
        assert_eq!(lv, TrainConfig::profile(Profile::Lv));
        assert_eq!((lv.weights.cd, lv.weights.lap, lv.beta.start, lv.beta.end), (1.0, 1.0, 2e-3, 2e-6));
        let liver = TrainConfig::from_toml("profile = \"liver\"\nepochs = 7\n[weights]\ncd = 2.0\n").unwrap();
        assert_eq!((liver.weights.cd, liver.weights.lap, liver.beta.start, liver.beta.end), (2.0, 1.2, 1e-3, 2e-3));
        assert_eq!(liver.epochs, 7);
        assert_eq!(liver.weights.kl, 1e-3);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(TrainConfig::from_toml("clusters = 0").is_err());
        assert!(TrainConfig::from_toml("[weights]\nlap = -1.0").is_err());
        assert!(TrainConfig::from_toml("unknown_key = 1").is_err());
        assert!(TrainConfig::from_toml("profile = \"heart\"").is_err());
        assert!(TrainConfig::from_toml("epochs = ").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = TrainConfig::profile(Profile::Liver);
        c.clusters = 2;
        c.atlas.alpha = Some(0.5);
        c.mode = FeatureMode::Spatial;
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(TrainConfig::from_toml("mode = \"sgcn\"").unwrap().mode, FeatureMode::Spatial);
    }
}

fn yes() -> bool {
    true
}
