//! Run configuration files.
//!
//! A run is described by one JSON document. Unknown keys are rejected at
//! every level and omitted blocks take the reference defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ansatz::AnsatzSpec;
use crate::error::{Error, Result};
use crate::hamiltonian::{CouplingModel, TransverseFieldIsing};
use crate::sampler::SamplerConfig;
use crate::timing::Budget;
use crate::training::OptimizerConfig;
use crate::vit::VitHyperparameters;

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// Hamiltonian parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "N")]
    pub size: usize,
    pub alpha: f64,
    #[serde(rename = "J")]
    pub coupling: f64,
    #[serde(default = "one")]
    pub b: f64,
    #[serde(rename = "h_x", default = "one")]
    pub field: f64,
    #[serde(default = "yes")]
    pub kac_on: bool,
}

impl ModelConfig {
    pub fn new(size: usize, alpha: f64, coupling: f64) -> Self {
        Self {
            size,
            alpha,
            coupling,
            b: 1.0,
            field: 1.0,
            kac_on: true,
        }
    }

    pub fn build(&self) -> Result<TransverseFieldIsing> {
        let coupling = CouplingModel::new(self.alpha, self.coupling, self.b, self.size, self.kac_on)?;
        TransverseFieldIsing::new(coupling, self.field)
    }
}

/// Ansatz choice. Sizes are taken from the model block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum AnsatzConfig {
    Vit {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token_dim: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        embed_dim: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        heads: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        core_mlp_layers: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        postprocessor_dims: Option<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        symmetrize: Option<bool>,
    },
    Rbm {
        #[serde(default = "default_density")]
        density: usize,
    },
    Mlp {
        /// Hidden widths; defaults to one layer of `N` units.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hidden: Option<Vec<usize>>,
    },
}

fn default_density() -> usize {
    1
}

impl Default for AnsatzConfig {
    fn default() -> Self {
        AnsatzConfig::Vit {
            token_dim: None,
            embed_dim: None,
            heads: None,
            core_mlp_layers: None,
            postprocessor_dims: None,
            symmetrize: None,
        }
    }
}

impl AnsatzConfig {
    pub fn rbm(density: usize) -> Self {
        AnsatzConfig::Rbm { density }
    }

    /// Fully resolved description for a chain of `size` spins.
    pub fn spec(&self, size: usize) -> Result<AnsatzSpec> {
        Ok(match self {
            AnsatzConfig::Vit {
                token_dim,
                embed_dim,
                heads,
                core_mlp_layers,
                postprocessor_dims,
                symmetrize,
            } => {
                let mut h = VitHyperparameters::table_one(size)?;
                h.token_dim = token_dim.unwrap_or(h.token_dim);
                h.embed_dim = embed_dim.unwrap_or(h.embed_dim);
                h.heads = heads.unwrap_or(h.heads);
                h.core_mlp_layers = core_mlp_layers.unwrap_or(h.core_mlp_layers);
                if let Some(d) = postprocessor_dims {
                    h.postprocessor_dims = d.clone();
                }
                h.symmetrize = symmetrize.unwrap_or(h.symmetrize);
                h.validate()?;
                AnsatzSpec::Vit(h)
            }
            AnsatzConfig::Rbm { density } => AnsatzSpec::Rbm {
                size,
                density: *density,
            },
            AnsatzConfig::Mlp { hidden } => AnsatzSpec::Mlp {
                size,
                hidden: hidden.clone().unwrap_or_else(|| vec![size]),
            },
        })
    }
}

/// Complete description of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfiguration {
    pub model: ModelConfig,
    #[serde(default)]
    pub ansatz: AnsatzConfig,
    /// The `seed` field of this block is replaced by the run seed.
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<Budget>,
}

impl RunConfiguration {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            ansatz: AnsatzConfig::default(),
            sampler: SamplerConfig::default(),
            optimizer: OptimizerConfig::default(),
            output_dir: None,
            seed: 0,
            budget: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model.build()?;
        self.ansatz.spec(model.size())?.build()?;
        self.sampler_config().validate()?;
        self.optimizer.validate()?;
        if let Some(b) = self.budget {
            if !(b.seconds > 0.0) {
                return Err(Error::Config(format!("budget must be positive, got {} s", b.seconds)));
            }
        }
        Ok(())
    }

    pub fn hamiltonian(&self) -> Result<TransverseFieldIsing> {
        self.model.build()
    }

    pub fn ansatz_spec(&self) -> Result<AnsatzSpec> {
        self.ansatz.spec(self.model.size)
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            seed: self.seed,
            ..self.sampler.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_reference_defaults() {
        let c = RunConfiguration::from_json(r#"{"model": {"N": 50, "alpha": 2.5, "J": -2.09}}"#).unwrap();
        assert_eq!(c.optimizer.max_iter, 250);
        assert_eq!(c.optimizer.learning_rate.peak, 2.0);
        assert_eq!(c.sampler.samples_per_iteration, 4096);
        match c.ansatz_spec().unwrap() {
            AnsatzSpec::Vit(h) => {
                assert_eq!((h.token_dim, h.embed_dim, h.heads), (5, 14, 2));
                assert_eq!(h.postprocessor_dims, vec![5]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(c.model.field, 1.0);
        assert!(c.model.kac_on);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            r#"{"model": {"N": 4, "alpha": 2, "J": 1}, "extra": 1}"#,
            r#"{"model": {"N": 4, "alpha": 2, "J": 1, "h": 1}}"#,
            r#"{"model": {"N": 4, "alpha": 2, "J": 1}, "ansatz": {"type": "rbm", "alpha": 2}}"#,
            r#"{"model": {"N": 4, "alpha": 2, "J": 1}, "sampler": {"chains": 2}}"#,
            r#"{"model": {"N": 4, "alpha": 2, "J": 1}, "optimizer": {"iterations": 2}}"#,
        ] {
            let err = RunConfiguration::from_json(text).unwrap_err();
            assert!(err.is_config(), "{text}: {err}");
        }
    }

    #[test]
    fn semantic_errors_are_config_errors() {
        let bad_tokens = r#"{"model": {"N": 10, "alpha": 2, "J": 1}, "ansatz": {"type": "vit", "token_dim": 3}}"#;
        assert!(RunConfiguration::from_json(bad_tokens).unwrap_err().is_config());
        let bad_field = r#"{"model": {"N": 10, "alpha": 2, "J": 1, "h_x": 0}}"#;
        assert!(RunConfiguration::from_json(bad_field).unwrap_err().is_config());
        let bad_budget = r#"{"model": {"N": 10, "alpha": 2, "J": 1}, "budget": {"seconds": 0}}"#;
        assert!(RunConfiguration::from_json(bad_budget).unwrap_err().is_config());
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfiguration::new(ModelConfig::new(8, 3.0, 0.5));
        c.ansatz = AnsatzConfig::rbm(2);
        c.seed = 17;
        let back = RunConfiguration::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.sampler_config().seed, 17);
    }
}
