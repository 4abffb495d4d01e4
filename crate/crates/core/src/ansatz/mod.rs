//! Wave-function ansatz contract and the feed-forward baselines.
//!
//! Every ansatz maps a spin configuration to a real log-amplitude and can
//! produce the log-derivatives `O_k(s) = ∂ log ψ / ∂θ_k` by analytic reverse
//! accumulation. Parameters live in one flat vector described by a
//! [`ParameterLayout`].

pub mod cache;
pub mod checkpoint;
pub mod dense;
pub mod ffnn;
pub mod gradcheck;
pub mod rbm;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vit::{Vit, VitHyperparameters};

pub use dense::{Activation, Mlp};
pub use ffnn::Ffnn;
pub use gradcheck::{check_gradients, DEFAULT_STEP};
pub use rbm::Rbm;

/// How a parameter block is drawn at initialisation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zeros,
    Ones,
    /// Zero-mean normal with standard deviation `1 / sqrt(fan_in)`.
    Normal { fan_in: usize },
}

/// One named block of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSlice {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named, disjoint slices that tile the parameter vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterLayout {
    slices: Vec<ParamSlice>,
}

impl ParameterLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a block and return its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> usize {
        let offset = self.parameter_count();
        self.slices.push(ParamSlice {
            name: name.into(),
            offset,
            shape: shape.to_vec(),
            init,
        });
        offset
    }

    pub fn slices(&self) -> &[ParamSlice] {
        &self.slices
    }

    pub fn get(&self, name: &str) -> Option<&ParamSlice> {
        self.slices.iter().find(|s| s.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.slices.last().map_or(0, |s| s.offset + s.len())
    }

    /// Check that the slices are contiguous, disjoint and cover `0..total`.
    pub fn validate(&self) -> Result<()> {
        let mut cursor = 0;
        for slice in &self.slices {
            if slice.offset != cursor {
                return Err(Error::Config(format!(
                    "parameter slice {} starts at {} but previous block ends at {}",
                    slice.name, slice.offset, cursor
                )));
            }
            cursor += slice.len();
        }
        Ok(())
    }

    /// Parameter count grouped by the prefix before the first `.`.
    pub fn breakdown(&self) -> Vec<(String, usize)> {
        let mut groups: Vec<(String, usize)> = Vec::new();
        for slice in &self.slices {
            let group = slice.name.split('.').next().unwrap_or(&slice.name).to_string();
            match groups.iter_mut().find(|(g, _)| *g == group) {
                Some((_, count)) => *count += slice.len(),
                None => groups.push((group, slice.len())),
            }
        }
        groups
    }

    /// Draw parameters according to each slice's [`Init`] rule.
    pub fn initialize(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; self.parameter_count()];
        for slice in &self.slices {
            let block = &mut values[slice.range()];
            match slice.init {
                Init::Zeros => {}
                Init::Ones => block.fill(1.0),
                Init::Normal { fan_in } => {
                    let normal = Normal::new(0.0, 1.0 / (fan_in.max(1) as f64).sqrt()).unwrap();
                    for v in block.iter_mut() {
                        *v = normal.sample(&mut rng);
                    }
                }
            }
        }
        values
    }
}

/// Flat parameter vector together with its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct AnsatzParameters {
    pub values: Vec<f64>,
    pub layout: ParameterLayout,
}

impl AnsatzParameters {
    pub fn new(values: Vec<f64>, layout: ParameterLayout) -> Result<Self> {
        layout.validate()?;
        if values.len() != layout.parameter_count() {
            return Err(Error::Dimension {
                context: "parameter vector",
                expected: layout.parameter_count(),
                actual: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn parameter_count(&self) -> usize {
        self.values.len()
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|s| &self.values[s.range()])
    }
}

/// A log-amplitude with optional parameter log-derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct LogAmplitudeResult {
    pub log_psi: f64,
    pub derivatives: Option<Vec<f64>>,
}

/// Real, positive wave-function ansatz.
pub trait Ansatz: Send + Sync {
    fn name(&self) -> &'static str;

    /// Number of spins the ansatz accepts.
    fn input_size(&self) -> usize;

    fn layout(&self) -> &ParameterLayout;

    fn parameter_count(&self) -> usize {
        self.layout().parameter_count()
    }

    fn log_psi(&self, params: &[f64], spins: &[i8]) -> Result<f64>;

    /// Writes `∂ log ψ / ∂θ` into `gradient` (overwriting it) and returns `log ψ`.
    fn log_psi_with_gradient(&self, params: &[f64], spins: &[i8], gradient: &mut [f64]) -> Result<f64>;

    fn initial_parameters(&self, seed: u64) -> Vec<f64> {
        self.layout().initialize(seed)
    }

    fn evaluate(&self, params: &[f64], spins: &[i8], with_derivatives: bool) -> Result<LogAmplitudeResult> {
        if with_derivatives {
            let mut gradient = vec![0.0; self.parameter_count()];
            let log_psi = self.log_psi_with_gradient(params, spins, &mut gradient)?;
            Ok(LogAmplitudeResult {
                log_psi,
                derivatives: Some(gradient),
            })
        } else {
            Ok(LogAmplitudeResult {
                log_psi: self.log_psi(params, spins)?,
                derivatives: None,
            })
        }
    }
}

pub(crate) fn check_lengths(ansatz: &dyn Ansatz, params: &[f64], spins: &[i8]) -> Result<()> {
    if params.len() != ansatz.parameter_count() {
        return Err(Error::Dimension {
            context: "parameter vector",
            expected: ansatz.parameter_count(),
            actual: params.len(),
        });
    }
    if spins.len() != ansatz.input_size() {
        return Err(Error::Dimension {
            context: "spin configuration",
            expected: ansatz.input_size(),
            actual: spins.len(),
        });
    }
    Ok(())
}

/// Serializable description sufficient to rebuild an ansatz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum AnsatzSpec {
    Vit(VitHyperparameters),
    Rbm { size: usize, density: usize },
    Mlp { size: usize, hidden: Vec<usize> },
}

impl AnsatzSpec {
    pub fn build(&self) -> Result<AnyAnsatz> {
        Ok(match self {
            AnsatzSpec::Vit(h) => AnyAnsatz::Vit(Vit::new(h.clone())?),
            AnsatzSpec::Rbm { size, density } => AnyAnsatz::Rbm(Rbm::new(*size, *density)?),
            AnsatzSpec::Mlp { size, hidden } => AnyAnsatz::Mlp(Ffnn::new(*size, hidden)?),
        })
    }

    pub fn size(&self) -> usize {
        match self {
            AnsatzSpec::Vit(h) => h.size,
            AnsatzSpec::Rbm { size, .. } | AnsatzSpec::Mlp { size, .. } => *size,
        }
    }
}

/// Closed set of the ansätze this crate provides.
#[derive(Clone, Debug)]
pub enum AnyAnsatz {
    Vit(Vit),
    Rbm(Rbm),
    Mlp(Ffnn),
}

impl AnyAnsatz {
    fn inner(&self) -> &dyn Ansatz {
        match self {
            AnyAnsatz::Vit(a) => a,
            AnyAnsatz::Rbm(a) => a,
            AnyAnsatz::Mlp(a) => a,
        }
    }

    pub fn spec(&self) -> AnsatzSpec {
        match self {
            AnyAnsatz::Vit(a) => AnsatzSpec::Vit(a.hyperparameters().clone()),
            AnyAnsatz::Rbm(a) => AnsatzSpec::Rbm {
                size: a.size(),
                density: a.density(),
            },
            AnyAnsatz::Mlp(a) => AnsatzSpec::Mlp {
                size: a.size(),
                hidden: a.hidden().to_vec(),
            },
        }
    }
}

impl Ansatz for AnyAnsatz {
    fn name(&self) -> &'static str {
        self.inner().name()
    }

    fn input_size(&self) -> usize {
        self.inner().input_size()
    }

    fn layout(&self) -> &ParameterLayout {
        self.inner().layout()
    }

    fn log_psi(&self, params: &[f64], spins: &[i8]) -> Result<f64> {
        self.inner().log_psi(params, spins)
    }

    fn log_psi_with_gradient(&self, params: &[f64], spins: &[i8], gradient: &mut [f64]) -> Result<f64> {
        self.inner().log_psi_with_gradient(params, spins, gradient)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_tiles_vector() {
        let mut layout = ParameterLayout::new();
        layout.push("a.w", &[3, 2], Init::Normal { fan_in: 2 });
        layout.push("a.b", &[3], Init::Zeros);
        layout.push("g", &[4], Init::Ones);
        layout.validate().unwrap();
        assert_eq!(layout.parameter_count(), 13);
        assert_eq!(layout.breakdown(), vec![("a".to_string(), 9), ("g".to_string(), 4)]);
        let v = layout.initialize(3);
        assert!(v[6..9].iter().all(|&x| x == 0.0));
        assert!(v[9..].iter().all(|&x| x == 1.0));
        assert_eq!(v, layout.initialize(3));
        let params = AnsatzParameters::new(v, layout.clone()).unwrap();
        assert_eq!(params.slice("g").unwrap().len(), 4);
        assert!(AnsatzParameters::new(vec![0.0; 12], layout).is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = AnsatzSpec::Rbm { size: 6, density: 2 };
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"type\":\"rbm\""));
        assert_eq!(serde_json::from_str::<AnsatzSpec>(&text).unwrap(), spec);
        let vit = AnsatzSpec::Vit(VitHyperparameters::table_one(50).unwrap());
        let text = serde_json::to_string(&vit).unwrap();
        assert_eq!(serde_json::from_str::<AnsatzSpec>(&text).unwrap(), vit);
    }
}
