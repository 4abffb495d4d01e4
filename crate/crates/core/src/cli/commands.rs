//! Subcommand implementations. Each writes its artifacts into a directory
//! and returns a serialisable report.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ansatz::cache::AmplitudeCache;
use crate::ansatz::checkpoint::load_checkpoint;
use crate::ansatz::rbm::Rbm;
use crate::ansatz::{Ansatz, AnsatzSpec, AnyAnsatz};
use crate::cli::svg::{self, Series, Style};
use crate::config::{AnsatzConfig, ModelConfig, RunConfiguration};
use crate::error::{Error, Result};
use crate::exact::{cached_ground_state, exact_observables, exhaustive_energy, Method};
use crate::fssa::{
    collapsed_points, derived_critical_quantities, fit_critical, CriticalFit, CriticalParameters, DerivedCritical,
    FitOptions, FitWindow, ScaledPoint, ScalingDataset,
};
use crate::hamiltonian::{asymptotic_kac_factor, CouplingMetadata, TransverseFieldIsing};
use crate::observables::{
    append_rows, m_squared_estimator, renyi2_from_batch, v_score_from_moments, ObservableRow, Wavevector,
};
use crate::sampler::{SampleBatch, SamplerState};
use crate::timing::{Budget, Stopwatch};
use crate::training::{measure_energy, train, EnergyEstimate, TrainOptions, CHECKPOINT_DIR};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const OBSERVABLES_FILE: &str = "observables.csv";
/// Parameter count quoted for the reference transformer at `N = 50`.
pub const REFERENCE_VIT_PARAMETERS: usize = 1133;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config: RunConfiguration,
    pub coupling: CouplingMetadata,
    pub ansatz: AnsatzSpec,
    pub parameter_count: usize,
    pub parameter_breakdown: Vec<(String, usize)>,
    pub threads: usize,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfiguration, model: &TransverseFieldIsing, ansatz: &AnyAnsatz) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.clone(),
            coupling: model.coupling.metadata(),
            ansatz: ansatz.spec(),
            parameter_count: ansatz.layout().parameter_count(),
            parameter_breakdown: ansatz.layout().breakdown(),
            threads: rayon::current_num_threads(),
        }
    }
}

/// Final state of one training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub iterations_completed: usize,
    pub stopped_by_budget: bool,
    /// Updates retried at a smaller step after non-finite amplitudes.
    pub rejected_steps: usize,
    pub elapsed_seconds: f64,
    pub parameter_count: usize,
    pub q: Wavevector,
    pub energy: f64,
    pub energy_error: f64,
    pub v_score: f64,
    pub m2: f64,
    pub m2_error: f64,
    pub s2: f64,
    pub s2_error: f64,
    /// Whether the values above come from a fresh batch at the final
    /// parameters rather than from the last training iteration.
    pub final_measurement: bool,
}

/// Magnetisation and entropy estimates from a batch drawn at `params`.
pub fn batch_observables(
    ansatz: &dyn Ansatz,
    params: &[f64],
    batch: &SampleBatch,
    q: Wavevector,
) -> Result<((f64, f64), (f64, f64))> {
    if batch.configurations.is_empty() {
        return Ok(((f64::NAN, f64::NAN), (f64::NAN, f64::NAN)));
    }
    let m2 = m_squared_estimator(&batch.configurations, q)?;
    let s2 = if batch.configurations.len() >= 2 && batch.configurations[0].len() >= 2 {
        let cache = AmplitudeCache::new(ansatz, params);
        let r = renyi2_from_batch(&batch.configurations, &|s: &[i8]| cache.log_psi(s))?;
        (r.s2, r.error)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(((m2.mean, m2.error), s2))
}

/// Train one configuration into `run_dir`.
pub fn cmd_train(config: &RunConfiguration, run_dir: &Path, resume: Option<&Path>) -> Result<RunSummary> {
    config.validate()?;
    let model = config.hamiltonian()?;
    let ansatz = config.ansatz_spec()?.build()?;
    let manifest = RunManifest::new("train", config, &model, &ansatz);
    write_json(&run_dir.join(MANIFEST_FILE), &manifest)?;
    let options = TrainOptions {
        output_dir: Some(run_dir.to_path_buf()),
        budget: config.budget,
        resume: resume.map(checkpoint_dir),
        stop_after: None,
        manifest_extra: serde_json::to_value(config)?,
    };
    let outcome = train(&model, &ansatz, &config.sampler_config(), &config.optimizer, config.seed, &options)?;
    let q = Wavevector::for_coupling(config.model.coupling);
    let (estimate, final_measurement) = match (&outcome.final_estimate, outcome.trace.last()) {
        (Some(e), _) => (e.clone(), true),
        (None, Some(r)) => (
            EnergyEstimate {
                energy: r.energy,
                energy_error: r.energy_error,
                variance: r.variance,
                v_score: r.v_score,
            },
            false,
        ),
        (None, None) => (
            EnergyEstimate {
                energy: f64::NAN,
                energy_error: f64::NAN,
                variance: f64::NAN,
                v_score: f64::NAN,
            },
            false,
        ),
    };
    let ((m2, m2_error), (s2, s2_error)) = batch_observables(&ansatz, &outcome.params, &outcome.final_batch, q)?;
    let summary = RunSummary {
        run_dir: run_dir.to_path_buf(),
        iterations_completed: outcome.iterations_completed,
        stopped_by_budget: outcome.stopped_by_budget,
        rejected_steps: outcome.rejected_steps,
        elapsed_seconds: outcome.elapsed.as_secs_f64(),
        parameter_count: manifest.parameter_count,
        q,
        energy: estimate.energy,
        energy_error: estimate.energy_error,
        v_score: estimate.v_score,
        m2,
        m2_error,
        s2,
        s2_error,
        final_measurement,
    };
    write_json(&run_dir.join(SUMMARY_FILE), &summary)?;
    append_rows(
        &run_dir.join(OBSERVABLES_FILE),
        &[ObservableRow {
            coupling: config.model.coupling,
            alpha: config.model.alpha,
            size: config.model.size,
            m2,
            m2_error,
            s2,
            s2_error,
            v_score: estimate.v_score,
            energy: estimate.energy,
        }],
    )?;
    Ok(summary)
}

fn point_label(value: f64) -> String {
    format!("{value:+.4}").replace('.', "p")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    #[serde(rename = "J")]
    pub coupling: f64,
    pub m2: f64,
    pub m2_error: f64,
    pub v_score: f64,
    pub energy: f64,
    pub status: String,
}

/// One training per `(α, J)` grid point; failures are recorded and the
/// sweep continues.
pub fn cmd_sweep(config: &RunConfiguration, alphas: &[f64], couplings: &[f64], out_dir: &Path) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() || couplings.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    let mut rows = Vec::new();
    for &alpha in alphas {
        for &j in couplings {
            let mut point = config.clone();
            point.model.alpha = alpha;
            point.model.coupling = j;
            let dir = out_dir.join("points").join(format!("a{}_J{}", point_label(alpha), point_label(j)));
            let row = match cmd_train(&point, &dir, None) {
                Ok(s) => SweepRow {
                    alpha,
                    coupling: j,
                    m2: s.m2,
                    m2_error: s.m2_error,
                    v_score: s.v_score,
                    energy: s.energy,
                    status: "ok".into(),
                },
                Err(e) => SweepRow {
                    alpha,
                    coupling: j,
                    m2: f64::NAN,
                    m2_error: f64::NAN,
                    v_score: f64::NAN,
                    energy: f64::NAN,
                    status: e.to_string(),
                },
            };
            rows.push(row);
        }
    }
    write_csv(&out_dir.join("sweep.csv"), &rows)?;
    let values: Vec<Vec<f64>> = alphas
        .iter()
        .enumerate()
        .map(|(ia, _)| (0..couplings.len()).map(|ij| rows[ia * couplings.len() + ij].m2).collect())
        .collect();
    let title = format!("<m²>, N = {}", config.model.size);
    write_text(&out_dir.join("m2_heatmap.svg"), &svg::heatmap(&title, "J", "alpha", couplings, alphas, &values))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub architecture: String,
    #[serde(rename = "J")]
    pub coupling: f64,
    pub v_score: f64,
    pub energy: f64,
    pub iterations: usize,
    pub stopped_by_budget: bool,
    pub elapsed_seconds: f64,
    pub within_budget: bool,
    pub parameter_count: usize,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbmCount {
    pub density: usize,
    pub real_parameters: usize,
    pub complex_equivalent: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterCounts {
    pub vit: usize,
    pub vit_breakdown: Vec<(String, usize)>,
    pub vit_reference: usize,
    pub rbm: Vec<RbmCount>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub size: usize,
    pub alpha: f64,
    pub budget: Budget,
    pub parameters: ParameterCounts,
    pub rows: Vec<CompareRow>,
    /// Couplings at which the transformer reached a lower V-score than
    /// every RBM.
    pub vit_best_at: Vec<f64>,
}

fn architecture_name(ansatz: &AnsatzConfig) -> String {
    match ansatz {
        AnsatzConfig::Vit { .. } => "vit".into(),
        AnsatzConfig::Rbm { density } => format!("rbm{density}"),
        AnsatzConfig::Mlp { .. } => "mlp".into(),
    }
}

pub fn parameter_counts(config: &RunConfiguration, densities: &[usize]) -> Result<ParameterCounts> {
    let size = config.model.size;
    let vit = config.ansatz.spec(size)?.build()?;
    let mut rbm = Vec::new();
    for &density in densities {
        let model = Rbm::new(size, density)?;
        rbm.push(RbmCount {
            density,
            real_parameters: model.layout().parameter_count(),
            complex_equivalent: model.complex_equivalent_parameter_count(),
        });
    }
    Ok(ParameterCounts {
        vit: vit.layout().parameter_count(),
        vit_breakdown: vit.layout().breakdown(),
        vit_reference: REFERENCE_VIT_PARAMETERS,
        rbm,
    })
}

/// Train the transformer (from `config.ansatz`) and RBMs of each density at
/// every coupling under a fixed per-point budget.
pub fn cmd_compare(
    config: &RunConfiguration,
    couplings: &[f64],
    densities: &[usize],
    budget: Budget,
    out_dir: &Path,
) -> Result<CompareReport> {
    if !(budget.seconds > 0.0) {
        return Err(Error::Config(format!("budget must be positive, got {} s", budget.seconds)));
    }
    if couplings.is_empty() {
        return Err(Error::Config("compare needs at least one coupling".into()));
    }
    if !matches!(config.ansatz, AnsatzConfig::Vit { .. }) {
        return Err(Error::Config("compare expects a vit ansatz block".into()));
    }
    let parameters = parameter_counts(config, densities)?;
    write_json(&out_dir.join("parameters.json"), &parameters)?;
    let mut architectures = vec![config.ansatz.clone()];
    architectures.extend(densities.iter().map(|&d| AnsatzConfig::rbm(d)));
    let mut rows = Vec::new();
    for &j in couplings {
        for arch in &architectures {
            let name = architecture_name(arch);
            let mut point = config.clone();
            point.model.coupling = j;
            point.ansatz = arch.clone();
            point.budget = Some(budget);
            let dir = out_dir.join("runs").join(format!("{name}_J{}", point_label(j)));
            let watch = Stopwatch::start(budget.clock);
            let result = cmd_train(&point, &dir, None);
            let elapsed = watch.elapsed().as_secs_f64();
            rows.push(match result {
                Ok(s) => CompareRow {
                    architecture: name,
                    coupling: j,
                    v_score: s.v_score,
                    energy: s.energy,
                    iterations: s.iterations_completed,
                    stopped_by_budget: s.stopped_by_budget,
                    elapsed_seconds: elapsed,
                    within_budget: elapsed <= budget.seconds,
                    parameter_count: s.parameter_count,
                    status: "ok".into(),
                },
                Err(e) => CompareRow {
                    architecture: name,
                    coupling: j,
                    v_score: f64::NAN,
                    energy: f64::NAN,
                    iterations: 0,
                    stopped_by_budget: false,
                    elapsed_seconds: elapsed,
                    within_budget: elapsed <= budget.seconds,
                    parameter_count: 0,
                    status: e.to_string(),
                },
            });
        }
    }
    let vit_best_at = couplings
        .iter()
        .copied()
        .filter(|&j| {
            let at_j: Vec<&CompareRow> = rows.iter().filter(|r| r.coupling == j).collect();
            let vit = at_j.iter().find(|r| r.architecture == "vit").map_or(f64::NAN, |r| r.v_score);
            vit.is_finite()
                && at_j
                    .iter()
                    .filter(|r| r.architecture != "vit")
                    .all(|r| !r.v_score.is_finite() || vit < r.v_score)
        })
        .collect();
    write_csv(&out_dir.join("compare.csv"), &rows)?;
    let series: Vec<Series> = architectures
        .iter()
        .map(|a| {
            let name = architecture_name(a);
            let pts = rows
                .iter()
                .filter(|r| r.architecture == name)
                .map(|r| (r.coupling, r.v_score))
                .collect();
            Series::new(name, pts)
        })
        .collect();
    let title = format!("V-score at fixed budget, N = {}, alpha = {}", config.model.size, config.model.alpha);
    write_text(
        &out_dir.join("vscore.svg"),
        &svg::chart(&title, "J", "V-score", &series, Style::Lines, true),
    )?;
    let report = CompareReport {
        size: config.model.size,
        alpha: config.model.alpha,
        budget,
        parameters,
        rows,
        vit_best_at,
    };
    write_json(&out_dir.join("compare.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointComparison {
    pub checkpoint: PathBuf,
    pub variational_energy: f64,
    pub relative_error: f64,
    pub v_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactReport {
    #[serde(rename = "N")]
    pub size: usize,
    pub alpha: f64,
    #[serde(rename = "J")]
    pub coupling: f64,
    pub energy: f64,
    pub excited_energy: f64,
    pub gap: f64,
    pub q: Wavevector,
    pub m2: f64,
    pub s2: f64,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<CheckpointComparison>,
}

/// The checkpoint inside a run directory, or `dir` itself.
pub fn checkpoint_dir(dir: &Path) -> PathBuf {
    if dir.join(CHECKPOINT_DIR).is_dir() {
        dir.join(CHECKPOINT_DIR)
    } else {
        dir.to_path_buf()
    }
}

/// Rebuild an ansatz and its parameters from a checkpoint directory (either
/// the checkpoint itself or a run directory containing one).
pub fn load_trained(dir: &Path) -> Result<(AnyAnsatz, Vec<f64>)> {
    let (manifest, params) = load_checkpoint(&checkpoint_dir(dir))?;
    let ansatz = manifest.ansatz.build()?;
    Ok((ansatz, params))
}

pub fn cmd_exact(model_config: &ModelConfig, checkpoint: Option<&Path>, cache_dir: Option<&Path>) -> Result<ExactReport> {
    let model = model_config.build()?;
    let solution = cached_ground_state(&model, cache_dir)?;
    let q = Wavevector::for_coupling(model_config.coupling);
    let obs = exact_observables(&solution, q)?;
    let comparison = match checkpoint {
        Some(dir) => {
            let (ansatz, params) = load_trained(dir)?;
            if ansatz.input_size() != model.size() {
                return Err(Error::Dimension {
                    context: "checkpoint ansatz size",
                    expected: model.size(),
                    actual: ansatz.input_size(),
                });
            }
            let (energy, variance) = exhaustive_energy(&model, |s| ansatz.log_psi(&params, s))?;
            Some(CheckpointComparison {
                checkpoint: dir.to_path_buf(),
                variational_energy: energy,
                relative_error: ((energy - solution.energy) / solution.energy).abs(),
                v_score: v_score_from_moments(energy, variance, model.size()),
            })
        }
        None => None,
    };
    Ok(ExactReport {
        size: model.size(),
        alpha: model_config.alpha,
        coupling: model_config.coupling,
        energy: solution.energy,
        excited_energy: solution.excited_energy,
        gap: solution.gap,
        q,
        m2: obs.m2,
        s2: obs.s2,
        method: solution.method,
        checkpoint: comparison,
    })
}

/// One line of the critical-point table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalRow {
    #[serde(rename = "J_c")]
    pub j_c: f64,
    #[serde(rename = "J_c_error")]
    pub j_c_error: f64,
    pub h_tilde_c: f64,
    pub theta_c: f64,
    pub nu: f64,
    pub nu_error: f64,
    pub beta: f64,
    pub beta_error: f64,
    pub quality: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FssaReport {
    pub sizes: Vec<usize>,
    pub fit: CriticalFit,
    pub kac_factor: Option<f64>,
    pub derived: Option<DerivedCritical>,
    pub table: CriticalRow,
}

/// Kac factor used for the derived quantities: explicit, or the
/// infinite-ring value for the given `α` and `b`.
pub fn kac_for_table(kac: Option<f64>, alpha: Option<f64>, b: f64) -> Result<Option<f64>> {
    match (kac, alpha) {
        (Some(k), _) => Ok(Some(k)),
        (None, Some(a)) => asymptotic_kac_factor(a, b).map(Some),
        (None, None) => Ok(None),
    }
}

pub fn cmd_fssa(
    dataset: &ScalingDataset,
    guess: CriticalParameters,
    window: FitWindow,
    kac: Option<f64>,
    out_dir: &Path,
) -> Result<FssaReport> {
    let options = FitOptions {
        window,
        ..FitOptions::default()
    };
    let fit = fit_critical(dataset, guess, &options)?;
    let derived = match kac {
        Some(k) => Some(derived_critical_quantities(fit.j_c, k)?),
        None => None,
    };
    let restricted = dataset.restrict(window)?;
    let points: Vec<ScaledPoint> = collapsed_points(&restricted, fit.parameters());
    write_csv(&out_dir.join("collapsed.csv"), &points)?;
    let sizes = restricted.sizes();
    let series: Vec<Series> = sizes
        .iter()
        .map(|&n| {
            Series::new(
                format!("N = {n}"),
                points.iter().filter(|p| p.size == n).map(|p| (p.x, p.y)).collect(),
            )
        })
        .collect();
    let title = format!("collapse: J_c = {:.4}, nu = {:.3}, beta = {:.3}", fit.j_c, fit.nu, fit.beta);
    write_text(
        &out_dir.join("collapse.svg"),
        &svg::chart(&title, "N^(1/nu) (J - J_c)", "N^(2 beta/nu) value", &series, Style::Markers, false),
    )?;
    let table = CriticalRow {
        j_c: fit.j_c,
        j_c_error: fit.j_c_error,
        h_tilde_c: derived.map_or(f64::NAN, |d| d.h_tilde),
        theta_c: derived.map_or(f64::NAN, |d| d.theta),
        nu: fit.nu,
        nu_error: fit.nu_error,
        beta: fit.beta,
        beta_error: fit.beta_error,
        quality: fit.quality,
    };
    write_csv(&out_dir.join("critical.csv"), std::slice::from_ref(&table))?;
    let report = FssaReport {
        sizes,
        fit,
        kac_factor: kac,
        derived,
        table,
    };
    write_json(&out_dir.join("fit.json"), &report)?;
    Ok(report)
}

/// Sample a trained state and append its observables to `out_dir/observables.csv`.
pub fn cmd_observe(config: &RunConfiguration, checkpoint: &Path, out_dir: &Path) -> Result<ObservableRow> {
    let model = config.hamiltonian()?;
    let (ansatz, params) = load_trained(checkpoint)?;
    if ansatz.input_size() != model.size() {
        return Err(Error::Dimension {
            context: "checkpoint ansatz size",
            expected: model.size(),
            actual: ansatz.input_size(),
        });
    }
    let sampler_config = config.sampler_config();
    sampler_config.validate()?;
    let cache = AmplitudeCache::new(&ansatz, &params);
    let mut sampler = SamplerState::initialize(&sampler_config, model.size(), &|s: &[i8]| cache.log_psi(s))?;
    let (batch, estimate) = measure_energy(&model, &ansatz, &params, &mut sampler)?;
    let q = Wavevector::for_coupling(config.model.coupling);
    let ((m2, m2_error), (s2, s2_error)) = batch_observables(&ansatz, &params, &batch, q)?;
    let row = ObservableRow {
        coupling: config.model.coupling,
        alpha: config.model.alpha,
        size: model.size(),
        m2,
        m2_error,
        s2,
        s2_error,
        v_score: estimate.v_score,
        energy: estimate.energy,
    };
    append_rows(&out_dir.join(OBSERVABLES_FILE), std::slice::from_ref(&row))?;
    Ok(row)
}
