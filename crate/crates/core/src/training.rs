//! Variational Monte Carlo training loop: sample, measure local energies and
//! log-derivatives, take an SR step.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::cache::AmplitudeCache;
use crate::ansatz::checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
use crate::ansatz::{Ansatz, AnyAnsatz};
use crate::error::{format_spins, Error, Result};
use crate::hamiltonian::TransverseFieldIsing;
use crate::observables::v_score_from_moments;
use crate::sampler::{AcceptanceLog, ChainSnapshot, MoveType, SampleBatch, SamplerConfig, SamplerState};
use crate::sr::{accumulate_sr_statistics, sr_update, DiagonalShiftSchedule, LearningRateSchedule, WeightedSample};
use crate::timing::{Budget, Stopwatch};

pub const ENERGY_FILE: &str = "energy.csv";
pub const ACCEPTANCE_FILE: &str = "acceptance.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";
/// Retries allowed for updates that lead to non-finite amplitudes.
pub const MAX_REJECTED_STEPS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    pub learning_rate: LearningRateSchedule,
    pub diagonal_shift_start: f64,
    pub diagonal_shift_end: f64,
    /// Write a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iter: 250,
            learning_rate: LearningRateSchedule::default(),
            diagonal_shift_start: 1e-2,
            diagonal_shift_end: 1e-4,
            checkpoint_every: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        self.learning_rate.validate()?;
        self.diagonal_shift_schedule().map(|_| ())
    }

    pub fn diagonal_shift_schedule(&self) -> Result<DiagonalShiftSchedule> {
        DiagonalShiftSchedule::new(self.diagonal_shift_start, self.diagonal_shift_end, self.max_iter)
    }
}

/// Energy statistics of one sample batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub energy: f64,
    /// Naive standard error `sqrt(var / n)`.
    pub energy_error: f64,
    pub variance: f64,
    pub v_score: f64,
}

/// One row of the energy trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub energy: f64,
    pub energy_error: f64,
    pub variance: f64,
    pub v_score: f64,
    pub learning_rate: f64,
    pub diagonal_shift: f64,
    pub local_acceptance: f64,
    pub global_acceptance: f64,
    pub solver_residual: f64,
    pub unique_samples: usize,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Directory for the energy trace, acceptance log and checkpoints.
    pub output_dir: Option<PathBuf>,
    pub budget: Option<Budget>,
    /// Checkpoint directory to continue from.
    pub resume: Option<PathBuf>,
    /// Stop once this many iterations have been completed, without
    /// changing the schedules (which are tied to `max_iter`).
    pub stop_after: Option<usize>,
    /// Stored verbatim in checkpoint manifests.
    pub manifest_extra: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub params: Vec<f64>,
    pub trace: Vec<IterationRecord>,
    /// Number of SR updates applied in total (including before a resume).
    pub iterations_completed: usize,
    pub stopped_by_budget: bool,
    /// Updates that were retried at half the step after producing
    /// non-finite amplitudes.
    pub rejected_steps: usize,
    pub elapsed: Duration,
    /// Samples drawn at the final parameters.
    pub final_batch: SampleBatch,
    pub final_estimate: Option<EnergyEstimate>,
    pub sampler: SamplerState,
}

/// Run state stored in a checkpoint next to the parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct ResumeState {
    next_iteration: usize,
    sampler: SamplerConfig,
    chains: Vec<ChainSnapshot>,
    #[serde(default)]
    run: serde_json::Value,
}

/// Merge duplicate configurations, keeping the sample order irrelevant.
fn unique_configurations(batch: &SampleBatch) -> Vec<(&[i8], f64, usize)> {
    let mut map: BTreeMap<&[i8], (f64, usize)> = BTreeMap::new();
    for (spins, &lp) in batch.configurations.iter().zip(&batch.log_psi) {
        map.entry(spins.as_slice()).or_insert((lp, 0)).1 += 1;
    }
    map.into_iter().map(|(s, (lp, n))| (s, lp, n)).collect()
}

/// Local energies (and optionally log-derivatives) of every distinct
/// configuration in `batch`, weighted by multiplicity.
pub fn evaluate_batch(
    model: &TransverseFieldIsing,
    ansatz: &dyn Ansatz,
    params: &[f64],
    cache: &AmplitudeCache<'_>,
    batch: &SampleBatch,
    with_derivatives: bool,
) -> Result<Vec<WeightedSample>> {
    let unique = unique_configurations(batch);
    unique
        .par_iter()
        .map(|&(spins, log_psi, count)| {
            let derivatives = if with_derivatives {
                let mut g = vec![0.0; params.len()];
                ansatz.log_psi_with_gradient(params, spins, &mut g)?;
                g
            } else {
                Vec::new()
            };
            let local_energy = model.local_energy_with_reference(spins, log_psi, |s| cache.log_psi_or_nan(s))?;
            if !local_energy.is_finite() {
                return Err(Error::NonFinite {
                    stage: "local energy".into(),
                    config: format_spins(spins),
                });
            }
            Ok(WeightedSample {
                derivatives,
                local_energy,
                weight: count as f64,
            })
        })
        .collect()
}

pub fn energy_estimate(samples: &[WeightedSample], size: usize) -> EnergyEstimate {
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    let mean = samples.iter().map(|s| s.weight * s.local_energy).sum::<f64>() / total;
    let variance = samples
        .iter()
        .map(|s| s.weight * (s.local_energy - mean).powi(2))
        .sum::<f64>()
        / total;
    EnergyEstimate {
        energy: mean,
        energy_error: (variance / total).sqrt(),
        variance,
        v_score: v_score_from_moments(mean, variance, size),
    }
}

/// Sample at fixed parameters and estimate the energy.
pub fn measure_energy(
    model: &TransverseFieldIsing,
    ansatz: &dyn Ansatz,
    params: &[f64],
    sampler: &mut SamplerState,
) -> Result<(SampleBatch, EnergyEstimate)> {
    let cache = AmplitudeCache::new(ansatz, params);
    let batch = sampler.sample_batch(&|s: &[i8]| cache.log_psi(s))?;
    let samples = evaluate_batch(model, ansatz, params, &cache, &batch, false)?;
    let estimate = energy_estimate(&samples, model.size());
    Ok((batch, estimate))
}

struct Sinks {
    dir: PathBuf,
    energy: csv::Writer<fs::File>,
    acceptance: AcceptanceLog,
}

impl Sinks {
    fn open(dir: &Path, first_iteration: usize) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let energy_path = dir.join(ENERGY_FILE);
        truncate_trace(&energy_path, first_iteration)?;
        let has_rows = energy_path.exists() && fs::metadata(&energy_path).map(|m| m.len() > 0).unwrap_or(false);
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&energy_path)
            .map_err(|e| Error::io(&energy_path, e))?;
        let energy = csv::WriterBuilder::new().has_headers(!has_rows).from_writer(file);
        let acceptance = AcceptanceLog::open(&dir.join(ACCEPTANCE_FILE))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            energy,
            acceptance,
        })
    }

    fn write(&mut self, record: &IterationRecord, counters: &crate::sampler::AcceptanceCounters) -> Result<()> {
        self.energy.serialize(record)?;
        self.energy.flush().map_err(|e| Error::io(self.dir.join(ENERGY_FILE), e))?;
        self.acceptance.append(record.iteration, counters)
    }
}

/// Drop trace rows at or after `first_iteration` so a resumed run does not
/// duplicate them.
fn truncate_trace(path: &Path, first_iteration: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let records = read_energy_trace(path)?;
    let kept: Vec<_> = records.into_iter().filter(|r| r.iteration < first_iteration).collect();
    let mut w = csv::Writer::from_path(path)?;
    for r in &kept {
        w.serialize(r)?;
    }
    if kept.is_empty() {
        // Leave an empty file; the header is written with the first row.
        drop(w);
        fs::write(path, b"").map_err(|e| Error::io(path, e))?;
        return Ok(());
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_energy_trace(path: &Path) -> Result<Vec<IterationRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn write_checkpoint(
    dir: &Path,
    ansatz: &AnyAnsatz,
    params: &[f64],
    seed: u64,
    sampler: &SamplerState,
    next_iteration: usize,
    run: &serde_json::Value,
) -> Result<()> {
    let mut manifest = CheckpointManifest::new(ansatz.spec(), ansatz.layout().clone(), seed, next_iteration);
    manifest.extra = serde_json::to_value(ResumeState {
        next_iteration,
        sampler: sampler.config().clone(),
        chains: sampler.snapshot(),
        run: run.clone(),
    })?;
    save_checkpoint(&dir.join(CHECKPOINT_DIR), &manifest, params)
}

/// Train `ansatz` on `model` for `optimizer.max_iter` SR iterations (or
/// until the budget runs out), then sample once more at the final
/// parameters.
pub fn train(
    model: &TransverseFieldIsing,
    ansatz: &AnyAnsatz,
    sampler_config: &SamplerConfig,
    optimizer: &OptimizerConfig,
    seed: u64,
    options: &TrainOptions,
) -> Result<TrainingOutcome> {
    optimizer.validate()?;
    sampler_config.validate()?;
    if ansatz.input_size() != model.size() {
        return Err(Error::Dimension {
            context: "ansatz input size",
            expected: model.size(),
            actual: ansatz.input_size(),
        });
    }
    let stopwatch = Stopwatch::start(options.budget.map(|b| b.clock).unwrap_or_default());
    let limit = options.budget.map(|b| b.limit());
    let shifts = optimizer.diagonal_shift_schedule()?;

    let (mut params, mut sampler, start) = match &options.resume {
        Some(dir) => {
            let (manifest, params) = load_checkpoint(dir)?;
            if manifest.ansatz != ansatz.spec() {
                return Err(Error::Config("checkpoint was written for a different ansatz".into()));
            }
            let state: ResumeState = serde_json::from_value(manifest.extra)?;
            if &state.sampler != sampler_config {
                return Err(Error::Config("checkpoint sampler configuration differs from the requested one".into()));
            }
            let sampler = SamplerState::restore(sampler_config, model.size(), &state.chains)?;
            (params, sampler, state.next_iteration)
        }
        None => {
            let params = ansatz.initial_parameters(seed);
            let cache = AmplitudeCache::new(ansatz, &params);
            let sampler = SamplerState::initialize(sampler_config, model.size(), &|s: &[i8]| cache.log_psi(s))?;
            (params, sampler, 0)
        }
    };

    let mut sinks = match &options.output_dir {
        Some(dir) => Some(Sinks::open(dir, start)?),
        None => None,
    };

    let mut trace = Vec::new();
    let mut stopped_by_budget = false;
    // Parameters before the last update, that update's step, and the
    // learning-rate reduction applied after rejected steps.
    let mut last_update: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    let mut step_scale = 1.0;
    let mut rejected_steps = 0;
    let mut last_duration = Duration::ZERO;
    let mut iteration = start;
    let last = options.stop_after.map_or(optimizer.max_iter, |k| k.min(optimizer.max_iter));
    while iteration < last {
        let before = stopwatch.elapsed();
        // Keep room for this iteration and for the final measurement, which
        // costs at most one more iteration.
        if let Some(limit) = limit {
            if before + 2 * last_duration > limit {
                stopped_by_budget = true;
                break;
            }
        }
        let saved = (params.clone(), sampler.clone());
        let step = (|| {
            let cache = AmplitudeCache::new(ansatz, &params);
            let batch = sampler.sample_batch(&|s: &[i8]| cache.log_psi(s))?;
            let samples = evaluate_batch(model, ansatz, &params, &cache, &batch, true)?;
            let estimate = energy_estimate(&samples, model.size());
            let stats = accumulate_sr_statistics(&samples)?;
            let lr = step_scale * optimizer.learning_rate.learning_rate_at(iteration);
            let update = sr_update(&params, &stats, lr, shifts.shift_at(iteration))?;
            let record = IterationRecord {
                iteration,
                energy: estimate.energy,
                energy_error: estimate.energy_error,
                variance: estimate.variance,
                v_score: estimate.v_score,
                learning_rate: lr,
                diagonal_shift: update.diagonal_shift,
                local_acceptance: batch.counters.rate(MoveType::Local),
                global_acceptance: batch.counters.rate(MoveType::Global),
                solver_residual: update.residual,
                unique_samples: samples.len(),
            };
            Ok::<_, Error>((record, batch.counters, update))
        })();
        let (record, counters, update) = match step {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) if rejected_steps < MAX_REJECTED_STEPS && last_update.is_some() => {
                // The previous update overshot; redo it with half the step.
                let (previous, delta, lr) = last_update.take().expect("checked above");
                step_scale *= 0.5;
                rejected_steps += 1;
                let lr = 0.5 * lr;
                params = previous.iter().zip(&delta).map(|(t, d)| t - lr * d).collect();
                sampler = saved.1;
                last_update = Some((previous, delta, lr));
                continue;
            }
            Err(e) => {
                if let Some(dir) = &options.output_dir {
                    let (p, s) = &saved;
                    write_checkpoint(dir, ansatz, p, seed, s, iteration, &options.manifest_extra)?;
                }
                return Err(e);
            }
        };
        if let Some(s) = sinks.as_mut() {
            s.write(&record, &counters)?;
        }
        trace.push(record);
        let lr = trace.last().map_or(0.0, |r| r.learning_rate);
        last_update = Some((std::mem::replace(&mut params, update.params), update.delta, lr));
        iteration += 1;
        if let (Some(dir), true) = (&options.output_dir, optimizer.checkpoint_every > 0) {
            if iteration % optimizer.checkpoint_every == 0 {
                write_checkpoint(dir, ansatz, &params, seed, &sampler, iteration, &options.manifest_extra)?;
            }
        }
        last_duration = stopwatch.elapsed().saturating_sub(before);
    }

    // Checkpoint before the final measurement so a resumed run continues
    // the same chain streams.
    if let Some(dir) = &options.output_dir {
        write_checkpoint(dir, ansatz, &params, seed, &sampler, iteration, &options.manifest_extra)?;
    }
    let over_budget = limit.is_some_and(|l| stopwatch.elapsed() + last_duration > l);
    let (final_batch, final_estimate) = if over_budget {
        (SampleBatch::default(), None)
    } else {
        let saved = sampler.clone();
        match (measure_energy(model, ansatz, &params, &mut sampler), last_update) {
            (Ok((b, e)), _) => (b, Some(e)),
            (Err(Error::NonFinite { .. }), Some((previous, _, _))) => {
                // Measure at the parameters before the overshooting update.
                params = previous;
                sampler = saved;
                rejected_steps += 1;
                let (b, e) = measure_energy(model, ansatz, &params, &mut sampler)?;
                (b, Some(e))
            }
            (Err(e), _) => return Err(e),
        }
    };
    Ok(TrainingOutcome {
        params,
        trace,
        iterations_completed: iteration,
        stopped_by_budget,
        rejected_steps,
        elapsed: stopwatch.elapsed(),
        final_batch,
        final_estimate,
        sampler,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::AnsatzSpec;

    fn quick_sampler(seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_chains: 16,
            samples_per_iteration: 256,
            seed,
            ..SamplerConfig::default()
        }
    }

    fn quick_optimizer(max_iter: usize) -> OptimizerConfig {
        OptimizerConfig {
            max_iter,
            learning_rate: LearningRateSchedule {
                initial: 0.05,
                peak: 0.2,
                warmup: 5,
                decay: 0.99,
            },
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn zero_coupling_rbm_reaches_product_state_energy() {
        let model = TransverseFieldIsing::standard(6, 2.5, 0.0).unwrap();
        let ansatz = AnsatzSpec::Rbm { size: 6, density: 1 }.build().unwrap();
        let out = train(&model, &ansatz, &quick_sampler(1), &quick_optimizer(60), 3, &TrainOptions::default()).unwrap();
        let e = out.final_estimate.unwrap().energy;
        assert!((e + 6.0).abs() / 6.0 < 1e-3, "final energy {e}");
        assert_eq!(out.iterations_completed, 60);
    }

    #[test]
    fn traces_are_bit_reproducible() {
        let model = TransverseFieldIsing::standard(4, 2.0, -1.0).unwrap();
        let ansatz = AnsatzSpec::Mlp { size: 4, hidden: vec![6, 2] }.build().unwrap();
        let run = || {
            train(&model, &ansatz, &quick_sampler(5), &quick_optimizer(8), 9, &TrainOptions::default())
                .unwrap()
                .trace
        };
        let (a, b) = (run(), run());
        let bits = |t: &[IterationRecord]| t.iter().map(|r| r.energy.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn resume_reproduces_next_iteration() {
        let model = TransverseFieldIsing::standard(4, 2.0, 1.5).unwrap();
        let ansatz = AnsatzSpec::Rbm { size: 4, density: 2 }.build().unwrap();
        let sampler = quick_sampler(2);
        let optimizer = quick_optimizer(6);
        let full = train(&model, &ansatz, &sampler, &optimizer, 4, &TrainOptions::default()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let partial = train(
            &model,
            &ansatz,
            &sampler,
            &optimizer,
            4,
            &TrainOptions {
                output_dir: Some(dir.path().to_path_buf()),
                stop_after: Some(3),
                ..TrainOptions::default()
            },
        )
        .unwrap();
        assert_eq!(partial.iterations_completed, 3);
        let resumed = train(
            &model,
            &ansatz,
            &sampler,
            &optimizer,
            4,
            &TrainOptions {
                output_dir: Some(dir.path().to_path_buf()),
                resume: Some(dir.path().join(CHECKPOINT_DIR)),
                ..TrainOptions::default()
            },
        )
        .unwrap();
        assert_eq!(resumed.trace[0].iteration, 3);
        assert_eq!(resumed.trace[0].energy.to_bits(), full.trace[3].energy.to_bits());
        assert_eq!(resumed.params, full.params);
        let trace = read_energy_trace(&dir.path().join(ENERGY_FILE)).unwrap();
        assert_eq!(trace.iter().map(|r| r.iteration).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn output_files_are_written() {
        let model = TransverseFieldIsing::standard(4, 3.0, 0.5).unwrap();
        let ansatz = AnsatzSpec::Rbm { size: 4, density: 1 }.build().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let opts = TrainOptions {
            output_dir: Some(dir.path().to_path_buf()),
            ..TrainOptions::default()
        };
        train(&model, &ansatz, &quick_sampler(0), &quick_optimizer(4), 0, &opts).unwrap();
        let trace = read_energy_trace(&dir.path().join(ENERGY_FILE)).unwrap();
        assert_eq!(trace.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        let acceptance = fs::read_to_string(dir.path().join(ACCEPTANCE_FILE)).unwrap();
        assert_eq!(acceptance.lines().count(), 1 + 2 * 4);
        let (manifest, params) = load_checkpoint(&dir.path().join(CHECKPOINT_DIR)).unwrap();
        assert_eq!(manifest.iteration, 4);
        assert_eq!(params.len(), ansatz.parameter_count());
    }

    #[test]
    fn zero_budget_stops_before_training() {
        let model = TransverseFieldIsing::standard(4, 3.0, 0.5).unwrap();
        let ansatz = AnsatzSpec::Rbm { size: 4, density: 1 }.build().unwrap();
        let opts = TrainOptions {
            budget: Some(Budget {
                seconds: 0.0,
                clock: crate::timing::Clock::Wall,
            }),
            ..TrainOptions::default()
        };
        let out = train(&model, &ansatz, &quick_sampler(0), &quick_optimizer(50), 0, &opts).unwrap();
        assert!(out.stopped_by_budget);
        assert!(out.trace.is_empty());
    }
}
