//! End-to-end acceptance checks.
//!
//! All criteria run sequentially inside one test so that CPU-time budgets
//! are not shared with other tests. Each criterion writes one PASS/FAIL line
//! to stderr (bypassing output capture) and the test fails if any criterion
//! fails. Setting `LRNQS_CRITERIA` to a comma-separated list of numbers
//! runs only those criteria.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use lrnqs::ansatz::gradcheck::{check_gradients, DEFAULT_STEP};
use lrnqs::ansatz::{Ansatz, AnsatzSpec};
use lrnqs::cli::commands::{cmd_compare, cmd_exact, cmd_train};
use lrnqs::config::{AnsatzConfig, ModelConfig, RunConfiguration};
use lrnqs::exact::{cached_ground_state, exact_observables, exhaustive_energy, ExactSolution};
use lrnqs::fssa::{
    derived_critical_quantities, fit_critical, synthetic_dataset, CriticalParameters, FitOptions, FitWindow,
    ScalingDataset, ScalingRecord,
};
use lrnqs::hamiltonian::{asymptotic_kac_factor, index_from_spins, spins_from_index, CouplingModel, SpinConfiguration, TransverseFieldIsing};
use lrnqs::observables::{renyi2_from_batch, v_score, v_score_from_moments, Wavevector};
use lrnqs::sampler::{MoveType, SamplerConfig, SamplerState};
use lrnqs::sr::LearningRateSchedule;
use lrnqs::timing::{process_cpu_time, Budget, Clock};
use lrnqs::training::{train, OptimizerConfig, TrainOptions};
use lrnqs::vit::VitHyperparameters;
use lrnqs::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn report(id: usize, name: &str, verdict: &Verdict, seconds: f64) {
    let status = if verdict.passed { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "[{status}] criterion {id:>2} {name} ({seconds:.1} s): {}",
        verdict.detail
    );
}

/// Larger of two values, propagating NaN so that it fails later comparisons.
fn worse(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

fn random_spins(rng: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()
}

/// Initial parameters plus Gaussian noise, so that no unit sits at its
/// initialisation symmetry point.
fn random_parameters(ansatz: &dyn Ansatz, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    let noise = Normal::new(0.0, scale).unwrap();
    ansatz
        .initial_parameters(rng.random())
        .into_iter()
        .map(|p| p + noise.sample(rng))
        .collect()
}

fn exact_log_psi(solution: &ExactSolution) -> impl Fn(&[i8]) -> Result<f64> + Sync + '_ {
    move |s: &[i8]| Ok(solution.vector[index_from_spins(s)].abs().max(f64::MIN_POSITIVE).ln())
}

fn gradient_fidelity() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut pairs = 0;
    let mut per_ansatz = Vec::new();
    for name in ["vit", "rbm", "mlp"] {
        let mut count = 0;
        for (size, repeats) in [(6, 50), (10, 40), (50, 10)] {
            let spec = match name {
                "vit" => AnsatzSpec::Vit(VitHyperparameters::table_one(size)?),
                "rbm" => AnsatzSpec::Rbm { size, density: 1 },
                _ => AnsatzSpec::Mlp {
                    size,
                    hidden: vec![size],
                },
            };
            let ansatz = spec.build()?;
            for _ in 0..repeats {
                let params = random_parameters(&ansatz, &mut rng, 0.1);
                let spins = random_spins(&mut rng, size);
                worst = worse(worst, check_gradients(&ansatz, &params, &spins, DEFAULT_STEP)?);
                count += 1;
            }
        }
        pairs += count;
        per_ansatz.push(format!("{name}: {count}"));
    }
    Ok(Verdict::new(
        worst < 1e-5,
        format!("max relative error {worst:.2e} over {pairs} pairs ({})", per_ansatz.join(", ")),
    ))
}

/// Reduced learning rate for the N = 10 runs; the reference peak of 2.0
/// diverges at this size.
fn n10_config(coupling: f64, max_iter: usize) -> RunConfiguration {
    let mut c = RunConfiguration::new(ModelConfig::new(10, 2.5, coupling));
    c.seed = 1;
    c.optimizer.max_iter = max_iter;
    c.optimizer.learning_rate = LearningRateSchedule {
        initial: 0.1,
        peak: 0.2,
        warmup: 75,
        decay: 0.999,
    };
    c
}

struct TrainedPoint {
    coupling: f64,
    relative_error: f64,
    v_score: f64,
    iterations: usize,
    cpu_seconds: f64,
}

fn train_n10_points(scratch: &Path) -> Result<Vec<TrainedPoint>> {
    let mut out = Vec::new();
    for (coupling, max_iter) in [(-2.09, 200), (0.0, 200), (4.75, 500)] {
        let config = n10_config(coupling, max_iter);
        let dir = scratch.join(format!("n10_{coupling}"));
        let start = process_cpu_time();
        let summary = cmd_train(&config, &dir, None)?;
        let cpu_seconds = (process_cpu_time() - start).as_secs_f64();
        let exact = cmd_exact(&config.model, Some(&dir), None)?;
        let cmp = exact.checkpoint.expect("checkpoint comparison requested");
        out.push(TrainedPoint {
            coupling,
            relative_error: cmp.relative_error,
            v_score: cmp.v_score,
            iterations: summary.iterations_completed,
            cpu_seconds,
        });
    }
    Ok(out)
}

fn oracle_energies(points: &[TrainedPoint]) -> Verdict {
    let passed = points
        .iter()
        .all(|p| p.relative_error <= 1e-3 && p.iterations <= 500 && p.cpu_seconds <= 600.0);
    let detail = points
        .iter()
        .map(|p| {
            format!(
                "J={}: rel err {:.2e} after {} iterations, {:.0} s CPU",
                p.coupling, p.relative_error, p.iterations, p.cpu_seconds
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Verdict::new(passed, detail)
}

fn v_scores(points: &[TrainedPoint]) -> Result<Verdict> {
    // Exact eigenstates, both exhaustively and from sampled local energies.
    let mut worst_exact = 0.0f64;
    for coupling in [-2.09, 0.5, 4.75] {
        let model = TransverseFieldIsing::standard(10, 2.5, coupling)?;
        let solution = cached_ground_state(&model, None)?;
        let log_psi = exact_log_psi(&solution);
        let (energy, variance) = exhaustive_energy(&model, &log_psi)?;
        worst_exact = worse(worst_exact, v_score_from_moments(energy, variance, 10));
        let config = SamplerConfig {
            n_chains: 64,
            samples_per_iteration: 4096,
            seed: 3,
            ..SamplerConfig::default()
        };
        let mut sampler = SamplerState::initialize(&config, 10, &log_psi)?;
        let batch = sampler.sample_batch(&log_psi)?;
        let local: Vec<f64> = batch
            .configurations
            .iter()
            .map(|s| model.local_energy(s, |x| log_psi(x).unwrap_or(f64::NAN)))
            .collect::<Result<_>>()?;
        let sampled = v_score(&local, 10)?.value.unwrap_or(f64::NAN);
        worst_exact = worse(worst_exact, sampled);
    }
    let worst_trained = points.iter().map(|p| p.v_score).fold(0.0, worse);
    let detail = format!(
        "exact eigenstates max {worst_exact:.2e}; trained {}",
        points
            .iter()
            .map(|p| format!("J={}: {:.2e}", p.coupling, p.v_score))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(Verdict::new(worst_exact < 1e-10 && worst_trained <= 1e-3, detail))
}

fn renyi_entropy() -> Result<Verdict> {
    let mut passed = true;
    let mut parts = Vec::new();
    for (label, coupling) in [("J=0", 0.0), ("J=-10", -10.0), ("J=-2.1", -2.1)] {
        let model = TransverseFieldIsing::standard(8, 2.5, coupling)?;
        let solution = cached_ground_state(&model, None)?;
        let exact = exact_observables(&solution, Wavevector::for_coupling(coupling))?.s2;
        let log_psi = exact_log_psi(&solution);
        let config = SamplerConfig {
            n_chains: 64,
            samples_per_iteration: 64 * 256,
            seed: 11,
            ..SamplerConfig::default()
        };
        let mut sampler = SamplerState::initialize(&config, 8, &log_psi)?;
        let batch = sampler.sample_batch(&log_psi)?;
        let r = renyi2_from_batch(&batch.configurations, &log_psi)?;
        let ok = r.s2.is_finite() && (r.s2 - exact).abs() <= 3.0 * r.error + 1e-9;
        passed &= ok;
        parts.push(format!("{label}: {:.4} ± {:.4} vs exact {exact:.4}", r.s2, r.error));
    }
    Ok(Verdict::new(passed, parts.join("; ")))
}

fn sampler_correctness() -> Result<Verdict> {
    let log_psi = |s: &[i8]| -> Result<f64> {
        let s: Vec<f64> = s.iter().map(|&v| v as f64).collect();
        Ok(0.4 * s[0] * s[1] - 0.3 * s[1] * s[2] + 0.25 * s[2] * s[3] + 0.5 * s[0] - 0.2 * s[3] + 0.1 * s[1])
    };
    let weights: Vec<f64> = (0..16).map(|i| (2.0 * log_psi(&spins_from_index(i, 4)).unwrap()).exp()).collect();
    let total: f64 = weights.iter().sum();
    let config = SamplerConfig {
        n_chains: 8,
        samples_per_iteration: 1_000_000,
        decorrelation_steps: Some(1),
        seed: 5,
        ..SamplerConfig::default()
    };
    let mut sampler = SamplerState::initialize(&config, 4, &log_psi)?;
    let batch = sampler.sample_batch(&log_psi)?;
    let mut counts = [0usize; 16];
    for s in &batch.configurations {
        counts[index_from_spins(s)] += 1;
    }
    let m = batch.len() as f64;
    let tv = 0.5
        * counts
            .iter()
            .zip(&weights)
            .map(|(&c, w)| (c as f64 / m - w / total).abs())
            .sum::<f64>();
    let local = batch.counters.proposed(MoveType::Local) as f64;
    let global = batch.counters.proposed(MoveType::Global) as f64;
    let steps = local + global;
    let p = config.local_probability();
    let ratio = local / global;
    let sigma = (p * (1.0 - p) / steps).sqrt() / (1.0 - p).powi(2);
    let accepted_both = batch.counters.accepted(MoveType::Local) > 0 && batch.counters.accepted(MoveType::Global) > 0;
    Ok(Verdict::new(
        tv < 0.01 && (ratio - 3.0).abs() <= 3.0 * sigma && accepted_both,
        format!("TV {tv:.4} after {steps} steps; local/global {ratio:.4} (3σ = {:.4})", 3.0 * sigma),
    ))
}

fn kac_table() -> Result<Verdict> {
    let kac = CouplingModel::new(6.0, 1.0, 1.0, 1000, true)?.effective_kac();
    let limit = asymptotic_kac_factor(6.0, 1.0)?;
    let mut passed = (kac - limit).abs() < 1e-9;
    let mut parts = vec![format!("Ñ = {kac:.5}")];
    for (label, j_c, expected) in [("FM", -2.963, 1.0242), ("AFM", 3.143, 0.9655)] {
        let h = derived_critical_quantities(j_c, kac)?.h_tilde;
        let deviation = (h - expected).abs() / expected;
        passed &= deviation < 0.005;
        parts.push(format!("{label} h̃_c {h:.4} vs {expected} ({:.3}%)", 100.0 * deviation));
    }
    Ok(Verdict::new(passed, parts.join("; ")))
}

fn synthetic_recovery() -> Result<Verdict> {
    let truth = CriticalParameters {
        j_c: 1.0,
        nu: 1.0,
        beta: 0.125,
    };
    let guess = CriticalParameters {
        j_c: 1.02,
        nu: 0.8,
        beta: 0.2,
    };
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    let mut passed = true;
    for rep in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
        let data = synthetic_dataset(&[50, 100, 150], 21, (-3.0, 3.0), truth, 0.01, &mut rng)?;
        let fit = fit_critical(&data, guess, &FitOptions::default())?;
        let e = (
            (fit.j_c - truth.j_c).abs() / truth.j_c,
            (fit.nu - truth.nu).abs() / truth.nu,
            (fit.beta - truth.beta).abs() / truth.beta,
        );
        passed &= e.0 < 0.01 && e.1 < 0.05 && e.2 < 0.05;
        worst = (worst.0.max(e.0), worst.1.max(e.1), worst.2.max(e.2));
    }
    Ok(Verdict::new(
        passed,
        format!(
            "worst relative errors over 10 repetitions: J_c {:.2}%, ν {:.2}%, β {:.2}%",
            100.0 * worst.0,
            100.0 * worst.1,
            100.0 * worst.2
        ),
    ))
}

fn exact_criticality(cache: &Path) -> Result<Verdict> {
    let mut records = Vec::new();
    for size in [8, 10, 12] {
        for k in 0..=20 {
            let coupling = 2.0 + 0.125 * k as f64;
            let model = TransverseFieldIsing::standard(size, 6.0, coupling)?;
            let solution = cached_ground_state(&model, Some(cache))?;
            let m2 = exact_observables(&solution, Wavevector::for_coupling(coupling))?.m2;
            records.push(ScalingRecord {
                size,
                coupling,
                value: m2,
                error: 0.01 * m2,
            });
        }
    }
    let data = ScalingDataset::new(records)?;
    let options = FitOptions {
        window: FitWindow {
            j_min: 2.5,
            j_max: 4.0,
        },
        ..FitOptions::default()
    };
    let guess = CriticalParameters {
        j_c: 3.0,
        nu: 1.0,
        beta: 0.125,
    };
    let fit = fit_critical(&data, guess, &options)?;
    let deviation = (fit.j_c - 3.143).abs() / 3.143;
    Ok(Verdict::new(
        deviation <= 0.15 && (0.6..=1.6).contains(&fit.nu),
        format!(
            "J_c {:.3} ({:.1}% from 3.143), ν {:.2}, β {:.3}",
            fit.j_c,
            100.0 * deviation,
            fit.nu,
            fit.beta
        ),
    ))
}

fn symmetry_invariants() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_vit = 0.0f64;
    for size in [10, 20, 50] {
        let h = VitHyperparameters::table_one(size)?;
        let d = h.token_dim;
        let vit = AnsatzSpec::Vit(h).build()?;
        for _ in 0..10 {
            let params = random_parameters(&vit, &mut rng, 0.1);
            let config = SpinConfiguration::new(random_spins(&mut rng, size))?;
            let base = vit.log_psi(&params, config.spins())?;
            for k in 1..size / d {
                let shifted = vit.log_psi(&params, config.shifted(k * d).spins())?;
                worst_vit = worse(worst_vit, (shifted - base).abs() / base.abs().max(1.0));
            }
        }
    }
    let mut worst_diag = 0.0f64;
    for (size, coupling) in [(10, -2.09), (13, 4.75), (50, 1.0)] {
        let model = TransverseFieldIsing::standard(size, 2.5, coupling)?;
        for _ in 0..10 {
            let config = SpinConfiguration::new(random_spins(&mut rng, size))?;
            let base = model.diagonal_energy(config.spins());
            let scale = base.abs().max(1.0);
            worst_diag = worse(worst_diag, (model.diagonal_energy(config.inverted().spins()) - base).abs() / scale);
            for k in 1..size {
                worst_diag = worse(worst_diag, (model.diagonal_energy(config.shifted(k).spins()) - base).abs() / scale);
            }
        }
    }
    Ok(Verdict::new(
        worst_vit < 1e-12 && worst_diag < 1e-12,
        format!("ViT token-shift deviation {worst_vit:.1e}; diagonal energy shift/flip deviation {worst_diag:.1e}"),
    ))
}

fn determinism() -> Result<Verdict> {
    let mut passed = true;
    let mut parts = Vec::new();
    for spec in [
        AnsatzSpec::Vit(VitHyperparameters::table_one(10)?),
        AnsatzSpec::Rbm { size: 10, density: 2 },
    ] {
        let model = TransverseFieldIsing::standard(10, 2.5, -1.0)?;
        let ansatz = spec.build()?;
        let sampler = SamplerConfig {
            n_chains: 32,
            samples_per_iteration: 512,
            seed: 21,
            ..SamplerConfig::default()
        };
        let optimizer = OptimizerConfig {
            max_iter: 6,
            ..OptimizerConfig::default()
        };
        let run = || -> Result<Vec<u64>> {
            let out = train(&model, &ansatz, &sampler, &optimizer, 4, &TrainOptions::default())?;
            Ok(out.trace.iter().flat_map(|r| [r.energy.to_bits(), r.variance.to_bits()]).collect())
        };
        let (a, b) = (run()?, run()?);
        let same = a == b && !a.is_empty();
        passed &= same;
        parts.push(format!("{}: {} values {}", ansatz.name(), a.len(), if same { "identical" } else { "differ" }));
    }
    parts.push(format!("{} worker thread(s)", rayon::current_num_threads()));
    Ok(Verdict::new(passed, parts.join("; ")))
}

fn comparison_harness(scratch: &Path) -> Result<Verdict> {
    let mut config = RunConfiguration::new(ModelConfig::new(50, 2.5, 0.0));
    config.ansatz = AnsatzConfig::default();
    config.seed = 2;
    config.sampler = SamplerConfig {
        n_chains: 16,
        samples_per_iteration: 128,
        burn_in_steps: Some(100),
        ..SamplerConfig::default()
    };
    config.optimizer = OptimizerConfig {
        max_iter: 500,
        learning_rate: LearningRateSchedule {
            initial: 0.02,
            peak: 0.05,
            warmup: 75,
            decay: 0.999,
        },
        diagonal_shift_start: 0.1,
        diagonal_shift_end: 0.01,
        ..OptimizerConfig::default()
    };
    let couplings = [-4.0, -3.0, -2.09, -1.0, 0.0, 1.0, 2.0, 3.0, 4.75, 6.0];
    let budget = Budget {
        seconds: 10.0,
        clock: Clock::Cpu,
    };
    let out = scratch.join("compare");
    let report = cmd_compare(&config, &couplings, &[1, 2, 4], budget, &out)?;
    let architectures = ["vit", "rbm1", "rbm2", "rbm4"];
    let complete = report.rows.len() == couplings.len() * architectures.len()
        && architectures
            .iter()
            .all(|a| report.rows.iter().filter(|r| r.architecture == *a).count() == couplings.len());
    let in_budget = report.rows.iter().all(|r| r.within_budget);
    let curves = report.rows.iter().all(|r| r.status == "ok" && r.v_score.is_finite());
    let counts = &report.parameters;
    let rbm1 = counts.rbm.iter().find(|r| r.density == 1).map_or(0, |r| r.complex_equivalent);
    let breakdown_total: usize = counts.vit_breakdown.iter().map(|(_, n)| n).sum();
    let files = ["compare.csv", "compare.json", "parameters.json", "vscore.svg"]
        .iter()
        .all(|f| out.join(f).is_file());
    let slowest = report.rows.iter().map(|r| r.elapsed_seconds).fold(0.0f64, f64::max);
    let breakdown: Vec<String> = counts.vit_breakdown.iter().map(|(k, n)| format!("{k} {n}")).collect();
    Ok(Verdict::new(
        complete && in_budget && curves && rbm1 == 5100 && breakdown_total == counts.vit && files,
        format!(
            "{} rows, slowest point {slowest:.1} s of {} s, all V-scores finite: {curves}; RBM density 1 = {rbm1} \
             (complex equivalent); ViT {} vs reference {} [{}]; ViT lowest V-score at J = {:?}",
            report.rows.len(),
            budget.seconds,
            counts.vit,
            counts.vit_reference,
            breakdown.join(", "),
            report.vit_best_at
        ),
    ))
}

#[test]
fn acceptance_criteria() {
    let scratch = tempfile::tempdir().unwrap();
    let cache = scratch.path().join("exact-cache");
    let mut trained: Option<Vec<TrainedPoint>> = None;
    let mut failures = Vec::new();
    let names = [
        "gradient fidelity",
        "oracle energies",
        "V-score",
        "Renyi-2 estimator",
        "sampler correctness",
        "Kac factor table",
        "FSSA synthetic recovery",
        "FSSA on exact data",
        "symmetry invariants",
        "determinism",
        "comparison harness",
    ];
    // `LRNQS_CRITERIA=1,5` runs a subset.
    let selected: Option<Vec<usize>> = std::env::var("LRNQS_CRITERIA")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    for (k, name) in names.iter().enumerate() {
        let id = k + 1;
        let wanted = |i: usize| selected.as_ref().map_or(true, |s| s.contains(&i));
        // Criterion 3 reuses the runs from criterion 2.
        if !wanted(id) && !(id == 2 && wanted(3)) {
            continue;
        }
        let start = Instant::now();
        let result = match id {
            1 => gradient_fidelity(),
            2 => train_n10_points(scratch.path()).map(|points| {
                let v = oracle_energies(&points);
                trained = Some(points);
                v
            }),
            3 => match &trained {
                Some(points) => v_scores(points),
                None => Ok(Verdict::new(false, "trained runs unavailable")),
            },
            4 => renyi_entropy(),
            5 => sampler_correctness(),
            6 => kac_table(),
            7 => synthetic_recovery(),
            8 => exact_criticality(&cache),
            9 => symmetry_invariants(),
            10 => determinism(),
            _ => comparison_harness(scratch.path()),
        };
        let verdict = result.unwrap_or_else(|e| Verdict::new(false, format!("error: {e}")));
        report(id, name, &verdict, start.elapsed().as_secs_f64());
        if !verdict.passed {
            failures.push(id);
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
