//! Metropolis–Hastings sampling of `|ψ|²` with many independent chains.
//!
//! Each step proposes either a single uniformly chosen spin flip or the
//! inversion of every spin, with weights 3:1 by default. Both proposals are
//! symmetric, so the acceptance probability is `min(1, |ψ(s')/ψ(s)|²)`.
//!
//! Every chain owns a ChaCha8 stream selected by its chain id, so the sample
//! stream depends only on the seed and the number of chains, never on how
//! chains are scheduled across threads.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{format_spins, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub samples_per_iteration: usize,
    /// Steps per chain at initialisation; `None` means `10·N`.
    pub burn_in_steps: Option<usize>,
    /// Steps between retained samples; `None` means `N`.
    pub decorrelation_steps: Option<usize>,
    pub local_move_weight: f64,
    pub global_move_weight: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 1024,
            samples_per_iteration: 4096,
            burn_in_steps: None,
            decorrelation_steps: None,
            local_move_weight: 3.0,
            global_move_weight: 1.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.samples_per_iteration == 0 {
            return Err(Error::Config("sampler needs at least one chain and one sample".into()));
        }
        if self.samples_per_iteration % self.n_chains != 0 {
            return Err(Error::Config(format!(
                "samples_per_iteration {} is not divisible by n_chains {}",
                self.samples_per_iteration, self.n_chains
            )));
        }
        let weights_ok = |w: f64| w.is_finite() && w > 0.0;
        if !weights_ok(self.local_move_weight) || !weights_ok(self.global_move_weight) {
            return Err(Error::Config("move weights must be positive and finite".into()));
        }
        if self.decorrelation_steps == Some(0) {
            return Err(Error::Config("decorrelation_steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn samples_per_chain(&self) -> usize {
        self.samples_per_iteration / self.n_chains
    }

    pub fn burn_in_for(&self, size: usize) -> usize {
        self.burn_in_steps.unwrap_or(10 * size)
    }

    pub fn decorrelation_for(&self, size: usize) -> usize {
        self.decorrelation_steps.unwrap_or(size)
    }

    /// Probability of choosing the single-flip move.
    pub fn local_probability(&self) -> f64 {
        self.local_move_weight / (self.local_move_weight + self.global_move_weight)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveType {
    Local,
    Global,
}

impl MoveType {
    pub fn as_str(self) -> &'static str {
        match self {
            MoveType::Local => "local",
            MoveType::Global => "global",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceCounters {
    pub local_proposed: u64,
    pub local_accepted: u64,
    pub global_proposed: u64,
    pub global_accepted: u64,
    /// Candidates rejected because `log ψ` was not finite.
    pub non_finite: u64,
}

impl AcceptanceCounters {
    pub fn record(&mut self, kind: MoveType, accepted: bool) {
        match kind {
            MoveType::Local => {
                self.local_proposed += 1;
                self.local_accepted += accepted as u64;
            }
            MoveType::Global => {
                self.global_proposed += 1;
                self.global_accepted += accepted as u64;
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.local_proposed += other.local_proposed;
        self.local_accepted += other.local_accepted;
        self.global_proposed += other.global_proposed;
        self.global_accepted += other.global_accepted;
        self.non_finite += other.non_finite;
    }

    pub fn proposed(&self, kind: MoveType) -> u64 {
        match kind {
            MoveType::Local => self.local_proposed,
            MoveType::Global => self.global_proposed,
        }
    }

    pub fn accepted(&self, kind: MoveType) -> u64 {
        match kind {
            MoveType::Local => self.local_accepted,
            MoveType::Global => self.global_accepted,
        }
    }

    /// Acceptance rate, `NaN` if no move of this kind was proposed.
    pub fn rate(&self, kind: MoveType) -> f64 {
        let p = self.proposed(kind);
        if p == 0 {
            f64::NAN
        } else {
            self.accepted(kind) as f64 / p as f64
        }
    }
}

/// One Markov chain: current configuration, its cached `log ψ`, and a
/// private random stream.
#[derive(Clone, Debug)]
pub struct Chain {
    pub id: usize,
    pub spins: Vec<i8>,
    pub log_psi: f64,
    pub rng: ChaCha8Rng,
    pub counters: AcceptanceCounters,
}

impl Chain {
    fn new(seed: u64, id: usize, size: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64);
        let spins = (0..size).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        Self {
            id,
            spins,
            log_psi: f64::NAN,
            rng,
            counters: AcceptanceCounters::default(),
        }
    }
}

/// Negate one uniformly chosen spin; returns the candidate and the site.
pub fn propose_local_flip<R: Rng + ?Sized>(spins: &[i8], rng: &mut R) -> (Vec<i8>, usize) {
    let site = rng.random_range(0..spins.len());
    let mut candidate = spins.to_vec();
    candidate[site] = -candidate[site];
    (candidate, site)
}

/// Negate every spin.
pub fn propose_global_inversion(spins: &[i8]) -> Vec<i8> {
    spins.iter().map(|&s| -s).collect()
}

/// One Metropolis–Hastings update of `chain`. A non-finite `log ψ` at the
/// candidate counts as a rejection and is tallied in `counters.non_finite`.
pub fn metropolis_step<F>(chain: &mut Chain, local_probability: f64, log_psi: &F) -> Result<(MoveType, bool)>
where
    F: Fn(&[i8]) -> Result<f64> + ?Sized,
{
    let kind = if chain.rng.random::<f64>() < local_probability {
        MoveType::Local
    } else {
        MoveType::Global
    };
    let candidate = match kind {
        MoveType::Local => propose_local_flip(&chain.spins, &mut chain.rng).0,
        MoveType::Global => propose_global_inversion(&chain.spins),
    };
    let u: f64 = chain.rng.random();
    let proposed = match log_psi(&candidate) {
        Ok(v) => v,
        Err(Error::NonFinite { .. }) => f64::NAN,
        Err(e) => return Err(e),
    };
    let accepted = if proposed.is_finite() {
        // ln u < 2Δ, written to avoid overflow of exp.
        u.ln() < 2.0 * (proposed - chain.log_psi)
    } else {
        chain.counters.non_finite += 1;
        false
    };
    if accepted {
        chain.spins = candidate;
        chain.log_psi = proposed;
    }
    chain.counters.record(kind, accepted);
    Ok((kind, accepted))
}

/// Serializable snapshot of a chain; the random stream is captured by its
/// word position so a restored chain continues bit-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSnapshot {
    pub spins: String,
    pub word_pos: String,
}

#[derive(Clone, Debug)]
pub struct SamplerState {
    config: SamplerConfig,
    size: usize,
    chains: Vec<Chain>,
}

/// Samples from one call to [`SamplerState::sample_batch`], ordered
/// round-robin across chains (sample `k` comes from chain `k mod n_chains`).
#[derive(Clone, Debug, Default)]
pub struct SampleBatch {
    pub configurations: Vec<Vec<i8>>,
    pub log_psi: Vec<f64>,
    pub counters: AcceptanceCounters,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.configurations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configurations.is_empty()
    }
}

fn chain_error(id: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { stage, config } => Error::NonFinite {
            stage: format!("chain {id}: {stage}"),
            config,
        },
        Error::Numerical(msg) => Error::Numerical(format!("chain {id}: {msg}")),
        other => other,
    }
}

impl SamplerState {
    /// Random initial configurations followed by the burn-in.
    pub fn initialize<F>(config: &SamplerConfig, size: usize, log_psi: &F) -> Result<Self>
    where
        F: Fn(&[i8]) -> Result<f64> + Sync + ?Sized,
    {
        config.validate()?;
        if size == 0 {
            return Err(Error::Config("sampler needs at least one spin".into()));
        }
        let chains = (0..config.n_chains).map(|id| Chain::new(config.seed, id, size)).collect();
        let mut state = Self {
            config: config.clone(),
            size,
            chains,
        };
        state.refresh(log_psi)?;
        let steps = config.burn_in_for(size);
        let p = config.local_probability();
        state.chains.par_iter_mut().try_for_each(|chain| {
            for _ in 0..steps {
                metropolis_step(chain, p, log_psi).map_err(|e| chain_error(chain.id, e))?;
            }
            chain.counters = AcceptanceCounters::default();
            Ok::<_, Error>(())
        })?;
        Ok(state)
    }

    /// Rebuild chains from snapshots (no burn-in).
    pub fn restore(config: &SamplerConfig, size: usize, snapshots: &[ChainSnapshot]) -> Result<Self> {
        config.validate()?;
        if snapshots.len() != config.n_chains {
            return Err(Error::Dimension {
                context: "chain snapshots",
                expected: config.n_chains,
                actual: snapshots.len(),
            });
        }
        let mut chains = Vec::with_capacity(snapshots.len());
        for (id, snap) in snapshots.iter().enumerate() {
            let spins: Vec<i8> = snap
                .spins
                .chars()
                .map(|c| match c {
                    '+' => Ok(1),
                    '-' => Ok(-1),
                    other => Err(Error::Config(format!("invalid spin character {other:?} in chain {id}"))),
                })
                .collect::<Result<_>>()?;
            if spins.len() != size {
                return Err(Error::Dimension {
                    context: "chain snapshot spins",
                    expected: size,
                    actual: spins.len(),
                });
            }
            let word_pos: u128 = snap
                .word_pos
                .parse()
                .map_err(|_| Error::Config(format!("invalid word position in chain {id}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(id as u64);
            rng.set_word_pos(word_pos);
            chains.push(Chain {
                id,
                spins,
                log_psi: f64::NAN,
                rng,
                counters: AcceptanceCounters::default(),
            });
        }
        Ok(Self {
            config: config.clone(),
            size,
            chains,
        })
    }

    pub fn snapshot(&self) -> Vec<ChainSnapshot> {
        self.chains
            .iter()
            .map(|c| ChainSnapshot {
                spins: format_spins(&c.spins),
                word_pos: c.rng.get_word_pos().to_string(),
            })
            .collect()
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn chains(&self) -> &[Chain] {
        &self.chains
    }

    /// Recompute every chain's cached `log ψ` (after a parameter update).
    pub fn refresh<F>(&mut self, log_psi: &F) -> Result<()>
    where
        F: Fn(&[i8]) -> Result<f64> + Sync + ?Sized,
    {
        self.chains.par_iter_mut().try_for_each(|chain| {
            let v = log_psi(&chain.spins).map_err(|e| chain_error(chain.id, e))?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    stage: format!("chain {} current configuration", chain.id),
                    config: format_spins(&chain.spins),
                });
            }
            chain.log_psi = v;
            Ok(())
        })
    }

    /// Refresh the cached amplitudes, then draw `samples_per_iteration`
    /// configurations with `decorrelation_steps` updates before each one.
    pub fn sample_batch<F>(&mut self, log_psi: &F) -> Result<SampleBatch>
    where
        F: Fn(&[i8]) -> Result<f64> + Sync + ?Sized,
    {
        self.refresh(log_psi)?;
        let per_chain = self.config.samples_per_chain();
        let spacing = self.config.decorrelation_for(self.size);
        let p = self.config.local_probability();
        let per_chain_samples: Vec<(Vec<(Vec<i8>, f64)>, AcceptanceCounters)> = self
            .chains
            .par_iter_mut()
            .map(|chain| {
                chain.counters = AcceptanceCounters::default();
                let mut out = Vec::with_capacity(per_chain);
                for _ in 0..per_chain {
                    for _ in 0..spacing {
                        metropolis_step(chain, p, log_psi).map_err(|e| chain_error(chain.id, e))?;
                    }
                    debug_assert!(
                        log_psi(&chain.spins).map_or(true, |v| v.to_bits() == chain.log_psi.to_bits()),
                        "cached log ψ out of date on chain {}",
                        chain.id
                    );
                    out.push((chain.spins.clone(), chain.log_psi));
                }
                Ok((out, chain.counters))
            })
            .collect::<Result<_>>()?;

        let mut batch = SampleBatch::default();
        for (_, counters) in &per_chain_samples {
            batch.counters.merge(counters);
        }
        for round in 0..per_chain {
            for (samples, _) in &per_chain_samples {
                let (spins, lp) = &samples[round];
                batch.configurations.push(spins.clone());
                batch.log_psi.push(*lp);
            }
        }
        Ok(batch)
    }
}

/// Appends per-move-type acceptance rows `(iteration, move_type, proposed,
/// accepted, rate)`, writing the header on first use.
pub struct AcceptanceLog {
    path: std::path::PathBuf,
    writer: csv::Writer<std::fs::File>,
}

impl AcceptanceLog {
    pub fn open(path: &Path) -> Result<Self> {
        let exists = path.exists() && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if !exists {
            writer.write_record(["iteration", "move_type", "proposed", "accepted", "rate"])?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn append(&mut self, iteration: usize, counters: &AcceptanceCounters) -> Result<()> {
        for kind in [MoveType::Local, MoveType::Global] {
            self.writer.write_record([
                iteration.to_string(),
                kind.as_str().to_string(),
                counters.proposed(kind).to_string(),
                counters.accepted(kind).to_string(),
                counters.rate(kind).to_string(),
            ])?;
        }
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{index_from_spins, SpinConfiguration};

    fn small_config(n_chains: usize, samples: usize) -> SamplerConfig {
        SamplerConfig {
            n_chains,
            samples_per_iteration: samples,
            seed: 7,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        assert!(small_config(3, 10).validate().is_err());
        let mut c = small_config(2, 4);
        c.global_move_weight = 0.0;
        assert!(c.validate().is_err());
        assert_eq!(SamplerConfig::default().local_probability(), 0.75);
    }

    #[test]
    fn single_spin_always_flips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, site) = propose_local_flip(&[1], &mut rng);
        assert_eq!((c, site), (vec![-1], 0));
    }

    #[test]
    fn local_flip_changes_one_site_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spins = vec![1i8; 10];
        let mut counts = [0usize; 10];
        let trials = 100_000;
        for _ in 0..trials {
            let (c, site) = propose_local_flip(&spins, &mut rng);
            assert_eq!(c.iter().zip(&spins).filter(|(a, b)| a != b).count(), 1);
            counts[site] += 1;
        }
        let p: f64 = 0.1;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 * p).abs() < 3.5 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn global_inversion_is_an_involution() {
        let neel = SpinConfiguration::neel(6);
        let flipped = propose_global_inversion(neel.spins());
        assert_eq!(flipped, neel.inverted().spins());
        assert_eq!(propose_global_inversion(&flipped), neel.spins());
    }

    #[test]
    fn uniform_amplitude_accepts_everything() {
        let uniform = |_: &[i8]| Ok(0.0);
        let mut state = SamplerState::initialize(&small_config(4, 8), 5, &uniform).unwrap();
        let batch = state.sample_batch(&uniform).unwrap();
        let c = batch.counters;
        assert_eq!(c.local_accepted, c.local_proposed);
        assert_eq!(c.global_accepted, c.global_proposed);
        assert_eq!(batch.len(), 8);
    }

    #[test]
    fn vanishing_amplitude_is_never_visited() {
        // ψ(all down) → 0 on a 1-spin system: the chain stays up.
        let lp = |s: &[i8]| Ok(if s[0] > 0 { 0.0 } else { -1e300 });
        let mut chain = Chain::new(1, 0, 1);
        chain.spins = vec![1];
        chain.log_psi = 0.0;
        for _ in 0..1000 {
            metropolis_step(&mut chain, 0.75, &lp).unwrap();
        }
        assert_eq!(chain.spins, vec![1]);
    }

    #[test]
    fn non_finite_candidates_are_rejected_and_flagged() {
        let lp = |s: &[i8]| Ok(if s[0] > 0 { 0.0 } else { f64::NAN });
        let mut chain = Chain::new(1, 0, 1);
        chain.spins = vec![1];
        chain.log_psi = 0.0;
        for _ in 0..50 {
            metropolis_step(&mut chain, 0.75, &lp).unwrap();
        }
        assert_eq!(chain.spins, vec![1]);
        assert_eq!(chain.counters.non_finite, 50);
    }

    #[test]
    fn two_spin_visit_frequencies_match_exact_distribution() {
        let log_psi = [0.3, -0.2, 0.5, -0.4];
        let lp = move |s: &[i8]| Ok(log_psi[index_from_spins(s)]);
        let weights: Vec<f64> = log_psi.iter().map(|l: &f64| (2.0 * l).exp()).collect();
        let z: f64 = weights.iter().sum();
        let mut state = SamplerState::initialize(&small_config(1, 1), 2, &lp).unwrap();
        let mut counts = [0usize; 4];
        let mut chain = state.chains[0].clone();
        let steps = 1_000_000;
        for _ in 0..steps {
            metropolis_step(&mut chain, 0.75, &lp).unwrap();
            counts[index_from_spins(&chain.spins)] += 1;
        }
        state.chains[0] = chain;
        for k in 0..4 {
            let p = weights[k] / z;
            let freq = counts[k] as f64 / steps as f64;
            // Autocorrelated chain: allow a generous multiple of the iid error.
            let sigma = (p * (1.0 - p) / steps as f64).sqrt();
            assert!((freq - p).abs() < 10.0 * sigma, "state {k}: {freq} vs {p}");
        }
    }

    #[test]
    fn samples_are_round_robin_and_reproducible() {
        let lp = |s: &[i8]| Ok(0.1 * s.iter().map(|&x| x as f64).sum::<f64>());
        let config = small_config(4, 12);
        let run = || {
            let mut state = SamplerState::initialize(&config, 6, &lp).unwrap();
            let a = state.sample_batch(&lp).unwrap();
            let b = state.sample_batch(&lp).unwrap();
            (a.configurations, b.configurations)
        };
        assert_eq!(run(), run());

        // A single-threaded pool produces the same stream.
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        assert_eq!(pool.install(run), run());
    }

    #[test]
    fn snapshot_restore_continues_identically() {
        let lp = |s: &[i8]| Ok(0.2 * (s[0] * s[1]) as f64 - 0.1 * s[2] as f64);
        let config = small_config(3, 6);
        let mut state = SamplerState::initialize(&config, 4, &lp).unwrap();
        state.sample_batch(&lp).unwrap();
        let snap = state.snapshot();
        let mut restored = SamplerState::restore(&config, 4, &snap).unwrap();
        assert_eq!(
            state.sample_batch(&lp).unwrap().configurations,
            restored.sample_batch(&lp).unwrap().configurations
        );
    }

    #[test]
    fn estimator_of_one_is_one() {
        let lp = |s: &[i8]| Ok(-0.3 * s[0] as f64);
        let mut state = SamplerState::initialize(&small_config(2, 10), 3, &lp).unwrap();
        let batch = state.sample_batch(&lp).unwrap();
        let mean: f64 = batch.configurations.iter().map(|_| 1.0).sum::<f64>() / batch.len() as f64;
        assert_eq!(mean, 1.0);
    }

    #[test]
    fn acceptance_log_writes_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("acceptance.csv");
        let mut counters = AcceptanceCounters::default();
        counters.record(MoveType::Local, true);
        counters.record(MoveType::Global, false);
        AcceptanceLog::open(&path).unwrap().append(0, &counters).unwrap();
        AcceptanceLog::open(&path).unwrap().append(1, &counters).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iteration,move_type,proposed,accepted,rate");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "0,local,1,1,1");
        assert_eq!(lines[4], "1,global,1,0,0");
    }
}
