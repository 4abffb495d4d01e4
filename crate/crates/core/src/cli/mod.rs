//! Command-line interface.

pub mod commands;
pub mod svg;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{AnsatzConfig, ModelConfig, RunConfiguration};
use crate::error::{Error, Result};
use crate::fssa::{CriticalParameters, FitWindow, ScalingDataset};
use crate::timing::{Budget, Clock};

pub use commands::*;

/// Environment variable selecting the worker-thread count.
pub const THREADS_ENV: &str = "LRNQS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "lrnqs", version, about = "Neural quantum states for the long-range transverse-field Ising chain")]
pub struct Cli {
    /// Seed for parameter initialisation and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// Values that override the configuration file.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Chain length N.
    #[arg(long = "size", short = 'N')]
    pub size: Option<usize>,
    /// Decay exponent α.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    /// Coupling J.
    #[arg(long = "coupling", short = 'J', allow_hyphen_values = true)]
    pub coupling: Option<f64>,
    /// Transverse field h_x.
    #[arg(long)]
    pub field: Option<f64>,
    /// Self-interaction constant b.
    #[arg(long, allow_hyphen_values = true)]
    pub b: Option<f64>,
    /// Disable the Kac normalisation.
    #[arg(long)]
    pub no_kac: bool,
    /// Ansatz type: vit, rbm or mlp.
    #[arg(long, value_parser = ["vit", "rbm", "mlp"])]
    pub ansatz: Option<String>,
    /// Hidden-unit density for the RBM.
    #[arg(long)]
    pub density: Option<usize>,
    /// Number of SR iterations.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Samples per iteration.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Number of Markov chains.
    #[arg(long)]
    pub chains: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one wave function and write its run directory.
    Train {
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Continue from a run or checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Time budget in seconds (process CPU time unless --wall-clock).
        #[arg(long)]
        budget: Option<f64>,
        /// Measure the budget in wall-clock time instead of CPU time.
        #[arg(long)]
        wall_clock: bool,
    },
    /// Phase-diagram sweep over α and J.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        /// Couplings: `a,b,c` or `start:stop:step`.
        #[arg(long, allow_hyphen_values = true)]
        j_grid: Grid,
        /// Decay exponents: `a,b,c` or `start:stop:step`.
        #[arg(long, allow_hyphen_values = true)]
        alpha_grid: Grid,
        /// Output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Transformer against RBMs at a fixed budget per coupling.
    Compare {
        #[command(flatten)]
        overrides: Overrides,
        /// Couplings: `a,b,c` or `start:stop:step`.
        #[arg(long, allow_hyphen_values = true)]
        j_grid: Grid,
        /// RBM hidden-unit densities.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        densities: Vec<usize>,
        /// Seconds per training point.
        #[arg(long)]
        budget: f64,
        /// Measure the budget in wall-clock time instead of CPU time.
        #[arg(long)]
        wall_clock: bool,
        /// Output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Exact ground state for N <= 14.
    Exact {
        #[command(flatten)]
        overrides: Overrides,
        /// Compare against a trained checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory caching exact ground states.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Finite-size-scaling collapse of a CSV with columns N,J,value,error.
    Fssa {
        /// CSV with columns `N,J,value,error`.
        #[arg(long)]
        input: PathBuf,
        /// Initial guess `J_c,nu,beta`.
        #[arg(long, allow_hyphen_values = true, value_delimiter = ',', num_args = 3, required = true)]
        guess: Vec<f64>,
        /// Coupling window `min,max`.
        #[arg(long, allow_hyphen_values = true, value_delimiter = ',', num_args = 2)]
        window: Option<Vec<f64>>,
        /// Kac factor for h̃_c and θ_c.
        #[arg(long)]
        kac: Option<f64>,
        /// Use the infinite-ring Kac factor of this α instead.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        b: f64,
        /// Output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Measure observables of a trained checkpoint.
    Observe {
        #[command(flatten)]
        overrides: Overrides,
        /// Run or checkpoint directory to measure.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// List of values given as `a,b,c` or as an inclusive `start:stop:step` range.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid(pub Vec<f64>);

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}"));
        let parts: Vec<&str> = s.split(':').collect();
        let values = match parts.as_slice() {
            [start, stop, step] => {
                let (a, b, d) = (parse(start)?, parse(stop)?, parse(step)?);
                if !(d > 0.0) || b < a {
                    return Err(format!("range {s:?} needs start <= stop and step > 0"));
                }
                let count = ((b - a) / d + 1e-9).floor() as usize + 1;
                (0..count).map(|k| a + k as f64 * d).collect()
            }
            [_] => s.split(',').map(parse).collect::<std::result::Result<Vec<_>, _>>()?,
            _ => return Err(format!("expected a list or start:stop:step, got {s:?}")),
        };
        if values.is_empty() {
            return Err("grid is empty".into());
        }
        Ok(Grid(values))
    }
}

/// Process exit code for an error: 3 for numerical failures, 2 otherwise.
pub fn exit_code(error: &Error) -> u8 {
    match error {
        Error::Numerical(_) | Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

fn resolve_config(cli_config: Option<&Path>, seed: Option<u64>, o: &Overrides) -> Result<RunConfiguration> {
    let mut config = match cli_config {
        Some(path) => RunConfiguration::from_path(path)?,
        None => {
            let (Some(size), Some(alpha), Some(coupling)) = (o.size, o.alpha, o.coupling) else {
                return Err(Error::Config(
                    "without --config, --size, --alpha and --coupling are required".into(),
                ));
            };
            RunConfiguration::new(ModelConfig::new(size, alpha, coupling))
        }
    };
    let m = &mut config.model;
    if let Some(v) = o.size {
        m.size = v;
    }
    if let Some(v) = o.alpha {
        m.alpha = v;
    }
    if let Some(v) = o.coupling {
        m.coupling = v;
    }
    if let Some(v) = o.field {
        m.field = v;
    }
    if let Some(v) = o.b {
        m.b = v;
    }
    if o.no_kac {
        m.kac_on = false;
    }
    match o.ansatz.as_deref() {
        Some("vit") if !matches!(config.ansatz, AnsatzConfig::Vit { .. }) => config.ansatz = AnsatzConfig::default(),
        Some("rbm") => config.ansatz = AnsatzConfig::rbm(o.density.unwrap_or(1)),
        Some("mlp") if !matches!(config.ansatz, AnsatzConfig::Mlp { .. }) => {
            config.ansatz = AnsatzConfig::Mlp { hidden: None }
        }
        _ => {}
    }
    if let (Some(d), AnsatzConfig::Rbm { density }) = (o.density, &mut config.ansatz) {
        *density = d;
    }
    if let Some(v) = o.max_iter {
        config.optimizer.max_iter = v;
    }
    if let Some(v) = o.samples {
        config.sampler.samples_per_iteration = v;
    }
    if let Some(v) = o.chains {
        config.sampler.n_chains = v;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn output_dir(flag: Option<PathBuf>, config: Option<&RunConfiguration>, default: &str) -> PathBuf {
    flag.or_else(|| config.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from(default))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn clock(wall: bool) -> Clock {
    if wall {
        Clock::Wall
    } else {
        Clock::Cpu
    }
}

/// Configure the worker pool. Ignored if the pool is already running.
pub fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config(format!("{THREADS_ENV} must be at least 1")));
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Train {
            overrides,
            output,
            resume,
            budget,
            wall_clock,
        } => {
            let mut config = resolve_config(config_path, cli.seed, &overrides)?;
            if let Some(seconds) = budget {
                config.budget = Some(Budget {
                    seconds,
                    clock: clock(wall_clock),
                });
                config.validate()?;
            }
            let dir = output_dir(output, Some(&config), "lrnqs-run");
            print_json(&cmd_train(&config, &dir, resume.as_deref())?)
        }
        Command::Sweep {
            overrides,
            j_grid,
            alpha_grid,
            output,
        } => {
            // The grids supply J and α, so the flags are optional here.
            let mut overrides = overrides;
            overrides.coupling = overrides.coupling.or(j_grid.0.first().copied());
            overrides.alpha = overrides.alpha.or(alpha_grid.0.first().copied());
            let config = resolve_config(config_path, cli.seed, &overrides)?;
            let dir = output_dir(output, Some(&config), "lrnqs-sweep");
            print_json(&cmd_sweep(&config, &alpha_grid.0, &j_grid.0, &dir)?)
        }
        Command::Compare {
            overrides,
            j_grid,
            densities,
            budget,
            wall_clock,
            output,
        } => {
            let mut overrides = overrides;
            overrides.coupling = overrides.coupling.or(j_grid.0.first().copied());
            let config = resolve_config(config_path, cli.seed, &overrides)?;
            let dir = output_dir(output, Some(&config), "lrnqs-compare");
            let budget = Budget {
                seconds: budget,
                clock: clock(wall_clock),
            };
            print_json(&cmd_compare(&config, &j_grid.0, &densities, budget, &dir)?)
        }
        Command::Exact {
            overrides,
            checkpoint,
            cache,
            output,
        } => {
            let config = resolve_config(config_path, cli.seed, &overrides)?;
            let report = cmd_exact(&config.model, checkpoint.as_deref(), cache.as_deref())?;
            if let Some(path) = output {
                std::fs::write(&path, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
            }
            print_json(&report)
        }
        Command::Fssa {
            input,
            guess,
            window,
            kac,
            alpha,
            b,
            output,
        } => {
            let dataset = ScalingDataset::read_csv(&input)?;
            let guess = CriticalParameters {
                j_c: guess[0],
                nu: guess[1],
                beta: guess[2],
            };
            let window = match window.as_deref() {
                Some([lo, hi]) => FitWindow { j_min: *lo, j_max: *hi },
                _ => FitWindow::ALL,
            };
            let kac = kac_for_table(kac, alpha, b)?;
            let dir = output_dir(output, None, "lrnqs-fssa");
            print_json(&cmd_fssa(&dataset, guess, window, kac, &dir)?)
        }
        Command::Observe {
            overrides,
            checkpoint,
            output,
        } => {
            let config = resolve_config(config_path, cli.seed, &overrides)?;
            let dir = output_dir(output, Some(&config), "lrnqs-observe");
            print_json(&cmd_observe(&config, &checkpoint, &dir)?)
        }
    }
}
