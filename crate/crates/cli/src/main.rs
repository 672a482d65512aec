use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use feedback_ou::experiments::{
    cmd_adjudicate_eq13, cmd_analytic, cmd_fig1, cmd_fig2, cmd_simulate, cmd_single, cmd_verify_ou,
    write_adjudication, write_analytic, write_fig1, write_fig2, write_simulate, write_single,
    write_verify_ou, HeaderOptions, ScenarioConfig,
};
use feedback_ou::{Error, Result};

const WORKERS_ENV: &str = "FEEDBACK_SIM_WORKERS";

/// Atom in front of a mirror with time-delayed feedback and white phase noise.
#[derive(Parser, Debug)]
#[command(name = "feedback-sim", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON scenario file; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of noise realisations.
    #[arg(long, global = true)]
    paths: Option<u64>,
    /// Steps per delay interval, dt = τ/K.
    #[arg(long = "dt-divisor", global = true)]
    dt_divisor: Option<u32>,
    /// Feedback phase φ in radians.
    #[arg(long, global = true, allow_negative_numbers = true)]
    phi: Option<f64>,
    /// Noise strength γτ.
    #[arg(long = "gamma-tau", global = true)]
    gamma_tau: Option<f64>,
    /// Decay rate Γτ.
    #[arg(long = "Gamma-tau", global = true)]
    decay_tau: Option<f64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Horizon in units of τ.
    #[arg(long = "t-max", global = true)]
    t_max: Option<f64>,
    /// Worker threads for the ensemble [env: FEEDBACK_SIM_WORKERS].
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Omit the timestamp header line.
    #[arg(long = "no-timestamp", global = true)]
    no_timestamp: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ensemble mean population on [0, t_max].
    Simulate {
        /// Dump the trajectory of this single realisation instead of the ensemble.
        #[arg(long)]
        single: Option<u64>,
        /// With --single, also write the noise path here.
        #[arg(long = "noise-out", requires = "single")]
        noise_out: Option<PathBuf>,
    },
    /// Analytic reference curves.
    Analytic {
        #[arg(long, default_value_t = 301)]
        points: usize,
    },
    /// Population curves with and without feedback and noise.
    Fig1,
    /// Difference map over phase and time.
    Fig2 {
        #[arg(long = "phase-steps", default_value_t = 64)]
        phase_steps: usize,
        #[arg(long = "time-steps", default_value_t = 101)]
        time_steps: usize,
    },
    /// Lagged correlation of the feedback phase factors against the O-U kernel.
    VerifyOu {
        #[arg(long, default_value_t = 9)]
        lags: usize,
    },
    /// Scores both second-interval population formulas against the φ = 2π ensemble.
    #[command(name = "adjudicate-eq13")]
    AdjudicateEq13,
}

fn resolve(common: &Common) -> Result<ScenarioConfig> {
    let mut config = match &common.config {
        Some(path) => ScenarioConfig::from_json(&std::fs::read_to_string(path)?)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.master_seed = seed;
    }
    if let Some(n) = common.paths {
        config.n_paths = n;
    }
    if let Some(k) = common.dt_divisor {
        config.dt_divisor = k;
    }
    let tau = config.params.delay();
    if let Some(phi) = common.phi {
        config.params = config.params.with_phase(phi)?;
    }
    if let Some(g) = common.gamma_tau {
        config.params = config.params.with_noise_strength(g / tau)?;
    }
    if let Some(g) = common.decay_tau {
        config.params = config.params.with_decay_rate(g / tau)?;
    }
    if let Some(t) = common.t_max {
        config.t_max = t;
    }
    if let Some(out) = &common.out {
        config.output_path = Some(out.clone());
    }
    config.validate()?;
    Ok(config)
}

fn open(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn workers(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            Error::InvalidParameter(format!(
                "{WORKERS_ENV} must be a positive integer, got {v:?}"
            ))
        }),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve(&cli.common)?;
    if let Some(n) = workers(cli.common.workers)? {
        if n == 0 {
            return Err(Error::InvalidParameter("workers must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let header = HeaderOptions {
        timestamp: !cli.common.no_timestamp,
    };
    let out_path = config.output_path.clone();
    let mut out = open(out_path.as_ref())?;
    match cli.command {
        Command::Simulate {
            single: Some(index),
            noise_out,
        } => {
            let (path, trajectory) = cmd_single(&config, index)?;
            if let Some(p) = noise_out {
                let mut w = open(Some(&p))?;
                path.write_csv(&mut w)?;
                w.flush()?;
            }
            write_single(&mut out, &config, index, &trajectory, header)?;
        }
        Command::Simulate { single: None, .. } => {
            write_simulate(&mut out, &config, &cmd_simulate(&config)?, header)?
        }
        Command::Analytic { points } => {
            write_analytic(&mut out, &config, &cmd_analytic(&config, points)?, header)?
        }
        Command::Fig1 => write_fig1(&mut out, &config, &cmd_fig1(&config)?, header)?,
        Command::Fig2 {
            phase_steps,
            time_steps,
        } => write_fig2(
            &mut out,
            &config,
            &cmd_fig2(&config, phase_steps, time_steps)?,
            header,
        )?,
        Command::VerifyOu { lags } => {
            write_verify_ou(&mut out, &config, &cmd_verify_ou(&config, lags)?, header)?
        }
        Command::AdjudicateEq13 => {
            let report = cmd_adjudicate_eq13(&config)?;
            write_adjudication(&mut out, &config, &report, header)?;
            if out_path.is_some() {
                eprint!("{}", report.summary());
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("feedback-sim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
