use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use balred::harness::{
    fourdvar_demo, gramian_spectra, load_config, preset_with, run_experiment, write_report,
    ExperimentConfig, PRESETS,
};
use balred::{Error, Result};
use clap::{Parser, Subcommand};

/// Balanced-truncation experiments for reduced linear Gaussian inference.
#[derive(Parser, Debug)]
#[command(name = "balred", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every experiment in a config file (or a built-in preset).
    Run {
        config: String,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Master seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Also run experiments marked `large = true`.
        #[arg(long)]
        large: bool,
        #[arg(long)]
        no_plots: bool,
        /// Override a config key, e.g. `--set ranks=1-5`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Print the Hankel values of each balanced method at one end time.
    Gramians {
        config: String,
        #[arg(long = "te")]
        t_e: f64,
        /// Only this experiment section.
        #[arg(long)]
        experiment: Option<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Full and reduced incremental 4D-Var on the model discretized at `step`.
    Fourdvar {
        config: String,
        #[arg(long)]
        experiment: Option<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn parse_overrides(set: &[String]) -> Result<Vec<(String, String)>> {
    set.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))
        })
        .collect()
}

/// A path to an INI file, or the name of a preset.
fn configs(source: &str, overrides: &[(String, String)]) -> Result<Vec<ExperimentConfig>> {
    let path = Path::new(source);
    if path.exists() {
        load_config(path, overrides)
    } else if PRESETS.contains(&source) {
        Ok(vec![preset_with(source, overrides)?])
    } else {
        Err(Error::Config(format!(
            "{source} is neither a file nor a preset ({})",
            PRESETS.join(", ")
        )))
    }
}

fn select(all: Vec<ExperimentConfig>, name: Option<&str>) -> Result<Vec<ExperimentConfig>> {
    match name {
        None => Ok(all),
        Some(n) => {
            let chosen: Vec<_> = all.into_iter().filter(|c| c.name == n).collect();
            if chosen.is_empty() {
                return Err(Error::Config(format!("no experiment named {n:?}")));
            }
            Ok(chosen)
        }
    }
}

fn init_workers() -> Result<()> {
    let Ok(raw) = std::env::var("BALRED_WORKERS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Config(format!(
            "BALRED_WORKERS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    init_workers()?;
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            large,
            no_plots,
            set,
        } => {
            let mut overrides = parse_overrides(&set)?;
            if let Some(s) = seed {
                overrides.push(("seed".into(), s.to_string()));
            }
            for cfg in configs(&config, &overrides)? {
                if cfg.large && !large {
                    eprintln!("skipping {} (large; pass --large to run it)", cfg.name);
                    continue;
                }
                eprintln!("running {}", cfg.name);
                let report = run_experiment(&cfg)?;
                for w in &report.warnings {
                    eprintln!("warning: {w}");
                }
                for f in write_report(&report, &out, !no_plots)? {
                    writeln!(stdout, "{}", f.display())?;
                }
            }
        }
        Command::Gramians {
            config,
            t_e,
            experiment,
            set,
        } => {
            let overrides = parse_overrides(&set)?;
            writeln!(stdout, "experiment,method,index,value,normalized")?;
            for cfg in select(configs(&config, &overrides)?, experiment.as_deref())? {
                for s in gramian_spectra(&cfg, t_e)? {
                    for (i, (v, n)) in s.values.iter().zip(s.normalized()).enumerate() {
                        writeln!(stdout, "{},{},{},{v:?},{n:?}", cfg.name, s.method, i + 1)?;
                    }
                }
            }
        }
        Command::Fourdvar {
            config,
            experiment,
            set,
        } => {
            let overrides = parse_overrides(&set)?;
            for cfg in select(configs(&config, &overrides)?, experiment.as_deref())? {
                let demo = fourdvar_demo(&cfg)?;
                writeln!(stdout, "experiment: {}", cfg.name)?;
                writeln!(
                    stdout,
                    "state dimension: {}, steps: {}, rank: {}",
                    demo.state_dim, demo.steps, demo.rank
                )?;
                for (label, res) in [("full", &demo.full), ("reduced", &demo.reduced)] {
                    writeln!(
                        stdout,
                        "{label}: {} outer iterations, converged = {}, cost {:e} -> {:e}",
                        res.iterations,
                        res.converged,
                        res.cost_trace.first().copied().unwrap_or(f64::NAN),
                        res.cost_trace.last().copied().unwrap_or(f64::NAN)
                    )?;
                }
                writeln!(
                    stdout,
                    "relative gap between analyses: {:e}",
                    demo.analysis_gap
                )?;
                writeln!(
                    stdout,
                    "relative error vs truth: background {:e}, full {:e}, reduced {:e}",
                    demo.background_error, demo.full_error, demo.reduced_error
                )?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // a closed stdout (e.g. piped into `head`) is not a failure
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
