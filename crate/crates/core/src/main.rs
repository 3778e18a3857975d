use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use multilevel::config::RunConfig;
use multilevel::pipeline;

/// Multilevel survey analytics: nested random-intercept models, variance
/// decomposition and shrunken group residuals, driven by a declarative
/// configuration file.
#[derive(Parser)]
#[command(name = "multilevel", version, about)]
struct Cli {
    /// Override the configured output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Worker threads for fitting models in parallel
    /// (also settable via RAYON_NUM_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Suppress progress output.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: load, join, transform, fit every model, compare
    /// residuals and write all report files.
    Run { config: PathBuf },
    /// Emit a simulated dataset from the config's [simulate] section.
    Simulate {
        config: PathBuf,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Apply joins and transforms, writing the transformed CSV only.
    Transform { config: PathBuf },
    /// Fit one named model on the stored transformed CSV.
    Fit {
        config: PathBuf,
        #[arg(long)]
        model: String,
    },
    /// Regenerate display tables from stored fit JSON documents.
    Report { config: PathBuf },
}

fn load_config(path: &PathBuf, output_dir: &Option<PathBuf>) -> multilevel::Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(dir) = output_dir {
        cfg.output.dir = dir.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> multilevel::Result<()> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = load_config(config, &cli.output_dir)?;
            let manifest = pipeline::run(&cfg)?;
            if !cli.quiet {
                eprintln!("loaded {} rows", manifest.rows_loaded);
                for m in &manifest.models {
                    eprintln!(
                        "model {}: {} rows, {}converged in {} iterations{}",
                        m.name,
                        m.rows_used,
                        if m.converged { "" } else { "NOT " },
                        m.iterations,
                        if m.clamped_levels.is_empty() {
                            String::new()
                        } else {
                            format!(" (clamped: {})", m.clamped_levels.join(", "))
                        }
                    );
                }
                eprintln!(
                    "wrote {} files to {}",
                    manifest.files.len(),
                    cfg.output.dir.display()
                );
            }
        }
        Command::Simulate { config, seed } => {
            let mut cfg = load_config(config, &cli.output_dir)?;
            if let (Some(seed), Some(sim)) = (seed, cfg.simulate.as_mut()) {
                sim.config.seed = *seed;
            }
            let path = pipeline::simulate_to_csv(&cfg)?;
            if !cli.quiet {
                eprintln!("wrote {}", path.display());
            }
        }
        Command::Transform { config } => {
            let cfg = load_config(config, &cli.output_dir)?;
            let (path, manifest) = pipeline::transform_only(&cfg)?;
            if !cli.quiet {
                eprintln!("loaded {} rows, wrote {}", manifest.rows_loaded, path.display());
            }
        }
        Command::Fit { config, model } => {
            let cfg = load_config(config, &cli.output_dir)?;
            let summary = pipeline::fit_single(&cfg, model)?;
            if !cli.quiet {
                eprintln!(
                    "model {}: {} rows, {}converged in {} iterations",
                    summary.name,
                    summary.rows_used,
                    if summary.converged { "" } else { "NOT " },
                    summary.iterations
                );
            }
        }
        Command::Report { config } => {
            let cfg = load_config(config, &cli.output_dir)?;
            let files = pipeline::regenerate_reports(&cfg)?;
            if !cli.quiet {
                eprintln!("regenerated {} files", files.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // One structured error report on the first fatal failure.
            let report = serde_json::json!({
                "error": err.to_string(),
                "exit_code": err.exit_code(),
            });
            eprintln!("{report}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
