//! Command-line front end: scenario files, simulation, analysis and sweeps.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{Context, Mode};
use config::ScenarioFile;
use error::CliError;
use output::Format;

#[derive(Debug, Parser)]
#[command(
    name = "nlqkd",
    version,
    about = "BBM92 QKD over dispersive fiber: simulate, analyze, sweep"
)]
pub struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in scenario: paper-setup, appendix-c or fig4-model.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `simulation.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print failures as one JSON object on stderr.
    #[arg(long, global = true)]
    pub error_json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate time tags for both parties.
    Simulate,
    /// Histogram, peak fit and window-optimized key rate of two tag files.
    Analyze {
        #[arg(long)]
        tags_a: PathBuf,
        #[arg(long)]
        tags_b: PathBuf,
        /// Acquisition time; defaults to `simulation.duration_s`.
        #[arg(long)]
        duration_s: Option<f64>,
    },
    /// Key rate against the compensator setting.
    SweepDcm {
        #[arg(long, value_enum, default_value = "model")]
        mode: Mode,
    },
    /// Brightness-optimized key rate against distance.
    SweepDistance,
    /// One compensator for both photons against one per arm.
    CompareLocal,
}

pub fn load_config(cli: &Cli) -> Result<(ScenarioFile, String), CliError> {
    let (text, source) = match (&cli.config, &cli.preset) {
        (Some(path), _) => (
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
            path.display().to_string(),
        ),
        (None, Some(name)) => (config::preset(name)?.to_string(), format!("preset:{name}")),
        (None, None) => (config::PAPER_SETUP.to_string(), "preset:paper-setup".to_string()),
    };
    let mut file = ScenarioFile::parse(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{source}: {m}")),
        other => other,
    })?;
    if let Some(seed) = cli.seed {
        file.simulation.seed = seed;
    }
    Ok((file, source))
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let (file, config_source) = load_config(cli)?;
    let ctx = Context {
        file,
        config_source,
        out: cli.out.clone(),
        format: cli.format,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Numerical(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Simulate => commands::simulate_cmd(&ctx),
        Command::Analyze {
            tags_a,
            tags_b,
            duration_s,
        } => commands::analyze_cmd(&ctx, tags_a, tags_b, *duration_s),
        Command::SweepDcm { mode } => commands::sweep_dcm_cmd(&ctx, *mode),
        Command::SweepDistance => commands::sweep_distance_cmd(&ctx),
        Command::CompareLocal => commands::compare_local_cmd(&ctx),
    })
}

/// Runs the CLI on `args` and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            if cli.error_json {
                eprintln!("{}", e.to_json());
            } else {
                eprintln!("error: {e}");
            }
            e.exit_code()
        }
    }
}
