use std::path::PathBuf;
use std::process::ExitCode;

use byzasync::sim::AssertLevel;
use byzasync_cli::run::Overrides;
use byzasync_cli::{aggregate, report, run, CliError, CliResult};
use clap::{Args, Parser, Subcommand};

/// Simulator for Byzantine-robust asynchronous SGD.
#[derive(Debug, Parser)]
#[command(name = "byzasync", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a configuration and write trace.csv, summary.csv and manifest.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Aggregate a file of weighted vectors and print the result.
    Aggregate { input: PathBuf },
    /// Run a configuration once per value of one field.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of T, lambda, aggregator, attack, eta.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Summarise traces as mean ± stderr of the excess loss.
    Report {
        traces: Vec<PathBuf>,
        /// Also write an SVG chart of excess loss against t.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct OverrideArgs {
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// off or debug.
    #[arg(long)]
    assert_level: Option<String>,
}

impl OverrideArgs {
    fn resolve(self) -> CliResult<Overrides> {
        let assert_level = self
            .assert_level
            .map(|s| s.parse::<AssertLevel>())
            .transpose()
            .map_err(|e| CliError::Input(e.to_string()))?;
        Ok(Overrides {
            trials: self.trials,
            seed: self.seed,
            assert_level,
        })
    }
}

fn dispatch(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Run { config, out, overrides } => run::cmd_run(&config, &out, overrides.resolve()?),
        Command::Aggregate { input } => {
            let text = std::fs::read_to_string(&input)
                .map_err(|e| CliError::Input(format!("{}: {e}", input.display())))?;
            aggregate::run(&text)
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
            overrides,
        } => run::cmd_sweep(&config, &axis, &values, &out, overrides.resolve()?),
        Command::Report { traces, plot } => report::cmd_report(&traces, plot.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(text) => {
            let text = text.trim_end();
            if !text.is_empty() {
                println!("{text}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            match &e {
                CliError::Input(_) => eprintln!("error: {e}"),
                CliError::Runtime(inner) => eprintln!("error: {inner:#}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
