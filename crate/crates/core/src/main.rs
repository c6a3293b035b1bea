use std::path::PathBuf;
use std::process::ExitCode;

use budgetlab::cli::{parse_values, run_command, sweep_command, RunOptions, EXIT_CONFIG};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "budgetlab", version, about = "Weekly budget allocation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory (default: config `output_dir`, else results/<config name>)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads
    #[arg(long)]
    jobs: Option<usize>,
    /// Write history, traces, particle clouds and solves for trial 0
    #[arg(long)]
    debug_dumps: bool,
    /// Draw budget trajectories (SVG) for the first N trials
    #[arg(long, value_name = "N", num_args = 0..=1, default_missing_value = "3")]
    plots: Option<usize>,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            out: self.out.clone(),
            jobs: self.jobs,
            debug_dumps: self.debug_dumps,
            plots: self.plots.unwrap_or(0),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run an experiment once per value of a parameter
    Sweep {
        config: PathBuf,
        /// Parameter to vary (default: the config's sweep block)
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values
        #[arg(long)]
        values: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match cli.command {
        Command::Run { config, common } => run_command(&config, &common.options()),
        Command::Sweep {
            config,
            param,
            values,
            common,
        } => {
            let values = match values.as_deref().map(parse_values).transpose() {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG as u8);
                }
            };
            sweep_command(&config, param.as_deref(), values.as_deref(), &common.options())
        }
    };
    ExitCode::from(code as u8)
}
