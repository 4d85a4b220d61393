mod commands;
mod io;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "hope",
    version,
    about = "High-order Taylor expansion of feed-forward networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Mixed,
    Unmixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleMethod {
    Jet,
    Fd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeatmapMethod {
    Hope,
    Gradient,
    Perturbation,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Network file (network.json)
    #[arg(long)]
    pub model: String,
    /// Output component to use for multi-output networks
    #[arg(long)]
    pub output_index: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Expand a network into a Taylor polynomial
    Expand {
        #[command(flatten)]
        model: ModelArgs,
        /// Expansion point: inline numbers ("0.1,0.2") or a JSON/CSV file
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long)]
        order: usize,
        #[arg(long, value_enum, default_value = "unmixed")]
        mode: ModeArg,
        #[arg(long)]
        out: String,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Evaluate a polynomial at one point or a CSV batch
    Eval {
        #[arg(long)]
        poly: String,
        #[arg(long, allow_hyphen_values = true, conflicts_with = "batch")]
        input: Option<String>,
        /// CSV with one point per row (header optional)
        #[arg(long)]
        batch: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Compare network and polynomial on a grid or random samples
    Compare {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        poly: String,
        /// "a:b:steps", uniform grid for 1-D inputs
        #[arg(long, allow_hyphen_values = true, conflicts_with = "samples")]
        grid: Option<String>,
        /// Random points in the box x0 ± radius
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: String,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Envelope and error bound of a 1-D network on an interval
    Bounds {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long)]
        order: usize,
        #[arg(long, num_args = 2, allow_hyphen_values = true, value_names = ["A", "B"])]
        interval: Vec<f64>,
        #[arg(long, default_value_t = hope_core::analysis::DEFAULT_GRID)]
        grid: usize,
        #[arg(long)]
        out: String,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Per-element truncated-Taylor heat map
    Heatmap {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long, default_value_t = 1)]
        order: usize,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        dx: f64,
        #[arg(long, value_enum, default_value = "hope")]
        method: HeatmapMethod,
        #[arg(long)]
        out: String,
        /// Long-format CSV with one map per order
        #[arg(long)]
        per_order_out: Option<String>,
    },
    /// Ratios of high-order to first-order derivatives
    Convergence {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long)]
        order: usize,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Time network forward against polynomial evaluation
    Bench {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        poly: String,
        #[arg(long, value_delimiter = ',', default_value = "1,4,16,64,256,1024,4096")]
        batches: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeat: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Check expansion derivatives against an independent oracle
    Oracle {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long)]
        order: usize,
        #[arg(long, value_enum, default_value = "jet")]
        method: OracleMethod,
        #[arg(long)]
        report: Option<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: OutputFormat,
    },
    /// Write a seeded random MLP fixture
    RandomMlp {
        #[arg(long)]
        input: usize,
        #[arg(long, value_delimiter = ',')]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        output: usize,
        #[arg(long, default_value = "tanh")]
        activation: String,
        #[arg(long, default_value_t = 1.0)]
        w0: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: String,
    },
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("HOPE_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            CliError::Input(format!(
                "HOPE_THREADS must be a positive integer, got `{v}`"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Expand {
            model,
            x0,
            order,
            mode,
            out,
            format,
        } => commands::expand(&model, &x0, order, mode, &out, format),
        Command::Eval {
            poly,
            input,
            batch,
            out,
            format,
        } => commands::eval(
            &poly,
            input.as_deref(),
            batch.as_deref(),
            out.as_deref(),
            format,
        ),
        Command::Compare {
            model,
            poly,
            grid,
            samples,
            radius,
            seed,
            out,
            format,
        } => commands::compare(
            &model,
            &poly,
            grid.as_deref(),
            samples,
            radius,
            seed,
            &out,
            format,
        ),
        Command::Bounds {
            model,
            x0,
            order,
            interval,
            grid,
            out,
            format,
        } => commands::bounds(
            &model,
            &x0,
            order,
            (interval[0], interval[1]),
            grid,
            &out,
            format,
        ),
        Command::Heatmap {
            model,
            x0,
            order,
            dx,
            method,
            out,
            per_order_out,
        } => commands::heatmap(
            &model,
            &x0,
            order,
            dx,
            method,
            &out,
            per_order_out.as_deref(),
        ),
        Command::Convergence {
            model,
            x0,
            order,
            format,
        } => commands::convergence(&model, &x0, order, format),
        Command::Bench {
            model,
            poly,
            batches,
            repeat,
            seed,
            out,
            format,
        } => commands::bench(
            &model,
            &poly,
            &batches,
            repeat,
            seed,
            out.as_deref(),
            format,
        ),
        Command::Oracle {
            model,
            x0,
            order,
            method,
            report,
            format,
        } => commands::oracle(&model, &x0, order, method, report.as_deref(), format),
        Command::RandomMlp {
            input,
            hidden,
            output,
            activation,
            w0,
            seed,
            out,
        } => commands::random_mlp(input, hidden, output, &activation, w0, seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
