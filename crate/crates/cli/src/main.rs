mod commands;
mod error;
mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, EXIT_USAGE};
use crate::settings::Settings;

/// Shopping predictability analytics: generate, check, analyze and
/// simulate transaction data.
#[derive(Debug, Parser)]
#[command(name = "shopent", version)]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    pub(crate) seed: Option<String>,
    /// Worker threads; defaults to the number of cores. Results do not
    /// depend on it.
    #[arg(long, global = true)]
    pub(crate) threads: Option<String>,
    /// Offset used to assign visits to calendar days: UTC or ±HH:MM.
    #[arg(long, global = true)]
    pub(crate) timezone: Option<String>,
    /// Abort on the first malformed row instead of skipping it.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub(crate) strict: Option<String>,
    /// Flat key = value file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub(crate) config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// How transactions are read and turned into visit sequences.
#[derive(Debug, Args, Clone, Default)]
pub struct LoadArgs {
    /// csv or jsonl; defaults to the file extension.
    #[arg(long)]
    pub(crate) format: Option<String>,
    /// Observation window START:END (dates, inclusive); defaults to the
    /// span of the input.
    #[arg(long)]
    pub(crate) window: Option<String>,
    /// Comma-separated MCCs whose outflows are not visits.
    #[arg(long)]
    pub(crate) exclude_mcc: Option<String>,
    /// Count repeat purchases at one merchant on one day once.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub(crate) dedup_same_day: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic population described by a JSON spec.
    Generate { spec: PathBuf, out: PathBuf },
    /// Parse an input file and summarize it without analyzing.
    IngestCheck {
        input: PathBuf,
        #[command(flatten)]
        load: LoadArgs,
        /// Write the JSONL error report here.
        #[arg(long)]
        errors: Option<PathBuf>,
    },
    /// Compute the requested measures into an output directory.
    Analyze {
        input: PathBuf,
        #[command(flatten)]
        load: LoadArgs,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated: entropy, zipf, graph, bundle, cohorts, profile.
        #[arg(long)]
        measures: Option<String>,
        /// merchant or mcc.
        #[arg(long)]
        level: Option<String>,
        /// naive, indexed or auto.
        #[arg(long)]
        scanner: Option<String>,
        /// Restrict entropy, zipf, graph and bundle to the top or bottom
        /// predictability quintile.
        #[arg(long)]
        quintile: Option<String>,
        #[arg(long)]
        bin_width: Option<String>,
        /// MIN:MAX ranks used by the Zipf fit.
        #[arg(long)]
        rank_range: Option<String>,
        /// reaching or all.
        #[arg(long)]
        rank_average: Option<String>,
        /// Bootstrap resamples for the Zipf fit and cohort contrasts.
        #[arg(long)]
        resamples: Option<String>,
        #[arg(long)]
        poor_max: Option<String>,
        #[arg(long)]
        wealthy_min: Option<String>,
        /// Add the Fano upper bound on predictability to entropy output.
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        fano: Option<String>,
    },
    /// Shuffle or sort visit order and compare true entropy.
    Simulate {
        input: PathBuf,
        #[command(flatten)]
        load: LoadArgs,
        #[arg(long)]
        out: PathBuf,
        /// shuffle_day or sort_week.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        runs: Option<String>,
        #[arg(long)]
        sample: Option<String>,
        #[arg(long)]
        level: Option<String>,
        #[arg(long)]
        bin_width: Option<String>,
    },
    /// Chance that two accounts visit the same merchant category.
    Overlap {
        input: PathBuf,
        #[command(flatten)]
        load: LoadArgs,
        /// File listing one account id per line.
        #[arg(long, requires = "group_b", conflicts_with = "auto_quintiles")]
        group_a: Option<PathBuf>,
        #[arg(long, requires = "group_a")]
        group_b: Option<PathBuf>,
        /// Compare the most and least predictable quintiles.
        #[arg(long)]
        auto_quintiles: bool,
        /// Also estimate by sampling this many event pairs.
        #[arg(long)]
        monte_carlo: Option<String>,
        /// Output directory; prints JSON to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare per-account entropy between two observation windows.
    Stability {
        input_a: PathBuf,
        input_b: PathBuf,
        #[command(flatten)]
        load: LoadArgs,
        #[arg(long)]
        level: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli, argv: Vec<String>) -> Result<(), CliError> {
    let settings = match &cli.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    if let Some(n) = settings.get_opt::<usize>("threads", cli.threads.as_deref())? {
        if n == 0 {
            return Err(CliError::usage("`threads` must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    let ctx = commands::Context::new(&cli, settings, argv)?;
    match cli.command {
        Command::Generate { spec, out } => commands::generate(&ctx, &spec, &out),
        Command::IngestCheck {
            input,
            load,
            errors,
        } => commands::ingest_check(&ctx, &input, &load, errors.as_deref()),
        Command::Analyze {
            input,
            load,
            out,
            measures,
            level,
            scanner,
            quintile,
            bin_width,
            rank_range,
            rank_average,
            resamples,
            poor_max,
            wealthy_min,
            fano,
        } => commands::analyze(
            &ctx,
            &input,
            &load,
            &out,
            &commands::AnalyzeFlags {
                measures,
                level,
                scanner,
                quintile,
                bin_width,
                rank_range,
                rank_average,
                resamples,
                poor_max,
                wealthy_min,
                fano,
            },
        ),
        Command::Simulate {
            input,
            load,
            out,
            mode,
            runs,
            sample,
            level,
            bin_width,
        } => commands::simulate(
            &ctx, &input, &load, &out, mode, runs, sample, level, bin_width,
        ),
        Command::Overlap {
            input,
            load,
            group_a,
            group_b,
            auto_quintiles,
            monte_carlo,
            out,
        } => {
            let groups = match (group_a, group_b, auto_quintiles) {
                (Some(a), Some(b), false) => commands::Groups::Files(a, b),
                (None, None, true) => commands::Groups::AutoQuintiles,
                _ => {
                    return Err(CliError::usage(
                        "give either --group-a and --group-b, or --auto-quintiles",
                    ))
                }
            };
            commands::overlap(&ctx, &input, &load, groups, monte_carlo, out.as_deref())
        }
        Command::Stability {
            input_a,
            input_b,
            load,
            level,
            out,
        } => commands::stability(&ctx, &input_a, &input_b, &load, level, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
