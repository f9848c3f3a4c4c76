//! Command-line interface: goodness-of-fit testing, fiber sampling, and the
//! desk-scale enumeration oracle. Every subcommand prints a JSON report to
//! stdout; larger artifacts (fitted tables, histograms) go to `--out`
//! paths as CSV.

use clap::{Args, Parser, Subcommand};
use fibersampler::cli::{
    self, bundled_dataset, bundled_dataset_names, bundled_decomposition, load_decomposition,
    load_table, CliError, Dataset, TableFormat,
};
use fibersampler::sampler::{burn_in_for_fraction, histogram_of, ChainConfig};
use fibersampler::table::{Dims, RelaxDepth};
use fibersampler::DEFAULT_FIBER_CAP;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "fibersampler",
    about = "Goodness-of-fit testing of three-way contingency tables by \
             Markov chains over relaxed fibers",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TableSource {
    /// Path to a table file (.json or .csv)
    #[arg(long, conflicts_with = "dataset")]
    table: Option<PathBuf>,
    /// Force the input format instead of inferring it from the extension
    #[arg(long, value_parser = ["json", "csv"])]
    format: Option<String>,
    /// Name of a bundled dataset
    #[arg(long)]
    dataset: Option<String>,
}

impl TableSource {
    fn load(&self) -> Result<Dataset, CliError> {
        match (&self.table, &self.dataset) {
            (Some(path), None) => {
                let format = match self.format.as_deref() {
                    Some("csv") => TableFormat::Csv,
                    Some("json") => TableFormat::Json,
                    _ => TableFormat::from_path(path),
                };
                load_table(path, format)
            }
            (None, Some(name)) => bundled_dataset(name),
            _ => Err(CliError::BadArgument(format!(
                "provide exactly one of --table or --dataset (bundled: {})",
                bundled_dataset_names().join(", ")
            ))),
        }
    }
}

#[derive(Args)]
struct ChainArgs {
    /// Post-thinning sample target N
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Burn-in: raw step count, or a percentage like "25%"
    #[arg(long, default_value = "25%")]
    burnin: String,
    /// Cell floor during burn-in (defaults to --floor)
    #[arg(long)]
    burnin_floor: Option<u32>,
    /// Raw steps between recorded samples
    #[arg(long, default_value_t = 25)]
    thin: usize,
    /// Cell floor t: cells may drop to -t
    #[arg(long, default_value_t = 1)]
    floor: u32,
    /// Weight penalty per negative cell, in (0, 1]
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    /// RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of pooled chains (chain c runs on RNG stream c)
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Histogram bin count for --hist-out
    #[arg(long, default_value_t = 50)]
    hist_bins: usize,
    /// Write a histogram CSV of the pooled samples to this path
    #[arg(long)]
    hist_out: Option<PathBuf>,
}

impl ChainArgs {
    fn config(&self) -> Result<ChainConfig, CliError> {
        let burn_in = parse_burnin(&self.burnin, self.n, self.thin)?;
        Ok(ChainConfig {
            n_samples: self.n,
            burn_in,
            thin: self.thin,
            floor: RelaxDepth(self.floor),
            burn_in_floor: RelaxDepth(self.burnin_floor.unwrap_or(self.floor)),
            neg_penalty: self.rho,
            seed: self.seed,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model by IPFP and report chi-square, df, and the asymptotic
    /// p-value
    Fit {
        #[command(flatten)]
        source: TableSource,
        /// IPFP convergence tolerance on margin discrepancies
        #[arg(long, default_value_t = fibersampler::model::IPFP_TOL)]
        tol: f64,
        /// IPFP cycle cap
        #[arg(long, default_value_t = fibersampler::model::IPFP_MAX_ITER)]
        max_iter: usize,
        /// Write the fitted table as CSV to this path
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample the conditional chi-square distribution by MCMC
    Sample {
        #[command(flatten)]
        source: TableSource,
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Full test: fit, asymptotic p-value, and the MCMC conditional p-value
    Test {
        #[command(flatten)]
        source: TableSource,
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Exhaustively enumerate the fiber of the table's margins
    Enumerate {
        #[command(flatten)]
        source: TableSource,
        /// Cell floor t
        #[arg(long, default_value_t = 0)]
        floor: u32,
        /// Fiber size cap (also via FIBERSAMPLER_CAP)
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Analyze connectivity of the fiber graph under all basic moves
    Connectivity {
        #[command(flatten)]
        source: TableSource,
        /// Cell floor t
        #[arg(long, default_value_t = 1)]
        floor: u32,
        /// Fiber size cap (also via FIBERSAMPLER_CAP)
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Replay a move-sequence decomposition under its floor
    VerifyDecomposition {
        /// Path to a decomposition JSON file
        #[arg(long, conflicts_with = "builtin")]
        file: Option<PathBuf>,
        /// Bundled decomposition: b1 or b2
        #[arg(long)]
        builtin: Option<String>,
        /// Override the floor stored in the decomposition
        #[arg(long)]
        floor: Option<u32>,
    },
    /// Print the basic-move catalog for given dimensions
    Moves {
        /// Dimensions as IxJxK (e.g. 3x4x6)
        #[arg(long)]
        dims: String,
        /// Include the dense expansion of every move
        #[arg(long)]
        expand: bool,
    },
    /// Probe relaxed connectivity on random margins of given dimensions
    ConjectureProbe {
        /// Dimensions as IxJxK
        #[arg(long)]
        dims: String,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cells of the random tables are uniform on 0..=max-cell
        #[arg(long, default_value_t = 3)]
        max_cell: i64,
        /// Fiber size cap (also via FIBERSAMPLER_CAP)
        #[arg(long)]
        cap: Option<usize>,
    },
}

fn parse_burnin(spec: &str, n_samples: usize, thin: usize) -> Result<usize, CliError> {
    let spec = spec.trim();
    if let Some(pct) = spec.strip_suffix('%') {
        let fraction: f64 = pct
            .trim()
            .parse()
            .map_err(|_| CliError::BadArgument(format!("bad burn-in percentage {spec:?}")))?;
        if fraction < 0.0 {
            return Err(CliError::BadArgument("burn-in must be non-negative".into()));
        }
        Ok(burn_in_for_fraction(n_samples, thin, fraction / 100.0))
    } else {
        spec.parse()
            .map_err(|_| CliError::BadArgument(format!("bad burn-in count {spec:?}")))
    }
}

fn parse_dims(spec: &str) -> Result<Dims, CliError> {
    let parts: Vec<&str> = spec.split(['x', 'X', ',']).collect();
    if parts.len() != 3 {
        return Err(CliError::BadArgument(format!(
            "dims must look like IxJxK, got {spec:?}"
        )));
    }
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| CliError::BadArgument(format!("bad dimension {s:?}")))
    };
    Ok(Dims::new(
        parse(parts[0])?,
        parse(parts[1])?,
        parse(parts[2])?,
    ))
}

fn effective_cap(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(cap) = flag {
        return Ok(cap);
    }
    match std::env::var("FIBERSAMPLER_CAP") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::BadArgument(format!("bad FIBERSAMPLER_CAP value {v:?}"))),
        Err(_) => Ok(DEFAULT_FIBER_CAP),
    }
}

fn write_artifact(path: &PathBuf, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn emit<T: serde::Serialize>(report: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(report).expect("report serialization cannot fail")
    );
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit {
            source,
            tol,
            max_iter,
            out,
        } => {
            let dataset = source.load()?;
            let (report, fitted) = cli::cmd_fit(&dataset, tol, max_iter)?;
            if let Some(path) = out {
                write_artifact(&path, &cli::fitted_to_csv(&fitted))?;
            }
            emit(&report);
        }
        Command::Sample { source, chain } => {
            let dataset = source.load()?;
            let config = chain.config()?;
            let report = cli::cmd_sample(&dataset, &config, chain.chains)?;
            if let Some(path) = &chain.hist_out {
                let samples = report.result.pooled_samples();
                let hist = histogram_of(&samples, report.result.df, chain.hist_bins)?;
                write_artifact(path, &cli::histogram_to_csv(&hist))?;
            }
            emit(&report);
        }
        Command::Test { source, chain } => {
            let dataset = source.load()?;
            let config = chain.config()?;
            let (report, pooled) = cli::cmd_test(&dataset, &config, chain.chains)?;
            if let Some(path) = &chain.hist_out {
                let samples = pooled.pooled_samples();
                let hist = histogram_of(&samples, pooled.df, chain.hist_bins)?;
                write_artifact(path, &cli::histogram_to_csv(&hist))?;
            }
            emit(&report);
        }
        Command::Enumerate { source, floor, cap } => {
            let dataset = source.load()?;
            let report = cli::cmd_enumerate(&dataset, RelaxDepth(floor), effective_cap(cap)?)?;
            emit(&report);
        }
        Command::Connectivity { source, floor, cap } => {
            let dataset = source.load()?;
            let report = cli::cmd_connectivity(&dataset, RelaxDepth(floor), effective_cap(cap)?)?;
            emit(&report);
        }
        Command::VerifyDecomposition {
            file,
            builtin,
            floor,
        } => {
            let mut decomposition = match (&file, &builtin) {
                (Some(path), None) => load_decomposition(path)?,
                (None, Some(name)) => bundled_decomposition(name)?,
                _ => {
                    return Err(CliError::BadArgument(
                        "provide exactly one of --file or --builtin (b1, b2)".into(),
                    ))
                }
            };
            if let Some(f) = floor {
                decomposition.floor = RelaxDepth(f);
            }
            emit(&cli::cmd_verify_decomposition(&decomposition));
        }
        Command::Moves { dims, expand } => {
            let report = cli::cmd_moves(parse_dims(&dims)?, expand)?;
            emit(&report);
        }
        Command::ConjectureProbe {
            dims,
            trials,
            seed,
            max_cell,
            cap,
        } => {
            let report = cli::cmd_conjecture_probe(
                parse_dims(&dims)?,
                trials,
                seed,
                max_cell,
                effective_cap(cap)?,
            )?;
            emit(&report);
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
