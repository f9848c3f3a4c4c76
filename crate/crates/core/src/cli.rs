//! Data ingestion, bundled datasets, and the JSON reports behind the
//! command-line subcommands.
//!
//! Table files come in two formats: JSON
//! `{"dims":[I,J,K],"counts":[...row-major...]}` with optional `name` and
//! `axis_labels`, and long-form CSV with header `i,j,k,count` and 1-based
//! indices. Loaded tables are validated as standard (non-negative) tables.

use crate::fiber::{enumerate_fiber, verify_relaxed_connectivity, ConnectivityReport, FiberError};
use crate::model::{
    chi_square_survival, degrees_of_freedom, ipfp_fit, FittedTable, ModelError, IPFP_MAX_ITER,
    IPFP_TOL,
};
use crate::moves::{
    enumerate_basic_moves, replay_decomposition, Decomposition, DecompositionParseError, MoveError,
    ReplayError,
};
use crate::sampler::{run_chains, ChainConfig, PooledResult, SamplerError};
use crate::table::{chi_square, Dims, RelaxDepth, Table3D, TableError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const NAVY_OFFICER: &str = "navy_officer_10x6x2";
pub const NAVY_FULL: &str = "navy_full_19x6x2";

/// Exit code for malformed input (files, flags, dimensions).
pub const EXIT_INPUT: i32 = 2;
/// Exit code for numerical failures (non-convergence, empty sample sets).
pub const EXIT_NUMERICAL: i32 = 3;
/// Exit code for exceeding the fiber cap.
pub const EXIT_CAP: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("table shape mismatch: {0}")]
    DimensionMismatch(String),
    #[error("negative count at cell {index}: {value}")]
    NegativeCount { index: usize, value: i64 },
    #[error("unknown bundled dataset {0:?}")]
    UnknownDataset(String),
    #[error("invalid argument: {0}")]
    BadArgument(String),
    #[error(transparent)]
    Table(TableError),
    #[error(transparent)]
    Move(#[from] MoveError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fiber(#[from] FiberError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        match e {
            TableError::FloorViolation { index, value, .. } => {
                CliError::NegativeCount { index, value }
            }
            TableError::BadCellCount {
                dims,
                expected,
                got,
            } => CliError::DimensionMismatch(format!(
                "dims {dims:?} require {expected} cells, got {got}"
            )),
            other => CliError::Table(other),
        }
    }
}

impl CliError {
    /// Process exit code: 2 input, 3 numerical, 4 cap exceeded.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Fiber(FiberError::FiberTooLarge { .. }) => EXIT_CAP,
            CliError::Model(ModelError::NoConvergence { .. })
            | CliError::Sampler(SamplerError::NoSamplesRecorded)
            | CliError::Sampler(SamplerError::EmptyResult)
            | CliError::Table(TableError::ZeroFittedCell { .. }) => EXIT_NUMERICAL,
            _ => EXIT_INPUT,
        }
    }
}

/// A named table with per-axis category labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub table: Table3D,
    pub axis_labels: [Vec<String>; 3],
}

impl Dataset {
    /// Wraps a bare table with positional labels.
    pub fn unlabeled(name: impl Into<String>, table: Table3D) -> Self {
        let numbered = |n: usize| (1..=n).map(|v| v.to_string()).collect();
        let dims = table.dims();
        Dataset {
            name: name.into(),
            table,
            axis_labels: [numbered(dims.i), numbered(dims.j), numbered(dims.k)],
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TableFileJson {
    #[serde(default)]
    name: Option<String>,
    dims: [usize; 3],
    counts: Vec<i64>,
    #[serde(default)]
    axis_labels: Option<[Vec<String>; 3]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Json,
    Csv,
}

impl TableFormat {
    /// Picks the format from the file extension; defaults to JSON.
    pub fn from_path(path: &Path) -> TableFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => TableFormat::Csv,
            _ => TableFormat::Json,
        }
    }
}

/// Loads a table file in the given format.
pub fn load_table(path: &Path, format: TableFormat) -> Result<Dataset, CliError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: display.clone(),
        source,
    })?;
    let fallback_name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("table")
        .to_string();
    match format {
        TableFormat::Json => parse_table_json(&text, &display, fallback_name),
        TableFormat::Csv => parse_table_csv(&text, &display, fallback_name),
    }
}

fn parse_table_json(text: &str, path: &str, fallback_name: String) -> Result<Dataset, CliError> {
    let wire: TableFileJson = serde_json::from_str(text).map_err(|e| CliError::Parse {
        path: path.to_string(),
        message: e.to_string(),
    })?;
    let dims = Dims::new(wire.dims[0], wire.dims[1], wire.dims[2]);
    let table = Table3D::new(dims, wire.counts)?;
    let name = wire.name.unwrap_or(fallback_name);
    let dataset = match wire.axis_labels {
        Some(labels) => {
            for (axis, (len, labels)) in dims
                .as_array()
                .iter()
                .zip(labels.iter())
                .map(|(&d, l)| (d, l))
                .enumerate()
            {
                if labels.len() != len {
                    return Err(CliError::DimensionMismatch(format!(
                        "axis {axis} has {len} categories but {} labels",
                        labels.len()
                    )));
                }
            }
            Dataset {
                name,
                table,
                axis_labels: labels,
            }
        }
        None => Dataset::unlabeled(name, table),
    };
    Ok(dataset)
}

fn parse_table_csv(text: &str, path: &str, name: String) -> Result<Dataset, CliError> {
    let parse_err = |message: String| CliError::Parse {
        path: path.to_string(),
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim().eq_ignore_ascii_case("i,j,k,count") => {}
        _ => return Err(parse_err("expected header line `i,j,k,count`".into())),
    }
    let mut rows: Vec<(usize, usize, usize, i64)> = Vec::new();
    let mut max = (0usize, 0usize, 0usize);
    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(parse_err(format!("line {}: expected 4 fields", lineno + 1)));
        }
        let idx = |s: &str| -> Result<usize, CliError> {
            let v: usize = s
                .parse()
                .map_err(|_| parse_err(format!("line {}: bad index {s:?}", lineno + 1)))?;
            if v == 0 {
                return Err(parse_err(format!(
                    "line {}: indices are 1-based",
                    lineno + 1
                )));
            }
            Ok(v)
        };
        let i = idx(fields[0])?;
        let j = idx(fields[1])?;
        let k = idx(fields[2])?;
        let count: i64 = fields[3]
            .parse()
            .map_err(|_| parse_err(format!("line {}: bad count {:?}", lineno + 1, fields[3])))?;
        max = (max.0.max(i), max.1.max(j), max.2.max(k));
        rows.push((i, j, k, count));
    }
    if rows.is_empty() {
        return Err(parse_err("no data rows".into()));
    }
    let dims = Dims::new(max.0, max.1, max.2);
    if rows.len() != dims.cell_count() {
        return Err(CliError::DimensionMismatch(format!(
            "dims {dims} require {} rows, got {}",
            dims.cell_count(),
            rows.len()
        )));
    }
    let mut cells = vec![i64::MIN; dims.cell_count()];
    for (i, j, k, count) in rows {
        let flat = dims.index(i - 1, j - 1, k - 1);
        if cells[flat] != i64::MIN {
            return Err(CliError::DimensionMismatch(format!(
                "cell ({i},{j},{k}) appears more than once"
            )));
        }
        cells[flat] = count;
    }
    let table = Table3D::new(dims, cells)?;
    Ok(Dataset::unlabeled(name, table))
}

/// Serializes a dataset's table in the long CSV format.
pub fn table_to_csv(table: &Table3D) -> String {
    let dims = table.dims();
    let mut out = String::from("i,j,k,count\n");
    for i in 0..dims.i {
        for j in 0..dims.j {
            for k in 0..dims.k {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    i + 1,
                    j + 1,
                    k + 1,
                    table.get(i, j, k)
                ));
            }
        }
    }
    out
}

/// Serializes a fitted table in long CSV with a real-valued column.
pub fn fitted_to_csv(fitted: &FittedTable) -> String {
    let dims = fitted.dims();
    let mut out = String::from("i,j,k,fitted\n");
    for i in 0..dims.i {
        for j in 0..dims.j {
            for k in 0..dims.k {
                out.push_str(&format!(
                    "{},{},{},{:.6}\n",
                    i + 1,
                    j + 1,
                    k + 1,
                    fitted.get(i, j, k)
                ));
            }
        }
    }
    out
}

const NAVY_OFFICER_JSON: &str = include_str!("../data/navy_officer_10x6x2.json");
const NAVY_FULL_JSON: &str = include_str!("../data/navy_full_19x6x2.json");
const DECOMPOSITION_B1_JSON: &str = include_str!("../data/decomposition_b1.json");
const DECOMPOSITION_B2_JSON: &str = include_str!("../data/decomposition_b2.json");

/// Raw JSON of a bundled dataset, for checksumming and re-export.
pub fn bundled_dataset_raw(name: &str) -> Option<&'static str> {
    match name {
        NAVY_OFFICER => Some(NAVY_OFFICER_JSON),
        NAVY_FULL => Some(NAVY_FULL_JSON),
        _ => None,
    }
}

/// Parses a bundled dataset by name.
pub fn bundled_dataset(name: &str) -> Result<Dataset, CliError> {
    let raw = bundled_dataset_raw(name).ok_or_else(|| CliError::UnknownDataset(name.into()))?;
    parse_table_json(raw, &format!("<bundled:{name}>"), name.to_string())
}

pub fn bundled_dataset_names() -> [&'static str; 2] {
    [NAVY_OFFICER, NAVY_FULL]
}

/// Raw JSON of a bundled decomposition ("b1" or "b2").
pub fn bundled_decomposition_raw(name: &str) -> Option<&'static str> {
    match name {
        "b1" => Some(DECOMPOSITION_B1_JSON),
        "b2" => Some(DECOMPOSITION_B2_JSON),
        _ => None,
    }
}

/// Parses a bundled decomposition by name.
pub fn bundled_decomposition(name: &str) -> Result<Decomposition, CliError> {
    let raw =
        bundled_decomposition_raw(name).ok_or_else(|| CliError::UnknownDataset(name.into()))?;
    Decomposition::from_json_str(raw).map_err(|e| CliError::Parse {
        path: format!("<bundled:{name}>"),
        message: e.to_string(),
    })
}

/// Loads a decomposition JSON file.
pub fn load_decomposition(path: &Path) -> Result<Decomposition, CliError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: display.clone(),
        source,
    })?;
    Decomposition::from_json_str(&text).map_err(|e: DecompositionParseError| CliError::Parse {
        path: display,
        message: e.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub name: String,
    pub dims: [usize; 3],
    pub chi_sq: f64,
    pub df: usize,
    pub p_value_asymptotic: f64,
}

/// Fits the model and evaluates the statistic with its asymptotic p-value.
pub fn cmd_fit(
    dataset: &Dataset,
    tol: f64,
    max_iter: usize,
) -> Result<(FitReport, FittedTable), CliError> {
    let fitted = ipfp_fit(&dataset.table, tol, max_iter)?;
    let chi_sq = chi_square(&dataset.table, &fitted)?;
    let dims = dataset.table.dims();
    let df = degrees_of_freedom(dims);
    Ok((
        FitReport {
            name: dataset.name.clone(),
            dims: dims.as_array(),
            chi_sq,
            df,
            p_value_asymptotic: chi_square_survival(chi_sq, df),
        },
        fitted,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub name: String,
    pub dims: [usize; 3],
    pub config: ChainConfig,
    pub n_chains: usize,
    pub result: PooledResult,
}

/// Runs the sampler, pooling chains when more than one is requested.
pub fn cmd_sample(
    dataset: &Dataset,
    config: &ChainConfig,
    n_chains: usize,
) -> Result<SampleReport, CliError> {
    let result = run_chains(&dataset.table, config, n_chains)?;
    Ok(SampleReport {
        name: dataset.name.clone(),
        dims: dataset.table.dims().as_array(),
        config: *config,
        n_chains,
        result,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub dims: [usize; 3],
    pub chi_sq_obs: f64,
    pub df: usize,
    pub p_value_asymptotic: f64,
    pub mcmc_p_value: f64,
    pub mcmc_p_value_corrected: f64,
    pub n_samples_recorded: usize,
    pub acceptance_rate: f64,
    pub negative_state_fraction: f64,
    pub wasted_ticks: usize,
    pub n_chains: usize,
}

/// Full goodness-of-fit test: model fit, asymptotic p-value, and the MCMC
/// conditional p-value with chain diagnostics.
pub fn cmd_test(
    dataset: &Dataset,
    config: &ChainConfig,
    n_chains: usize,
) -> Result<(TestReport, PooledResult), CliError> {
    let (fit_report, _) = cmd_fit(dataset, IPFP_TOL, IPFP_MAX_ITER)?;
    let pooled = run_chains(&dataset.table, config, n_chains)?;
    let total_samples: usize = pooled.chains.iter().map(|c| c.chi_sq_samples.len()).sum();
    let mean = |f: fn(&crate::sampler::ChainResult) -> f64| {
        pooled.chains.iter().map(f).sum::<f64>() / pooled.chains.len() as f64
    };
    let report = TestReport {
        name: dataset.name.clone(),
        dims: fit_report.dims,
        chi_sq_obs: fit_report.chi_sq,
        df: fit_report.df,
        p_value_asymptotic: fit_report.p_value_asymptotic,
        mcmc_p_value: pooled.p_value_estimate,
        mcmc_p_value_corrected: pooled.p_value_corrected,
        n_samples_recorded: total_samples,
        acceptance_rate: mean(|c| c.acceptance_rate),
        negative_state_fraction: mean(|c| c.negative_state_fraction),
        wasted_ticks: pooled.chains.iter().map(|c| c.wasted_ticks).sum(),
        n_chains,
    };
    Ok((report, pooled))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnumerateReport {
    pub name: String,
    pub dims: [usize; 3],
    pub floor: u32,
    pub fiber_size: usize,
    pub grand_total: i64,
}

/// Enumerates the fiber of the dataset's margins at the given floor.
pub fn cmd_enumerate(
    dataset: &Dataset,
    floor: RelaxDepth,
    cap: usize,
) -> Result<EnumerateReport, CliError> {
    let fiber = enumerate_fiber(&dataset.table.margins(), floor, cap)?;
    Ok(EnumerateReport {
        name: dataset.name.clone(),
        dims: dataset.table.dims().as_array(),
        floor: floor.0,
        fiber_size: fiber.len(),
        grand_total: dataset.table.grand_total(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableJson {
    pub dims: [usize; 3],
    pub counts: Vec<i64>,
}

impl TableJson {
    pub fn of(table: &Table3D) -> Self {
        TableJson {
            dims: table.dims().as_array(),
            counts: table.cells().to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityJson {
    pub fiber_size: usize,
    pub relaxed_fiber_size: usize,
    pub components: usize,
    pub nonneg_connected: bool,
    pub witness: Option<[TableJson; 2]>,
}

impl ConnectivityJson {
    pub fn of(report: &ConnectivityReport) -> Self {
        ConnectivityJson {
            fiber_size: report.fiber_size,
            relaxed_fiber_size: report.relaxed_fiber_size,
            components: report.components,
            nonneg_connected: report.nonneg_connected,
            witness: report
                .witness
                .as_ref()
                .map(|(a, b)| [TableJson::of(a), TableJson::of(b)]),
        }
    }
}

/// Builds the fiber graph of the dataset's margins under all basic moves
/// and reports its connectivity structure.
pub fn cmd_connectivity(
    dataset: &Dataset,
    floor: RelaxDepth,
    cap: usize,
) -> Result<ConnectivityJson, CliError> {
    let moves = enumerate_basic_moves(dataset.table.dims())?;
    let report = verify_relaxed_connectivity(&dataset.table.margins(), &moves, floor, cap)?;
    Ok(ConnectivityJson::of(&report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayJson {
    pub ok: bool,
    pub floor: u32,
    pub steps: usize,
    pub min_intermediate_cell: Option<i64>,
    pub cells_ever_negative: Option<usize>,
    pub error: Option<String>,
}

/// Replays a decomposition and reports the trajectory statistics, or the
/// failure reason without aborting.
pub fn cmd_verify_decomposition(decomposition: &Decomposition) -> ReplayJson {
    match replay_decomposition(decomposition) {
        Ok(report) => ReplayJson {
            ok: true,
            floor: decomposition.floor.0,
            steps: report.steps_applied,
            min_intermediate_cell: Some(report.min_intermediate_cell),
            cells_ever_negative: Some(report.cells_ever_negative),
            error: None,
        },
        Err(e) => ReplayJson {
            ok: false,
            floor: decomposition.floor.0,
            steps: decomposition.steps.len(),
            min_intermediate_cell: None,
            cells_ever_negative: None,
            error: Some(e.to_string()),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovesReport {
    pub dims: [usize; 3],
    pub catalog_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expansions: Option<Vec<MoveExpansion>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveExpansion {
    pub notation: String,
    pub delta: Vec<i64>,
}

/// Prints the basic-move catalog size, optionally with dense expansions.
pub fn cmd_moves(dims: Dims, expand: bool) -> Result<MovesReport, CliError> {
    let set = enumerate_basic_moves(dims)?;
    let expansions = if expand {
        Some(
            set.iter()
                .map(|m| {
                    Ok(MoveExpansion {
                        notation: m.to_string(),
                        delta: m.expand(dims)?.delta().to_vec(),
                    })
                })
                .collect::<Result<Vec<_>, MoveError>>()?,
        )
    } else {
        None
    };
    Ok(MovesReport {
        dims: dims.as_array(),
        catalog_size: set.len(),
        expansions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjectureTrial {
    pub trial: usize,
    pub outcome: String,
    pub fiber_size: Option<usize>,
    pub relaxed_fiber_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margins_table: Option<TableJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<[TableJson; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjectureReport {
    pub dims: [usize; 3],
    pub trials: usize,
    pub seed: u64,
    pub max_cell: i64,
    pub connected: usize,
    pub disconnected: usize,
    pub skipped: usize,
    pub trials_detail: Vec<ConjectureTrial>,
}

/// Probes relaxed connectivity at floor 1 on random margins of the given
/// dimensions: draws tables with uniform cells, derives their margins, and
/// runs the exhaustive connectivity check. Counterexamples are reported
/// verbatim; fibers over the cap are skipped with a note.
pub fn cmd_conjecture_probe(
    dims: Dims,
    trials: usize,
    seed: u64,
    max_cell: i64,
    cap: usize,
) -> Result<ConjectureReport, CliError> {
    if max_cell < 0 {
        return Err(CliError::BadArgument(
            "max-cell must be non-negative".into(),
        ));
    }
    let moves = enumerate_basic_moves(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ConjectureReport {
        dims: dims.as_array(),
        trials,
        seed,
        max_cell,
        connected: 0,
        disconnected: 0,
        skipped: 0,
        trials_detail: Vec::with_capacity(trials),
    };
    for trial in 0..trials {
        let cells: Vec<i64> = (0..dims.cell_count())
            .map(|_| rng.gen_range(0..=max_cell))
            .collect();
        let table = Table3D::new(dims, cells)?;
        match verify_relaxed_connectivity(&table.margins(), &moves, RelaxDepth::ONE, cap) {
            Ok(r) => {
                if r.nonneg_connected {
                    report.connected += 1;
                } else {
                    report.disconnected += 1;
                }
                report.trials_detail.push(ConjectureTrial {
                    trial,
                    outcome: if r.nonneg_connected {
                        "connected".into()
                    } else {
                        "disconnected".into()
                    },
                    fiber_size: Some(r.fiber_size),
                    relaxed_fiber_size: Some(r.relaxed_fiber_size),
                    margins_table: if r.nonneg_connected {
                        None
                    } else {
                        Some(TableJson::of(&table))
                    },
                    witness: r
                        .witness
                        .as_ref()
                        .map(|(a, b)| [TableJson::of(a), TableJson::of(b)]),
                });
            }
            Err(FiberError::FiberTooLarge { .. }) => {
                report.skipped += 1;
                report.trials_detail.push(ConjectureTrial {
                    trial,
                    outcome: "skipped: fiber over cap".into(),
                    fiber_size: None,
                    relaxed_fiber_size: None,
                    margins_table: None,
                    witness: None,
                });
            }
            Err(other) => return Err(other.into()),
        }
    }
    Ok(report)
}

/// Histogram CSV rows `bin_left,bin_right,count,asymptotic_density`.
pub fn histogram_to_csv(hist: &crate::sampler::Histogram) -> String {
    let mut out = String::from("bin_left,bin_right,count,asymptotic_density\n");
    for b in 0..hist.counts.len() {
        out.push_str(&format!(
            "{:.6},{:.6},{},{:.9}\n",
            hist.edges[b],
            hist.edges[b + 1],
            hist.counts[b],
            hist.asymptotic_density[b]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::histogram_of;

    #[test]
    fn bundled_officer_dataset_matches_the_printed_tables() {
        let d = bundled_dataset(NAVY_OFFICER).unwrap();
        assert_eq!(d.table.dims(), Dims::new(10, 6, 2));
        assert_eq!(d.table.grand_total(), 54_993);
        assert_eq!(d.axis_labels[0].len(), 10);
        assert_eq!(d.axis_labels[1].len(), 6);
        assert_eq!(d.axis_labels[2], ["Male", "Female"]);
        // margin over gender for (rank Adm., race White): 192 male + 13 female
        let m = d.table.margins();
        let rank = d.axis_labels[0].iter().position(|r| r == "Adm.").unwrap();
        let race = d.axis_labels[1].iter().position(|r| r == "White").unwrap();
        assert_eq!(m.ij(rank, race), 205);
    }

    #[test]
    fn bundled_full_dataset_has_all_ranks() {
        let d = bundled_dataset(NAVY_FULL).unwrap();
        assert_eq!(d.table.dims(), Dims::new(19, 6, 2));
        assert_eq!(d.table.grand_total(), 339_705);
        // the officer block is a prefix of the full table
        let officer = bundled_dataset(NAVY_OFFICER).unwrap();
        assert_eq!(
            &d.table.cells()[..officer.table.cells().len()],
            officer.table.cells()
        );
    }

    #[test]
    fn unknown_bundled_dataset_is_an_error() {
        assert!(matches!(
            bundled_dataset("nope"),
            Err(CliError::UnknownDataset(_))
        ));
    }

    #[test]
    fn bundled_decompositions_parse_and_match_fixtures() {
        let b1 = bundled_decomposition("b1").unwrap();
        assert_eq!(b1.start, crate::moves::fixtures::b1_positive());
        assert_eq!(b1.expected_end, crate::moves::fixtures::b1_negative());
        assert_eq!(
            b1.steps,
            crate::moves::fixtures::b1_decomposition(RelaxDepth::ONE).steps
        );
        let b2 = bundled_decomposition("b2").unwrap();
        assert_eq!(b2.start, crate::moves::fixtures::b2_positive());
        assert_eq!(b2.expected_end, crate::moves::fixtures::b2_negative());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let d = bundled_dataset(NAVY_OFFICER).unwrap();
        let csv = table_to_csv(&d.table);
        let dir = std::env::temp_dir().join("fibersampler_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("officer.csv");
        std::fs::write(&path, &csv).unwrap();
        let loaded = load_table(&path, TableFormat::Csv).unwrap();
        assert_eq!(loaded.table, d.table);

        // drop one row: row count no longer matches the inferred dims
        let truncated: String =
            csv.lines()
                .take(csv.lines().count() - 1)
                .fold(String::new(), |mut acc, l| {
                    acc.push_str(l);
                    acc.push('\n');
                    acc
                });
        std::fs::write(&path, truncated).unwrap();
        assert!(matches!(
            load_table(&path, TableFormat::Csv),
            Err(CliError::DimensionMismatch(_))
        ));

        // negative counts are rejected
        std::fs::write(&path, "i,j,k,count\n1,1,1,-3\n").unwrap();
        assert!(matches!(
            load_table(&path, TableFormat::Csv),
            Err(CliError::NegativeCount { .. })
        ));
    }

    #[test]
    fn json_loader_validates_labels_and_counts() {
        let dir = std::env::temp_dir().join("fibersampler_json_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.json");
        std::fs::write(&path, r#"{"dims":[2,2,2],"counts":[1,2,3]}"#).unwrap();
        assert!(matches!(
            load_table(&path, TableFormat::Json),
            Err(CliError::DimensionMismatch(_))
        ));
        std::fs::write(
            &path,
            r#"{"dims":[2,2,2],"counts":[1,2,3,4,5,6,7,8],"axis_labels":[["a"],["x","y"],["u","v"]]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_table(&path, TableFormat::Json),
            Err(CliError::DimensionMismatch(_))
        ));
        std::fs::write(&path, r#"{"dims":[2,2,2],"counts":[1,2,3,4,5,6,7,-8]}"#).unwrap();
        assert!(matches!(
            load_table(&path, TableFormat::Json),
            Err(CliError::NegativeCount { .. })
        ));
    }

    #[test]
    fn fit_report_round_trips_through_json() {
        let d = bundled_dataset(NAVY_OFFICER).unwrap();
        let (report, _) = cmd_fit(&d, IPFP_TOL, IPFP_MAX_ITER).unwrap();
        let json = serde_json::to_string_pretty(&report).unwrap();
        let parsed: FitReport = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, report);
        assert_eq!(serde_json::to_string_pretty(&parsed).unwrap(), json);
    }

    #[test]
    fn test_report_is_well_formed_on_a_model_table() {
        // product-form table lies in the model, so the test should not be
        // extreme; only the report contract is asserted
        let dims = Dims::new(2, 2, 2);
        let mut cells = vec![0i64; 8];
        let (a, b, c) = ([2i64, 3], [1i64, 2], [1i64, 3]);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    cells[dims.index(i, j, k)] = a[i] * b[j] * c[k];
                }
            }
        }
        let d = Dataset::unlabeled("product_form", Table3D::new(dims, cells).unwrap());
        let mut config = ChainConfig::new(2_000, 3);
        config.burn_in = 500;
        let (report, _) = cmd_test(&d, &config, 2).unwrap();
        assert!(report.mcmc_p_value >= 0.0 && report.mcmc_p_value <= 1.0);
        assert!(report.n_samples_recorded > 0);
        let json = serde_json::to_string(&report).unwrap();
        let parsed: TestReport = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn conjecture_probe_small_dims_all_connected() {
        let report = cmd_conjecture_probe(Dims::new(2, 3, 3), 5, 17, 3, 1_000_000).unwrap();
        assert_eq!(report.connected, 5);
        assert_eq!(report.disconnected, 0);
    }

    #[test]
    fn histogram_csv_has_one_row_per_bin() {
        let hist = histogram_of(&[1.0, 2.0, 3.0, 4.0], 3, 4).unwrap();
        let csv = histogram_to_csv(&hist);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("bin_left,bin_right,count,asymptotic_density"));
    }

    #[test]
    fn exit_codes_partition_the_error_space() {
        let cap_err: CliError = FiberError::FiberTooLarge { cap: 1, partial: 1 }.into();
        assert_eq!(cap_err.exit_code(), EXIT_CAP);
        let num_err: CliError = SamplerError::NoSamplesRecorded.into();
        assert_eq!(num_err.exit_code(), EXIT_NUMERICAL);
        let input_err = CliError::BadArgument("x".into());
        assert_eq!(input_err.exit_code(), EXIT_INPUT);
    }
}
