//! Metropolis-Hastings sampling over the relaxed fiber with basic moves.
//!
//! Each raw step draws one basic move and a sign uniformly from the catalog.
//! Proposals that would push a cell below the floor are rejected (the chain
//! stays put); otherwise the move is accepted with probability
//! `min(1, w(v)/w(u))` for the target weight
//!
//! ```text
//! w(u) = rho^{#negative cells} * prod over non-negative cells of 1/u_ijk!
//! ```
//!
//! Conditioned on the non-negative states this is exactly the hypergeometric
//! conditional law of the goodness-of-fit test, so the chi-square statistic
//! is recorded only when the state has no negative cells; recording ticks
//! that land on a negative state are skipped and counted as wasted. The
//! penalty `rho` only shapes how much time the chain spends outside the
//! non-negative region.
//!
//! Randomness comes from ChaCha8 seeded with the configured 64-bit seed;
//! parallel chains reuse the seed and set the ChaCha stream to the chain
//! index, so any pooled run is reproducible across machines and thread
//! schedules.

use crate::model::{degrees_of_freedom, ipfp_fit_default, LogFactorialTable, ModelError};
use crate::moves::{enumerate_basic_moves, MoveError};
use crate::table::{chi_square_cells, MarginSet, RelaxDepth, Table3D, TableError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("invalid chain configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("observed table must be non-negative")]
    NegativeObserved,
    #[error("no samples recorded: every recording tick landed on a negative state")]
    NoSamplesRecorded,
    #[error("histogram requested over an empty sample set")]
    EmptyResult,
    #[error(transparent)]
    Move(#[from] MoveError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// Chain parameters. `n_samples` is the post-thinning recording target;
/// the chain runs `burn_in + n_samples * thin` raw steps in total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Number of recording ticks after burn-in.
    pub n_samples: usize,
    /// Raw steps discarded before recording starts.
    pub burn_in: usize,
    /// Raw steps between recording ticks.
    pub thin: usize,
    /// Cell floor during the sampling phase.
    pub floor: RelaxDepth,
    /// Cell floor during burn-in only; must not exceed `floor`.
    pub burn_in_floor: RelaxDepth,
    /// Weight penalty per negative cell, in (0, 1].
    pub neg_penalty: f64,
    /// RNG seed.
    pub seed: u64,
}

impl ChainConfig {
    /// A floor-1 chain with no burn-in and no thinning.
    pub fn new(n_samples: usize, seed: u64) -> Self {
        ChainConfig {
            n_samples,
            burn_in: 0,
            thin: 1,
            floor: RelaxDepth::ONE,
            burn_in_floor: RelaxDepth::ONE,
            neg_penalty: 0.1,
            seed,
        }
    }

    /// Total raw steps the chain will take.
    pub fn raw_steps(&self) -> usize {
        self.burn_in + self.n_samples * self.thin
    }

    fn validate(&self) -> Result<(), SamplerError> {
        if self.n_samples == 0 {
            return Err(SamplerError::InvalidConfig("n_samples must be positive"));
        }
        if self.thin == 0 {
            return Err(SamplerError::InvalidConfig("thin must be at least 1"));
        }
        if !(self.neg_penalty > 0.0 && self.neg_penalty <= 1.0) {
            return Err(SamplerError::InvalidConfig(
                "neg_penalty must lie in (0, 1]",
            ));
        }
        if self.burn_in_floor.0 > self.floor.0 {
            return Err(SamplerError::InvalidConfig(
                "burn_in_floor must not exceed floor",
            ));
        }
        Ok(())
    }
}

/// Burn-in raw steps for a fractional specification: a fraction of the
/// `n_samples * thin` recording span.
pub fn burn_in_for_fraction(n_samples: usize, thin: usize, fraction: f64) -> usize {
    (fraction * (n_samples * thin) as f64).round() as usize
}

/// Output of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    /// Chi-square values recorded at non-negative states.
    pub chi_sq_samples: Vec<f64>,
    /// Plain empirical tail fraction `#{chi >= chi_obs} / n`.
    pub p_value_estimate: f64,
    /// Add-one corrected estimate `(k + 1) / (n + 1)`.
    pub p_value_corrected: f64,
    /// Accepted proposals over all raw steps.
    pub acceptance_rate: f64,
    /// Fraction of post-burn-in raw steps spent in a state with at least
    /// one negative cell.
    pub negative_state_fraction: f64,
    /// Recording ticks skipped because the state had a negative cell.
    pub wasted_ticks: usize,
    /// Statistic of the observed table against the shared fit.
    pub observed_chi_sq: f64,
    /// Degrees of freedom of the asymptotic reference distribution.
    pub df: usize,
}

/// Runs a single chain from the observed table.
pub fn run_chain(observed: &Table3D, config: &ChainConfig) -> Result<ChainResult, SamplerError> {
    run_chain_on_stream(observed, config, 0, |_| {})
}

/// [`run_chain`] with a callback invoked on every recorded state's cells;
/// used to audit the visited-state distribution against the exact oracle.
pub fn run_chain_with_observer(
    observed: &Table3D,
    config: &ChainConfig,
    observer: impl FnMut(&[i64]),
) -> Result<ChainResult, SamplerError> {
    run_chain_on_stream(observed, config, 0, observer)
}

fn run_chain_on_stream(
    observed: &Table3D,
    config: &ChainConfig,
    stream: u64,
    mut observer: impl FnMut(&[i64]),
) -> Result<ChainResult, SamplerError> {
    config.validate()?;
    if !observed.is_nonnegative() {
        return Err(SamplerError::NegativeObserved);
    }
    let dims = observed.dims();
    let moves = enumerate_basic_moves(dims)?;
    let move_cells: Vec<[(usize, i64); 8]> = moves
        .iter()
        .map(|m| m.cells(dims).expect("catalog moves fit dims"))
        .collect();
    let fitted = ipfp_fit_default(observed)?;
    let observed_chi_sq = chi_square_cells(observed.cells(), fitted.cells())?;
    let margins = observed.margins();

    // cells can never exceed their smallest covering margin plus the slack
    // the floor grants the rest of the line
    let max_margin = margins.flatten().into_iter().max().unwrap_or(0).max(0) as usize;
    let slack =
        config.floor.0.max(config.burn_in_floor.0) as usize * dims.i.max(dims.j).max(dims.k);
    let log_factorial = LogFactorialTable::up_to(max_margin + slack + 1);
    let ln_rho = config.neg_penalty.ln();
    let cell_log_weight = |c: i64| -> f64 {
        if c < 0 {
            ln_rho
        } else {
            -log_factorial.get(c)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);

    let mut state: Vec<i64> = observed.cells().to_vec();
    let mut negative_cells = 0usize;
    let mut accepted = 0usize;
    let mut negative_steps = 0usize;
    let mut wasted_ticks = 0usize;
    let mut samples = Vec::with_capacity(config.n_samples);

    let total_steps = config.raw_steps();
    for step in 0..total_steps {
        let in_burn_in = step < config.burn_in;
        let floor = if in_burn_in {
            config.burn_in_floor
        } else {
            config.floor
        };
        let min_cell = floor.min_cell();

        let proposal = &move_cells[rng.gen_range(0..move_cells.len())];
        let positive = rng.gen_bool(0.5);

        let mut log_ratio = 0.0f64;
        let mut negative_delta = 0isize;
        let mut feasible = true;
        for &(idx, base) in proposal {
            let delta = if positive { base } else { -base };
            let old = state[idx];
            let new = old + delta;
            if new < min_cell {
                feasible = false;
                break;
            }
            log_ratio += cell_log_weight(new) - cell_log_weight(old);
            match (old < 0, new < 0) {
                (false, true) => negative_delta += 1,
                (true, false) => negative_delta -= 1,
                _ => {}
            }
        }
        if feasible && (log_ratio >= 0.0 || rng.gen::<f64>() < log_ratio.exp()) {
            for &(idx, base) in proposal {
                state[idx] += if positive { base } else { -base };
            }
            negative_cells = (negative_cells as isize + negative_delta) as usize;
            accepted += 1;
        }

        debug_assert_eq!(
            MarginSet::of_cells(dims, &state),
            margins,
            "chain left the fiber"
        );
        debug_assert!(
            state.iter().all(|&v| v >= min_cell),
            "chain violated the floor"
        );

        if !in_burn_in {
            if negative_cells > 0 {
                negative_steps += 1;
            }
            if (step - config.burn_in + 1).is_multiple_of(config.thin) {
                if negative_cells == 0 {
                    samples.push(chi_square_cells(&state, fitted.cells())?);
                    observer(&state);
                } else {
                    wasted_ticks += 1;
                }
            }
        }
    }

    if samples.is_empty() {
        return Err(SamplerError::NoSamplesRecorded);
    }
    let n = samples.len();
    let exceed = samples
        .iter()
        .filter(|&&c| c >= observed_chi_sq - 1e-12)
        .count();
    let sampling_steps = total_steps - config.burn_in;
    Ok(ChainResult {
        p_value_estimate: exceed as f64 / n as f64,
        p_value_corrected: (exceed + 1) as f64 / (n + 1) as f64,
        acceptance_rate: accepted as f64 / total_steps as f64,
        negative_state_fraction: negative_steps as f64 / sampling_steps as f64,
        wasted_ticks,
        observed_chi_sq,
        df: degrees_of_freedom(dims),
        chi_sq_samples: samples,
    })
}

/// Several chains pooled by averaging their estimates. Chain `c` keeps the
/// shared seed but runs on ChaCha stream `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledResult {
    pub chains: Vec<ChainResult>,
    /// Mean of the per-chain plain estimates.
    pub p_value_estimate: f64,
    /// Mean of the per-chain corrected estimates.
    pub p_value_corrected: f64,
    pub observed_chi_sq: f64,
    pub df: usize,
}

impl PooledResult {
    /// All recorded samples across chains, in chain order.
    pub fn pooled_samples(&self) -> Vec<f64> {
        self.chains
            .iter()
            .flat_map(|c| c.chi_sq_samples.iter().copied())
            .collect()
    }
}

/// Runs `n_chains` chains concurrently and pools them.
pub fn run_chains(
    observed: &Table3D,
    config: &ChainConfig,
    n_chains: usize,
) -> Result<PooledResult, SamplerError> {
    if n_chains == 0 {
        return Err(SamplerError::InvalidConfig("need at least one chain"));
    }
    let results: Vec<Result<ChainResult, SamplerError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n_chains)
            .map(|c| scope.spawn(move || run_chain_on_stream(observed, config, c as u64, |_| {})))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut chains = Vec::with_capacity(n_chains);
    for r in results {
        chains.push(r?);
    }
    let mean = |f: fn(&ChainResult) -> f64| chains.iter().map(f).sum::<f64>() / chains.len() as f64;
    Ok(PooledResult {
        p_value_estimate: mean(|c| c.p_value_estimate),
        p_value_corrected: mean(|c| c.p_value_corrected),
        observed_chi_sq: chains[0].observed_chi_sq,
        df: chains[0].df,
        chains,
    })
}

/// Equal-width histogram over `[0, max sample]` with the asymptotic
/// chi-square density evaluated at bin midpoints for overlay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges starting at 0.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Reference density at each bin midpoint.
    pub asymptotic_density: Vec<f64>,
}

/// Bins the recorded statistics of a chain result.
pub fn estimate_histogram(result: &ChainResult, bins: usize) -> Result<Histogram, SamplerError> {
    histogram_of(&result.chi_sq_samples, result.df, bins)
}

/// Bins an explicit sample set (e.g. pooled across chains).
pub fn histogram_of(samples: &[f64], df: usize, bins: usize) -> Result<Histogram, SamplerError> {
    if bins == 0 {
        return Err(SamplerError::InvalidConfig("bins must be positive"));
    }
    if samples.is_empty() {
        return Err(SamplerError::EmptyResult);
    }
    let max = samples.iter().cloned().fold(0.0f64, f64::max);
    let span = if max > 0.0 { max } else { 1.0 };
    let width = span / bins as f64;
    let mut counts = vec![0usize; bins];
    for &s in samples {
        let mut bin = (s / width) as usize;
        if bin >= bins {
            bin = bins - 1;
        }
        counts[bin] += 1;
    }
    let edges: Vec<f64> = (0..=bins).map(|b| b as f64 * width).collect();
    let asymptotic_density = (0..bins)
        .map(|b| crate::model::chi_square_density((b as f64 + 0.5) * width, df))
        .collect();
    Ok(Histogram {
        edges,
        counts,
        asymptotic_density,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber::{enumerate_fiber, exact_conditional_distribution, DEFAULT_FIBER_CAP};
    use crate::table::Dims;
    use std::collections::HashMap;

    fn golden_2x2x2() -> Table3D {
        Table3D::new(Dims::new(2, 2, 2), vec![3, 1, 1, 3, 1, 3, 3, 1]).unwrap()
    }

    #[test]
    fn zero_table_chain_records_only_the_observed_statistic() {
        let zero = Table3D::zeros(Dims::new(2, 2, 2));
        let mut config = ChainConfig::new(50, 7);
        config.floor = RelaxDepth::ZERO;
        config.burn_in_floor = RelaxDepth::ZERO;
        let result = run_chain(&zero, &config).unwrap();
        assert_eq!(result.chi_sq_samples.len(), 50);
        assert!(result.chi_sq_samples.iter().all(|&c| c == 0.0));
        assert_eq!(result.p_value_estimate, 1.0);
        assert_eq!(result.acceptance_rate, 0.0);
        assert_eq!(result.observed_chi_sq, 0.0);
    }

    #[test]
    fn identical_seeds_give_bit_identical_results() {
        let obs = golden_2x2x2();
        let mut config = ChainConfig::new(500, 41);
        config.burn_in = 100;
        config.thin = 3;
        let a = run_chain(&obs, &config).unwrap();
        let b = run_chain(&obs, &config).unwrap();
        assert_eq!(a, b);
        let pa = run_chains(&obs, &config, 3).unwrap();
        let pb = run_chains(&obs, &config, 3).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn chain_p_value_tracks_the_exact_oracle() {
        let obs = golden_2x2x2();
        let fiber = enumerate_fiber(&obs.margins(), RelaxDepth::ZERO, DEFAULT_FIBER_CAP).unwrap();
        let exact = exact_conditional_distribution(&fiber).unwrap();
        let exact_p = exact.p_value(4.0);

        let mut config = ChainConfig::new(200_000, 1234);
        config.burn_in = 20_000;
        let result = run_chain(&obs, &config).unwrap();
        assert!(
            (result.p_value_estimate - exact_p).abs() < 0.02,
            "chain {} vs exact {}",
            result.p_value_estimate,
            exact_p
        );
    }

    #[test]
    fn recorded_state_frequencies_match_exact_weights() {
        let obs = golden_2x2x2();
        let fiber = enumerate_fiber(&obs.margins(), RelaxDepth::ZERO, DEFAULT_FIBER_CAP).unwrap();
        let exact = exact_conditional_distribution(&fiber).unwrap();

        let mut config = ChainConfig::new(150_000, 99);
        config.burn_in = 10_000;
        let mut visits: HashMap<Vec<i64>, usize> = HashMap::new();
        let result = run_chain_with_observer(&obs, &config, |cells| {
            *visits.entry(cells.to_vec()).or_default() += 1;
        })
        .unwrap();
        let n = result.chi_sq_samples.len() as f64;
        let mut tv = 0.0;
        for (idx, t) in fiber.tables().iter().enumerate() {
            let observed = visits.get(t.cells()).copied().unwrap_or(0) as f64 / n;
            tv += (observed - exact.weights[idx]).abs();
        }
        tv /= 2.0;
        assert!(tv < 0.05, "total variation {tv}");
    }

    #[test]
    fn floor_zero_chain_covers_a_connected_fiber() {
        let ones = Table3D::ones(Dims::new(2, 2, 2));
        let mut config = ChainConfig::new(2_000, 5);
        config.floor = RelaxDepth::ZERO;
        config.burn_in_floor = RelaxDepth::ZERO;
        let mut seen: HashMap<Vec<i64>, usize> = HashMap::new();
        run_chain_with_observer(&ones, &config, |cells| {
            *seen.entry(cells.to_vec()).or_default() += 1;
        })
        .unwrap();
        // the margins-of-ones fiber has exactly three tables
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn negative_ticks_are_wasted_not_recorded() {
        let zero = Table3D::zeros(Dims::new(2, 2, 2));
        // floor 1 around the zero table: states are -m, 0, +m and only the
        // zero table is non-negative
        let mut config = ChainConfig::new(2_000, 11);
        config.neg_penalty = 1.0;
        let result = run_chain(&zero, &config).unwrap();
        assert!(result.wasted_ticks > 0);
        assert_eq!(
            result.wasted_ticks + result.chi_sq_samples.len(),
            config.n_samples
        );
        assert!(result.chi_sq_samples.iter().all(|&c| c == 0.0));
        assert!(result.negative_state_fraction > 0.3);
    }

    #[test]
    fn all_ticks_negative_is_reported() {
        let zero = Table3D::zeros(Dims::new(2, 2, 2));
        let mut outcomes = (0, 0);
        for seed in 0..40 {
            let mut config = ChainConfig::new(1, seed);
            config.neg_penalty = 1.0;
            config.burn_in = 7;
            match run_chain(&zero, &config) {
                Ok(_) => outcomes.0 += 1,
                Err(SamplerError::NoSamplesRecorded) => outcomes.1 += 1,
                Err(other) => panic!("unexpected error {other:?}"),
            }
        }
        assert!(outcomes.0 > 0 && outcomes.1 > 0, "outcomes {outcomes:?}");
    }

    #[test]
    fn config_validation() {
        let obs = golden_2x2x2();
        let mut config = ChainConfig::new(0, 1);
        assert!(matches!(
            run_chain(&obs, &config),
            Err(SamplerError::InvalidConfig(_))
        ));
        config = ChainConfig::new(10, 1);
        config.thin = 0;
        assert!(matches!(
            run_chain(&obs, &config),
            Err(SamplerError::InvalidConfig(_))
        ));
        config = ChainConfig::new(10, 1);
        config.neg_penalty = 0.0;
        assert!(matches!(
            run_chain(&obs, &config),
            Err(SamplerError::InvalidConfig(_))
        ));
        config = ChainConfig::new(10, 1);
        config.burn_in_floor = RelaxDepth(2);
        assert!(matches!(
            run_chain(&obs, &config),
            Err(SamplerError::InvalidConfig(_))
        ));
    }

    #[test]
    fn burn_in_fraction_helper() {
        assert_eq!(burn_in_for_fraction(10_000, 25, 0.25), 62_500);
        assert_eq!(burn_in_for_fraction(50_000, 25, 2.5), 3_125_000);
    }

    #[test]
    fn histogram_counts_are_conserved() {
        let obs = golden_2x2x2();
        let config = ChainConfig::new(5_000, 2);
        let result = run_chain(&obs, &config).unwrap();
        let hist = estimate_histogram(&result, 12).unwrap();
        assert_eq!(
            hist.counts.iter().sum::<usize>(),
            result.chi_sq_samples.len()
        );
        assert_eq!(hist.edges.len(), 13);
        assert_eq!(hist.asymptotic_density.len(), 12);
    }

    #[test]
    fn histogram_of_a_single_sample() {
        let hist = histogram_of(&[3.5], 1, 1).unwrap();
        assert_eq!(hist.counts, vec![1]);
        assert_eq!(hist.edges, vec![0.0, 3.5]);
    }

    #[test]
    fn histogram_rejects_empty_input() {
        assert_eq!(
            histogram_of(&[], 1, 4).unwrap_err(),
            SamplerError::EmptyResult
        );
    }
}
