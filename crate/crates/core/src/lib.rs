//! Exact conditional goodness-of-fit testing for three-way contingency
//! tables under the no-three-way-interaction model.
//!
//! The test statistic is Pearson's chi-square against the IPFP maximum
//! likelihood fit; its conditional null distribution is explored two ways:
//!
//! * [`sampler`] runs a Metropolis-Hastings chain over the fiber of tables
//!   with the observed two-way margins, using the basic moves of 2x2x2
//!   minors and allowing cell counts to drop to a configurable floor
//!   (typically -1). Relaxing the floor is what makes the basic moves
//!   sufficient: on the classical non-negative fiber they are not a Markov
//!   basis.
//! * [`fiber`] enumerates small fibers exhaustively, yielding the exact
//!   conditional distribution and ground truth for connectivity questions
//!   about the relaxed fiber graph.
//!
//! [`table`] holds the dense table and margin types, [`moves`] the move
//! catalog and decomposition replay, [`model`] the design matrix, IPFP and
//! the asymptotic chi-square reference, and [`cli`] the data files and
//! report plumbing behind the `fibersampler` binary.

pub mod cli;
pub mod fiber;
pub mod model;
pub mod moves;
pub mod sampler;
pub mod table;

pub use fiber::{
    connected_components, enumerate_fiber, exact_conditional_distribution,
    verify_relaxed_connectivity, ConnectivityReport, ExactDistribution, Fiber, FiberError,
    DEFAULT_FIBER_CAP,
};
pub use model::{
    build_design_matrix, chi_square_density, chi_square_quantile, chi_square_survival,
    degrees_of_freedom, ipfp_fit, ipfp_fit_default, DesignMatrix, FittedTable, ModelError,
};
pub use moves::{
    apply_move, enumerate_basic_moves, kernel_check, replay_decomposition, BasicMove,
    Decomposition, GeneralMove, MoveError, MoveSet, ReplayError, ReplayReport, Sign, SignedMove,
};
pub use sampler::{
    burn_in_for_fraction, estimate_histogram, run_chain, run_chain_with_observer, run_chains,
    ChainConfig, ChainResult, Histogram, PooledResult, SamplerError,
};
pub use table::{chi_square, compute_margins, Dims, MarginSet, RelaxDepth, Table3D, TableError};
