//! The no-three-way-interaction model: design matrix, maximum-likelihood
//! fitting by iterative proportional fitting, degrees of freedom, and the
//! asymptotic chi-square reference distribution.

use crate::table::{Dims, MarginSet, Table3D, TableError};
use thiserror::Error;

/// Default IPFP tolerance on the maximum absolute margin discrepancy.
pub const IPFP_TOL: f64 = 1e-8;
/// Default IPFP iteration cap, counted in full three-margin cycles.
pub const IPFP_MAX_ITER: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("IPFP did not converge after {iterations} cycles (max margin discrepancy {discrepancy:.3e})")]
    NoConvergence { iterations: usize, discrepancy: f64 },
    #[error("observed table must be non-negative for fitting")]
    NegativeObserved,
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// The 0/1 design matrix of the no-three-way-interaction model for tables of
/// the given dimensions. Rows are the margin equations in block order
/// jk (sums over i), ik (sums over j), ij (sums over k), row-major within
/// each block; columns are cells in flat row-major order. Every column has
/// exactly three ones, one per block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DesignMatrix {
    dims: Dims,
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

/// Builds the design matrix for the given dimensions.
pub fn build_design_matrix(dims: Dims) -> DesignMatrix {
    let (ni, nj, nk) = (dims.i, dims.j, dims.k);
    let rows = nj * nk + ni * nk + ni * nj;
    let cols = dims.cell_count();
    let mut data = vec![0u8; rows * cols];
    let ik_offset = nj * nk;
    let ij_offset = nj * nk + ni * nk;
    for i in 0..ni {
        for j in 0..nj {
            for k in 0..nk {
                let col = dims.index(i, j, k);
                data[(j * nk + k) * cols + col] = 1;
                data[(ik_offset + i * nk + k) * cols + col] = 1;
                data[(ij_offset + i * nj + j) * cols + col] = 1;
            }
        }
    }
    DesignMatrix {
        dims,
        rows,
        cols,
        data,
    }
}

impl DesignMatrix {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Matrix-vector product `A u` over a flat cell vector.
    pub fn apply(&self, cells: &[i64]) -> Vec<i64> {
        assert_eq!(cells.len(), self.cols, "cell vector length mismatch");
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(cells)
                    .map(|(&a, &u)| i64::from(a) * u)
                    .sum()
            })
            .collect()
    }
}

/// Fitted cell means from a maximum-likelihood fit; real-valued and
/// non-negative, with margins matching the observed table to within the
/// fitting tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedTable {
    dims: Dims,
    cells: Vec<f64>,
}

impl FittedTable {
    pub fn new(dims: Dims, cells: Vec<f64>) -> Result<Self, TableError> {
        if cells.len() != dims.cell_count() {
            return Err(TableError::BadCellCount {
                dims: (dims.i, dims.j, dims.k),
                expected: dims.cell_count(),
                got: cells.len(),
            });
        }
        Ok(FittedTable { dims, cells })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.cells[self.dims.index(i, j, k)]
    }

    /// Maximum absolute difference between this table's margins and the
    /// target margin set.
    pub fn margin_discrepancy(&self, target: &MarginSet) -> f64 {
        let dims = self.dims;
        let mut worst = 0.0f64;
        for j in 0..dims.j {
            for k in 0..dims.k {
                let s: f64 = (0..dims.i).map(|i| self.get(i, j, k)).sum();
                worst = worst.max((s - target.jk(j, k) as f64).abs());
            }
        }
        for i in 0..dims.i {
            for k in 0..dims.k {
                let s: f64 = (0..dims.j).map(|j| self.get(i, j, k)).sum();
                worst = worst.max((s - target.ik(i, k) as f64).abs());
            }
        }
        for i in 0..dims.i {
            for j in 0..dims.j {
                let s: f64 = (0..dims.k).map(|k| self.get(i, j, k)).sum();
                worst = worst.max((s - target.ij(i, j) as f64).abs());
            }
        }
        worst
    }
}

/// Maximum-likelihood cell means under the no-three-way-interaction model,
/// by cyclic proportional rescaling to the three two-way margins of the
/// observed table.
///
/// The working table starts at all ones, except that cells lying on a zero
/// margin are pinned to zero. Each cycle rescales to the ij, ik, and jk
/// margins in turn; convergence is declared when the maximum absolute margin
/// discrepancy drops below `tol`. The result depends on the observed table
/// only through its margins.
pub fn ipfp_fit(observed: &Table3D, tol: f64, max_iter: usize) -> Result<FittedTable, ModelError> {
    if !observed.is_nonnegative() {
        return Err(ModelError::NegativeObserved);
    }
    if !tol.is_finite() || tol <= 0.0 {
        return Err(ModelError::BadTolerance(tol));
    }
    let dims = observed.dims();
    let margins = observed.margins();
    let mut work = vec![1.0f64; dims.cell_count()];
    for i in 0..dims.i {
        for j in 0..dims.j {
            for k in 0..dims.k {
                if margins.ij(i, j) == 0 || margins.ik(i, k) == 0 || margins.jk(j, k) == 0 {
                    work[dims.index(i, j, k)] = 0.0;
                }
            }
        }
    }

    let mut discrepancy = f64::INFINITY;
    for cycle in 0..max_iter {
        // ij margins (sums over k)
        for i in 0..dims.i {
            for j in 0..dims.j {
                let base = dims.index(i, j, 0);
                let current: f64 = work[base..base + dims.k].iter().sum();
                if current > 0.0 {
                    let factor = margins.ij(i, j) as f64 / current;
                    for v in &mut work[base..base + dims.k] {
                        *v *= factor;
                    }
                }
            }
        }
        // ik margins (sums over j)
        for i in 0..dims.i {
            for k in 0..dims.k {
                let current: f64 = (0..dims.j).map(|j| work[dims.index(i, j, k)]).sum();
                if current > 0.0 {
                    let factor = margins.ik(i, k) as f64 / current;
                    for j in 0..dims.j {
                        work[dims.index(i, j, k)] *= factor;
                    }
                }
            }
        }
        // jk margins (sums over i)
        for j in 0..dims.j {
            for k in 0..dims.k {
                let current: f64 = (0..dims.i).map(|i| work[dims.index(i, j, k)]).sum();
                if current > 0.0 {
                    let factor = margins.jk(j, k) as f64 / current;
                    for i in 0..dims.i {
                        work[dims.index(i, j, k)] *= factor;
                    }
                }
            }
        }
        let fitted = FittedTable {
            dims,
            cells: work.clone(),
        };
        discrepancy = fitted.margin_discrepancy(&margins);
        if discrepancy < tol {
            return Ok(fitted);
        }
        let _ = cycle;
    }
    Err(ModelError::NoConvergence {
        iterations: max_iter,
        discrepancy,
    })
}

/// [`ipfp_fit`] with the default tolerance and iteration cap.
pub fn ipfp_fit_default(observed: &Table3D) -> Result<FittedTable, ModelError> {
    ipfp_fit(observed, IPFP_TOL, IPFP_MAX_ITER)
}

/// Degrees of freedom of the goodness-of-fit test, `(I-1)(J-1)(K-1)`.
pub fn degrees_of_freedom(dims: Dims) -> usize {
    (dims.i - 1) * (dims.j - 1) * (dims.k - 1)
}

#[allow(clippy::excessive_precision)]
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for positive arguments (Lanczos, g=7).
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // reflection, only hit for arguments below 1/2
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEFFS[0];
    for (n, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + n as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x) by series expansion.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut n = a;
    loop {
        n += 1.0;
        term *= x / n;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * (a * x.ln() - x - ln_gamma(a)).exp()
}

/// Regularized upper incomplete gamma Q(a, x) by Lentz continued fraction.
fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h * (a * x.ln() - x - ln_gamma(a)).exp()
}

/// Upper-tail probability of the chi-square distribution,
/// `P(X > x)` for `X ~ chi-square with df degrees of freedom`.
pub fn chi_square_survival(x: f64, df: usize) -> f64 {
    assert!(df >= 1, "degrees of freedom must be at least 1");
    if x <= 0.0 {
        return 1.0;
    }
    let a = df as f64 / 2.0;
    let half = x / 2.0;
    if half < a + 1.0 {
        1.0 - gamma_p_series(a, half)
    } else {
        gamma_q_continued_fraction(a, half)
    }
}

/// Density of the chi-square distribution with `df` degrees of freedom.
pub fn chi_square_density(x: f64, df: usize) -> f64 {
    assert!(df >= 1);
    if x <= 0.0 {
        return 0.0;
    }
    let a = df as f64 / 2.0;
    ((a - 1.0) * x.ln() - x / 2.0 - a * 2.0f64.ln() - ln_gamma(a)).exp()
}

/// Quantile of the chi-square distribution: the `x` with `P(X <= x) = p`,
/// found by bisection on the survival function.
pub fn chi_square_quantile(p: f64, df: usize) -> f64 {
    assert!((0.0..1.0).contains(&p), "p must lie in [0, 1)");
    if p == 0.0 {
        return 0.0;
    }
    let target = 1.0 - p;
    let mut hi = df as f64;
    while chi_square_survival(hi, df) > target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi_square_survival(mid, df) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Log-factorial lookup for the hypergeometric cell weights; values beyond
/// the precomputed range fall back to `ln_gamma`.
#[derive(Clone, Debug)]
pub(crate) struct LogFactorialTable {
    vals: Vec<f64>,
}

impl LogFactorialTable {
    pub fn up_to(n: usize) -> Self {
        let mut vals = Vec::with_capacity(n + 1);
        vals.push(0.0);
        let mut acc = 0.0f64;
        for v in 1..=n {
            acc += (v as f64).ln();
            vals.push(acc);
        }
        LogFactorialTable { vals }
    }

    /// `ln(n!)` for `n >= 0`.
    #[inline]
    pub fn get(&self, n: i64) -> f64 {
        debug_assert!(n >= 0, "log-factorial of a negative count");
        match self.vals.get(n as usize) {
            Some(&v) => v,
            None => ln_gamma(n as f64 + 1.0),
        }
    }
}
