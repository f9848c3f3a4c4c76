//! Dense three-way integer tables, their two-way margins, and the
//! goodness-of-fit statistic.
//!
//! A table is a flat row-major `i64` array of cell counts with dimensions
//! `(I, J, K)`. Relaxed tables allow cells down to `-t` for a floor depth
//! `t`; the floor a table was validated against travels with it. Tables are
//! immutable after construction, so they can be shared freely across
//! threads.

use crate::model::FittedTable;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fitted cells below this threshold are treated as structural zeros.
pub const ZERO_FITTED_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TableError {
    #[error("cell array has length {got}, dims {dims:?} require {expected}")]
    BadCellCount {
        dims: (usize, usize, usize),
        expected: usize,
        got: usize,
    },
    #[error("dimensions must all be positive, got {0:?}")]
    EmptyDimension((usize, usize, usize)),
    #[error("cell {index} = {value} is below the floor -{floor}")]
    FloorViolation {
        index: usize,
        value: i64,
        floor: u32,
    },
    #[error("fitted cell {index} is ~0 but observed count is {observed}")]
    ZeroFittedCell { index: usize, observed: i64 },
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch(Dims, Dims),
}

/// Table dimensions `(I, J, K)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl Dims {
    pub fn new(i: usize, j: usize, k: usize) -> Self {
        Dims { i, j, k }
    }

    /// Total number of cells, `I*J*K`.
    pub fn cell_count(&self) -> usize {
        self.i * self.j * self.k
    }

    /// Flat row-major index of cell `(i, j, k)`.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.i && j < self.j && k < self.k);
        (i * self.j + j) * self.k + k
    }

    /// Inverse of [`Dims::index`].
    pub fn unindex(&self, flat: usize) -> (usize, usize, usize) {
        let k = flat % self.k;
        let rest = flat / self.k;
        (rest / self.j, rest % self.j, k)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.i, self.j, self.k]
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.i, self.j, self.k)
    }
}

/// Relaxation depth `t`: cells are allowed down to `-t`. `t = 0` is the
/// classical non-negative fiber; the default `t = 1` allows cells to be -1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelaxDepth(pub u32);

impl RelaxDepth {
    pub const ZERO: RelaxDepth = RelaxDepth(0);
    pub const ONE: RelaxDepth = RelaxDepth(1);

    /// Smallest admissible cell value, `-t`.
    pub fn min_cell(&self) -> i64 {
        -i64::from(self.0)
    }
}

impl Default for RelaxDepth {
    fn default() -> Self {
        RelaxDepth::ONE
    }
}

impl std::fmt::Display for RelaxDepth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A dense three-way contingency table of `i64` counts.
///
/// Equality and hashing consider only the dimensions and the cell values;
/// the floor records the validation regime the table was created under.
#[derive(Clone, Debug)]
pub struct Table3D {
    dims: Dims,
    cells: Vec<i64>,
    floor: RelaxDepth,
}

impl PartialEq for Table3D {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.cells == other.cells
    }
}

impl Eq for Table3D {}

impl std::hash::Hash for Table3D {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.dims.hash(state);
        self.cells.hash(state);
    }
}

impl Table3D {
    /// A standard (non-negative) table.
    pub fn new(dims: Dims, cells: Vec<i64>) -> Result<Self, TableError> {
        Self::with_floor(dims, cells, RelaxDepth::ZERO)
    }

    /// A relaxed table whose cells may drop to `-floor`.
    pub fn with_floor(dims: Dims, cells: Vec<i64>, floor: RelaxDepth) -> Result<Self, TableError> {
        if dims.i == 0 || dims.j == 0 || dims.k == 0 {
            return Err(TableError::EmptyDimension((dims.i, dims.j, dims.k)));
        }
        if cells.len() != dims.cell_count() {
            return Err(TableError::BadCellCount {
                dims: (dims.i, dims.j, dims.k),
                expected: dims.cell_count(),
                got: cells.len(),
            });
        }
        let min = floor.min_cell();
        if let Some((index, &value)) = cells.iter().enumerate().find(|(_, &v)| v < min) {
            return Err(TableError::FloorViolation {
                index,
                value,
                floor: floor.0,
            });
        }
        Ok(Table3D { dims, cells, floor })
    }

    pub fn zeros(dims: Dims) -> Self {
        Table3D {
            cells: vec![0; dims.cell_count()],
            dims,
            floor: RelaxDepth::ZERO,
        }
    }

    pub fn ones(dims: Dims) -> Self {
        Table3D {
            cells: vec![1; dims.cell_count()],
            dims,
            floor: RelaxDepth::ZERO,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn cells(&self) -> &[i64] {
        &self.cells
    }

    pub fn floor(&self) -> RelaxDepth {
        self.floor
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> i64 {
        self.cells[self.dims.index(i, j, k)]
    }

    pub fn grand_total(&self) -> i64 {
        self.cells.iter().sum()
    }

    pub fn min_cell(&self) -> i64 {
        self.cells.iter().copied().min().unwrap_or(0)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.cells.iter().all(|&v| v >= 0)
    }

    /// The three two-way margin matrices of this table.
    pub fn margins(&self) -> MarginSet {
        MarginSet::of_cells(self.dims, &self.cells)
    }

    /// Adds signed cell deltas, enforcing the floor on every changed cell.
    /// The result carries `floor` as its validation regime.
    pub(crate) fn apply_deltas(
        &self,
        deltas: &[(usize, i64)],
        floor: RelaxDepth,
    ) -> Result<Table3D, TableError> {
        let min = floor.min_cell();
        for &(index, d) in deltas {
            let value = self.cells[index] + d;
            if value < min {
                return Err(TableError::FloorViolation {
                    index,
                    value,
                    floor: floor.0,
                });
            }
        }
        let mut cells = self.cells.clone();
        for &(index, d) in deltas {
            cells[index] += d;
        }
        Ok(Table3D {
            dims: self.dims,
            cells,
            floor,
        })
    }
}

/// The three two-way margin matrices of a table: sums over `i` (a `J x K`
/// matrix), over `j` (`I x K`), and over `k` (`I x J`). Flattened in that
/// block order they form the margin vector the design matrix produces.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MarginSet {
    dims: Dims,
    jk: Vec<i64>,
    ik: Vec<i64>,
    ij: Vec<i64>,
}

impl MarginSet {
    pub(crate) fn of_cells(dims: Dims, cells: &[i64]) -> MarginSet {
        let mut jk = vec![0i64; dims.j * dims.k];
        let mut ik = vec![0i64; dims.i * dims.k];
        let mut ij = vec![0i64; dims.i * dims.j];
        let mut idx = 0;
        for i in 0..dims.i {
            for j in 0..dims.j {
                for k in 0..dims.k {
                    let v = cells[idx];
                    jk[j * dims.k + k] += v;
                    ik[i * dims.k + k] += v;
                    ij[i * dims.j + j] += v;
                    idx += 1;
                }
            }
        }
        MarginSet { dims, jk, ik, ij }
    }

    /// Builds a margin set from raw matrices; shapes are `J*K`, `I*K`, `I*J`.
    pub fn from_parts(
        dims: Dims,
        jk: Vec<i64>,
        ik: Vec<i64>,
        ij: Vec<i64>,
    ) -> Result<Self, TableError> {
        if jk.len() != dims.j * dims.k || ik.len() != dims.i * dims.k || ij.len() != dims.i * dims.j
        {
            return Err(TableError::BadCellCount {
                dims: (dims.i, dims.j, dims.k),
                expected: dims.j * dims.k + dims.i * dims.k + dims.i * dims.j,
                got: jk.len() + ik.len() + ij.len(),
            });
        }
        Ok(MarginSet { dims, jk, ik, ij })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn jk(&self, j: usize, k: usize) -> i64 {
        self.jk[j * self.dims.k + k]
    }

    #[inline]
    pub fn ik(&self, i: usize, k: usize) -> i64 {
        self.ik[i * self.dims.k + k]
    }

    #[inline]
    pub fn ij(&self, i: usize, j: usize) -> i64 {
        self.ij[i * self.dims.j + j]
    }

    pub fn jk_matrix(&self) -> &[i64] {
        &self.jk
    }

    pub fn ik_matrix(&self) -> &[i64] {
        &self.ik
    }

    pub fn ij_matrix(&self) -> &[i64] {
        &self.ij
    }

    /// Grand totals of the three matrices; equal for any margin set derived
    /// from a table.
    pub fn grand_totals(&self) -> (i64, i64, i64) {
        (
            self.jk.iter().sum(),
            self.ik.iter().sum(),
            self.ij.iter().sum(),
        )
    }

    /// True when the three grand totals agree.
    pub fn is_consistent(&self) -> bool {
        let (a, b, c) = self.grand_totals();
        a == b && b == c
    }

    pub fn is_nonnegative(&self) -> bool {
        self.jk
            .iter()
            .chain(&self.ik)
            .chain(&self.ij)
            .all(|&v| v >= 0)
    }

    pub fn is_zero(&self) -> bool {
        self.jk
            .iter()
            .chain(&self.ik)
            .chain(&self.ij)
            .all(|&v| v == 0)
    }

    /// Margin vector in block order jk, ik, ij; matches the design-matrix
    /// row ordering.
    pub fn flatten(&self) -> Vec<i64> {
        let mut out = Vec::with_capacity(self.jk.len() + self.ik.len() + self.ij.len());
        out.extend_from_slice(&self.jk);
        out.extend_from_slice(&self.ik);
        out.extend_from_slice(&self.ij);
        out
    }

    /// Margins shifted by `t` times the margins of the all-ones table:
    /// every jk entry gains `t*I`, every ik entry `t*J`, every ij entry
    /// `t*K`. These are the margins of `u + t` for any `u` with margins
    /// `self`.
    pub fn shifted_by_ones(&self, t: u32) -> MarginSet {
        let t = i64::from(t);
        MarginSet {
            dims: self.dims,
            jk: self.jk.iter().map(|v| v + t * self.dims.i as i64).collect(),
            ik: self.ik.iter().map(|v| v + t * self.dims.j as i64).collect(),
            ij: self.ij.iter().map(|v| v + t * self.dims.k as i64).collect(),
        }
    }
}

/// Computes the three two-way margin matrices of a table.
pub fn compute_margins(table: &Table3D) -> MarginSet {
    table.margins()
}

/// Pearson chi-square statistic `sum (obs - fit)^2 / fit`.
///
/// A fitted cell below [`ZERO_FITTED_THRESHOLD`] contributes nothing when
/// the observed count is zero and is an error otherwise.
pub fn chi_square(observed: &Table3D, fitted: &FittedTable) -> Result<f64, TableError> {
    if observed.dims() != fitted.dims() {
        return Err(TableError::DimensionMismatch(
            observed.dims(),
            fitted.dims(),
        ));
    }
    chi_square_cells(observed.cells(), fitted.cells())
}

pub(crate) fn chi_square_cells(observed: &[i64], fitted: &[f64]) -> Result<f64, TableError> {
    let mut total = 0.0;
    for (index, (&o, &f)) in observed.iter().zip(fitted).enumerate() {
        if f < ZERO_FITTED_THRESHOLD {
            if o != 0 {
                return Err(TableError::ZeroFittedCell { index, observed: o });
            }
            continue;
        }
        let d = o as f64 - f;
        total += d * d / f;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FittedTable;
    use crate::moves::{apply_move, BasicMove, Sign, SignedMove};
    use proptest::prelude::*;

    fn dims222() -> Dims {
        Dims::new(2, 2, 2)
    }

    #[test]
    fn margins_of_all_ones_2x2x2_are_all_twos() {
        let t = Table3D::ones(dims222());
        let m = t.margins();
        let flat = m.flatten();
        assert_eq!(flat.len(), 12);
        assert!(flat.iter().all(|&v| v == 2));
    }

    #[test]
    fn margins_of_zero_table_are_zero() {
        let t = Table3D::zeros(Dims::new(3, 4, 2));
        assert!(t.margins().is_zero());
    }

    #[test]
    fn margin_grand_totals_match_table_total() {
        let t = Table3D::new(Dims::new(2, 3, 2), vec![5, 0, 1, 2, 3, 4, 1, 1, 2, 2, 0, 7]).unwrap();
        let (a, b, c) = t.margins().grand_totals();
        assert_eq!(a, t.grand_total());
        assert_eq!(b, t.grand_total());
        assert_eq!(c, t.grand_total());
    }

    #[test]
    fn construction_validates_length_and_floor() {
        let err = Table3D::new(dims222(), vec![1, 2, 3]).unwrap_err();
        assert!(matches!(err, TableError::BadCellCount { .. }));

        let err = Table3D::new(dims222(), vec![1, 1, 1, 1, 1, 1, 1, -1]).unwrap_err();
        assert!(matches!(err, TableError::FloorViolation { index: 7, .. }));

        let ok = Table3D::with_floor(dims222(), vec![1, 1, 1, 1, 1, 1, 1, -1], RelaxDepth::ONE);
        assert!(ok.is_ok());
    }

    #[test]
    fn apply_basic_move_to_all_ones() {
        let t = Table3D::ones(dims222());
        let mv = SignedMove::plus(BasicMove::new(0, 1, 0, 1, 0, 1).unwrap());
        let u = apply_move(&t, &mv, RelaxDepth::ZERO).unwrap();
        assert_eq!(u.cells(), &[2, 0, 0, 2, 0, 2, 2, 0]);
        assert_eq!(u.margins(), t.margins());
    }

    #[test]
    fn apply_move_then_inverse_is_identity() {
        let t = Table3D::new(dims222(), vec![3, 1, 1, 3, 1, 3, 3, 1]).unwrap();
        let mv = BasicMove::new(0, 1, 0, 1, 0, 1).unwrap();
        let fwd = apply_move(&t, &SignedMove::plus(mv), RelaxDepth::ZERO).unwrap();
        let back = apply_move(&fwd, &SignedMove::minus(mv), RelaxDepth::ZERO).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn apply_move_to_zeros_respects_floor() {
        let t = Table3D::zeros(dims222());
        let mv = SignedMove::plus(BasicMove::new(0, 1, 0, 1, 0, 1).unwrap());
        let err = apply_move(&t, &mv, RelaxDepth::ZERO).unwrap_err();
        assert!(matches!(
            err,
            crate::moves::MoveError::FloorViolation { .. }
        ));

        let u = apply_move(&t, &mv, RelaxDepth::ONE).unwrap();
        assert_eq!(u.cells(), &[1, -1, -1, 1, -1, 1, 1, -1]);
        assert!(u.margins().is_zero());
    }

    #[test]
    fn chi_square_is_zero_when_observed_equals_fitted() {
        let t = Table3D::new(dims222(), vec![4, 2, 1, 3, 2, 2, 5, 1]).unwrap();
        let f = FittedTable::new(dims222(), t.cells().iter().map(|&v| v as f64).collect()).unwrap();
        assert_eq!(chi_square(&t, &f).unwrap(), 0.0);
    }

    #[test]
    fn chi_square_zero_fitted_cell_rules() {
        let t = Table3D::new(dims222(), vec![0, 2, 1, 3, 2, 2, 5, 1]).unwrap();
        let mut fitted: Vec<f64> = t.cells().iter().map(|&v| v as f64).collect();
        fitted[0] = 0.0;
        let f = FittedTable::new(dims222(), fitted).unwrap();
        // observed 0 on a ~0 fitted cell contributes nothing
        assert_eq!(chi_square(&t, &f).unwrap(), 0.0);

        let t_bad = Table3D::new(dims222(), vec![1, 2, 1, 3, 2, 2, 5, 1]).unwrap();
        let err = chi_square(&t_bad, &f).unwrap_err();
        assert_eq!(
            err,
            TableError::ZeroFittedCell {
                index: 0,
                observed: 1
            }
        );
    }

    #[test]
    fn shifted_margins_match_shifted_table() {
        let t = Table3D::new(Dims::new(2, 3, 2), vec![1, 0, 2, 4, 0, 1, 3, 2, 1, 0, 5, 2]).unwrap();
        let shifted = Table3D::new(t.dims(), t.cells().iter().map(|v| v + 2).collect()).unwrap();
        assert_eq!(t.margins().shifted_by_ones(2), shifted.margins());
    }

    proptest! {
        #[test]
        fn prop_margins_preserved_by_moves(
            cells in proptest::collection::vec(0i64..6, 24),
            i in 0usize..2, j in 0usize..2, k in 0usize..3,
            sign in proptest::bool::ANY,
        ) {
            let dims = Dims::new(3, 2, 4);
            let t = Table3D::new(dims, cells).unwrap();
            let mv = BasicMove::new(i, i + 1, j, j + 1, k, k + 1).unwrap();
            let sm = SignedMove { basic: mv, sign: if sign { Sign::Plus } else { Sign::Minus } };
            if let Ok(u) = apply_move(&t, &sm, RelaxDepth::ONE) {
                prop_assert_eq!(u.margins(), t.margins());
                let back = apply_move(&u, &sm.negated(), RelaxDepth::ONE).unwrap();
                prop_assert_eq!(back, t);
            }
        }

        #[test]
        fn prop_chi_square_nonnegative(
            obs in proptest::collection::vec(0i64..20, 8),
            fit in proptest::collection::vec(0.01f64..20.0, 8),
        ) {
            let t = Table3D::new(Dims::new(2,2,2), obs).unwrap();
            let f = FittedTable::new(Dims::new(2,2,2), fit).unwrap();
            let x = chi_square(&t, &f).unwrap();
            prop_assert!(x >= 0.0);
        }
    }
}
