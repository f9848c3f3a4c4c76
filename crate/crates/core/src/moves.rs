//! Moves on three-way tables: the catalog of basic moves on 2x2x2 minors,
//! general kernel moves, and replay of move-sequence decompositions under a
//! cell floor.
//!
//! A basic move `(i,i'; j,j'; k,k')` adds the +-1 pattern
//!
//! ```text
//! slice i:  +1 -1      slice i':  -1 +1
//!           -1 +1                 +1 -1
//! ```
//!
//! to the 2x2x2 minor picked out by the three index pairs and leaves every
//! two-way margin unchanged.

use crate::table::{Dims, MarginSet, RelaxDepth, Table3D, TableError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MoveError {
    #[error("move indices must be distinct within each axis")]
    IndicesNotDistinct,
    #[error("move indices exceed table dimensions {dims}")]
    OutOfRange { dims: Dims },
    #[error("every dimension must be at least 2 for basic moves, got {dims}")]
    DimensionTooSmall { dims: Dims },
    #[error("cell {index} = {value} is below the floor -{floor}")]
    FloorViolation {
        index: usize,
        value: i64,
        floor: u32,
    },
    #[error("sign must be +1 or -1, got {0}")]
    BadSign(i8),
}

/// Sign of a move application: `Minus` adds the negated dense expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> i64 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn flipped(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

impl TryFrom<i8> for Sign {
    type Error = MoveError;
    fn try_from(v: i8) -> Result<Self, MoveError> {
        match v {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            other => Err(MoveError::BadSign(other)),
        }
    }
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        s.value() as i8
    }
}

/// A basic move on the 2x2x2 minor `(i,i'; j,j'; k,k')`, stored 0-based and
/// canonically with `i < i'`, `j < j'`, `k < k'`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BasicMove {
    i: (usize, usize),
    j: (usize, usize),
    k: (usize, usize),
}

impl BasicMove {
    /// Builds a canonical move from 0-based indices, already ordered.
    pub fn new(
        i: usize,
        i2: usize,
        j: usize,
        j2: usize,
        k: usize,
        k2: usize,
    ) -> Result<Self, MoveError> {
        if i >= i2 || j >= j2 || k >= k2 {
            return Err(MoveError::IndicesNotDistinct);
        }
        Ok(BasicMove {
            i: (i, i2),
            j: (j, j2),
            k: (k, k2),
        })
    }

    /// Canonicalizes arbitrary distinct 0-based indices. Swapping one index
    /// pair negates the dense expansion, so the returned sign records the
    /// swap parity: `expansion(input) = sign * expansion(canonical)`.
    pub fn canonical(
        i: usize,
        i2: usize,
        j: usize,
        j2: usize,
        k: usize,
        k2: usize,
    ) -> Result<(Self, Sign), MoveError> {
        if i == i2 || j == j2 || k == k2 {
            return Err(MoveError::IndicesNotDistinct);
        }
        let mut sign = Sign::Plus;
        let mut order = |a: usize, b: usize| {
            if a < b {
                (a, b)
            } else {
                sign = sign.flipped();
                (b, a)
            }
        };
        let i = order(i, i2);
        let j = order(j, j2);
        let k = order(k, k2);
        Ok((BasicMove { i, j, k }, sign))
    }

    pub fn indices(&self) -> ((usize, usize), (usize, usize), (usize, usize)) {
        (self.i, self.j, self.k)
    }

    /// The eight touched cells as `(flat index, +-1)` pairs.
    pub fn cells(&self, dims: Dims) -> Result<[(usize, i64); 8], MoveError> {
        let (i, i2) = self.i;
        let (j, j2) = self.j;
        let (k, k2) = self.k;
        if i2 >= dims.i || j2 >= dims.j || k2 >= dims.k {
            return Err(MoveError::OutOfRange { dims });
        }
        Ok([
            (dims.index(i, j, k), 1),
            (dims.index(i, j2, k), -1),
            (dims.index(i, j, k2), -1),
            (dims.index(i, j2, k2), 1),
            (dims.index(i2, j, k), -1),
            (dims.index(i2, j2, k), 1),
            (dims.index(i2, j, k2), 1),
            (dims.index(i2, j2, k2), -1),
        ])
    }

    /// Dense expansion as a general move on tables of the given dimensions.
    pub fn expand(&self, dims: Dims) -> Result<GeneralMove, MoveError> {
        let mut delta = vec![0i64; dims.cell_count()];
        for (index, d) in self.cells(dims)? {
            delta[index] = d;
        }
        Ok(GeneralMove { dims, delta })
    }
}

impl std::fmt::Display for BasicMove {
    /// 1-based `(i,i'; j,j'; k,k')` notation.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({},{}; {},{}; {},{})",
            self.i.0 + 1,
            self.i.1 + 1,
            self.j.0 + 1,
            self.j.1 + 1,
            self.k.0 + 1,
            self.k.1 + 1
        )
    }
}

/// A basic move together with the direction it is applied in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SignedMove {
    pub basic: BasicMove,
    pub sign: Sign,
}

impl SignedMove {
    pub fn plus(basic: BasicMove) -> Self {
        SignedMove {
            basic,
            sign: Sign::Plus,
        }
    }

    pub fn minus(basic: BasicMove) -> Self {
        SignedMove {
            basic,
            sign: Sign::Minus,
        }
    }

    pub fn negated(&self) -> SignedMove {
        SignedMove {
            basic: self.basic,
            sign: self.sign.flipped(),
        }
    }

    pub fn cells(&self, dims: Dims) -> Result<[(usize, i64); 8], MoveError> {
        let mut cells = self.basic.cells(dims)?;
        if self.sign == Sign::Minus {
            for c in &mut cells {
                c.1 = -c.1;
            }
        }
        Ok(cells)
    }
}

impl std::fmt::Display for SignedMove {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self.sign {
            Sign::Plus => '+',
            Sign::Minus => '-',
        };
        write!(f, "{}{}", s, self.basic)
    }
}

/// Adds a signed basic move to a table, enforcing the floor on every
/// changed cell. Margins are unchanged whenever this succeeds.
pub fn apply_move(
    table: &Table3D,
    mv: &SignedMove,
    floor: RelaxDepth,
) -> Result<Table3D, MoveError> {
    let cells = mv.cells(table.dims())?;
    table.apply_deltas(&cells, floor).map_err(|e| match e {
        TableError::FloorViolation {
            index,
            value,
            floor,
        } => MoveError::FloorViolation {
            index,
            value,
            floor,
        },
        // apply_deltas only reports floor violations
        other => unreachable!("unexpected error applying move: {other}"),
    })
}

/// An arbitrary integer move: a table-shaped delta whose three two-way
/// margins all vanish (a kernel element of the design matrix).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GeneralMove {
    dims: Dims,
    delta: Vec<i64>,
}

impl GeneralMove {
    pub fn new(dims: Dims, delta: Vec<i64>) -> Result<Self, TableError> {
        if delta.len() != dims.cell_count() {
            return Err(TableError::BadCellCount {
                dims: (dims.i, dims.j, dims.k),
                expected: dims.cell_count(),
                got: delta.len(),
            });
        }
        Ok(GeneralMove { dims, delta })
    }

    /// The difference `a - b` of two equal-shaped tables.
    pub fn between(a: &Table3D, b: &Table3D) -> Result<Self, TableError> {
        if a.dims() != b.dims() {
            return Err(TableError::DimensionMismatch(a.dims(), b.dims()));
        }
        let delta = a
            .cells()
            .iter()
            .zip(b.cells())
            .map(|(x, y)| x - y)
            .collect();
        Ok(GeneralMove {
            dims: a.dims(),
            delta,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn delta(&self) -> &[i64] {
        &self.delta
    }

    pub fn margins(&self) -> MarginSet {
        MarginSet::of_cells(self.dims, &self.delta)
    }
}

/// True iff all three two-way margins of the delta vanish, i.e. the move
/// lies in the kernel of the no-three-way-interaction design matrix.
pub fn kernel_check(mv: &GeneralMove) -> bool {
    mv.margins().is_zero()
}

/// The full catalog of canonical basic moves for given dimensions, in
/// lexicographic order. Its cardinality is `C(I,2)*C(J,2)*C(K,2)`.
#[derive(Clone, Debug)]
pub struct MoveSet {
    dims: Dims,
    moves: Vec<BasicMove>,
}

impl MoveSet {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BasicMove> {
        self.moves.iter()
    }

    pub fn moves(&self) -> &[BasicMove] {
        &self.moves
    }

    /// Closed-form catalog size for the given dimensions.
    pub fn expected_len(dims: Dims) -> usize {
        let c2 = |n: usize| n * (n - 1) / 2;
        c2(dims.i) * c2(dims.j) * c2(dims.k)
    }
}

/// Enumerates every canonical basic move for the given dimensions.
pub fn enumerate_basic_moves(dims: Dims) -> Result<MoveSet, MoveError> {
    if dims.i < 2 || dims.j < 2 || dims.k < 2 {
        return Err(MoveError::DimensionTooSmall { dims });
    }
    let mut moves = Vec::with_capacity(MoveSet::expected_len(dims));
    for i in 0..dims.i {
        for i2 in i + 1..dims.i {
            for j in 0..dims.j {
                for j2 in j + 1..dims.j {
                    for k in 0..dims.k {
                        for k2 in k + 1..dims.k {
                            moves.push(BasicMove {
                                i: (i, i2),
                                j: (j, j2),
                                k: (k, k2),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(MoveSet { dims, moves })
}

/// A claimed path between two tables with equal margins: apply `steps` to
/// `start` under `floor` and land exactly on `expected_end`.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub start: Table3D,
    pub steps: Vec<SignedMove>,
    pub expected_end: Table3D,
    pub floor: RelaxDepth,
}

/// One cell where the replayed end differs from the expected end.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellDiff {
    pub index: usize,
    pub expected: i64,
    pub got: i64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("start and expected end have different margins")]
    MarginMismatch,
    #[error("step {step} drives cell {index} to {value}, below the floor -{floor}")]
    FloorViolation {
        step: usize,
        index: usize,
        value: i64,
        floor: u32,
    },
    #[error("replay ended with {} cells differing from the expected table", diffs.len())]
    EndMismatch { diffs: Vec<CellDiff> },
    #[error(transparent)]
    Move(MoveError),
}

/// Trajectory statistics for a successful replay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReplayReport {
    pub steps_applied: usize,
    /// Minimum cell value over the start table and every intermediate.
    pub min_intermediate_cell: i64,
    /// Number of distinct cells that were negative at any point.
    pub cells_ever_negative: usize,
}

/// Replays a decomposition, enforcing the floor after every step.
pub fn replay_decomposition(d: &Decomposition) -> Result<ReplayReport, ReplayError> {
    if d.start.margins() != d.expected_end.margins() {
        return Err(ReplayError::MarginMismatch);
    }
    let mut current = d.start.clone();
    let mut min_cell = current.min_cell();
    let mut negative_cells: std::collections::HashSet<usize> = current
        .cells()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v < 0)
        .map(|(n, _)| n)
        .collect();
    for (step, mv) in d.steps.iter().enumerate() {
        current = apply_move(&current, mv, d.floor).map_err(|e| match e {
            MoveError::FloorViolation {
                index,
                value,
                floor,
            } => ReplayError::FloorViolation {
                step,
                index,
                value,
                floor,
            },
            other => ReplayError::Move(other),
        })?;
        min_cell = min_cell.min(current.min_cell());
        for (n, &v) in current.cells().iter().enumerate() {
            if v < 0 {
                negative_cells.insert(n);
            }
        }
    }
    if current != d.expected_end {
        let diffs = d
            .expected_end
            .cells()
            .iter()
            .zip(current.cells())
            .enumerate()
            .filter(|(_, (e, g))| e != g)
            .map(|(index, (&expected, &got))| CellDiff {
                index,
                expected,
                got,
            })
            .collect();
        return Err(ReplayError::EndMismatch { diffs });
    }
    Ok(ReplayReport {
        steps_applied: d.steps.len(),
        min_intermediate_cell: min_cell,
        cells_ever_negative: negative_cells.len(),
    })
}

#[derive(Serialize, Deserialize)]
struct TableWire {
    dims: [usize; 3],
    counts: Vec<i64>,
}

#[derive(Serialize, Deserialize)]
struct StepWire {
    i: usize,
    i2: usize,
    j: usize,
    j2: usize,
    k: usize,
    k2: usize,
    sign: i8,
}

#[derive(Serialize, Deserialize)]
struct DecompositionWire {
    start: TableWire,
    end: TableWire,
    floor: u32,
    steps: Vec<StepWire>,
}

#[derive(Debug, Error)]
pub enum DecompositionParseError {
    #[error("invalid decomposition JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad table in decomposition: {0}")]
    Table(#[from] TableError),
    #[error("bad step {step}: {source}")]
    Step { step: usize, source: MoveError },
    #[error("step indices are 1-based and must be positive")]
    ZeroIndex,
}

impl Decomposition {
    /// Parses the JSON wire format. Step indices are 1-based as in the
    /// usual `(i,i'; j,j'; k,k')` notation; unordered pairs are
    /// canonicalized with the swap parity folded into the step sign.
    pub fn from_json_str(s: &str) -> Result<Self, DecompositionParseError> {
        let wire: DecompositionWire = serde_json::from_str(s)?;
        let floor = RelaxDepth(wire.floor);
        let to_table = |t: TableWire| {
            Table3D::with_floor(Dims::new(t.dims[0], t.dims[1], t.dims[2]), t.counts, floor)
        };
        let start = to_table(wire.start)?;
        let expected_end = to_table(wire.end)?;
        let dims = start.dims();
        let mut steps = Vec::with_capacity(wire.steps.len());
        for (n, s) in wire.steps.into_iter().enumerate() {
            if [s.i, s.i2, s.j, s.j2, s.k, s.k2].contains(&0) {
                return Err(DecompositionParseError::ZeroIndex);
            }
            let step_err = |source| DecompositionParseError::Step { step: n, source };
            let (basic, parity) =
                BasicMove::canonical(s.i - 1, s.i2 - 1, s.j - 1, s.j2 - 1, s.k - 1, s.k2 - 1)
                    .map_err(step_err)?;
            basic.cells(dims).map_err(step_err)?;
            let sign = Sign::try_from(s.sign).map_err(step_err)?;
            let sign = if parity == Sign::Minus {
                sign.flipped()
            } else {
                sign
            };
            steps.push(SignedMove { basic, sign });
        }
        Ok(Decomposition {
            start,
            steps,
            expected_end,
            floor,
        })
    }

    pub fn to_json_string(&self) -> String {
        let to_wire = |t: &Table3D| TableWire {
            dims: t.dims().as_array(),
            counts: t.cells().to_vec(),
        };
        let wire = DecompositionWire {
            start: to_wire(&self.start),
            end: to_wire(&self.expected_end),
            floor: self.floor.0,
            steps: self
                .steps
                .iter()
                .map(|s| {
                    let ((i, i2), (j, j2), (k, k2)) = s.basic.indices();
                    StepWire {
                        i: i + 1,
                        i2: i2 + 1,
                        j: j + 1,
                        j2: j2 + 1,
                        k: k + 1,
                        k2: k2 + 1,
                        sign: s.sign.into(),
                    }
                })
                .collect(),
        };
        serde_json::to_string_pretty(&wire).expect("decomposition serialization cannot fail")
    }
}

/// Two indispensable moves for 3x4x6 tables under the no-three-way
/// interaction model, embedded as named fixtures together with the basic-move
/// paths that connect their positive and negative parts at floor 1.
pub mod fixtures {
    use super::*;

    const DIMS: Dims = Dims { i: 3, j: 4, k: 6 };

    fn table(cells: [i64; 72]) -> Table3D {
        Table3D::new(DIMS, cells.to_vec()).expect("fixture table is valid")
    }

    /// 1-based step transcription helper.
    fn step(sign: i8, i: usize, i2: usize, j: usize, j2: usize, k: usize, k2: usize) -> SignedMove {
        SignedMove {
            basic: BasicMove::new(i - 1, i2 - 1, j - 1, j2 - 1, k - 1, k2 - 1).unwrap(),
            sign: Sign::try_from(sign).unwrap(),
        }
    }

    #[rustfmt::skip]
    pub fn b1_positive() -> Table3D {
        table([
            1,0,0,0,0,0,  0,1,0,0,0,0,  0,0,1,0,0,0,  0,0,0,0,0,1,
            0,1,0,0,0,0,  0,0,0,0,1,0,  0,0,0,1,0,0,  0,0,0,0,0,1,
            0,0,0,1,0,0,  0,0,1,0,0,0,  0,0,0,0,0,2,  1,0,0,0,1,0,
        ])
    }

    #[rustfmt::skip]
    pub fn b1_negative() -> Table3D {
        table([
            0,1,0,0,0,0,  0,0,1,0,0,0,  0,0,0,0,0,1,  1,0,0,0,0,0,
            0,0,0,1,0,0,  0,1,0,0,0,0,  0,0,0,0,0,1,  0,0,0,0,1,0,
            1,0,0,0,0,0,  0,0,0,0,1,0,  0,0,1,1,0,0,  0,0,0,0,0,2,
        ])
    }

    #[rustfmt::skip]
    pub fn b2_positive() -> Table3D {
        table([
            1,0,0,0,0,0,  0,1,0,0,0,0,  0,0,1,0,0,0,  0,0,0,1,0,0,
            0,0,0,0,0,1,  0,0,1,0,0,0,  0,0,0,0,0,1,  1,0,0,0,1,0,
            0,1,0,0,0,0,  0,0,0,0,1,0,  0,0,0,1,0,0,  0,0,0,0,0,2,
        ])
    }

    #[rustfmt::skip]
    pub fn b2_negative() -> Table3D {
        table([
            0,1,0,0,0,0,  0,0,1,0,0,0,  0,0,0,1,0,0,  1,0,0,0,0,0,
            1,0,0,0,0,0,  0,0,0,0,1,0,  0,0,1,0,0,0,  0,0,0,0,0,2,
            0,0,0,0,0,1,  0,1,0,0,0,0,  0,0,0,0,0,1,  0,0,0,1,1,0,
        ])
    }

    /// The first indispensable move, `b1_positive() - b1_negative()`.
    pub fn b1_move() -> GeneralMove {
        GeneralMove::between(&b1_positive(), &b1_negative()).unwrap()
    }

    /// The second indispensable move, `b2_positive() - b2_negative()`.
    pub fn b2_move() -> GeneralMove {
        GeneralMove::between(&b2_positive(), &b2_negative()).unwrap()
    }

    /// Basic-move path from `b1_positive` to `b1_negative`, valid at floor 1.
    pub fn b1_decomposition(floor: RelaxDepth) -> Decomposition {
        Decomposition {
            start: b1_positive(),
            steps: vec![
                step(-1, 2, 3, 3, 4, 5, 6),
                step(-1, 1, 3, 3, 4, 1, 6),
                step(1, 2, 3, 2, 3, 3, 5),
                step(-1, 2, 3, 1, 3, 1, 4),
                step(-1, 1, 2, 2, 3, 2, 3),
                step(-1, 1, 2, 1, 3, 1, 2),
            ],
            expected_end: b1_negative(),
            floor,
        }
    }

    /// Basic-move path from `b2_positive` to `b2_negative`, valid at floor 1.
    pub fn b2_decomposition(floor: RelaxDepth) -> Decomposition {
        Decomposition {
            start: b2_positive(),
            steps: vec![
                step(1, 2, 3, 2, 4, 5, 6),
                step(1, 2, 3, 3, 4, 4, 6),
                step(1, 2, 3, 1, 2, 2, 6),
                step(-1, 1, 2, 3, 4, 1, 4),
                step(-1, 1, 2, 1, 3, 1, 3),
                step(1, 1, 2, 1, 2, 2, 3),
            ],
            expected_end: b2_negative(),
            floor,
        }
    }
}
