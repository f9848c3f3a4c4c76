//! Exhaustive enumeration of small fibers, the fiber graph under a move
//! set at a given relaxation depth, connectivity analysis, and the exact
//! conditional reference distribution.
//!
//! This module is the ground-truth oracle for the sampler: everything here
//! works by complete enumeration, so it only applies at desk scale, bounded
//! by a configurable table cap.

use crate::model::{ipfp_fit_default, FittedTable, LogFactorialTable, ModelError};
use crate::moves::MoveSet;
use crate::table::{chi_square_cells, Dims, MarginSet, RelaxDepth, Table3D, TableError};
use std::collections::HashMap;
use thiserror::Error;

/// Default ceiling on enumerated fiber size; override per call or through
/// the `FIBERSAMPLER_CAP` environment variable in the CLI.
pub const DEFAULT_FIBER_CAP: usize = 5_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum FiberError {
    #[error("no table satisfies the given margins")]
    InfeasibleMargins,
    #[error("fiber exceeds the cap of {cap} tables (enumeration stopped at {partial})")]
    FiberTooLarge { cap: usize, partial: usize },
    #[error("exact conditional distribution requires a floor-0 fiber, got floor {0}")]
    FloorNotZero(u32),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// A fully enumerated fiber: every integer table with the given margins and
/// all cells at least `-floor`, in deterministic lexicographic order.
#[derive(Clone, Debug)]
pub struct Fiber {
    margins: MarginSet,
    floor: RelaxDepth,
    tables: Vec<Table3D>,
}

impl Fiber {
    pub fn margins(&self) -> &MarginSet {
        &self.margins
    }

    pub fn floor(&self) -> RelaxDepth {
        self.floor
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn tables(&self) -> &[Table3D] {
        &self.tables
    }

    pub fn dims(&self) -> Dims {
        self.margins.dims()
    }

    pub fn index_of(&self, table: &Table3D) -> Option<usize> {
        self.tables.iter().position(|t| t == table)
    }

    /// Indices of the members with no negative cells, i.e. the floor-0
    /// fiber inside this one.
    pub fn nonnegative_indices(&self) -> Vec<usize> {
        self.tables
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_nonnegative())
            .map(|(n, _)| n)
            .collect()
    }
}

/// Depth-first cell assignment with line-sum feasibility pruning. Cells are
/// visited row-major (i outermost, k innermost); the last cell of each line
/// is forced by the remaining margin, everything else ranges between the
/// floor and the slack the remaining cells of its three lines allow.
struct Enumerator {
    dims: Dims,
    min_cell: i64,
    floor_slack: i64,
    rem_ij: Vec<i64>,
    rem_ik: Vec<i64>,
    rem_jk: Vec<i64>,
    cells: Vec<i64>,
    floor: RelaxDepth,
    cap: usize,
    out: Vec<Table3D>,
}

impl Enumerator {
    fn descend(&mut self, flat: usize) -> Result<(), FiberError> {
        let dims = self.dims;
        if flat == dims.cell_count() {
            if self.out.len() >= self.cap {
                return Err(FiberError::FiberTooLarge {
                    cap: self.cap,
                    partial: self.out.len(),
                });
            }
            self.out.push(
                Table3D::with_floor(dims, self.cells.clone(), self.floor)
                    .expect("enumerated cells satisfy the floor"),
            );
            return Ok(());
        }
        let (i, j, k) = dims.unindex(flat);
        let ij = i * dims.j + j;
        let ik = i * dims.k + k;
        let jk = j * dims.k + k;

        let mut forced: Option<i64> = None;
        let force = |v: i64, forced: &mut Option<i64>| -> bool {
            match *forced {
                Some(prev) => prev == v,
                None => {
                    *forced = Some(v);
                    true
                }
            }
        };
        if k + 1 == dims.k && !force(self.rem_ij[ij], &mut forced) {
            return Ok(());
        }
        if j + 1 == dims.j && !force(self.rem_ik[ik], &mut forced) {
            return Ok(());
        }
        if i + 1 == dims.i && !force(self.rem_jk[jk], &mut forced) {
            return Ok(());
        }

        let hi = self.rem_ij[ij] + self.floor_slack * (dims.k - 1 - k) as i64;
        let hi = hi.min(self.rem_ik[ik] + self.floor_slack * (dims.j - 1 - j) as i64);
        let hi = hi.min(self.rem_jk[jk] + self.floor_slack * (dims.i - 1 - i) as i64);
        let (lo, hi) = match forced {
            Some(v) => {
                if v < self.min_cell || v > hi {
                    return Ok(());
                }
                (v, v)
            }
            None => (self.min_cell, hi),
        };
        for v in lo..=hi {
            self.cells[flat] = v;
            self.rem_ij[ij] -= v;
            self.rem_ik[ik] -= v;
            self.rem_jk[jk] -= v;
            let r = self.descend(flat + 1);
            self.rem_ij[ij] += v;
            self.rem_ik[ik] += v;
            self.rem_jk[jk] += v;
            r?;
        }
        self.cells[flat] = 0;
        Ok(())
    }
}

/// Enumerates the complete floor-`t` fiber of a margin set, up to `cap`
/// tables.
pub fn enumerate_fiber(
    margins: &MarginSet,
    floor: RelaxDepth,
    cap: usize,
) -> Result<Fiber, FiberError> {
    if !margins.is_consistent() {
        return Err(FiberError::InfeasibleMargins);
    }
    let dims = margins.dims();
    let mut e = Enumerator {
        dims,
        min_cell: floor.min_cell(),
        floor_slack: i64::from(floor.0),
        rem_ij: margins.ij_matrix().to_vec(),
        rem_ik: margins.ik_matrix().to_vec(),
        rem_jk: margins.jk_matrix().to_vec(),
        cells: vec![0; dims.cell_count()],
        floor,
        cap,
        out: Vec::new(),
    };
    e.descend(0)?;
    if e.out.is_empty() {
        return Err(FiberError::InfeasibleMargins);
    }
    Ok(Fiber {
        margins: margins.clone(),
        floor,
        tables: e.out,
    })
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

fn index_by_cells(fiber: &Fiber) -> HashMap<&[i64], usize> {
    fiber
        .tables()
        .iter()
        .enumerate()
        .map(|(n, t)| (t.cells(), n))
        .collect()
}

fn union_over_moves(fiber: &Fiber, moves: &MoveSet) -> UnionFind {
    assert_eq!(moves.dims(), fiber.dims(), "move set dims must match fiber");
    let dims = fiber.dims();
    let index = index_by_cells(fiber);
    let move_cells: Vec<[(usize, i64); 8]> = moves
        .iter()
        .map(|m| m.cells(dims).expect("catalog moves fit dims"))
        .collect();
    let min_cell = fiber.floor().min_cell();
    let mut uf = UnionFind::new(fiber.len());
    let mut scratch = vec![0i64; dims.cell_count()];
    for (n, t) in fiber.tables().iter().enumerate() {
        'mv: for mc in &move_cells {
            // applying +m covers each undirected edge once from one side
            scratch.copy_from_slice(t.cells());
            for &(idx, d) in mc {
                scratch[idx] += d;
                if scratch[idx] < min_cell {
                    continue 'mv;
                }
            }
            if let Some(&other) = index.get(scratch.as_slice()) {
                uf.union(n, other);
            }
        }
    }
    uf
}

/// Connected components of the fiber graph, as index sets, largest first.
/// Ties break on the smallest member index, so the output is deterministic.
pub fn connected_components(fiber: &Fiber, moves: &MoveSet) -> Vec<Vec<usize>> {
    let mut uf = union_over_moves(fiber, moves);
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for n in 0..fiber.len() {
        groups.entry(uf.find(n)).or_default().push(n);
    }
    let mut components: Vec<Vec<usize>> = groups.into_values().collect();
    components.sort_by_key(|c| (std::cmp::Reverse(c.len()), c[0]));
    components
}

/// Undirected fiber-graph edges `(u, v)` with `u < v`, where the member
/// tables differ by exactly one catalog move.
pub fn fiber_graph_edges(fiber: &Fiber, moves: &MoveSet) -> Vec<(usize, usize)> {
    assert_eq!(moves.dims(), fiber.dims(), "move set dims must match fiber");
    let dims = fiber.dims();
    let index = index_by_cells(fiber);
    let min_cell = fiber.floor().min_cell();
    let mut edges = Vec::new();
    let mut scratch = vec![0i64; dims.cell_count()];
    for (n, t) in fiber.tables().iter().enumerate() {
        'mv: for m in moves.iter() {
            scratch.copy_from_slice(t.cells());
            for &(idx, d) in &m.cells(dims).expect("catalog moves fit dims") {
                scratch[idx] += d;
                if scratch[idx] < min_cell {
                    continue 'mv;
                }
            }
            if let Some(&other) = index.get(scratch.as_slice()) {
                if n < other {
                    edges.push((n, other));
                }
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Whether the given move set connects all non-negative tables inside the
/// floor-`t` fiber of the margins.
#[derive(Clone, Debug)]
pub struct ConnectivityReport {
    /// Number of non-negative tables (the classical fiber).
    pub fiber_size: usize,
    /// Total tables at the requested floor.
    pub relaxed_fiber_size: usize,
    /// Component count of the relaxed fiber graph.
    pub components: usize,
    /// True when every non-negative table lies in one component.
    pub nonneg_connected: bool,
    /// Two non-negative tables from different components, when disconnected.
    pub witness: Option<(Table3D, Table3D)>,
}

/// Enumerates the floor-`t` fiber, builds the graph under `moves`, and
/// reports whether the non-negative tables all share one component.
pub fn verify_relaxed_connectivity(
    margins: &MarginSet,
    moves: &MoveSet,
    floor: RelaxDepth,
    cap: usize,
) -> Result<ConnectivityReport, FiberError> {
    let fiber = enumerate_fiber(margins, floor, cap)?;
    let components = connected_components(&fiber, moves);
    let nonneg = fiber.nonnegative_indices();
    let mut component_of = vec![usize::MAX; fiber.len()];
    for (ci, comp) in components.iter().enumerate() {
        for &n in comp {
            component_of[n] = ci;
        }
    }
    let mut witness = None;
    let mut nonneg_connected = true;
    if let Some(&first) = nonneg.first() {
        for &n in &nonneg[1..] {
            if component_of[n] != component_of[first] {
                nonneg_connected = false;
                witness = Some((fiber.tables()[first].clone(), fiber.tables()[n].clone()));
                break;
            }
        }
    }
    Ok(ConnectivityReport {
        fiber_size: nonneg.len(),
        relaxed_fiber_size: fiber.len(),
        components: components.len(),
        nonneg_connected,
        witness,
    })
}

/// The exact conditional (hypergeometric) distribution over a floor-0
/// fiber: each table gets weight proportional to `prod 1/u_ijk!`, and the
/// distribution of the chi-square statistic is taken under those weights.
#[derive(Clone, Debug)]
pub struct ExactDistribution {
    /// Statistic value per fiber member, aligned with the fiber's order.
    pub chi_sq_values: Vec<f64>,
    /// Normalized weights, aligned with the fiber's order.
    pub weights: Vec<f64>,
    /// The fitted means shared by the whole fiber.
    pub fitted: FittedTable,
}

impl ExactDistribution {
    /// Exact conditional p-value `P(chi-square >= chi_obs)`, with a small
    /// slack so a statistic realized by a fiber member counts as reached.
    pub fn p_value(&self, chi_obs: f64) -> f64 {
        self.chi_sq_values
            .iter()
            .zip(&self.weights)
            .filter(|(&c, _)| c >= chi_obs - 1e-9)
            .map(|(_, &w)| w)
            .sum()
    }

    /// Weighted mean of the statistic.
    pub fn mean(&self) -> f64 {
        self.chi_sq_values
            .iter()
            .zip(&self.weights)
            .map(|(&c, &w)| c * w)
            .sum()
    }
}

/// Computes the exact conditional distribution over an enumerated floor-0
/// fiber. Weights are accumulated in log space.
pub fn exact_conditional_distribution(fiber: &Fiber) -> Result<ExactDistribution, FiberError> {
    if fiber.floor() != RelaxDepth::ZERO {
        return Err(FiberError::FloorNotZero(fiber.floor().0));
    }
    let fitted = ipfp_fit_default(&fiber.tables()[0])?;
    let max_cell = fiber
        .tables()
        .iter()
        .flat_map(|t| t.cells().iter().copied())
        .max()
        .unwrap_or(0);
    let lf = LogFactorialTable::up_to(max_cell.max(0) as usize);
    let mut log_weights = Vec::with_capacity(fiber.len());
    let mut chi_sq_values = Vec::with_capacity(fiber.len());
    for t in fiber.tables() {
        let lw: f64 = t.cells().iter().map(|&c| -lf.get(c)).sum();
        log_weights.push(lw);
        chi_sq_values.push(chi_square_cells(t.cells(), fitted.cells())?);
    }
    let max_lw = log_weights
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = log_weights.iter().map(|lw| (lw - max_lw).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(ExactDistribution {
        chi_sq_values,
        weights,
        fitted,
    })
}
