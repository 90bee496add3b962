//! Grid data model: topologies, nodal susceptance matrices and knowledge
//! masks.

mod io;
mod report;

pub mod bundled;

use nalgebra::DMatrix;
use thiserror::Error;

pub use io::{load_grid, save_grid};
pub use report::{ReconstructionOutcome, ReconstructionReport, RowResolution, RowStatus};

/// Absolute symmetry tolerance accepted when a matrix comes from outside
/// (files, estimators).
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Relative scale of the "no line here" threshold: `1e-3 * max |B_ij|`.
pub const RELATIVE_ZERO_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed grid file: {0}")]
    Malformed(String),
    #[error("bus index out of range: line {line} references bus {bus} but n_buses = {n_buses}")]
    BusOutOfRange { line: usize, bus: usize, n_buses: usize },
    #[error("line {line} connects bus {bus} to itself")]
    SelfLoop { line: usize, bus: usize },
    #[error("duplicate line between buses {from} and {to}")]
    DuplicateLine { from: usize, to: usize },
    #[error("non-positive reactance {x} on line {line}")]
    NonPositiveReactance { line: usize, x: f64 },
    #[error("{field} has {got} entries, expected {expected}")]
    LengthMismatch {
        field: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("grid must have at least one bus")]
    Empty,
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    Asymmetric { row: usize, col: usize },
    #[error("non-physical positive off-diagonal entry {value} at ({row}, {col})")]
    PositiveOffDiagonal { row: usize, col: usize, value: f64 },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// An undirected transmission line with series reactance `x` (per unit).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub x: f64,
}

impl Line {
    pub fn new(from: usize, to: usize, x: f64) -> Self {
        Self { from, to, x }
    }

    /// Same line with `from < to`.
    pub fn normalized(self) -> Self {
        if self.from <= self.to {
            self
        } else {
            Self {
                from: self.to,
                to: self.from,
                x: self.x,
            }
        }
    }

    pub fn susceptance(&self) -> f64 {
        1.0 / self.x
    }
}

/// Ground-truth network: buses plus undirected lines with reactances.
///
/// Construction validates every invariant (bounds, no self loops, no
/// parallel lines, positive finite reactances), so a `GridTopology` in hand
/// is always well formed.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTopology {
    n_buses: usize,
    lines: Vec<Line>,
    labels: Option<Vec<String>>,
    sigma: Option<Vec<f64>>,
}

impl GridTopology {
    pub fn new(n_buses: usize, lines: Vec<Line>) -> Result<Self, GridError> {
        if n_buses == 0 {
            return Err(GridError::Empty);
        }
        let mut seen = std::collections::HashSet::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            for bus in [line.from, line.to] {
                if bus >= n_buses {
                    return Err(GridError::BusOutOfRange { line: i, bus, n_buses });
                }
            }
            if line.from == line.to {
                return Err(GridError::SelfLoop {
                    line: i,
                    bus: line.from,
                });
            }
            if !(line.x.is_finite() && line.x > 0.0) {
                return Err(GridError::NonPositiveReactance { line: i, x: line.x });
            }
            let key = (line.from.min(line.to), line.from.max(line.to));
            if !seen.insert(key) {
                return Err(GridError::DuplicateLine { from: key.0, to: key.1 });
            }
        }
        Ok(Self {
            n_buses,
            lines,
            labels: None,
            sigma: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self, GridError> {
        if labels.len() != self.n_buses {
            return Err(GridError::LengthMismatch {
                field: "labels",
                got: labels.len(),
                expected: self.n_buses,
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Attach per-bus injection standard deviations used by type II data.
    pub fn with_sigma(mut self, sigma: Vec<f64>) -> Result<Self, GridError> {
        if sigma.len() != self.n_buses {
            return Err(GridError::LengthMismatch {
                field: "sigma",
                got: sigma.len(),
                expected: self.n_buses,
            });
        }
        if let Some(i) = sigma.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(GridError::Malformed(format!(
                "sigma[{i}] must be finite and non-negative"
            )));
        }
        self.sigma = Some(sigma);
        Ok(self)
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn sigma(&self) -> Option<&[f64]> {
        self.sigma.as_deref()
    }

    /// Lines normalized to `from < to` and sorted by `(from, to)`.
    pub fn canonical_lines(&self) -> Vec<Line> {
        let mut lines: Vec<Line> = self.lines.iter().map(|l| l.normalized()).collect();
        lines.sort_by_key(|l| (l.from, l.to));
        lines
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_buses];
        for l in &self.lines {
            deg[l.from] += 1;
            deg[l.to] += 1;
        }
        deg
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    /// Whether every bus is reachable from bus 0 over the lines.
    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n_buses];
        for l in &self.lines {
            adj[l.from].push(l.to);
            adj[l.to].push(l.from);
        }
        let mut seen = vec![false; self.n_buses];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Index of the line joining `a` and `b`, in either direction.
    pub fn find_line(&self, a: usize, b: usize) -> Option<usize> {
        self.lines
            .iter()
            .position(|l| (l.from == a && l.to == b) || (l.from == b && l.to == a))
    }

    /// Same topology compared up to line ordering and orientation.
    pub fn same_lines(&self, other: &GridTopology) -> bool {
        self.n_buses == other.n_buses && self.canonical_lines() == other.canonical_lines()
    }
}

/// Nodal susceptance matrix: the weighted graph Laplacian with
/// off-diagonals `-1/X_rk` and diagonals equal to the sum of the incident
/// line susceptances.
///
/// The type is also used for estimates and partially known matrices, so the
/// Laplacian properties are checked on demand ([`Self::check_laplacian`])
/// rather than at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SusceptanceMatrix {
    entries: DMatrix<f64>,
}

impl SusceptanceMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            entries: DMatrix::zeros(n, n),
        }
    }

    /// Wrap a square, finite matrix. Symmetry is not required: row-wise
    /// reconstructions are generally not symmetric.
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self, GridError> {
        if entries.nrows() != entries.ncols() {
            return Err(GridError::NotSquare {
                rows: entries.nrows(),
                cols: entries.ncols(),
            });
        }
        for c in 0..entries.ncols() {
            for r in 0..entries.nrows() {
                if !entries[(r, c)].is_finite() {
                    return Err(GridError::NonFinite { row: r, col: c });
                }
            }
        }
        Ok(Self { entries })
    }

    /// Like [`Self::from_matrix`] but also requires symmetry within
    /// [`SYMMETRY_TOL`].
    pub fn from_symmetric(entries: DMatrix<f64>) -> Result<Self, GridError> {
        let m = Self::from_matrix(entries)?;
        if let Some((row, col)) = m.first_asymmetry(SYMMETRY_TOL) {
            return Err(GridError::Asymmetric { row, col });
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[(r, c)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `1e-3 * max |B_ij|`: the success tolerance ε and the default
    /// zero threshold for topology extraction.
    pub fn default_tolerance(&self) -> f64 {
        RELATIVE_ZERO_TOL * self.max_abs()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.entries.row_iter().map(|r| r.sum()).collect()
    }

    fn first_asymmetry(&self, tol: f64) -> Option<(usize, usize)> {
        let n = self.n();
        for r in 0..n {
            for c in (r + 1)..n {
                if (self.entries[(r, c)] - self.entries[(c, r)]).abs() > tol {
                    return Some((r, c));
                }
            }
        }
        None
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.first_asymmetry(tol).is_none()
    }

    /// Check the Laplacian invariants: symmetry, zero row sums within
    /// `row_sum_tol`, non-positive off-diagonals and non-negative diagonals.
    pub fn check_laplacian(&self, row_sum_tol: f64) -> Result<(), String> {
        if let Some((r, c)) = self.first_asymmetry(SYMMETRY_TOL) {
            return Err(format!("asymmetric at ({r}, {c})"));
        }
        let n = self.n();
        for r in 0..n {
            let mut sum = 0.0;
            for c in 0..n {
                let v = self.entries[(r, c)];
                sum += v;
                if r == c && v < 0.0 {
                    return Err(format!("negative diagonal at {r}"));
                }
                if r != c && v > 0.0 {
                    return Err(format!("positive off-diagonal at ({r}, {c})"));
                }
            }
            if sum.abs() >= row_sum_tol {
                return Err(format!("row {r} sums to {sum}"));
            }
        }
        Ok(())
    }
}

/// Build the nodal susceptance matrix of a topology.
///
/// `B_rk = -1/X_rk` for every line, `B_rr = sum_k 1/X_rk`; buses without a
/// line contribute zero. Reactances were validated when the topology was
/// built, so this cannot fail.
pub fn build_susceptance(topology: &GridTopology) -> SusceptanceMatrix {
    let n = topology.n_buses();
    let mut b = DMatrix::zeros(n, n);
    for line in topology.lines() {
        let y = line.susceptance();
        b[(line.from, line.to)] = -y;
        b[(line.to, line.from)] = -y;
    }
    // Diagonal as the negated off-diagonal row sum so the row sums vanish
    // to rounding.
    for r in 0..n {
        let off: f64 = (0..n).filter(|&c| c != r).map(|c| b[(r, c)]).sum();
        b[(r, r)] = -off;
    }
    SusceptanceMatrix { entries: b }
}

/// Recover a topology from a (possibly estimated) susceptance matrix.
///
/// Every off-diagonal pair with `|B_rs| > zero_tol` becomes a line with
/// reactance `-1/B_rs` (the two triangle entries are averaged). With
/// `zero_tol = None` the threshold is `1e-3 * max |B_ij|`.
pub fn topology_from_susceptance(b: &SusceptanceMatrix, zero_tol: Option<f64>) -> Result<GridTopology, GridError> {
    let tol = zero_tol.unwrap_or_else(|| b.default_tolerance());
    let n = b.n();
    let mut lines = Vec::new();
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (b.get(r, c) + b.get(c, r));
            if v.abs() <= tol {
                continue;
            }
            if v > 0.0 {
                return Err(GridError::PositiveOffDiagonal {
                    row: r,
                    col: c,
                    value: v,
                });
            }
            lines.push(Line::new(r, c, -1.0 / v));
        }
    }
    GridTopology::new(n.max(1), lines)
}

/// Which entries of `B` are known. Symmetric by construction; the diagonal
/// entry of a row is known exactly when all its off-diagonal entries are.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeMask {
    n: usize,
    known: Vec<bool>,
}

impl KnowledgeMask {
    pub fn none(n: usize) -> Self {
        let mut m = Self {
            n,
            known: vec![false; n * n],
        };
        m.refresh_diagonals();
        m
    }

    pub fn all(n: usize) -> Self {
        Self {
            n,
            known: vec![true; n * n],
        }
    }

    /// Build from a predicate on off-diagonal pairs. The predicate is
    /// evaluated for `r < c` only and mirrored; diagonals are derived.
    pub fn from_pairs(n: usize, mut known: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::none(n);
        for r in 0..n {
            for c in (r + 1)..n {
                if known(r, c) {
                    m.known[r * n + c] = true;
                    m.known[c * n + r] = true;
                }
            }
        }
        m.refresh_diagonals();
        m
    }

    /// Build from an explicit boolean matrix. Fails if it is not symmetric;
    /// the supplied diagonal is replaced by the derived one.
    pub fn from_matrix(known: &DMatrix<bool>) -> Result<Self, GridError> {
        if known.nrows() != known.ncols() {
            return Err(GridError::NotSquare {
                rows: known.nrows(),
                cols: known.ncols(),
            });
        }
        let n = known.nrows();
        for r in 0..n {
            for c in (r + 1)..n {
                if known[(r, c)] != known[(c, r)] {
                    return Err(GridError::Asymmetric { row: r, col: c });
                }
            }
        }
        Ok(Self::from_pairs(n, |r, c| known[(r, c)]))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_known(&self, r: usize, c: usize) -> bool {
        self.known[r * self.n + c]
    }

    /// Mark the pair `(r, c)` (and its mirror) known, updating the affected
    /// diagonals.
    pub fn mark_pair(&mut self, r: usize, c: usize) {
        if r == c {
            return;
        }
        self.known[r * self.n + c] = true;
        self.known[c * self.n + r] = true;
        self.refresh_diagonal(r);
        self.refresh_diagonal(c);
    }

    fn refresh_diagonal(&mut self, r: usize) {
        let n = self.n;
        let full = (0..n).all(|c| c == r || self.known[r * n + c]);
        self.known[r * n + r] = full;
    }

    fn refresh_diagonals(&mut self) {
        for r in 0..self.n {
            self.refresh_diagonal(r);
        }
    }

    pub fn row_complete(&self, r: usize) -> bool {
        self.is_known(r, r)
    }

    pub fn is_complete(&self) -> bool {
        self.known.iter().all(|&k| k)
    }

    pub fn count_known(&self) -> usize {
        self.known.iter().filter(|&&k| k).count()
    }

    /// Unknown columns of row `r`, diagonal included when unknown.
    pub fn unknown_columns(&self, r: usize) -> Vec<usize> {
        (0..self.n).filter(|&c| !self.is_known(r, c)).collect()
    }

    pub fn to_matrix(&self) -> DMatrix<bool> {
        DMatrix::from_fn(self.n, self.n, |r, c| self.is_known(r, c))
    }
}
