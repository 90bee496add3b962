//! DC power-flow forward model and synthetic measurement generation.
//!
//! All random data comes from `ChaCha8Rng` seeded with a `u64`; the same
//! seed gives bitwise identical output on every platform. Experiments that
//! need many independent streams derive them with [`derive_seed`].

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

use crate::fmt::join_row;
use crate::grid::{build_susceptance, GridTopology, Line, SusceptanceMatrix};

/// Half-width of the type I angle distribution, `U[-pi/8, pi/8]`.
pub const TYPE1_HALF_WIDTH: f64 = PI / 8.0;

/// Balance tolerance on the injections handed to [`solve_dc`].
pub const BALANCE_TOL: f64 = 1e-6;

/// Fallback per-bus injection standard deviation for type II data.
pub const DEFAULT_SIGMA: f64 = 1.0;

const MEASUREMENT_HEADER: &str = "# gridrecon-measurements v1";

#[derive(Debug, Error)]
pub enum DcError {
    #[error("injections are not balanced: sum = {sum}")]
    Unbalanced { sum: f64 },
    #[error("grid is disconnected (reduced susceptance matrix is singular)")]
    Disconnected,
    #[error("reference bus {bus} out of range for {n} buses")]
    BadReference { bus: usize, n: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no line between buses {from} and {to}")]
    NoSuchLine { from: usize, to: usize },
    #[error("malformed measurement file: {0}")]
    Parse(String),
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// `M` snapshots of nodal phase angles and injections; row `m` is the
/// snapshot at time `t_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    phi: DMatrix<f64>,
    p: DMatrix<f64>,
    timestamps: Option<Vec<f64>>,
}

impl MeasurementSet {
    pub fn new(phi: DMatrix<f64>, p: DMatrix<f64>) -> Result<Self, DcError> {
        if phi.shape() != p.shape() {
            return Err(DcError::ShapeMismatch(format!(
                "angles are {:?} but injections are {:?}",
                phi.shape(),
                p.shape()
            )));
        }
        Ok(Self {
            phi,
            p,
            timestamps: None,
        })
    }

    pub fn with_timestamps(mut self, t: Vec<f64>) -> Result<Self, DcError> {
        if t.len() != self.m() {
            return Err(DcError::ShapeMismatch(format!(
                "{} timestamps for {} snapshots",
                t.len(),
                self.m()
            )));
        }
        self.timestamps = Some(t);
        Ok(self)
    }

    /// Number of snapshots.
    pub fn m(&self) -> usize {
        self.phi.nrows()
    }

    /// Number of buses.
    pub fn n(&self) -> usize {
        self.phi.ncols()
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn timestamps(&self) -> Option<&[f64]> {
        self.timestamps.as_deref()
    }

    /// First `m` snapshots.
    pub fn truncated(&self, m: usize) -> MeasurementSet {
        let m = m.min(self.m());
        MeasurementSet {
            phi: self.phi.rows(0, m).into_owned(),
            p: self.p.rows(0, m).into_owned(),
            timestamps: self.timestamps.as_ref().map(|t| t[..m].to_vec()),
        }
    }

    /// Largest `|B phi - P|` over all snapshots.
    pub fn max_residual(&self, b: &SusceptanceMatrix) -> f64 {
        let r = &self.phi * b.matrix().transpose() - &self.p;
        r.amax()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MEASUREMENT_HEADER} n={} m={}\n", self.n(), self.m());
        for row in self.phi.row_iter() {
            out.push_str(&join_row(row.iter()));
            out.push('\n');
        }
        out.push_str("---\n");
        for row in self.p.row_iter() {
            out.push_str(&join_row(row.iter()));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, DcError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| DcError::Parse("empty file".into()))?;
        let rest = header
            .strip_prefix(MEASUREMENT_HEADER)
            .ok_or_else(|| DcError::Parse(format!("bad header {header:?}")))?;
        let fields = parse_header_fields(rest, &["n", "m"])?;
        let (n, m) = (fields[0], fields[1]);
        let phi = read_block(&mut lines, m, n, "angle")?;
        expect_separator(&mut lines)?;
        let p = read_block(&mut lines, m, n, "injection")?;
        expect_end(&mut lines)?;
        Self::new(phi, p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DcError> {
        Self::from_text(&read_file(path.as_ref())?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DcError> {
        write_file(path.as_ref(), &self.to_text())
    }
}

/// Real power flows on a measured subset of lines, per snapshot, together
/// with the nodal injections of the same snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMeasurementSet {
    measured_lines: Vec<Line>,
    flows: DMatrix<f64>,
    injections: DMatrix<f64>,
}

impl FlowMeasurementSet {
    pub fn new(measured_lines: Vec<Line>, flows: DMatrix<f64>, injections: DMatrix<f64>) -> Result<Self, DcError> {
        if flows.ncols() != measured_lines.len() {
            return Err(DcError::ShapeMismatch(format!(
                "{} flow columns for {} measured lines",
                flows.ncols(),
                measured_lines.len()
            )));
        }
        if flows.nrows() != injections.nrows() {
            return Err(DcError::ShapeMismatch(format!(
                "{} flow snapshots but {} injection snapshots",
                flows.nrows(),
                injections.nrows()
            )));
        }
        if let Some(l) = measured_lines.iter().find(|l| !(l.x.is_finite() && l.x > 0.0)) {
            return Err(DcError::ShapeMismatch(format!(
                "measured line {}-{} has non-positive reactance {}",
                l.from, l.to, l.x
            )));
        }
        Ok(Self {
            measured_lines,
            flows,
            injections,
        })
    }

    pub fn measured_lines(&self) -> &[Line] {
        &self.measured_lines
    }

    pub fn flows(&self) -> &DMatrix<f64> {
        &self.flows
    }

    pub fn injections(&self) -> &DMatrix<f64> {
        &self.injections
    }

    pub fn m(&self) -> usize {
        self.flows.nrows()
    }

    pub fn n(&self) -> usize {
        self.injections.ncols()
    }

    /// Measurements with the given line (either direction) removed.
    pub fn without_line(&self, a: usize, b: usize) -> FlowMeasurementSet {
        let keep: Vec<usize> = (0..self.measured_lines.len())
            .filter(|&i| {
                let l = self.measured_lines[i];
                !((l.from == a && l.to == b) || (l.from == b && l.to == a))
            })
            .collect();
        FlowMeasurementSet {
            measured_lines: keep.iter().map(|&i| self.measured_lines[i]).collect(),
            flows: self.flows.select_columns(&keep),
            injections: self.injections.clone(),
        }
    }
}

/// Cholesky factor of the reference-reduced susceptance matrix, reusable
/// across many injection vectors.
pub struct DcSolver {
    n: usize,
    ref_bus: usize,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl DcSolver {
    pub fn new(b: &SusceptanceMatrix, ref_bus: usize) -> Result<Self, DcError> {
        let n = b.n();
        if ref_bus >= n {
            return Err(DcError::BadReference { bus: ref_bus, n });
        }
        let keep: Vec<usize> = (0..n).filter(|&i| i != ref_bus).collect();
        let reduced = b.matrix().select_rows(&keep).select_columns(&keep);
        // A connected Laplacian with one row/column removed is positive
        // definite; anything else fails here.
        let chol = nalgebra::Cholesky::new(reduced).ok_or(DcError::Disconnected)?;
        let diag_min = (0..n.saturating_sub(1))
            .map(|i| chol.l_dirty()[(i, i)])
            .fold(f64::INFINITY, f64::min);
        let scale = b.max_abs().max(f64::MIN_POSITIVE);
        if n > 1 && diag_min * diag_min < 1e-12 * scale {
            return Err(DcError::Disconnected);
        }
        Ok(Self { n, ref_bus, chol })
    }

    pub fn solve(&self, p: &[f64]) -> Result<DVector<f64>, DcError> {
        if p.len() != self.n {
            return Err(DcError::ShapeMismatch(format!(
                "{} injections for {} buses",
                p.len(),
                self.n
            )));
        }
        let sum: f64 = p.iter().sum();
        if sum.abs() > BALANCE_TOL {
            return Err(DcError::Unbalanced { sum });
        }
        let rhs = DVector::from_iterator(
            self.n - 1,
            p.iter()
                .enumerate()
                .filter(|(i, _)| *i != self.ref_bus)
                .map(|(_, v)| *v),
        );
        let x = self.chol.solve(&rhs);
        let mut phi = DVector::zeros(self.n);
        let mut k = 0;
        for i in 0..self.n {
            if i != self.ref_bus {
                phi[i] = x[k];
                k += 1;
            }
        }
        Ok(phi)
    }
}

/// Solve `B phi = P` with `phi[ref_bus] = 0`.
pub fn solve_dc(b: &SusceptanceMatrix, p: &[f64], ref_bus: usize) -> Result<DVector<f64>, DcError> {
    DcSolver::new(b, ref_bus)?.solve(p)
}

/// Flow on every line of the topology, `P_ft = (phi_f - phi_t) / X_ft`, in
/// line order.
pub fn line_flows(topology: &GridTopology, phi: &[f64]) -> Result<Vec<f64>, DcError> {
    if phi.len() != topology.n_buses() {
        return Err(DcError::ShapeMismatch(format!(
            "{} angles for {} buses",
            phi.len(),
            topology.n_buses()
        )));
    }
    Ok(topology
        .lines()
        .iter()
        .map(|l| (phi[l.from] - phi[l.to]) / l.x)
        .collect())
}

/// Nodal balance of a flow vector: outgoing minus incoming flow per bus.
pub fn nodal_sums(topology: &GridTopology, flows: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; topology.n_buses()];
    for (l, f) in topology.lines().iter().zip(flows) {
        p[l.from] += f;
        p[l.to] -= f;
    }
    p
}

/// SplitMix64 mix of a base seed and a stream index, for independent
/// sub-streams (one per seed/M pair in experiments).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Type I data: angles uniform in `[-pi/8, pi/8]`, injections `P = B phi`.
pub fn gen_type1(b: &SusceptanceMatrix, m: usize, seed: u64) -> MeasurementSet {
    let n = b.n();
    let mut rng = rng(seed);
    let dist = Uniform::new_inclusive(-TYPE1_HALF_WIDTH, TYPE1_HALF_WIDTH).expect("valid range");
    let mut phi = DMatrix::zeros(m, n);
    for r in 0..m {
        for c in 0..n {
            phi[(r, c)] = dist.sample(&mut rng);
        }
    }
    let p = &phi * b.matrix().transpose();
    MeasurementSet::new(phi, p).expect("shapes agree")
}

/// Type II data: injections `P_k ~ N(0, sigma_k)`, re-centred so each
/// snapshot sums to zero, then angles from the DC solve with reference bus
/// 0. `sigma` defaults to the grid's own vector, else [`DEFAULT_SIGMA`].
pub fn gen_type2(
    topology: &GridTopology,
    m: usize,
    sigma: Option<&[f64]>,
    seed: u64,
) -> Result<MeasurementSet, DcError> {
    let n = topology.n_buses();
    let sigma: Vec<f64> = match sigma.or(topology.sigma()) {
        Some(s) if s.len() == n => s.to_vec(),
        Some(s) => return Err(DcError::ShapeMismatch(format!("{} sigmas for {n} buses", s.len()))),
        None => vec![DEFAULT_SIGMA; n],
    };
    let b = build_susceptance(topology);
    let solver = DcSolver::new(&b, 0)?;
    let mut rng = rng(seed);
    let mut phi = DMatrix::zeros(m, n);
    let mut p = DMatrix::zeros(m, n);
    let mut row = vec![0.0; n];
    for t in 0..m {
        for (k, v) in row.iter_mut().enumerate() {
            *v = if sigma[k] > 0.0 {
                Normal::new(0.0, sigma[k]).expect("finite sigma").sample(&mut rng)
            } else {
                0.0
            };
        }
        let mean = row.iter().sum::<f64>() / n as f64;
        row.iter_mut().for_each(|v| *v -= mean);
        let angles = solver.solve(&row)?;
        for k in 0..n {
            p[(t, k)] = row[k];
            phi[(t, k)] = angles[k];
        }
    }
    MeasurementSet::new(phi, p)
}

/// Additive Gaussian measurement noise on angles and injections. A zero
/// sigma leaves that matrix untouched.
pub fn add_noise(ms: &MeasurementSet, sigma_phi: f64, sigma_p: f64, seed: u64) -> MeasurementSet {
    assert!(sigma_phi >= 0.0 && sigma_p >= 0.0, "noise sigmas must be >= 0");
    let mut rng = rng(seed);
    let mut out = ms.clone();
    if sigma_phi > 0.0 {
        let d = Normal::new(0.0, sigma_phi).expect("finite sigma");
        out.phi.iter_mut().for_each(|v| *v += d.sample(&mut rng));
    }
    if sigma_p > 0.0 {
        let d = Normal::new(0.0, sigma_p).expect("finite sigma");
        out.p.iter_mut().for_each(|v| *v += d.sample(&mut rng));
    }
    out
}

/// Flows on the given lines (which must exist in the topology) for every
/// snapshot of `ms`, with the snapshot injections attached.
pub fn measure_flows(
    topology: &GridTopology,
    ms: &MeasurementSet,
    lines: &[(usize, usize)],
) -> Result<FlowMeasurementSet, DcError> {
    let mut measured = Vec::with_capacity(lines.len());
    for &(a, b) in lines {
        let idx = topology.find_line(a, b).ok_or(DcError::NoSuchLine { from: a, to: b })?;
        measured.push(Line::new(a, b, topology.lines()[idx].x));
    }
    let flows = DMatrix::from_fn(ms.m(), measured.len(), |t, j| {
        let l = measured[j];
        (ms.phi[(t, l.from)] - ms.phi[(t, l.to)]) / l.x
    });
    FlowMeasurementSet::new(measured, flows, ms.p.clone())
}

pub(crate) fn parse_header_fields(rest: &str, keys: &[&str]) -> Result<Vec<usize>, DcError> {
    let mut out = Vec::with_capacity(keys.len());
    let tokens: Vec<&str> = rest.split_whitespace().collect();
    if tokens.len() != keys.len() {
        return Err(DcError::Parse(format!("expected header fields {keys:?}")));
    }
    for (tok, key) in tokens.iter().zip(keys) {
        let value = tok
            .strip_prefix(key)
            .and_then(|s| s.strip_prefix('='))
            .ok_or_else(|| DcError::Parse(format!("expected {key}=<int>, got {tok:?}")))?;
        out.push(
            value
                .parse()
                .map_err(|_| DcError::Parse(format!("bad integer in {tok:?}")))?,
        );
    }
    Ok(out)
}

pub(crate) fn read_block<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    rows: usize,
    cols: usize,
    what: &str,
) -> Result<DMatrix<f64>, DcError> {
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| DcError::Parse(format!("missing {what} row {r}")))?;
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() != cols {
            return Err(DcError::Parse(format!(
                "{what} row {r} has {} values, expected {cols}",
                values.len()
            )));
        }
        for (c, v) in values.iter().enumerate() {
            m[(r, c)] = v
                .parse()
                .map_err(|_| DcError::Parse(format!("bad number {v:?} in {what} row {r}")))?;
        }
    }
    Ok(m)
}

pub(crate) fn expect_separator<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<(), DcError> {
    match lines.next() {
        Some("---") => Ok(()),
        other => Err(DcError::Parse(format!("expected '---', got {other:?}"))),
    }
}

pub(crate) fn expect_end<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<(), DcError> {
    match lines.find(|l| !l.trim().is_empty()) {
        None => Ok(()),
        Some(l) => Err(DcError::Parse(format!("trailing content {l:?}"))),
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String, DcError> {
    fs::read_to_string(path).map_err(|source| DcError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), DcError> {
    fs::write(path, text).map_err(|source| DcError::Io {
        path: path.display().to_string(),
        source,
    })
}
