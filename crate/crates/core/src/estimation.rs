//! DC-model state estimation: nodal phase angles from line flows and nodal
//! injections by unweighted least squares.
//!
//! Flow on line `(s, r)` is `(phi_s - phi_r) / X_sr`; the injection at bus `s`
//! is row `s` of the susceptance matrix applied to `phi`. Angles are only
//! determined up to a common shift, so the reference bus is pinned to zero
//! by dropping its column.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dc::{
    expect_end, expect_separator, parse_header_fields, read_block, read_file, write_file, DcError, FlowMeasurementSet,
};
use crate::fmt::{f64_str, join_row};
use crate::grid::{KnowledgeMask, Line, SusceptanceMatrix};
use crate::solver::RankRevealing;

const FLOW_HEADER: &str = "# gridrecon-flows v1";

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("flow measured on line {from}-{to} whose reactance is unknown")]
    UnknownReactance { from: usize, to: usize },
    #[error("measurement data contains non-finite values")]
    NonFinite,
    #[error("reference bus {bus} out of range for {n} buses")]
    BadReference { bus: usize, n: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("snapshot {snapshot} is unobservable ({nullity} undetermined directions)")]
    Unobservable { snapshot: usize, nullity: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementKind {
    Flow { from: usize, to: usize },
    Injection { bus: usize },
}

/// Linear DC measurement model `z = H phi + e`.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    pub h: DMatrix<f64>,
    pub z: DVector<f64>,
    pub kinds: Vec<MeasurementKind>,
    /// Buses whose injection was supplied but could not be used because
    /// some incident reactance is unknown.
    pub excluded_injections: Vec<usize>,
}

impl MeasurementModel {
    pub fn n_buses(&self) -> usize {
        self.h.ncols()
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Same structure with a new measurement vector.
    pub fn with_values(&self, z: DVector<f64>) -> Result<Self, EstimationError> {
        if z.len() != self.len() {
            return Err(EstimationError::ShapeMismatch(format!(
                "{} values for {} measurements",
                z.len(),
                self.len()
            )));
        }
        Ok(Self { z, ..self.clone() })
    }
}

/// Dense rows, their kinds, and the buses whose injections were dropped.
type ModelRows = (DMatrix<f64>, Vec<MeasurementKind>, Vec<usize>);

/// Structure of the model: the rows of `H`, independent of the values.
fn model_rows(
    prior: &SusceptanceMatrix,
    known: &KnowledgeMask,
    lines: &[Line],
    use_injections: bool,
) -> Result<ModelRows, EstimationError> {
    let n = prior.n();
    if known.n() != n {
        return Err(EstimationError::ShapeMismatch(format!(
            "knowledge mask is {}x{} for {n} buses",
            known.n(),
            known.n()
        )));
    }
    let mut kinds = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    for l in lines {
        if l.from >= n || l.to >= n {
            return Err(EstimationError::ShapeMismatch(format!(
                "line {}-{} outside {n} buses",
                l.from, l.to
            )));
        }
        let b = prior.get(l.from, l.to);
        if l.from == l.to || !known.is_known(l.from, l.to) || b.is_nan() || b >= 0.0 {
            return Err(EstimationError::UnknownReactance { from: l.from, to: l.to });
        }
        rows.push(vec![(l.from, -b), (l.to, b)]);
        kinds.push(MeasurementKind::Flow { from: l.from, to: l.to });
    }
    let mut excluded = Vec::new();
    if use_injections {
        for s in 0..n {
            if known.row_complete(s) {
                rows.push((0..n).map(|c| (c, prior.get(s, c))).collect());
                kinds.push(MeasurementKind::Injection { bus: s });
            } else {
                excluded.push(s);
            }
        }
    }
    let mut h = DMatrix::zeros(rows.len(), n);
    for (i, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            h[(i, c)] = v;
        }
    }
    Ok((h, kinds, excluded))
}

fn model_values(kinds: &[MeasurementKind], flows: &[f64], injections: Option<&[f64]>) -> DVector<f64> {
    let mut next_flow = 0;
    DVector::from_iterator(
        kinds.len(),
        kinds.iter().map(|k| match k {
            MeasurementKind::Flow { .. } => {
                next_flow += 1;
                flows[next_flow - 1]
            }
            MeasurementKind::Injection { bus } => injections.expect("injections supplied")[*bus],
        }),
    )
}

/// Model for one snapshot. `prior` and `known` describe the partially known
/// network; every measured line must be a known line, and an injection row
/// is only formed for buses whose full row of `B` is known.
pub fn build_measurement_model(
    prior: &SusceptanceMatrix,
    known: &KnowledgeMask,
    lines: &[Line],
    flows: &[f64],
    injections: Option<&[f64]>,
) -> Result<MeasurementModel, EstimationError> {
    if flows.len() != lines.len() {
        return Err(EstimationError::ShapeMismatch(format!(
            "{} flow values for {} lines",
            flows.len(),
            lines.len()
        )));
    }
    if let Some(p) = injections {
        if p.len() != prior.n() {
            return Err(EstimationError::ShapeMismatch(format!(
                "{} injections for {} buses",
                p.len(),
                prior.n()
            )));
        }
    }
    let finite = flows.iter().chain(injections.unwrap_or(&[])).all(|v| v.is_finite());
    if !finite {
        return Err(EstimationError::NonFinite);
    }
    let (h, kinds, excluded) = model_rows(prior, known, lines, injections.is_some())?;
    let z = model_values(&kinds, flows, injections);
    Ok(MeasurementModel {
        h,
        z,
        kinds,
        excluded_injections: if injections.is_some() { excluded } else { Vec::new() },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observability {
    Observable,
    /// The pinned model has a kernel of this dimension.
    Underdetermined {
        nullity: usize,
    },
}

#[derive(Debug, Clone)]
pub struct StateEstimate {
    /// Least-squares angles with `phi[ref_bus] = 0` (minimum-norm when
    /// underdetermined).
    pub phi: DVector<f64>,
    pub observability: Observability,
    /// Euclidean norm of `z - H phi`.
    pub residual: f64,
}

/// Least-squares solver for a fixed model structure, reusable across
/// measurement vectors.
struct PinnedModel {
    n: usize,
    ref_bus: usize,
    svd: RankRevealing,
    observability: Observability,
}

impl PinnedModel {
    fn new(h: &DMatrix<f64>, ref_bus: usize) -> Result<Self, EstimationError> {
        let n = h.ncols();
        if ref_bus >= n {
            return Err(EstimationError::BadReference { bus: ref_bus, n });
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(EstimationError::NonFinite);
        }
        let pinned = h.clone().remove_column(ref_bus);
        let svd = RankRevealing::new(&pinned);
        let nullity = (n - 1) - svd.rank();
        let observability = if nullity == 0 {
            Observability::Observable
        } else {
            Observability::Underdetermined { nullity }
        };
        Ok(Self {
            n,
            ref_bus,
            svd,
            observability,
        })
    }

    fn solve(&self, z: &DVector<f64>) -> DVector<f64> {
        let reduced = self.svd.least_squares(z);
        let mut phi = DVector::zeros(self.n);
        for (i, v) in reduced.iter().enumerate() {
            phi[if i < self.ref_bus { i } else { i + 1 }] = *v;
        }
        phi
    }
}

pub fn estimate_state(model: &MeasurementModel, ref_bus: usize) -> Result<StateEstimate, EstimationError> {
    if model.z.iter().any(|v| !v.is_finite()) {
        return Err(EstimationError::NonFinite);
    }
    let pinned = PinnedModel::new(&model.h, ref_bus)?;
    let phi = pinned.solve(&model.z);
    let residual = (&model.z - &model.h * &phi).norm();
    Ok(StateEstimate {
        phi,
        observability: pinned.observability,
        residual,
    })
}

/// Angle estimates for every snapshot of a flow measurement set.
#[derive(Debug, Clone)]
pub struct StateSeries {
    /// `M x N`, row `m` is the estimate for snapshot `m`.
    pub phi: DMatrix<f64>,
    pub excluded_injections: Vec<usize>,
}

/// Estimate all snapshots. With `use_injections`, injection rows are added
/// for fully known buses. Every snapshot shares the same measurement
/// structure, so observability is decided once; an unobservable set aborts
/// at snapshot 0.
pub fn estimate_states_series(
    set: &FlowMeasurementSet,
    prior: &SusceptanceMatrix,
    known: &KnowledgeMask,
    ref_bus: usize,
    use_injections: bool,
) -> Result<StateSeries, EstimationError> {
    let n = prior.n();
    if set.n() != n {
        return Err(EstimationError::ShapeMismatch(format!(
            "measurements cover {} buses, network has {n}",
            set.n()
        )));
    }
    if set
        .flows()
        .iter()
        .chain(set.injections().iter())
        .any(|v| !v.is_finite())
    {
        return Err(EstimationError::NonFinite);
    }
    let (h, kinds, excluded) = model_rows(prior, known, set.measured_lines(), use_injections)?;
    let pinned = PinnedModel::new(&h, ref_bus)?;
    if let Observability::Underdetermined { nullity } = pinned.observability {
        if set.m() > 0 {
            return Err(EstimationError::Unobservable { snapshot: 0, nullity });
        }
    }
    let mut phi = DMatrix::zeros(set.m(), n);
    for t in 0..set.m() {
        let flows: Vec<f64> = set.flows().row(t).iter().copied().collect();
        let inj: Vec<f64> = set.injections().row(t).iter().copied().collect();
        let z = model_values(&kinds, &flows, Some(&inj));
        phi.row_mut(t).copy_from(&pinned.solve(&z).transpose());
    }
    Ok(StateSeries {
        phi,
        excluded_injections: if use_injections { excluded } else { Vec::new() },
    })
}

impl FlowMeasurementSet {
    pub fn to_text(&self) -> String {
        let lines = self.measured_lines();
        let mut out = format!("{FLOW_HEADER} n={} m={} l={}\n", self.n(), self.m(), lines.len());
        let triples: Vec<String> = lines
            .iter()
            .map(|l| format!("{}:{}:{}", l.from, l.to, f64_str(l.x)))
            .collect();
        out.push_str(&triples.join(" "));
        out.push('\n');
        for row in self.flows().row_iter() {
            out.push_str(&join_row(row.iter()));
            out.push('\n');
        }
        out.push_str("---\n");
        for row in self.injections().row_iter() {
            out.push_str(&join_row(row.iter()));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, DcError> {
        let mut it = text.lines();
        let header = it.next().ok_or_else(|| DcError::Parse("empty file".into()))?;
        let rest = header
            .strip_prefix(FLOW_HEADER)
            .ok_or_else(|| DcError::Parse(format!("expected header {FLOW_HEADER:?}")))?;
        let dims = parse_header_fields(rest, &["n", "m", "l"])?;
        let (n, m, l) = (dims[0], dims[1], dims[2]);
        let line_row = it
            .next()
            .ok_or_else(|| DcError::Parse("missing measured line list".into()))?;
        let mut lines = Vec::with_capacity(l);
        for tok in line_row.split_whitespace() {
            let parts: Vec<&str> = tok.split(':').collect();
            let bad = || DcError::Parse(format!("bad line triple {tok:?}"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let from: usize = parts[0].parse().map_err(|_| bad())?;
            let to: usize = parts[1].parse().map_err(|_| bad())?;
            let x: f64 = parts[2].parse().map_err(|_| bad())?;
            if from >= n || to >= n || from == to {
                return Err(bad());
            }
            lines.push(Line::new(from, to, x));
        }
        if lines.len() != l {
            return Err(DcError::Parse(format!(
                "header announces {l} lines, found {}",
                lines.len()
            )));
        }
        let flows = read_block(&mut it, m, l, "flow")?;
        expect_separator(&mut it)?;
        let injections = read_block(&mut it, m, n, "injection")?;
        expect_end(&mut it)?;
        FlowMeasurementSet::new(lines, flows, injections)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DcError> {
        Self::from_text(&read_file(path.as_ref())?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DcError> {
        write_file(path.as_ref(), &self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dc::{measure_flows, solve_dc, MeasurementSet};
    use crate::grid::{build_susceptance, GridTopology};

    fn full_prior(g: &GridTopology) -> (SusceptanceMatrix, KnowledgeMask) {
        (build_susceptance(g), KnowledgeMask::all(g.n_buses()))
    }

    #[test]
    fn single_flow_row() {
        let g = GridTopology::new(2, vec![Line::new(0, 1, 1.0)]).unwrap();
        let (b, k) = full_prior(&g);
        let model = build_measurement_model(&b, &k, &[Line::new(0, 1, 1.0)], &[0.5], None).unwrap();
        assert_eq!(model.h.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, -1.0]);
        assert_eq!(model.kinds[0], MeasurementKind::Flow { from: 0, to: 1 });
    }

    #[test]
    fn injection_row_of_degree_two_bus() {
        let g = GridTopology::new(3, vec![Line::new(0, 1, 1.0), Line::new(1, 2, 0.5)]).unwrap();
        let (b, k) = full_prior(&g);
        let model = build_measurement_model(&b, &k, &[], &[], Some(&[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(
            model.h.row(1).iter().copied().collect::<Vec<_>>(),
            vec![-1.0, 3.0, -2.0]
        );
    }

    #[test]
    fn injections_need_complete_rows() {
        let g = GridTopology::new(3, vec![Line::new(0, 1, 1.0), Line::new(1, 2, 0.5)]).unwrap();
        let b = build_susceptance(&g);
        // Row 0 is complete once the absent pair (0, 2) is known as well.
        let k = KnowledgeMask::from_pairs(3, |r, _| r == 0);
        let model = build_measurement_model(&b, &k, &[], &[], Some(&[0.0; 3])).unwrap();
        assert_eq!(model.excluded_injections, vec![1, 2]);
        assert_eq!(model.kinds, vec![MeasurementKind::Injection { bus: 0 }]);
    }

    #[test]
    fn flow_on_unknown_line_rejected() {
        let g = GridTopology::new(3, vec![Line::new(0, 1, 1.0), Line::new(1, 2, 0.5)]).unwrap();
        let b = build_susceptance(&g);
        let k = KnowledgeMask::from_pairs(3, |r, c| (r, c) == (0, 1));
        let err = build_measurement_model(&b, &k, &[Line::new(1, 2, 0.5)], &[1.0], None).unwrap_err();
        assert!(matches!(err, EstimationError::UnknownReactance { from: 1, to: 2 }));
    }

    #[test]
    fn empty_model_is_underdetermined() {
        let g = GridTopology::new(3, vec![Line::new(0, 1, 1.0), Line::new(1, 2, 0.5)]).unwrap();
        let (b, k) = full_prior(&g);
        let model = build_measurement_model(&b, &k, &[], &[], None).unwrap();
        assert!(model.is_empty());
        let est = estimate_state(&model, 0).unwrap();
        assert_eq!(est.observability, Observability::Underdetermined { nullity: 2 });
    }

    #[test]
    fn spanning_tree_exact() {
        let g = GridTopology::new(
            4,
            vec![
                Line::new(0, 1, 0.2),
                Line::new(1, 2, 0.4),
                Line::new(1, 3, 0.3),
                Line::new(2, 3, 0.5),
            ],
        )
        .unwrap();
        let (b, k) = full_prior(&g);
        let phi = solve_dc(&b, &[1.0, -0.5, 0.25, -0.75], 0).unwrap();
        let tree = [Line::new(0, 1, 0.2), Line::new(1, 2, 0.4), Line::new(1, 3, 0.3)];
        let flows: Vec<f64> = tree.iter().map(|l| (phi[l.from] - phi[l.to]) / l.x).collect();
        let model = build_measurement_model(&b, &k, &tree, &flows, None).unwrap();
        let est = estimate_state(&model, 0).unwrap();
        assert_eq!(est.observability, Observability::Observable);
        assert!((est.phi - phi).amax() < 1e-10);
    }

    #[test]
    fn disconnected_measurements_underdetermined() {
        let g = GridTopology::new(
            4,
            vec![Line::new(0, 1, 1.0), Line::new(1, 2, 1.0), Line::new(2, 3, 1.0)],
        )
        .unwrap();
        let (b, k) = full_prior(&g);
        let lines = [Line::new(0, 1, 1.0), Line::new(2, 3, 1.0)];
        let model = build_measurement_model(&b, &k, &lines, &[0.1, 0.2], None).unwrap();
        let est = estimate_state(&model, 0).unwrap();
        assert_eq!(est.observability, Observability::Underdetermined { nullity: 1 });
    }

    #[test]
    fn bad_inputs_rejected() {
        let g = GridTopology::new(2, vec![Line::new(0, 1, 1.0)]).unwrap();
        let (b, k) = full_prior(&g);
        let l = [Line::new(0, 1, 1.0)];
        assert!(matches!(
            build_measurement_model(&b, &k, &l, &[f64::NAN], None),
            Err(EstimationError::NonFinite)
        ));
        let model = build_measurement_model(&b, &k, &l, &[1.0], None).unwrap();
        assert!(matches!(
            estimate_state(&model, 5),
            Err(EstimationError::BadReference { .. })
        ));
    }

    #[test]
    fn series_abort_reports_snapshot() {
        let g = GridTopology::new(3, vec![Line::new(0, 1, 1.0), Line::new(1, 2, 1.0)]).unwrap();
        let (b, k) = full_prior(&g);
        let ms = MeasurementSet::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 3)).unwrap();
        let set = measure_flows(&g, &ms, &[(0, 1)]).unwrap();
        let err = estimate_states_series(&set, &b, &k, 0, false).unwrap_err();
        assert!(matches!(
            err,
            EstimationError::Unobservable {
                snapshot: 0,
                nullity: 1
            }
        ));
        // Injections at the fully known buses make it observable.
        let series = estimate_states_series(&set, &b, &k, 0, true).unwrap();
        assert_eq!(series.phi.shape(), (2, 3));
    }

    #[test]
    fn flow_file_round_trip() {
        let g = GridTopology::new(3, vec![Line::new(0, 1, 1.0), Line::new(1, 2, 0.5)]).unwrap();
        let phi = DMatrix::from_row_slice(2, 3, &[0.1, -0.2, 0.3, 0.0, 0.05, 1.0 / 3.0]);
        let b = build_susceptance(&g);
        let p = &phi * b.matrix();
        let ms = MeasurementSet::new(phi, p).unwrap();
        let set = measure_flows(&g, &ms, &[(0, 1), (2, 1)]).unwrap();
        let text = set.to_text();
        assert!(text.starts_with("# gridrecon-flows v1 n=3 m=2 l=2\n0:1:1.0 2:1:0.5\n"));
        assert_eq!(FlowMeasurementSet::from_text(&text).unwrap(), set);
        assert!(FlowMeasurementSet::from_text(&text.replace("---", "--")).is_err());
    }
}
