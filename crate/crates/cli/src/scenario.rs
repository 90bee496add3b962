//! Flow-measurement scenarios: a partially known grid, flows measured on some
//! of its known lines, and regions whose internal connectivity is unknown.
//!
//! File format (JSON):
//!
//! ```text
//! {
//!   "n_buses": 30,
//!   "unknown_buses": [[16, 19, 20], [24, 27, 28]],
//!   "known_lines": [{"from": 0, "to": 1, "x": 0.06}, ...],
//!   "measured_lines": [[0, 1], ...]
//! }
//! ```
//!
//! Every pair of buses inside one unknown region is unknown; every other
//! pair is known, either as one of `known_lines` or as absent. Buses are
//! 0-based.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gridrecon_core::dc::{add_noise, derive_seed, gen_type2};
use gridrecon_core::estimation::{estimate_states_series, EstimationError, StateSeries};
use gridrecon_core::grid::{build_susceptance, GridTopology, Line};
use gridrecon_core::reconstruction::{reconstruct_iterative, verify_against_truth, Verification};
use gridrecon_core::{FlowMeasurementSet, KnowledgeMask, MeasurementSet, ReconstructionReport, SuccessPolicy};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::experiment::Prior;

/// Two regions of the 30-bus grid whose internal lines are unknown, with
/// flows measured on a spanning tree of the known lines.
pub const BUNDLED_IEEE30: &str = include_str!("../data/ieee30_two_regions.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnownLine {
    pub from: usize,
    pub to: usize,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowScenario {
    pub n_buses: usize,
    pub unknown_buses: Vec<Vec<usize>>,
    pub known_lines: Vec<KnownLine>,
    #[serde(default)]
    pub measured_lines: Vec<[usize; 2]>,
}

impl FlowScenario {
    pub fn bundled() -> Self {
        Self::from_json_str(BUNDLED_IEEE30).expect("bundled scenario is valid")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let s: FlowScenario = serde_json::from_str(text).context("parsing scenario")?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json_str(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization") + "\n"
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_buses;
        let mut seen = BTreeSet::new();
        for region in &self.unknown_buses {
            for &b in region {
                if b >= n {
                    bail!("unknown bus {b} outside {n} buses");
                }
                if !seen.insert(b) {
                    bail!("bus {b} listed in more than one unknown region");
                }
            }
        }
        let known = self.knowledge();
        for l in &self.known_lines {
            if l.from >= n || l.to >= n || l.from == l.to {
                bail!("known line {}-{} is invalid for {n} buses", l.from, l.to);
            }
            if !known.is_known(l.from, l.to) {
                bail!("known line {}-{} lies inside an unknown region", l.from, l.to);
            }
        }
        for &[a, b] in &self.measured_lines {
            if !self
                .known_lines
                .iter()
                .any(|l| (l.from, l.to) == (a, b) || (l.from, l.to) == (b, a))
            {
                bail!("measured line {a}-{b} is not a known line");
            }
        }
        Ok(())
    }

    pub fn unknown_bus_set(&self) -> BTreeSet<usize> {
        self.unknown_buses.iter().flatten().copied().collect()
    }

    pub fn knowledge(&self) -> KnowledgeMask {
        let region: Vec<Option<usize>> = (0..self.n_buses)
            .map(|b| self.unknown_buses.iter().position(|r| r.contains(&b)))
            .collect();
        KnowledgeMask::from_pairs(self.n_buses, |r, c| region[r].is_none() || region[r] != region[c])
    }

    /// Known part of the grid as prior knowledge; unknown entries are zero.
    pub fn prior(&self) -> Result<Prior> {
        let lines = self.known_lines.iter().map(|l| Line::new(l.from, l.to, l.x)).collect();
        let known_grid = GridTopology::new(self.n_buses, lines)?;
        let full = build_susceptance(&known_grid);
        let known = self.knowledge();
        let mut b = full.into_matrix();
        // Diagonals of rows with unknown entries depend on the unknown lines.
        for r in 0..self.n_buses {
            if !known.is_known(r, r) {
                b[(r, r)] = 0.0;
            }
        }
        Ok(Prior {
            b: gridrecon_core::SusceptanceMatrix::from_matrix(b)?,
            known,
        })
    }

    /// Measured lines with their reactances from the known grid.
    pub fn measured(&self) -> Vec<Line> {
        self.measured_lines
            .iter()
            .map(|&[a, b]| {
                let l = self
                    .known_lines
                    .iter()
                    .find(|l| (l.from, l.to) == (a, b) || (l.from, l.to) == (b, a))
                    .expect("validated measured line");
                Line::new(a, b, l.x)
            })
            .collect()
    }

    /// Buses not connected to `ref_bus` through measured lines, grouped by
    /// island. With flows only, each island is one unobservable direction.
    pub fn unobservable_islands(&self, ref_bus: usize) -> Vec<Vec<usize>> {
        let n = self.n_buses;
        let mut label: Vec<usize> = (0..n).collect();
        fn find(label: &mut [usize], mut i: usize) -> usize {
            while label[i] != i {
                label[i] = label[label[i]];
                i = label[i];
            }
            i
        }
        for &[a, b] in &self.measured_lines {
            let (ra, rb) = (find(&mut label, a), find(&mut label, b));
            label[ra] = rb;
        }
        let root = find(&mut label, ref_bus);
        let mut islands: Vec<(usize, Vec<usize>)> = Vec::new();
        for b in 0..n {
            let r = find(&mut label, b);
            if r == root {
                continue;
            }
            match islands.iter_mut().find(|(k, _)| *k == r) {
                Some((_, v)) => v.push(b),
                None => islands.push((r, vec![b])),
            }
        }
        islands.into_iter().map(|(_, v)| v).collect()
    }
}

/// Simulate the scenario's measurements on the true grid: type II
/// injections, DC angles, and flows on the measured lines.
pub fn simulate_flows(
    scenario: &FlowScenario,
    truth: &GridTopology,
    m: usize,
    seed: u64,
    noise_p: f64,
) -> Result<FlowMeasurementSet> {
    if truth.n_buses() != scenario.n_buses {
        bail!("scenario has {} buses, grid has {}", scenario.n_buses, truth.n_buses());
    }
    let b = build_susceptance(truth);
    let mut ms = gen_type2(truth, m, None, seed)?;
    if noise_p > 0.0 {
        ms = add_noise(&ms, 0.0, noise_p, derive_seed(seed, u64::MAX));
    }
    let measured = scenario.measured();
    let flows = DMatrix::from_fn(m, measured.len(), |t, i| {
        let l = measured[i];
        -b.get(l.from, l.to) * (ms.phi()[(t, l.from)] - ms.phi()[(t, l.to)])
    });
    Ok(FlowMeasurementSet::new(measured, flows, ms.p().clone())?)
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub states: StateSeries,
    pub report: ReconstructionReport,
    pub verification: Option<Verification>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ScenarioOptions {
    pub ref_bus: usize,
    pub use_injections: bool,
    pub epsilon: Option<f64>,
}

/// Estimate the angles from the flows, then run the iterative
/// reconstruction with the scenario's prior and the measured injections.
pub fn run_scenario(
    scenario: &FlowScenario,
    flows: &FlowMeasurementSet,
    policy: &SuccessPolicy,
    options: ScenarioOptions,
    truth: Option<&GridTopology>,
) -> Result<ScenarioRun> {
    let prior = scenario.prior()?;
    let states = match estimate_states_series(flows, &prior.b, &prior.known, options.ref_bus, options.use_injections) {
        Ok(s) => s,
        Err(EstimationError::Unobservable { snapshot, nullity }) => {
            let islands = if options.use_injections {
                String::new()
            } else {
                format!(
                    "; buses without a measured path to the reference: {:?}",
                    scenario.unobservable_islands(options.ref_bus)
                )
            };
            bail!("snapshot {snapshot} is unobservable ({nullity} undetermined directions){islands}");
        }
        Err(e) => return Err(e.into()),
    };
    let ms = MeasurementSet::new(states.phi.clone(), flows.injections().clone())?;
    let mut report = reconstruct_iterative(&ms, &prior.b, &prior.known, policy)?;
    let verification = match truth {
        Some(g) => {
            let v = verify_against_truth(&report, &build_susceptance(g), options.epsilon)?;
            report = report.with_verification(&v);
            Some(v)
        }
        None => None,
    };
    Ok(ScenarioRun {
        states,
        report,
        verification,
    })
}
