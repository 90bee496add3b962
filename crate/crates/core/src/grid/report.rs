use nalgebra::DMatrix;
use serde_json::json;

use super::{KnowledgeMask, SusceptanceMatrix};

/// How a row of the estimate was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowResolution {
    /// Solved from a reduced system whose rank covers all unknowns.
    Overdetermined,
    /// Underdetermined; accepted because the 1-norm minimiser was sparse
    /// enough (or, in the row-wise algorithm, taken as is).
    SparseAccepted,
    /// Completed without solving the row itself: prior knowledge or entries
    /// propagated from other rows.
    Known,
    /// Not resolved when the run ended.
    Failed,
}

impl RowResolution {
    pub fn as_str(&self) -> &'static str {
        match self {
            RowResolution::Overdetermined => "overdetermined",
            RowResolution::SparseAccepted => "sparse-accepted",
            RowResolution::Known => "known",
            RowResolution::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconstructionOutcome {
    /// Every entry of `B` is determined.
    Complete,
    /// A full sweep made no progress; some entries remain unknown.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowStatus {
    pub row: usize,
    pub resolution: RowResolution,
    /// Columns still unknown at the end (empty unless `Failed`).
    pub unknown_columns: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ReconstructionReport {
    pub b_estimate: SusceptanceMatrix,
    pub known: KnowledgeMask,
    pub outcome: ReconstructionOutcome,
    /// Number of sweeps (row-wise runs count as one).
    pub n_iterations: usize,
    /// Known entries after each sweep.
    pub known_history: Vec<usize>,
    pub rows: Vec<RowStatus>,
    /// Per-entry success against ground truth, when it was supplied.
    pub entry_success: Option<DMatrix<bool>>,
    pub error_count: Option<usize>,
}

impl ReconstructionReport {
    pub fn is_complete(&self) -> bool {
        self.outcome == ReconstructionOutcome::Complete
    }

    pub fn unresolved_rows(&self) -> impl Iterator<Item = &RowStatus> {
        self.rows.iter().filter(|r| r.resolution == RowResolution::Failed)
    }

    /// Structured text form written by the command-line tool.
    pub fn to_json_string(&self) -> String {
        let n = self.b_estimate.n();
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|r| {
                json!({
                    "row": r.row,
                    "resolution": r.resolution.as_str(),
                    "unknown_columns": r.unknown_columns,
                })
            })
            .collect();
        let b: Vec<Vec<f64>> = (0..n)
            .map(|r| (0..n).map(|c| self.b_estimate.get(r, c)).collect())
            .collect();
        let mut v = json!({
            "n": n,
            "outcome": match self.outcome {
                ReconstructionOutcome::Complete => "complete",
                ReconstructionOutcome::Stalled => "stalled",
            },
            "n_iterations": self.n_iterations,
            "known_history": self.known_history,
            "known_entries": self.known.count_known(),
            "rows": rows,
            "b_estimate": b,
        });
        if let Some(errors) = self.error_count {
            v["error_count"] = json!(errors);
        }
        if let Some(ok) = &self.entry_success {
            let failed: Vec<[usize; 2]> = (0..n)
                .flat_map(|r| (0..n).map(move |c| (r, c)))
                .filter(|&(r, c)| !ok[(r, c)])
                .map(|(r, c)| [r, c])
                .collect();
            v["failed_entries"] = json!(failed);
        }
        serde_json::to_string_pretty(&v).expect("report serialization") + "\n"
    }
}
