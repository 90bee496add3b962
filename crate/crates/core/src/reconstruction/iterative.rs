//! Iterative reconstruction with knowledge propagation.
//!
//! Each sweep freezes the current knowledge, solves every incomplete row
//! against it, and only then commits the accepted entries (and their
//! symmetric images). Row order within a sweep is therefore irrelevant.
//!
//! An off-diagonal pair `(r, c)` can receive a candidate value from row `r`
//! and from row `c` in the same sweep. A single candidate is committed; two
//! candidates are committed when they agree within the zero threshold. On
//! disagreement a least-squares candidate beats a 1-norm candidate, and two
//! candidates of the same kind leave the pair open.

use nalgebra::{DMatrix, DVector};

use super::{check_measurements, solve_with, stacked_phi, stacked_rhs, ReconstructionError, RowBranch, SuccessPolicy};
use crate::dc::MeasurementSet;
use crate::grid::{
    KnowledgeMask, ReconstructionOutcome, ReconstructionReport, RowResolution, RowStatus, SusceptanceMatrix,
    RELATIVE_ZERO_TOL,
};
use crate::solver::RankRevealing;

struct Candidate {
    row: DVector<f64>,
    branch: RowBranch,
    eps0: f64,
}

/// Solve row `r` against frozen knowledge; `None` when the row is not
/// accepted.
fn attempt_row(
    phi: &DMatrix<f64>,
    rhs: &DVector<f64>,
    b: &DMatrix<f64>,
    k: &KnowledgeMask,
    r: usize,
    known_max: f64,
    policy: &SuccessPolicy,
) -> Option<Candidate> {
    let n = b.ncols();
    let mut reduced_rhs = rhs.clone();
    let mut columns = Vec::new();
    for c in 0..n {
        if k.is_known(r, c) {
            let v = b[(r, c)];
            if v != 0.0 {
                reduced_rhs.axpy(-v, &phi.column(c), 1.0);
            }
        } else {
            columns.push(c);
        }
    }
    let svd = RankRevealing::new(&phi.select_columns(&columns));
    let solution = match solve_with(&svd, &reduced_rhs) {
        Ok(s) => s,
        Err(e) => {
            log::debug!("row {r}: {e}");
            return None;
        }
    };
    let mut row = DVector::from_iterator(n, b.row(r).iter().copied());
    for (&c, v) in columns.iter().zip(solution.values.iter()) {
        row[c] = *v;
    }
    let eps0 = policy
        .epsilon_zero
        .unwrap_or_else(|| RELATIVE_ZERO_TOL * known_max.max(row.amax()));
    if solution.branch == RowBranch::MinimumL1 {
        let nonzeros = row.iter().filter(|v| v.abs() > eps0).count();
        if nonzeros > policy.d_max {
            return None;
        }
    }
    Some(Candidate {
        row,
        branch: solution.branch,
        eps0,
    })
}

/// Value to commit for a pair given the candidates from both of its rows.
fn decide(a: Option<(f64, RowBranch, f64)>, b: Option<(f64, RowBranch, f64)>) -> Option<f64> {
    match (a, b) {
        (None, None) => None,
        (Some((v, _, _)), None) | (None, Some((v, _, _))) => Some(v),
        (Some((va, ba, ea)), Some((vb, bb, eb))) => {
            if (va - vb).abs() <= ea.max(eb) {
                Some(if ba == bb {
                    0.5 * (va + vb)
                } else if ba == RowBranch::Overdetermined {
                    va
                } else {
                    vb
                })
            } else if ba != bb {
                Some(if ba == RowBranch::Overdetermined { va } else { vb })
            } else {
                None
            }
        }
    }
}

/// Iterative algorithm. `prior_b` supplies the values of the entries marked
/// known in `prior_k`; other entries are ignored.
pub fn reconstruct_iterative(
    ms: &MeasurementSet,
    prior_b: &SusceptanceMatrix,
    prior_k: &KnowledgeMask,
    policy: &SuccessPolicy,
) -> Result<ReconstructionReport, ReconstructionError> {
    let n = prior_b.n();
    if prior_k.n() != n || ms.n() != n {
        return Err(ReconstructionError::ShapeMismatch(format!(
            "prior is {n}x{n}, mask is {0}x{0}, measurements cover {1} buses",
            prior_k.n(),
            ms.n()
        )));
    }
    if policy.d_max == 0 {
        return Err(ReconstructionError::InvalidPolicy);
    }
    let mut b = DMatrix::from_fn(
        n,
        n,
        |r, c| {
            if prior_k.is_known(r, c) {
                prior_b.get(r, c)
            } else {
                0.0
            }
        },
    );
    let mut k = prior_k.clone();
    let prior_complete: Vec<bool> = (0..n).map(|r| prior_k.row_complete(r)).collect();
    let mut solved_by: Vec<Option<RowBranch>> = vec![None; n];
    let mut iterations = 0;
    let mut known_history = Vec::new();

    let outcome = if k.is_complete() {
        ReconstructionOutcome::Complete
    } else {
        check_measurements(ms)?;
        let phi = stacked_phi(ms);
        loop {
            iterations += 1;
            let frozen = k.clone();
            let known_max = (0..n)
                .flat_map(|r| (0..n).map(move |c| (r, c)))
                .filter(|&(r, c)| frozen.is_known(r, c))
                .map(|(r, c)| b[(r, c)].abs())
                .fold(0.0, f64::max);
            let candidates: Vec<Option<Candidate>> = (0..n)
                .map(|r| {
                    if frozen.row_complete(r) {
                        None
                    } else {
                        attempt_row(&phi, &stacked_rhs(ms, r), &b, &frozen, r, known_max, policy)
                    }
                })
                .collect();
            let entry = |r: usize, c: usize| candidates[r].as_ref().map(|cand| (cand.row[c], cand.branch, cand.eps0));
            for r in 0..n {
                for c in (r + 1)..n {
                    if frozen.is_known(r, c) {
                        continue;
                    }
                    if let Some(v) = decide(entry(r, c), entry(c, r)) {
                        b[(r, c)] = v;
                        b[(c, r)] = v;
                        k.mark_pair(r, c);
                    }
                }
            }
            for r in 0..n {
                if k.row_complete(r) && !frozen.row_complete(r) {
                    b[(r, r)] = -(0..n).filter(|&c| c != r).map(|c| b[(r, c)]).sum::<f64>();
                    if let Some(cand) = &candidates[r] {
                        solved_by[r] = Some(cand.branch);
                    }
                }
            }
            known_history.push(k.count_known());
            if k.is_complete() {
                break ReconstructionOutcome::Complete;
            }
            if k == frozen {
                break ReconstructionOutcome::Stalled;
            }
        }
    };

    let rows = (0..n)
        .map(|r| {
            let resolution = if !k.row_complete(r) {
                RowResolution::Failed
            } else if prior_complete[r] {
                RowResolution::Known
            } else {
                match solved_by[r] {
                    Some(RowBranch::Overdetermined) => RowResolution::Overdetermined,
                    Some(RowBranch::MinimumL1) => RowResolution::SparseAccepted,
                    None => RowResolution::Known,
                }
            };
            RowStatus {
                row: r,
                resolution,
                unknown_columns: if resolution == RowResolution::Failed {
                    k.unknown_columns(r)
                } else {
                    Vec::new()
                },
            }
        })
        .collect();

    Ok(ReconstructionReport {
        b_estimate: SusceptanceMatrix::from_matrix(b).map_err(|_| ReconstructionError::NonFinite)?,
        known: k,
        outcome,
        n_iterations: iterations,
        known_history,
        rows,
        entry_success: None,
        error_count: None,
    })
}
