//! Linear algebra and optimisation kernels used by the reconstruction.

mod l1;
mod linalg;
mod simplex;

pub(crate) use l1::min_l1_with_complement;
pub use l1::{min_l1_in_affine_space, AffineSolutionSpace};
pub use linalg::{least_squares, nullspace_basis, numeric_rank, rank_tolerance, RankRevealing};
pub use simplex::{solve_lp, LpError, LpProblem, LpSolution, FEASIBILITY_TOL, OPTIMALITY_TOL};
