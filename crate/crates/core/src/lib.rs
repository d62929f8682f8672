//! Monotone decomposition of univariate regression functions with cubic
//! B-splines: every function is written as the sum of a nondecreasing and a
//! nonincreasing spline, made unique by penalizing the discrepancy between
//! the two components. The decomposition doubles as a fitting method and as
//! the basis of a wild-bootstrap test of monotonicity.

pub mod basis;
pub mod cone;
pub mod curves;
pub mod decomposition;
pub mod sim;
pub mod testing;
pub mod tuning;

pub use basis::{build_knots, build_knots_all_points, design_matrix, eval_spline, penalty_matrix, DesignPair, KnotVector};
pub use cone::{sequence_decompose, solve_cone_qp, solve_ls, solve_smoothing, ConePair, ConeQpProblem, ConeQpSolver};
pub use decomposition::{detect_ties, fit_mdcs, fit_mdss, predict, DecompositionFit, FitMethod, TieGroups};
