//! Second-order cone programming: standard-form programs, a self-contained
//! interior-point solver, and the controller-synthesis entry point.

mod polish;
mod program;
mod solver;

pub use polish::polish_control;
pub use program::{Cone, ConeProgram, ProgramBuilder, ProgramError, SparseRows};
pub use solver::{block_complementarity, solve, ConeSolution, SolveStatus, SolverOptions};

use crate::dro::{DroError, SynthesisProblem};
use crate::model::ExtControl;
use crate::numerics::{norm2, sub};

/// Which formulation of the synthesis program to solve. Both are equivalent;
/// the epigraph form carries the auxiliary `(y, t, s_i)` variables while the
/// reduced form intersects one cone per (constraint, sample) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    Epigraph,
    Reduced,
}

/// Outcome of a synthesis solve.
#[derive(Debug, Clone)]
pub enum SynthesisOutcome {
    /// Minimizer of the squared distance to the nominal control.
    Optimal { u: Vec<f64>, objective: f64 },
    /// The constraints are infeasible; carries the improving dual ray.
    Infeasible { certificate: Vec<f64> },
    /// The solver gave up (iteration cap or numerical failure).
    Failed(SolveStatus),
}

#[derive(Debug, Clone)]
pub struct ControlResult {
    pub outcome: SynthesisOutcome,
    pub solution: ConeSolution,
    pub form: Form,
}

impl ControlResult {
    pub fn is_optimal(&self) -> bool {
        matches!(self.outcome, SynthesisOutcome::Optimal { .. })
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self.outcome, SynthesisOutcome::Infeasible { .. })
    }

    pub fn control(&self) -> Option<&[f64]> {
        match &self.outcome {
            SynthesisOutcome::Optimal { u, .. } => Some(u),
            _ => None,
        }
    }
}

/// Solve the min-norm synthesis problem at one state and return the control.
///
/// When the nominal control already satisfies every robust constraint it is
/// the unique minimizer of the squared-distance objective, so it is returned
/// exactly; the interior-point solve would only pin it to the square root of
/// the duality gap.
pub fn synthesize(
    problem: &SynthesisProblem,
    form: Form,
    opts: &SolverOptions,
) -> Result<ControlResult, DroError> {
    problem.check_eps()?;
    let nominal_margin = problem.worst_margin(&problem.nominal)?;
    let prog = match form {
        Form::Epigraph => problem.epigraph_program()?,
        Form::Reduced => problem.reduced_program()?,
    };
    let sol = solve(&prog, opts).expect("assembled program is well-formed");
    let m = problem.control_dim();
    let outcome = if nominal_margin <= 0.0 {
        SynthesisOutcome::Optimal { u: problem.nominal.controls().to_vec(), objective: 0.0 }
    } else {
        match sol.status {
            SolveStatus::Optimal => {
                let u = refine_control(problem, sol.primal[..m].to_vec());
                let objective = {
                    let d = sub(&u, problem.nominal.controls());
                    let n = norm2(&d);
                    n * n
                };
                SynthesisOutcome::Optimal { u, objective }
            }
            SolveStatus::Infeasible => {
                SynthesisOutcome::Infeasible { certificate: sol.dual.clone() }
            }
            // The synthesis objective is a squared distance, bounded below; an
            // Unbounded status can only be numerical noise. Surface it as failure.
            other => SynthesisOutcome::Failed(other),
        }
    };
    Ok(ControlResult { outcome, solution: sol, form })
}

/// Accept the polished control only when it is at least as feasible and at
/// least as close to the nominal as the solver's answer.
fn refine_control(problem: &SynthesisProblem, u_solver: Vec<f64>) -> Vec<f64> {
    let Some(u_polished) = polish_control(problem, &u_solver) else {
        return u_solver;
    };
    let margin_scale = 1.0 + problem.nominal.controls().iter().map(|v| v.abs()).fold(0.0, f64::max);
    let feas = problem
        .worst_margin(&ExtControl::from_controls(&u_polished))
        .unwrap_or(f64::INFINITY);
    if feas > 1e-8 * margin_scale {
        return u_solver;
    }
    let k_u = problem.nominal.controls();
    let obj_polished = norm2(&sub(&u_polished, k_u));
    let obj_solver = norm2(&sub(&u_solver, k_u));
    if obj_polished <= obj_solver + 1e-7 * (1.0 + obj_solver) {
        u_polished
    } else {
        u_solver
    }
}
