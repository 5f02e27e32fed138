//! Fast feasibility certificates for the robust synthesis program.
//!
//! Solving the synthesis SOCP costs `O(sqrt(M N) (m + N)^3)`; the three
//! checks here decide feasibility questions much more cheaply:
//!
//! * [`check_necessary`]: per (constraint, sample) eigenvalue tests, cost
//!   `O(N M m^3)`. Failure for every sample of some constraint certifies the
//!   program infeasible.
//! * [`check_sufficient_single`]: a single eigenvalue test on sample-inflated
//!   data, cost `O(N + m^3)`, limited to one constraint. Success certifies
//!   feasibility.
//! * [`check_sufficient_slack`]: an arithmetic comparison of the radius
//!   schedule against a slack certificate, cost `O(M)`; success certifies
//!   strict feasibility with probability at least `1 - eps_bar`.
//!
//! All three build on the same characterization of when a single constraint
//! `||Q^T u|| <= w^T u + v` over the extended control admits a solution.

use std::time::Instant;

use thiserror::Error;

use crate::dro::{radius_schedule, DroError, SynthesisProblem};
use crate::numerics::{
    dot, is_positive_definite, min_eigenvalue, solve_spd, spectral_norm, Mat, SymMatrix,
};

#[derive(Debug, Error)]
pub enum FeasibilityError {
    #[error("the single-constraint sufficient check requires M = 1, got M = {0}")]
    WrongM(usize),
    #[error("constraint {0} has ||R|| = 0; the slack condition divides by it")]
    ZeroRNorm(usize),
    #[error("ambiguity radius r = {r} exceeds the schedule r_N = {r_n}")]
    RadiusMismatch { r: f64, r_n: f64 },
    #[error(transparent)]
    Dro(#[from] DroError),
}

/// Which of the three eigenvalue sign cases admitted a witness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignCase {
    NegEig,
    PosEig,
    ZeroEig,
    None,
}

/// Outcome of one per-(constraint, sample) test.
#[derive(Debug, Clone)]
pub struct CaseRecord {
    pub constraint: usize,
    pub sample: Option<usize>,
    pub h_not_pd: bool,
    pub case: SignCase,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerdictKind {
    CertifiedInfeasible,
    CertifiedFeasible,
    Inconclusive,
    NotApplicable(NotApplicableReason),
}

/// The violated hypothesis, when a check does not apply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NotApplicableReason {
    /// `Q Q^T` is singular for the given constraint.
    QqtSingular { constraint: usize },
}

#[derive(Debug, Clone)]
pub struct FeasibilityVerdict {
    pub kind: VerdictKind,
    pub details: Vec<CaseRecord>,
    pub elapsed_s: f64,
}

impl FeasibilityVerdict {
    fn new(kind: VerdictKind, details: Vec<CaseRecord>, start: Instant) -> Self {
        FeasibilityVerdict { kind, details, elapsed_s: start.elapsed().as_secs_f64() }
    }
}

/// Slack certificate for the probabilistic sufficient condition: per-
/// constraint CVaR slacks `S_l >= 0` of some candidate controller, and an
/// upper bound `B >= 1` on that controller's extended norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackCertificate {
    slack: Vec<f64>,
    norm_bound: f64,
}

impl SlackCertificate {
    pub fn new(slack: Vec<f64>, norm_bound: f64) -> Result<Self, DroError> {
        if slack.iter().any(|s| !(*s >= 0.0)) {
            return Err(DroError::Inconsistent("slack values must be nonnegative".into()));
        }
        // The extended control starts with a fixed 1, so any norm bound on it
        // is at least 1.
        if !(norm_bound >= 1.0) {
            return Err(DroError::Inconsistent("norm bound must be at least 1".into()));
        }
        Ok(SlackCertificate { slack, norm_bound })
    }

    pub fn slack(&self) -> &[f64] {
        &self.slack
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }
}

/// Data of a single second-order cone feasibility test
/// `exists u: ||Q^T [1; u]|| <= w^T u + v`.
struct SingleConeTest {
    /// `m x k`
    q_block: Mat,
    /// length k
    r_row: Vec<f64>,
    /// length m
    w: Vec<f64>,
    v: f64,
}

enum SingleOutcome {
    NotApplicable,
    Tested { h_not_pd: bool, case: SignCase, passes: bool },
}

impl SingleConeTest {
    /// The eigenvalue characterization of single-cone feasibility. `F`, `J`,
    /// `H` and the three sign cases follow the certificate construction; the
    /// `Q Q^T` invertibility hypothesis is decided by `min_eig > tol`, and
    /// eigenvalues within `tol` of zero take the zero-eigenvalue branch.
    fn run(&self, tol: f64) -> SingleOutcome {
        let m = self.w.len();
        let qqt = SymMatrix::gram_rows(&self.q_block);
        if !(min_eigenvalue(&qqt) > tol) {
            return SingleOutcome::NotApplicable;
        }
        // F = Q Q^T - w w^T
        let mut f = qqt.clone();
        for i in 0..m {
            for j in 0..=i {
                f.set(i, j, f.get(i, j) - self.w[i] * self.w[j]);
            }
        }
        // J = r Q^T - v w^T  (a row vector)
        let jrow: Vec<f64> =
            (0..m).map(|i| dot(&self.r_row, self.q_block.row(i)) - self.v * self.w[i]).collect();
        // H = [[r r^T - v^2, J], [J^T, F]]
        let h = SymMatrix::from_fn(m + 1, |i, j| match (i, j) {
            (0, 0) => dot(&self.r_row, &self.r_row) - self.v * self.v,
            (i, 0) => jrow[i - 1],
            (i, j) => f.get(i - 1, j - 1),
        });
        let h_not_pd = !is_positive_definite(&h, tol);
        let lambda = min_eigenvalue(&f);
        let (case, case_holds) = if lambda < -tol {
            (SignCase::NegEig, true)
        } else if lambda > tol {
            // q r^T - w v
            let rhs: Vec<f64> = (0..m)
                .map(|i| dot(self.q_block.row(i), &self.r_row) - self.w[i] * self.v)
                .collect();
            match solve_spd(&f, &rhs, tol) {
                Ok(x) => {
                    let value = self.v - dot(&self.w, &x);
                    (if value >= 0.0 { SignCase::PosEig } else { SignCase::None }, value >= 0.0)
                }
                Err(_) => (SignCase::None, false),
            }
        } else {
            let rhs: Vec<f64> = (0..m).map(|i| dot(self.q_block.row(i), &self.r_row)).collect();
            match solve_spd(&qqt, &rhs, tol) {
                Ok(x) => {
                    let value = self.v - dot(&self.w, &x);
                    (if value > 0.0 { SignCase::ZeroEig } else { SignCase::None }, value > 0.0)
                }
                Err(_) => (SignCase::None, false),
            }
        };
        SingleOutcome::Tested { h_not_pd, case, passes: h_not_pd && case_holds }
    }
}

/// Necessary condition: if the synthesis program is feasible, then every
/// constraint admits at least one sample whose per-sample cone passes the
/// eigenvalue test. A constraint failing for all samples certifies the
/// program infeasible; otherwise the check is inconclusive.
pub fn check_necessary(
    problem: &SynthesisProblem,
    tol: f64,
) -> Result<FeasibilityVerdict, FeasibilityError> {
    problem.check_eps()?;
    let start = Instant::now();
    let r = problem.ambiguity.r;
    let eps = problem.ambiguity.eps;
    let m = problem.control_dim();
    let k = problem.uncertainty_dim();
    let mut details = Vec::new();
    for (l, c) in problem.constraints.iter().enumerate() {
        let q_block = Mat::from_fn(m, k, |i, j| r * c.r[(i + 1, j)]);
        let r_row: Vec<f64> = (0..k).map(|j| r * c.r[(0, j)]).collect();
        let mut any_pass = false;
        for i in 0..problem.n_samples() {
            let rxi = c.r.matvec(problem.samples.sample(i));
            let coef: Vec<f64> =
                c.q.iter().zip(&rxi).map(|(qv, rv)| -eps * (qv + rv)).collect();
            let test = SingleConeTest {
                q_block: q_block.clone(),
                r_row: r_row.clone(),
                w: coef[1..].to_vec(),
                v: coef[0],
            };
            match test.run(tol) {
                SingleOutcome::NotApplicable => {
                    return Ok(FeasibilityVerdict::new(
                        VerdictKind::NotApplicable(NotApplicableReason::QqtSingular {
                            constraint: l,
                        }),
                        details,
                        start,
                    ));
                }
                SingleOutcome::Tested { h_not_pd, case, passes } => {
                    details.push(CaseRecord {
                        constraint: l,
                        sample: Some(i),
                        h_not_pd,
                        case,
                        passes,
                    });
                    if passes {
                        any_pass = true;
                        break;
                    }
                }
            }
        }
        if !any_pass {
            return Ok(FeasibilityVerdict::new(VerdictKind::CertifiedInfeasible, details, start));
        }
    }
    Ok(FeasibilityVerdict::new(VerdictKind::Inconclusive, details, start))
}

/// Sufficient condition for a single constraint: run the eigenvalue test on
/// data inflated by `eps * max_i ||xi_i||`, which absorbs the per-sample
/// terms by Cauchy-Schwarz. Success certifies feasibility.
pub fn check_sufficient_single(
    problem: &SynthesisProblem,
    tol: f64,
) -> Result<FeasibilityVerdict, FeasibilityError> {
    if problem.n_constraints() != 1 {
        return Err(FeasibilityError::WrongM(problem.n_constraints()));
    }
    problem.check_eps()?;
    let start = Instant::now();
    let c = &problem.constraints[0];
    let eps = problem.ambiguity.eps;
    let inflate = problem.ambiguity.r + eps * problem.samples.max_norm();
    let m = problem.control_dim();
    let k = problem.uncertainty_dim();
    let test = SingleConeTest {
        q_block: Mat::from_fn(m, k, |i, j| inflate * c.r[(i + 1, j)]),
        r_row: (0..k).map(|j| inflate * c.r[(0, j)]).collect(),
        w: c.q[1..].iter().map(|qv| -eps * qv).collect(),
        v: -eps * c.q[0],
    };
    match test.run(tol) {
        SingleOutcome::NotApplicable => Ok(FeasibilityVerdict::new(
            VerdictKind::NotApplicable(NotApplicableReason::QqtSingular { constraint: 0 }),
            Vec::new(),
            start,
        )),
        SingleOutcome::Tested { h_not_pd, case, passes } => {
            let details =
                vec![CaseRecord { constraint: 0, sample: None, h_not_pd, case, passes }];
            let kind =
                if passes { VerdictKind::CertifiedFeasible } else { VerdictKind::Inconclusive };
            Ok(FeasibilityVerdict::new(kind, details, start))
        }
    }
}

/// Probabilistic sufficient condition: with a slack certificate for the true
/// distribution and the radius set by the schedule, the program is strictly
/// feasible with probability at least `1 - eps_bar` whenever
/// `r_N < min_l eps S_l / (2 ||R_l|| B)`.
pub fn check_sufficient_slack(
    problem: &SynthesisProblem,
    certificate: &SlackCertificate,
) -> Result<FeasibilityVerdict, FeasibilityError> {
    problem.check_eps()?;
    if certificate.slack.len() != problem.n_constraints() {
        return Err(FeasibilityError::Dro(DroError::Inconsistent(format!(
            "certificate has {} slacks for {} constraints",
            certificate.slack.len(),
            problem.n_constraints()
        ))));
    }
    let start = Instant::now();
    let eps = problem.ambiguity.eps;
    let mut threshold = f64::INFINITY;
    for (l, c) in problem.constraints.iter().enumerate() {
        let norm = spectral_norm(&c.r);
        if norm == 0.0 {
            return Err(FeasibilityError::ZeroRNorm(l));
        }
        threshold = threshold
            .min(eps * certificate.slack[l] / (2.0 * norm * certificate.norm_bound));
    }
    let r_n = radius_schedule(problem.n_samples(), &problem.ambiguity)?;
    if problem.ambiguity.r > r_n {
        return Err(FeasibilityError::RadiusMismatch { r: problem.ambiguity.r, r_n });
    }
    let kind = if r_n < threshold {
        VerdictKind::CertifiedFeasible
    } else {
        VerdictKind::Inconclusive
    };
    Ok(FeasibilityVerdict::new(kind, Vec::new(), start))
}
