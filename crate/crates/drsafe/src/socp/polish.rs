//! Active-set refinement of a near-optimal synthesis control.
//!
//! An interior-point duality gap `g` only pins the minimizer of the
//! squared-distance objective to `sqrt(g)` when the binding geometry is weak.
//! Newton iterations on the active-set KKT system of the projection problem
//! recover the control to near machine precision from the solver's answer.
//! The caller verifies the polished point (feasibility and objective) before
//! accepting it, so this routine may give up freely on degenerate geometry.

use crate::dro::{DroError, SocConstraint, SynthesisProblem};
use crate::model::ExtControl;
use crate::numerics::{dot, norm2, solve_spd, sub, Mat, SymMatrix};

struct ConstraintGeom {
    soc: SocConstraint,
    scale: f64,
}

impl ConstraintGeom {
    fn margin(&self, u: &ExtControl) -> f64 {
        self.soc.margin(u)
    }

    /// Gradient of the margin with respect to the plain control, or `None`
    /// at a nonsmooth cone vertex.
    fn gradient(&self, u: &ExtControl) -> Option<Vec<f64>> {
        let m = u.dim_ext() - 1;
        let v = self.soc.norm_coef.matvec(u.as_slice());
        let nv = norm2(&v);
        let mut grad = vec![0.0; m];
        if self.soc.norm_coef.frobenius() > 0.0 {
            if nv <= 1e-12 * self.scale {
                return None;
            }
            for (j, g) in grad.iter_mut().enumerate() {
                let col: f64 =
                    (0..v.len()).map(|r| self.soc.norm_coef[(r, j + 1)] * v[r]).sum();
                *g = col / nv;
            }
        }
        for (j, g) in grad.iter_mut().enumerate() {
            *g += self.soc.affine[j + 1];
        }
        Some(grad)
    }

    /// Hessian of the margin: `D^T (I - vhat vhat^T) D / ||v||` where `D` is
    /// the control block of the norm coefficient. Zero for linear margins.
    fn hessian(&self, u: &ExtControl) -> Option<SymMatrix> {
        let m = u.dim_ext() - 1;
        if self.soc.norm_coef.frobenius() == 0.0 {
            return Some(SymMatrix::zeros(m));
        }
        let v = self.soc.norm_coef.matvec(u.as_slice());
        let nv = norm2(&v);
        if nv <= 1e-12 * self.scale {
            return None;
        }
        let kdim = v.len();
        let col = |j: usize| -> Vec<f64> {
            (0..kdim).map(|r| self.soc.norm_coef[(r, j + 1)]).collect()
        };
        let vhat: Vec<f64> = v.iter().map(|x| x / nv).collect();
        Some(SymMatrix::from_fn(m, |i, j| {
            let ci = col(i);
            let cj = col(j);
            (dot(&ci, &cj) - dot(&ci, &vhat) * dot(&cj, &vhat)) / nv
        }))
    }
}

fn gather(problem: &SynthesisProblem) -> Result<Vec<ConstraintGeom>, DroError> {
    let mut out = Vec::new();
    for l in 0..problem.n_constraints() {
        for soc in problem.reduce_to_soc(l)? {
            let scale = 1.0 + soc.norm_coef.frobenius() + norm2(&soc.affine);
            if soc.norm_coef.rows() == 1 && soc.norm_coef.frobenius() > 0.0 {
                // A one-dimensional norm is an absolute value; its kink is an
                // attractor for projections (as with L1 penalties), so split
                // it into the two exact linear margins |v| + a = max(a+v, a-v).
                let row = soc.norm_coef.row(0).to_vec();
                for sign in [1.0, -1.0] {
                    let affine: Vec<f64> =
                        soc.affine.iter().zip(&row).map(|(a, c)| a + sign * c).collect();
                    out.push(ConstraintGeom {
                        soc: SocConstraint {
                            norm_coef: Mat::zeros(1, soc.norm_coef.cols()),
                            affine,
                        },
                        scale,
                    });
                }
            } else {
                out.push(ConstraintGeom { soc, scale });
            }
        }
    }
    Ok(out)
}

/// Select a linearly independent subset of gradient rows by modified
/// Gram-Schmidt, preferring the given candidate order.
fn independent_rows(grads: &[(usize, Vec<f64>)]) -> Vec<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    for (idx, g) in grads {
        let mut v = g.clone();
        let orig = norm2(&v).max(1e-300);
        for b in &basis {
            let c = dot(&v, b);
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= c * bi;
            }
        }
        let res = norm2(&v);
        if res > 1e-8 * orig {
            for vi in v.iter_mut() {
                *vi /= res;
            }
            basis.push(v);
            kept.push(*idx);
        }
    }
    kept
}

/// Polish a feasible near-optimal control. Returns `None` whenever the
/// active-set iteration cannot be completed cleanly.
pub fn polish_control(problem: &SynthesisProblem, u0: &[f64]) -> Option<Vec<f64>> {
    let m = problem.control_dim();
    let geoms = gather(problem).ok()?;
    let k_u = problem.nominal.controls().to_vec();
    let mut u = u0.to_vec();

    let margins = |u: &[f64], geoms: &[ConstraintGeom]| -> Vec<f64> {
        let ext = ExtControl::from_controls(u);
        geoms.iter().map(|g| g.margin(&ext)).collect()
    };

    let dbg = std::env::var("DRSAFE_POLISH_DEBUG").is_ok();
    // Constraints near the boundary at the solver's answer are candidates;
    // wrong guesses are repaired by the multiplier-sign and violation loops.
    let act_band = 1e-5;
    let mut active: Vec<usize> = margins(&u, &geoms)
        .iter()
        .enumerate()
        .filter(|(j, &g)| g >= -act_band * geoms[*j].scale)
        .map(|(j, _)| j)
        .collect();

    if active.is_empty() {
        if dbg {
            eprintln!("polish: empty active set");
        }
        return None;
    }

    // Multiplier estimates per constraint; they feed the Lagrangian Hessian,
    // which must include the cone curvature or the iteration turns expansive
    // whenever mu * curvature outweighs the objective's own Hessian.
    let mut mu_full = vec![0.0f64; geoms.len()];

    for _outer in 0..12 {
        let mut mu = Vec::new();
        let mut kept: Vec<usize> = Vec::new();
        // SQP with exact Hessian on the equality-constrained projection.
        let mut converged = false;
        let mut prev_step = f64::INFINITY;
        for _inner in 0..30 {
            let ext = ExtControl::from_controls(&u);
            let mut grads = Vec::new();
            for &j in &active {
                match geoms[j].gradient(&ext) {
                    Some(g) => grads.push((j, g)),
                    None => {
                        if dbg {
                            eprintln!("polish: nonsmooth at constraint {j}");
                        }
                        return None;
                    }
                }
            }
            kept = independent_rows(&grads);
            if kept.is_empty() {
                return None;
            }
            let jmat = Mat::from_rows(
                &kept
                    .iter()
                    .map(|j| grads.iter().find(|(idx, _)| idx == j).unwrap().1.clone())
                    .collect::<Vec<_>>(),
            );
            let g_vals: Vec<f64> = {
                let all = margins(&u, &geoms);
                kept.iter().map(|&j| all[j]).collect()
            };
            // H = 2I + sum_j mu_j hess_j, clamped to mu_j >= 0 to keep H SPD.
            let mut hess = SymMatrix::identity(m);
            for i in 0..m {
                hess.set(i, i, 2.0);
            }
            for &j in &kept {
                let w = mu_full[j].max(0.0);
                if w > 0.0 {
                    match geoms[j].hessian(&ext) {
                        Some(hj) => hess.add_scaled(&hj, w),
                        None => return None,
                    }
                }
            }
            let Some(hchol) = crate::numerics::cholesky(&hess, 1e-12) else {
                return None;
            };
            // (J H^-1 J^T) mu = g - J H^-1 grad_f;  d = -H^-1 (grad_f + J^T mu)
            let grad_f: Vec<f64> = u.iter().zip(&k_u).map(|(a, b)| 2.0 * (a - b)).collect();
            let hinv_gf = crate::numerics::cholesky_solve(&hchol, &grad_f);
            let hinv_jt: Vec<Vec<f64>> = (0..kept.len())
                .map(|r| crate::numerics::cholesky_solve(&hchol, jmat.row(r)))
                .collect();
            let schur = SymMatrix::from_fn(kept.len(), |i, j| dot(jmat.row(i), &hinv_jt[j]));
            let rhs: Vec<f64> = (0..kept.len())
                .map(|r| g_vals[r] - dot(jmat.row(r), &hinv_gf))
                .collect();
            mu = match solve_spd(&schur, &rhs, 1e-14) {
                Ok(v) => v,
                Err(e) => {
                    if dbg {
                        eprintln!("polish: schur solve failed {e}");
                    }
                    return None;
                }
            };
            for (r, &j) in kept.iter().enumerate() {
                mu_full[j] = mu[r];
            }
            let jt_mu = jmat.t_matvec(&mu);
            let mut d = vec![0.0; m];
            for i in 0..m {
                d[i] = grad_f[i] + jt_mu[i];
            }
            let d = crate::numerics::cholesky_solve(&hchol, &d);
            let d: Vec<f64> = d.iter().map(|v| -v).collect();
            let step = norm2(&d);
            for (ui, di) in u.iter_mut().zip(&d) {
                *ui += di;
            }
            if dbg {
                eprintln!("polish: |d| = {step:.3e} mu = {mu:?}");
            }
            if step <= 1e-12 * (1.0 + norm2(&u)) {
                converged = true;
                break;
            }
            if step > 4.0 * prev_step && step > 1e-9 {
                if dbg {
                    eprintln!("polish: diverging step");
                }
                return None;
            }
            prev_step = step;
        }
        if !converged {
            if dbg {
                eprintln!("polish: inner Newton did not converge, active={active:?}");
            }
            return None;
        }
        // Drop the most negative multiplier, if any.
        let (worst_j, worst_mu) = kept
            .iter()
            .zip(&mu)
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(&j, &m)| (j, m))?;
        if worst_mu < -1e-9 {
            active.retain(|&j| j != worst_j);
            if active.is_empty() {
                return None;
            }
            continue;
        }
        // Pull in the worst violated inactive constraint, if any.
        let all = margins(&u, &geoms);
        let viol = all
            .iter()
            .enumerate()
            .filter(|(j, _)| !active.contains(j))
            .map(|(j, &g)| (j, g / geoms[j].scale))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if let Some((j, rel)) = viol {
            if rel > 1e-11 {
                active.push(j);
                continue;
            }
        }
        return Some(u);
    }
    None
}
