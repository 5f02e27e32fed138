//! Primal-dual path-following solver for second-order cone programs.
//!
//! The implementation is a textbook homogeneous self-dual embedding with
//! Nesterov-Todd scaling on second-order cone blocks and a Mehrotra
//! predictor-corrector step. Each iteration factors the dense normal
//! equations `A^T W^-2 A`; problems in this crate are small enough that the
//! cubic dense factorization is the right trade. The embedding is what makes
//! infeasibility detection reliable: an infeasible program drives the
//! homogenizing variable to zero and leaves an improving dual ray that is
//! reported as a certificate.
//!
//! Everything is deterministic: no randomized pivoting, no time-dependent
//! heuristics, so identical inputs produce bit-identical iterates.

use std::time::Instant;

use crate::numerics::{axpy, cholesky, cholesky_solve, dot, norm2, Mat, SymMatrix};
use crate::socp::program::{Cone, ConeProgram, ProgramError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIters,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Relative primal/dual feasibility tolerance.
    pub tol_feas: f64,
    /// Relative duality-gap tolerance.
    pub tol_gap: f64,
    /// Residual tolerance on infeasibility/unboundedness certificates.
    pub tol_infeas: f64,
    /// Fraction of the step to the cone boundary actually taken.
    pub step_frac: f64,
    /// Scale of the identity starting point; only the starting point changes,
    /// the optimum does not.
    pub init_scale: f64,
    /// Print per-iteration diagnostics to stderr.
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 200,
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            tol_infeas: 1e-7,
            step_frac: 0.99,
            init_scale: 1.0,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConeSolution {
    pub status: SolveStatus,
    /// Primal point `x/tau` (for `Optimal`), or the raw final iterate.
    pub primal: Vec<f64>,
    /// Dual point `z/tau` (for `Optimal`), or the normalized improving ray
    /// (for `Infeasible`).
    pub dual: Vec<f64>,
    /// Primal slack `s/tau`.
    pub slack: Vec<f64>,
    pub objective: f64,
    pub duality_gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
}

/// Per-block Nesterov-Todd scaling data.
enum Scaling {
    NonNeg {
        /// `sqrt(s_i / z_i)` per entry.
        w: Vec<f64>,
        /// `sqrt(s_i z_i)` per entry.
        lambda: Vec<f64>,
    },
    Soc {
        eta: f64,
        /// Unit-hyperboloid scaling point.
        wbar: Vec<f64>,
        lambda: Vec<f64>,
    },
}

fn soc_residual(v: &[f64]) -> f64 {
    v[0] * v[0] - dot(&v[1..], &v[1..])
}

/// `M(p) u` where `M(p)` is the symmetric square root factor of the SOC
/// quadratic representation for a unit-hyperboloid point `p`.
fn soc_apply(p: &[f64], u: &[f64]) -> Vec<f64> {
    let p0 = p[0];
    let dot_bar = dot(&p[1..], &u[1..]);
    let mut out = vec![0.0; u.len()];
    out[0] = p0 * u[0] + dot_bar;
    let coef = u[0] + dot_bar / (1.0 + p0);
    for i in 1..u.len() {
        out[i] = u[i] + coef * p[i];
    }
    out
}

impl Scaling {
    fn compute(cone: Cone, s: &[f64], z: &[f64]) -> Option<Scaling> {
        match cone {
            Cone::NonNegative(_) => {
                let mut w = Vec::with_capacity(s.len());
                let mut lambda = Vec::with_capacity(s.len());
                for (&si, &zi) in s.iter().zip(z) {
                    if si <= 0.0 || zi <= 0.0 {
                        return None;
                    }
                    w.push((si / zi).sqrt());
                    lambda.push((si * zi).sqrt());
                }
                Some(Scaling::NonNeg { w, lambda })
            }
            Cone::SecondOrder(_) => {
                let res_s = soc_residual(s);
                let res_z = soc_residual(z);
                if res_s <= 0.0 || res_z <= 0.0 || s[0] <= 0.0 || z[0] <= 0.0 {
                    return None;
                }
                let ns = res_s.sqrt();
                let nz = res_z.sqrt();
                let sbar: Vec<f64> = s.iter().map(|v| v / ns).collect();
                let zbar: Vec<f64> = z.iter().map(|v| v / nz).collect();
                let gamma = ((1.0 + dot(&sbar, &zbar)) / 2.0).sqrt();
                let mut wbar = vec![0.0; s.len()];
                wbar[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
                for i in 1..s.len() {
                    wbar[i] = (sbar[i] - zbar[i]) / (2.0 * gamma);
                }
                let eta = (res_s / res_z).sqrt().sqrt();
                let lambda = {
                    // lambda = W z = eta * M(wbar) z
                    let mut l = soc_apply(&wbar, z);
                    for v in l.iter_mut() {
                        *v *= eta;
                    }
                    l
                };
                Some(Scaling::Soc { eta, wbar, lambda })
            }
        }
    }

    fn lambda(&self) -> &[f64] {
        match self {
            Scaling::NonNeg { lambda, .. } | Scaling::Soc { lambda, .. } => lambda,
        }
    }

    /// `W u`
    fn apply_w(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Scaling::NonNeg { w, .. } => u.iter().zip(w).map(|(ui, wi)| ui * wi).collect(),
            Scaling::Soc { eta, wbar, .. } => {
                let mut out = soc_apply(wbar, u);
                for v in out.iter_mut() {
                    *v *= *eta;
                }
                out
            }
        }
    }

    /// `W^-1 u`
    fn apply_w_inv(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Scaling::NonNeg { w, .. } => u.iter().zip(w).map(|(ui, wi)| ui / wi).collect(),
            Scaling::Soc { eta, wbar, .. } => {
                let mut flipped = wbar.clone();
                for v in flipped.iter_mut().skip(1) {
                    *v = -*v;
                }
                let mut out = soc_apply(&flipped, u);
                for v in out.iter_mut() {
                    *v /= *eta;
                }
                out
            }
        }
    }

    /// `W^2 u`
    fn apply_w2(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Scaling::NonNeg { w, .. } => u.iter().zip(w).map(|(ui, wi)| ui * wi * wi).collect(),
            Scaling::Soc { .. } => {
                let t = self.apply_w(u);
                self.apply_w(&t)
            }
        }
    }

    /// `W^-2 u`
    fn apply_w2_inv(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Scaling::NonNeg { w, .. } => u.iter().zip(w).map(|(ui, wi)| ui / (wi * wi)).collect(),
            Scaling::Soc { .. } => {
                let t = self.apply_w_inv(u);
                self.apply_w_inv(&t)
            }
        }
    }
}

/// Jordan product of a cone block.
fn jordan_prod(cone: Cone, u: &[f64], v: &[f64]) -> Vec<f64> {
    match cone {
        Cone::NonNegative(_) => u.iter().zip(v).map(|(a, b)| a * b).collect(),
        Cone::SecondOrder(_) => {
            let mut out = vec![0.0; u.len()];
            out[0] = dot(u, v);
            for i in 1..u.len() {
                out[i] = u[0] * v[i] + v[0] * u[i];
            }
            out
        }
    }
}

/// Solve `lambda o u = v` for `u`.
fn jordan_solve(cone: Cone, lambda: &[f64], v: &[f64]) -> Vec<f64> {
    match cone {
        Cone::NonNegative(_) => lambda.iter().zip(v).map(|(l, b)| b / l).collect(),
        Cone::SecondOrder(_) => {
            let nu = lambda[0] * lambda[0] - dot(&lambda[1..], &lambda[1..]);
            let u0 = (lambda[0] * v[0] - dot(&lambda[1..], &v[1..])) / nu;
            let mut out = vec![0.0; v.len()];
            out[0] = u0;
            for i in 1..v.len() {
                out[i] = (v[i] - u0 * lambda[i]) / lambda[0];
            }
            out
        }
    }
}

/// Identity element of a cone block.
fn cone_identity(cone: Cone) -> Vec<f64> {
    match cone {
        Cone::NonNegative(d) => vec![1.0; d],
        Cone::SecondOrder(d) => {
            let mut e = vec![0.0; d];
            e[0] = 1.0;
            e
        }
    }
}

/// Largest `alpha >= 0` with `p + alpha d` still in the cone (capped).
fn step_to_boundary(cone: Cone, p: &[f64], d: &[f64], cap: f64) -> f64 {
    match cone {
        Cone::NonNegative(_) => {
            let mut alpha = cap;
            for (&pi, &di) in p.iter().zip(d) {
                if di < 0.0 {
                    alpha = alpha.min(-pi / di);
                }
            }
            alpha
        }
        Cone::SecondOrder(_) => {
            let c0 = soc_residual(p);
            let b0 = p[0] * d[0] - dot(&p[1..], &d[1..]);
            let a0 = soc_residual(d);
            let mut alpha = cap;
            if d[0] < 0.0 {
                alpha = alpha.min(-p[0] / d[0]);
            }
            let disc = b0 * b0 - a0 * c0;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                if a0 < 0.0 {
                    alpha = alpha.min((-b0 - sq) / a0);
                } else if b0 < 0.0 {
                    if a0 > 0.0 {
                        alpha = alpha.min((-b0 - sq) / a0);
                    } else {
                        // a0 == 0: linear crossing at -c0 / (2 b0)
                        alpha = alpha.min(-c0 / (2.0 * b0));
                    }
                }
            }
            alpha.max(0.0)
        }
    }
}

struct BlockLayout {
    cones: Vec<Cone>,
    offsets: Vec<usize>,
}

impl BlockLayout {
    fn new(cones: &[Cone]) -> Self {
        let mut offsets = Vec::with_capacity(cones.len());
        let mut off = 0;
        for c in cones {
            offsets.push(off);
            off += c.dim();
        }
        BlockLayout { cones: cones.to_vec(), offsets }
    }

    fn blocks(&self) -> impl Iterator<Item = (Cone, usize, usize)> + '_ {
        self.cones.iter().zip(&self.offsets).map(|(&c, &o)| (c, o, o + c.dim()))
    }

    fn barrier_degree(&self) -> usize {
        self.cones
            .iter()
            .map(|c| match c {
                Cone::NonNegative(d) => *d,
                Cone::SecondOrder(_) => 1,
            })
            .sum()
    }
}

struct NormalSolver {
    factor: Mat,
    normal: SymMatrix,
}

impl NormalSolver {
    /// Assemble and factor `A^T W^-2 A`.
    ///
    /// Nonnegative rows contribute diagonal-weighted outer products of sparse
    /// rows. A second-order block contributes
    /// `eta^-2 (2 g g^T - a_0 a_0^T + sum_j a_j a_j^T)` with `g = A_bl^T J wbar`,
    /// which keeps the assembly quadratic in the block's row sparsity plus one
    /// dense rank-one term.
    fn build(prog: &ConeProgram, layout: &BlockLayout, scalings: &[Scaling]) -> Option<NormalSolver> {
        let n = prog.n_vars();
        let mut m = SymMatrix::zeros(n);
        for ((cone, lo, _hi), scaling) in layout.blocks().zip(scalings) {
            match scaling {
                Scaling::NonNeg { w, .. } => {
                    for (r, wi) in w.iter().enumerate() {
                        let weight = 1.0 / (wi * wi);
                        rank1_sparse(&mut m, prog.a.row(lo + r), weight);
                    }
                }
                Scaling::Soc { eta, wbar, .. } => {
                    let inv_eta2 = 1.0 / (eta * eta);
                    let dim = cone.dim();
                    // g = A_bl^T (J wbar)
                    let mut g = vec![0.0; n];
                    for r in 0..dim {
                        let coef = if r == 0 { wbar[0] } else { -wbar[r] };
                        for &(c, v) in prog.a.row(lo + r) {
                            g[c as usize] += coef * v;
                        }
                    }
                    rank1_dense(&mut m, &g, 2.0 * inv_eta2);
                    rank1_sparse(&mut m, prog.a.row(lo), -inv_eta2);
                    for r in 1..dim {
                        rank1_sparse(&mut m, prog.a.row(lo + r), inv_eta2);
                    }
                }
            }
        }
        // Deterministic regularization ladder on factorization failure.
        let diag_max = (0..n).map(|i| m.get(i, i)).fold(0.0f64, f64::max).max(1.0);
        let mut reg = 0.0;
        loop {
            let mut shifted = m.clone();
            if reg > 0.0 {
                for i in 0..n {
                    shifted.set(i, i, shifted.get(i, i) + reg);
                }
            }
            if let Some(factor) = cholesky(&shifted, 0.0) {
                return Some(NormalSolver { factor, normal: m });
            }
            reg = if reg == 0.0 { 1e-14 * diag_max } else { reg * 100.0 };
            if reg > 1e-4 * diag_max {
                return None;
            }
        }
    }

    /// Solve the 2x2 saddle system `A^T dz = r1`, `A dx - W^2 dz = r2`.
    ///
    /// The condensed normal-equations solve squares the conditioning, which
    /// bites once the complementarity drops toward 1e-12; two rounds of
    /// refinement against the uncondensed saddle system claw the accuracy
    /// back.
    fn solve_kkt(
        &self,
        prog: &ConeProgram,
        layout: &BlockLayout,
        scalings: &[Scaling],
        r1: &[f64],
        r2: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let residual = |dx: &[f64], dz: &[f64]| -> (Vec<f64>, Vec<f64>, f64) {
            let mut e1 = r1.to_vec();
            let atdz = prog.a.t_matvec(dz);
            axpy(-1.0, &atdz, &mut e1);
            let mut e2 = r2.to_vec();
            let adx = prog.a.matvec(dx);
            axpy(-1.0, &adx, &mut e2);
            let w2dz = apply_blockwise(layout, scalings, dz, Scaling::apply_w2);
            axpy(1.0, &w2dz, &mut e2);
            let norm = norm2(&e1).hypot(norm2(&e2));
            (e1, e2, norm)
        };
        let (mut dx, mut dz) = self.solve_raw(prog, layout, scalings, r1, r2);
        let (mut e1, mut e2, mut best) = residual(&dx, &dz);
        for _ in 0..3 {
            let (cx, cz) = self.solve_raw(prog, layout, scalings, &e1, &e2);
            let mut nx = dx.clone();
            axpy(1.0, &cx, &mut nx);
            let mut nz = dz.clone();
            axpy(1.0, &cz, &mut nz);
            let (n1, n2, norm) = residual(&nx, &nz);
            if norm >= best {
                break;
            }
            dx = nx;
            dz = nz;
            e1 = n1;
            e2 = n2;
            best = norm;
        }
        (dx, dz)
    }

    fn solve_raw(
        &self,
        prog: &ConeProgram,
        layout: &BlockLayout,
        scalings: &[Scaling],
        r1: &[f64],
        r2: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let w2inv_r2 = apply_blockwise(layout, scalings, r2, Scaling::apply_w2_inv);
        let mut rhs = prog.a.t_matvec(&w2inv_r2);
        axpy(1.0, r1, &mut rhs);
        let mut dx = cholesky_solve(&self.factor, &rhs);
        // One round against the unregularized normal matrix.
        let mut res = rhs.clone();
        let mdx = self.normal.matvec(&dx);
        axpy(-1.0, &mdx, &mut res);
        let corr = cholesky_solve(&self.factor, &res);
        axpy(1.0, &corr, &mut dx);
        // dz = W^-2 (A dx - r2)
        let mut adx = prog.a.matvec(&dx);
        axpy(-1.0, r2, &mut adx);
        let dz = apply_blockwise(layout, scalings, &adx, Scaling::apply_w2_inv);
        (dx, dz)
    }
}

fn rank1_sparse(m: &mut SymMatrix, row: &[(u32, f64)], scale: f64) {
    if scale == 0.0 {
        return;
    }
    for (ai, &(ci, vi)) in row.iter().enumerate() {
        for &(cj, vj) in &row[..=ai] {
            let add = scale * vi * vj;
            let (i, j) = (ci as usize, cj as usize);
            m.set(i.max(j), i.min(j), m.get(i, j) + add);
        }
    }
}

fn rank1_dense(m: &mut SymMatrix, v: &[f64], scale: f64) {
    for i in 0..v.len() {
        if v[i] == 0.0 {
            continue;
        }
        let vi = scale * v[i];
        for j in 0..=i {
            if v[j] != 0.0 {
                m.set(i, j, m.get(i, j) + vi * v[j]);
            }
        }
    }
}

fn apply_blockwise(
    layout: &BlockLayout,
    scalings: &[Scaling],
    v: &[f64],
    f: impl Fn(&Scaling, &[f64]) -> Vec<f64>,
) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for ((_, lo, hi), scaling) in layout.blocks().zip(scalings) {
        out[lo..hi].copy_from_slice(&f(scaling, &v[lo..hi]));
    }
    out
}

/// Solve a standard-form cone program.
pub fn solve(prog: &ConeProgram, opts: &SolverOptions) -> Result<ConeSolution, ProgramError> {
    prog.validate()?;
    let start = Instant::now();
    let layout = BlockLayout::new(&prog.cones);
    let n = prog.n_vars();
    let rows = prog.n_rows();
    let degree = layout.barrier_degree();

    let mut x = vec![0.0; n];
    let mut s: Vec<f64> = Vec::with_capacity(rows);
    for cone in &prog.cones {
        s.extend(cone_identity(*cone).iter().map(|v| v * opts.init_scale));
    }
    let mut z = s.clone();
    let mut tau = 1.0;
    let mut kappa = opts.init_scale;

    let norm_b = norm2(&prog.b);
    let norm_c = norm2(&prog.c);

    let finish = |status: SolveStatus,
                  x: &[f64],
                  z: &[f64],
                  s: &[f64],
                  tau: f64,
                  iterations: usize,
                  start: Instant| {
        let scale = if tau > 1e-300 { 1.0 / tau } else { 1.0 };
        let xs: Vec<f64> = x.iter().map(|v| v * scale).collect();
        let zs: Vec<f64> = z.iter().map(|v| v * scale).collect();
        let ss: Vec<f64> = s.iter().map(|v| v * scale).collect();
        let pobj = dot(&prog.c, &xs);
        let dobj = -dot(&prog.b, &zs);
        let mut pres = prog.a.matvec(&xs);
        axpy(1.0, &ss, &mut pres);
        axpy(-1.0, &prog.b, &mut pres);
        let mut dres = prog.a.t_matvec(&zs);
        axpy(1.0, &prog.c, &mut dres);
        ConeSolution {
            status,
            primal: xs,
            dual: zs,
            slack: ss,
            objective: pobj,
            duality_gap: (pobj - dobj).abs(),
            primal_residual: norm2(&pres),
            dual_residual: norm2(&dres),
            iterations,
            wall_time_s: start.elapsed().as_secs_f64(),
        }
    };

    // A contract-satisfying iterate, kept while pushing toward the tighter
    // internal target; tightening sharpens the primal point (the contract gap
    // bound only pins it to the square root of the gap).
    let mut saved: Option<(Vec<f64>, Vec<f64>, Vec<f64>, f64, usize)> = None;
    let mut extra_iters = 0usize;

    for iter in 0..opts.max_iters {
        // Residuals of the self-dual embedding.
        let mut rho_d = prog.a.t_matvec(&z);
        axpy(tau, &prog.c, &mut rho_d);
        let mut rho_p = prog.a.matvec(&x);
        axpy(1.0, &s, &mut rho_p);
        axpy(-tau, &prog.b, &mut rho_p);
        let rho_g = dot(&prog.c, &x) + dot(&prog.b, &z) + kappa;

        if !(rho_g.is_finite() && tau.is_finite() && kappa.is_finite()) {
            if let Some((x, z, s, tau, it)) = saved {
                return Ok(finish(SolveStatus::Optimal, &x, &z, &s, tau, it, start));
            }
            return Ok(finish(SolveStatus::NumericalFailure, &x, &z, &s, tau, iter, start));
        }

        // Optimality of the unscaled point.
        if tau > 1e-300 {
            let inv_tau = 1.0 / tau;
            let pres = norm2(&rho_p) * inv_tau;
            let dres = norm2(&rho_d) * inv_tau;
            let pobj = dot(&prog.c, &x) * inv_tau;
            let dobj = -dot(&prog.b, &z) * inv_tau;
            let gap = (pobj - dobj).abs().min(dot(&s, &z) * inv_tau * inv_tau);
            let meets = |scale: f64| {
                pres <= scale * opts.tol_feas * (1.0 + norm_b)
                    && dres <= scale * opts.tol_feas * (1.0 + norm_c)
                    && gap <= scale * opts.tol_gap * (1.0 + pobj.abs())
            };
            if meets(1e-3) {
                return Ok(finish(SolveStatus::Optimal, &x, &z, &s, tau, iter, start));
            }
            if meets(1.0) {
                saved = Some((x.clone(), z.clone(), s.clone(), tau, iter));
                extra_iters += 1;
                if extra_iters > 20 {
                    return Ok(finish(SolveStatus::Optimal, &x, &z, &s, tau, iter, start));
                }
            }
        }

        // Primal infeasibility: an improving dual ray z with A^T z ~ 0, b^T z < 0.
        let bz = dot(&prog.b, &z);
        if bz < -1e-12 {
            let zc: Vec<f64> = z.iter().map(|v| v / -bz).collect();
            let ray_res = norm2(&prog.a.t_matvec(&zc));
            if ray_res <= opts.tol_infeas * (1.0 + norm_c) {
                let mut sol = finish(SolveStatus::Infeasible, &x, &z, &s, 1.0, iter, start);
                sol.dual = zc;
                return Ok(sol);
            }
        }

        // Dual infeasibility (primal unboundedness): x with A x + s ~ 0, c^T x < 0.
        let cx = dot(&prog.c, &x);
        if cx < -1e-12 {
            let inv = 1.0 / -cx;
            let mut ray = prog.a.matvec(&x);
            axpy(1.0, &s, &mut ray);
            let ray_res = norm2(&ray) * inv;
            if ray_res <= opts.tol_infeas * (1.0 + norm_b) {
                let mut sol = finish(SolveStatus::Unbounded, &x, &z, &s, 1.0, iter, start);
                sol.primal = x.iter().map(|v| v * inv).collect();
                return Ok(sol);
            }
        }

        let mu = (dot(&s, &z) + tau * kappa) / (degree + 1) as f64;

        let scalings: Option<Vec<Scaling>> = layout
            .blocks()
            .map(|(cone, lo, hi)| Scaling::compute(cone, &s[lo..hi], &z[lo..hi]))
            .collect();
        let Some(scalings) = scalings else {
            if let Some((x, z, s, tau, it)) = saved {
                return Ok(finish(SolveStatus::Optimal, &x, &z, &s, tau, it, start));
            }
            return Ok(finish(SolveStatus::NumericalFailure, &x, &z, &s, tau, iter, start));
        };

        let Some(normal) = NormalSolver::build(prog, &layout, &scalings) else {
            if let Some((x, z, s, tau, it)) = saved {
                return Ok(finish(SolveStatus::Optimal, &x, &z, &s, tau, it, start));
            }
            return Ok(finish(SolveStatus::NumericalFailure, &x, &z, &s, tau, iter, start));
        };

        // Base direction for the tau elimination, shared by both passes.
        let neg_c: Vec<f64> = prog.c.iter().map(|v| -v).collect();
        let (x2, z2) = normal.solve_kkt(prog, &layout, &scalings, &neg_c, &prog.b);
        let denom = dot(&prog.c, &x2) + dot(&prog.b, &z2) - kappa / tau;

        // Recover ds and dkappa from the exact linear rows rather than the
        // scaled complementarity identities: any solve error then lands in
        // the complementarity row, whose right-hand side is a heuristic
        // target anyway, instead of corrupting feasibility progress.
        let solve_direction = |sigma: f64,
                               dtilde: &[f64],
                               rhs_kappa: f64|
         -> (Vec<f64>, Vec<f64>, Vec<f64>, f64, f64) {
            let one_minus = 1.0 - sigma;
            let r1: Vec<f64> = rho_d.iter().map(|v| -one_minus * v).collect();
            let w_dtilde = apply_blockwise(&layout, &scalings, dtilde, Scaling::apply_w);
            let mut r2: Vec<f64> = rho_p.iter().map(|v| -one_minus * v).collect();
            axpy(-1.0, &w_dtilde, &mut r2);
            let (x1, z1) = normal.solve_kkt(prog, &layout, &scalings, &r1, &r2);
            let dtau = (-one_minus * rho_g - rhs_kappa / tau - dot(&prog.c, &x1) - dot(&prog.b, &z1))
                / denom;
            let mut dx = x1;
            axpy(dtau, &x2, &mut dx);
            let mut dz = z1;
            axpy(dtau, &z2, &mut dz);
            // ds := -(1-sigma) rho_p + b dtau - A dx  (primal row, exact)
            let mut ds: Vec<f64> = rho_p.iter().map(|v| -one_minus * v).collect();
            axpy(dtau, &prog.b, &mut ds);
            let adx = prog.a.matvec(&dx);
            axpy(-1.0, &adx, &mut ds);
            // dkappa := -(1-sigma) rho_g - c^T dx - b^T dz  (gap row, exact)
            let dkappa = -one_minus * rho_g - dot(&prog.c, &dx) - dot(&prog.b, &dz);
            (dx, dz, ds, dtau, dkappa)
        };

        // Affine (predictor) direction: dtilde = -lambda, rhs_kappa = -tau*kappa.
        let lambda_all: Vec<f64> = {
            let mut l = vec![0.0; rows];
            for ((_, lo, hi), sc) in layout.blocks().zip(&scalings) {
                l[lo..hi].copy_from_slice(sc.lambda());
            }
            l
        };
        let neg_lambda: Vec<f64> = lambda_all.iter().map(|v| -v).collect();
        let (_dx_a, dz_a, ds_a, dtau_a, dkappa_a) =
            solve_direction(0.0, &neg_lambda, -tau * kappa);

        let step_all = |s: &[f64], ds: &[f64], z: &[f64], dz: &[f64], dtau: f64, dkappa: f64| {
            let mut alpha: f64 = 1.0;
            for (cone, lo, hi) in layout.blocks() {
                alpha = alpha.min(step_to_boundary(cone, &s[lo..hi], &ds[lo..hi], alpha));
                alpha = alpha.min(step_to_boundary(cone, &z[lo..hi], &dz[lo..hi], alpha));
            }
            if dtau < 0.0 {
                alpha = alpha.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                alpha = alpha.min(-kappa / dkappa);
            }
            alpha
        };

        let alpha_aff = step_all(&s, &ds_a, &z, &dz_a, dtau_a, dkappa_a);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(1e-8, 0.999_999);

        // Combined corrector: rhs4 = sigma*mu*e - lambda o lambda - (W^-1 ds_a) o (W dz_a).
        let mut rhs4 = vec![0.0; rows];
        for ((cone, lo, hi), sc) in layout.blocks().zip(&scalings) {
            let lam = sc.lambda();
            let ll = jordan_prod(cone, lam, lam);
            let wi_ds = sc.apply_w_inv(&ds_a[lo..hi]);
            let w_dz = sc.apply_w(&dz_a[lo..hi]);
            let corr = jordan_prod(cone, &wi_ds, &w_dz);
            let e = cone_identity(cone);
            for (idx, r) in (lo..hi).enumerate() {
                rhs4[r] = sigma * mu * e[idx] - ll[idx] - corr[idx];
            }
        }
        let dtilde: Vec<f64> = {
            let mut d = vec![0.0; rows];
            for ((cone, lo, hi), sc) in layout.blocks().zip(&scalings) {
                d[lo..hi].copy_from_slice(&jordan_solve(cone, sc.lambda(), &rhs4[lo..hi]));
            }
            d
        };
        let rhs_kappa = sigma * mu - tau * kappa - dtau_a * dkappa_a;
        let (dx, dz, ds, dtau, dkappa) = solve_direction(sigma, &dtilde, rhs_kappa);

        let alpha = opts.step_frac * step_all(&s, &ds, &z, &dz, dtau, dkappa);
        let alpha = alpha.min(1.0);
        if opts.verbose {
            // direction consistency: A dx + ds - b dtau should equal -(1-sigma) rho_p
            let mut pred = prog.a.matvec(&dx);
            axpy(1.0, &ds, &mut pred);
            axpy(-dtau, &prog.b, &mut pred);
            let mut err = pred.clone();
            axpy(1.0 - sigma, &rho_p, &mut err);
            let mut predd = prog.a.t_matvec(&dz);
            axpy(dtau, &prog.c, &mut predd);
            axpy(1.0 - sigma, &rho_d, &mut predd);
            eprintln!(
                "iter {iter:3} tau {tau:9.2e} kappa {kappa:9.2e} mu {mu:9.2e} |rp| {:9.2e} |rd| {:9.2e} rg {rho_g:9.2e} a_aff {alpha_aff:6.3} sigma {sigma:6.3} a {alpha:6.3} dir_p {:9.2e} dir_d {:9.2e}",
                norm2(&rho_p), norm2(&rho_d), norm2(&err), norm2(&predd)
            );
        }
        if !alpha.is_finite() || alpha <= 1e-14 {
            if let Some((x, z, s, tau, it)) = saved {
                return Ok(finish(SolveStatus::Optimal, &x, &z, &s, tau, it, start));
            }
            return Ok(finish(SolveStatus::NumericalFailure, &x, &z, &s, tau, iter, start));
        }

        axpy(alpha, &dx, &mut x);
        axpy(alpha, &dz, &mut z);
        axpy(alpha, &ds, &mut s);
        tau += alpha * dtau;
        kappa += alpha * dkappa;

        // The embedding is positively homogeneous: renormalize so tau + kappa
        // stays at its initial scale. This keeps iterate magnitudes bounded
        // on problems whose optimal face is unbounded.
        let total = tau + kappa;
        if total.is_finite() && total > 0.0 {
            let scale = (1.0 + opts.init_scale.max(1e-8)) / total;
            if !(0.5..=2.0).contains(&scale) {
                for v in x.iter_mut().chain(z.iter_mut()).chain(s.iter_mut()) {
                    *v *= scale;
                }
                tau *= scale;
                kappa *= scale;
            }
        }
    }

    if let Some((x, z, s, tau, it)) = saved {
        return Ok(finish(SolveStatus::Optimal, &x, &z, &s, tau, it, start));
    }
    Ok(finish(SolveStatus::MaxIters, &x, &z, &s, tau, opts.max_iters, start))
}

/// Per-cone-block complementarity `<s_bl, z_bl>` of a solution, for KKT checks.
pub fn block_complementarity(prog: &ConeProgram, sol: &ConeSolution) -> Vec<f64> {
    let layout = BlockLayout::new(&prog.cones);
    layout
        .blocks()
        .map(|(_, lo, hi)| dot(&sol.slack[lo..hi], &sol.dual[lo..hi]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::socp::program::ProgramBuilder;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn one_dimensional_lp() {
        // min -x s.t. x <= 1
        let mut pb = ProgramBuilder::new(1);
        pb.set_objective(0, -1.0);
        pb.nonneg_row(&[(0, 1.0)], 1.0);
        let sol = solve(&pb.finish(), &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal[0] - 1.0).abs() < 1e-7);
        assert!((sol.objective + 1.0).abs() < 1e-7);
    }

    #[test]
    fn fixed_cone_projection() {
        // min t s.t. ||(3, 4)|| <= t
        let mut pb = ProgramBuilder::new(1);
        pb.set_objective(0, 1.0);
        pb.soc_block(vec![
            (vec![(0, -1.0)], 0.0),
            (vec![], 3.0),
            (vec![], 4.0),
        ]);
        let sol = solve(&pb.finish(), &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal[0] - 5.0).abs() < 1e-6, "t = {}", sol.primal[0]);
    }

    #[test]
    fn empty_polytope_is_infeasible_with_certificate() {
        // x <= -1 and x >= 0
        let mut pb = ProgramBuilder::new(1);
        pb.nonneg_row(&[(0, 1.0)], -1.0);
        pb.nonneg_row(&[(0, -1.0)], 0.0);
        let prog = pb.finish();
        let sol = solve(&prog, &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        // Certificate: z in K*, A^T z ~ 0, b^T z = -1.
        let z = &sol.dual;
        assert!(z.iter().all(|&v| v >= -1e-12));
        let atz = prog.a.t_matvec(z);
        assert!(norm2(&atz) <= 1e-7, "ray residual {}", norm2(&atz));
        let bz = dot(&prog.b, z);
        assert!((bz + 1.0).abs() < 1e-9);
    }

    #[test]
    fn unbounded_direction_detected() {
        // min -x, x >= 0 (no upper bound)
        let mut pb = ProgramBuilder::new(1);
        pb.set_objective(0, -1.0);
        pb.nonneg_row(&[(0, -1.0)], 0.0);
        let sol = solve(&pb.finish(), &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn quadratic_projection_via_epigraph() {
        // min ||u - 3||^2 s.t. u <= 1  ->  u = 1, objective 4.
        let mut pb = ProgramBuilder::new(2);
        pb.set_objective(1, 1.0);
        pb.nonneg_row(&[(0, 1.0)], 1.0);
        pb.soc_block(vec![
            (vec![(1, -1.0)], 1.0),
            (vec![(0, -2.0)], -6.0),
            (vec![(1, -1.0)], -1.0),
        ]);
        let sol = solve(&pb.finish(), &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal[0] - 1.0).abs() < 1e-6);
        assert!((sol.primal[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn optimal_meets_contract_tolerances() {
        let mut pb = ProgramBuilder::new(2);
        pb.set_objective(1, 1.0);
        pb.nonneg_row(&[(0, 1.0)], 1.0);
        pb.soc_block(vec![
            (vec![(1, -1.0)], 1.0),
            (vec![(0, -2.0)], -6.0),
            (vec![(1, -1.0)], -1.0),
        ]);
        let prog = pb.finish();
        let sol = solve(&prog, &opts()).unwrap();
        assert!(sol.primal_residual <= 1e-8 * (1.0 + norm2(&prog.b)));
        assert!(sol.dual_residual <= 1e-8 * (1.0 + norm2(&prog.c)));
        assert!(sol.duality_gap <= 1e-8 * (1.0 + sol.objective.abs()));
        for c in block_complementarity(&prog, &sol) {
            assert!(c.abs() <= 1e-7, "block complementarity {c}");
        }
    }

    #[test]
    fn deterministic_iterates() {
        let mut pb = ProgramBuilder::new(2);
        pb.set_objective(1, 1.0);
        pb.nonneg_row(&[(0, 1.0), (1, 0.5)], 1.0);
        pb.soc_block(vec![
            (vec![(1, -1.0)], 1.0),
            (vec![(0, -2.0)], -6.0),
            (vec![(1, -1.0)], -1.0),
        ]);
        let prog = pb.finish();
        let a = solve(&prog, &opts()).unwrap();
        let b = solve(&prog, &opts()).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert!(a.primal.iter().zip(&b.primal).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn starting_point_does_not_move_optimum() {
        let mut pb = ProgramBuilder::new(2);
        pb.set_objective(1, 1.0);
        pb.nonneg_row(&[(0, 1.0)], 0.25);
        pb.soc_block(vec![
            (vec![(1, -1.0)], 1.0),
            (vec![(0, -2.0)], -4.0),
            (vec![(1, -1.0)], -1.0),
        ]);
        let prog = pb.finish();
        let a = solve(&prog, &opts()).unwrap();
        let b = solve(&prog, &SolverOptions { init_scale: 3.0, ..opts() }).unwrap();
        assert_eq!(a.status, SolveStatus::Optimal);
        assert_eq!(b.status, SolveStatus::Optimal);
        assert!((a.primal[0] - b.primal[0]).abs() < 1e-7);
    }

    #[test]
    fn rejects_malformed_program() {
        let mut pb = ProgramBuilder::new(1);
        pb.nonneg_row(&[(0, 1.0)], 1.0);
        let mut prog = pb.finish();
        prog.cones.push(Cone::SecondOrder(2));
        assert!(solve(&prog, &opts()).is_err());
    }
}
