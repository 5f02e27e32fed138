//! Distributionally robust machinery: empirical CVaR, the Wasserstein radius
//! schedule, and reduction of the robust synthesis problem to second-order
//! cone constraints.
//!
//! Everything here works with the order-1 Wasserstein distance on
//! distributions supported on all of `R^k`; under that choice the sup over
//! the ambiguity ball collapses to the norm term `r ||R^T u||` and the CVaR
//! over the empirical distribution collapses (for risk level `eps <= 1/N`) to
//! a max over samples.

use std::io::BufRead;
use std::sync::Arc;

use thiserror::Error;

use crate::model::{
    assemble_constraint, CertificateFunction, ConstraintData, ExtControl, ModelError,
    UncertainAffineModel,
};
use crate::numerics::{dot, norm2, Mat};
use crate::socp::{ConeProgram, ProgramBuilder};

#[derive(Debug, Error)]
pub enum DroError {
    #[error("empty input")]
    EmptyInput,
    #[error("risk level eps must lie in (0, 1], got {0}")]
    InvalidRisk(f64),
    #[error("invalid ambiguity configuration: {0}")]
    InvalidConfig(String),
    #[error("eps = {eps} exceeds 1/N = {}", 1.0 / (*n as f64))]
    EpsTooLarge { eps: f64, n: usize },
    #[error("inconsistent problem data: {0}")]
    Inconsistent(String),
    #[error("sample CSV error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Empirical uncertainty samples `xi_i in R^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    k: usize,
    samples: Vec<Vec<f64>>,
}

impl SampleSet {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self, DroError> {
        let first = samples.first().ok_or(DroError::EmptyInput)?;
        let k = first.len();
        if k == 0 {
            return Err(DroError::Inconsistent("samples must have k >= 1 columns".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.len() != k {
                return Err(DroError::Inconsistent(format!(
                    "sample {i} has {} entries, expected {k}",
                    s.len()
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(DroError::Inconsistent(format!("sample {i} is not finite")));
            }
        }
        Ok(SampleSet { k, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // N >= 1 by construction
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.iter().map(|s| s.as_slice())
    }

    /// A new set with `more` appended; sample sets themselves are immutable.
    pub fn appended(&self, more: &[Vec<f64>]) -> Result<SampleSet, DroError> {
        let mut all = self.samples.clone();
        all.extend_from_slice(more);
        SampleSet::new(all)
    }

    pub fn max_norm(&self) -> f64 {
        self.samples.iter().map(|s| norm2(s)).fold(0.0, f64::max)
    }

    /// Parse from CSV text: one row per sample, `k` comma-separated columns.
    pub fn from_csv(reader: impl BufRead) -> Result<SampleSet, DroError> {
        let mut samples = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| DroError::Csv { line: idx + 1, msg: e.to_string() })?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> = trimmed
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map_err(|_| DroError::Csv {
                        line: idx + 1,
                        msg: format!("bad float '{}'", tok.trim()),
                    })
                })
                .collect();
            samples.push(row?);
        }
        SampleSet::new(samples)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

/// Wasserstein ambiguity parameters: ball radius `r`, risk level `eps`,
/// confidence `eps_bar`, and the tail constants of the radius schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbiguityConfig {
    pub r: f64,
    pub eps: f64,
    pub eps_bar: f64,
    pub c1: f64,
    pub c2: f64,
    pub a: f64,
    pub k: usize,
}

impl AmbiguityConfig {
    /// Defaults for the tail constants are placeholders, not calibrated
    /// values; they depend on the (unknown) distribution class and are
    /// exposed so callers can override them.
    pub fn new(r: f64, eps: f64, eps_bar: f64, k: usize) -> Result<Self, DroError> {
        let cfg = AmbiguityConfig { r, eps, eps_bar, c1: 2.0, c2: 1.0, a: 2.0, k };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_tail_constants(mut self, c1: f64, c2: f64, a: f64) -> Result<Self, DroError> {
        self.c1 = c1;
        self.c2 = c2;
        self.a = a;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), DroError> {
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(DroError::InvalidConfig(format!("radius r = {} must be >= 0", self.r)));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(DroError::InvalidRisk(self.eps));
        }
        if !(self.eps_bar > 0.0 && self.eps_bar < 1.0) {
            return Err(DroError::InvalidConfig(format!(
                "confidence eps_bar = {} must lie in (0, 1)",
                self.eps_bar
            )));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.a > 0.0) {
            return Err(DroError::InvalidConfig("tail constants must be positive".into()));
        }
        if self.k == 0 {
            return Err(DroError::InvalidConfig("uncertainty dim k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Empirical CVaR at level `1 - eps`:
/// `inf_t [ mean((values_i + t)_+) / eps - t ]`.
///
/// The objective is piecewise linear in `t` with breakpoints at `-values_i`,
/// so the infimum is attained at one of them; evaluate all candidates on a
/// sorted copy and take the minimum.
pub fn cvar_empirical(values: &[f64], eps: f64) -> Result<f64, DroError> {
    if values.is_empty() {
        return Err(DroError::EmptyInput);
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(DroError::InvalidRisk(eps));
    }
    let n = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("non-finite value"));
    let mut best = f64::INFINITY;
    let mut prefix = 0.0;
    for (j, &vj) in sorted.iter().enumerate() {
        // t = -v_(j): only strictly larger values contribute to the positive part.
        let obj = (prefix - j as f64 * vj) / (n * eps) + vj;
        best = best.min(obj);
        prefix += vj;
    }
    Ok(best)
}

/// Wasserstein radius `r_N(eps_bar)` guaranteeing that the ambiguity ball
/// contains the true (light-tailed) distribution with probability at least
/// `1 - eps_bar`.
pub fn radius_schedule(n: usize, cfg: &AmbiguityConfig) -> Result<f64, DroError> {
    if n == 0 {
        return Err(DroError::EmptyInput);
    }
    let log_term = (cfg.c1 / cfg.eps_bar).ln();
    if log_term <= 0.0 {
        return Err(DroError::InvalidConfig(format!(
            "c1 = {} <= eps_bar = {} makes the log term non-positive",
            cfg.c1, cfg.eps_bar
        )));
    }
    let base = log_term / (cfg.c2 * n as f64);
    let exponent = if n as f64 >= log_term / cfg.c2 {
        1.0 / (cfg.k.max(2) as f64)
    } else {
        1.0 / cfg.a
    };
    Ok(base.powf(exponent))
}

/// One reduced second-order cone constraint
/// `||norm_coef * u|| + affine^T u <= 0` in the extended control.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    /// `r * R^T`, shape `k x (m+1)`.
    pub norm_coef: Mat,
    /// `eps * (q + R xi_i)`, length `m+1`.
    pub affine: Vec<f64>,
}

impl SocConstraint {
    /// Constraint value at `u`; feasible iff `<= 0`.
    pub fn margin(&self, u: &ExtControl) -> f64 {
        norm2(&self.norm_coef.matvec(u.as_slice())) + dot(&self.affine, u.as_slice())
    }

    /// Whether the norm term vanishes identically (emitted as a linear row).
    pub fn is_degenerate(&self) -> bool {
        self.norm_coef.frobenius() == 0.0
    }
}

/// A min-norm synthesis problem at one state: `M` constraint data pairs, the
/// nominal extended control to track, and the ambiguity description.
#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub constraints: Vec<ConstraintData>,
    pub nominal: ExtControl,
    pub ambiguity: AmbiguityConfig,
    pub samples: SampleSet,
}

impl SynthesisProblem {
    pub fn new(
        constraints: Vec<ConstraintData>,
        nominal: ExtControl,
        ambiguity: AmbiguityConfig,
        samples: SampleSet,
    ) -> Result<Self, DroError> {
        if constraints.is_empty() {
            return Err(DroError::Inconsistent("need at least one constraint".into()));
        }
        let m1 = nominal.dim_ext();
        for c in &constraints {
            if c.dim_ext() != m1 {
                return Err(DroError::Inconsistent(format!(
                    "constraint '{}' has extended dim {}, nominal has {}",
                    c.label,
                    c.dim_ext(),
                    m1
                )));
            }
            if c.uncertainty_dim() != samples.k() {
                return Err(DroError::Inconsistent(format!(
                    "constraint '{}' has k = {}, samples have k = {}",
                    c.label,
                    c.uncertainty_dim(),
                    samples.k()
                )));
            }
            if !c.is_finite() {
                return Err(DroError::Inconsistent(format!("constraint '{}' not finite", c.label)));
            }
        }
        if ambiguity.k != samples.k() {
            return Err(DroError::Inconsistent(format!(
                "ambiguity k = {} but samples have k = {}",
                ambiguity.k,
                samples.k()
            )));
        }
        ambiguity.validate()?;
        Ok(SynthesisProblem { constraints, nominal, ambiguity, samples })
    }

    /// Control dimension `m`.
    pub fn control_dim(&self) -> usize {
        self.nominal.dim_ext() - 1
    }

    pub fn uncertainty_dim(&self) -> usize {
        self.samples.k()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    /// All results assume `eps <= 1/N`; reject rather than silently clamp.
    pub fn check_eps(&self) -> Result<(), DroError> {
        let n = self.n_samples();
        if self.ambiguity.eps > 1.0 / n as f64 {
            return Err(DroError::EpsTooLarge { eps: self.ambiguity.eps, n });
        }
        Ok(())
    }

    /// The affine coefficient vector `eps * (q_l + R_l xi_i)`.
    fn affine_coef(&self, l: usize, i: usize) -> Vec<f64> {
        let c = &self.constraints[l];
        let eps = self.ambiguity.eps;
        let rxi = c.r.matvec(self.samples.sample(i));
        c.q.iter().zip(rxi).map(|(q, rx)| eps * (q + rx)).collect()
    }

    /// Per-sample second-order cone constraints for constraint `l`. Their
    /// conjunction over samples is equivalent to constraint `l` of the full
    /// epigraph program, because the norm and `q` terms do not depend on the
    /// sample index.
    pub fn reduce_to_soc(&self, l: usize) -> Result<Vec<SocConstraint>, DroError> {
        self.check_eps()?;
        let c = &self.constraints[l];
        let norm_coef = c.r.transpose().scale(self.ambiguity.r);
        Ok((0..self.n_samples())
            .map(|i| SocConstraint { norm_coef: norm_coef.clone(), affine: self.affine_coef(l, i) })
            .collect())
    }

    /// The epigraph-form cone program with variables `(u, y, t_l, s_{l,i})`:
    /// per-constraint cones `r ||R_l^T u|| <= t_l eps - mean_i(s_{l,i})`,
    /// linear rows `s_{l,i} >= G_l(x, u, xi_i) + t_l` and `s_{l,i} >= 0`, and
    /// the rotated-cone epigraph of the squared distance to the nominal
    /// control.
    ///
    /// The CVaR epigraph pair `(t, s)` is instantiated once per constraint:
    /// each CVaR constraint carries its own infimum over `t`, whose minimizer
    /// `t_l* = max_i G_l` differs across constraints, so sharing one `t`
    /// would strictly shrink the feasible set whenever `M > 1`.
    pub fn epigraph_program(&self) -> Result<ConeProgram, DroError> {
        self.check_eps()?;
        let m = self.control_dim();
        let n_samples = self.n_samples();
        let n_cons = self.n_constraints();
        let n_vars = m + 1 + n_cons * (1 + n_samples);
        let idx_y = m;
        let idx_t = |l: usize| m + 1 + l;
        let idx_s = |l: usize, i: usize| m + 1 + n_cons + l * n_samples + i;
        let mut pb = ProgramBuilder::new(n_vars);
        pb.set_objective(idx_y, 1.0);
        let eps = self.ambiguity.eps;
        let inv_n = 1.0 / n_samples as f64;
        for (l, c) in self.constraints.iter().enumerate() {
            let mut top: Vec<(usize, f64)> = vec![(idx_t(l), -eps)];
            for i in 0..n_samples {
                top.push((idx_s(l, i), inv_n));
            }
            let vec_rows = self.norm_rows(c, m);
            if vec_rows.is_empty() {
                pb.nonneg_row(&top, 0.0);
            } else {
                let mut rows = vec![(top, 0.0)];
                rows.extend(vec_rows);
                pb.soc_block(rows);
            }
        }
        for (l, c) in self.constraints.iter().enumerate() {
            for i in 0..n_samples {
                // s_{l,i} - t_l - G_l(x, u, xi_i) >= 0
                let rxi = c.r.matvec(self.samples.sample(i));
                let g: Vec<f64> = c.q.iter().zip(rxi).map(|(q, rx)| q + rx).collect();
                let mut row: Vec<(usize, f64)> = vec![(idx_t(l), 1.0), (idx_s(l, i), -1.0)];
                for c_idx in 0..m {
                    row.push((c_idx, g[c_idx + 1]));
                }
                pb.nonneg_row(&row, -g[0]);
            }
        }
        for l in 0..n_cons {
            for i in 0..n_samples {
                pb.nonneg_row(&[(idx_s(l, i), -1.0)], 0.0);
            }
        }
        // At eps == 1 exactly (hence N == 1) the block gains a recession ray
        // along (t_l, s_l) += (1, 1) that stalls interior-point iterates; the
        // valid pin s_l <= 0 removes the ray without shrinking the projection
        // of the feasible set onto (u, y).
        if eps == 1.0 {
            for l in 0..n_cons {
                for i in 0..n_samples {
                    pb.nonneg_row(&[(idx_s(l, i), 1.0)], 0.0);
                }
            }
        }
        self.push_distance_epigraph(&mut pb, m, idx_y);
        Ok(pb.finish())
    }

    /// Exact feasibility margins of a candidate control: the worst margin
    /// `r ||R_l^T u|| + eps u^T (q_l + R_l xi_i)` over all `(l, i)` pairs.
    /// Nonpositive means `u` satisfies every robust constraint.
    pub fn worst_margin(&self, u: &ExtControl) -> Result<f64, DroError> {
        self.check_eps()?;
        let mut worst = f64::NEG_INFINITY;
        for l in 0..self.n_constraints() {
            for soc in self.reduce_to_soc(l)? {
                worst = worst.max(soc.margin(u));
            }
        }
        Ok(worst)
    }

    /// The reduced-form cone program over `(u, y)` with one cone per
    /// `(l, i)` pair, optionally tightened by an additive margin on every
    /// synthesis constraint.
    pub fn reduced_program_with_margin(&self, margin: f64) -> Result<ConeProgram, DroError> {
        self.check_eps()?;
        let m = self.control_dim();
        let idx_y = m;
        let mut pb = ProgramBuilder::new(m + 1);
        pb.set_objective(idx_y, 1.0);
        for (l, c) in self.constraints.iter().enumerate() {
            let vec_rows = self.norm_rows(c, m);
            for i in 0..self.n_samples() {
                let aff = self.affine_coef(l, i);
                let top_entries: Vec<(usize, f64)> =
                    (0..m).map(|c_idx| (c_idx, aff[c_idx + 1])).collect();
                let top_b = -aff[0] - margin;
                if vec_rows.is_empty() {
                    pb.nonneg_row(&top_entries, top_b);
                } else {
                    let mut rows = vec![(top_entries, top_b)];
                    rows.extend(vec_rows.iter().cloned());
                    pb.soc_block(rows);
                }
            }
        }
        self.push_distance_epigraph(&mut pb, m, idx_y);
        Ok(pb.finish())
    }

    pub fn reduced_program(&self) -> Result<ConeProgram, DroError> {
        self.reduced_program_with_margin(0.0)
    }

    /// Rows encoding the vector part `r * R^T u` of a constraint's cone;
    /// empty when the scaled block vanishes identically (degenerate cone).
    fn norm_rows(&self, c: &ConstraintData, m: usize) -> Vec<(Vec<(usize, f64)>, f64)> {
        let r = self.ambiguity.r;
        let k = c.uncertainty_dim();
        if r == 0.0 || c.r.frobenius() == 0.0 {
            return Vec::new();
        }
        (0..k)
            .map(|j| {
                let entries: Vec<(usize, f64)> =
                    (0..m).map(|c_idx| (c_idx, -r * c.r[(c_idx + 1, j)])).collect();
                (entries, r * c.r[(0, j)])
            })
            .collect()
    }

    /// `y >= ||u - nominal||^2` as the standard second-order cone
    /// `y + 1 >= ||(2(u - nominal), y - 1)||`.
    fn push_distance_epigraph(&self, pb: &mut ProgramBuilder, m: usize, idx_y: usize) {
        let k_u = self.nominal.controls();
        let mut rows = vec![(vec![(idx_y, -1.0)], 1.0)];
        for c_idx in 0..m {
            rows.push((vec![(c_idx, -2.0)], -2.0 * k_u[c_idx]));
        }
        rows.push((vec![(idx_y, -1.0)], -1.0));
        pb.soc_block(rows);
    }
}

/// How one synthesis constraint is produced: fixed data, or re-assembled
/// from a certificate at each state.
#[derive(Clone)]
pub enum ConstraintSource {
    Fixed(ConstraintData),
    Certificate { model: UncertainAffineModel, certificate: CertificateFunction },
}

/// State-dependent nominal control law.
#[derive(Clone)]
pub enum NominalLaw {
    Constant(ExtControl),
    /// Unicycle go-to-goal: `v = k_v (cos th, sin th) . (goal - pos)`,
    /// `omega = k_omega * wrap(atan2(goal - pos) - th)`.
    GoToGoal { goal: [f64; 2], k_v: f64, k_omega: f64 },
    Custom(Arc<dyn Fn(&[f64]) -> ExtControl + Send + Sync>),
}

impl NominalLaw {
    pub fn eval(&self, x: &[f64]) -> ExtControl {
        match self {
            NominalLaw::Constant(u) => u.clone(),
            NominalLaw::GoToGoal { goal, k_v, k_omega } => {
                let dx = goal[0] - x[0];
                let dy = goal[1] - x[1];
                let th = x[2];
                let v = k_v * (th.cos() * dx + th.sin() * dy);
                let mut ang = dy.atan2(dx) - th;
                while ang > std::f64::consts::PI {
                    ang -= std::f64::consts::TAU;
                }
                while ang < -std::f64::consts::PI {
                    ang += std::f64::consts::TAU;
                }
                ExtControl::from_controls(&[v, k_omega * ang])
            }
            NominalLaw::Custom(f) => f(x),
        }
    }
}

impl std::fmt::Debug for NominalLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NominalLaw::Constant(u) => write!(f, "NominalLaw::Constant({:?})", u.as_slice()),
            NominalLaw::GoToGoal { goal, .. } => write!(f, "NominalLaw::GoToGoal({goal:?})"),
            NominalLaw::Custom(_) => write!(f, "NominalLaw::Custom"),
        }
    }
}

/// A state-parameterized family of synthesis problems; `at(x)` evaluates the
/// constraint sources and nominal law to produce the problem at one state.
#[derive(Clone)]
pub struct ProblemFamily {
    pub sources: Vec<ConstraintSource>,
    pub nominal: NominalLaw,
    pub ambiguity: AmbiguityConfig,
    pub samples: SampleSet,
}

impl ProblemFamily {
    pub fn at(&self, x: &[f64]) -> Result<SynthesisProblem, DroError> {
        let constraints: Result<Vec<ConstraintData>, DroError> = self
            .sources
            .iter()
            .map(|s| match s {
                ConstraintSource::Fixed(c) => Ok(c.clone()),
                ConstraintSource::Certificate { model, certificate } => {
                    Ok(assemble_constraint(model, certificate, x)?)
                }
            })
            .collect();
        SynthesisProblem::new(constraints?, self.nominal.eval(x), self.ambiguity, self.samples.clone())
    }

    /// Same family with a different sample set (and, when the radius shrinks
    /// with data, a different radius).
    pub fn with_samples(&self, samples: SampleSet, r: f64) -> ProblemFamily {
        let mut fam = self.clone();
        fam.ambiguity.r = r;
        fam.samples = samples;
        fam
    }
}
