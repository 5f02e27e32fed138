//! Uncertain control-affine system model and constraint assembly.
//!
//! The dynamics are `xdot = (F(x) + sum_j W_j(x) xi_j) u` with the extended
//! control `u = [1; controls]`, a known nominal field `F`, known perturbation
//! fields `W_j`, and unknown weights `xi`. Barrier and Lyapunov conditions on
//! such a system are affine in both the extended control and the uncertainty,
//! so each one reduces to a data pair `(q, R)` with
//! `G(x, u, xi) = u^T q(x) + u^T R(x) xi <= 0`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::numerics::{dot, Mat};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("extended control must start with 1, got {0}")]
    NotExtended(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Extended control vector `[1; u] in {1} x R^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtControl(Vec<f64>);

impl ExtControl {
    /// Wrap a raw vector; the first component must be exactly 1.
    pub fn new(v: Vec<f64>) -> Result<Self, ModelError> {
        match v.first() {
            Some(&1.0) => Ok(ExtControl(v)),
            Some(&other) => Err(ModelError::NotExtended(other)),
            None => Err(ModelError::DimensionMismatch { what: "ExtControl", expected: 1, got: 0 }),
        }
    }

    /// Prepend the fixed 1 to a plain control vector.
    pub fn from_controls(u: &[f64]) -> Self {
        let mut v = Vec::with_capacity(u.len() + 1);
        v.push(1.0);
        v.extend_from_slice(u);
        ExtControl(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// The plain control part (everything after the leading 1).
    pub fn controls(&self) -> &[f64] {
        &self.0[1..]
    }

    pub fn dim_ext(&self) -> usize {
        self.0.len()
    }
}

type Field = Arc<dyn Fn(&[f64]) -> Mat + Send + Sync>;

/// Nominal matrix field plus `k` perturbation fields, each `n x (m+1)`.
#[derive(Clone)]
pub struct UncertainAffineModel {
    n: usize,
    m: usize,
    k: usize,
    f: Field,
    w: Vec<Field>,
}

impl fmt::Debug for UncertainAffineModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UncertainAffineModel")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("k", &self.k)
            .finish()
    }
}

impl UncertainAffineModel {
    pub fn new(
        n: usize,
        m: usize,
        f: impl Fn(&[f64]) -> Mat + Send + Sync + 'static,
        w: Vec<Field>,
    ) -> Self {
        let k = w.len();
        UncertainAffineModel { n, m, k, f: Arc::new(f), w }
    }

    /// Model with state-independent `F` and `W_j`.
    pub fn constant(f: Mat, w: Vec<Mat>) -> Self {
        let n = f.rows();
        let m = f.cols() - 1;
        for wj in &w {
            assert_eq!((wj.rows(), wj.cols()), (n, m + 1), "perturbation shape mismatch");
        }
        let fields: Vec<Field> = w
            .into_iter()
            .map(|wj| {
                let wj = wj.clone();
                Arc::new(move |_x: &[f64]| wj.clone()) as Field
            })
            .collect();
        UncertainAffineModel { n, m, k: fields.len(), f: Arc::new(move |_| f.clone()), w: fields }
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn control_dim(&self) -> usize {
        self.m
    }

    pub fn uncertainty_dim(&self) -> usize {
        self.k
    }

    /// `F(x)`, an `n x (m+1)` matrix.
    pub fn nominal(&self, x: &[f64]) -> Mat {
        (self.f)(x)
    }

    /// `W_j(x)`, an `n x (m+1)` matrix.
    pub fn perturbation(&self, j: usize, x: &[f64]) -> Mat {
        (self.w[j])(x)
    }

    /// Effective dynamics matrix `F(x) + sum_j W_j(x) xi_j`.
    pub fn effective(&self, x: &[f64], xi: &[f64]) -> Mat {
        assert_eq!(xi.len(), self.k, "xi dim mismatch");
        let mut m = self.nominal(x);
        for (j, &xij) in xi.iter().enumerate() {
            let wj = self.perturbation(j, x);
            for i in 0..m.rows() {
                for c in 0..m.cols() {
                    m[(i, c)] += xij * wj[(i, c)];
                }
            }
        }
        m
    }

    /// `xdot` under extended control `u` and uncertainty `xi`.
    pub fn dynamics(&self, x: &[f64], u: &ExtControl, xi: &[f64]) -> Vec<f64> {
        self.effective(x, xi).matvec(u.as_slice())
    }
}

/// Off-axis unicycle with the three perturbation fields used by the
/// ground-robot experiments: drift, angular-velocity, and orientation
/// perturbations. State is `(x1, x2, theta)`, controls are `(v, omega)`.
pub fn unicycle_model(a: f64) -> UncertainAffineModel {
    assert!(a > 0.0, "off-axis distance must be positive");
    let f = move |x: &[f64]| {
        let th = x[2];
        Mat::from_rows(&[
            vec![0.0, th.cos(), -a * th.sin()],
            vec![0.0, th.sin(), a * th.cos()],
            vec![0.0, 0.0, 1.0],
        ])
    };
    let w1 = Arc::new(|_: &[f64]| {
        Mat::from_rows(&[
            vec![0.02, 0.0, 0.0],
            vec![0.02, 0.0, 0.0],
            vec![0.01, 0.0, 0.0],
        ])
    }) as Field;
    let w2 = Arc::new(|_: &[f64]| {
        Mat::from_rows(&[
            vec![0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0],
            vec![0.0, 0.0, -0.02],
        ])
    }) as Field;
    let w3 = Arc::new(move |x: &[f64]| {
        let th = x[2];
        Mat::from_rows(&[
            vec![0.0, 0.02 * th.cos(), -0.02 * a * th.sin()],
            vec![0.0, 0.02 * th.sin(), 0.02 * a * th.cos()],
            vec![0.0, 0.0, 0.0],
        ])
    }) as Field;
    UncertainAffineModel::new(3, 2, f, vec![w1, w2, w3])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateKind {
    Barrier,
    Lyapunov,
}

/// Class-K-infinity rate function.
#[derive(Clone)]
pub enum ClassK {
    Linear { gain: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl ClassK {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            ClassK::Linear { gain } => gain * s,
            ClassK::Custom(f) => f(s),
        }
    }
}

impl fmt::Debug for ClassK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassK::Linear { gain } => write!(f, "ClassK::Linear({gain})"),
            ClassK::Custom(_) => write!(f, "ClassK::Custom"),
        }
    }
}

type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A barrier function `h` (safe set `h >= 0`, enforce `hdot >= -alpha(h)`) or
/// a Lyapunov function `V` (enforce `Vdot <= -gamma(V)`), with its gradient
/// and class-K rate.
#[derive(Clone)]
pub struct CertificateFunction {
    pub kind: CertificateKind,
    value: ScalarField,
    gradient: VectorField,
    class_k: ClassK,
    label: String,
}

impl fmt::Debug for CertificateFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CertificateFunction({:?}, {})", self.kind, self.label)
    }
}

impl CertificateFunction {
    pub fn new(
        kind: CertificateKind,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        class_k: ClassK,
        label: impl Into<String>,
    ) -> Self {
        CertificateFunction {
            kind,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            class_k,
            label: label.into(),
        }
    }

    /// CLF `V(x) = ||pos - goal||^2` over the first two state components.
    pub fn quadratic_goal_clf(goal: [f64; 2], gain: f64) -> Self {
        let g = goal;
        CertificateFunction::new(
            CertificateKind::Lyapunov,
            move |x: &[f64]| (x[0] - g[0]).powi(2) + (x[1] - g[1]).powi(2),
            move |x: &[f64]| {
                let mut grad = vec![0.0; x.len()];
                grad[0] = 2.0 * (x[0] - g[0]);
                grad[1] = 2.0 * (x[1] - g[1]);
                grad
            },
            ClassK::Linear { gain },
            format!("clf-goal({},{})", goal[0], goal[1]),
        )
    }

    /// CBF `h(x) = ||pos - center||^2 - radius^2` keeping the robot outside a
    /// circular obstacle.
    pub fn circle_obstacle_cbf(center: [f64; 2], radius: f64, gain: f64) -> Self {
        let c = center;
        CertificateFunction::new(
            CertificateKind::Barrier,
            move |x: &[f64]| (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) - radius * radius,
            move |x: &[f64]| {
                let mut grad = vec![0.0; x.len()];
                grad[0] = 2.0 * (x[0] - c[0]);
                grad[1] = 2.0 * (x[1] - c[1]);
                grad
            },
            ClassK::Linear { gain },
            format!("cbf-circle({},{};r={})", center[0], center[1], radius),
        )
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }

    pub fn rate(&self, s: f64) -> f64 {
        self.class_k.eval(s)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Spot-check the declared invariants on a sample grid: `classK(0) == 0`,
    /// `classK` strictly increasing, and (for Lyapunov kind) positive
    /// definiteness of the value around the supplied reference point.
    pub fn validate_on_grid(&self, reference: &[f64], span: f64) -> Result<(), ModelError> {
        if self.class_k.eval(0.0) != 0.0 {
            return Err(ModelError::NonFinite("classK(0) must be 0"));
        }
        let mut prev = self.class_k.eval(0.0);
        for i in 1..=16 {
            let s = span * i as f64 / 16.0;
            let v = self.class_k.eval(s);
            if !(v > prev) {
                return Err(ModelError::NonFinite("classK must be strictly increasing"));
            }
            prev = v;
        }
        if self.kind == CertificateKind::Lyapunov {
            for i in 0..24 {
                let ang = std::f64::consts::TAU * i as f64 / 24.0;
                let mut x = reference.to_vec();
                x[0] += span * ang.cos();
                x[1] += span * ang.sin();
                if !(self.value(&x) > self.value(reference)) {
                    return Err(ModelError::NonFinite("Lyapunov value not positive definite"));
                }
            }
        }
        Ok(())
    }
}

/// The data pair `(q, R)` of one affine constraint
/// `G(x, u, xi) = u^T q + u^T R xi <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintData {
    /// Length `m + 1`.
    pub q: Vec<f64>,
    /// Shape `(m + 1) x k`.
    pub r: Mat,
    pub label: String,
}

impl ConstraintData {
    pub fn new(q: Vec<f64>, r: Mat, label: impl Into<String>) -> Self {
        assert_eq!(q.len(), r.rows(), "q and R row count must agree");
        ConstraintData { q, r, label: label.into() }
    }

    pub fn dim_ext(&self) -> usize {
        self.q.len()
    }

    pub fn uncertainty_dim(&self) -> usize {
        self.r.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite()) && self.r.is_finite()
    }
}

/// Evaluate `G = u^T q + u^T R xi`.
pub fn eval_g(c: &ConstraintData, u: &ExtControl, xi: &[f64]) -> Result<f64, ModelError> {
    if u.dim_ext() != c.q.len() {
        return Err(ModelError::DimensionMismatch {
            what: "eval_g control",
            expected: c.q.len(),
            got: u.dim_ext(),
        });
    }
    if xi.len() != c.r.cols() {
        return Err(ModelError::DimensionMismatch {
            what: "eval_g uncertainty",
            expected: c.r.cols(),
            got: xi.len(),
        });
    }
    Ok(dot(u.as_slice(), &c.q) + dot(u.as_slice(), &c.r.matvec(xi)))
}

/// Assemble the `(q, R)` data of a certificate condition at state `x`.
///
/// Both conditions are normalized to the `G <= 0` orientation:
///
/// * barrier: `hdot >= -alpha(h)` becomes `q = -(F^T grad_h + alpha(h) e1)`,
///   `R_col_j = -W_j^T grad_h`;
/// * Lyapunov: `Vdot <= -gamma(V)` becomes `q = F^T grad_V + gamma(V) e1`,
///   `R_col_j = W_j^T grad_V`.
///
/// The state-only rate term rides on the first component because the extended
/// control has a fixed leading 1.
pub fn assemble_constraint(
    model: &UncertainAffineModel,
    cert: &CertificateFunction,
    x: &[f64],
) -> Result<ConstraintData, ModelError> {
    let grad = cert.gradient(x);
    if grad.len() != model.state_dim() {
        return Err(ModelError::DimensionMismatch {
            what: "certificate gradient",
            expected: model.state_dim(),
            got: grad.len(),
        });
    }
    let sign = match cert.kind {
        CertificateKind::Barrier => -1.0,
        CertificateKind::Lyapunov => 1.0,
    };
    let rate = cert.rate(cert.value(x));
    let mut q = model.nominal(x).t_matvec(&grad);
    q[0] += rate;
    for v in q.iter_mut() {
        *v *= sign;
    }
    let m1 = model.control_dim() + 1;
    let k = model.uncertainty_dim();
    let mut r = Mat::zeros(m1, k);
    for j in 0..k {
        let col = model.perturbation(j, x).t_matvec(&grad);
        for i in 0..m1 {
            r[(i, j)] = sign * col[i];
        }
    }
    let data = ConstraintData::new(q, r, cert.label());
    if !data.is_finite() {
        return Err(ModelError::NonFinite("assembled constraint"));
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_model() -> UncertainAffineModel {
        // n = 2, m = 1, k = 1 with constant fields.
        let f = Mat::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]);
        let w1 = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        UncertainAffineModel::constant(f, vec![w1])
    }

    fn barrier_with_grad(grad: Vec<f64>, level: f64, gain: f64) -> CertificateFunction {
        CertificateFunction::new(
            CertificateKind::Barrier,
            move |_x: &[f64]| level,
            move |_x: &[f64]| grad.clone(),
            ClassK::Linear { gain },
            "test-cbf",
        )
    }

    #[test]
    fn assemble_barrier_hand_example() {
        // alpha(h(x0)) = 0.5, grad h = (1,1) against the constant toy model.
        let model = toy_model();
        let cert = barrier_with_grad(vec![1.0, 1.0], 0.5, 1.0);
        let c = assemble_constraint(&model, &cert, &[0.0, 0.0]).unwrap();
        assert_eq!(c.q, vec![-2.5, -3.0]);
        assert_eq!(c.r, Mat::from_rows(&[vec![-1.0], vec![0.0]]));
    }

    #[test]
    fn assemble_without_uncertainty_gives_zero_r() {
        let f = Mat::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]);
        let w1 = Mat::zeros(2, 2);
        let model = UncertainAffineModel::constant(f, vec![w1]);
        let cert = barrier_with_grad(vec![1.0, 1.0], 0.5, 1.0);
        let c = assemble_constraint(&model, &cert, &[0.0, 0.0]).unwrap();
        assert_eq!(c.r, Mat::zeros(2, 1));
    }

    #[test]
    fn assemble_lyapunov_at_equilibrium() {
        let model = toy_model();
        let cert = CertificateFunction::new(
            CertificateKind::Lyapunov,
            |_x: &[f64]| 0.0,
            |_x: &[f64]| vec![0.0, 0.0],
            ClassK::Linear { gain: 1.0 },
            "clf",
        );
        let c = assemble_constraint(&model, &cert, &[0.0, 0.0]).unwrap();
        assert_eq!(c.q, vec![0.0, 0.0]);
        assert_eq!(c.r, Mat::zeros(2, 1));
    }

    #[test]
    fn assemble_rejects_bad_gradient_dim() {
        let model = toy_model();
        let cert = barrier_with_grad(vec![1.0, 1.0, 1.0], 0.0, 1.0);
        assert!(matches!(
            assemble_constraint(&model, &cert, &[0.0, 0.0]),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn eval_g_trivial_cases() {
        let zero = ConstraintData::new(vec![0.0, 0.0], Mat::zeros(2, 1), "z");
        let u = ExtControl::from_controls(&[3.0]);
        assert_eq!(eval_g(&zero, &u, &[1.0]).unwrap(), 0.0);

        let lin = ConstraintData::new(vec![1.0, 2.0], Mat::zeros(2, 1), "lin");
        assert_eq!(eval_g(&lin, &u, &[0.0]).unwrap(), 7.0);
    }

    #[test]
    fn eval_g_hand_example() {
        let c = ConstraintData::new(
            vec![-2.5, -3.0],
            Mat::from_rows(&[vec![-1.0], vec![0.0]]),
            "hand",
        );
        let u = ExtControl::from_controls(&[1.0]);
        assert_eq!(eval_g(&c, &u, &[2.0]).unwrap(), -7.5);
    }

    #[test]
    fn eval_g_dimension_errors() {
        let c = ConstraintData::new(vec![1.0, 0.0], Mat::zeros(2, 1), "c");
        let u = ExtControl::from_controls(&[0.0, 0.0]);
        assert!(eval_g(&c, &u, &[0.0]).is_err());
        let u = ExtControl::from_controls(&[0.0]);
        assert!(eval_g(&c, &u, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn ext_control_invariant() {
        assert!(ExtControl::new(vec![1.0, 2.0]).is_ok());
        assert!(matches!(ExtControl::new(vec![0.5, 2.0]), Err(ModelError::NotExtended(_))));
        assert_eq!(ExtControl::from_controls(&[2.0]).as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn unicycle_matches_printed_model() {
        let model = unicycle_model(0.05);
        let x0 = [0.0, 0.0, 0.0];
        let f = model.nominal(&x0);
        let want_f = Mat::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.05],
            vec![0.0, 0.0, 1.0],
        ]);
        for i in 0..3 {
            for j in 0..3 {
                assert!((f[(i, j)] - want_f[(i, j)]).abs() < 1e-15);
            }
        }
        let w3 = model.perturbation(2, &x0);
        let want_w3 = Mat::from_rows(&[
            vec![0.0, 0.02, 0.0],
            vec![0.0, 0.0, 0.001],
            vec![0.0, 0.0, 0.0],
        ]);
        for i in 0..3 {
            for j in 0..3 {
                assert!((w3[(i, j)] - want_w3[(i, j)]).abs() < 1e-15);
            }
        }
        // W1 is constant regardless of state and off-axis distance.
        for (a, x) in [(0.05, [1.0, -2.0, 0.7]), (0.3, [0.0, 0.0, -1.2])] {
            let w1 = unicycle_model(a).perturbation(0, &x);
            let want = Mat::from_rows(&[
                vec![0.02, 0.0, 0.0],
                vec![0.02, 0.0, 0.0],
                vec![0.01, 0.0, 0.0],
            ]);
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(w1[(i, j)], want[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn barrier_constraint_encodes_hdot_condition() {
        // G <= 0 must be exactly -(grad_h^T (F + sum W xi) u + alpha(h)) for
        // random states, controls, and uncertainties.
        let model = unicycle_model(0.05);
        let cert = CertificateFunction::circle_obstacle_cbf([3.0, 2.0], 1.0, 0.7);
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng_state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        for _ in 0..50 {
            let x = [next(), next(), next()];
            let u = ExtControl::from_controls(&[next(), next()]);
            let xi = [next(), next(), next()];
            let c = assemble_constraint(&model, &cert, &x).unwrap();
            let g = eval_g(&c, &u, &xi).unwrap();
            let grad = cert.gradient(&x);
            let xdot = model.dynamics(&x, &u, &xi);
            let hdot = dot(&grad, &xdot);
            let alpha = cert.rate(cert.value(&x));
            assert!((g + hdot + alpha).abs() < 1e-12, "G={g}, hdot={hdot}, alpha={alpha}");
        }
    }

    #[test]
    fn lyapunov_constraint_encodes_vdot_condition() {
        let model = unicycle_model(0.05);
        let cert = CertificateFunction::quadratic_goal_clf([7.0, 7.0], 0.4);
        let x = [1.0, -0.5, 0.3];
        let u = ExtControl::from_controls(&[0.7, -0.2]);
        let xi = [0.1, -0.9, 0.5];
        let c = assemble_constraint(&model, &cert, &x).unwrap();
        let g = eval_g(&c, &u, &xi).unwrap();
        let vdot = dot(&cert.gradient(&x), &model.dynamics(&x, &u, &xi));
        let gamma = cert.rate(cert.value(&x));
        // G <= 0  <=>  Vdot <= -gamma(V)
        assert!((g - (vdot + gamma)).abs() < 1e-12);
    }

    #[test]
    fn validate_on_grid_accepts_builtin_certificates() {
        let clf = CertificateFunction::quadratic_goal_clf([7.0, 7.0], 1.0);
        clf.validate_on_grid(&[7.0, 7.0, 0.0], 0.5).unwrap();
        let cbf = CertificateFunction::circle_obstacle_cbf([3.0, 2.0], 1.0, 1.0);
        cbf.validate_on_grid(&[0.0, 0.0, 0.0], 0.5).unwrap();
    }

    proptest! {
        // G is linear in xi for fixed (x, u) and linear in u for fixed (x, xi).
        #[test]
        fn eval_g_superposition(
            qv in proptest::collection::vec(-3.0f64..3.0, 3),
            rv in proptest::collection::vec(-3.0f64..3.0, 6),
            u1 in proptest::collection::vec(-3.0f64..3.0, 2),
            u2 in proptest::collection::vec(-3.0f64..3.0, 2),
            xi1 in proptest::collection::vec(-3.0f64..3.0, 2),
            xi2 in proptest::collection::vec(-3.0f64..3.0, 2),
            s in -2.0f64..2.0,
        ) {
            let c = ConstraintData::new(qv.clone(), Mat::from_fn(3, 2, |i, j| rv[i * 2 + j]), "p");
            let ue1 = ExtControl::from_controls(&u1);
            // xi linearity
            let lhs = eval_g(&c, &ue1, &[xi1[0] + s * xi2[0], xi1[1] + s * xi2[1]]).unwrap();
            let rhs = eval_g(&c, &ue1, &xi1).unwrap()
                + s * (eval_g(&c, &ue1, &xi2).unwrap() - eval_g(&c, &ue1, &[0.0, 0.0]).unwrap());
            prop_assert!((lhs - rhs).abs() < 1e-9);
            // u linearity in the extended sense: G(u1 + s*(u2 - u1)) interpolates
            let blend: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + s * (b - a)).collect();
            let gb = eval_g(&c, &ExtControl::from_controls(&blend), &xi1).unwrap();
            let ga = eval_g(&c, &ue1, &xi1).unwrap();
            let gc = eval_g(&c, &ExtControl::from_controls(&u2), &xi1).unwrap();
            prop_assert!((gb - (ga + s * (gc - ga))).abs() < 1e-9);
        }
    }
}
