//! Difference discrete variational mechanics.
//!
//! Phase points are ordered `z = (p₁..pₙ, q₁..qₙ)` and the symplectic matrix is
//! `J = [[0, I], [-I, 0]]`, so Hamilton's equations read `ż = J⁻¹∇H(z)`.
//!
//! The steppers:
//! - [`del_step`]: discrete Euler-Lagrange equations of a Lagrangian `L(q, Δq)`;
//! - [`canonical_step`]: the matching canonical map, `H` evaluated at `(q_k, p_{k+1})`;
//! - [`midpoint_step`]: the Euler midpoint scheme;
//! - [`fourth_order_step`]: midpoint applied to the modified Hamiltonian
//!   `𝓗 = H - (τ²/24)(∇H)ᵀ J H_zz J ∇H`;
//! - [`explicit_euler_step`]: non-symplectic control.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, check_step, Error, Result};
use crate::lattice::Grid1D;
use crate::solve::{close_rel, fd_gradient, fd_jacobian, newton, SolverSettings};

pub type ScalarFn2 = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type VectorFn2 = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type MatrixFn2 = Arc<dyn Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync>;
pub type ScalarFn1 = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn1 = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

const VALIDATION_SEED: u64 = 0x0d1f_fe7e;
const VALIDATION_POINTS: usize = 6;
const GRADIENT_REL_TOL: f64 = 1e-6;

pub(crate) fn sample_points(dim: usize, count: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(VALIDATION_SEED);
    (0..count)
        .map(|_| {
            let a = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let b = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
            (a, b)
        })
        .collect()
}

pub(crate) fn validate_gradient(
    what: &str,
    analytic: &[f64],
    f: impl Fn(&[f64]) -> f64,
    at: &[f64],
) -> Result<()> {
    let fd = fd_gradient(f, at, 1e-5);
    for (k, (a, b)) in analytic.iter().zip(&fd).enumerate() {
        if !close_rel(*a, *b, GRADIENT_REL_TOL) {
            return Err(Error::Validation(format!(
                "{what}[{k}] = {a} disagrees with finite difference {b} at {at:?}"
            )));
        }
    }
    Ok(())
}

/// `L(q, v)` where `v` stands for the forward difference `Δ_t q`.
#[derive(Clone)]
pub struct DiscreteLagrangian {
    dim: usize,
    eval: ScalarFn2,
    grad_q: VectorFn2,
    grad_v: VectorFn2,
    natural: Option<NaturalForm>,
}

/// Marker for `L = ½ m |v|² - V(q)`, which admits a closed-form update.
#[derive(Clone)]
struct NaturalForm {
    mass: f64,
    potential_grad: VectorFn1,
}

impl fmt::Debug for DiscreteLagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteLagrangian")
            .field("dim", &self.dim)
            .field("natural", &self.natural.as_ref().map(|n| n.mass))
            .finish_non_exhaustive()
    }
}

impl DiscreteLagrangian {
    /// Builds a Lagrangian and checks both gradients against central
    /// differences of `eval` at a few deterministic sample points.
    pub fn new(dim: usize, eval: ScalarFn2, grad_q: VectorFn2, grad_v: VectorFn2) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("dimension must be positive".into()));
        }
        for (q, v) in sample_points(dim, VALIDATION_POINTS) {
            let gq = grad_q(&q, &v);
            let gv = grad_v(&q, &v);
            check_len(dim, gq.len())?;
            check_len(dim, gv.len())?;
            validate_gradient("∂L/∂q", &gq, |x| eval(x, &v), &q)?;
            validate_gradient("∂L/∂v", &gv, |x| eval(&q, x), &v)?;
        }
        Ok(Self {
            dim,
            eval,
            grad_q,
            grad_v,
            natural: None,
        })
    }

    /// `L = ½ m |v|² - V(q)`.
    pub fn natural(
        dim: usize,
        mass: f64,
        potential: ScalarFn1,
        potential_grad: VectorFn1,
    ) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::OutOfRange {
                name: "mass",
                value: mass,
                range: "> 0",
            });
        }
        let v_eval = potential.clone();
        let eval: ScalarFn2 =
            Arc::new(move |q, v| 0.5 * mass * v.iter().map(|x| x * x).sum::<f64>() - v_eval(q));
        let vg = potential_grad.clone();
        let grad_q: VectorFn2 = Arc::new(move |q, _| vg(q).into_iter().map(|g| -g).collect());
        let grad_v: VectorFn2 = Arc::new(move |_, v| v.iter().map(|x| mass * x).collect());
        let mut lagrangian = Self::new(dim, eval, grad_q, grad_v)?;
        lagrangian.natural = Some(NaturalForm {
            mass,
            potential_grad,
        });
        Ok(lagrangian)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, q: &[f64], v: &[f64]) -> f64 {
        (self.eval)(q, v)
    }

    pub fn grad_q(&self, q: &[f64], v: &[f64]) -> Vec<f64> {
        (self.grad_q)(q, v)
    }

    pub fn grad_v(&self, q: &[f64], v: &[f64]) -> Vec<f64> {
        (self.grad_v)(q, v)
    }
}

/// `H(q, p)` with gradients and an optional Hessian in `z = (p, q)` ordering.
#[derive(Clone)]
pub struct HamiltonianSystem {
    dim: usize,
    eval: ScalarFn2,
    grad_q: VectorFn2,
    grad_p: VectorFn2,
    hessian: Option<MatrixFn2>,
    separable: bool,
}

impl fmt::Debug for HamiltonianSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianSystem")
            .field("dim", &self.dim)
            .field("hessian", &self.hessian.is_some())
            .field("separable", &self.separable)
            .finish_non_exhaustive()
    }
}

impl HamiltonianSystem {
    /// Arguments of every callback are `(q, p)`.
    pub fn new(dim: usize, eval: ScalarFn2, grad_q: VectorFn2, grad_p: VectorFn2) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("dimension must be positive".into()));
        }
        for (q, p) in sample_points(dim, VALIDATION_POINTS) {
            let gq = grad_q(&q, &p);
            let gp = grad_p(&q, &p);
            check_len(dim, gq.len())?;
            check_len(dim, gp.len())?;
            validate_gradient("∂H/∂q", &gq, |x| eval(x, &p), &q)?;
            validate_gradient("∂H/∂p", &gp, |x| eval(&q, x), &p)?;
        }
        Ok(Self {
            dim,
            eval,
            grad_q,
            grad_p,
            hessian: None,
            separable: false,
        })
    }

    /// Attaches `∇²H` (blocks `[[H_pp, H_pq], [H_qp, H_qq]]`), checked for
    /// symmetry and against differences of the gradient.
    pub fn with_hessian(mut self, hessian: MatrixFn2) -> Result<Self> {
        let n = self.dim;
        for (q, p) in sample_points(n, VALIDATION_POINTS) {
            let h = hessian(&q, &p);
            if h.nrows() != 2 * n || h.ncols() != 2 * n {
                return Err(Error::DimensionMismatch {
                    expected: 2 * n,
                    got: h.nrows(),
                });
            }
            if (&h - h.transpose()).amax() > 1e-12 {
                return Err(Error::Validation("Hessian is not symmetric".into()));
            }
            let z = PhasePoint::from_pq(&p, &q);
            let fd = fd_jacobian(|w| self.grad_z(&PhasePoint(w.clone())), z.vector(), 1e-6);
            for (a, b) in h.iter().zip(fd.iter()) {
                if !close_rel(*a, *b, GRADIENT_REL_TOL) {
                    return Err(Error::Validation(format!(
                        "Hessian entry {a} disagrees with finite difference {b}"
                    )));
                }
            }
        }
        self.hessian = Some(hessian);
        Ok(self)
    }

    /// Declares `∂H/∂q` independent of `p` (`H = T(p) + V(q)`), which makes
    /// [`canonical_step`] explicit. The claim is spot-checked.
    pub fn with_separable(mut self) -> Result<Self> {
        for (q, p) in sample_points(self.dim, VALIDATION_POINTS) {
            let zero = vec![0.0; self.dim];
            let a = self.grad_q(&q, &p);
            let b = self.grad_q(&q, &zero);
            if a.iter()
                .zip(&b)
                .any(|(x, y)| (x - y).abs() > 1e-14 * (1.0 + x.abs()))
            {
                return Err(Error::Validation("∂H/∂q depends on p".into()));
            }
        }
        self.separable = true;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_hessian(&self) -> bool {
        self.hessian.is_some()
    }

    pub fn is_separable(&self) -> bool {
        self.separable
    }

    pub fn eval(&self, q: &[f64], p: &[f64]) -> f64 {
        (self.eval)(q, p)
    }

    pub fn grad_q(&self, q: &[f64], p: &[f64]) -> Vec<f64> {
        (self.grad_q)(q, p)
    }

    pub fn grad_p(&self, q: &[f64], p: &[f64]) -> Vec<f64> {
        (self.grad_p)(q, p)
    }

    pub fn energy(&self, z: &PhasePoint) -> f64 {
        self.eval(z.q(), z.p())
    }

    /// `∇_z H = (∂H/∂p, ∂H/∂q)`.
    pub fn grad_z(&self, z: &PhasePoint) -> DVector<f64> {
        let mut g = self.grad_p(z.q(), z.p());
        g.extend(self.grad_q(z.q(), z.p()));
        DVector::from_vec(g)
    }

    pub fn hessian_z(&self, z: &PhasePoint) -> Option<DMatrix<f64>> {
        self.hessian.as_ref().map(|h| h(z.q(), z.p()))
    }

    /// Hamiltonian vector field `J⁻¹∇H = (-∂H/∂q, ∂H/∂p)`.
    pub fn vector_field(&self, z: &PhasePoint) -> DVector<f64> {
        apply_j_inv(&self.grad_z(z))
    }
}

/// Phase-space point `z = (p, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint(pub DVector<f64>);

impl PhasePoint {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.is_empty() || !z.len().is_multiple_of(2) {
            return Err(Error::Validation(format!(
                "phase point needs an even, positive length, got {}",
                z.len()
            )));
        }
        Ok(Self(DVector::from_vec(z)))
    }

    pub fn from_pq(p: &[f64], q: &[f64]) -> Self {
        Self(DVector::from_iterator(
            p.len() + q.len(),
            p.iter().chain(q).copied(),
        ))
    }

    pub fn dim(&self) -> usize {
        self.0.len() / 2
    }

    pub fn p(&self) -> &[f64] {
        &self.0.as_slice()[..self.dim()]
    }

    pub fn q(&self) -> &[f64] {
        &self.0.as_slice()[self.dim()..]
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn midpoint(&self, other: &PhasePoint) -> PhasePoint {
        PhasePoint((&self.0 + &other.0) * 0.5)
    }
}

/// `J v` with `J = [[0, I], [-I, 0]]`.
pub fn apply_j(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len() / 2;
    DVector::from_fn(v.len(), |k, _| if k < n { v[k + n] } else { -v[k - n] })
}

/// `J⁻¹ v = -J v`.
pub fn apply_j_inv(v: &DVector<f64>) -> DVector<f64> {
    -apply_j(v)
}

/// Dense `J` of size `2n`.
pub fn symplectic_matrix(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        j[(k, n + k)] = 1.0;
        j[(n + k, k)] = -1.0;
    }
    j
}

/// `ξᵀ J η`, the symplectic 2-form `½ dzᵀ ∧ J dz` evaluated on `(ξ, η)`.
pub fn symplectic_area(xi: &[f64], eta: &[f64]) -> Result<f64> {
    check_len(xi.len(), eta.len())?;
    if !xi.len().is_multiple_of(2) {
        return Err(Error::Validation("odd phase-space dimension".into()));
    }
    let n = xi.len() / 2;
    Ok((0..n)
        .map(|k| xi[k] * eta[n + k] - xi[n + k] * eta[k])
        .sum())
}

fn check_lagrangian_args(l: &DiscreteLagrangian, qs: &[&[f64]], tau: f64) -> Result<()> {
    check_step(tau)?;
    qs.iter().try_for_each(|q| check_len(l.dim, q.len()))
}

fn forward(q0: &[f64], q1: &[f64], tau: f64) -> Vec<f64> {
    q0.iter().zip(q1).map(|(a, b)| (b - a) / tau).collect()
}

/// Residual of the discrete Euler-Lagrange equations at node `k`:
/// `∂L/∂q(q_k, Δq_k) - [∂L/∂v(q_k, Δq_k) - ∂L/∂v(q_{k-1}, Δq_{k-1})] / τ`.
pub fn del_residual(
    l: &DiscreteLagrangian,
    q_prev: &[f64],
    q_cur: &[f64],
    q_next: &[f64],
    tau: f64,
) -> Result<Vec<f64>> {
    check_lagrangian_args(l, &[q_prev, q_cur, q_next], tau)?;
    let v_prev = forward(q_prev, q_cur, tau);
    let v_cur = forward(q_cur, q_next, tau);
    let gq = l.grad_q(q_cur, &v_cur);
    let pv_cur = l.grad_v(q_cur, &v_cur);
    let pv_prev = l.grad_v(q_prev, &v_prev);
    Ok((0..l.dim)
        .map(|i| gq[i] - (pv_cur[i] - pv_prev[i]) / tau)
        .collect())
}

/// Solves the discrete Euler-Lagrange equations for `q_{k+1}`.
///
/// For `L = ½m|v|² - V` the update is explicit,
/// `q_{k+1} = 2q_k - q_{k-1} - τ² ∇V(q_k) / m`.
pub fn del_step(
    l: &DiscreteLagrangian,
    q_prev: &[f64],
    q_cur: &[f64],
    tau: f64,
    settings: &SolverSettings,
) -> Result<Vec<f64>> {
    check_lagrangian_args(l, &[q_prev, q_cur], tau)?;
    if let Some(nat) = &l.natural {
        let g = (nat.potential_grad)(q_cur);
        return Ok((0..l.dim)
            .map(|i| 2.0 * q_cur[i] - q_prev[i] - tau * tau * g[i] / nat.mass)
            .collect());
    }
    let residual = |x: &DVector<f64>| {
        DVector::from_vec(
            del_residual(l, q_prev, q_cur, x.as_slice(), tau).expect("dimensions checked"),
        )
    };
    let seed: Vec<f64> = (0..l.dim).map(|i| 2.0 * q_cur[i] - q_prev[i]).collect();
    let x = newton(
        residual,
        |x| fd_jacobian(residual, x, 1e-6),
        DVector::from_vec(seed),
        settings,
    )?;
    Ok(x.as_slice().to_vec())
}

/// Momentum `p_{k+1} = ∂L/∂v(q_k, Δq_k)`.
pub fn discrete_legendre(
    l: &DiscreteLagrangian,
    q_cur: &[f64],
    q_next: &[f64],
    tau: f64,
) -> Result<Vec<f64>> {
    check_lagrangian_args(l, &[q_cur, q_next], tau)?;
    Ok(l.grad_v(q_cur, &forward(q_cur, q_next, tau)))
}

/// Recovers `q_{k-1}` from `(q_k, p_k)`, inverting [`discrete_legendre`].
pub fn inverse_discrete_legendre(
    l: &DiscreteLagrangian,
    q_cur: &[f64],
    p_cur: &[f64],
    tau: f64,
    settings: &SolverSettings,
) -> Result<Vec<f64>> {
    check_lagrangian_args(l, &[q_cur, p_cur], tau)?;
    if let Some(nat) = &l.natural {
        return Ok((0..l.dim)
            .map(|i| q_cur[i] - tau * p_cur[i] / nat.mass)
            .collect());
    }
    let residual = |x: &DVector<f64>| {
        let p = l.grad_v(x.as_slice(), &forward(x.as_slice(), q_cur, tau));
        DVector::from_iterator(l.dim, p.iter().zip(p_cur).map(|(a, b)| a - b))
    };
    let x = newton(
        residual,
        |x| fd_jacobian(residual, x, 1e-6),
        DVector::from_column_slice(q_cur),
        settings,
    )?;
    Ok(x.as_slice().to_vec())
}

/// `H_D = p_{k+1}·Δq_k - L(q_k, Δq_k)`.
pub fn hamiltonian_from_lagrangian(
    l: &DiscreteLagrangian,
    q_cur: &[f64],
    q_next: &[f64],
    tau: f64,
) -> Result<f64> {
    let v = forward(q_cur, q_next, tau);
    let p = discrete_legendre(l, q_cur, q_next, tau)?;
    Ok(p.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() - l.eval(q_cur, &v))
}

fn check_hamiltonian_args(h: &HamiltonianSystem, z: &PhasePoint, tau: f64) -> Result<()> {
    check_step(tau)?;
    check_len(2 * h.dim, z.0.len())
}

/// One step of the discrete canonical equations
/// `Δq_k = ∂H/∂p(q_k, p_{k+1})`, `Δp_k = -∂H/∂q(q_k, p_{k+1})`.
pub fn canonical_step(
    h: &HamiltonianSystem,
    q: &[f64],
    p: &[f64],
    tau: f64,
    settings: &SolverSettings,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_step(tau)?;
    check_len(h.dim, q.len())?;
    check_len(h.dim, p.len())?;
    let n = h.dim;
    let p_next: Vec<f64> = if h.separable {
        let g = h.grad_q(q, p);
        (0..n).map(|i| p[i] - tau * g[i]).collect()
    } else {
        let residual = |x: &DVector<f64>| {
            let g = h.grad_q(q, x.as_slice());
            DVector::from_fn(n, |i, _| x[i] - p[i] + tau * g[i])
        };
        let jacobian = |x: &DVector<f64>| match h.hessian.as_ref() {
            // ∂(∂H/∂q)/∂p is the lower-left block of the (p, q) Hessian.
            Some(hess) => {
                let m = hess(q, x.as_slice());
                DMatrix::identity(n, n) + m.view((n, 0), (n, n)) * tau
            }
            None => fd_jacobian(residual, x, 1e-6),
        };
        let g0 = h.grad_q(q, p);
        let seed = DVector::from_fn(n, |i, _| p[i] - tau * g0[i]);
        newton(residual, jacobian, seed, settings)?
            .as_slice()
            .to_vec()
    };
    let gp = h.grad_p(q, &p_next);
    let q_next = (0..n).map(|i| q[i] + tau * gp[i]).collect();
    Ok((q_next, p_next))
}

/// Residual of the canonical map on the window `(z_k, z_{k+1})`, ordered as
/// `(p_{k+1} - p_k + τ∂H/∂q, q_{k+1} - q_k - τ∂H/∂p)` with `H` at `(q_k, p_{k+1})`.
pub fn canonical_residual(
    h: &HamiltonianSystem,
    z0: &PhasePoint,
    z1: &PhasePoint,
    tau: f64,
) -> Result<DVector<f64>> {
    check_hamiltonian_args(h, z0, tau)?;
    check_len(2 * h.dim, z1.0.len())?;
    let n = h.dim;
    let gq = h.grad_q(z0.q(), z1.p());
    let gp = h.grad_p(z0.q(), z1.p());
    Ok(DVector::from_fn(2 * n, |k, _| {
        if k < n {
            z1.p()[k] - z0.p()[k] + tau * gq[k]
        } else {
            let i = k - n;
            z1.q()[i] - z0.q()[i] - tau * gp[i]
        }
    }))
}

/// `z_{k+1} - z_k - τ J⁻¹ ∇H((z_k + z_{k+1}) / 2)`.
pub fn midpoint_residual(
    h: &HamiltonianSystem,
    z0: &PhasePoint,
    z1: &PhasePoint,
    tau: f64,
) -> Result<DVector<f64>> {
    check_hamiltonian_args(h, z0, tau)?;
    check_len(2 * h.dim, z1.0.len())?;
    Ok(&z1.0 - &z0.0 - h.vector_field(&z0.midpoint(z1)) * tau)
}

/// `A = J⁻¹ H_zz`, the linearised vector field.
fn field_jacobian(hess: &DMatrix<f64>) -> DMatrix<f64> {
    let n2 = hess.nrows();
    let mut a = DMatrix::zeros(n2, n2);
    for c in 0..n2 {
        a.set_column(c, &apply_j_inv(&hess.column(c).into_owned()));
    }
    a
}

/// Implicit midpoint step, `Δz_k = J⁻¹∇H(½(z_k + z_{k+1}))`.
///
/// With a Hessian the Newton Jacobian is exact, so a quadratic `H` is solved
/// by a single linear solve. A singular system (a resonant `τ`) is reported
/// as [`Error::Singular`].
pub fn midpoint_step(
    h: &HamiltonianSystem,
    z: &PhasePoint,
    tau: f64,
    settings: &SolverSettings,
) -> Result<PhasePoint> {
    check_hamiltonian_args(h, z, tau)?;
    implicit_midpoint(
        z,
        tau,
        settings,
        |w| h.vector_field(w),
        |w| h.hessian_z(w).map(|m| field_jacobian(&m)),
    )
}

fn implicit_midpoint(
    z: &PhasePoint,
    tau: f64,
    settings: &SolverSettings,
    field: impl Fn(&PhasePoint) -> DVector<f64>,
    field_jac: impl Fn(&PhasePoint) -> Option<DMatrix<f64>>,
) -> Result<PhasePoint> {
    let n2 = z.0.len();
    let residual = |x: &DVector<f64>| {
        let mid = PhasePoint((&z.0 + x) * 0.5);
        x - &z.0 - field(&mid) * tau
    };
    let jacobian = |x: &DVector<f64>| {
        let mid = PhasePoint((&z.0 + x) * 0.5);
        match field_jac(&mid) {
            Some(a) => DMatrix::identity(n2, n2) - a * (0.5 * tau),
            None => fd_jacobian(residual, x, 1e-6),
        }
    };
    let seed = &z.0 + field(z) * tau;
    newton(residual, jacobian, seed, settings).map(PhasePoint)
}

/// `α(z) = (∇H)ᵀ J H_zz J ∇H`, the correction term of the modified Hamiltonian.
pub fn modified_hamiltonian_correction(h: &HamiltonianSystem, z: &PhasePoint) -> Result<f64> {
    check_len(2 * h.dim, z.0.len())?;
    let hess = h.hessian_z(z).ok_or(Error::MissingHessian)?;
    let g = h.grad_z(z);
    let jg = apply_j(&g);
    // (∇H)ᵀ J = -(J ∇H)ᵀ since Jᵀ = -J
    Ok(-jg.dot(&(hess * &jg)))
}

/// `𝓗 = H - (τ²/24) α(z)`.
pub fn modified_hamiltonian(h: &HamiltonianSystem, z: &PhasePoint, tau: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::OutOfRange {
            name: "step",
            value: tau,
            range: ">= 0",
        });
    }
    Ok(h.energy(z) - tau * tau / 24.0 * modified_hamiltonian_correction(h, z)?)
}

/// Central-difference step used for gradients of scalar functions of the state.
pub(crate) fn scalar_fd_step(z: &[f64]) -> f64 {
    let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    1e-5 * (1.0 + norm)
}

/// `∇𝓗`. `∇H` is analytic; `∇α` needs third derivatives of `H` and is taken
/// by central differences of the scalar `α`.
pub fn modified_hamiltonian_gradient(
    h: &HamiltonianSystem,
    z: &PhasePoint,
    tau: f64,
) -> Result<DVector<f64>> {
    if !h.has_hessian() {
        return Err(Error::MissingHessian);
    }
    let n = h.dim;
    let e = scalar_fd_step(z.as_slice());
    let grad_alpha = fd_gradient(
        |w| {
            modified_hamiltonian_correction(h, &PhasePoint::from_pq(&w[..n], &w[n..]))
                .expect("hessian present")
        },
        z.as_slice(),
        e,
    );
    Ok(h.grad_z(z) - DVector::from_vec(grad_alpha) * (tau * tau / 24.0))
}

/// Midpoint step for the modified Hamiltonian `𝓗`; fourth order.
pub fn fourth_order_step(
    h: &HamiltonianSystem,
    z: &PhasePoint,
    tau: f64,
    settings: &SolverSettings,
) -> Result<PhasePoint> {
    check_hamiltonian_args(h, z, tau)?;
    if !h.has_hessian() {
        return Err(Error::MissingHessian);
    }
    // Newton uses the midpoint Jacobian of H; the O(τ³) part from α is dropped.
    implicit_midpoint(
        z,
        tau,
        settings,
        |w| apply_j_inv(&modified_hamiltonian_gradient(h, w, tau).expect("hessian present")),
        |w| h.hessian_z(w).map(|m| field_jacobian(&m)),
    )
}

/// Residual of the fourth-order scheme, analogous to [`midpoint_residual`].
pub fn fourth_order_residual(
    h: &HamiltonianSystem,
    z0: &PhasePoint,
    z1: &PhasePoint,
    tau: f64,
) -> Result<DVector<f64>> {
    check_hamiltonian_args(h, z0, tau)?;
    check_len(2 * h.dim, z1.0.len())?;
    let g = modified_hamiltonian_gradient(h, &z0.midpoint(z1), tau)?;
    Ok(&z1.0 - &z0.0 - apply_j_inv(&g) * tau)
}

/// `z_{k+1} = z_k + τ J⁻¹∇H(z_k)`.
pub fn explicit_euler_step(h: &HamiltonianSystem, z: &PhasePoint, tau: f64) -> Result<PhasePoint> {
    check_hamiltonian_args(h, z, tau)?;
    Ok(PhasePoint(&z.0 + h.vector_field(z) * tau))
}

/// Identifies a one-step scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Del,
    Canonical,
    Midpoint,
    FourthOrder,
    ExplicitEuler,
}

/// A scheme bound to its system, viewed as a map on a state vector.
///
/// Hamiltonian schemes act on `z = (p, q)`. The Lagrangian scheme acts on the
/// pair `(q_{k-1}, q_k)`, stored in the `(p, q)` slots of a [`PhasePoint`].
#[derive(Debug, Clone, Copy)]
pub enum StepMap<'a> {
    Del(&'a DiscreteLagrangian),
    Canonical(&'a HamiltonianSystem),
    Midpoint(&'a HamiltonianSystem),
    FourthOrder(&'a HamiltonianSystem),
    ExplicitEuler(&'a HamiltonianSystem),
}

impl<'a> StepMap<'a> {
    pub fn scheme(&self) -> Scheme {
        match self {
            StepMap::Del(_) => Scheme::Del,
            StepMap::Canonical(_) => Scheme::Canonical,
            StepMap::Midpoint(_) => Scheme::Midpoint,
            StepMap::FourthOrder(_) => Scheme::FourthOrder,
            StepMap::ExplicitEuler(_) => Scheme::ExplicitEuler,
        }
    }

    pub fn hamiltonian(&self) -> Option<&'a HamiltonianSystem> {
        match *self {
            StepMap::Del(_) => None,
            StepMap::Canonical(h)
            | StepMap::Midpoint(h)
            | StepMap::FourthOrder(h)
            | StepMap::ExplicitEuler(h) => Some(h),
        }
    }

    /// Length of the state vector.
    pub fn state_len(&self) -> usize {
        match self {
            StepMap::Del(l) => 2 * l.dim(),
            _ => 2 * self.hamiltonian().expect("hamiltonian scheme").dim(),
        }
    }

    pub fn step(&self, z: &PhasePoint, tau: f64, settings: &SolverSettings) -> Result<PhasePoint> {
        check_len(self.state_len(), z.0.len())?;
        match *self {
            StepMap::Del(l) => {
                let next = del_step(l, z.p(), z.q(), tau, settings)?;
                Ok(PhasePoint::from_pq(z.q(), &next))
            }
            StepMap::Canonical(h) => {
                let (q, p) = canonical_step(h, z.q(), z.p(), tau, settings)?;
                Ok(PhasePoint::from_pq(&p, &q))
            }
            StepMap::Midpoint(h) => midpoint_step(h, z, tau, settings),
            StepMap::FourthOrder(h) => fourth_order_step(h, z, tau, settings),
            StepMap::ExplicitEuler(h) => explicit_euler_step(h, z, tau),
        }
    }
}

/// How [`tangent_step`] linearises a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TangentMode {
    /// Analytic linearisation when the system carries a Hessian (or, for the
    /// Lagrangian scheme, has the natural form) and the scheme allows it;
    /// finite differences otherwise.
    #[default]
    Auto,
    FiniteDifference,
}

/// Pushes a variation `δz_k` through one step of `map`, with `z_next` the
/// already computed image of `z`.
pub fn tangent_step(
    map: &StepMap<'_>,
    z: &PhasePoint,
    z_next: &PhasePoint,
    dz: &DVector<f64>,
    tau: f64,
    mode: TangentMode,
    settings: &SolverSettings,
) -> Result<DVector<f64>> {
    let len = map.state_len();
    check_len(len, z.0.len())?;
    check_len(len, z_next.0.len())?;
    check_len(len, dz.len())?;
    if tau == 0.0 {
        return Ok(dz.clone());
    }
    check_step(tau)?;
    if mode == TangentMode::Auto {
        if let Some(v) = analytic_tangent(map, z, z_next, dz, tau)? {
            return Ok(v);
        }
    }
    fd_tangent(map, z, dz, tau, settings)
}

fn analytic_tangent(
    map: &StepMap<'_>,
    z: &PhasePoint,
    z_next: &PhasePoint,
    dz: &DVector<f64>,
    tau: f64,
) -> Result<Option<DVector<f64>>> {
    if let StepMap::Del(l) = map {
        return Ok(l
            .natural
            .as_ref()
            .map(|nat| natural_del_tangent(nat, z, dz, tau)));
    }
    let Some(h) = map.hamiltonian() else {
        return Ok(None);
    };
    if !h.has_hessian() {
        return Ok(None);
    }
    let n = h.dim();
    let n2 = 2 * n;
    let out = match map.scheme() {
        Scheme::ExplicitEuler => {
            let a = field_jacobian(&h.hessian_z(z).expect("hessian"));
            dz + a * dz * tau
        }
        Scheme::Midpoint => {
            let a = field_jacobian(&h.hessian_z(&z.midpoint(z_next)).expect("hessian"));
            let id = DMatrix::<f64>::identity(n2, n2);
            let lhs = &id - &a * (0.5 * tau);
            let rhs = (&id + &a * (0.5 * tau)) * dz;
            crate::solve::solve_linear(lhs, &rhs)?
        }
        Scheme::Canonical => {
            // H and its derivatives are taken at (q_k, p_{k+1}).
            let at = PhasePoint::from_pq(z_next.p(), z.q());
            let m = h.hessian_z(&at).expect("hessian");
            let h_pp = m.view((0, 0), (n, n));
            let h_pq = m.view((0, n), (n, n));
            let h_qp = m.view((n, 0), (n, n));
            let h_qq = m.view((n, n), (n, n));
            let dp0 = dz.rows(0, n);
            let dq0 = dz.rows(n, n);
            let lhs = DMatrix::identity(n, n) + h_qp * tau;
            let rhs = dp0 - h_qq * dq0 * tau;
            let dp1 = crate::solve::solve_linear(lhs, &rhs.into_owned())?;
            let dq1 = dq0 + (h_pq * dq0 + h_pp * &dp1) * tau;
            DVector::from_iterator(n2, dp1.iter().chain(dq1.iter()).copied())
        }
        Scheme::FourthOrder | Scheme::Del => return Ok(None),
    };
    Ok(Some(out))
}

/// `δq_{k+1} = 2δq_k - δq_{k-1} - (τ²/m) D∇V(q_k) δq_k`. Only the potential
/// term is differenced, so its error is scaled by `τ²`.
fn natural_del_tangent(
    nat: &NaturalForm,
    z: &PhasePoint,
    dz: &DVector<f64>,
    tau: f64,
) -> DVector<f64> {
    let n = z.dim();
    let (dq_prev, dq) = (dz.rows(0, n), dz.rows(n, n));
    let hess_dq = fd_gradient_push(&nat.potential_grad, z.q(), dq.as_slice());
    let next = DVector::from_fn(n, |i, _| {
        2.0 * dq[i] - dq_prev[i] - tau * tau * hess_dq[i] / nat.mass
    });
    DVector::from_iterator(2 * n, dq.iter().chain(next.iter()).copied())
}

/// Central difference of a gradient field along `dir`.
fn fd_gradient_push(grad: &VectorFn1, q: &[f64], dir: &[f64]) -> Vec<f64> {
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; q.len()];
    }
    let e = 1e-5 * (1.0 + q.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let at = |s: f64| -> Vec<f64> { q.iter().zip(dir).map(|(a, d)| a + s * d / norm).collect() };
    grad(&at(e))
        .iter()
        .zip(grad(&at(-e)))
        .map(|(a, b)| (a - b) / (2.0 * e) * norm)
        .collect()
}

fn fd_tangent(
    map: &StepMap<'_>,
    z: &PhasePoint,
    dz: &DVector<f64>,
    tau: f64,
    settings: &SolverSettings,
) -> Result<DVector<f64>> {
    let norm = dz.norm();
    if norm == 0.0 {
        return Ok(dz.clone());
    }
    let dir = dz / norm;
    let e = 1e-6 * z.0.norm().max(1.0);
    // Both perturbed solves are converged well below the user tolerance so the
    // quotient is not dominated by solver noise.
    let tight = SolverSettings {
        tolerance: (settings.tolerance * 1e-3).max(1e-15 * (1.0 + z.0.norm())),
        max_iterations: settings.max_iterations,
    };
    let plus = map.step(&PhasePoint(&z.0 + &dir * e), tau, &tight)?;
    let minus = map.step(&PhasePoint(&z.0 - &dir * e), tau, &tight)?;
    Ok((plus.0 - minus.0) * (norm / (2.0 * e)))
}

/// A computed orbit together with variation vectors carried along it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Grid1D,
    pub states: Vec<PhasePoint>,
    /// `tangents[l][k]` is variation `l` at node `k`.
    pub tangents: Vec<Vec<DVector<f64>>>,
}

/// Step-by-step driver for a scheme with tracked variations.
#[derive(Debug, Clone)]
pub struct Propagator<'a> {
    map: StepMap<'a>,
    tau: f64,
    settings: SolverSettings,
    mode: TangentMode,
    state: PhasePoint,
    tangents: Vec<DVector<f64>>,
}

impl<'a> Propagator<'a> {
    pub fn new(
        map: StepMap<'a>,
        initial: PhasePoint,
        tangents: Vec<DVector<f64>>,
        tau: f64,
        settings: SolverSettings,
    ) -> Result<Self> {
        check_step(tau)?;
        check_len(map.state_len(), initial.0.len())?;
        for t in &tangents {
            check_len(map.state_len(), t.len())?;
        }
        Ok(Self {
            map,
            tau,
            settings,
            mode: TangentMode::Auto,
            state: initial,
            tangents,
        })
    }

    pub fn with_tangent_mode(mut self, mode: TangentMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn state(&self) -> &PhasePoint {
        &self.state
    }

    pub fn tangents(&self) -> &[DVector<f64>] {
        &self.tangents
    }

    /// Advances state and variations by one step. On failure nothing changes.
    pub fn advance(&mut self) -> Result<()> {
        let next = self.map.step(&self.state, self.tau, &self.settings)?;
        let tangents = self
            .tangents
            .iter()
            .map(|t| {
                tangent_step(
                    &self.map,
                    &self.state,
                    &next,
                    t,
                    self.tau,
                    self.mode,
                    &self.settings,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        self.state = next;
        self.tangents = tangents;
        Ok(())
    }
}

/// Integrates `steps` steps of `map` from `initial`, carrying `tangents`.
pub fn integrate(
    map: StepMap<'_>,
    initial: PhasePoint,
    tangents: Vec<DVector<f64>>,
    tau: f64,
    steps: usize,
    settings: SolverSettings,
) -> Result<Trajectory> {
    check_step(tau)?;
    let grid = Grid1D::new(tau, steps + 1, false)?;
    let mut prop = Propagator::new(map, initial, tangents, tau, settings)?;
    let mut states = Vec::with_capacity(steps + 1);
    let mut tangent_seq: Vec<Vec<DVector<f64>>> =
        prop.tangents.iter().map(|t| vec![t.clone()]).collect();
    states.push(prop.state.clone());
    for _ in 0..steps {
        prop.advance()?;
        states.push(prop.state.clone());
        for (seq, t) in tangent_seq.iter_mut().zip(&prop.tangents) {
            seq.push(t.clone());
        }
    }
    Ok(Trajectory {
        grid,
        states,
        tangents: tangent_seq,
    })
}
