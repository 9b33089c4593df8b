//! Discrete Euler-Lagrange 1-forms and the cohomological identities they satisfy.
//!
//! An Euler-Lagrange form of a scheme is a 1-form on the space of *window*
//! variables (all unknowns a single scheme equation touches) whose null set is
//! the scheme. Its exterior derivative is tied to the discrete symplectic or
//! multisymplectic 2-forms by an identity that holds on the whole function
//! space; restricted to solutions it becomes the conservation law.
//!
//! Window layouts:
//! - mechanics: `(p_k, q_k, p_{k+1}, q_{k+1})`, length `4n`;
//! - box cell: `(Z^{(i,j)}, Z^{(i,j+1)}, Z^{(i+1,j)}, Z^{(i+1,j+1)})`, length `4d`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::field::HamiltonianPdeSystem;
use crate::mechanics::{
    apply_j, modified_hamiltonian_gradient, symplectic_area, HamiltonianSystem, PhasePoint,
    Trajectory,
};

/// A 1-form on window variables.
pub trait ElForm {
    fn window_len(&self) -> usize;

    /// `E(ξ)` at `window`.
    fn value(&self, window: &[f64], xi: &[f64]) -> Result<f64>;

    /// `dE(ξ, η)` in closed form, when second derivatives are available.
    fn analytic_derivative(&self, _window: &[f64], _xi: &[f64], _eta: &[f64]) -> Option<f64> {
        None
    }
}

/// Euler-Lagrange form whose exterior derivative is balanced by a discrete
/// divergence of structure 2-forms: `dE(ξ, η) + S(ξ, η) = 0` for all windows.
pub trait StructureForm: ElForm {
    fn structure_term(&self, xi: &[f64], eta: &[f64]) -> f64;
}

/// `E(ξ) = r(w) · P ξ`: scheme residuals paired with a fixed linear image of
/// the variation.
pub trait ResidualForm {
    fn window_len(&self) -> usize;
    fn residual(&self, window: &[f64]) -> DVector<f64>;
    fn pairing(&self, xi: &[f64]) -> DVector<f64>;
    /// `∂r/∂w`, when it can be formed from a Hessian.
    fn residual_jacobian(&self, _window: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

impl<T: ResidualForm> ElForm for T {
    fn window_len(&self) -> usize {
        ResidualForm::window_len(self)
    }

    fn value(&self, window: &[f64], xi: &[f64]) -> Result<f64> {
        let len = ResidualForm::window_len(self);
        check_len(len, window.len())?;
        check_len(len, xi.len())?;
        Ok(self.residual(window).dot(&self.pairing(xi)))
    }

    fn analytic_derivative(&self, window: &[f64], xi: &[f64], eta: &[f64]) -> Option<f64> {
        let jac = self.residual_jacobian(window)?;
        let (x, y) = (
            DVector::from_column_slice(xi),
            DVector::from_column_slice(eta),
        );
        Some((&jac * &x).dot(&self.pairing(eta)) - (&jac * &y).dot(&self.pairing(xi)))
    }
}

fn split_window(w: &[f64], n: usize) -> (PhasePoint, PhasePoint) {
    (
        PhasePoint(DVector::from_column_slice(&w[..2 * n])),
        PhasePoint(DVector::from_column_slice(&w[2 * n..])),
    )
}

fn mechanics_structure(n: usize, tau: f64, xi: &[f64], eta: &[f64]) -> f64 {
    let n2 = 2 * n;
    let w0 = symplectic_area(&xi[..n2], &eta[..n2]).expect("window layout");
    let w1 = symplectic_area(&xi[n2..], &eta[n2..]).expect("window layout");
    (w1 - w0) / tau
}

/// Form of the canonical map:
/// `E = (Δq - ∂H/∂p) dp_{k+1} - (Δp + ∂H/∂q) dq_k`, `H` at `(q_k, p_{k+1})`.
///
/// Pairing the `q` equation with `dp_{k+1}` (where `H` is evaluated) is what
/// makes `dE + Δ_t(dp ∧ dq) = 0` hold identically.
#[derive(Debug, Clone, Copy)]
pub struct CanonicalForm<'a> {
    pub system: &'a HamiltonianSystem,
    pub tau: f64,
}

impl ResidualForm for CanonicalForm<'_> {
    fn window_len(&self) -> usize {
        4 * self.system.dim()
    }

    fn residual(&self, w: &[f64]) -> DVector<f64> {
        let n = self.system.dim();
        let (z0, z1) = split_window(w, n);
        let gq = self.system.grad_q(z0.q(), z1.p());
        let gp = self.system.grad_p(z0.q(), z1.p());
        DVector::from_fn(2 * n, |k, _| {
            if k < n {
                (z1.q()[k] - z0.q()[k]) / self.tau - gp[k]
            } else {
                let i = k - n;
                -((z1.p()[i] - z0.p()[i]) / self.tau + gq[i])
            }
        })
    }

    fn pairing(&self, xi: &[f64]) -> DVector<f64> {
        let n = self.system.dim();
        // (δp_{k+1}, δq_k)
        DVector::from_iterator(2 * n, xi[2 * n..3 * n].iter().chain(&xi[n..2 * n]).copied())
    }

    fn residual_jacobian(&self, w: &[f64]) -> Option<DMatrix<f64>> {
        let n = self.system.dim();
        let (z0, z1) = split_window(w, n);
        let m = self
            .system
            .hessian_z(&PhasePoint::from_pq(z1.p(), z0.q()))?;
        let t = 1.0 / self.tau;
        let id = DMatrix::<f64>::identity(n, n);
        let mut jac = DMatrix::zeros(2 * n, 4 * n);
        // rows 0..n: Δq - H_p ; columns: p0 | q0 | p1 | q1
        jac.view_mut((0, n), (n, n))
            .copy_from(&(-&id * t - m.view((0, n), (n, n))));
        jac.view_mut((0, 2 * n), (n, n))
            .copy_from(&(-m.view((0, 0), (n, n))));
        jac.view_mut((0, 3 * n), (n, n)).copy_from(&(&id * t));
        // rows n..2n: -(Δp + H_q)
        jac.view_mut((n, 0), (n, n)).copy_from(&(&id * t));
        jac.view_mut((n, n), (n, n))
            .copy_from(&(-m.view((n, n), (n, n))));
        jac.view_mut((n, 2 * n), (n, n))
            .copy_from(&(-&id * t - m.view((n, 0), (n, n))));
        Some(jac)
    }
}

impl StructureForm for CanonicalForm<'_> {
    fn structure_term(&self, xi: &[f64], eta: &[f64]) -> f64 {
        mechanics_structure(self.system.dim(), self.tau, xi, eta)
    }
}

/// Midpoint form `E = dz̄ᵀ (J Δz - ∇H(z̄))`, `z̄ = ½(z_k + z_{k+1})`.
#[derive(Debug, Clone, Copy)]
pub struct MidpointForm<'a> {
    pub system: &'a HamiltonianSystem,
    pub tau: f64,
}

fn average_halves(xi: &[f64]) -> DVector<f64> {
    let half = xi.len() / 2;
    DVector::from_fn(half, |k, _| 0.5 * (xi[k] + xi[half + k]))
}

fn midpoint_residual_with(
    w: &[f64],
    n: usize,
    tau: f64,
    grad: impl Fn(&PhasePoint) -> DVector<f64>,
) -> DVector<f64> {
    let (z0, z1) = split_window(w, n);
    apply_j(&(&z1.0 - &z0.0)) / tau - grad(&z0.midpoint(&z1))
}

impl ResidualForm for MidpointForm<'_> {
    fn window_len(&self) -> usize {
        4 * self.system.dim()
    }

    fn residual(&self, w: &[f64]) -> DVector<f64> {
        midpoint_residual_with(w, self.system.dim(), self.tau, |z| self.system.grad_z(z))
    }

    fn pairing(&self, xi: &[f64]) -> DVector<f64> {
        average_halves(xi)
    }

    fn residual_jacobian(&self, w: &[f64]) -> Option<DMatrix<f64>> {
        let n2 = 2 * self.system.dim();
        let (z0, z1) = split_window(w, self.system.dim());
        let hess = self.system.hessian_z(&z0.midpoint(&z1))?;
        let j = crate::mechanics::symplectic_matrix(self.system.dim()) / self.tau;
        let mut jac = DMatrix::zeros(n2, 2 * n2);
        jac.view_mut((0, 0), (n2, n2))
            .copy_from(&(-&j - &hess * 0.5));
        jac.view_mut((0, n2), (n2, n2))
            .copy_from(&(&j - &hess * 0.5));
        Some(jac)
    }
}

impl StructureForm for MidpointForm<'_> {
    fn structure_term(&self, xi: &[f64], eta: &[f64]) -> f64 {
        mechanics_structure(self.system.dim(), self.tau, xi, eta)
    }
}

/// Form of the fourth-order scheme: the midpoint form with `∇𝓗` in place of `∇H`.
#[derive(Debug, Clone, Copy)]
pub struct FourthOrderForm<'a> {
    pub system: &'a HamiltonianSystem,
    pub tau: f64,
}

impl ResidualForm for FourthOrderForm<'_> {
    fn window_len(&self) -> usize {
        4 * self.system.dim()
    }

    fn residual(&self, w: &[f64]) -> DVector<f64> {
        midpoint_residual_with(w, self.system.dim(), self.tau, |z| {
            modified_hamiltonian_gradient(self.system, z, self.tau)
                .expect("system carries a Hessian")
        })
    }

    fn pairing(&self, xi: &[f64]) -> DVector<f64> {
        average_halves(xi)
    }
}

impl StructureForm for FourthOrderForm<'_> {
    fn structure_term(&self, xi: &[f64], eta: &[f64]) -> f64 {
        mechanics_structure(self.system.dim(), self.tau, xi, eta)
    }
}

/// Form of the midpoint box scheme on one cell:
/// `E = dZ̄ᵀ (M Δ_t Z^{(i,j+½)} + εK Δ_x Z^{(i+½,j)} - ∇S(Z̄))`, `Z̄` the cell average.
#[derive(Debug, Clone, Copy)]
pub struct BoxForm<'a> {
    pub system: &'a HamiltonianPdeSystem,
    pub tau: f64,
    pub h: f64,
}

/// The four corners of a cell window.
fn corners(w: &[f64], d: usize) -> [&[f64]; 4] {
    [&w[..d], &w[d..2 * d], &w[2 * d..3 * d], &w[3 * d..]]
}

impl BoxForm<'_> {
    /// `(ω⁰ at row i, ω⁰ at row i+1, ω¹ at column j, ω¹ at column j+1)` on `(ξ, η)`.
    pub fn structure_forms(&self, xi: &[f64], eta: &[f64]) -> [f64; 4] {
        let d = self.system.dim();
        let [x00, x01, x10, x11] = corners(xi, d);
        let [y00, y01, y10, y11] = corners(eta, d);
        let om0 = |a: &[f64], b: &[f64], c: &[f64], e: &[f64]| {
            self.system.omega_time(&avg2(a, b), &avg2(c, e))
        };
        let om1 = |a: &[f64], b: &[f64], c: &[f64], e: &[f64]| {
            self.system.omega_space(&avg2(a, b), &avg2(c, e))
        };
        [
            om0(x00, x01, y00, y01),
            om0(x10, x11, y10, y11),
            om1(x00, x10, y00, y10),
            om1(x01, x11, y01, y11),
        ]
    }
}

fn avg2(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
}

impl ResidualForm for BoxForm<'_> {
    fn window_len(&self) -> usize {
        4 * self.system.dim()
    }

    fn residual(&self, w: &[f64]) -> DVector<f64> {
        let d = self.system.dim();
        let [z00, z01, z10, z11] = corners(w, d);
        DVector::from_vec(
            self.system
                .cell_residual([z00, z01, z10, z11], self.tau, self.h),
        )
    }

    fn pairing(&self, xi: &[f64]) -> DVector<f64> {
        let d = self.system.dim();
        DVector::from_fn(d, |k, _| {
            0.25 * (xi[k] + xi[d + k] + xi[2 * d + k] + xi[3 * d + k])
        })
    }

    fn residual_jacobian(&self, w: &[f64]) -> Option<DMatrix<f64>> {
        let d = self.system.dim();
        let [z00, z01, z10, z11] = corners(w, d);
        let blocks = self
            .system
            .cell_jacobian([z00, z01, z10, z11], self.tau, self.h)?;
        let mut jac = DMatrix::zeros(d, 4 * d);
        for (c, b) in blocks.iter().enumerate() {
            jac.view_mut((0, c * d), (d, d)).copy_from(b);
        }
        Some(jac)
    }
}

impl StructureForm for BoxForm<'_> {
    /// `-(Δ_t ω⁰ + ε Δ_x ω¹)`.
    fn structure_term(&self, xi: &[f64], eta: &[f64]) -> f64 {
        let [t0, t1, s0, s1] = self.structure_forms(xi, eta);
        -((t1 - t0) / self.tau + self.system.epsilon() * (s1 - s0) / self.h)
    }
}

/// Exact form `dα` of a scalar window function, realised by central differences.
pub struct ExactForm<F> {
    len: usize,
    alpha: F,
}

impl<F: Fn(&[f64]) -> f64> ExactForm<F> {
    pub fn new(len: usize, alpha: F) -> Self {
        Self { len, alpha }
    }
}

impl<F: Fn(&[f64]) -> f64> ElForm for ExactForm<F> {
    fn window_len(&self) -> usize {
        self.len
    }

    fn value(&self, window: &[f64], xi: &[f64]) -> Result<f64> {
        check_len(self.len, window.len())?;
        check_len(self.len, xi.len())?;
        let e = fd_step(window);
        let g = crate::solve::fd_gradient(&self.alpha, window, e);
        Ok(g.iter().zip(xi).map(|(a, b)| a * b).sum())
    }
}

/// Sum of two forms on the same window.
pub struct SumForm<A, B>(pub A, pub B);

impl<A: ElForm, B: ElForm> ElForm for SumForm<A, B> {
    fn window_len(&self) -> usize {
        self.0.window_len()
    }

    fn value(&self, window: &[f64], xi: &[f64]) -> Result<f64> {
        Ok(self.0.value(window, xi)? + self.1.value(window, xi)?)
    }
}

/// How `dE` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DerivativeMode {
    /// Central differences with step `1e-5 (1 + ‖window‖)`.
    FiniteDifference,
    /// Central differences with an explicit step.
    FiniteDifferenceStep(f64),
    /// Closed form from second derivatives; fails if the form has none.
    Analytic,
}

fn fd_step(window: &[f64]) -> f64 {
    crate::mechanics::scalar_fd_step(window)
}

/// `E(ξ)`.
pub fn el_form_value(form: &impl ElForm, window: &[f64], xi: &[f64]) -> Result<f64> {
    form.value(window, xi)
}

/// `dE(ξ, η) = D_ξ[E(η)] - D_η[E(ξ)]`, directional derivatives over the window.
pub fn el_form_exterior_derivative(
    form: &impl ElForm,
    window: &[f64],
    xi: &[f64],
    eta: &[f64],
    mode: DerivativeMode,
) -> Result<f64> {
    let len = form.window_len();
    check_len(len, window.len())?;
    check_len(len, xi.len())?;
    check_len(len, eta.len())?;
    let step = match mode {
        DerivativeMode::Analytic => {
            return form
                .analytic_derivative(window, xi, eta)
                .ok_or(Error::MissingHessian)
        }
        DerivativeMode::FiniteDifference => fd_step(window),
        DerivativeMode::FiniteDifferenceStep(e) => {
            if !(e > 0.0) {
                return Err(Error::OutOfRange {
                    name: "fd step",
                    value: e,
                    range: "> 0",
                });
            }
            e
        }
    };
    let directional = |dir: &[f64], arg: &[f64]| -> Result<f64> {
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let shifted = |s: f64| -> Vec<f64> {
            window
                .iter()
                .zip(dir)
                .map(|(w, d)| w + s * d / norm)
                .collect()
        };
        let plus = form.value(&shifted(step), arg)?;
        let minus = form.value(&shifted(-step), arg)?;
        Ok((plus - minus) / (2.0 * step) * norm)
    };
    Ok(directional(xi, eta)? - directional(eta, xi)?)
}

/// `dE(ξ, η) + S(ξ, η)`, zero on every window when the form is closed modulo
/// the structure 2-forms. For mechanics `S = Δ_t ω`; for box cells
/// `S = -(Δ_t ω⁰ + ε Δ_x ω¹)`.
pub fn cohomology_identity_residual(
    form: &impl StructureForm,
    window: &[f64],
    xi: &[f64],
    eta: &[f64],
    mode: DerivativeMode,
) -> Result<f64> {
    Ok(el_form_exterior_derivative(form, window, xi, eta, mode)? + form.structure_term(xi, eta))
}

/// Uniform random vector in `[-scale, scale]^len`.
pub fn random_vector(rng: &mut impl Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-scale..=scale)).collect()
}

/// Largest `|cohomology_identity_residual|` over `samples` random windows and
/// variation pairs drawn from `rng`.
pub fn max_identity_residual(
    form: &impl StructureForm,
    rng: &mut impl Rng,
    samples: usize,
    scale: f64,
    mode: DerivativeMode,
) -> Result<f64> {
    let len = form.window_len();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let w = random_vector(rng, len, scale);
        let xi = random_vector(rng, len, 1.0);
        let eta = random_vector(rng, len, 1.0);
        worst = worst.max(cohomology_identity_residual(form, &w, &xi, &eta, mode)?.abs());
    }
    Ok(worst)
}

/// Per-step (or per-cell) diagnostic values with summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSeries {
    /// Spacing between consecutive entries (time step for step series).
    pub spacing: f64,
    pub values: Vec<f64>,
}

impl ResidualSeries {
    pub fn new(spacing: f64, values: Vec<f64>) -> Self {
        Self { spacing, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn mean_abs(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len() as f64
    }

    /// Least-squares slope of the values against their index (per entry).
    pub fn slope(&self) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return 0.0;
        }
        let mean_x = (n - 1) as f64 / 2.0;
        let mean_y = self.mean();
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (k, y) in self.values.iter().enumerate() {
            let dx = k as f64 - mean_x;
            sxy += dx * (y - mean_y);
            sxx += dx * dx;
        }
        sxy / sxx
    }
}

/// `ω_k(ξ_a, ξ_b)` along a trajectory.
pub fn symplectic_area_series(traj: &Trajectory, a: usize, b: usize) -> Result<Vec<f64>> {
    let count = traj.tangents.len();
    if a >= count || b >= count {
        return Err(Error::MissingTangents(count));
    }
    traj.tangents[a]
        .iter()
        .zip(&traj.tangents[b])
        .map(|(x, y)| symplectic_area(x.as_slice(), y.as_slice()))
        .collect()
}

/// `r_k = ω_{k+1}(ξ, η) - ω_k(ξ, η)` for the first two tracked variations.
pub fn symplectic_residual_series(traj: &Trajectory) -> Result<ResidualSeries> {
    if traj.tangents.len() < 2 {
        return Err(Error::MissingTangents(traj.tangents.len()));
    }
    let areas = symplectic_area_series(traj, 0, 1)?;
    let values = areas.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(ResidualSeries::new(traj.grid.step(), values))
}

/// `H(z_k) - H(z_0)`.
pub fn energy_series(traj: &Trajectory, h: &HamiltonianSystem) -> ResidualSeries {
    let e0 = traj.states.first().map(|z| h.energy(z)).unwrap_or(0.0);
    ResidualSeries::new(
        traj.grid.step(),
        traj.states.iter().map(|z| h.energy(z) - e0).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanics::{integrate, modified_hamiltonian_correction, StepMap};
    use crate::models::{make_field, make_mechanics, ModelSpec};
    use crate::SolverSettings;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn system(name: &str) -> HamiltonianSystem {
        make_mechanics(&ModelSpec::new(name)).unwrap().1
    }

    #[test]
    fn midpoint_form_example() {
        let h = system("harmonic");
        let form = MidpointForm {
            system: &h,
            tau: 0.1,
        };
        // window (p_k, q_k, p_{k+1}, q_{k+1}), ξ along q_{k+½}
        let w = [0.0, 1.0, 0.0, 1.0];
        let xi = [0.0, 1.0, 0.0, 1.0];
        assert_eq!(el_form_value(&form, &w, &xi).unwrap(), -1.0);
        assert_eq!(el_form_value(&form, &w, &[0.0; 4]).unwrap(), 0.0);
        assert!(el_form_value(&form, &w, &[0.0; 3]).is_err());
    }

    #[test]
    fn forms_vanish_on_solutions() {
        let h = system("pendulum");
        let s = SolverSettings::default();
        let z0 = PhasePoint::from_pq(&[0.3], &[1.2]);
        let tau = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xi = random_vector(&mut rng, 4, 1.0);
        let z1 = crate::mechanics::midpoint_step(&h, &z0, tau, &s).unwrap();
        let w: Vec<f64> = z0.as_slice().iter().chain(z1.as_slice()).copied().collect();
        assert!(
            el_form_value(&MidpointForm { system: &h, tau }, &w, &xi)
                .unwrap()
                .abs()
                <= 1e-12
        );
        let (q, p) = crate::mechanics::canonical_step(&h, z0.q(), z0.p(), tau, &s).unwrap();
        let w: Vec<f64> = z0.as_slice().iter().chain(&p).chain(&q).copied().collect();
        assert!(
            el_form_value(&CanonicalForm { system: &h, tau }, &w, &xi)
                .unwrap()
                .abs()
                <= 1e-12
        );
    }

    #[test]
    fn exterior_derivative_is_antisymmetric() {
        let h = system("pendulum");
        let form = MidpointForm {
            system: &h,
            tau: 0.1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = random_vector(&mut rng, 4, 1.0);
        let xi = random_vector(&mut rng, 4, 1.0);
        let eta = random_vector(&mut rng, 4, 1.0);
        for mode in [DerivativeMode::FiniteDifference, DerivativeMode::Analytic] {
            let a = el_form_exterior_derivative(&form, &w, &xi, &eta, mode).unwrap();
            let b = el_form_exterior_derivative(&form, &w, &eta, &xi, mode).unwrap();
            assert!((a + b).abs() <= 1e-12);
            let c = el_form_exterior_derivative(&form, &w, &xi, &xi, mode).unwrap();
            assert!(c.abs() <= 1e-12);
        }
        assert!(el_form_exterior_derivative(
            &form,
            &w,
            &xi,
            &eta,
            DerivativeMode::FiniteDifferenceStep(0.0)
        )
        .is_err());
    }

    #[test]
    fn identities_hold_off_solutions() {
        let h = system("pendulum");
        let q = system("harmonic");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fd = DerivativeMode::FiniteDifference;
        for tau in [0.05, 0.3] {
            let c = CanonicalForm { system: &h, tau };
            let m = MidpointForm { system: &h, tau };
            let f = FourthOrderForm { system: &h, tau };
            assert!(max_identity_residual(&c, &mut rng, 20, 2.0, fd).unwrap() <= 5e-6);
            assert!(max_identity_residual(&m, &mut rng, 20, 2.0, fd).unwrap() <= 5e-6);
            assert!(max_identity_residual(&f, &mut rng, 20, 2.0, fd).unwrap() <= 5e-6);
            let an = DerivativeMode::Analytic;
            assert!(max_identity_residual(&c, &mut rng, 20, 2.0, an).unwrap() <= 1e-12);
            let qm = MidpointForm { system: &q, tau };
            assert!(max_identity_residual(&qm, &mut rng, 20, 2.0, an).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn box_identity_holds_off_solutions() {
        let sys = make_field(&ModelSpec::new("sine_gordon_bridges"))
            .unwrap()
            .bridges()
            .unwrap();
        let form = BoxForm {
            system: &sys,
            tau: 0.2,
            h: 0.4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fd = max_identity_residual(&form, &mut rng, 30, 2.0, DerivativeMode::FiniteDifference)
            .unwrap();
        assert!(fd <= 5e-6, "{fd}");
        let an = max_identity_residual(&form, &mut rng, 30, 2.0, DerivativeMode::Analytic).unwrap();
        assert!(an <= 1e-11, "{an}");
    }

    #[test]
    fn box_structure_forms_are_antisymmetric() {
        let sys = make_field(&ModelSpec::new("sine_gordon_bridges"))
            .unwrap()
            .bridges()
            .unwrap();
        let form = BoxForm {
            system: &sys,
            tau: 0.2,
            h: 0.4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xi = random_vector(&mut rng, 12, 1.0);
        assert_eq!(form.structure_forms(&xi, &xi), [0.0; 4]);
    }

    #[test]
    fn exact_forms_are_closed() {
        let alpha = |w: &[f64]| (w[0] * w[1]).sin() + w[2].powi(3) * w[3] + (0.5 * w[1]).exp();
        let form = ExactForm::new(4, alpha);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let w = random_vector(&mut rng, 4, 1.0);
            let xi = random_vector(&mut rng, 4, 1.0);
            let eta = random_vector(&mut rng, 4, 1.0);
            let d = el_form_exterior_derivative(
                &form,
                &w,
                &xi,
                &eta,
                DerivativeMode::FiniteDifferenceStep(1e-4),
            )
            .unwrap();
            assert!(d.abs() <= 5e-6, "{d}");
        }
    }

    #[test]
    fn fourth_order_and_midpoint_forms_differ_by_exact_form() {
        let h = system("pendulum");
        let tau = 0.2;
        let beta = |w: &[f64]| {
            let z = PhasePoint::from_pq(&[0.5 * (w[0] + w[2])], &[0.5 * (w[1] + w[3])]);
            -tau * tau / 24.0 * modified_hamiltonian_correction(&h, &z).unwrap()
        };
        let m = MidpointForm { system: &h, tau };
        let f = FourthOrderForm { system: &h, tau };
        let exact = ExactForm::new(4, beta);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let w = random_vector(&mut rng, 4, 1.5);
            let xi = random_vector(&mut rng, 4, 1.0);
            let diff = m.value(&w, &xi).unwrap() - f.value(&w, &xi).unwrap();
            let d_beta = exact.value(&w, &xi).unwrap();
            assert!((diff - d_beta).abs() <= 1e-8, "{diff} {d_beta}");
        }
    }

    #[test]
    fn sum_form_adds_values() {
        let h = system("harmonic");
        let m = MidpointForm {
            system: &h,
            tau: 0.1,
        };
        let e = ExactForm::new(4, |w: &[f64]| w[0] * w[3]);
        let s = SumForm(m, e);
        let w = [0.1, 0.2, 0.3, 0.4];
        let xi = [1.0, 0.0, 0.0, 0.0];
        let expect = m.value(&w, &xi).unwrap() + 0.4;
        assert!((s.value(&w, &xi).unwrap() - expect).abs() <= 1e-9);
    }

    #[test]
    fn series_summaries() {
        let s = ResidualSeries::new(0.1, vec![1.0, 3.0, 5.0, 7.0]);
        assert_eq!(s.max_abs(), 7.0);
        assert_eq!(s.mean(), 4.0);
        assert!((s.slope() - 2.0).abs() < 1e-15);
        assert_eq!(ResidualSeries::new(0.1, vec![]).slope(), 0.0);
    }

    #[test]
    fn residual_series_requirements() {
        let h = system("harmonic");
        let s = SolverSettings::default();
        let z = PhasePoint::from_pq(&[0.0], &[1.0]);
        let t = integrate(StepMap::Midpoint(&h), z.clone(), vec![], 0.1, 5, s).unwrap();
        assert!(matches!(
            symplectic_residual_series(&t),
            Err(Error::MissingTangents(0))
        ));
        let zero = DVector::zeros(2);
        let t = integrate(
            StepMap::Midpoint(&h),
            z,
            vec![zero.clone(), zero],
            0.1,
            5,
            s,
        )
        .unwrap();
        let r = symplectic_residual_series(&t).unwrap();
        assert_eq!(r.len(), 5);
        assert_eq!(r.max_abs(), 0.0);
        assert!(energy_series(&t, &h).max_abs() <= 1e-14);
    }

    #[test]
    fn explicit_euler_energy_grows() {
        let h = system("harmonic");
        let z = PhasePoint::from_pq(&[0.0], &[1.0]);
        let t = integrate(
            StepMap::ExplicitEuler(&h),
            z,
            vec![],
            0.1,
            20,
            SolverSettings::default(),
        )
        .unwrap();
        let e = energy_series(&t, &h);
        assert!(e.values.windows(2).all(|w| w[1] > w[0]));
    }
}
