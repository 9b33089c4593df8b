//! Discrete field theory on a time × space lattice.
//!
//! Index convention: `i` is time, `j` is space; space is periodic with `N`
//! nodes and step `h`, time steps are `τ`.
//!
//! - [`field_del_step`]: discrete Euler-Lagrange equations of a density
//!   `𝓛(u, Δ_t u, Δ_x u)` (leapfrog for the wave family);
//! - [`field_canonical_step`]: the canonical field equations of `𝓗(u, π, Δ_x u)`;
//! - [`box_step_row`]: the midpoint box scheme for `M Z_t + εK Z_x = ∇S(Z)`,
//!   solved row by row with a Newton iteration on all `N·d` unknowns.

use std::fmt;
use std::sync::Arc;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, check_step, Error, Result};
use crate::lattice::{Grid2D, NodeFunction};
use crate::mechanics::{sample_points, validate_gradient, ScalarFn1, VectorFn1};
use crate::solve::{close_rel, fd_jacobian, newton, MinNormFactor, SolverSettings};
use crate::verify::ResidualSeries;

pub type MatrixFn1 = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
/// Scalar density of three scalar slots.
pub type DensityFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// Partial derivatives of a [`DensityFn`] with respect to its three slots.
pub type DensityGradFn = Arc<dyn Fn(f64, f64, f64) -> [f64; 3] + Send + Sync>;

const ANTISYMMETRY_TOL: f64 = 1e-14;
const VALIDATION_POINTS: usize = 6;

fn check_spatial(n: usize, h: f64) -> Result<()> {
    if n < 3 {
        return Err(Error::InvalidGrid(format!(
            "{n} spatial nodes, at least 3 required"
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::OutOfRange {
            name: "h",
            value: h,
            range: "> 0",
        });
    }
    Ok(())
}

fn validate_density(what: &str, eval: &DensityFn, grad: &DensityGradFn) -> Result<()> {
    for (a, b) in sample_points(3, VALIDATION_POINTS) {
        let x = [a[0], a[1], b[0]];
        let g = grad(x[0], x[1], x[2]);
        validate_gradient(what, &g, |y| eval(y[0], y[1], y[2]), &x)?;
    }
    Ok(())
}

/// Sign convention of the kinetic/gradient pair in the wave family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signature {
    /// `½(Δ_t u)² - ½(Δ_x u)² - V(u)`: hyperbolic, used for evolution.
    Lorentzian,
    /// `½(Δ_t u)² + ½(Δ_x u)² - V(u)`: only meaningful as a residual.
    Euclidean,
}

/// Scalar field Lagrangian density `𝓛(u, v_t, v_x)`, `v_μ` standing for `Δ_μ u`.
#[derive(Clone)]
pub struct DiscreteFieldLagrangian {
    eval: DensityFn,
    grad: DensityGradFn,
    wave: Option<(Signature, ScalarFn1)>,
}

impl fmt::Debug for DiscreteFieldLagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteFieldLagrangian")
            .field("wave", &self.wave.as_ref().map(|w| w.0))
            .finish_non_exhaustive()
    }
}

impl DiscreteFieldLagrangian {
    /// `grad` returns `(∂𝓛/∂u, ∂𝓛/∂v_t, ∂𝓛/∂v_x)`; it is checked against
    /// central differences of `eval`.
    pub fn new(eval: DensityFn, grad: DensityGradFn) -> Result<Self> {
        validate_density("∂𝓛", &eval, &grad)?;
        Ok(Self {
            eval,
            grad,
            wave: None,
        })
    }

    /// `½ v_t² ∓ ½ v_x² - V(u)`.
    pub fn wave(
        signature: Signature,
        potential: ScalarFn1,
        potential_grad: ScalarFn1,
    ) -> Result<Self> {
        let s = match signature {
            Signature::Lorentzian => -1.0,
            Signature::Euclidean => 1.0,
        };
        let v = potential.clone();
        let eval: DensityFn =
            Arc::new(move |u, vt, vx| 0.5 * vt * vt + s * 0.5 * vx * vx - v(&[u]));
        let dv = potential_grad.clone();
        let grad: DensityGradFn = Arc::new(move |u, vt, vx| [-dv(&[u]), vt, s * vx]);
        let mut l = Self::new(eval, grad)?;
        l.wave = Some((signature, potential_grad));
        Ok(l)
    }

    pub fn eval(&self, u: f64, vt: f64, vx: f64) -> f64 {
        (self.eval)(u, vt, vx)
    }

    pub fn grad(&self, u: f64, vt: f64, vx: f64) -> [f64; 3] {
        (self.grad)(u, vt, vx)
    }
}

/// Canonical field density `𝓗(u, π, w)`, `w` standing for `Δ_x u`.
#[derive(Clone)]
pub struct FieldHamiltonian {
    eval: DensityFn,
    grad: DensityGradFn,
    separable: bool,
}

impl fmt::Debug for FieldHamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FieldHamiltonian")
            .field("separable", &self.separable)
            .finish_non_exhaustive()
    }
}

impl FieldHamiltonian {
    /// `grad` returns `(∂𝓗/∂u, ∂𝓗/∂π, ∂𝓗/∂w)`; it is checked against
    /// central differences of `eval`.
    pub fn new(eval: DensityFn, grad: DensityGradFn) -> Result<Self> {
        validate_density("∂𝓗", &eval, &grad)?;
        Ok(Self {
            eval,
            grad,
            separable: false,
        })
    }

    /// `½π² + ½w² + V(u)`, the Legendre image of the Lorentzian wave density.
    pub fn wave(potential: ScalarFn1, potential_grad: ScalarFn1) -> Result<Self> {
        let v = potential;
        let eval: DensityFn = Arc::new(move |u, p, w| 0.5 * p * p + 0.5 * w * w + v(&[u]));
        let grad: DensityGradFn = Arc::new(move |u, p, w| [potential_grad(&[u]), p, w]);
        let mut hd = Self::new(eval, grad)?;
        hd.separable = true;
        Ok(hd)
    }

    pub fn is_separable(&self) -> bool {
        self.separable
    }

    pub fn eval(&self, u: f64, pi: f64, w: f64) -> f64 {
        (self.eval)(u, pi, w)
    }

    pub fn grad(&self, u: f64, pi: f64, w: f64) -> [f64; 3] {
        (self.grad)(u, pi, w)
    }

    /// `h Σ_j 𝓗(u_j, π_j, Δ_x u_j)` over a periodic row.
    pub fn row_energy(&self, u: &[f64], pi: &[f64], h: f64) -> Result<f64> {
        check_len(u.len(), pi.len())?;
        let n = u.len();
        Ok(h * (0..n)
            .map(|j| self.eval(u[j], pi[j], (u[(j + 1) % n] - u[j]) / h))
            .sum::<f64>())
    }
}

/// `M Z_t + εK Z_x = ∇S(Z)` with antisymmetric `M`, `K`.
#[derive(Clone)]
pub struct HamiltonianPdeSystem {
    dim: usize,
    m: DMatrix<f64>,
    k: DMatrix<f64>,
    epsilon: f64,
    s: ScalarFn1,
    grad_s: VectorFn1,
    hessian_s: Option<MatrixFn1>,
}

impl fmt::Debug for HamiltonianPdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianPdeSystem")
            .field("dim", &self.dim)
            .field("m", &self.m)
            .field("k", &self.k)
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

impl HamiltonianPdeSystem {
    pub fn new(
        m: DMatrix<f64>,
        k: DMatrix<f64>,
        epsilon: f64,
        s: ScalarFn1,
        grad_s: VectorFn1,
    ) -> Result<Self> {
        let dim = m.nrows();
        if dim == 0 {
            return Err(Error::Validation("dimension must be positive".into()));
        }
        for a in [&m, &k] {
            if a.nrows() != dim || a.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: if a.nrows() != dim {
                        a.nrows()
                    } else {
                        a.ncols()
                    },
                });
            }
            if (a + a.transpose()).amax() > ANTISYMMETRY_TOL {
                return Err(Error::Validation("M and K must be antisymmetric".into()));
            }
        }
        if epsilon != 1.0 && epsilon != -1.0 {
            return Err(Error::OutOfRange {
                name: "epsilon",
                value: epsilon,
                range: "±1",
            });
        }
        for (z, _) in sample_points(dim, VALIDATION_POINTS) {
            let g = grad_s(&z);
            check_len(dim, g.len())?;
            validate_gradient("∇S", &g, |x| s(x), &z)?;
        }
        Ok(Self {
            dim,
            m,
            k,
            epsilon,
            s,
            grad_s,
            hessian_s: None,
        })
    }

    /// Attaches `∇²S`, checked for symmetry and against differences of `∇S`.
    pub fn with_hessian(mut self, hessian: MatrixFn1) -> Result<Self> {
        let d = self.dim;
        for (z, _) in sample_points(d, VALIDATION_POINTS) {
            let hz = hessian(&z);
            if hz.nrows() != d || hz.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: hz.nrows(),
                });
            }
            if (&hz - hz.transpose()).amax() > 1e-12 {
                return Err(Error::Validation("Hessian of S is not symmetric".into()));
            }
            let fd = self.fd_hessian(&z);
            if hz
                .iter()
                .zip(fd.iter())
                .any(|(a, b)| !close_rel(*a, *b, 1e-6))
            {
                return Err(Error::Validation(
                    "Hessian of S disagrees with finite differences".into(),
                ));
            }
        }
        self.hessian_s = Some(hessian);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn s(&self, z: &[f64]) -> f64 {
        (self.s)(z)
    }

    pub fn grad_s(&self, z: &[f64]) -> Vec<f64> {
        (self.grad_s)(z)
    }

    pub fn has_hessian(&self) -> bool {
        self.hessian_s.is_some()
    }

    pub fn hessian_s(&self, z: &[f64]) -> Option<DMatrix<f64>> {
        self.hessian_s.as_ref().map(|h| h(z))
    }

    fn fd_hessian(&self, z: &[f64]) -> DMatrix<f64> {
        fd_jacobian(
            |w| DVector::from_vec(self.grad_s(w.as_slice())),
            &DVector::from_column_slice(z),
            1e-6,
        )
    }

    fn hessian_or_fd(&self, z: &[f64]) -> DMatrix<f64> {
        self.hessian_s(z).unwrap_or_else(|| self.fd_hessian(z))
    }

    /// Time 2-form `ω⁰(ξ, η) = -ξᵀ M η`.
    pub fn omega_time(&self, xi: &[f64], eta: &[f64]) -> f64 {
        -bilinear(&self.m, xi, eta)
    }

    /// Space 2-form `ω¹(ξ, η) = -ξᵀ K η`.
    pub fn omega_space(&self, xi: &[f64], eta: &[f64]) -> f64 {
        -bilinear(&self.k, xi, eta)
    }

    /// Box-scheme residual of one cell with corners
    /// `[Z^{(i,j)}, Z^{(i,j+1)}, Z^{(i+1,j)}, Z^{(i+1,j+1)}]`.
    pub fn cell_residual(&self, c: [&[f64]; 4], tau: f64, h: f64) -> Vec<f64> {
        let d = self.dim;
        let dt = DVector::from_fn(d, |a, _| {
            0.5 * (c[2][a] + c[3][a] - c[0][a] - c[1][a]) / tau
        });
        let dx = DVector::from_fn(d, |a, _| 0.5 * (c[1][a] + c[3][a] - c[0][a] - c[2][a]) / h);
        let avg: Vec<f64> = (0..d)
            .map(|a| 0.25 * (c[0][a] + c[1][a] + c[2][a] + c[3][a]))
            .collect();
        let r = &self.m * dt + &self.k * dx * self.epsilon - DVector::from_vec(self.grad_s(&avg));
        r.data.into()
    }

    /// `∂r/∂Z` for the four corners of a cell, in corner order. `None` without
    /// an analytic Hessian of `S`.
    pub fn cell_jacobian(&self, c: [&[f64]; 4], tau: f64, h: f64) -> Option<[DMatrix<f64>; 4]> {
        let hess = self.hessian_s(&cell_average(c))?;
        Some(self.cell_blocks(&hess, tau, h))
    }

    fn cell_blocks(&self, hess: &DMatrix<f64>, tau: f64, h: f64) -> [DMatrix<f64>; 4] {
        let mt = &self.m / (2.0 * tau);
        let kx = &self.k * (self.epsilon / (2.0 * h));
        let q = hess * 0.25;
        [
            -&mt - &kx - &q,
            -&mt + &kx - &q,
            &mt - &kx - &q,
            &mt + &kx - &q,
        ]
    }
}

fn bilinear(a: &DMatrix<f64>, xi: &[f64], eta: &[f64]) -> f64 {
    let e = DVector::from_column_slice(eta);
    DVector::from_column_slice(xi).dot(&(a * e))
}

fn cell_average(c: [&[f64]; 4]) -> Vec<f64> {
    (0..c[0].len())
        .map(|a| 0.25 * (c[0][a] + c[1][a] + c[2][a] + c[3][a]))
        .collect()
}

/// One time slice `Z^{(i,·)}` on a periodic spatial grid, node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRow {
    h: f64,
    dim: usize,
    values: Vec<f64>,
}

impl FieldRow {
    pub fn new(h: f64, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim.max(1) * (values.len() / dim.max(1) + 1),
                got: values.len(),
            });
        }
        check_spatial(values.len() / dim, h)?;
        Ok(Self { h, dim, values })
    }

    pub fn from_fn(h: f64, dim: usize, n: usize, f: impl Fn(usize) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(n * dim);
        for j in 0..n {
            let z = f(j);
            check_len(dim, z.len())?;
            values.extend(z);
        }
        Self::new(h, dim, values)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            h: self.h,
            dim: self.dim,
            values: vec![0.0; self.values.len()],
        }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `Z^{(·,j)}`, with periodic wrap-around.
    pub fn node(&self, j: usize) -> &[f64] {
        let j = j % self.len();
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Component `a` at every node.
    pub fn component(&self, a: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(a)
            .step_by(self.dim)
            .copied()
            .collect()
    }

    fn compatible(&self, other: &Self) -> Result<()> {
        check_len(self.values.len(), other.values.len())?;
        if self.dim != other.dim || self.h != other.h {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }
}

/// A scalar field and, for canonical runs, its momenta over a time × space lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid2 {
    pub grid: Grid2D,
    pub u: NodeFunction,
    pub pi: Option<NodeFunction>,
}

impl FieldGrid2 {
    /// Stacks rows `u^{(i,·)}` (and optionally `π^{(i,·)}`) into a lattice
    /// that is periodic in space.
    pub fn from_rows(tau: f64, h: f64, u: &[Vec<f64>], pi: Option<&[Vec<f64>]>) -> Result<Self> {
        let rows = u.len();
        let n = u.first().map_or(0, Vec::len);
        let grid = Grid2D::new([tau, h], [rows, n], [false, true])?;
        let stack = |r: &[Vec<f64>]| -> Result<NodeFunction> {
            check_len(rows, r.len())?;
            let mut v = Vec::with_capacity(rows * n);
            for row in r {
                check_len(n, row.len())?;
                v.extend_from_slice(row);
            }
            NodeFunction::new(grid, v)
        };
        Ok(Self {
            u: stack(u)?,
            pi: pi.map(stack).transpose()?,
            grid,
        })
    }
}

/// Residual of the discrete field Euler-Lagrange equation at the centre of a
/// 3×3 neighbourhood `nbhd[a][b] = u^{(i+a-1, j+b-1)}`:
///
/// `∂𝓛^{(i,j)}/∂u - ∇_t ∂𝓛/∂(Δ_t u) - ∇_x ∂𝓛/∂(Δ_x u)`,
///
/// with backward differences `∇_t f^{(i,j)} = (f^{(i,j)} - f^{(i-1,j)})/τ`.
/// The corner entries enter only through densities whose `Δ_x` slot couples
/// across a diagonal.
pub fn field_del_residual(
    l: &DiscreteFieldLagrangian,
    nbhd: &[[f64; 3]; 3],
    tau: f64,
    h: f64,
) -> Result<f64> {
    check_step(tau)?;
    check_spatial(3, h)?;
    // density partials at lattice node (a, b) of the neighbourhood
    let partial = |a: usize, b: usize| {
        let u = nbhd[a][b];
        l.grad(u, (nbhd[a + 1][b] - u) / tau, (nbhd[a][b + 1] - u) / h)
    };
    let centre = partial(1, 1);
    let below = partial(0, 1);
    let left = partial(1, 0);
    Ok(centre[0] - (centre[1] - below[1]) / tau - (centre[2] - left[2]) / h)
}

fn nbhd(prev: &[f64], cur: &[f64], next: &[f64], j: usize) -> [[f64; 3]; 3] {
    let n = cur.len();
    let (jm, jp) = ((j + n - 1) % n, (j + 1) % n);
    [
        [prev[jm], prev[j], prev[jp]],
        [cur[jm], cur[j], cur[jp]],
        [next[jm], next[j], next[jp]],
    ]
}

/// Residuals of [`field_del_residual`] at every node of row `i`.
pub fn field_del_row_residual(
    l: &DiscreteFieldLagrangian,
    prev: &[f64],
    cur: &[f64],
    next: &[f64],
    tau: f64,
    h: f64,
) -> Result<Vec<f64>> {
    check_len(cur.len(), prev.len())?;
    check_len(cur.len(), next.len())?;
    check_spatial(cur.len(), h)?;
    (0..cur.len())
        .map(|j| field_del_residual(l, &nbhd(prev, cur, next, j), tau, h))
        .collect()
}

/// Next row of the discrete field Euler-Lagrange equations on a periodic row.
///
/// For the Lorentzian wave density this is the explicit leapfrog update
/// `u^{i+1} = 2u^i - u^{i-1} + (τ/h)² D²u^i - τ² V'(u^i)`; other densities are
/// solved by Newton on the whole row.
pub fn field_del_step(
    l: &DiscreteFieldLagrangian,
    prev: &[f64],
    cur: &[f64],
    tau: f64,
    h: f64,
    settings: &SolverSettings,
) -> Result<Vec<f64>> {
    check_step(tau)?;
    check_len(cur.len(), prev.len())?;
    let n = cur.len();
    check_spatial(n, h)?;
    if tau > h {
        warn!("τ/h = {} exceeds the leapfrog CFL limit 1", tau / h);
    }
    if let Some((Signature::Lorentzian, dv)) = &l.wave {
        let r = tau * tau / (h * h);
        return Ok((0..n)
            .map(|j| {
                let (um, u, up) = (cur[(j + n - 1) % n], cur[j], cur[(j + 1) % n]);
                2.0 * u - prev[j] + r * (up - 2.0 * u + um) - tau * tau * dv(&[u])
            })
            .collect());
    }
    let seed = DVector::from_fn(n, |j, _| 2.0 * cur[j] - prev[j]);
    let residual = |x: &DVector<f64>| {
        DVector::from_vec(
            field_del_row_residual(l, prev, cur, x.as_slice(), tau, h).expect("validated row"),
        )
    };
    let next = newton(residual, |x| fd_jacobian(residual, x, 1e-6), seed, settings)?;
    Ok(next.data.into())
}

/// One step of the canonical field equations
///
/// `Δ_t u^{(i,j)} = ∂𝓗/∂π`, `Δ_t π^{(i,j)} = -∂𝓗/∂u + ∇_x ∂𝓗/∂w`,
///
/// with every density evaluated at `(u^{(i,j)}, π^{(i+1,j)}, Δ_x u^{(i,j)})`.
/// Explicit for separable densities, Newton on the momentum row otherwise.
pub fn field_canonical_step(
    hd: &FieldHamiltonian,
    u: &[f64],
    pi: &[f64],
    tau: f64,
    h: f64,
    settings: &SolverSettings,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_step(tau)?;
    check_len(u.len(), pi.len())?;
    let n = u.len();
    check_spatial(n, h)?;
    if tau > h {
        warn!("τ/h = {} exceeds the leapfrog CFL limit 1", tau / h);
    }
    let w: Vec<f64> = (0..n).map(|j| (u[(j + 1) % n] - u[j]) / h).collect();
    // π^{i+1} - π^i - τ(-∂_u𝓗 + ∇_x ∂_w𝓗) as a function of π^{i+1}
    let momentum_residual = |p: &[f64]| -> Vec<f64> {
        let g: Vec<[f64; 3]> = (0..n).map(|j| hd.grad(u[j], p[j], w[j])).collect();
        (0..n)
            .map(|j| {
                let div = (g[j][2] - g[(j + n - 1) % n][2]) / h;
                p[j] - pi[j] - tau * (-g[j][0] + div)
            })
            .collect()
    };
    let pi_next: Vec<f64> = if hd.is_separable() {
        let r = momentum_residual(pi);
        pi.iter().zip(r).map(|(p, r)| p - r).collect()
    } else {
        let residual = |x: &DVector<f64>| DVector::from_vec(momentum_residual(x.as_slice()));
        newton(
            residual,
            |x| fd_jacobian(residual, x, 1e-6),
            DVector::from_column_slice(pi),
            settings,
        )?
        .data
        .into()
    };
    let u_next = (0..n)
        .map(|j| u[j] + tau * hd.grad(u[j], pi_next[j], w[j])[1])
        .collect();
    Ok((u_next, pi_next))
}

/// Stacked box residuals of all cells between rows `x = Z^{(i,·)}` and `y = Z^{(i+1,·)}`.
fn box_row_residual(sys: &HamiltonianPdeSystem, x: &FieldRow, y: &[f64], tau: f64) -> DVector<f64> {
    let (d, n) = (x.dim, x.len());
    let mut r = DVector::zeros(n * d);
    for j in 0..n {
        let jp = (j + 1) % n;
        let c = [
            x.node(j),
            x.node(jp),
            &y[j * d..(j + 1) * d],
            &y[jp * d..(jp + 1) * d],
        ];
        r.rows_mut(j * d, d)
            .copy_from_slice(&sys.cell_residual(c, tau, x.h));
    }
    r
}

/// Cyclic block-bidiagonal Jacobians of the stacked residual with respect to
/// the old row (`x`) and the new row (`y`).
fn box_row_jacobians(
    sys: &HamiltonianPdeSystem,
    x: &FieldRow,
    y: &[f64],
    tau: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (d, n) = (x.dim, x.len());
    let mut jx = DMatrix::zeros(n * d, n * d);
    let mut jy = DMatrix::zeros(n * d, n * d);
    for j in 0..n {
        let jp = (j + 1) % n;
        let c = [
            x.node(j),
            x.node(jp),
            &y[j * d..(j + 1) * d],
            &y[jp * d..(jp + 1) * d],
        ];
        let hess = sys.hessian_or_fd(&cell_average(c));
        let [b00, b01, b10, b11] = sys.cell_blocks(&hess, tau, x.h);
        let add = |m: &mut DMatrix<f64>, col: usize, b: &DMatrix<f64>| {
            let mut v = m.view_mut((j * d, col * d), (d, d));
            v += b;
        };
        add(&mut jx, j, &b00);
        add(&mut jx, jp, &b01);
        add(&mut jy, j, &b10);
        add(&mut jy, jp, &b11);
    }
    (jx, jy)
}

/// Next row of the midpoint box scheme.
///
/// All `N·d` unknowns are solved together (periodic coupling rules out a cell
/// sweep), seeded with the current row. The Jacobian is refreshed whenever
/// the residual contracts by less than a factor 4. Corrections are
/// minimum-norm least-squares solutions: for odd `d`, `K` is singular and the
/// row Jacobian has a consistent null space (a checkerboard mode) on even
/// periodic grids.
pub fn box_step_row(
    sys: &HamiltonianPdeSystem,
    row: &FieldRow,
    tau: f64,
    settings: &SolverSettings,
) -> Result<FieldRow> {
    check_step(tau)?;
    check_len(sys.dim, row.dim)?;
    let mut y = DVector::from_column_slice(&row.values);
    let mut r = box_row_residual(sys, row, y.as_slice(), tau);
    let mut svd = None;
    let mut last = f64::INFINITY;
    for iteration in 0..settings.max_iterations {
        let norm = r.norm();
        if !norm.is_finite() {
            return Err(Error::NoConvergence {
                iterations: iteration,
                residual: norm,
            });
        }
        if norm <= settings.tolerance {
            return FieldRow::new(row.h, row.dim, y.data.into());
        }
        if svd.is_none() || norm > 0.25 * last {
            let (_, jy) = box_row_jacobians(sys, row, y.as_slice(), tau);
            let f = MinNormFactor::new(jy);
            if f.rank() < f.size() {
                debug!("box row Jacobian rank {} of {}", f.rank(), f.size());
            }
            svd = Some(f);
        }
        last = norm;
        let dy = svd.as_ref().expect("factorised above").solve(&(-&r))?;
        let stalled = dy.norm() <= 4.0 * f64::EPSILON * (1.0 + y.norm());
        y += dy;
        r = box_row_residual(sys, row, y.as_slice(), tau);
        if stalled && r.norm() <= 100.0 * settings.tolerance {
            return FieldRow::new(row.h, row.dim, y.data.into());
        }
    }
    let norm = r.norm();
    if norm <= settings.tolerance {
        FieldRow::new(row.h, row.dim, y.data.into())
    } else {
        Err(Error::NoConvergence {
            iterations: settings.max_iterations,
            residual: norm,
        })
    }
}

/// Linearised box step: solves `J_y δy = -J_x δx` at the computed pair of rows
/// for each tangent row (minimum-norm when `J_y` is rank deficient).
pub fn box_tangent_rows(
    sys: &HamiltonianPdeSystem,
    row: &FieldRow,
    next: &FieldRow,
    tangents: &[FieldRow],
    tau: f64,
) -> Result<Vec<FieldRow>> {
    check_step(tau)?;
    row.compatible(next)?;
    if tangents.is_empty() {
        return Ok(Vec::new());
    }
    let (jx, jy) = box_row_jacobians(sys, row, &next.values, tau);
    let factor = MinNormFactor::new(jy);
    tangents
        .iter()
        .map(|t| {
            row.compatible(t)?;
            let rhs = -(&jx * DVector::from_column_slice(&t.values));
            let dy = factor.solve(&rhs)?;
            FieldRow::new(row.h, row.dim, dy.data.into())
        })
        .collect()
}

/// Advances a row and its tangent rows by one box step.
pub fn box_advance(
    sys: &HamiltonianPdeSystem,
    row: &FieldRow,
    tangents: &[FieldRow],
    tau: f64,
    settings: &SolverSettings,
) -> Result<(FieldRow, Vec<FieldRow>)> {
    let next = box_step_row(sys, row, tau, settings)?;
    let t = box_tangent_rows(sys, row, &next, tangents, tau)?;
    Ok((next, t))
}

/// Max-norm of the stacked cell residuals between two rows.
pub fn box_row_residual_norm(
    sys: &HamiltonianPdeSystem,
    row: &FieldRow,
    next: &FieldRow,
    tau: f64,
) -> Result<f64> {
    row.compatible(next)?;
    Ok(box_row_residual(sys, row, &next.values, tau).amax())
}

/// `ω⁰_{i,j}(ξ, η) = -ξ̄ᵀ M η̄` at the edge average `(i, j+½)`.
pub fn omega_time_edge(sys: &HamiltonianPdeSystem, xi: &FieldRow, eta: &FieldRow, j: usize) -> f64 {
    let avg = |r: &FieldRow| -> Vec<f64> {
        r.node(j)
            .iter()
            .zip(r.node(j + 1))
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    };
    sys.omega_time(&avg(xi), &avg(eta))
}

/// `Σ_j ω⁰_{i,j}` over a periodic row; invariant from row to row for tangents
/// of the box scheme since the `Δ_x` part telescopes.
pub fn omega0_row_sum(sys: &HamiltonianPdeSystem, xi: &FieldRow, eta: &FieldRow) -> Result<f64> {
    xi.compatible(eta)?;
    check_len(sys.dim, xi.dim)?;
    Ok((0..xi.len())
        .map(|j| omega_time_edge(sys, xi, eta, j))
        .sum())
}

/// Per-cell multisymplectic residuals
/// `r_{i,j} = (ω⁰_{i+1,j} - ω⁰_{i,j})/τ + ε(ω¹_{i,j+1} - ω¹_{i,j})/h`
/// for two tangent row sequences, cells ordered row-major in `(i, j)`.
pub fn multisymplectic_residual(
    sys: &HamiltonianPdeSystem,
    rows: &[FieldRow],
    xi: &[FieldRow],
    eta: &[FieldRow],
    tau: f64,
) -> Result<ResidualSeries> {
    check_step(tau)?;
    if xi.is_empty() || eta.is_empty() {
        return Err(Error::MissingTangents(xi.len().min(eta.len())));
    }
    check_len(rows.len(), xi.len())?;
    check_len(rows.len(), eta.len())?;
    for ((r, a), b) in rows.iter().zip(xi).zip(eta) {
        check_len(sys.dim, r.dim)?;
        r.compatible(a)?;
        r.compatible(b)?;
    }
    let h = rows[0].h;
    let n = rows[0].len();
    let eps = sys.epsilon;
    let mut values = Vec::with_capacity(rows.len().saturating_sub(1) * n);
    for i in 0..rows.len().saturating_sub(1) {
        // ω¹ at column j between rows i and i+1
        let om1: Vec<f64> = (0..n)
            .map(|j| {
                let avg = |r: &[FieldRow]| -> Vec<f64> {
                    r[i].node(j)
                        .iter()
                        .zip(r[i + 1].node(j))
                        .map(|(a, b)| 0.5 * (a + b))
                        .collect()
                };
                sys.omega_space(&avg(xi), &avg(eta))
            })
            .collect();
        for j in 0..n {
            let t0 = omega_time_edge(sys, &xi[i], &eta[i], j);
            let t1 = omega_time_edge(sys, &xi[i + 1], &eta[i + 1], j);
            values.push((t1 - t0) / tau + eps * (om1[(j + 1) % n] - om1[j]) / h);
        }
    }
    Ok(ResidualSeries::new(tau, values))
}

/// Discrete energy `h Σ_j [S(Z_j) - ½ε Z_jᵀ K (Z_{j+1} - Z_{j-1})/(2h)]` of a
/// Bridges-form row.
pub fn bridges_energy(sys: &HamiltonianPdeSystem, row: &FieldRow) -> Result<f64> {
    check_len(sys.dim, row.dim)?;
    let (n, h) = (row.len(), row.h);
    Ok(h * (0..n)
        .map(|j| {
            let z = row.node(j);
            let dz: Vec<f64> = row
                .node(j + 1)
                .iter()
                .zip(row.node(j + n - 1))
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect();
            sys.s(z) - 0.5 * sys.epsilon * bilinear(&sys.k, z, &dz)
        })
        .sum::<f64>())
}
