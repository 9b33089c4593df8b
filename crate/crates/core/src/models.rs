//! Benchmark systems.
//!
//! | name                  | kind      | parameters (default)            |
//! |-----------------------|-----------|---------------------------------|
//! | `harmonic`            | mechanics | `omega` (1), `mass` (1), `dim` (1) |
//! | `pendulum`            | mechanics | `mass` (1), `dim` (1)           |
//! | `quartic`             | mechanics | `mass` (1), `dim` (1)           |
//! | `nonlinear_wave`      | wave      | `mass` (1), `lambda` (1)        |
//! | `sine_gordon_bridges` | Bridges   | none                            |
//! | `linear_wave_bridges` | Bridges   | `mass` (1)                      |

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field::{
    DiscreteFieldLagrangian, FieldHamiltonian, FieldRow, HamiltonianPdeSystem, MatrixFn1, Signature,
};
use crate::mechanics::{
    DiscreteLagrangian, HamiltonianSystem, MatrixFn2, PhasePoint, ScalarFn1, ScalarFn2, VectorFn1,
    VectorFn2,
};

/// What a model constructs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mechanics,
    Wave,
    Bridges,
}

/// `(name, kind, parameter defaults)`.
type Entry = (&'static str, ModelKind, &'static [(&'static str, f64)]);

const REGISTRY: &[Entry] = &[
    (
        "harmonic",
        ModelKind::Mechanics,
        &[("omega", 1.0), ("mass", 1.0), ("dim", 1.0)],
    ),
    (
        "pendulum",
        ModelKind::Mechanics,
        &[("mass", 1.0), ("dim", 1.0)],
    ),
    (
        "quartic",
        ModelKind::Mechanics,
        &[("mass", 1.0), ("dim", 1.0)],
    ),
    (
        "nonlinear_wave",
        ModelKind::Wave,
        &[("mass", 1.0), ("lambda", 1.0)],
    ),
    ("sine_gordon_bridges", ModelKind::Bridges, &[]),
    ("linear_wave_bridges", ModelKind::Bridges, &[("mass", 1.0)]),
];

/// Registered model names.
pub fn model_names() -> impl Iterator<Item = &'static str> {
    REGISTRY.iter().map(|(n, _, _)| *n)
}

/// A model name with parameter overrides.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelSpec {
    pub name: String,
    pub params: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    fn entry(&self) -> Result<&'static Entry> {
        REGISTRY
            .iter()
            .find(|(n, _, _)| *n == self.name)
            .ok_or_else(|| Error::UnknownModel(self.name.clone()))
    }

    /// Checks the name and every parameter key.
    pub fn validate(&self) -> Result<ModelKind> {
        let (_, kind, known) = self.entry()?;
        for key in self.params.keys() {
            if !known.iter().any(|(k, _)| k == key) {
                return Err(Error::UnknownParameter {
                    model: self.name.clone(),
                    parameter: key.clone(),
                });
            }
        }
        Ok(*kind)
    }

    pub fn kind(&self) -> Result<ModelKind> {
        self.validate()
    }

    /// Parameter value, falling back to the registered default.
    pub fn param(&self, key: &str) -> Result<f64> {
        let (_, _, known) = self.entry()?;
        if let Some(v) = self.params.get(key) {
            return Ok(*v);
        }
        known
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::MissingParameter {
                model: self.name.clone(),
                parameter: key.into(),
            })
    }

    fn positive(&self, key: &'static str) -> Result<f64> {
        let v = self.param(key)?;
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::OutOfRange {
                name: key,
                value: v,
                range: "> 0",
            })
        }
    }

    fn dim(&self) -> Result<usize> {
        let v = self.positive("dim")?;
        if v.fract() != 0.0 {
            return Err(Error::OutOfRange {
                name: "dim",
                value: v,
                range: "positive integer",
            });
        }
        Ok(v as usize)
    }
}

/// Componentwise potential `V(q) = Σ φ(q_i)` with its derivatives.
struct Potential {
    phi: fn(f64, f64) -> f64,
    dphi: fn(f64, f64) -> f64,
    ddphi: fn(f64, f64) -> f64,
    coef: f64,
}

fn harmonic_potential(omega: f64) -> Potential {
    Potential {
        phi: |q, w2| 0.5 * w2 * q * q,
        dphi: |q, w2| w2 * q,
        ddphi: |_, w2| w2,
        coef: omega * omega,
    }
}

fn pendulum_potential() -> Potential {
    Potential {
        phi: |q, _| -q.cos(),
        dphi: |q, _| q.sin(),
        ddphi: |q, _| q.cos(),
        coef: 0.0,
    }
}

fn quartic_potential() -> Potential {
    Potential {
        phi: |q, _| 0.25 * q.powi(4),
        dphi: |q, _| q.powi(3),
        ddphi: |q, _| 3.0 * q * q,
        coef: 0.0,
    }
}

/// `(L, H)` with `L = ½ m |Δq|² - V(q)` and `H = |p|²/(2m) + V(q)`.
pub fn make_mechanics(spec: &ModelSpec) -> Result<(DiscreteLagrangian, HamiltonianSystem)> {
    if spec.validate()? != ModelKind::Mechanics {
        return Err(Error::Validation(format!(
            "`{}` is not a mechanics model",
            spec.name
        )));
    }
    let pot = match spec.name.as_str() {
        "harmonic" => harmonic_potential(spec.positive("omega")?),
        "pendulum" => pendulum_potential(),
        "quartic" => quartic_potential(),
        other => return Err(Error::UnknownModel(other.into())),
    };
    let mass = spec.positive("mass")?;
    let dim = spec.dim()?;
    let Potential {
        phi,
        dphi,
        ddphi,
        coef,
    } = pot;

    let v: ScalarFn1 = Arc::new(move |q| q.iter().map(|x| phi(*x, coef)).sum());
    let dv: VectorFn1 = Arc::new(move |q| q.iter().map(|x| dphi(*x, coef)).collect());
    let lagrangian = DiscreteLagrangian::natural(dim, mass, v.clone(), dv.clone())?;

    let eval: ScalarFn2 =
        Arc::new(move |q, p| p.iter().map(|x| x * x).sum::<f64>() / (2.0 * mass) + v(q));
    let grad_q: VectorFn2 = Arc::new(move |q, _| dv(q));
    let grad_p: VectorFn2 = Arc::new(move |_, p| p.iter().map(|x| x / mass).collect());
    let hessian: MatrixFn2 = Arc::new(move |q, _| {
        let n = q.len();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            m[(i, i)] = 1.0 / mass;
            m[(n + i, n + i)] = ddphi(q[i], coef);
        }
        m
    });
    let hamiltonian = HamiltonianSystem::new(dim, eval, grad_q, grad_p)?
        .with_hessian(hessian)?
        .with_separable()?;
    Ok((lagrangian, hamiltonian))
}

/// Exact flow of the harmonic oscillator from `z0` after time `t`.
pub fn harmonic_exact(spec: &ModelSpec, z0: &PhasePoint, t: f64) -> Result<PhasePoint> {
    if spec.name != "harmonic" {
        return Err(Error::Validation(format!(
            "`{}` has no closed-form solution",
            spec.name
        )));
    }
    spec.validate()?;
    let omega = spec.positive("omega")?;
    let mass = spec.positive("mass")?;
    let (c, s) = ((omega * t).cos(), (omega * t).sin());
    let q: Vec<f64> = z0
        .q()
        .iter()
        .zip(z0.p())
        .map(|(q, p)| q * c + p / (mass * omega) * s)
        .collect();
    let p: Vec<f64> = z0
        .q()
        .iter()
        .zip(z0.p())
        .map(|(q, p)| p * c - mass * omega * q * s)
        .collect();
    Ok(PhasePoint::from_pq(&p, &q))
}

/// Scalar wave model in Lagrangian and canonical form.
#[derive(Debug, Clone)]
pub struct WaveModel {
    /// Lorentzian density `½(Δ_t u)² - ½(Δ_x u)² - V(u)`.
    pub lagrangian: DiscreteFieldLagrangian,
    /// `½π² + ½(Δ_x u)² + V(u)`.
    pub hamiltonian: FieldHamiltonian,
}

/// Output of [`make_field`].
#[derive(Debug, Clone)]
pub enum FieldModel {
    Wave(WaveModel),
    Bridges(HamiltonianPdeSystem),
}

impl FieldModel {
    pub fn wave(self) -> Option<WaveModel> {
        match self {
            FieldModel::Wave(w) => Some(w),
            FieldModel::Bridges(_) => None,
        }
    }

    pub fn bridges(self) -> Option<HamiltonianPdeSystem> {
        match self {
            FieldModel::Bridges(b) => Some(b),
            FieldModel::Wave(_) => None,
        }
    }
}

fn bridges_matrices() -> (DMatrix<f64>, DMatrix<f64>) {
    // Z = (u, v, w): rows of M Z_t + K Z_x = ∇S read
    //   -v_t + w_x = S_u,   u_t = S_v,   -u_x = S_w
    let m = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let k = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
    (m, k)
}

/// Bridges system with `S = ½(v² - w²) + F(u)`; then `v = u_t`, `w = u_x` and
/// `u_tt - u_xx = -F'(u)`.
fn bridges_with(
    f: fn(f64, f64) -> f64,
    df: fn(f64, f64) -> f64,
    ddf: fn(f64, f64) -> f64,
    c: f64,
) -> Result<HamiltonianPdeSystem> {
    let (m, k) = bridges_matrices();
    let s: ScalarFn1 = Arc::new(move |z| 0.5 * (z[1] * z[1] - z[2] * z[2]) + f(z[0], c));
    let grad: VectorFn1 = Arc::new(move |z| vec![df(z[0], c), z[1], -z[2]]);
    let hess: MatrixFn1 = Arc::new(move |z| {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![ddf(z[0], c), 1.0, -1.0]))
    });
    HamiltonianPdeSystem::new(m, k, 1.0, s, grad)?.with_hessian(hess)
}

pub fn make_field(spec: &ModelSpec) -> Result<FieldModel> {
    match spec.validate()? {
        ModelKind::Mechanics => Err(Error::Validation(format!(
            "`{}` is not a field model",
            spec.name
        ))),
        ModelKind::Wave => {
            let m2 = spec.positive("mass")?.powi(2);
            let lambda = spec.param("lambda")?;
            let v: ScalarFn1 =
                Arc::new(move |u| 0.5 * m2 * u[0] * u[0] + 0.25 * lambda * u[0].powi(4));
            let dv: ScalarFn1 = Arc::new(move |u| m2 * u[0] + lambda * u[0].powi(3));
            Ok(FieldModel::Wave(WaveModel {
                lagrangian: DiscreteFieldLagrangian::wave(
                    Signature::Lorentzian,
                    v.clone(),
                    dv.clone(),
                )?,
                hamiltonian: FieldHamiltonian::wave(v, dv)?,
            }))
        }
        ModelKind::Bridges => {
            let sys = match spec.name.as_str() {
                "sine_gordon_bridges" => {
                    bridges_with(|u, _| -u.cos(), |u, _| u.sin(), |u, _| u.cos(), 0.0)?
                }
                "linear_wave_bridges" => {
                    let m2 = spec.positive("mass")?.powi(2);
                    bridges_with(|u, c| 0.5 * c * u * u, |u, c| c * u, |_, c| c, m2)?
                }
                other => return Err(Error::UnknownModel(other.into())),
            };
            Ok(FieldModel::Bridges(sys))
        }
    }
}

/// Sine-Gordon kink at `-L/4` and antikink at `+L/4` on the periodic interval
/// `[-L/2, L/2)`, approaching each other with speed `velocity`, as a
/// Bridges row `Z = (u, u_t, u_x)`. The field winds `0 → 2π → 0`, so the
/// data is periodic up to `O(e^{-γL/4})`.
pub fn kink_antikink_row(n: usize, length: f64, velocity: f64) -> Result<FieldRow> {
    if !(velocity.abs() < 1.0) {
        return Err(Error::OutOfRange {
            name: "velocity",
            value: velocity,
            range: "(-1, 1)",
        });
    }
    if !(length > 0.0) {
        return Err(Error::OutOfRange {
            name: "length",
            value: length,
            range: "> 0",
        });
    }
    let h = length / n as f64;
    let gamma = 1.0 / (1.0 - velocity * velocity).sqrt();
    let (x0, x1) = (-0.25 * length, 0.25 * length);
    let sech = |s: f64| 1.0 / s.cosh();
    FieldRow::from_fn(h, 3, n, |j| {
        let x = -0.5 * length + j as f64 * h;
        let (s0, s1) = (gamma * (x - x0), gamma * (x - x1));
        let u = 4.0 * s0.exp().atan() + 4.0 * (-s1).exp().atan() - 2.0 * PI;
        let ut = -2.0 * gamma * velocity * (sech(s0) + sech(s1));
        let ux = 2.0 * gamma * (sech(s0) - sech(s1));
        vec![u, ut, ux]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanics::hamiltonian_from_lagrangian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mechanics_examples() {
        let (_, h) = make_mechanics(&ModelSpec::new("harmonic").with("omega", 1.0)).unwrap();
        assert_eq!(h.eval(&[1.0], &[0.0]), 0.5);
        let (_, h) = make_mechanics(&ModelSpec::new("pendulum")).unwrap();
        assert_eq!(h.grad_q(&[0.0], &[0.0]), vec![0.0]);
        let (_, h) = make_mechanics(&ModelSpec::new("quartic").with("dim", 2.0)).unwrap();
        assert_eq!(h.dim(), 2);
    }

    #[test]
    fn registry_errors() {
        assert!(matches!(
            make_mechanics(&ModelSpec::new("duffing")),
            Err(Error::UnknownModel(_))
        ));
        assert!(matches!(
            make_mechanics(&ModelSpec::new("pendulum").with("omega", 2.0)),
            Err(Error::UnknownParameter { .. })
        ));
        assert!(make_mechanics(&ModelSpec::new("harmonic").with("dim", 1.5)).is_err());
        assert!(make_mechanics(&ModelSpec::new("harmonic").with("mass", -1.0)).is_err());
        assert!(make_mechanics(&ModelSpec::new("sine_gordon_bridges")).is_err());
        assert!(make_field(&ModelSpec::new("harmonic")).is_err());
        assert_eq!(model_names().count(), 6);
    }

    #[test]
    fn legendre_pairs_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for name in ["harmonic", "pendulum", "quartic"] {
            let spec = ModelSpec::new(name).with("mass", 1.7);
            let (l, h) = make_mechanics(&spec).unwrap();
            for _ in 0..10 {
                let q0 = [rng.gen_range(-2.0..2.0)];
                let q1 = [rng.gen_range(-2.0..2.0)];
                let tau = rng.gen_range(0.01..0.5);
                let p = crate::mechanics::discrete_legendre(&l, &q0, &q1, tau).unwrap();
                let hd = hamiltonian_from_lagrangian(&l, &q0, &q1, tau).unwrap();
                assert!((hd - h.eval(&q0, &p)).abs() <= 1e-12 * (1.0 + hd.abs()));
            }
        }
    }

    #[test]
    fn sine_gordon_structure() {
        let sys = make_field(&ModelSpec::new("sine_gordon_bridges"))
            .unwrap()
            .bridges()
            .unwrap();
        assert_eq!(sys.m() + sys.m().transpose(), DMatrix::zeros(3, 3));
        assert_eq!(sys.k() + sys.k().transpose(), DMatrix::zeros(3, 3));
        assert_eq!(sys.epsilon(), 1.0);
    }

    #[test]
    fn sine_gordon_continuum_identity() {
        // Moving kink u = 4 atan(exp(γ(x - ct))) solves u_tt - u_xx = -sin u.
        // With Z = (u, u_t, u_x), M Z_t + K Z_x - ∇S must vanish; derivatives by
        // central differences in (t, x).
        let sys = make_field(&ModelSpec::new("sine_gordon_bridges"))
            .unwrap()
            .bridges()
            .unwrap();
        let c: f64 = 0.4;
        let g = 1.0 / (1.0 - c * c).sqrt();
        let z = |t: f64, x: f64| {
            let s = g * (x - c * t);
            let sech = 1.0 / s.cosh();
            vec![4.0 * s.exp().atan(), -2.0 * g * c * sech, 2.0 * g * sech]
        };
        let e = 1e-5;
        for (t, x) in [(0.0, 0.3), (0.7, -1.1), (1.3, 2.0)] {
            let zt: Vec<f64> = (0..3)
                .map(|a| (z(t + e, x)[a] - z(t - e, x)[a]) / (2.0 * e))
                .collect();
            let zx: Vec<f64> = (0..3)
                .map(|a| (z(t, x + e)[a] - z(t, x - e)[a]) / (2.0 * e))
                .collect();
            let lhs = sys.m() * nalgebra::DVector::from_vec(zt)
                + sys.k() * nalgebra::DVector::from_vec(zx);
            let rhs = nalgebra::DVector::from_vec(sys.grad_s(&z(t, x)));
            assert!((lhs - rhs).amax() <= 1e-8);
        }
    }

    #[test]
    fn linear_wave_has_constant_hessian() {
        let sys = make_field(&ModelSpec::new("linear_wave_bridges").with("mass", 2.0))
            .unwrap()
            .bridges()
            .unwrap();
        let a = sys.hessian_s(&[0.1, 0.2, 0.3]).unwrap();
        let b = sys.hessian_s(&[-3.0, 1.0, 7.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[(0, 0)], 4.0);
    }

    #[test]
    fn wave_model_pair() {
        let w = make_field(&ModelSpec::new("nonlinear_wave"))
            .unwrap()
            .wave()
            .unwrap();
        let l = w.lagrangian.grad(0.5, 0.2, 0.1);
        assert_eq!(l[1], 0.2);
        assert_eq!(l[2], -0.1);
        assert!(w.hamiltonian.is_separable());
    }

    #[test]
    fn kink_antikink_is_nearly_periodic() {
        let row = kink_antikink_row(64, 30.0, 0.2).unwrap();
        let u = row.component(0);
        assert!((u[0] - u[63]).abs() < 0.1);
        let mid = u[32];
        assert!((mid - 2.0 * PI).abs() < 0.01);
        assert!(kink_antikink_row(64, 30.0, 1.0).is_err());
    }
}
