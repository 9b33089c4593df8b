//! Newton iteration and finite-difference derivatives shared by the implicit steppers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Stopping rule for the Newton solves behind every implicit scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Residual norm accepted as converged.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 50,
        }
    }
}

/// Solves `A x = b` by LU with partial pivoting; a singular matrix is an error.
pub(crate) fn solve_linear(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let lu = a.lu();
    let u = lu.u();
    let min_pivot = u
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min_pivot <= 1e-14 * scale {
        return Err(Error::Singular(format!(
            "pivot {min_pivot:e} relative to matrix scale {scale:e}"
        )));
    }
    lu.solve(b)
        .ok_or_else(|| Error::Singular("LU solve failed".into()))
}

type Svd = nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>;

fn reconstruction_error(svd: &Svd, a: &DMatrix<f64>) -> f64 {
    let (Some(u), Some(v_t)) = (&svd.u, &svd.v_t) else {
        return f64::INFINITY;
    };
    (u * DMatrix::from_diagonal(&svd.singular_values) * v_t - a).amax()
}

/// SVD kept for repeated minimum-norm solves with one matrix.
pub(crate) struct MinNormFactor {
    a: DMatrix<f64>,
    svd: Svd,
    cutoff: f64,
}

impl MinNormFactor {
    /// Singular values below `σ_max · 1e-11 · n` are treated as zero.
    ///
    /// The bidiagonal QR iteration occasionally stops with factors that
    /// reproduce `a` only to ~1e-5, so the factorisation is checked and, if
    /// needed, recomputed from the transpose or with a tighter threshold.
    pub(crate) fn new(a: DMatrix<f64>) -> Self {
        let n = a.nrows();
        let accept = 1e-13 * (n as f64) * a.amax().max(f64::MIN_POSITIVE);
        let mut best: Option<(f64, Svd)> = None;
        for attempt in 0..3 {
            let svd = match attempt {
                0 => a.clone().svd(true, true),
                1 => {
                    let t = a.transpose().svd(true, true);
                    Svd {
                        u: t.v_t.map(|m| m.transpose()),
                        v_t: t.u.map(|m| m.transpose()),
                        singular_values: t.singular_values,
                    }
                }
                _ => match a.clone().try_svd(true, true, f64::EPSILON, 0) {
                    Some(svd) => svd,
                    None => continue,
                },
            };
            let err = reconstruction_error(&svd, &a);
            if best.as_ref().is_none_or(|(e, _)| err < *e) {
                best = Some((err, svd));
            }
            if err <= accept {
                break;
            }
        }
        let (err, svd) = best.expect("the first attempt always yields factors");
        if err > accept {
            log::debug!("SVD reconstruction error {err:e}; relying on refinement");
        }
        let cutoff = svd.singular_values.max() * 1e-11 * n as f64;
        Self { a, svd, cutoff }
    }

    pub(crate) fn rank(&self) -> usize {
        self.svd
            .singular_values
            .iter()
            .filter(|v| **v > self.cutoff)
            .count()
    }

    pub(crate) fn size(&self) -> usize {
        self.svd.singular_values.len()
    }

    /// Minimum-norm solution, polished by a few steps of iterative refinement
    /// against the original matrix.
    pub(crate) fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let pinv = |r: &DVector<f64>| {
            self.svd
                .solve(r, self.cutoff)
                .map_err(|e| Error::Singular(e.to_string()))
        };
        let mut x = pinv(b)?;
        for _ in 0..4 {
            let dx = pinv(&(b - &self.a * &x))?;
            x += &dx;
            if dx.amax() <= 4.0 * f64::EPSILON * x.amax() {
                break;
            }
        }
        Ok(x)
    }
}

/// Newton's method for `F(x) = 0` with a user Jacobian.
///
/// The iterate is accepted once `‖F‖ ≤ tolerance`, or once corrections have
/// dropped to rounding level with `‖F‖` within a factor 100 of it. Non-finite residuals abort
/// immediately with [`Error::NoConvergence`].
pub(crate) fn newton<F, J>(
    residual: F,
    jacobian: J,
    seed: DVector<f64>,
    settings: &SolverSettings,
) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let mut x = seed;
    let mut r = residual(&x);
    for iteration in 0..settings.max_iterations {
        let norm = r.norm();
        if !norm.is_finite() {
            return Err(Error::NoConvergence {
                iterations: iteration,
                residual: norm,
            });
        }
        if norm <= settings.tolerance {
            return Ok(x);
        }
        let dx = solve_linear(jacobian(&x), &(-&r))?;
        let stalled = dx.norm() <= 4.0 * f64::EPSILON * (1.0 + x.norm());
        x += dx;
        r = residual(&x);
        // Corrections at rounding level cannot reduce the residual further.
        if stalled && r.norm() <= 100.0 * settings.tolerance {
            return Ok(x);
        }
    }
    let norm = r.norm();
    if norm <= settings.tolerance {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            iterations: settings.max_iterations,
            residual: norm,
        })
    }
}

/// Central-difference Jacobian of a vector map.
pub(crate) fn fd_jacobian<F>(f: F, x: &DVector<f64>, rel_step: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let e = rel_step * (1.0 + x[k].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += e;
        xm[k] -= e;
        cols.push((f(&xp) - f(&xm)) / (2.0 * e));
    }
    DMatrix::from_columns(&cols)
}

/// Central-difference gradient of a scalar function with a single step `e`.
pub(crate) fn fd_gradient<F>(f: F, x: &[f64], e: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut y = x.to_vec();
    (0..x.len())
        .map(|k| {
            y[k] = x[k] + e;
            let fp = f(&y);
            y[k] = x[k] - e;
            let fm = f(&y);
            y[k] = x[k];
            (fp - fm) / (2.0 * e)
        })
        .collect()
}

/// Relative agreement test used by the construction-time validators.
pub(crate) fn close_rel(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}
