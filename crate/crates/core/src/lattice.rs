//! Difference calculus on regular lattices.
//!
//! Functions live on the nodes of a one- or two-dimensional regular grid. The
//! forward difference along an axis is the basic derivative; moving a function
//! past the differential `dq^i` shifts it by one node along `i`, which makes the
//! exterior algebra noncommutative but keeps `d` nilpotent and (graded) Leibniz.
//!
//! On a non-periodic axis every forward difference or shift drops the last
//! node, so results live on a smaller window anchored at the origin. Binary
//! operations restrict both operands to their common window.

use crate::error::{Error, Result};

/// Uniform one-dimensional node set `t_k = k * step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    step: f64,
    n_nodes: usize,
    periodic: bool,
}

impl Grid1D {
    pub fn new(step: f64, n_nodes: usize, periodic: bool) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "step must be positive, got {step}"
            )));
        }
        if n_nodes < 2 {
            return Err(Error::InvalidGrid(format!(
                "at least 2 nodes required, got {n_nodes}"
            )));
        }
        Ok(Self {
            step,
            n_nodes,
            periodic,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn periodic(&self) -> bool {
        self.periodic
    }

    /// Coordinate of node `k`.
    pub fn node(&self, k: usize) -> f64 {
        k as f64 * self.step
    }
}

/// Regular two-dimensional lattice with independent steps and periodicity per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    steps: [f64; 2],
    extents: [usize; 2],
    periodic: [bool; 2],
}

impl Grid2D {
    pub fn new(steps: [f64; 2], extents: [usize; 2], periodic: [bool; 2]) -> Result<Self> {
        for axis in 0..2 {
            if !(steps[axis] > 0.0 && steps[axis].is_finite()) {
                return Err(Error::InvalidGrid(format!(
                    "step along axis {axis} must be positive, got {}",
                    steps[axis]
                )));
            }
            if extents[axis] < 2 {
                return Err(Error::InvalidGrid(format!(
                    "at least 2 nodes required along axis {axis}, got {}",
                    extents[axis]
                )));
            }
        }
        Ok(Self {
            steps,
            extents,
            periodic,
        })
    }

    /// Doubly periodic lattice.
    pub fn periodic(steps: [f64; 2], extents: [usize; 2]) -> Result<Self> {
        Self::new(steps, extents, [true, true])
    }

    pub fn steps(&self) -> [f64; 2] {
        self.steps
    }

    pub fn extents(&self) -> [usize; 2] {
        self.extents
    }

    pub fn is_periodic(&self) -> [bool; 2] {
        self.periodic
    }

    pub fn len(&self) -> usize {
        self.extents[0] * self.extents[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major index of node `(i, j)`; axis 0 is `i`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.extents[1] + j
    }
}

/// Either lattice geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grid {
    D1(Grid1D),
    D2(Grid2D),
}

impl From<Grid1D> for Grid {
    fn from(g: Grid1D) -> Self {
        Grid::D1(g)
    }
}

impl From<Grid2D> for Grid {
    fn from(g: Grid2D) -> Self {
        Grid::D2(g)
    }
}

impl Grid {
    pub fn dims(&self) -> usize {
        match self {
            Grid::D1(_) => 1,
            Grid::D2(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Grid::D1(g) => g.n_nodes,
            Grid::D2(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn shape(&self) -> Shape {
        match *self {
            Grid::D1(g) => Shape {
                steps: [g.step, 1.0],
                extents: [g.n_nodes, 1],
                periodic: [g.periodic, true],
                dims: 1,
            },
            Grid::D2(g) => Shape {
                steps: g.steps,
                extents: g.extents,
                periodic: g.periodic,
                dims: 2,
            },
        }
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis < self.dims() {
            Ok(())
        } else {
            Err(Error::InvalidDirection {
                direction: axis,
                dims: self.dims(),
            })
        }
    }
}

/// Internal uniform view of both grid kinds (1D grids get a trivial second axis).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Shape {
    steps: [f64; 2],
    extents: [usize; 2],
    periodic: [bool; 2],
    dims: usize,
}

impl Shape {
    fn len(&self) -> usize {
        self.extents[0] * self.extents[1]
    }

    fn index(&self, i: usize, j: usize) -> usize {
        i * self.extents[1] + j
    }

    fn successor(&self, axis: usize, i: usize, j: usize) -> (usize, usize) {
        let mut ij = [i, j];
        ij[axis] += 1;
        if self.periodic[axis] {
            ij[axis] %= self.extents[axis];
        }
        (ij[0], ij[1])
    }

    fn predecessor(&self, axis: usize, i: usize, j: usize) -> (usize, usize) {
        let mut ij = [i, j];
        ij[axis] = (ij[axis] + self.extents[axis] - 1) % self.extents[axis];
        (ij[0], ij[1])
    }

    /// Window left after one forward operation along `axis`.
    fn shrunk(&self, axis: usize) -> Shape {
        let mut s = *self;
        if !s.periodic[axis] {
            s.extents[axis] -= 1;
        }
        s
    }

    fn grid(&self) -> Grid {
        // Derived windows may legitimately hold a single node, so the public
        // constructors (which demand two) are bypassed here.
        match self.dims {
            1 => Grid::D1(Grid1D {
                step: self.steps[0],
                n_nodes: self.extents[0],
                periodic: self.periodic[0],
            }),
            _ => Grid::D2(Grid2D {
                steps: self.steps,
                extents: self.extents,
                periodic: self.periodic,
            }),
        }
    }
}

/// Real-valued function on the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl NodeFunction {
    pub fn new(grid: impl Into<Grid>, values: Vec<f64>) -> Result<Self> {
        let grid = grid.into();
        if grid.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: impl Into<Grid>, c: f64) -> Self {
        let grid = grid.into();
        Self {
            values: vec![c; grid.len()],
            grid,
        }
    }

    pub fn from_fn_1d(grid: Grid1D, f: impl Fn(usize) -> f64) -> Self {
        Self {
            values: (0..grid.n_nodes).map(f).collect(),
            grid: grid.into(),
        }
    }

    pub fn from_fn_2d(grid: Grid2D, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.extents[0] {
            for j in 0..grid.extents[1] {
                values.push(f(i, j));
            }
        }
        Self {
            grid: grid.into(),
            values,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Extents as `[n0, n1]`; one-dimensional functions report `n1 = 1`.
    pub fn extents(&self) -> [usize; 2] {
        self.grid.shape().extents
    }

    /// Value at node `(i, j)`; use `j = 0` for one-dimensional grids.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.shape().index(i, j)]
    }

    fn from_shape(shape: Shape, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(shape.len());
        for i in 0..shape.extents[0] {
            for j in 0..shape.extents[1] {
                values.push(f(i, j));
            }
        }
        Self {
            grid: shape.grid(),
            values,
        }
    }

    /// Restriction to the window `[0, n0) x [0, n1)` of `shape`.
    fn restrict(&self, shape: Shape) -> Self {
        let own = self.grid.shape();
        if own == shape {
            return self.clone();
        }
        Self::from_shape(shape, |i, j| self.values[own.index(i, j)])
    }

    fn pointwise(&self, other: &Self, op: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let shape = common_shape(&[self, other])?;
        let (a, b) = (self.restrict(shape), other.restrict(shape));
        Ok(Self::from_shape(shape, |i, j| {
            op(a.values[shape.index(i, j)], b.values[shape.index(i, j)])
        }))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.pointwise(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.pointwise(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.pointwise(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// Largest absolute value (0 for an empty window).
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Common anchored window of several functions that derive from the same lattice.
fn common_shape(fs: &[&NodeFunction]) -> Result<Shape> {
    let mut shape = fs[0].grid.shape();
    for f in &fs[1..] {
        let s = f.grid.shape();
        if s.dims != shape.dims || s.steps != shape.steps || s.periodic != shape.periodic {
            return Err(Error::GridMismatch);
        }
        for axis in 0..2 {
            if s.periodic[axis] && s.extents[axis] != shape.extents[axis] {
                return Err(Error::GridMismatch);
            }
            shape.extents[axis] = shape.extents[axis].min(s.extents[axis]);
        }
    }
    Ok(shape)
}

fn forward_map(
    f: &NodeFunction,
    axis: usize,
    op: impl Fn(f64, f64) -> f64,
) -> Result<NodeFunction> {
    f.grid.check_axis(axis)?;
    let shape = f.grid.shape();
    if shape.extents[axis] < 2 {
        return Err(Error::InvalidGrid(format!(
            "axis {axis} has fewer than 2 nodes"
        )));
    }
    let out = shape.shrunk(axis);
    Ok(NodeFunction::from_shape(out, |i, j| {
        let (si, sj) = shape.successor(axis, i, j);
        op(f.values[shape.index(i, j)], f.values[shape.index(si, sj)])
    }))
}

/// `(f_{k+1} - f_k) / step` along `axis`.
pub fn forward_difference(f: &NodeFunction, axis: usize) -> Result<NodeFunction> {
    let h = f.grid.shape().steps[axis.min(1)];
    forward_map(f, axis, |a, b| (b - a) / h)
}

/// `f_{k+1}` along `axis`.
pub fn shift(f: &NodeFunction, axis: usize) -> Result<NodeFunction> {
    forward_map(f, axis, |_, b| b)
}

/// `(f_k - f_{k-1}) / step` along `axis`; periodic axes only.
pub fn backward_difference(f: &NodeFunction, axis: usize) -> Result<NodeFunction> {
    f.grid.check_axis(axis)?;
    let shape = f.grid.shape();
    if !shape.periodic[axis] {
        return Err(Error::NotPeriodic);
    }
    let h = shape.steps[axis];
    Ok(NodeFunction::from_shape(shape, |i, j| {
        let (pi, pj) = shape.predecessor(axis, i, j);
        (f.values[shape.index(i, j)] - f.values[shape.index(pi, pj)]) / h
    }))
}

/// One member of the `a`-parameter family of product rules for the forward
/// difference:
///
/// `(a f_{k+1} + (1-a) f_k) Δg_k + Δf_k ((1-a) g_{k+1} + a g_k)`.
///
/// Every `a` in `[0, 1]` reproduces `Δ(fg)`; `a = 1` is the shifted rule used by
/// [`exterior_derivative`] and `a = 1/2` is the averaged rule behind the
/// midpoint schemes.
pub fn product_difference(
    f: &NodeFunction,
    g: &NodeFunction,
    axis: usize,
    a: f64,
) -> Result<NodeFunction> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::OutOfRange {
            name: "a",
            value: a,
            range: "[0, 1]",
        });
    }
    if f.grid.shape() != g.grid.shape() {
        return Err(Error::GridMismatch);
    }
    let (df, dg) = (forward_difference(f, axis)?, forward_difference(g, axis)?);
    let (rf, rg) = (shift(f, axis)?, shift(g, axis)?);
    let shape = df.grid.shape();
    let (f, g) = (f.restrict(shape), g.restrict(shape));
    Ok(NodeFunction::from_shape(shape, |i, j| {
        let k = shape.index(i, j);
        (a * rf.values[k] + (1.0 - a) * f.values[k]) * dg.values[k]
            + df.values[k] * ((1.0 - a) * rg.values[k] + a * g.values[k])
    }))
}

/// `Σ_k step · Δf_k` over a finite, non-periodic 1D grid. The sum telescopes
/// to `f_last - f_first`.
pub fn discrete_integral(f: &NodeFunction) -> Result<f64> {
    let Grid::D1(grid) = f.grid else {
        return Err(Error::InvalidGrid(
            "discrete integral is defined on 1D grids".into(),
        ));
    };
    if grid.periodic {
        return Err(Error::Periodic);
    }
    let df = forward_difference(f, 0)?;
    Ok(df.values.iter().map(|v| grid.step * v).sum())
}

/// Differential form on a 2D lattice.
///
/// Coefficients are stored in the basis `{1}`, `{dq¹, dq²}` or `{dq¹∧dq²}`
/// with the function written to the *left* of the differentials.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeForm {
    degree: usize,
    coefficients: Vec<NodeFunction>,
}

impl LatticeForm {
    pub fn new(degree: usize, coefficients: Vec<NodeFunction>) -> Result<Self> {
        let expected = match degree {
            0 | 2 => 1,
            1 => 2,
            d => return Err(Error::DegreeOverflow(d)),
        };
        if coefficients.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: coefficients.len(),
            });
        }
        let refs: Vec<&NodeFunction> = coefficients.iter().collect();
        let shape = common_shape(&refs)?;
        if shape.dims != 2 {
            return Err(Error::InvalidGrid("forms live on 2D lattices".into()));
        }
        let coefficients = coefficients.iter().map(|c| c.restrict(shape)).collect();
        Ok(Self {
            degree,
            coefficients,
        })
    }

    pub fn zero_form(f: NodeFunction) -> Result<Self> {
        Self::new(0, vec![f])
    }

    /// `f dq¹ + g dq²`.
    pub fn one_form(f: NodeFunction, g: NodeFunction) -> Result<Self> {
        Self::new(1, vec![f, g])
    }

    /// `c dq¹∧dq²`.
    pub fn two_form(c: NodeFunction) -> Result<Self> {
        Self::new(2, vec![c])
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coefficients(&self) -> &[NodeFunction] {
        &self.coefficients
    }

    pub fn coefficient(&self, k: usize) -> &NodeFunction {
        &self.coefficients[k]
    }

    pub fn max_abs(&self) -> f64 {
        self.coefficients
            .iter()
            .fold(0.0, |m, c| m.max(c.max_abs()))
    }

    fn shape(&self) -> Shape {
        self.coefficients[0].grid.shape()
    }

    /// Coefficient-wise difference, on the common window.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a.sub(b))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a.add(b))
    }

    fn zip(
        &self,
        other: &Self,
        op: impl Fn(&NodeFunction, &NodeFunction) -> Result<NodeFunction>,
    ) -> Result<Self> {
        if self.degree != other.degree {
            return Err(Error::DimensionMismatch {
                expected: self.degree,
                got: other.degree,
            });
        }
        let coefficients = self
            .coefficients
            .iter()
            .zip(&other.coefficients)
            .map(|(a, b)| op(a, b))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.degree, coefficients)
    }
}

/// Exterior derivative. On functions it collects the forward differences; on
/// `f dq¹ + g dq²` it gives `(Δ₁g - Δ₂f) dq¹∧dq²`. The derivative of a top
/// form is returned as the zero top form.
pub fn exterior_derivative(form: &LatticeForm) -> Result<LatticeForm> {
    match form.degree {
        0 => {
            let f = &form.coefficients[0];
            LatticeForm::one_form(forward_difference(f, 0)?, forward_difference(f, 1)?)
        }
        1 => {
            let (f, g) = (&form.coefficients[0], &form.coefficients[1]);
            LatticeForm::two_form(forward_difference(g, 0)?.sub(&forward_difference(f, 1)?)?)
        }
        _ => {
            let shape = form.shape();
            LatticeForm::two_form(NodeFunction::from_shape(shape, |_, _| 0.0))
        }
    }
}

fn shift_along(f: &NodeFunction, axes: &[usize]) -> Result<NodeFunction> {
    axes.iter()
        .try_fold(f.clone(), |acc, &axis| shift(&acc, axis))
}

/// Wedge product with the lattice commutation rule: a function moved to the
/// left past `dq^i` is replaced by its shift along `i`.
pub fn wedge(a: &LatticeForm, b: &LatticeForm) -> Result<LatticeForm> {
    let degree = a.degree + b.degree;
    if degree > 2 {
        return Err(Error::DegreeOverflow(degree));
    }
    let ac = &a.coefficients;
    let bc = &b.coefficients;
    match (a.degree, b.degree) {
        (0, _) => LatticeForm::new(
            degree,
            bc.iter()
                .map(|g| ac[0].mul(g))
                .collect::<Result<Vec<_>>>()?,
        ),
        (1, 0) => LatticeForm::one_form(
            ac[0].mul(&shift(&bc[0], 0)?)?,
            ac[1].mul(&shift(&bc[0], 1)?)?,
        ),
        (2, 0) => LatticeForm::two_form(ac[0].mul(&shift_along(&bc[0], &[0, 1])?)?),
        (1, 1) => {
            // f1 dq¹ ∧ g2 dq² = f1 R₁(g2) dq¹∧dq²,  f2 dq² ∧ g1 dq¹ = -f2 R₂(g1) dq¹∧dq²
            let plus = ac[0].mul(&shift(&bc[1], 0)?)?;
            let minus = ac[1].mul(&shift(&bc[0], 1)?)?;
            LatticeForm::two_form(plus.sub(&minus)?)
        }
        _ => unreachable!("degree sum checked above"),
    }
}

fn require_periodic(form: &LatticeForm) -> Result<()> {
    if form.shape().periodic == [true, true] {
        Ok(())
    } else {
        Err(Error::NotPeriodic)
    }
}

/// Lattice codifferential `δ_L`: minus the adjoint of `d` under the uniform
/// node-wise inner product, which amounts to backward differences.
///
/// `δ_L (a dq¹ + b dq²) = ∇₁a + ∇₂b` and `δ_L (c dq¹∧dq²) = -∇₂c dq¹ + ∇₁c dq²`.
/// With this sign `dδ_L + δ_L d` is the usual second-difference Laplacian.
pub fn codifferential(form: &LatticeForm) -> Result<LatticeForm> {
    require_periodic(form)?;
    let c = &form.coefficients;
    match form.degree {
        0 => Err(Error::DegreeOverflow(0)),
        1 => LatticeForm::zero_form(
            backward_difference(&c[0], 0)?.add(&backward_difference(&c[1], 1)?)?,
        ),
        _ => LatticeForm::one_form(
            backward_difference(&c[0], 1)?.scale(-1.0),
            backward_difference(&c[0], 0)?,
        ),
    }
}

/// `Δ_L = dδ_L + δ_L d` on forms of any degree (periodic lattices).
pub fn laplacian_form(form: &LatticeForm) -> Result<LatticeForm> {
    require_periodic(form)?;
    let d_then_delta = match form.degree {
        2 => None,
        _ => Some(codifferential(&exterior_derivative(form)?)?),
    };
    let delta_then_d = match form.degree {
        0 => None,
        _ => Some(exterior_derivative(&codifferential(form)?)?),
    };
    match (d_then_delta, delta_then_d) {
        (Some(a), Some(b)) => a.add(&b),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => unreachable!(),
    }
}

/// Lattice Laplacian of a function on a periodic grid: `δ_L d f`.
pub fn laplacian(f: &NodeFunction) -> Result<NodeFunction> {
    let shape = f.grid.shape();
    if shape.dims == 2 {
        let out = laplacian_form(&LatticeForm::zero_form(f.clone())?)?;
        return Ok(out.coefficients[0].clone());
    }
    if !shape.periodic[0] {
        return Err(Error::NotPeriodic);
    }
    backward_difference(&forward_difference(f, 0)?, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(step: f64, values: &[f64]) -> NodeFunction {
        let g = Grid1D::new(step, values.len(), false).unwrap();
        NodeFunction::new(g, values.to_vec()).unwrap()
    }

    #[test]
    fn forward_difference_examples() {
        let f = line(0.5, &[1.0, 2.0, 4.0]);
        assert_eq!(forward_difference(&f, 0).unwrap().values(), &[2.0, 4.0]);
        let c = line(0.3, &[2.0; 5]);
        assert!(forward_difference(&c, 0)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
        let g = Grid1D::new(0.25, 6, false).unwrap();
        let lin = NodeFunction::from_fn_1d(g, |k| 3.0 * g.node(k));
        for v in forward_difference(&lin, 0).unwrap().values() {
            assert!((v - 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn forward_difference_errors() {
        let f = line(1.0, &[1.0, 2.0]);
        assert!(matches!(
            forward_difference(&f, 1),
            Err(Error::InvalidDirection {
                direction: 1,
                dims: 1
            })
        ));
        assert!(Grid1D::new(1.0, 1, false).is_err());
        assert!(Grid1D::new(0.0, 4, false).is_err());
        assert!(Grid2D::new([1.0, -1.0], [3, 3], [true, true]).is_err());
    }

    #[test]
    fn periodic_difference_wraps() {
        let g = Grid1D::new(1.0, 3, true).unwrap();
        let f = NodeFunction::new(g, vec![1.0, 2.0, 4.0]).unwrap();
        assert_eq!(
            forward_difference(&f, 0).unwrap().values(),
            &[1.0, 2.0, -3.0]
        );
        let c = NodeFunction::constant(g, 7.0);
        assert_eq!(shift(&c, 0).unwrap(), c);
    }

    #[test]
    fn shift_examples() {
        let f = line(0.5, &[1.0, 2.0, 4.0]);
        let rf = shift(&f, 0).unwrap();
        assert_eq!(rf.values(), &[2.0, 4.0]);
        let manual = rf.sub(&f).unwrap().scale(1.0 / 0.5);
        assert_eq!(manual, forward_difference(&f, 0).unwrap());
    }

    #[test]
    fn product_difference_examples() {
        let f = line(1.0, &[1.0, 2.0]);
        let g = line(1.0, &[3.0, 5.0]);
        assert_eq!(product_difference(&f, &g, 0, 1.0).unwrap().values(), &[7.0]);
        assert_eq!(product_difference(&f, &g, 0, 0.5).unwrap().values(), &[7.0]);
        let fg = f.mul(&g).unwrap();
        assert_eq!(forward_difference(&fg, 0).unwrap().values(), &[7.0]);

        let f = line(0.5, &[0.3, -1.2, 2.5, 0.7]);
        let c = NodeFunction::constant(f.grid(), 2.5);
        let expected = forward_difference(&f, 0).unwrap().scale(2.5);
        for a in [0.0, 0.3, 0.5, 1.0] {
            let got = product_difference(&f, &c, 0, a).unwrap();
            for (x, y) in got.values().iter().zip(expected.values()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn product_difference_rejects_bad_input() {
        let f = line(1.0, &[1.0, 2.0]);
        let g = line(0.5, &[3.0, 5.0]);
        assert!(matches!(
            product_difference(&f, &f, 0, 1.5),
            Err(Error::OutOfRange { .. })
        ));
        assert_eq!(product_difference(&f, &g, 0, 0.5), Err(Error::GridMismatch));
    }

    #[test]
    fn discrete_integral_examples() {
        assert_eq!(
            discrete_integral(&line(1.0, &[1.0, 4.0, 9.0])).unwrap(),
            8.0
        );
        assert_eq!(discrete_integral(&line(0.1, &[2.0; 4])).unwrap(), 0.0);
        assert_eq!(
            discrete_integral(&line(1.0, &[0.0, 1.0, 0.0])).unwrap(),
            0.0
        );
        let g = Grid1D::new(1.0, 3, true).unwrap();
        assert_eq!(
            discrete_integral(&NodeFunction::constant(g, 1.0)),
            Err(Error::Periodic)
        );
    }

    fn unit_grid(n: usize, periodic: bool) -> Grid2D {
        Grid2D::new([1.0, 1.0], [n, n], [periodic, periodic]).unwrap()
    }

    #[test]
    fn exterior_derivative_of_product_function() {
        let g = unit_grid(5, false);
        let f = NodeFunction::from_fn_2d(g, |i, j| (i * j) as f64);
        let df = exterior_derivative(&LatticeForm::zero_form(f.clone()).unwrap()).unwrap();
        assert_eq!(df.degree(), 1);
        let [n0, n1] = df.coefficient(0).extents();
        for i in 0..n0 {
            for j in 0..n1 {
                assert_eq!(df.coefficient(0).at(i, j), j as f64);
                assert_eq!(df.coefficient(1).at(i, j), i as f64);
            }
        }
        let zero = NodeFunction::constant(g, 0.0);
        let omega = LatticeForm::one_form(f, zero).unwrap();
        let d_omega = exterior_derivative(&omega).unwrap();
        let c = d_omega.coefficient(0);
        let [n0, n1] = c.extents();
        for i in 0..n0 {
            for j in 0..n1 {
                assert_eq!(c.at(i, j), -(i as f64));
            }
        }
    }

    #[test]
    fn d_squared_vanishes_on_open_grid() {
        let g = Grid2D::new([0.5, 0.25], [6, 7], [false, false]).unwrap();
        let f = NodeFunction::from_fn_2d(g, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.37);
        let ddf =
            exterior_derivative(&exterior_derivative(&LatticeForm::zero_form(f).unwrap()).unwrap())
                .unwrap();
        assert_eq!(ddf.degree(), 2);
        assert!(ddf.max_abs() <= 1e-14);
    }

    #[test]
    fn wedge_examples() {
        let g = unit_grid(4, true);
        let one = NodeFunction::constant(g, 1.0);
        let zero = NodeFunction::constant(g, 0.0);
        let dq1 = LatticeForm::one_form(one.clone(), zero.clone()).unwrap();
        assert_eq!(wedge(&dq1, &dq1).unwrap().max_abs(), 0.0);

        let f = NodeFunction::from_fn_2d(g, |i, j| (i + 2 * j) as f64);
        let h = NodeFunction::from_fn_2d(g, |i, j| (3 * i + j * j) as f64);
        let a = LatticeForm::one_form(f.clone(), zero.clone()).unwrap();
        let b = LatticeForm::one_form(zero.clone(), h.clone()).unwrap();
        let ab = wedge(&a, &b).unwrap();
        let expected = f.mul(&shift(&h, 0).unwrap()).unwrap();
        assert_eq!(ab.coefficient(0), &expected);

        let ba = wedge(&b, &a).unwrap();
        let expected = h.mul(&shift(&f, 1).unwrap()).unwrap().scale(-1.0);
        assert_eq!(ba.coefficient(0), &expected);

        let s = LatticeForm::zero_form(f.clone()).unwrap();
        let sb = wedge(&s, &b).unwrap();
        assert_eq!(sb.coefficient(1), &f.mul(&h).unwrap());

        assert!(matches!(wedge(&ab, &a), Err(Error::DegreeOverflow(3))));
    }

    #[test]
    fn laplacian_examples() {
        let g = unit_grid(8, true);
        let c = NodeFunction::constant(g, 3.5);
        assert!(laplacian(&c).unwrap().max_abs() == 0.0);

        let sq = NodeFunction::from_fn_2d(g, |i, _| (i * i) as f64);
        let lap = laplacian(&sq).unwrap();
        for i in 1..7 {
            for j in 0..8 {
                assert_eq!(lap.at(i, j), 2.0);
            }
        }
    }

    #[test]
    fn codifferential_requires_periodic_grid() {
        let g = unit_grid(4, false);
        let f = NodeFunction::constant(g, 1.0);
        let w = LatticeForm::one_form(f.clone(), f.clone()).unwrap();
        assert_eq!(codifferential(&w), Err(Error::NotPeriodic));
        assert_eq!(laplacian(&f), Err(Error::NotPeriodic));
    }

    #[test]
    fn one_dimensional_laplacian() {
        let g = Grid1D::new(0.5, 6, true).unwrap();
        let f = NodeFunction::new(g, vec![1.0, 0.0, 2.0, -1.0, 0.5, 3.0]).unwrap();
        let lap = laplacian(&f).unwrap();
        for k in 0..6 {
            let (l, r) = ((k + 5) % 6, (k + 1) % 6);
            let v = (f.at(r, 0) - 2.0 * f.at(k, 0) + f.at(l, 0)) / 0.25;
            assert!((lap.at(k, 0) - v).abs() < 1e-13);
        }
    }
}
