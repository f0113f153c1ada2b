//! Scalar and vector fields on uniform rectangular grids with homogeneous
//! Neumann boundary conditions.
//!
//! Gradients are forward differences with the outermost difference on each
//! axis set to zero; the divergence is the matching backward difference, so
//! that `<grad u, p> = -<u, div p>` holds exactly with `h^dims` weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{ConvexEnvelope, ScalarPotential};

pub mod io;

/// Grid extent: one or two axes, at least two cells per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    D1(usize),
    D2(usize, usize),
}

impl Shape {
    pub fn new(dims: usize, n: &[usize]) -> Result<Self> {
        let shape = match (dims, n) {
            (1, [nx]) => Shape::D1(*nx),
            (2, [nx, ny]) => Shape::D2(*nx, *ny),
            (2, [n]) => Shape::D2(*n, *n),
            _ => return Err(Error::Shape(format!("dims = {dims} with extents {n:?}"))),
        };
        if shape.nx() < 2 || shape.ny() < 2 && dims == 2 {
            return Err(Error::Shape(format!("need at least 2 cells per axis, got {n:?}")));
        }
        Ok(shape)
    }

    pub fn dims(&self) -> usize {
        match self {
            Shape::D1(_) => 1,
            Shape::D2(..) => 2,
        }
    }

    pub fn nx(&self) -> usize {
        match *self {
            Shape::D1(n) | Shape::D2(n, _) => n,
        }
    }

    /// Extent along y; 1 for one-dimensional grids.
    pub fn ny(&self) -> usize {
        match *self {
            Shape::D1(_) => 1,
            Shape::D2(_, n) => n,
        }
    }

    pub fn len(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extents(&self) -> Vec<usize> {
        match *self {
            Shape::D1(n) => vec![n],
            Shape::D2(nx, ny) => vec![nx, ny],
        }
    }
}

/// Cell volume `h^dims`.
#[inline]
pub fn cell_volume(shape: Shape, h: f64) -> f64 {
    h.powi(shape.dims() as i32)
}

/// A scalar function sampled at cell centres. Row-major storage: index
/// `j * nx + i` for cell `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    shape: Shape,
    h: f64,
    values: Vec<f64>,
}

impl Field {
    pub fn new(shape: Shape, h: f64, values: Vec<f64>) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Shape(format!("spacing must be positive, got {h}")));
        }
        if values.len() != shape.len() {
            return Err(Error::Shape(format!(
                "{} values for a grid of {} cells",
                values.len(),
                shape.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at cell {bad}")));
        }
        Ok(Self { shape, h, values })
    }

    pub fn constant(shape: Shape, h: f64, c: f64) -> Result<Self> {
        Self::new(shape, h, vec![c; shape.len()])
    }

    /// Field with values `f(x, y)` at cell centres; coordinates are centred
    /// on the domain midpoint (`y = 0` in 1D).
    pub fn from_fn(shape: Shape, h: f64, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let (nx, ny) = (shape.nx(), shape.ny());
        let mut values = Vec::with_capacity(shape.len());
        for j in 0..ny {
            for i in 0..nx {
                let (x, y) = cell_center(shape, h, i, j);
                values.push(f(x, y));
            }
        }
        Self::new(shape, h, values)
    }

    pub(crate) fn from_parts_unchecked(shape: Shape, h: f64, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), shape.len());
        Self { shape, h, values }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> usize {
        self.shape.dims()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn cell_volume(&self) -> f64 {
        cell_volume(self.shape, self.h)
    }

    pub fn domain_lengths(&self) -> Vec<f64> {
        self.shape.extents().iter().map(|&n| n as f64 * self.h).collect()
    }

    /// `|Omega|`.
    pub fn domain_measure(&self) -> f64 {
        self.domain_lengths().iter().product()
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        self.shape == other.shape && self.h == other.h
    }

    fn check_grid(&self, other: &Field) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "grids differ: {:?}/h={} vs {:?}/h={}",
                self.shape, self.h, other.shape, other.h
            )))
        }
    }

    /// Weighted inner product `sum u v h^dims`.
    pub fn inner(&self, other: &Field) -> Result<f64> {
        self.check_grid(other)?;
        Ok(dot(&self.values, &other.values) * self.cell_volume())
    }

    pub fn l2_norm(&self) -> f64 {
        (dot(&self.values, &self.values) * self.cell_volume()).sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.linf_norm();
        }
        let s: f64 = self.values.iter().map(|v| v.abs().powf(p)).sum();
        (s * self.cell_volume()).powf(1.0 / p)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `||self - other||_2`.
    pub fn l2_distance(&self, other: &Field) -> Result<f64> {
        self.check_grid(other)?;
        Ok(weighted_distance(&self.values, &other.values, self.cell_volume()))
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.check_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Field::from_parts_unchecked(self.shape, self.h, values))
    }

    pub fn add_constant(&self, c: f64) -> Field {
        let values = self.values.iter().map(|v| v + c).collect();
        Field::from_parts_unchecked(self.shape, self.h, values)
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Field {
        Field::from_parts_unchecked(self.shape, self.h, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Field> {
        Field::new(self.shape, self.h, values)
    }
}

/// Centred coordinates of cell `(i, j)`.
pub fn cell_center(shape: Shape, h: f64, i: usize, j: usize) -> (f64, f64) {
    let x = (i as f64 + 0.5) * h - 0.5 * shape.nx() as f64 * h;
    let y = match shape {
        Shape::D1(_) => 0.0,
        Shape::D2(..) => (j as f64 + 0.5) * h - 0.5 * shape.ny() as f64 * h,
    };
    (x, y)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn weighted_distance(a: &[f64], b: &[f64], w: f64) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (s * w).sqrt()
}

/// Face-centred vector field, one component array per axis. The last entry
/// along each axis is the boundary flux and is treated as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    shape: Shape,
    h: f64,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(shape: Shape, h: f64) -> Self {
        Self {
            shape,
            h,
            components: vec![vec![0.0; shape.len()]; shape.dims()],
        }
    }

    /// Builds from component arrays, zeroing the boundary faces.
    pub fn new(shape: Shape, h: f64, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != shape.dims() || components.iter().any(|c| c.len() != shape.len()) {
            return Err(Error::Shape("component arrays do not match the grid".into()));
        }
        let mut p = Self { shape, h, components };
        p.clear_boundary();
        Ok(p)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    /// Zeroes the normal component on the outer faces.
    pub fn clear_boundary(&mut self) {
        let (nx, ny) = (self.shape.nx(), self.shape.ny());
        for j in 0..ny {
            self.components[0][j * nx + nx - 1] = 0.0;
        }
        if self.shape.dims() == 2 {
            for i in 0..nx {
                self.components[1][(ny - 1) * nx + i] = 0.0;
            }
        }
    }

    /// Weighted inner product over all components.
    pub fn inner(&self, other: &VectorField) -> f64 {
        let w = cell_volume(self.shape, self.h);
        self.components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| dot(a, b))
            .sum::<f64>()
            * w
    }

    /// Euclidean norm of the vector at each cell.
    pub fn cell_norms(&self) -> Vec<f64> {
        cell_norms(&self.components, self.shape.len())
    }
}

fn cell_norms(components: &[Vec<f64>], n: usize) -> Vec<f64> {
    match components {
        [gx] => gx.iter().map(|v| v.abs()).collect(),
        [gx, gy] => gx.iter().zip(gy).map(|(a, b)| a.hypot(*b)).collect(),
        _ => vec![0.0; n],
    }
}

/// Forward differences into `out`, boundary faces zero.
pub(crate) fn gradient_into(shape: Shape, h: f64, u: &[f64], out: &mut [Vec<f64>]) {
    let inv_h = 1.0 / h;
    let (nx, ny) = (shape.nx(), shape.ny());
    {
        let gx = &mut out[0];
        for j in 0..ny {
            let row = &u[j * nx..(j + 1) * nx];
            let g = &mut gx[j * nx..(j + 1) * nx];
            for i in 0..nx - 1 {
                g[i] = (row[i + 1] - row[i]) * inv_h;
            }
            g[nx - 1] = 0.0;
        }
    }
    if shape.dims() == 2 {
        let gy = &mut out[1];
        for j in 0..ny - 1 {
            for i in 0..nx {
                let k = j * nx + i;
                gy[k] = (u[k + nx] - u[k]) * inv_h;
            }
        }
        for g in &mut gy[(ny - 1) * nx..] {
            *g = 0.0;
        }
    }
}

/// Backward-difference divergence into `out`; boundary faces are ignored.
pub(crate) fn divergence_into(shape: Shape, h: f64, p: &[Vec<f64>], out: &mut [f64]) {
    let inv_h = 1.0 / h;
    let (nx, ny) = (shape.nx(), shape.ny());
    let px = &p[0];
    for j in 0..ny {
        let row = &px[j * nx..(j + 1) * nx];
        let o = &mut out[j * nx..(j + 1) * nx];
        o[0] = row[0] * inv_h;
        for i in 1..nx - 1 {
            o[i] = (row[i] - row[i - 1]) * inv_h;
        }
        o[nx - 1] = -row[nx - 2] * inv_h;
    }
    if shape.dims() == 2 {
        let py = &p[1];
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                let up = if j + 1 < ny { py[k] } else { 0.0 };
                let down = if j > 0 { py[k - nx] } else { 0.0 };
                out[k] += (up - down) * inv_h;
            }
        }
    }
}

/// Discrete gradient `grad u`.
pub fn gradient(u: &Field) -> VectorField {
    let mut p = VectorField::zeros(u.shape, u.h);
    gradient_into(u.shape, u.h, &u.values, &mut p.components);
    p
}

/// Discrete divergence, the negative adjoint of [`gradient`].
pub fn divergence(p: &VectorField) -> Field {
    let mut out = vec![0.0; p.shape.len()];
    divergence_into(p.shape, p.h, &p.components, &mut out);
    Field::from_parts_unchecked(p.shape, p.h, out)
}

/// Which integrand is applied to `|grad u|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyKind {
    /// `phi_eps`
    Eps,
    /// `phi_eps**`
    EpsStar,
    /// identity: total variation
    Tv,
}

/// `sum_cells h^dims g(|grad u|)` for the integrand selected by `kind`.
pub fn energy(
    u: &Field,
    kind: EnergyKind,
    pot: Option<&ScalarPotential>,
    env: Option<&ConvexEnvelope>,
) -> Result<f64> {
    let norms = gradient(u).cell_norms();
    let w = u.cell_volume();
    let sum: f64 = match kind {
        EnergyKind::Tv => norms.iter().sum(),
        EnergyKind::Eps => {
            let pot = pot
                .or(env.map(|e| &e.source))
                .ok_or_else(|| Error::Unsupported("E_eps needs a potential".into()))?;
            norms.iter().map(|&s| pot.value(s)).sum()
        }
        EnergyKind::EpsStar => {
            let env = env.ok_or_else(|| Error::Unsupported("E_eps** needs a convex envelope".into()))?;
            norms.iter().map(|&s| env.value(s)).sum()
        }
    };
    Ok(sum * w)
}

/// Discrete total variation.
pub fn total_variation(u: &Field) -> f64 {
    gradient(u).cell_norms().iter().sum::<f64>() * u.cell_volume()
}

/// Reusable buffers for evaluating the convexified energy and its gradient.
pub(crate) struct EnergyWorkspace {
    grad: Vec<Vec<f64>>,
}

impl EnergyWorkspace {
    pub fn new(shape: Shape) -> Self {
        Self {
            grad: vec![vec![0.0; shape.len()]; shape.dims()],
        }
    }

    /// Energy `E**(u)`; writes the L2 gradient `-div(g(|grad u|) grad u)` into `out`.
    pub fn energy_and_gradient(
        &mut self,
        shape: Shape,
        h: f64,
        env: &ConvexEnvelope,
        u: &[f64],
        out: &mut [f64],
    ) -> f64 {
        gradient_into(shape, h, u, &mut self.grad);
        let mut sum = 0.0;
        match shape.dims() {
            1 => {
                for g in self.grad[0].iter_mut() {
                    let s = g.abs();
                    sum += env.value(s);
                    *g *= env.flux_coeff(s);
                }
            }
            _ => {
                let (gx, gy) = self.grad.split_at_mut(1);
                for (a, b) in gx[0].iter_mut().zip(gy[0].iter_mut()) {
                    let s = a.hypot(*b);
                    sum += env.value(s);
                    let c = env.flux_coeff(s);
                    *a *= c;
                    *b *= c;
                }
            }
        }
        divergence_into(shape, h, &self.grad, out);
        for o in out.iter_mut() {
            *o = -*o;
        }
        sum * cell_volume(shape, h)
    }
}

/// The L2 gradient of the convexified energy,
/// `-div[(phi**)'(|grad u|) grad u / |grad u|]`. Its L2 norm is the slope of
/// `E**` at `u`, and a gradient-flow trajectory moves with velocity
/// `-slope_field(u)`.
pub fn slope_field(u: &Field, env: &ConvexEnvelope) -> Field {
    let mut ws = EnergyWorkspace::new(u.shape);
    let mut out = vec![0.0; u.shape.len()];
    ws.energy_and_gradient(u.shape, u.h, env, &u.values, &mut out);
    Field::from_parts_unchecked(u.shape, u.h, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{convex_envelope, DEFAULT_ENVELOPE_TOL};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn env(eps: f64) -> ConvexEnvelope {
        convex_envelope(&ScalarPotential::new(eps).unwrap(), DEFAULT_ENVELOPE_TOL).unwrap()
    }

    fn random_field(shape: Shape, h: f64, rng: &mut ChaCha8Rng) -> Field {
        Field::new(shape, h, (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_vector_field(shape: Shape, h: f64, rng: &mut ChaCha8Rng) -> VectorField {
        let comps = (0..shape.dims())
            .map(|_| (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        VectorField::new(shape, h, comps).unwrap()
    }

    #[test]
    fn shape_validation() {
        assert!(Shape::new(1, &[1]).is_err());
        assert!(Shape::new(2, &[4, 1]).is_err());
        assert!(Shape::new(3, &[4]).is_err());
        assert_eq!(Shape::new(2, &[8]).unwrap(), Shape::D2(8, 8));
        assert!(Field::new(Shape::D1(3), 0.1, vec![0.0, f64::NAN, 1.0]).is_err());
        assert!(Field::new(Shape::D1(3), 0.0, vec![0.0; 3]).is_err());
    }

    #[test]
    fn gradient_of_constant_and_ramp() {
        let c = Field::constant(Shape::D2(5, 4), 0.2, 3.0).unwrap();
        assert!(gradient(&c).components().iter().flatten().all(|&g| g == 0.0));

        let h = 0.25;
        let ramp = Field::new(Shape::D1(4), h, vec![0.0, h, 2.0 * h, 3.0 * h]).unwrap();
        let g = gradient(&ramp);
        for &v in &g.component(0)[..3] {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-15);
        }
        assert_eq!(g.component(0)[3], 0.0);

        let x = Field::from_fn(Shape::D2(8, 8), 0.125, |x, _| x).unwrap();
        let g = gradient(&x);
        for j in 0..8 {
            for i in 0..7 {
                assert_abs_diff_eq!(g.component(0)[j * 8 + i], 1.0, epsilon = 1e-12);
            }
        }
        assert!(g.component(1).iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn divergence_examples() {
        let zero = VectorField::zeros(Shape::D2(4, 3), 0.5);
        assert!(divergence(&zero).values().iter().all(|&v| v == 0.0));

        let n = 10;
        let h = 0.1;
        let mut p = vec![1.0; n];
        p[0] = 0.0;
        let p = VectorField::new(Shape::D1(n), h, vec![p]).unwrap();
        let d = divergence(&p);
        assert_abs_diff_eq!(d.values()[1], 1.0 / h, epsilon = 1e-12);
        assert_abs_diff_eq!(d.values()[n - 1], -1.0 / h, epsilon = 1e-12);
        for (k, &v) in d.values().iter().enumerate() {
            if k != 1 && k != n - 1 {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn adjointness_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for shape in [Shape::D1(16), Shape::D2(8, 8), Shape::D2(5, 9)] {
            for _ in 0..100 {
                let h = rng.gen_range(0.01..1.0);
                let u = random_field(shape, h, &mut rng);
                let p = random_vector_field(shape, h, &mut rng);
                let lhs = gradient(&u).inner(&p);
                let rhs = -u.inner(&divergence(&p)).unwrap();
                let scale = lhs.abs().max(rhs.abs()).max(1e-300);
                assert!((lhs - rhs).abs() <= 1e-12 * scale, "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn energy_of_step_and_constants() {
        let e = env(0.1);
        let c = Field::constant(Shape::D2(6, 6), 0.1, 2.5).unwrap();
        for kind in [EnergyKind::Eps, EnergyKind::EpsStar, EnergyKind::Tv] {
            assert_eq!(energy(&c, kind, Some(&e.source), Some(&e)).unwrap(), 0.0);
        }
        for &n in &[10usize, 40, 400] {
            let h = 2.0 / n as f64;
            let step = Field::from_fn(Shape::D1(n), h, |x, _| 0.5 * x.signum()).unwrap();
            assert_abs_diff_eq!(energy(&step, EnergyKind::Tv, None, None).unwrap(), 1.0, epsilon = 1e-12);
            let es = energy(&step, EnergyKind::EpsStar, None, Some(&e)).unwrap();
            assert!(es >= 0.5 - 0.5 * 2.0);
        }
        assert!(energy(&c, EnergyKind::EpsStar, None, None).is_err());
        assert!(energy(&c, EnergyKind::Eps, None, None).is_err());
    }

    #[test]
    fn energy_invariants_on_random_fields() {
        let e = env(0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for shape in [Shape::D1(16), Shape::D2(8, 8)] {
            for _ in 0..50 {
                let u = random_field(shape, 0.1, &mut rng).map(|v| 3.0 * v);
                let es = energy(&u, EnergyKind::EpsStar, None, Some(&e)).unwrap();
                let ee = energy(&u, EnergyKind::Eps, Some(&e.source), None).unwrap();
                assert!(es <= ee + 1e-12 * ee);
                let shifted = u.add_constant(rng.gen_range(-5.0..5.0));
                for kind in [EnergyKind::Eps, EnergyKind::EpsStar, EnergyKind::Tv] {
                    let a = energy(&u, kind, Some(&e.source), Some(&e)).unwrap();
                    let b = energy(&shifted, kind, Some(&e.source), Some(&e)).unwrap();
                    assert!((a - b).abs() <= 1e-9 * a.max(1.0));
                }
                assert!(total_variation(&u) > 1e-14);
            }
        }
    }

    #[test]
    fn slope_field_of_ramp_lives_at_the_boundary() {
        let e = env(0.1);
        let n = 12;
        let h = 1.0 / n as f64;
        let ramp = Field::from_fn(Shape::D1(n), h, |x, _| 0.7 * x).unwrap();
        let s = slope_field(&ramp, &e);
        for (k, &v) in s.values().iter().enumerate() {
            if k == 0 || k == n - 1 {
                assert!(v.abs() > 1.0);
            } else {
                assert!(v.abs() < 1e-9, "cell {k}: {v}");
            }
        }
        let c = Field::constant(Shape::D1(n), h, 1.0).unwrap();
        assert!(slope_field(&c, &e).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn slope_field_matches_energy_finite_differences() {
        let e = env(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for shape in [Shape::D1(12), Shape::D2(4, 3)] {
            let h = 0.1;
            let u = random_field(shape, h, &mut rng);
            let s = slope_field(&u, &e);
            let w = u.cell_volume();
            for k in 0..shape.len() {
                let step = 1e-6;
                let mut plus = u.clone();
                plus.values_mut()[k] += step;
                let mut minus = u.clone();
                minus.values_mut()[k] -= step;
                let fd = (energy(&plus, EnergyKind::EpsStar, None, Some(&e)).unwrap()
                    - energy(&minus, EnergyKind::EpsStar, None, Some(&e)).unwrap())
                    / (2.0 * step);
                let an = w * s.values()[k];
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
            }
        }
    }
}
