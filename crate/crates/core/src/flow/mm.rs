//! One minimizing-movement step for the convexified energy.
//!
//! The per-step objective `E**(v) + ||v - u||^2 / (2 tau)` is smooth and
//! `1/tau`-strongly convex. It is minimized by accelerated gradient descent
//! with a backtracking Lipschitz estimate, capped by the analytic bound
//! `1/tau + 4 dims sup(phi**'') / h^2`, and a gradient-based momentum restart.

use crate::error::{Error, Result};
use crate::grid::{cell_volume, weighted_distance, EnergyWorkspace, Field, Shape};
use crate::potential::ConvexEnvelope;

pub(crate) const MAX_INNER_ITERATIONS: usize = 500_000;

/// Iteration statistics of the last inner solve.
#[derive(Debug, Clone, Copy, Default)]
pub struct InnerStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Preallocated buffers for repeated steps on one grid.
pub(crate) struct MmSolver {
    shape: Shape,
    h: f64,
    ws: EnergyWorkspace,
    x: Vec<f64>,
    x_prev: Vec<f64>,
    y: Vec<f64>,
    x_new: Vec<f64>,
    g_y: Vec<f64>,
    g_new: Vec<f64>,
    lipschitz: Option<f64>,
}

impl MmSolver {
    pub fn new(shape: Shape, h: f64) -> Self {
        let n = shape.len();
        Self {
            shape,
            h,
            ws: EnergyWorkspace::new(shape),
            x: vec![0.0; n],
            x_prev: vec![0.0; n],
            y: vec![0.0; n],
            x_new: vec![0.0; n],
            g_y: vec![0.0; n],
            g_new: vec![0.0; n],
            lipschitz: None,
        }
    }

    /// Objective gradient `(v - u)/tau + grad E**(v)` into `out`.
    fn objective_gradient(&mut self, env: &ConvexEnvelope, u: &[f64], tau: f64, v: &[f64], out: &mut [f64]) {
        self.ws.energy_and_gradient(self.shape, self.h, env, v, out);
        let inv_tau = 1.0 / tau;
        for ((o, vi), ui) in out.iter_mut().zip(v).zip(u) {
            *o += (vi - ui) * inv_tau;
        }
    }

    /// Minimizes the step objective starting from `guess`. The stopping rule
    /// asks for both the weighted L2 norm and the max norm of the optimality
    /// residual to be below `tol`.
    pub fn solve(
        &mut self,
        env: &ConvexEnvelope,
        u: &[f64],
        guess: &[f64],
        tau: f64,
        tol: f64,
    ) -> Result<(Vec<f64>, InnerStats)> {
        let w = cell_volume(self.shape, self.h);
        let mu = 1.0 / tau;
        let l_max = mu + 4.0 * self.shape.dims() as f64 * env.curvature_bound() / (self.h * self.h);
        let mut lip = self.lipschitz.unwrap_or(l_max / 64.0).clamp(mu, l_max);

        self.x.copy_from_slice(guess);
        self.x_prev.copy_from_slice(guess);
        let mut scratch = std::mem::take(&mut self.g_new);
        self.objective_gradient(env, u, tau, guess, &mut scratch);
        self.g_new = scratch;
        let mut residual = residual_norm(&self.g_new, w);
        if residual.0 <= tol && residual.1 <= tol {
            return Ok((self.x.clone(), InnerStats { iterations: 0, residual: residual.0 }));
        }

        for iter in 1..=MAX_INNER_ITERATIONS {
            let beta = (lip.sqrt() - mu.sqrt()) / (lip.sqrt() + mu.sqrt());
            for ((yi, xi), pi) in self.y.iter_mut().zip(&self.x).zip(&self.x_prev) {
                *yi = xi + beta * (xi - pi);
            }
            let y = std::mem::take(&mut self.y);
            let mut g_y = std::mem::take(&mut self.g_y);
            self.objective_gradient(env, u, tau, &y, &mut g_y);

            loop {
                let step = 1.0 / lip;
                for ((xn, yi), gi) in self.x_new.iter_mut().zip(&y).zip(&g_y) {
                    *xn = yi - step * gi;
                }
                let x_new = std::mem::take(&mut self.x_new);
                let mut g_new = std::mem::take(&mut self.g_new);
                self.objective_gradient(env, u, tau, &x_new, &mut g_new);
                let dg = weighted_distance(&g_new, &g_y, w);
                let dx = weighted_distance(&x_new, &y, w);
                self.x_new = x_new;
                self.g_new = g_new;
                if dg <= lip * dx * (1.0 + 1e-12) || lip >= l_max {
                    break;
                }
                lip = (2.0 * lip).min(l_max);
            }

            // Restart momentum when the step points against the previous direction.
            let restart = g_y
                .iter()
                .zip(self.x_new.iter().zip(&self.x))
                .map(|(g, (xn, x))| g * (xn - x))
                .sum::<f64>()
                > 0.0;
            self.y = y;
            self.g_y = g_y;

            std::mem::swap(&mut self.x_prev, &mut self.x);
            std::mem::swap(&mut self.x, &mut self.x_new);
            if restart {
                self.x_prev.copy_from_slice(&self.x);
            }

            residual = residual_norm(&self.g_new, w);
            if residual.0 <= tol && residual.1 <= tol {
                self.lipschitz = Some(lip);
                return Ok((self.x.clone(), InnerStats { iterations: iter, residual: residual.0 }));
            }
        }
        Err(Error::Convergence {
            solver: "minimizing-movement step",
            iterations: MAX_INNER_ITERATIONS,
            residual: residual.0,
            target: tol,
        })
    }
}

/// `(weighted L2 norm, max norm)`.
fn residual_norm(r: &[f64], w: f64) -> (f64, f64) {
    let mut s = 0.0;
    let mut m: f64 = 0.0;
    for &v in r {
        s += v * v;
        m = m.max(v.abs());
    }
    ((s * w).sqrt(), m)
}

/// Approximate minimizer of `E**(v) + ||v - u||^2 / (2 tau)`; the optimality
/// residual `(v - u)/tau + grad E**(v)` is below `inner_tol` in L2 and max norm.
pub fn mm_step(u: &Field, tau: f64, env: &ConvexEnvelope, inner_tol: f64) -> Result<Field> {
    check_step_params(tau, inner_tol)?;
    let mut solver = MmSolver::new(u.shape(), u.h());
    let (v, _) = solver.solve(env, u.values(), u.values(), tau, inner_tol)?;
    Ok(Field::from_parts_unchecked(u.shape(), u.h(), v))
}

pub(crate) fn check_step_params(tau: f64, inner_tol: f64) -> Result<()> {
    let mut errs = Vec::new();
    if !(tau > 0.0 && tau.is_finite()) {
        errs.push(format!("tau must be positive, got {tau}"));
    }
    if !(inner_tol > 0.0 && inner_tol.is_finite()) {
        errs.push(format!("inner_tol must be positive, got {inner_tol}"));
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errs))
    }
}
