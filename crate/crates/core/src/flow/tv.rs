//! Proximal map of the discrete total variation, solved in the dual.
//!
//! `min_v TV(v) + ||v - u||^2 / (2 tau)` has the dual
//! `max_{|p| <= 1} -<div p, u> - tau/2 ||div p||^2` with primal recovery
//! `v = u + tau div p`. The dual gradient is `grad v`; we run accelerated
//! projected ascent with step `h^2 / (4 dims tau)`, restarting the momentum
//! whenever the step opposes the previous displacement. The duality gap
//! `TV(v) - <p, grad v>` is the stopping criterion.

use crate::error::{Error, Result};
use crate::grid::{cell_volume, divergence_into, gradient_into, total_variation, Field, Shape};

use super::mm::{check_step_params, InnerStats};

pub(crate) const MAX_DUAL_ITERATIONS: usize = 2_000_000;
const GAP_CHECK_EVERY: usize = 5;

pub(crate) struct TvSolver {
    shape: Shape,
    h: f64,
    p: Vec<Vec<f64>>,
    p_prev: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    grad: Vec<Vec<f64>>,
    div: Vec<f64>,
    v: Vec<f64>,
}

impl TvSolver {
    pub fn new(shape: Shape, h: f64) -> Self {
        let n = shape.len();
        let d = shape.dims();
        Self {
            shape,
            h,
            p: vec![vec![0.0; n]; d],
            p_prev: vec![vec![0.0; n]; d],
            q: vec![vec![0.0; n]; d],
            grad: vec![vec![0.0; n]; d],
            div: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn recover(&mut self, u: &[f64], tau: f64, from_q: bool) {
        let src = if from_q { &self.q } else { &self.p };
        divergence_into(self.shape, self.h, src, &mut self.div);
        for ((vi, ui), di) in self.v.iter_mut().zip(u).zip(&self.div) {
            *vi = ui + tau * di;
        }
    }

    /// Gap at the current `p`; recomputes `v`, `div` and `grad` from `p`.
    fn gap(&mut self, u: &[f64], tau: f64) -> f64 {
        self.recover(u, tau, false);
        gradient_into(self.shape, self.h, &self.v, &mut self.grad);
        let w = cell_volume(self.shape, self.h);
        let mut s = 0.0;
        match self.shape.dims() {
            1 => {
                for (g, p) in self.grad[0].iter().zip(&self.p[0]) {
                    s += g.abs() - g * p;
                }
            }
            _ => {
                for k in 0..self.v.len() {
                    let (gx, gy) = (self.grad[0][k], self.grad[1][k]);
                    s += gx.hypot(gy) - gx * self.p[0][k] - gy * self.p[1][k];
                }
            }
        }
        (s * w).max(0.0)
    }

    pub fn solve(&mut self, u: &[f64], tau: f64, tol: f64) -> Result<(Vec<f64>, InnerStats)> {
        let step = self.h * self.h / (4.0 * self.shape.dims() as f64 * tau);
        let mut gap = self.gap(u, tau);
        if gap <= tol {
            return Ok((self.v.clone(), InnerStats { iterations: 0, residual: gap }));
        }
        let mut t = 1.0f64;
        for (q, p) in self.q.iter_mut().zip(&self.p) {
            q.copy_from_slice(p);
        }

        for iter in 1..=MAX_DUAL_ITERATIONS {
            // Ascent step from the extrapolated point q, then projection.
            self.recover(u, tau, true);
            gradient_into(self.shape, self.h, &self.v, &mut self.grad);
            std::mem::swap(&mut self.p_prev, &mut self.p);
            match self.shape.dims() {
                1 => {
                    for ((p, q), g) in self.p[0].iter_mut().zip(&self.q[0]).zip(&self.grad[0]) {
                        *p = (q + step * g).clamp(-1.0, 1.0);
                    }
                }
                _ => {
                    for k in 0..self.v.len() {
                        let a = self.q[0][k] + step * self.grad[0][k];
                        let b = self.q[1][k] + step * self.grad[1][k];
                        let scale = 1.0f64.max(a.hypot(b));
                        self.p[0][k] = a / scale;
                        self.p[1][k] = b / scale;
                    }
                }
            }
            let nx = self.shape.nx();
            for j in 0..self.shape.ny() {
                self.p[0][j * nx + nx - 1] = 0.0;
            }
            if self.shape.dims() == 2 {
                let off = (self.shape.ny() - 1) * nx;
                for v in &mut self.p[1][off..] {
                    *v = 0.0;
                }
            }

            // Gradient restart: drop the momentum when the step from the
            // extrapolated point q opposes the last displacement p - p_prev.
            let mut align = 0.0;
            for ((q, p), pp) in self.q.iter().zip(&self.p).zip(&self.p_prev) {
                for ((qi, pi), ppi) in q.iter().zip(p).zip(pp) {
                    align += (qi - pi) * (pi - ppi);
                }
            }
            let restart = align > 0.0;
            let t_next = if restart { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
            let beta = if restart { 0.0 } else { (t - 1.0) / t_next };
            t = t_next;
            for ((q, p), pp) in self.q.iter_mut().zip(&self.p).zip(&self.p_prev) {
                for ((qi, pi), ppi) in q.iter_mut().zip(p).zip(pp) {
                    *qi = pi + beta * (pi - ppi);
                }
            }

            if iter % GAP_CHECK_EVERY == 0 {
                gap = self.gap(u, tau);
                if gap <= tol {
                    return Ok((self.v.clone(), InnerStats { iterations: iter, residual: gap }));
                }
            }
        }
        Err(Error::Convergence {
            solver: "total-variation dual ascent",
            iterations: MAX_DUAL_ITERATIONS,
            residual: gap,
            target: tol,
        })
    }
}

/// Approximate minimizer of `TV(v) + ||v - u||^2 / (2 tau)` with duality gap
/// at most `inner_tol`.
pub fn prox_tv(u: &Field, tau: f64, inner_tol: f64) -> Result<Field> {
    check_step_params(tau, inner_tol)?;
    if total_variation(u) == 0.0 {
        return Ok(u.clone());
    }
    let mut solver = TvSolver::new(u.shape(), u.h());
    let (v, _) = solver.solve(u.values(), tau, inner_tol)?;
    Ok(Field::from_parts_unchecked(u.shape(), u.h(), v))
}
