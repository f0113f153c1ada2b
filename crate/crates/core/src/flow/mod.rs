//! Time evolution by minimizing movements.
//!
//! Both flows are computed by the implicit scheme
//! `u^{k+1} = argmin E(v) + ||v - u^k||^2 / (2 tau)` on a uniform time grid:
//! with `E = E_eps**` for the rescaled Perona-Malik model and `E = TV` for
//! the total variation flow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{energy, total_variation, EnergyKind, Field};
use crate::potential::{convex_envelope, ConvexEnvelope, ScalarPotential, DEFAULT_ENVELOPE_TOL};

pub mod config;
mod mm;
mod tv;

pub use config::{ExperimentConfig, GridSpec, InitSpec, Model, DEFAULT_INNER_TOL, DEFAULT_TAU};
pub use mm::{mm_step, InnerStats};
pub use tv::prox_tv;

pub(crate) use mm::MmSolver;
pub(crate) use tv::TvSolver;

/// The time change linking the regularized equation to the rescaled one:
/// `u_eps(t) = v_delta(t * time_factor)` with `delta = eps^2 |ln eps| / 4`
/// and `time_factor = 1 / (eps |ln eps|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleMap {
    pub eps: f64,
    pub delta: f64,
    pub time_factor: f64,
}

pub fn delta_of_eps(eps: f64) -> Result<RescaleMap> {
    let pot = ScalarPotential::new(eps)?;
    let l = pot.log_eps_abs();
    Ok(RescaleMap {
        eps,
        delta: 0.25 * eps * eps * l,
        time_factor: 1.0 / (eps * l),
    })
}

impl RescaleMap {
    /// Energy of the regularized (unscaled) problem is this multiple of `E_eps`.
    pub fn energy_factor(&self) -> f64 {
        1.0 / self.time_factor
    }
}

/// Which energy drives the evolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dynamics {
    Convexified(ConvexEnvelope),
    TotalVariation,
}

impl Dynamics {
    pub fn from_model(model: &Model) -> Result<Self> {
        match *model {
            Model::Pm { eps } => {
                let pot = ScalarPotential::new(eps)?;
                Ok(Dynamics::Convexified(convex_envelope(&pot, DEFAULT_ENVELOPE_TOL)?))
            }
            Model::Tv => Ok(Dynamics::TotalVariation),
        }
    }

    pub fn energy(&self, u: &Field) -> f64 {
        match self {
            Dynamics::Convexified(env) => energy(u, EnergyKind::EpsStar, None, Some(env)).unwrap_or(f64::NAN),
            Dynamics::TotalVariation => total_variation(u),
        }
    }
}

/// A discrete trajectory `u^0, u^1, ...` with its diagnostics.
///
/// `step_norms[k] = ||u^{k+1} - u^k||_2`. For the Perona-Malik model
/// `slopes[k]` is `||grad E**(u^k)||_2`; for the total variation flow
/// `slopes[k]` (k >= 1) is the norm of the subgradient `(u^{k-1} - u^k)/tau`
/// selected by the implicit step, and `slopes[0]` is a proximal-quotient
/// estimate.
#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub model: Model,
    pub tau: f64,
    pub inner_tol: f64,
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
    pub energies: Vec<f64>,
    pub step_norms: Vec<f64>,
    pub slopes: Vec<f64>,
    pub inner_iterations: Vec<usize>,
}

impl FlowTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &Field {
        self.fields.last().expect("trace always holds the initial datum")
    }

    /// Field at the sample time closest to `t`.
    pub fn at_time(&self, t: f64) -> &Field {
        let k = ((t / self.tau).round().max(0.0) as usize).min(self.len() - 1);
        &self.fields[k]
    }
}

/// Discrete mean of the datum: the constant every trace converges to.
pub fn steady_mean(u0: &Field) -> f64 {
    u0.mean()
}

/// Runs the configured evolution from its initial datum.
pub fn evolve(cfg: &ExperimentConfig) -> Result<FlowTrace> {
    cfg.validate()?;
    let shape = cfg.grid.shape()?;
    let u0 = cfg.init.build(shape, cfg.grid.h)?;
    let dynamics = Dynamics::from_model(&cfg.model)?;
    evolve_field(cfg.model, &dynamics, u0, cfg.tau, cfg.steps(), cfg.inner_tol)
}

/// Runs `steps` implicit steps of size `tau` from `u0`.
pub fn evolve_field(
    model: Model,
    dynamics: &Dynamics,
    u0: Field,
    tau: f64,
    steps: usize,
    inner_tol: f64,
) -> Result<FlowTrace> {
    mm::check_step_params(tau, inner_tol)?;
    let shape = u0.shape();
    let h = u0.h();
    let w = u0.cell_volume();

    let mut trace = FlowTrace {
        model,
        tau,
        inner_tol,
        times: Vec::with_capacity(steps + 1),
        fields: Vec::with_capacity(steps + 1),
        energies: Vec::with_capacity(steps + 1),
        step_norms: Vec::with_capacity(steps),
        slopes: Vec::with_capacity(steps + 1),
        inner_iterations: Vec::with_capacity(steps),
    };
    trace.times.push(0.0);
    trace.energies.push(dynamics.energy(&u0));

    let wrap = |k: usize, e: Error| Error::Step {
        index: k,
        time: k as f64 * tau,
        source: Box::new(e),
    };

    match dynamics {
        Dynamics::Convexified(env) => {
            let mut solver = MmSolver::new(shape, h);
            trace.slopes.push(crate::grid::slope_field(&u0, env).l2_norm());
            trace.fields.push(u0);
            let mut guess = vec![0.0; shape.len()];
            for k in 1..=steps {
                let u = trace.fields[k - 1].values();
                // Linear extrapolation of the last two states as the inner initial guess.
                if k >= 2 {
                    let prev = trace.fields[k - 2].values();
                    for ((g, a), b) in guess.iter_mut().zip(u).zip(prev) {
                        *g = 2.0 * a - b;
                    }
                } else {
                    guess.copy_from_slice(u);
                }
                let (v, stats) = solver.solve(env, u, &guess, tau, inner_tol).map_err(|e| wrap(k, e))?;
                let v = Field::from_parts_unchecked(shape, h, v);
                trace.step_norms.push(crate::grid::weighted_distance(v.values(), u, w));
                trace.slopes.push(crate::grid::slope_field(&v, env).l2_norm());
                trace.energies.push(dynamics.energy(&v));
                trace.times.push(k as f64 * tau);
                trace.inner_iterations.push(stats.iterations);
                trace.fields.push(v);
            }
        }
        Dynamics::TotalVariation => {
            trace.slopes.push(tv_initial_slope(&u0, tau, inner_tol).map_err(|e| wrap(0, e))?);
            trace.fields.push(u0);
            let mut solver = TvSolver::new(shape, h);
            for k in 1..=steps {
                let u = trace.fields[k - 1].values();
                let (v, iterations) = if total_variation(&trace.fields[k - 1]) == 0.0 {
                    (u.to_vec(), 0)
                } else {
                    // Gap `inner_tol * tau` bounds the per-step energy error like the
                    // residual bound does for the smooth model.
                    let (v, stats) = solver.solve(u, tau, inner_tol * tau).map_err(|e| wrap(k, e))?;
                    (v, stats.iterations)
                };
                let v = Field::from_parts_unchecked(shape, h, v);
                let dist = crate::grid::weighted_distance(v.values(), u, w);
                trace.step_norms.push(dist);
                trace.slopes.push(dist / tau);
                trace.energies.push(dynamics.energy(&v));
                trace.times.push(k as f64 * tau);
                trace.inner_iterations.push(iterations);
                trace.fields.push(v);
            }
        }
    }
    Ok(trace)
}

/// Proximal-quotient estimate of the TV slope at the initial datum.
fn tv_initial_slope(u0: &Field, tau: f64, inner_tol: f64) -> Result<f64> {
    if total_variation(u0) == 0.0 {
        return Ok(0.0);
    }
    let q = |t: f64| -> Result<f64> { Ok(prox_tv(u0, t, inner_tol)?.l2_distance(u0)? / t) };
    let (q1, q2) = (q(tau)?, q(0.5 * tau)?);
    Ok(crate::slope::extrapolate_to_zero(tau, q1, 0.5 * tau, q2).max(0.0))
}
