//! Quantitative ingredients of the Gamma-convergence `E_eps** -> TV`:
//! the uniform linear lower bound, the limsup coefficient, the cost of a
//! smoothed jump and the slow-time jump energies `H_alpha`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{energy, total_variation, EnergyKind, Field};
use crate::potential::{convex_envelope, ConvexEnvelope, ScalarPotential, DEFAULT_ENVELOPE_TOL};

pub const DEFAULT_SIGMA_SAMPLES: usize = 10_000;
/// Smallest positive grid point relative to `b`.
const SIGMA_FLOOR_FACTOR: f64 = 1e-6;
const EPS1_FLOOR: f64 = 1e-6;

/// The four ranges of `sigma` distinguished by the lower-bound argument:
/// `[0, b]`, `(b, sqrt(e^2 - 1)]`, `(sqrt(e^2 - 1), 1/(eps |ln eps|)]` and beyond.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundRegion {
    Small,
    Moderate,
    Logarithmic,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub eps: f64,
    pub a: f64,
    pub b: f64,
    pub sigma_max: f64,
    pub samples: usize,
    /// `min_sigma phi_eps**(sigma) - a sigma + b` over the grid.
    pub min_margin: f64,
    pub argmin_sigma: f64,
    pub region: BoundRegion,
    /// True when `sigma_max >= 4a/eps`, beyond which `phi** >= eps sigma^2/4 >= a sigma`
    /// and the grid minimum is the minimum over all `sigma >= sigma_max` too.
    pub tail_certified: bool,
    pub pass: bool,
}

fn region_of(sigma: f64, eps: f64, b: f64) -> BoundRegion {
    let second = (std::f64::consts::E.powi(2) - 1.0).sqrt();
    let third = 1.0 / (eps * eps.ln().abs());
    if sigma <= b {
        BoundRegion::Small
    } else if sigma <= second {
        BoundRegion::Moderate
    } else if sigma <= third {
        BoundRegion::Logarithmic
    } else {
        BoundRegion::Quadratic
    }
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must lie in (0, 1), got {x}")))
    }
}

/// `0` followed by `samples - 1` geometrically spaced points up to `sigma_max`.
pub fn geometric_sigma_grid(first: f64, sigma_max: f64, samples: usize) -> Vec<f64> {
    let m = samples.saturating_sub(1).max(1);
    let ratio = (sigma_max / first).powf(1.0 / (m - 1).max(1) as f64);
    let mut grid = Vec::with_capacity(m + 1);
    grid.push(0.0);
    grid.extend((0..m).map(|i| if i + 1 == m { sigma_max } else { first * ratio.powi(i as i32) }));
    grid
}

/// Margin of `phi_eps**(sigma) >= a |sigma| - b` on a geometric grid of `[0, sigma_max]`.
pub fn lower_bound_margin(eps: f64, a: f64, b: f64, sigma_max: f64, samples: usize) -> Result<BoundReport> {
    check_unit("a", a)?;
    check_unit("b", b)?;
    let pot = ScalarPotential::new(eps)?;
    let third = 1.0 / (eps * pot.log_eps_abs());
    let mut errs = Vec::new();
    if !(sigma_max > third) {
        errs.push(format!(
            "sigma_max = {sigma_max} does not reach past 1/(eps |ln eps|) = {third}"
        ));
    }
    if samples < 16 {
        errs.push(format!("samples: need at least 16, got {samples}"));
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let env = convex_envelope(&pot, DEFAULT_ENVELOPE_TOL)?;
    Ok(margin_on_grid(&env, a, b, &geometric_sigma_grid(SIGMA_FLOOR_FACTOR * b, sigma_max, samples)))
}

fn margin_on_grid(env: &ConvexEnvelope, a: f64, b: f64, grid: &[f64]) -> BoundReport {
    let eps = env.eps();
    let (mut min_margin, mut argmin) = (f64::INFINITY, 0.0);
    for &s in grid {
        let m = env.value(s) - a * s + b;
        if m < min_margin {
            min_margin = m;
            argmin = s;
        }
    }
    let sigma_max = *grid.last().unwrap();
    BoundReport {
        eps,
        a,
        b,
        sigma_max,
        samples: grid.len(),
        min_margin,
        argmin_sigma: argmin,
        region: region_of(argmin, eps, b),
        tail_certified: sigma_max >= 4.0 * a / eps,
        pass: min_margin >= 0.0,
    }
}

/// A `sigma_max` that covers all four regions and certifies the tail.
pub fn default_sigma_max(eps: f64, a: f64) -> f64 {
    let third = 1.0 / (eps * eps.ln().abs());
    (8.0 * a / eps).max(2.0 * third)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eps1Report {
    pub a: f64,
    pub b: f64,
    /// Largest tested `eps` below which every tested value passes.
    pub eps1: Option<f64>,
    /// `(eps, min_margin, pass)` for every grid value, in decreasing `eps`.
    pub tested: Vec<(f64, f64, bool)>,
}

/// `eps_k = 2^(-k/4)`, `k >= 1`, down to the floor `1e-6`.
pub fn eps1_grid() -> Vec<f64> {
    (1..)
        .map(|k| 2f64.powf(-(k as f64) / 4.0))
        .take_while(|&e| e >= EPS1_FLOOR)
        .collect()
}

/// Empirical threshold below which `phi_eps** >= a|sigma| - b` holds.
pub fn find_eps1(a: f64, b: f64) -> Result<Eps1Report> {
    check_unit("a", a)?;
    check_unit("b", b)?;
    let tested = eps1_grid()
        .into_par_iter()
        .map(|eps| {
            let r = lower_bound_margin(eps, a, b, default_sigma_max(eps, a), DEFAULT_SIGMA_SAMPLES)?;
            Ok((eps, r.min_margin, r.pass))
        })
        .collect::<Result<Vec<_>>>()?;
    let eps1 = match tested.iter().rposition(|t| !t.2) {
        None => tested.first().map(|t| t.0),
        Some(i) => tested.get(i + 1).map(|t| t.0),
    };
    Ok(Eps1Report { a, b, eps1, tested })
}

/// Coefficient `a_eps` with `phi_eps**(sigma) <= a_eps sigma` on `[0, 2/eps]`:
/// the slope of the chord from the origin to `(2/eps, phi_eps(2/eps))`.
pub fn limsup_coeff(eps: f64) -> Result<f64> {
    let pot = ScalarPotential::new(eps)?;
    let l = pot.log_eps_abs();
    Ok(0.5 * ((1.0 + 4.0 / (eps * eps)).ln() / (2.0 * l) + 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Linear,
    Smoothstep,
}

/// A monotone transition from `-J/2` to `J/2` over `[-eta, eta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpProfile {
    pub jump: f64,
    pub eta: f64,
    pub kind: ProfileKind,
    /// Samples across the transition `[-eta, eta]`.
    pub resolution: usize,
}

impl JumpProfile {
    pub fn new(jump: f64, eta: f64, kind: ProfileKind, resolution: usize) -> Result<Self> {
        let mut errs = Vec::new();
        if !(jump > 0.0 && jump.is_finite()) {
            errs.push(format!("jump must be positive, got {jump}"));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            errs.push(format!("eta must be positive, got {eta}"));
        }
        if resolution < 2 {
            errs.push(format!("resolution must be at least 2, got {resolution}"));
        }
        if errs.is_empty() {
            Ok(Self { jump, eta, kind, resolution })
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        let s = (0.5 * (y / self.eta + 1.0)).clamp(0.0, 1.0);
        let shape = match self.kind {
            ProfileKind::Linear => s,
            ProfileKind::Smoothstep => s * s * (3.0 - 2.0 * s),
        };
        self.jump * (shape - 0.5)
    }
}

/// Discrete `E_eps` of `v(x) = profile(x / eps)` on `(-1, 1)`.
///
/// The grid resolves the transition layer with `resolution` cells, so the
/// spacing is `2 eps eta / resolution`. Only the layer and one constant
/// cell on either side are visited: the flat tails have zero gradient and
/// `phi_eps(0) = 0`.
pub fn jump_cost(profile: &JumpProfile, eps: f64) -> Result<f64> {
    let pot = ScalarPotential::new(eps)?;
    if eps * profile.eta >= 1.0 {
        return Err(Error::Config(vec![format!(
            "transition layer eps * eta = {} does not fit in (-1, 1)",
            eps * profile.eta
        )]));
    }
    let r = profile.resolution;
    let dy = 2.0 * profile.eta / r as f64;
    let hx = eps * dy;
    let sample = |i: isize| profile.eval(-profile.eta + (i as f64 + 0.5) * dy);
    let sum: f64 = (-1..=r as isize)
        .map(|i| pot.value(((sample(i + 1) - sample(i)) / hx).abs()))
        .sum();
    Ok(sum * hx)
}

/// Limit cost `2 eta + J^2 / (8 eta)` of a linear ramp of half-width `eta`.
pub fn ramp_limit_cost(jump: f64, eta: f64) -> f64 {
    2.0 * eta + jump * jump / (8.0 * eta)
}

/// Minimizer and minimum of [`ramp_limit_cost`] over `eta`: `(J/4, J)`.
pub fn optimal_eta(jump: f64) -> Result<(f64, f64)> {
    if !(jump > 0.0 && jump.is_finite()) {
        return Err(Error::Domain(format!("jump must be positive, got {jump}")));
    }
    Ok((0.25 * jump, jump))
}

/// `sum |J|^alpha` for `alpha in (0, 1]`, `sum ln |J|` for `alpha = 0`.
pub fn h_alpha(jumps: &[f64], alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if let Some(j) = jumps.iter().find(|j| **j == 0.0 || !j.is_finite()) {
        return Err(Error::Domain(format!("jumps must be finite and nonzero, got {j}")));
    }
    Ok(if alpha == 0.0 {
        jumps.iter().map(|j| j.abs().ln()).sum()
    } else {
        jumps.iter().map(|j| j.abs().powf(alpha)).sum()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompactnessReport {
    /// `E_eps**(u)`
    pub lhs: f64,
    /// `TV(u)/2 - |Omega|/2`
    pub rhs: f64,
    pub pass: bool,
}

/// The `a = b = 1/2` instance of the lower bound, integrated over the grid.
pub fn compactness_bound(u: &Field, eps: f64) -> Result<CompactnessReport> {
    let env = convex_envelope(&ScalarPotential::new(eps)?, DEFAULT_ENVELOPE_TOL)?;
    let lhs = energy(u, EnergyKind::EpsStar, None, Some(&env))?;
    let rhs = 0.5 * total_variation(u) - 0.5 * u.domain_measure();
    Ok(CompactnessReport { lhs, rhs, pass: lhs >= rhs })
}
