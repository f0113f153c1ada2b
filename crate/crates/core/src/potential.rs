//! The rescaled Perona-Malik integrand and its convex envelope.
//!
//! For `eps` in (0, 1) the potential is
//!
//! ```text
//! phi(s) = ln(1 + s^2) / (2 eps |ln eps|) + eps s^2 / 4
//! ```
//!
//! which is convex on `[0, s_a]`, concave on `[s_a, s_b]` and convex again on
//! `[s_b, inf)`. The envelope replaces the middle part by the bitangent
//! segment touching the graph at `sigma1 < s_a` and `sigma2 > s_b`.
//! Everything is defined for `s >= 0` and extended evenly.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Default relative tolerance for the bitangent residuals.
pub const DEFAULT_ENVELOPE_TOL: f64 = 1e-10;

/// `phi_eps` together with the cached `|ln eps|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarPotential {
    eps: f64,
    log_eps_abs: f64,
}

impl ScalarPotential {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Domain(format!("eps must lie in (0, 1), got {eps}")));
        }
        Ok(Self {
            eps,
            log_eps_abs: -eps.ln(),
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn log_eps_abs(&self) -> f64 {
        self.log_eps_abs
    }

    /// Weight `1 / (eps |ln eps|)` of the logarithmic part.
    pub fn log_weight(&self) -> f64 {
        1.0 / (self.eps * self.log_eps_abs)
    }

    /// `phi(s)`, even in `s`. No finiteness check.
    #[inline]
    pub fn value(&self, sigma: f64) -> f64 {
        let s2 = sigma * sigma;
        0.5 * self.log_weight() * s2.ln_1p() + 0.25 * self.eps * s2
    }

    /// `phi'(s)`, odd in `s`.
    #[inline]
    pub fn deriv(&self, sigma: f64) -> f64 {
        self.log_weight() * sigma / (1.0 + sigma * sigma) + 0.5 * self.eps * sigma
    }

    #[inline]
    pub fn second_deriv(&self, sigma: f64) -> f64 {
        let s2 = sigma * sigma;
        self.log_weight() * (1.0 - s2) / ((1.0 + s2) * (1.0 + s2)) + 0.5 * self.eps
    }

    /// `phi'(s) / s`, continuous at 0 where it equals `phi''(0)`.
    #[inline]
    pub fn deriv_over_sigma(&self, sigma: f64) -> f64 {
        self.log_weight() / (1.0 + sigma * sigma) + 0.5 * self.eps
    }

    /// The two inflection points `s_a < s_b` bounding the concave well.
    ///
    /// With `w = s^2` and `c = eps^2 |ln eps| / 2`, `phi''(s) = 0` reads
    /// `c w^2 + (2c - 1) w + (c + 1) = 0`.
    pub fn inflection_points(&self) -> Option<(f64, f64)> {
        let c = 0.5 * self.eps * self.eps * self.log_eps_abs;
        let disc = 1.0 - 8.0 * c;
        if disc <= 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        // Product of roots is (c + 1) / c; take the small one from it for accuracy.
        let w_big = (1.0 - 2.0 * c + sq) / (2.0 * c);
        let w_small = (c + 1.0) / (c * w_big);
        Some((w_small.sqrt(), w_big.sqrt()))
    }
}

/// `phi_eps(sigma)`.
pub fn phi_eps(pot: &ScalarPotential, sigma: f64) -> Result<f64> {
    ensure_finite(sigma, "sigma")?;
    Ok(pot.value(sigma))
}

/// `phi_eps'(sigma)`.
pub fn phi_eps_deriv(pot: &ScalarPotential, sigma: f64) -> Result<f64> {
    ensure_finite(sigma, "sigma")?;
    Ok(pot.deriv(sigma))
}

/// Convex envelope of `phi_eps`: `phi` outside `[sigma1, sigma2]`, affine inside.
///
/// `scale` multiplies the whole function; it is 1 for the envelope returned
/// by [`convex_envelope`] and differs only for [`ConvexEnvelope::rescaled`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexEnvelope {
    pub source: ScalarPotential,
    pub sigma1: f64,
    pub sigma2: f64,
    pub slope_m: f64,
    pub offset_q: f64,
    pub scale: f64,
}

/// Builds the bitangent construction by nested bisection.
///
/// The outer search runs over `sigma1` in the first convex branch. For each
/// candidate the inner search finds `sigma2` in the last branch with the
/// same derivative, and the sign of the gap between `phi(sigma2)` and the
/// tangent line at `sigma1` drives the outer bisection (the gap is strictly
/// decreasing in `sigma1`).
pub fn convex_envelope(pot: &ScalarPotential, tol: f64) -> Result<ConvexEnvelope> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tol must be positive, got {tol}")));
    }
    let (s_a, s_b) = pot.inflection_points().ok_or_else(|| {
        Error::Structural(format!(
            "phi_eps has no concave region for eps = {}; nothing to convexify",
            pot.eps
        ))
    })?;
    let slope_floor = pot.deriv(s_b);

    let matching = |s1: f64| -> (f64, f64) {
        let m = pot.deriv(s1);
        if m <= slope_floor {
            return (s_b, f64::INFINITY);
        }
        let s2 = bisect(s_b, 2.0 * m / pot.eps, |s| pot.deriv(s) - m);
        let gap = pot.value(s2) - pot.value(s1) - m * (s2 - s1);
        (s2, gap)
    };

    let (_, gap_hi) = matching(s_a);
    if !(gap_hi < 0.0) {
        return Err(Error::Structural(format!(
            "bitangent not bracketed for eps = {}",
            pot.eps
        )));
    }
    let sigma1 = bisect_decreasing(0.0, s_a, |s| matching(s).1);
    let (sigma2, _) = matching(sigma1);
    let slope_m = pot.deriv(sigma1);
    let offset_q = pot.value(sigma1) - slope_m * sigma1;

    let tangency = (pot.deriv(sigma2) - slope_m).abs() / slope_m;
    let secant = ((pot.value(sigma2) - pot.value(sigma1)) / (sigma2 - sigma1) - slope_m).abs() / slope_m;
    if tangency > tol || secant > tol {
        return Err(Error::Structural(format!(
            "bitangent residuals {tangency:.2e}, {secant:.2e} exceed tolerance {tol:.2e}"
        )));
    }

    Ok(ConvexEnvelope {
        source: *pot,
        sigma1,
        sigma2,
        slope_m,
        offset_q,
        scale: 1.0,
    })
}

/// Root of an increasing function on `[lo, hi]`, `f(lo) <= 0 <= f(hi)`.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Root of a decreasing function on `[lo, hi]`, `f(lo) >= 0 >= f(hi)`.
fn bisect_decreasing(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    bisect(lo, hi, |x| -f(x))
}

impl ConvexEnvelope {
    pub fn eps(&self) -> f64 {
        self.source.eps()
    }

    /// Same envelope multiplied by `factor > 0`.
    pub fn rescaled(&self, factor: f64) -> Self {
        Self {
            scale: self.scale * factor,
            ..*self
        }
    }

    /// Envelope value at `sigma` (even).
    #[inline]
    pub fn value(&self, sigma: f64) -> f64 {
        let s = sigma.abs();
        let v = if s > self.sigma1 && s < self.sigma2 {
            self.slope_m * s + self.offset_q
        } else {
            self.source.value(s)
        };
        self.scale * v
    }

    /// Envelope derivative at `sigma` (odd).
    #[inline]
    pub fn deriv(&self, sigma: f64) -> f64 {
        let s = sigma.abs();
        let d = if s > self.sigma1 && s < self.sigma2 {
            self.slope_m
        } else {
            self.source.deriv(s)
        };
        self.scale * d.copysign(sigma)
    }

    /// `deriv(s) / s` for `s >= 0`, extended at 0 by `phi''(0)`.
    #[inline]
    pub fn flux_coeff(&self, sigma: f64) -> f64 {
        let s = sigma.abs();
        let g = if s > self.sigma1 && s < self.sigma2 {
            self.slope_m / s
        } else {
            self.source.deriv_over_sigma(s)
        };
        self.scale * g
    }

    /// Upper bound on the second derivative of the envelope, and on the
    /// flux coefficient; both peak at the origin.
    pub fn curvature_bound(&self) -> f64 {
        self.scale * self.source.deriv_over_sigma(0.0)
    }
}

/// `(value, derivative)` of the envelope at `sigma`.
pub fn envelope_eval(env: &ConvexEnvelope, sigma: f64) -> Result<(f64, f64)> {
    ensure_finite(sigma, "sigma")?;
    Ok((env.value(sigma), env.deriv(sigma)))
}
