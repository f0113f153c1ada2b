//! Metric gradient-flow diagnostics on finite-dimensional spaces.
//!
//! Points are real vectors with the weighted distance
//! `d(x, y) = (w * sum (x_i - y_i)^2)^(1/2)`; with `w = h^dims` this is the
//! discrete L2 distance between fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{mm_step, prox_tv, FlowTrace};
use crate::grid::{energy, slope_field, total_variation, weighted_distance, EnergyKind, Field, Shape};
use crate::potential::ConvexEnvelope;

type ValueFn<'a> = Box<dyn Fn(&[f64]) -> f64 + Send + Sync + 'a>;
type ProxFn<'a> = Box<dyn Fn(&[f64], f64) -> Result<Vec<f64>> + Send + Sync + 'a>;

/// A functional given by an evaluator, optionally with its proximal map
/// and a closed-form slope.
pub struct SampledFunctional<'a> {
    value: ValueFn<'a>,
    prox: Option<ProxFn<'a>>,
    slope: Option<ValueFn<'a>>,
    weight: f64,
    prox_taus: Vec<f64>,
}

impl<'a> SampledFunctional<'a> {
    pub fn new(value: impl Fn(&[f64]) -> f64 + Send + Sync + 'a) -> Self {
        Self {
            value: Box::new(value),
            prox: None,
            slope: None,
            weight: 1.0,
            prox_taus: vec![1e-4, 5e-5],
        }
    }

    pub fn with_prox(mut self, prox: impl Fn(&[f64], f64) -> Result<Vec<f64>> + Send + Sync + 'a) -> Self {
        self.prox = Some(Box::new(prox));
        self
    }

    pub fn with_slope(mut self, slope: impl Fn(&[f64]) -> f64 + Send + Sync + 'a) -> Self {
        self.slope = Some(Box::new(slope));
        self
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    /// Step sizes used when the slope has to come from [`slope_prox`].
    pub fn with_prox_taus(mut self, taus: Vec<f64>) -> Self {
        self.prox_taus = taus;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        weighted_distance(x, y, self.weight)
    }

    pub fn prox(&self, x: &[f64], tau: f64) -> Result<Vec<f64>> {
        match &self.prox {
            Some(p) => p(x, tau),
            None => Err(Error::Unsupported("functional has no proximal map".into())),
        }
    }

    /// Descending slope: closed form when available, proximal quotient otherwise.
    pub fn slope(&self, x: &[f64]) -> Result<f64> {
        if let Some(s) = &self.slope {
            return Ok(s(x));
        }
        Ok(slope_prox(self, x, &self.prox_taus)?.estimate)
    }

    /// `E_eps**` on a fixed grid, with the closed-form slope `||grad E**||_2`
    /// and the minimizing-movement step as proximal map.
    pub fn convexified_energy(shape: Shape, h: f64, env: ConvexEnvelope, inner_tol: f64) -> Self {
        let field = move |x: &[f64]| Field::new(shape, h, x.to_vec());
        SampledFunctional::new(move |x| {
            field(x)
                .and_then(|u| energy(&u, EnergyKind::EpsStar, None, Some(&env)))
                .unwrap_or(f64::INFINITY)
        })
        .with_slope(move |x| {
            field(x)
                .map(|u| slope_field(&u, &env).l2_norm())
                .unwrap_or(f64::INFINITY)
        })
        .with_prox(move |x, tau| Ok(mm_step(&field(x)?, tau, &env, inner_tol)?.into_values()))
        .with_weight(crate::grid::cell_volume(shape, h))
    }

    /// Discrete total variation; the slope comes from the proximal quotient.
    pub fn total_variation(shape: Shape, h: f64, inner_tol: f64) -> Self {
        let field = move |x: &[f64]| Field::new(shape, h, x.to_vec());
        SampledFunctional::new(move |x| field(x).map(|u| total_variation(&u)).unwrap_or(f64::INFINITY))
            .with_prox(move |x, tau| Ok(prox_tv(&field(x)?, tau, inner_tol)?.into_values()))
            .with_weight(crate::grid::cell_volume(shape, h))
    }
}

/// Linear extrapolation to `tau = 0` from two samples; for `tau2 = tau1 / 2`
/// this is the Richardson combination `2 q2 - q1`.
pub fn extrapolate_to_zero(tau1: f64, q1: f64, tau2: f64, q2: f64) -> f64 {
    q2 + (q2 - q1) * tau2 / (tau1 - tau2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeEstimate {
    pub estimate: f64,
    /// `(tau, d(x, prox_tau x) / tau)` for every step size tried.
    pub quotients: Vec<(f64, f64)>,
}

/// Descending slope through the proximal quotient `d(x, prox_tau x) / tau`,
/// extrapolated to `tau = 0` from the two smallest step sizes.
pub fn slope_prox(f: &SampledFunctional, x: &[f64], tau_seq: &[f64]) -> Result<SlopeEstimate> {
    if f.prox.is_none() {
        return Err(Error::Unsupported("slope_prox needs a proximal map".into()));
    }
    if tau_seq.is_empty() || tau_seq.iter().any(|&t| !(t > 0.0)) || tau_seq.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Domain("tau_seq must be positive and strictly decreasing".into()));
    }
    let quotients = tau_seq
        .iter()
        .map(|&tau| Ok((tau, f.distance(x, &f.prox(x, tau)?) / tau)))
        .collect::<Result<Vec<_>>>()?;
    let estimate = match quotients.as_slice() {
        [.., (t1, q1), (t2, q2)] => extrapolate_to_zero(*t1, *q1, *t2, *q2).max(0.0),
        [(_, q)] => *q,
        [] => unreachable!(),
    };
    Ok(SlopeEstimate { estimate, quotients })
}

/// `||u^{k+1} - u^k||_2 / (t_{k+1} - t_k)` for every step.
pub fn metric_derivative(trace: &FlowTrace) -> Vec<f64> {
    trace
        .step_norms
        .iter()
        .zip(trace.times.windows(2))
        .map(|(d, t)| d / (t[1] - t[0]))
        .collect()
}

/// Largest `d(u(s), u(t)) - sum_{s <= k < t} dt_k |u'|_k` over sampled pairs
/// (every `stride`-th index). Nonpositive up to rounding.
pub fn metric_derivative_excess(trace: &FlowTrace, stride: usize) -> f64 {
    let md = metric_derivative(trace);
    let mut cum = vec![0.0; trace.len()];
    for k in 0..md.len() {
        cum[k + 1] = cum[k] + md[k] * (trace.times[k + 1] - trace.times[k]);
    }
    let idx: Vec<usize> = (0..trace.len()).step_by(stride.max(1)).collect();
    let mut worst = f64::NEG_INFINITY;
    for (a, &s) in idx.iter().enumerate() {
        for &t in &idx[a + 1..] {
            let d = trace.fields[s].l2_distance(&trace.fields[t]).unwrap_or(f64::NAN);
            worst = worst.max(d - (cum[t] - cum[s]));
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdiReport {
    pub pairs_checked: usize,
    /// Minimum over pairs `s < t` of the dissipation surplus divided by `t - s`.
    pub worst_residual: f64,
    pub worst_pair: Option<(usize, usize)>,
    pub tolerance_used: f64,
    pub pass: bool,
}

/// Energy-dissipation inequality over all index pairs `s < t`:
///
/// `E[s] - E[t] >= 1/2 sum dt |u'|_k^2 + 1/2 sum dt slope_{k+1}^2 - tol (t - s)`.
///
/// Indices in `excluded` (the exceptional time set) are skipped as endpoints.
pub fn check_edi(trace: &FlowTrace, tol: f64) -> EdiReport {
    check_edi_excluding(trace, tol, &[])
}

pub fn check_edi_excluding(trace: &FlowTrace, tol: f64, excluded: &[usize]) -> EdiReport {
    let n = trace.len();
    let md = metric_derivative(trace);
    // cum[k] = 1/2 sum_{j<k} dt_j (|u'|_j^2 + slope_{j+1}^2)
    let mut cum = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let dt = trace.times[k + 1] - trace.times[k];
        cum[k + 1] = cum[k] + 0.5 * dt * (md[k] * md[k] + trace.slopes[k + 1] * trace.slopes[k + 1]);
    }
    let mut worst = f64::INFINITY;
    let mut worst_pair = None;
    let mut pairs = 0;
    for s in 0..n {
        if excluded.contains(&s) {
            continue;
        }
        for t in s + 1..n {
            if excluded.contains(&t) {
                continue;
            }
            pairs += 1;
            let surplus = trace.energies[s] - trace.energies[t] - (cum[t] - cum[s]);
            let r = surplus / (t - s) as f64;
            if r < worst {
                worst = r;
                worst_pair = Some((s, t));
            }
        }
    }
    if pairs == 0 {
        worst = 0.0;
    }
    EdiReport {
        pairs_checked: pairs,
        worst_residual: worst,
        worst_pair,
        tolerance_used: tol,
        pass: worst >= -tol,
    }
}

/// Largest `|metric_derivative[k] - slopes[k+1]|`.
pub fn slope_match_defect(trace: &FlowTrace) -> f64 {
    metric_derivative(trace)
        .iter()
        .zip(&trace.slopes[1..])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeViolation {
    pub center: usize,
    pub probe: usize,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScpReport {
    pub pairs_checked: usize,
    pub min_margin: f64,
    pub violations: Vec<ConeViolation>,
    pub pass: bool,
}

/// Checks `F(y) >= F(x) - |grad F|(x) d(x, y)` on `centers x probes`,
/// skipping centers where `F` or its slope is not finite. A pair violates
/// the property when its margin is below `-tol`.
pub fn check_slope_cone(
    f: &SampledFunctional,
    centers: &[Vec<f64>],
    probes: &[Vec<f64>],
    tol: f64,
) -> Result<ScpReport> {
    let mut pairs = 0;
    let mut min_margin = f64::INFINITY;
    let mut violations = Vec::new();
    for (ci, x) in centers.iter().enumerate() {
        let fx = f.eval(x);
        if !fx.is_finite() {
            continue;
        }
        let s = f.slope(x)?;
        if !s.is_finite() {
            continue;
        }
        for (pi, y) in probes.iter().enumerate() {
            pairs += 1;
            let margin = f.eval(y) - fx + s * f.distance(x, y);
            min_margin = min_margin.min(margin);
            if margin < -tol {
                violations.push(ConeViolation {
                    center: ci,
                    probe: pi,
                    margin,
                });
            }
        }
    }
    Ok(ScpReport {
        pairs_checked: pairs,
        min_margin: if pairs == 0 { 0.0 } else { min_margin },
        pass: violations.is_empty(),
        violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitTolerances {
    /// Premise: `sup_n |F_n(x_n)| + |grad F_n|(x_n)` must stay below this.
    pub premise_bound: f64,
    pub energy_tol: f64,
    pub slope_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub energies: Vec<f64>,
    pub slopes: Vec<f64>,
    pub distances: Vec<f64>,
    pub limit_energy: f64,
    pub limit_slope: f64,
    /// False when the premise is violated: nothing is claimed then.
    pub engaged: bool,
    pub energy_converges: bool,
    pub slope_liminf_holds: bool,
    pub pass: bool,
}

/// Numerical check of the implication "bounded energies and slopes along
/// `x_n -> x` imply `F_n(x_n) -> F(x)` and `liminf |grad F_n|(x_n) >= |grad F|(x)`".
///
/// The energy limit is judged on the last element; the slope liminf on the
/// minimum over the second half of the sequence.
pub fn check_limit_hypothesis(
    f_seq: &[SampledFunctional],
    f_lim: &SampledFunctional,
    x: &[f64],
    approx_seq: &[Vec<f64>],
    tol: LimitTolerances,
) -> Result<LimitReport> {
    if f_seq.len() != approx_seq.len() || f_seq.is_empty() {
        return Err(Error::Shape("need one approximating point per functional".into()));
    }
    let energies: Vec<f64> = f_seq.iter().zip(approx_seq).map(|(f, xn)| f.eval(xn)).collect();
    let slopes = f_seq
        .iter()
        .zip(approx_seq)
        .map(|(f, xn)| f.slope(xn))
        .collect::<Result<Vec<_>>>()?;
    let distances: Vec<f64> = approx_seq.iter().map(|xn| f_lim.distance(xn, x)).collect();
    let limit_energy = f_lim.eval(x);
    let limit_slope = f_lim.slope(x)?;

    let engaged = energies
        .iter()
        .zip(&slopes)
        .all(|(e, s)| e.is_finite() && s.is_finite() && e.abs() + s <= tol.premise_bound);
    let last = *energies.last().unwrap();
    let energy_converges = (last - limit_energy).abs() <= tol.energy_tol;
    let tail = &slopes[slopes.len() / 2..];
    let liminf = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let slope_liminf_holds = liminf >= limit_slope - tol.slope_tol;
    Ok(LimitReport {
        energies,
        slopes,
        distances,
        limit_energy,
        limit_slope,
        engaged,
        energy_converges,
        slope_liminf_holds,
        pass: !engaged || (energy_converges && slope_liminf_holds),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn half_norm_squared<'a>() -> SampledFunctional<'a> {
        SampledFunctional::new(|x| 0.5 * x.iter().map(|v| v * v).sum::<f64>())
            .with_prox(|x, tau| Ok(x.iter().map(|v| v / (1.0 + tau)).collect()))
    }

    fn abs_value<'a>() -> SampledFunctional<'a> {
        SampledFunctional::new(|x| x[0].abs()).with_prox(|x, tau| {
            let v = x[0];
            Ok(vec![v.signum() * (v.abs() - tau).max(0.0)])
        })
    }

    #[test]
    fn prox_slope_of_quadratic() {
        let f = half_norm_squared();
        let x = vec![1.0, 2.0, 2.0];
        let est = slope_prox(&f, &x, &[0.1, 0.05]).unwrap();
        for &(tau, q) in &est.quotients {
            assert_abs_diff_eq!(q, 3.0 / (1.0 + tau), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(est.estimate, 3.0, epsilon = 0.02);
        let fine = slope_prox(&f, &x, &[1e-4, 5e-5]).unwrap();
        assert_abs_diff_eq!(fine.estimate, 3.0, epsilon = 1e-7);
    }

    #[test]
    fn prox_slope_of_absolute_value() {
        let f = abs_value();
        let est = slope_prox(&f, &[2.0], &[1.0, 0.5, 0.25]).unwrap();
        assert!(est.quotients.iter().all(|&(_, q)| (q - 1.0).abs() < 1e-14));
        assert_abs_diff_eq!(est.estimate, 1.0, epsilon = 1e-14);
        assert_eq!(slope_prox(&f, &[0.0], &[0.1, 0.05]).unwrap().estimate, 0.0);
    }

    #[test]
    fn prox_slope_errors() {
        let f = SampledFunctional::new(|x| x[0]);
        assert!(matches!(slope_prox(&f, &[1.0], &[0.1]), Err(Error::Unsupported(_))));
        let g = abs_value();
        assert!(slope_prox(&g, &[1.0], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn slope_cone_examples() {
        let pts: Vec<Vec<f64>> = (-10..=10).map(|k| vec![k as f64 * 0.37]).collect();
        let quad = SampledFunctional::new(|x| 2.0 * x[0] * x[0] + x[0]).with_slope(|x| (4.0 * x[0] + 1.0).abs());
        assert!(check_slope_cone(&quad, &pts, &pts, 1e-12).unwrap().pass);

        let neg_abs = SampledFunctional::new(|x| -x[0].abs()).with_slope(|_| 1.0);
        let r = check_slope_cone(&neg_abs, &pts, &pts, 1e-12).unwrap();
        assert!(r.pass, "{r:?}");

        let neg_sq = SampledFunctional::new(|x| -x[0] * x[0]).with_slope(|x| 2.0 * x[0].abs());
        let r = check_slope_cone(&neg_sq, &[vec![0.0]], &[vec![1.0]], 1e-12).unwrap();
        assert!(!r.pass);
        assert_eq!(r.violations.len(), 1);
        assert_abs_diff_eq!(r.violations[0].margin, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn limit_hypothesis_fixed_convex_functional() {
        let x = vec![1.0, -2.0];
        let seq: Vec<_> = (0..5).map(|_| half_norm_squared()).collect();
        let pts = vec![x.clone(); 5];
        let tol = LimitTolerances {
            premise_bound: 100.0,
            energy_tol: 1e-12,
            slope_tol: 1e-6,
        };
        let r = check_limit_hypothesis(&seq, &half_norm_squared(), &x, &pts, tol).unwrap();
        assert!(r.engaged && r.pass);
        assert_eq!(r.energies[4], r.limit_energy);

        let shifted: Vec<_> = (0..5)
            .map(|_| {
                SampledFunctional::new(|x: &[f64]| 1.0 + 0.5 * x.iter().map(|v| v * v).sum::<f64>())
                    .with_prox(|x, tau| Ok(x.iter().map(|v| v / (1.0 + tau)).collect()))
            })
            .collect();
        let r = check_limit_hypothesis(&shifted, &half_norm_squared(), &x, &pts, tol).unwrap();
        assert!(r.engaged && !r.energy_converges && !r.pass);

        let tight = LimitTolerances { premise_bound: 1.0, ..tol };
        let r = check_limit_hypothesis(&seq, &half_norm_squared(), &x, &pts, tight).unwrap();
        assert!(!r.engaged && r.pass);
    }
}
