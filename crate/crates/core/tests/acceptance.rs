//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Every reference value is produced here by an oracle that does not go
//! through the code path under test.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tvflow::experiment::{compare_convergence, CompareResult};
use tvflow::flow::{evolve_field, Dynamics, ExperimentConfig, FlowTrace, GridSpec, InitSpec, Model};
use tvflow::gamma::{find_eps1, geometric_sigma_grid, jump_cost, limsup_coeff, JumpProfile, ProfileKind};
use tvflow::grid::{divergence, energy, gradient, slope_field, total_variation, EnergyKind, VectorField};
use tvflow::potential::{convex_envelope, ScalarPotential};
use tvflow::slope::{check_edi, check_slope_cone, SampledFunctional};
use tvflow::{Field, Shape};

const N: usize = 400;
const TAU: f64 = 1e-3;
const INNER_TOL: f64 = 1e-8;
const JUMP: f64 = 1.0;
const EPS_LIST: [f64; 4] = [0.3, 0.2, 0.1, 0.05];

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn h() -> f64 {
    2.0 / N as f64
}

fn step_datum() -> Field {
    Field::from_fn(Shape::D1(N), h(), |x, _| 0.5 * JUMP * x.signum()).unwrap()
}

/// The headline comparison; its TV reference doubles as the criterion-1 trace.
fn headline() -> &'static CompareResult {
    static CELL: OnceLock<CompareResult> = OnceLock::new();
    CELL.get_or_init(|| {
        let base = ExperimentConfig {
            tau: TAU,
            inner_tol: INNER_TOL,
            ..ExperimentConfig::new(
                Model::Tv,
                GridSpec { dims: 1, n: vec![N], h: h() },
                InitSpec::Step { jump: JUMP },
                0.75,
            )
        };
        // t_end = 1.5 x the extinction time J/2
        compare_convergence(&base, &EPS_LIST, 0.75 * JUMP, 1, None).expect("headline sweep")
    })
}

fn tv_trace() -> &'static FlowTrace {
    headline().reference.as_ref().unwrap()
}

/// Exact TV flow from the step, built from the explicit dual field
/// `z(x) = 1 - |x|`: `|z| <= 1`, `z = 1` at the jump and `div z = -sign(x)`.
/// Each implicit step is `u^k = u^{k-1} + tau_k div z`, where `tau_k` is cut
/// at extinction. The certificate `<z, grad u^k> = TV(u^k)` is asserted.
fn dual_field_oracle(steps: usize) -> Vec<Field> {
    let shape = Shape::D1(N);
    let h = h();
    let z: Vec<f64> = (0..N)
        .map(|i| if i + 1 == N { 0.0 } else { 1.0 - (-1.0 + (i + 1) as f64 * h).abs() })
        .collect();
    let z = VectorField::new(shape, h, vec![z]).unwrap();
    assert!(z.cell_norms().iter().all(|&n| n <= 1.0 + 1e-15));
    let div_z = divergence(&z);
    let mut out = vec![step_datum()];
    let mut plateau = 0.5 * JUMP;
    for _ in 0..steps {
        let prev = out.last().unwrap();
        let dt = TAU.min(plateau);
        plateau -= dt;
        let next = prev.with_values(prev.values().iter().zip(div_z.values()).map(|(u, d)| u + dt * d).collect()).unwrap();
        let pairing = z.inner(&gradient(&next));
        assert!((pairing - total_variation(&next)).abs() <= 1e-9, "dual certificate");
        out.push(next);
    }
    out
}

fn criterion_1() -> Outcome {
    let trace = tv_trace();
    let oracle = dual_field_oracle(trace.len() - 1);
    // the certificate reproduces the closed form on cell centres
    let closed = |t: f64| Field::from_fn(Shape::D1(N), h(), |x, _| x.signum() * (0.5 * JUMP - t).max(0.0)).unwrap();
    let closed_gap = (0..trace.len()).map(|k| oracle[k].l2_distance(&closed(trace.times[k])).unwrap()).fold(0.0, f64::max);
    let sup = (0..trace.len()).map(|k| trace.fields[k].l2_distance(&oracle[k]).unwrap()).fold(0.0, f64::max);
    let k_ext = (0.52 / TAU).round() as usize;
    let mean = trace.fields[0].mean();
    let ext = trace.fields[k_ext].add_constant(-mean).l2_norm();
    check(
        sup <= 0.02 && ext <= 0.01 && closed_gap <= 1e-12,
        format!("sup L2 error {sup:.3e} (<= 0.02), |u(0.52) - mean| = {ext:.3e} (<= 0.01), oracle vs closed form {closed_gap:.1e}"),
    )
}

fn criterion_2() -> Outcome {
    let r = headline();
    let errs: Vec<String> = r.runs.iter().map(|x| format!("{}: {:.4}", x.eps, x.sup_error)).collect();
    let last = *r.sup_errors.last().unwrap();
    let total = r.reference_runtime_s + r.runtimes.iter().sum::<f64>();
    check(
        r.strictly_decreasing() && last <= 0.15 && total <= 300.0,
        format!("sup errors [{}] strictly decreasing, {last:.4} <= 0.15 at eps = 0.05; solver time {total:.1}s", errs.join(", ")),
    )
}

fn sigma_hull_check(eps: f64, a: f64, b: f64) -> (f64, usize) {
    let env = convex_envelope(&ScalarPotential::new(eps).unwrap(), 1e-10).unwrap();
    let top = (8.0 * a / eps).max(2.0 / (eps * eps.ln().abs()));
    let grid = geometric_sigma_grid(1e-6 * b, top, 10_000);
    let m = grid.iter().map(|&s| env.value(s) - a * s + b).fold(f64::INFINITY, f64::min);
    (m, grid.len())
}

fn criterion_3() -> Outcome {
    let r = find_eps1(0.5, 0.5).map_err(|e| e.to_string())?;
    let Some(e1) = r.eps1 else {
        return Err("find_eps1 found no threshold".into());
    };
    let (m, n) = sigma_hull_check(0.5 * e1, 0.5, 0.5);
    check(
        m >= 0.0 && n == 10_000,
        format!("eps1 = {e1:.4}; at eps1/2 min of phi** - |s|/2 + 1/2 over {n} geometric points = {m:.4e}"),
    )
}

fn criterion_4() -> Outcome {
    // closed form evaluated independently
    let oracle = |eps: f64| 0.5 * ((1.0 + 4.0 / (eps * eps)).ln() / (2.0 * eps.ln().abs()) + 1.0);
    let a1 = limsup_coeff(0.01).map_err(|e| e.to_string())?;
    let a2 = limsup_coeff(0.1).map_err(|e| e.to_string())?;
    let mut worst: f64 = f64::NEG_INFINITY;
    for (eps, a) in [(0.01, a1), (0.1, a2)] {
        let env = convex_envelope(&ScalarPotential::new(eps).unwrap(), 1e-10).unwrap();
        let top = 2.0 / eps;
        for k in 0..=100_000 {
            let s = top * k as f64 / 100_000.0;
            worst = worst.max(env.value(s) - a * s);
        }
    }
    check(
        (a1 - 1.07526).abs() <= 1e-3
            && (a2 - 1.15078).abs() <= 1e-3
            && (a1 - oracle(0.01)).abs() < 1e-14
            && (a2 - oracle(0.1)).abs() < 1e-14
            && worst <= 1e-12,
        format!("a(0.01) = {a1:.5}, a(0.1) = {a2:.5}; max of phi** - a s on [0, 2/eps] = {worst:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let p = JumpProfile::new(1.0, 0.25, ProfileKind::Linear, 10_000).map_err(|e| e.to_string())?;
    let cost = jump_cost(&p, 1e-3).map_err(|e| e.to_string())?;
    let (eta, val) = (1..=100_000)
        .map(|k| k as f64 * 1e-4)
        .map(|eta| (eta, 2.0 * eta + 1.0 / (8.0 * eta)))
        .fold((f64::NAN, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
    check(
        (cost - 1.0).abs() <= 0.1 && (eta - 0.25).abs() <= 1e-3 && (val - 1.0).abs() <= 1e-3,
        format!("E_eps of the optimal ramp at eps = 1e-3: {cost:.5}; brute-force minimizer ({eta:.4}, {val:.6})"),
    )
}

fn criterion_6() -> Outcome {
    let r = headline();
    let tol = 10.0 * INNER_TOL;
    let mut traces = vec![tv_trace()];
    traces.extend(r.traces.iter());
    let reports: Vec<_> = traces.iter().map(|t| check_edi(t, tol)).collect();
    let worst = reports.iter().map(|x| x.worst_residual).fold(f64::INFINITY, f64::min);
    let all_pass = reports.iter().all(|x| x.pass);

    let mut corrupted = r.traces[2].clone();
    let mid = corrupted.len() / 2;
    corrupted.energies[mid] += 1.0;
    let bad = check_edi(&corrupted, tol);
    check(
        all_pass && !bad.pass && bad.worst_residual < -0.5,
        format!(
            "{} traces pass with tol {tol:.0e} (worst {worst:.2e}); corrupted trace worst {:.3}",
            reports.len(),
            bad.worst_residual
        ),
    )
}

struct Instance {
    dynamics: Dynamics,
    model: Model,
    u0: Field,
    w0: Field,
}

fn random_instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..20)
        .map(|k| {
            let (shape, h) = if k % 2 == 0 { (Shape::D1(32), 1.0 / 32.0) } else { (Shape::D2(10, 10), 0.1) };
            let model = if k % 4 < 2 {
                Model::Pm { eps: [0.3, 0.2, 0.1, 0.05, 0.02][k % 5] }
            } else {
                Model::Tv
            };
            let mut field = || {
                let amp = rng.gen_range(0.2..1.0);
                Field::new(shape, h, (0..shape.len()).map(|_| rng.gen_range(-amp..amp)).collect()).unwrap()
            };
            let (u0, w0) = (field(), field());
            Instance {
                dynamics: Dynamics::from_model(&model).unwrap(),
                model,
                u0,
                w0,
            }
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let steps = 40;
    let per_step = INNER_TOL * TAU;
    let mut worst_increase: f64 = f64::NEG_INFINITY;
    let mut worst_contraction: f64 = f64::NEG_INFINITY;
    let mut worst_holder: f64 = f64::NEG_INFINITY;
    let mut worst_mass: f64 = 0.0;
    for inst in random_instances() {
        let u = evolve_field(inst.model, &inst.dynamics, inst.u0.clone(), TAU, steps, INNER_TOL).map_err(|e| e.to_string())?;
        let w = evolve_field(inst.model, &inst.dynamics, inst.w0.clone(), TAU, steps, INNER_TOL).map_err(|e| e.to_string())?;
        for k in 0..steps {
            let (a, b) = (&u.fields[k], &u.fields[k + 1]);
            worst_increase = worst_increase
                .max(u.energies[k + 1] - u.energies[k])
                .max(b.l2_norm() - a.l2_norm())
                .max(b.linf_norm() - a.linf_norm());
        }
        let d0 = inst.u0.l2_distance(&inst.w0).unwrap();
        let mut prev = d0;
        for k in 1..=steps {
            let d = u.fields[k].l2_distance(&w.fields[k]).unwrap();
            worst_contraction = worst_contraction.max(d - prev - 2.0 * per_step * k as f64);
            prev = d;
        }
        let bound = (2.0 * u.energies[0]).sqrt();
        for s in 0..=steps {
            for t in s + 1..=steps {
                let d = u.fields[s].l2_distance(&u.fields[t]).unwrap();
                worst_holder = worst_holder.max(d - ((t - s) as f64 * TAU).sqrt() * bound);
            }
        }
        let m0 = inst.u0.mean();
        for f in &u.fields {
            worst_mass = worst_mass.max((f.mean() - m0).abs() / m0.abs().max(1.0));
        }
    }
    check(
        worst_increase <= per_step && worst_contraction <= 0.0 && worst_holder <= 0.0 && worst_mass <= 1e-10,
        format!(
            "20 instances: max per-step increase {worst_increase:.2e} (<= {per_step:.0e}), contraction excess {worst_contraction:.2e}, Holder excess {worst_holder:.2e}, mean drift {worst_mass:.1e}"
        ),
    )
}

/// Lower convex hull of `(x_i, y_i)` (monotone chain), evaluated back at every `x_i`.
fn lower_hull_values(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut hull: Vec<usize> = Vec::new();
    for i in 0..xs.len() {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut out = vec![0.0; xs.len()];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        for i in a..=b {
            out[i] = ys[a] + (ys[b] - ys[a]) * (xs[i] - xs[a]) / (xs[b] - xs[a]);
        }
    }
    out
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_adj: f64 = 0.0;
    for shape in [Shape::D1(16), Shape::D2(8, 8)] {
        let h = 0.1;
        for _ in 0..100 {
            let u = Field::new(shape, h, (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let comps = (0..shape.dims())
                .map(|_| (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let p = VectorField::new(shape, h, comps).unwrap();
            let lhs = gradient(&u).inner(&p);
            let rhs = -u.inner(&divergence(&p)).unwrap();
            let scale = lhs.abs().max(rhs.abs()).max(1e-300);
            worst_adj = worst_adj.max((lhs - rhs).abs() / scale);
        }
    }

    let env = convex_envelope(&ScalarPotential::new(0.1).unwrap(), 1e-10).unwrap();
    let mut worst_fd: f64 = 0.0;
    for shape in [Shape::D1(12), Shape::D2(4, 3)] {
        let h = 0.25;
        for _ in 0..5 {
            let vals: Vec<f64> = (0..shape.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let u = Field::new(shape, h, vals.clone()).unwrap();
            let s = slope_field(&u, &env);
            let w = u.cell_volume();
            let e = |v: &[f64]| energy(&Field::new(shape, h, v.to_vec()).unwrap(), EnergyKind::EpsStar, None, Some(&env)).unwrap();
            for i in 0..shape.len() {
                let d = 1e-5;
                let (mut p, mut m) = (vals.clone(), vals.clone());
                p[i] += d;
                m[i] -= d;
                let fd = (e(&p) - e(&m)) / (2.0 * d);
                let an = w * s.values()[i];
                worst_fd = worst_fd.max((fd - an).abs() / an.abs().max(1e-3));
            }
        }
    }

    let step = 1e-3;
    let xs: Vec<f64> = (0..=200_000).map(|k| k as f64 * step).collect();
    let pot = ScalarPotential::new(0.1).unwrap();
    let ys: Vec<f64> = xs.iter().map(|&s| pot.value(s)).collect();
    let hull = lower_hull_values(&xs, &ys);
    let worst_hull = xs.iter().zip(&hull).map(|(&s, &v)| (env.value(s) - v).abs()).fold(0.0, f64::max);

    check(
        worst_adj <= 1e-12 && worst_fd <= 1e-6 && worst_hull <= 1e-6,
        format!("adjointness {worst_adj:.1e} (200 pairs), slope vs finite differences {worst_fd:.1e}, envelope vs dense hull {worst_hull:.1e}"),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let shape = Shape::D1(12);
    let h = 1.0 / 12.0;
    let env = convex_envelope(&ScalarPotential::new(0.1).unwrap(), 1e-10).unwrap();
    let e_star = SampledFunctional::convexified_energy(shape, h, env, 1e-12);
    let tv = SampledFunctional::total_variation(shape, h, 1e-13).with_prox_taus(vec![1e-4, 5e-5]);
    let mut random = || -> Vec<f64> { (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let tol = 1e-6;
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    for f in [&e_star, &tv] {
        for _ in 0..50 {
            let (x, y) = (random(), random());
            let r = check_slope_cone(f, &[x], &[y], tol).map_err(|e| e.to_string())?;
            violations += r.violations.len();
            min_margin = min_margin.min(r.min_margin);
        }
    }

    let neg_sq = SampledFunctional::new(|x| -x[0] * x[0]).with_slope(|x| 2.0 * x[0].abs());
    let r_sq = check_slope_cone(&neg_sq, &[vec![0.0]], &[vec![1.0]], 1e-12).map_err(|e| e.to_string())?;
    let sq_ok = r_sq.violations.len() == 1 && (r_sq.violations[0].margin + 1.0).abs() < 1e-15;

    let neg_abs = SampledFunctional::new(|x| -x[0].abs()).with_slope(|_| 1.0);
    let pts: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.gen_range(-3.0..3.0)]).collect();
    let mut pts0 = pts.clone();
    pts0.push(vec![0.0]);
    let r_abs = check_slope_cone(&neg_abs, &pts0, &pts0, 1e-12).map_err(|e| e.to_string())?;

    check(
        violations == 0 && sq_ok && r_abs.pass,
        format!(
            "E** and TV: {violations} violations in 100 pairs (min margin {min_margin:.3e}); -x^2 margin {:.3}; -|x| {} pairs, pass = {}",
            r_sq.min_margin, r_abs.pairs_checked, r_abs.pass
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("TV-flow oracle match", criterion_1),
        ("headline convergence", criterion_2),
        ("Gamma lower bound", criterion_3),
        ("limsup coefficient", criterion_4),
        ("jump-cost heuristic", criterion_5),
        ("EDI suite", criterion_6),
        ("monotonicity/contraction", criterion_7),
        ("operator/gradient checks", criterion_8),
        ("Slope-Cone suite", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {} [{name}]: PASS ({secs:.1}s) {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {} [{name}]: FAIL ({secs:.1}s) {msg}", i + 1);
            }
        }
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
