use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tvflow::experiment::{
    compare_convergence, read_trace, run_experiment, step_extinction_time, write_compare, RunStatus,
};
use tvflow::flow::{ExperimentConfig, GridSpec, InitSpec, Model, DEFAULT_INNER_TOL, DEFAULT_TAU};
use tvflow::gamma::{
    compactness_bound, default_sigma_max, find_eps1, jump_cost, limsup_coeff, lower_bound_margin, JumpProfile,
    ProfileKind, DEFAULT_SIGMA_SAMPLES,
};
use tvflow::grid::io::read_field;
use tvflow::potential::{convex_envelope, ScalarPotential, DEFAULT_ENVELOPE_TOL};
use tvflow::slope::{check_edi, check_slope_cone, metric_derivative, slope_match_defect, SampledFunctional};

#[derive(Parser)]
#[command(name = "tvflow", version, about = "Convexified Perona-Malik and total variation flows")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for random initial data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct RunArgs {
    /// `pm` or `tv`.
    #[arg(long, default_value = "pm")]
    model: String,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 1)]
    dims: usize,
    /// Cells per axis.
    #[arg(long, default_value_t = 400)]
    n: usize,
    /// Cell size; defaults to 2/n so the domain is (-1, 1).
    #[arg(long)]
    h: Option<f64>,
    /// Initial datum: step:J, ramp[:s], sine:k[:a], random:seed:amp, const:c, file:path.
    #[arg(long, default_value = "step:1")]
    init: String,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_INNER_TOL)]
    inner_tol: f64,
    #[arg(long, default_value_t = 0)]
    snapshot_stride: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate phi_eps and its convex envelope as CSV.
    Envelope {
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        sigma_max: Option<f64>,
        #[arg(long, default_value_t = 1001)]
        samples: usize,
    },
    /// Run one evolution and write trace, report and manifest.
    Evolve {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Check a stored trace.
    Verify {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum)]
        check: VerifyCheck,
        /// Tolerance; defaults to 10 * inner_tol of the trace.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Quantitative Gamma-convergence checks.
    Gamma {
        #[arg(long, value_enum)]
        check: GammaCheck,
        /// One or more eps values (comma separated).
        #[arg(long, value_delimiter = ',', default_value = "0.001")]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        a: f64,
        #[arg(long, default_value_t = 0.5)]
        b: f64,
        #[arg(long)]
        sigma_max: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_SIGMA_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 1.0)]
        jump: f64,
        #[arg(long, default_value_t = 0.25)]
        eta: f64,
        #[arg(long, value_enum, default_value = "linear")]
        profile: Profile,
        #[arg(long, default_value_t = 10_000)]
        resolution: usize,
        /// Field file (CSV or JSON) for the compactness check.
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Sup-in-time distance between the Perona-Malik flows and the TV flow.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.3,0.2,0.1,0.05")]
        eps_list: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Perturbation added with weight eps to the Perona-Malik initial data.
        #[arg(long)]
        perturb: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyCheck {
    Edi,
    SlopeMatch,
    Scp,
}

#[derive(Clone, Copy, ValueEnum)]
enum GammaCheck {
    LowerBound,
    Eps1,
    Limsup,
    JumpCost,
    Compactness,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Linear,
    Smoothstep,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn emit_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn build_config(cli: &Cli, run: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_json(&text)?
        }
        None => {
            let model = match run.model.as_str() {
                "pm" => Model::Pm { eps: run.eps },
                "tv" => Model::Tv,
                other => bail!("unknown model {other:?} (expected pm or tv)"),
            };
            let init = InitSpec::parse_compact(&run.init)?;
            let h = run.h.unwrap_or(2.0 / run.n as f64);
            let n = vec![run.n; run.dims];
            ExperimentConfig {
                tau: run.tau,
                inner_tol: run.inner_tol,
                snapshot_stride: run.snapshot_stride,
                t_end: run.t_end.unwrap_or_else(|| default_t_end(&init, 0.5 * run.n as f64 * h)),
                ..ExperimentConfig::new(model, GridSpec { dims: run.dims, n, h }, init, 0.0)
            }
        }
    };
    if let Some(seed) = cli.seed {
        cfg.init.reseed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// 1.5 times the TV extinction time for a step, 0.5 otherwise.
fn default_t_end(init: &InitSpec, half_length: f64) -> f64 {
    match init {
        InitSpec::Step { jump } => 1.5 * step_extinction_time(*jump, half_length),
        _ => 0.5,
    }
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>, default: &str) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from(default))
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Envelope { eps, sigma_max, samples } => {
            let pot = ScalarPotential::new(*eps)?;
            let env = convex_envelope(&pot, DEFAULT_ENVELOPE_TOL)?;
            let top = sigma_max.unwrap_or(2.0 * env.sigma2);
            if *samples < 2 || !(top > 0.0) {
                bail!("need at least 2 samples and a positive sigma_max");
            }
            let mut csv = String::from("sigma,phi,phi_env,phi_env_deriv\n");
            for k in 0..*samples {
                let s = top * k as f64 / (*samples - 1) as f64;
                csv.push_str(&format!("{s},{},{},{}\n", pot.value(s), env.value(s), env.deriv(s)));
            }
            match &cli.out {
                Some(dir) => {
                    fs::create_dir_all(dir)?;
                    fs::write(dir.join("envelope.csv"), csv)?;
                }
                None => print!("{csv}"),
            }
            if !cli.quiet {
                eprintln!(
                    "eps = {eps}: bitangent on [{:.6}, {:.6}], slope {:.6}",
                    env.sigma1, env.sigma2, env.slope_m
                );
            }
            Ok(true)
        }
        Command::Evolve { run } => {
            let cfg = build_config(&cli, run)?;
            let dir = out_dir(&cli, Some(&cfg), "out");
            let outcome = run_experiment(&cfg, &dir)?;
            if !cli.quiet {
                let r = &outcome.report;
                eprintln!(
                    "{} steps to t = {}: energy {:.6} -> {:.6}, EDI worst {:.3e} ({}), monotone: {}",
                    r.steps,
                    r.final_time,
                    r.initial_energy,
                    r.final_energy,
                    r.edi.worst_residual,
                    if r.edi.pass { "pass" } else { "FAIL" },
                    r.monotonicity.pass
                );
                eprintln!("artifacts in {}", dir.display());
            }
            Ok(outcome.manifest.status == RunStatus::Success)
        }
        Command::Verify { trace, check, tol } => verify(trace, *check, *tol),
        Command::Gamma {
            check,
            eps,
            a,
            b,
            sigma_max,
            samples,
            jump,
            eta,
            profile,
            resolution,
            field,
            format,
        } => {
            let kind = match profile {
                Profile::Linear => ProfileKind::Linear,
                Profile::Smoothstep => ProfileKind::Smoothstep,
            };
            match check {
                GammaCheck::LowerBound => {
                    let reports = eps
                        .iter()
                        .map(|&e| lower_bound_margin(e, *a, *b, sigma_max.unwrap_or(default_sigma_max(e, *a)), *samples))
                        .collect::<tvflow::Result<Vec<_>>>()?;
                    let pass = reports.iter().all(|r| r.pass);
                    if *format == Format::Csv {
                        println!("eps,min_margin,argmin_sigma,pass");
                        for r in &reports {
                            println!("{},{},{},{}", r.eps, r.min_margin, r.argmin_sigma, r.pass);
                        }
                    } else {
                        emit_json(&reports)?;
                    }
                    Ok(pass)
                }
                GammaCheck::Eps1 => {
                    let r = find_eps1(*a, *b)?;
                    if *format == Format::Csv {
                        println!("eps,min_margin,pass");
                        for (e, m, p) in &r.tested {
                            println!("{e},{m},{p}");
                        }
                    } else {
                        emit_json(&r)?;
                    }
                    Ok(r.eps1.is_some())
                }
                GammaCheck::Limsup => {
                    let vals = eps
                        .iter()
                        .map(|&e| Ok((e, limsup_coeff(e)?)))
                        .collect::<tvflow::Result<Vec<_>>>()?;
                    if *format == Format::Csv {
                        println!("eps,a_eps");
                        for (e, v) in &vals {
                            println!("{e},{v}");
                        }
                    } else {
                        emit_json(&vals.iter().map(|(e, v)| serde_json::json!({"eps": e, "a_eps": v})).collect::<Vec<_>>())?;
                    }
                    Ok(true)
                }
                GammaCheck::JumpCost => {
                    let p = JumpProfile::new(*jump, *eta, kind, *resolution)?;
                    let vals = eps
                        .iter()
                        .map(|&e| Ok((e, jump_cost(&p, e)?)))
                        .collect::<tvflow::Result<Vec<_>>>()?;
                    let limit = tvflow::gamma::ramp_limit_cost(*jump, *eta);
                    if *format == Format::Csv {
                        println!("eps,cost");
                        for (e, v) in &vals {
                            println!("{e},{v}");
                        }
                    } else {
                        emit_json(&serde_json::json!({
                            "profile": p,
                            "linear_ramp_limit": limit,
                            "costs": vals.iter().map(|(e, v)| serde_json::json!({"eps": e, "cost": v})).collect::<Vec<_>>(),
                        }))?;
                    }
                    Ok(true)
                }
                GammaCheck::Compactness => {
                    let path = field.as_ref().context("--field is required for the compactness check")?;
                    let u = read_field(path)?;
                    let reports = eps
                        .iter()
                        .map(|&e| compactness_bound(&u, e))
                        .collect::<tvflow::Result<Vec<_>>>()?;
                    emit_json(&reports)?;
                    Ok(reports.iter().all(|r| r.pass))
                }
            }
        }
        Command::Compare {
            run,
            eps_list,
            stride,
            perturb,
        } => {
            let mut args = run.clone();
            args.model = "tv".into();
            let cfg = build_config(&cli, &args)?;
            let pert = perturb.as_deref().map(InitSpec::parse_compact).transpose()?;
            let result = compare_convergence(&cfg, eps_list, cfg.t_end, *stride, pert.as_ref())?;
            let dir = out_dir(&cli, Some(&cfg), "out");
            write_compare(&result, &dir)?;
            print!("{}", result.to_csv());
            if !cli.quiet {
                eprintln!(
                    "sup errors {}strictly decreasing; results in {}",
                    if result.strictly_decreasing() { "" } else { "NOT " },
                    dir.display()
                );
            }
            Ok(result.reference_edi.pass && result.runs.iter().all(|r| r.edi.pass))
        }
    }
}

fn verify(path: &Path, check: VerifyCheck, tol: Option<f64>) -> Result<bool> {
    let trace = read_trace(path).with_context(|| format!("reading {}", path.display()))?;
    let tol = tol.unwrap_or(10.0 * trace.inner_tol);
    match check {
        VerifyCheck::Edi => {
            let r = check_edi(&trace, tol);
            emit_json(&r)?;
            Ok(r.pass)
        }
        VerifyCheck::SlopeMatch => {
            let defect = slope_match_defect(&trace);
            let pass = defect <= tol;
            emit_json(&serde_json::json!({
                "steps_checked": metric_derivative(&trace).len(),
                "worst_residual": defect,
                "tolerance_used": tol,
                "pass": pass,
            }))?;
            Ok(pass)
        }
        VerifyCheck::Scp => {
            let u0 = &trace.fields[0];
            let (shape, h) = (u0.shape(), u0.h());
            let f = match trace.model {
                Model::Pm { eps } => {
                    let env = convex_envelope(&ScalarPotential::new(eps)?, DEFAULT_ENVELOPE_TOL)?;
                    SampledFunctional::convexified_energy(shape, h, env, trace.inner_tol)
                }
                Model::Tv => SampledFunctional::total_variation(shape, h, trace.inner_tol)
                    .with_prox_taus(vec![trace.tau, 0.5 * trace.tau]),
            };
            let pick = |count: usize| -> Vec<Vec<f64>> {
                let n = trace.len();
                let mut idx: Vec<usize> = (0..count).map(|k| k * (n - 1) / (count - 1).max(1)).collect();
                idx.dedup();
                idx.into_iter().map(|k| trace.fields[k].values().to_vec()).collect()
            };
            let r = check_slope_cone(&f, &pick(5), &pick(10), tol)?;
            emit_json(&r)?;
            Ok(r.pass)
        }
    }
}
