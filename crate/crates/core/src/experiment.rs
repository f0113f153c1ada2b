//! Experiment orchestration: single runs with on-disk artifacts and the
//! epsilon sweep comparing the Perona-Malik flows with the TV flow.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::{evolve, evolve_field, Dynamics, ExperimentConfig, FlowTrace, InitSpec, Model};
use crate::grid::io::write_field_csv;
use crate::grid::{Field, Shape};
use crate::slope::{check_edi, slope_match_defect, EdiReport};

pub const TRACE_FILE: &str = "trace.json";
pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// EDI tolerance used for every emitted trace, relative to the inner tolerance.
pub const EDI_TOL_FACTOR: f64 = 10.0;

/// Serialized form of a [`FlowTrace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFile {
    pub model: Model,
    pub dims: usize,
    pub shape: Vec<usize>,
    pub h: f64,
    pub tau: f64,
    pub inner_tol: f64,
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    pub step_norms: Vec<f64>,
    pub slopes: Vec<f64>,
    pub inner_iterations: Vec<usize>,
    pub fields: Vec<Vec<f64>>,
}

impl From<&FlowTrace> for TraceFile {
    fn from(t: &FlowTrace) -> Self {
        let u0 = &t.fields[0];
        TraceFile {
            model: t.model,
            dims: u0.dims(),
            shape: u0.shape().extents(),
            h: u0.h(),
            tau: t.tau,
            inner_tol: t.inner_tol,
            times: t.times.clone(),
            energies: t.energies.clone(),
            step_norms: t.step_norms.clone(),
            slopes: t.slopes.clone(),
            inner_iterations: t.inner_iterations.clone(),
            fields: t.fields.iter().map(|f| f.values().to_vec()).collect(),
        }
    }
}

impl TryFrom<TraceFile> for FlowTrace {
    type Error = Error;

    fn try_from(f: TraceFile) -> Result<FlowTrace> {
        let n = f.times.len();
        if n == 0
            || f.fields.len() != n
            || f.energies.len() != n
            || f.slopes.len() != n
            || f.step_norms.len() + 1 != n
            || f.inner_iterations.len() + 1 != n
        {
            return Err(Error::Shape("trace arrays have inconsistent lengths".into()));
        }
        let shape = Shape::new(f.dims, &f.shape)?;
        let fields = f
            .fields
            .into_iter()
            .map(|v| Field::new(shape, f.h, v))
            .collect::<Result<Vec<_>>>()?;
        Ok(FlowTrace {
            model: f.model,
            tau: f.tau,
            inner_tol: f.inner_tol,
            times: f.times,
            fields,
            energies: f.energies,
            step_norms: f.step_norms,
            slopes: f.slopes,
            inner_iterations: f.inner_iterations,
        })
    }
}

pub fn read_trace(path: &Path) -> Result<FlowTrace> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str::<TraceFile>(&text)?.try_into()
}

pub fn write_trace(trace: &FlowTrace, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string(&TraceFile::from(trace))?)?;
    Ok(())
}

/// Largest per-step increase of energy, L2 norm and max norm along a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub max_energy_increase: f64,
    pub max_l2_increase: f64,
    pub max_linf_increase: f64,
    pub tolerance_used: f64,
    pub pass: bool,
}

/// Energy, `||u||_2` and `||u||_inf` must be nonincreasing up to `tol` per step.
pub fn check_monotonicity(trace: &FlowTrace, tol: f64) -> MonotonicityReport {
    let worst = |xs: &[f64]| xs.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let l2: Vec<f64> = trace.fields.iter().map(Field::l2_norm).collect();
    let linf: Vec<f64> = trace.fields.iter().map(Field::linf_norm).collect();
    let (e, a, b) = (worst(&trace.energies), worst(&l2), worst(&linf));
    MonotonicityReport {
        max_energy_increase: e,
        max_l2_increase: a,
        max_linf_increase: b,
        tolerance_used: tol,
        pass: e <= tol && a <= tol && b <= tol,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: Model,
    pub steps: usize,
    pub final_time: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub steady_mean: f64,
    pub final_distance_to_mean: f64,
    pub total_inner_iterations: usize,
    pub edi: EdiReport,
    pub monotonicity: MonotonicityReport,
    /// `max_k |metric derivative_k - slope_{k+1}|`.
    pub slope_match_defect: f64,
    pub pass: bool,
}

impl RunReport {
    pub fn from_trace(trace: &FlowTrace) -> Self {
        let edi = check_edi(trace, EDI_TOL_FACTOR * trace.inner_tol);
        let monotonicity = check_monotonicity(trace, trace.inner_tol * trace.tau);
        let mean = trace.fields[0].mean();
        RunReport {
            model: trace.model,
            steps: trace.len() - 1,
            final_time: *trace.times.last().unwrap(),
            initial_energy: trace.energies[0],
            final_energy: *trace.energies.last().unwrap(),
            steady_mean: mean,
            final_distance_to_mean: trace.last().add_constant(-mean).l2_norm(),
            total_inner_iterations: trace.inner_iterations.iter().sum(),
            pass: edi.pass && monotonicity.pass,
            edi,
            monotonicity,
            slope_match_defect: slope_match_defect(trace),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    ChecksFailed,
    SolverFailed,
}

/// SHA-256 of the canonical JSON serialization of `cfg`, in hex.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(cfg)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: FlowTrace,
    pub report: RunReport,
    pub manifest: Manifest,
}

/// Evolves `cfg` and writes `trace.json`, `report.json`, `manifest.json`
/// and the field snapshots into `out_dir`.
///
/// A solver failure is recorded in the manifest before the error is
/// returned. A run whose checks fail is still written; the manifest status
/// and `report.pass` say so.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: config_hash(cfg)?,
        config: cfg.clone(),
        status: RunStatus::Success,
        error: None,
        files: Vec::new(),
    };
    let write_manifest = |m: &Manifest| -> Result<()> {
        fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(m)?)?;
        Ok(())
    };

    let trace = match evolve(cfg) {
        Ok(t) => t,
        Err(e) => {
            manifest.status = RunStatus::SolverFailed;
            manifest.error = Some(e.to_string());
            manifest.files.push(MANIFEST_FILE.into());
            write_manifest(&manifest)?;
            return Err(e);
        }
    };

    write_trace(&trace, &out_dir.join(TRACE_FILE))?;
    manifest.files.push(TRACE_FILE.into());

    let report = RunReport::from_trace(&trace);
    fs::write(out_dir.join(REPORT_FILE), serde_json::to_string_pretty(&report)?)?;
    manifest.files.push(REPORT_FILE.into());

    if cfg.snapshot_stride > 0 {
        let dir = out_dir.join("fields");
        fs::create_dir_all(&dir)?;
        for k in (0..trace.len()).step_by(cfg.snapshot_stride) {
            let name = format!("fields/u_{k:06}.csv");
            write_field_csv(&trace.fields[k], &out_dir.join(&name))?;
            manifest.files.push(name);
        }
    }

    if !report.pass {
        manifest.status = RunStatus::ChecksFailed;
    }
    manifest.files.push(MANIFEST_FILE.into());
    write_manifest(&manifest)?;
    Ok(RunOutcome { trace, report, manifest })
}

/// Extinction time of the TV flow from `jump/2 * sign(x)` on `(-half_length, half_length)`.
pub fn step_extinction_time(jump: f64, half_length: f64) -> f64 {
    0.5 * jump.abs() * half_length
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRun {
    pub eps: f64,
    pub sup_error: f64,
    /// Sample time at which the sup is attained.
    pub argmax_time: f64,
    pub final_error: f64,
    pub runtime_s: f64,
    pub edi: EdiReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareResult {
    pub eps_list: Vec<f64>,
    pub sup_errors: Vec<f64>,
    pub runtimes: Vec<f64>,
    pub runs: Vec<CompareRun>,
    pub reference_edi: EdiReport,
    pub reference_runtime_s: f64,
    pub t_end: f64,
    pub sample_stride: usize,
    pub perturbation: Option<InitSpec>,
    pub config: ExperimentConfig,
    #[serde(skip)]
    pub reference: Option<FlowTrace>,
    #[serde(skip)]
    pub traces: Vec<FlowTrace>,
}

impl CompareResult {
    /// True when the sup errors decrease strictly along the list.
    pub fn strictly_decreasing(&self) -> bool {
        self.sup_errors.windows(2).all(|w| w[1] < w[0])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,sup_error,runtime_s\n");
        for r in &self.runs {
            s.push_str(&format!("{},{},{}\n", r.eps, r.sup_error, r.runtime_s));
        }
        s
    }
}

/// Sup over sampled times of `||u_eps(t) - u_TV(t)||_2` for each `eps`.
///
/// The TV reference is computed once from `base.init`; each Perona-Malik
/// run starts from `base.init + eps * perturbation` when a perturbation is
/// given. Runs share the grid and time step of `base` and execute
/// concurrently; results are ordered as `eps_list`. Every `sample_stride`-th
/// step is sampled, and the final step always is.
pub fn compare_convergence(
    base: &ExperimentConfig,
    eps_list: &[f64],
    t_end: f64,
    sample_stride: usize,
    perturbation: Option<&InitSpec>,
) -> Result<CompareResult> {
    let mut errs = Vec::new();
    if eps_list.is_empty() {
        errs.push("eps_list: must not be empty".to_string());
    }
    if eps_list.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        errs.push(format!("eps_list: every eps must lie in (0, 1), got {eps_list:?}"));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        errs.push(format!("eps_list: must be strictly decreasing, got {eps_list:?}"));
    }
    if sample_stride == 0 {
        errs.push("sample_stride: must be at least 1".to_string());
    }
    let cfg = ExperimentConfig {
        model: Model::Tv,
        t_end,
        ..base.clone()
    };
    if let Err(Error::Config(e)) = cfg.validate() {
        errs.extend(e);
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }

    let shape = cfg.grid.shape()?;
    let h = cfg.grid.h;
    let steps = cfg.steps();
    let u0 = cfg.init.build(shape, h)?;
    let pert = perturbation.map(|p| p.build(shape, h)).transpose()?;

    let start = Instant::now();
    let reference = evolve_field(Model::Tv, &Dynamics::TotalVariation, u0.clone(), cfg.tau, steps, cfg.inner_tol)?;
    let reference_runtime_s = start.elapsed().as_secs_f64();
    let reference_edi = check_edi(&reference, EDI_TOL_FACTOR * cfg.inner_tol);

    let mut samples: Vec<usize> = (0..=steps).step_by(sample_stride).collect();
    if *samples.last().unwrap() != steps {
        samples.push(steps);
    }

    let runs = eps_list
        .par_iter()
        .map(|&eps| -> Result<(CompareRun, FlowTrace)> {
            let start = Instant::now();
            let model = Model::Pm { eps };
            let dynamics = Dynamics::from_model(&model)?;
            let init = match &pert {
                Some(p) => u0.with_values(u0.values().iter().zip(p.values()).map(|(a, b)| a + eps * b).collect())?,
                None => u0.clone(),
            };
            let trace = evolve_field(model, &dynamics, init, cfg.tau, steps, cfg.inner_tol)?;
            let runtime_s = start.elapsed().as_secs_f64();
            let (mut sup_error, mut argmax_time) = (0.0, 0.0);
            for &k in &samples {
                let d = trace.fields[k].l2_distance(&reference.fields[k])?;
                if d > sup_error {
                    sup_error = d;
                    argmax_time = trace.times[k];
                }
            }
            let final_error = trace.last().l2_distance(reference.last())?;
            let edi = check_edi(&trace, EDI_TOL_FACTOR * cfg.inner_tol);
            Ok((
                CompareRun {
                    eps,
                    sup_error,
                    argmax_time,
                    final_error,
                    runtime_s,
                    edi,
                },
                trace,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let (runs, traces): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    Ok(CompareResult {
        eps_list: eps_list.to_vec(),
        sup_errors: runs.iter().map(|r| r.sup_error).collect(),
        runtimes: runs.iter().map(|r| r.runtime_s).collect(),
        runs,
        reference_edi,
        reference_runtime_s,
        t_end,
        sample_stride,
        perturbation: perturbation.cloned(),
        config: cfg,
        reference: Some(reference),
        traces,
    })
}

/// Writes `compare.csv` and `compare.json` into `out_dir`.
pub fn write_compare(result: &CompareResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let csv = out_dir.join("compare.csv");
    let json = out_dir.join("compare.json");
    fs::write(&csv, result.to_csv())?;
    fs::write(&json, serde_json::to_string_pretty(result)?)?;
    Ok(vec![csv, json])
}
