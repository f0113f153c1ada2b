//! Declarative description of one evolution run.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{io::read_field, Field, Shape};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TAU: f64 = 1e-3;
pub const DEFAULT_INNER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Model {
    /// Convexified, time-rescaled Perona-Malik flow.
    Pm { eps: f64 },
    /// Total variation flow.
    Tv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dims: usize,
    /// Cells per axis; a single entry is used for every axis.
    pub n: Vec<usize>,
    pub h: f64,
}

impl GridSpec {
    pub fn shape(&self) -> Result<Shape> {
        Shape::new(self.dims, &self.n)
    }
}

/// Initial datum generators. Coordinates are centred on the domain midpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// `sign(x) * jump / 2`.
    Step { jump: f64 },
    /// `slope * x`.
    Ramp {
        #[serde(default = "one")]
        slope: f64,
    },
    /// `amplitude * sin(k pi x / Lx)` (times `cos(k pi y / Ly)` in 2D).
    Sine {
        k: u32,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Independent uniform values in `[-amplitude, amplitude]`.
    Random { seed: u64, amplitude: f64 },
    File { path: PathBuf },
    Constant { value: f64 },
    /// `base + weight * perturbation`.
    Sum {
        base: Box<InitSpec>,
        perturbation: Box<InitSpec>,
        weight: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl InitSpec {
    pub fn build(&self, shape: Shape, h: f64) -> Result<Field> {
        let lx = shape.nx() as f64 * h;
        let ly = shape.ny() as f64 * h;
        match self {
            InitSpec::Step { jump } => Field::from_fn(shape, h, |x, _| 0.5 * jump * x.signum()),
            InitSpec::Ramp { slope } => Field::from_fn(shape, h, |x, _| slope * x),
            InitSpec::Sine { k, amplitude } => {
                let k = *k as f64;
                Field::from_fn(shape, h, |x, y| {
                    let fy = if shape.dims() == 2 { (k * PI * y / ly).cos() } else { 1.0 };
                    amplitude * (k * PI * x / lx).sin() * fy
                })
            }
            InitSpec::Random { seed, amplitude } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let a = amplitude.abs();
                let values = (0..shape.len())
                    .map(|_| if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 })
                    .collect();
                Field::new(shape, h, values)
            }
            InitSpec::File { path } => {
                let u = read_field(path)?;
                if u.shape() != shape || (u.h() - h).abs() > 1e-9 * h {
                    return Err(Error::Shape(format!(
                        "{} holds a {:?} grid with h = {}, expected {:?} with h = {}",
                        path.display(),
                        u.shape(),
                        u.h(),
                        shape,
                        h
                    )));
                }
                Field::new(shape, h, u.into_values())
            }
            InitSpec::Constant { value } => Field::constant(shape, h, *value),
            InitSpec::Sum {
                base,
                perturbation,
                weight,
            } => {
                let b = base.build(shape, h)?;
                let p = perturbation.build(shape, h)?;
                let values = b.values().iter().zip(p.values()).map(|(x, y)| x + weight * y).collect();
                Field::new(shape, h, values)
            }
        }
    }

    /// Replaces the seed of every random generator.
    pub fn reseed(&mut self, new_seed: u64) {
        match self {
            InitSpec::Random { seed, .. } => *seed = new_seed,
            InitSpec::Sum { base, perturbation, .. } => {
                base.reseed(new_seed);
                perturbation.reseed(new_seed);
            }
            _ => {}
        }
    }

    /// Parses the compact command-line form: `step:J`, `ramp[:s]`,
    /// `sine:k[:a]`, `random:seed:amplitude`, `const:c`, `file:path`.
    pub fn parse_compact(s: &str) -> Result<Self> {
        let mut parts = s.splitn(2, ':');
        let head = parts.next().unwrap_or_default();
        let rest = parts.next();
        let nums = |r: Option<&str>| -> Result<Vec<f64>> {
            r.map(|r| {
                r.split(':')
                    .map(|x| x.parse::<f64>().map_err(|e| Error::Parse(format!("init {s:?}: {e}"))))
                    .collect()
            })
            .unwrap_or(Ok(Vec::new()))
        };
        let bad = || Error::Parse(format!("cannot parse initial datum {s:?}"));
        Ok(match head {
            "step" => match nums(rest)?.as_slice() {
                [] => InitSpec::Step { jump: 1.0 },
                [j] => InitSpec::Step { jump: *j },
                _ => return Err(bad()),
            },
            "ramp" => match nums(rest)?.as_slice() {
                [] => InitSpec::Ramp { slope: 1.0 },
                [a] => InitSpec::Ramp { slope: *a },
                _ => return Err(bad()),
            },
            "sine" => match nums(rest)?.as_slice() {
                [k] => InitSpec::Sine { k: *k as u32, amplitude: 1.0 },
                [k, a] => InitSpec::Sine { k: *k as u32, amplitude: *a },
                _ => return Err(bad()),
            },
            "random" => {
                let r = rest.ok_or_else(bad)?;
                let mut it = r.split(':');
                let seed = it.next().and_then(|x| x.parse::<u64>().ok()).ok_or_else(bad)?;
                let amplitude = it.next().map(|x| x.parse::<f64>()).unwrap_or(Ok(1.0)).map_err(|_| bad())?;
                InitSpec::Random { seed, amplitude }
            }
            "const" => match nums(rest)?.as_slice() {
                [c] => InitSpec::Constant { value: *c },
                _ => return Err(bad()),
            },
            "file" => InitSpec::File {
                path: PathBuf::from(rest.ok_or_else(bad)?),
            },
            _ => return Err(bad()),
        })
    }
}

/// Everything needed to reproduce one evolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub model: Model,
    pub grid: GridSpec,
    pub init: InitSpec,
    pub tau: f64,
    pub t_end: f64,
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
    /// Write every `snapshot_stride`-th field to CSV (0 disables snapshots).
    #[serde(default)]
    pub snapshot_stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn default_inner_tol() -> f64 {
    DEFAULT_INNER_TOL
}

impl ExperimentConfig {
    pub fn new(model: Model, grid: GridSpec, init: InitSpec, t_end: f64) -> Self {
        Self {
            schema: CONFIG_SCHEMA_VERSION,
            model,
            grid,
            init,
            tau: DEFAULT_TAU,
            t_end,
            inner_tol: DEFAULT_INNER_TOL,
            snapshot_stride: 0,
            out: None,
        }
    }

    /// Collects every offending field rather than stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.schema != CONFIG_SCHEMA_VERSION {
            errs.push(format!(
                "schema: unsupported version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema
            ));
        }
        if let Model::Pm { eps } = self.model {
            if !(eps > 0.0 && eps < 1.0) {
                errs.push(format!("eps: must lie in (0, 1), got {eps}"));
            }
        }
        if let Err(e) = self.grid.shape() {
            errs.push(format!("grid: {e}"));
        }
        if !(self.grid.h > 0.0 && self.grid.h.is_finite()) {
            errs.push(format!("grid.h: must be positive, got {}", self.grid.h));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            errs.push(format!("tau: must be positive, got {}", self.tau));
        }
        if !(self.t_end.is_finite() && self.t_end >= self.tau) {
            errs.push(format!("t_end: must be at least tau, got {}", self.t_end));
        }
        if !(self.inner_tol > 0.0 && self.inner_tol.is_finite()) {
            errs.push(format!("inner_tol: must be positive, got {}", self.inner_tol));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Number of uniform steps covering `[0, t_end]`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.tau).round().max(1.0) as usize
    }
}
