//! Field serialization.
//!
//! * 1D CSV: header `x,value`, one row per cell with the centred coordinate.
//! * 2D CSV: a comment line `# nx,ny,h` followed by the values `nx,ny,h`,
//!   then `ny` rows of `nx` comma-separated values (row `j` holds `u(., y_j)`).
//! * JSON: `{"dims":..,"shape":[..],"h":..,"values":[..]}`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{cell_center, Field, Shape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldJson {
    pub dims: usize,
    pub shape: Vec<usize>,
    pub h: f64,
    pub values: Vec<f64>,
}

impl From<&Field> for FieldJson {
    fn from(u: &Field) -> Self {
        FieldJson {
            dims: u.dims(),
            shape: u.shape().extents(),
            h: u.h(),
            values: u.values().to_vec(),
        }
    }
}

impl TryFrom<FieldJson> for Field {
    type Error = Error;

    fn try_from(j: FieldJson) -> Result<Field> {
        Field::new(Shape::new(j.dims, &j.shape)?, j.h, j.values)
    }
}

pub fn to_json(u: &Field) -> Result<String> {
    Ok(serde_json::to_string(&FieldJson::from(u))?)
}

pub fn from_json(s: &str) -> Result<Field> {
    serde_json::from_str::<FieldJson>(s)?.try_into()
}

pub fn to_csv(u: &Field) -> String {
    let mut out = String::new();
    let shape = u.shape();
    match shape {
        Shape::D1(n) => {
            out.push_str("x,value\n");
            for i in 0..n {
                let (x, _) = cell_center(shape, u.h(), i, 0);
                let _ = writeln!(out, "{x},{}", u.values()[i]);
            }
        }
        Shape::D2(nx, ny) => {
            out.push_str("# nx,ny,h\n");
            let _ = writeln!(out, "# {nx},{ny},{}", u.h());
            for j in 0..ny {
                let row: Vec<String> = u.values()[j * nx..(j + 1) * nx].iter().map(|v| v.to_string()).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
    }
    out
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("line {line}: {e} in {s:?}")))
}

pub fn from_csv(text: &str) -> Result<Field> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
    if first.trim() == "x,value" {
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for (k, line) in lines {
            let mut cols = line.split(',');
            let (Some(x), Some(v), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Parse(format!("line {}: expected two columns", k + 1)));
            };
            xs.push(parse_f64(x, k + 1)?);
            vs.push(parse_f64(v, k + 1)?);
        }
        if xs.len() < 2 {
            return Err(Error::Parse("1D CSV needs at least two rows".into()));
        }
        let h = xs[1] - xs[0];
        return Field::new(Shape::D1(vs.len()), h, vs);
    }
    if first.trim_start_matches('#').trim() != "nx,ny,h" {
        return Err(Error::Parse(format!("unrecognised CSV header {first:?}")));
    }
    let (k, meta) = lines.next().ok_or_else(|| Error::Parse("missing grid line".into()))?;
    let meta: Vec<&str> = meta.trim_start_matches('#').split(',').collect();
    if meta.len() != 3 {
        return Err(Error::Parse(format!("line {}: expected nx,ny,h", k + 1)));
    }
    let nx: usize = meta[0].trim().parse().map_err(|e| Error::Parse(format!("nx: {e}")))?;
    let ny: usize = meta[1].trim().parse().map_err(|e| Error::Parse(format!("ny: {e}")))?;
    let h = parse_f64(meta[2], k + 1)?;
    let mut values = Vec::with_capacity(nx * ny);
    for (k, line) in lines {
        let row = line.split(',').map(|c| parse_f64(c, k + 1)).collect::<Result<Vec<_>>>()?;
        if row.len() != nx {
            return Err(Error::Parse(format!("line {}: {} values, expected {nx}", k + 1, row.len())));
        }
        values.extend(row);
    }
    Field::new(Shape::new(2, &[nx, ny])?, h, values)
}

/// Reads a field from `.json` or `.csv`, chosen by extension.
pub fn read_field(path: &Path) -> Result<Field> {
    let text = std::fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => from_json(&text),
        _ => from_csv(&text),
    }
}

pub fn write_field_csv(u: &Field, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv(u))?;
    Ok(())
}
