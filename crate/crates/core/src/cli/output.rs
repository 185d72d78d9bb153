//! Column tables and their CSV / JSON encodings.
//!
//! CSV cells use `{:.16e}` (17 significant digits), which round-trips every
//! finite `f64` exactly. JSON stores the same table as
//! `{"columns": [...], "rows": [[...], ...]}` with non-finite cells as `null`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Format;
use super::CliError;
use crate::integrator::Trajectory;
use crate::problem::TimeVaryingProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct JsonTable {
    columns: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).map_err(io_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:.16e}")))
                .map_err(io_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self, CliError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let columns = r.headers().map_err(io_err)?.iter().map(String::from).collect();
        let mut table = Table::new(columns);
        for rec in r.records() {
            let rec = rec.map_err(io_err)?;
            let row = rec
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| CliError::Io(format!("bad cell '{v}'"))))
                .collect::<Result<Vec<_>, _>>()?;
            table.rows.push(row);
        }
        Ok(table)
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let json = JsonTable {
            columns: self.columns.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|v| v.is_finite().then_some(*v)).collect())
                .collect(),
        };
        let mut s = serde_json::to_string(&json).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let json: JsonTable = serde_json::from_str(text).map_err(|e| CliError::Io(e.to_string()))?;
        Ok(Table {
            columns: json.columns,
            rows: json
                .rows
                .into_iter()
                .map(|r| r.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
                .collect(),
        })
    }
}

fn io_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

/// Paths written for `out` under `format`: `out` itself for a single format,
/// `out` with `.csv` and `.json` extensions for both.
pub fn output_paths(out: &Path, format: Format) -> Vec<(PathBuf, Format)> {
    match format {
        Format::Both => vec![
            (out.with_extension("csv"), Format::Csv),
            (out.with_extension("json"), Format::Json),
        ],
        f => vec![(out.to_path_buf(), f)],
    }
}

/// Writes a nonempty table; an empty one is an error and creates no file.
pub fn write_table(table: &Table, format: Format, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    if table.is_empty() {
        return Err(CliError::Config("refusing to write an empty table".into()));
    }
    let mut written = Vec::new();
    for (path, f) in output_paths(out, format) {
        let text = match f {
            Format::Json => table.to_json()?,
            _ => table.to_csv()?,
        };
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

/// Reads a table back, choosing the decoder by extension.
pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Table::from_json(&text),
        _ => Table::from_csv(&text),
    }
}

/// Generic trajectory table: `t`, `x1..xn`, `nu1..nuq` (dual modes),
/// `f1..fp`, then `s`, `c` in barrier modes, `grad_norm`, `eq_residual` when
/// equalities exist, and `track_err` when `track` is given.
pub fn trajectory_table(
    traj: &Trajectory,
    problem: &TimeVaryingProblem,
    track: Option<&[f64]>,
) -> Result<Table, CliError> {
    let n = problem.dim();
    let p = problem.num_inequalities();
    let q = problem.num_equalities();
    let dual = traj.mode.uses_dual();
    let barrier = traj.mode.uses_barrier();
    let mut columns = vec!["t".to_string()];
    columns.extend((1..=n).map(|i| format!("x{i}")));
    if dual {
        columns.extend((1..=q).map(|i| format!("nu{i}")));
    }
    columns.extend((1..=p).map(|i| format!("f{i}")));
    if barrier {
        columns.extend(["s".to_string(), "c".to_string()]);
    }
    columns.push("grad_norm".into());
    if q > 0 {
        columns.push("eq_residual".into());
    }
    if track.is_some() {
        columns.push("track_err".into());
    }
    let mut table = Table::new(columns);
    for (k, s) in traj.samples.iter().enumerate() {
        let mut row = vec![s.t];
        row.extend(s.x.iter());
        if dual {
            row.extend(s.nu.iter().flat_map(|v| v.iter()));
        }
        let f = problem.inequality_values(&s.x, s.t).map_err(CliError::Solver)?;
        row.extend(f.iter());
        if barrier {
            row.push(s.s.unwrap_or(f64::NAN));
            row.push(s.c.unwrap_or(f64::NAN));
        }
        row.push(s.grad_norm);
        if q > 0 {
            row.push(s.eq_residual);
        }
        if let Some(track) = track {
            row.push(track.get(k).copied().unwrap_or(f64::NAN));
        }
        table.push(row);
    }
    Ok(table)
}

/// Writes a trajectory; an empty one is an error and creates no file.
pub fn write_trajectory(
    traj: &Trajectory,
    problem: &TimeVaryingProblem,
    format: Format,
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    if traj.is_empty() {
        return Err(CliError::Config("refusing to write an empty trajectory".into()));
    }
    write_table(&trajectory_table(traj, problem, None)?, format, out)
}

/// Column reference printed by `tvipm schema`.
pub const SCHEMA: &str = "\
# tvqp and custom (trajectory tables)
t            time of the sample
x{i}         i-th coordinate of the primal state
nu{j}        j-th equality multiplier (equality and combined modes)
f{i}         value of the i-th inequality constraint at (x, t)
s            slack s(t) (barrier modes)
c            barrier weight c(t) (barrier modes)
grad_norm    norm of the residual the mode drives to zero
eq_residual  norm of A(t) x - b(t) (problems with equalities)
track_err    distance to the reference optimum of the frozen problem at t

# robot
t            time of the sample
xc{i}        robot center
xhat{i}      estimate of the projected goal
xd{i}        goal position
margin       smallest clearance between the robot disk and an obstacle
violation    largest constraint value of the local workspace at xhat
grad_norm    norm of the barrier gradient of the estimator
c            barrier weight c(t)

# l1ls (csv form of the comparison report)
iter         Newton iteration count
snipm_gap    duality-gap bound of the sequential method after iter steps
anipm_gap    duality-gap bound of the accelerated method after iter steps
";

/// Whether `column` is documented in [`SCHEMA`], matching `{i}` / `{j}`
/// placeholders against numeric suffixes.
pub fn schema_documents(column: &str) -> bool {
    let stem = column.trim_end_matches(|c: char| c.is_ascii_digit());
    SCHEMA.lines().filter_map(|l| l.split_whitespace().next()).any(|name| {
        if let Some(prefix) = name.strip_suffix("{i}").or_else(|| name.strip_suffix("{j}")) {
            stem == prefix && stem.len() < column.len()
        } else {
            name == column
        }
    })
}
