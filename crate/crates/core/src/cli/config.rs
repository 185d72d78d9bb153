//! Flat `key = value` run configuration.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' any*
//! entry   := key '=' value
//! list    := number (',' number)*
//! ```
//!
//! Keys are the long command-line flags with `-` replaced by `_`
//! (`scenario`, `preset`, `mode`, `seed`, `tau`, `alpha`, `gamma_c`,
//! `gamma_s`, `c0`, `s0`, `t_end`, `start`, `out`, `format`). Custom quadratic
//! problems add `h` (row-major Hessian), `q`, `q_rate`, `x0`, and repeatable
//! `ineq` / `eq` rows of the form `a1,...,an | b | b_rate`, meaning
//! `aᵀx <= b + b_rate·t` and `aᵀx = b + b_rate·t` respectively. The objective
//! is `½xᵀHx + (q + q_rate·t)ᵀx`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Tvqp,
    L1ls,
    Robot,
    Custom,
}

impl FromStr for Scenario {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "tvqp" => Ok(Scenario::Tvqp),
            "l1ls" => Ok(Scenario::L1ls),
            "robot" => Ok(Scenario::Robot),
            "custom" => Ok(Scenario::Custom),
            other => Err(CliError::Config(format!("unknown scenario '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
    Both,
}

impl FromStr for Format {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "both" => Ok(Format::Both),
            other => Err(CliError::Config(format!("unknown format '{other}'"))),
        }
    }
}

/// One affine row `aᵀx (<= or =) b + b_rate·t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRow {
    pub a: Vec<f64>,
    pub b: f64,
    pub b_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CustomSpec {
    pub h: Vec<f64>,
    pub q: Option<Vec<f64>>,
    pub q_rate: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    pub ineqs: Vec<AffineRow>,
    pub eqs: Vec<AffineRow>,
}

/// Everything a run needs; unset numeric fields fall back to the preset.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub preset: Option<String>,
    pub mode: Option<String>,
    pub seed: u64,
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma_c: Option<f64>,
    pub gamma_s: Option<f64>,
    pub c0: Option<f64>,
    pub s0: Option<f64>,
    pub t_end: Option<f64>,
    pub start: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub custom: CustomSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Tvqp,
            preset: None,
            mode: None,
            seed: 0,
            tau: None,
            alpha: None,
            gamma_c: None,
            gamma_s: None,
            c0: None,
            s0: None,
            t_end: None,
            start: None,
            out: None,
            format: Format::Csv,
            custom: CustomSpec::default(),
        }
    }
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("'{}' is not a number", v.trim())))
        })
        .collect()
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Config(format!("invalid value '{v}' for '{key}'")))
}

fn parse_row(v: &str) -> Result<AffineRow, CliError> {
    let parts: Vec<&str> = v.split('|').map(str::trim).collect();
    if parts.is_empty() || parts.len() > 3 {
        return Err(CliError::Config(format!("bad affine row '{v}'")));
    }
    Ok(AffineRow {
        a: parse_list(parts[0])?,
        b: parts.get(1).map_or(Ok(0.0), |b| parse_num("b", b))?,
        b_rate: parts.get(2).map_or(Ok(0.0), |b| parse_num("b_rate", b))?,
    })
}

impl RunConfig {
    /// Applies one `key = value` entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "scenario" => self.scenario = v.parse()?,
            "preset" => self.preset = Some(v.to_string()),
            "mode" => self.mode = Some(v.to_string()),
            "seed" => self.seed = parse_num(key, v)?,
            "tau" => self.tau = Some(parse_num(key, v)?),
            "alpha" => self.alpha = Some(parse_num(key, v)?),
            "gamma_c" => self.gamma_c = Some(parse_num(key, v)?),
            "gamma_s" => self.gamma_s = Some(parse_num(key, v)?),
            "c0" => self.c0 = Some(parse_num(key, v)?),
            "s0" => self.s0 = Some(parse_num(key, v)?),
            "t_end" => self.t_end = Some(parse_num(key, v)?),
            "start" => self.start = Some(parse_list(v)?),
            "out" => self.out = Some(PathBuf::from(v)),
            "format" => self.format = v.parse()?,
            "h" => self.custom.h = parse_list(v)?,
            "q" => self.custom.q = Some(parse_list(v)?),
            "q_rate" => self.custom.q_rate = Some(parse_list(v)?),
            "x0" => self.custom.x0 = Some(parse_list(v)?),
            "ineq" => self.custom.ineqs.push(parse_row(v)?),
            "eq" => self.custom.eqs.push(parse_row(v)?),
            other => return Err(CliError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parses a config document. Scalar keys may appear once; `ineq` and
    /// `eq` may repeat.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            if key != "ineq" && key != "eq" && seen.insert(key.to_string(), lineno).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| CliError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_document() {
        let cfg = RunConfig::parse(
            "# custom problem\nscenario = custom\ntau = 0.05\nh = 1,0,0,3\nineq = -1, 1 | 0 | 0.5\nineq = 1,0 | 2\nformat = both\n",
        )
        .unwrap();
        assert_eq!(cfg.scenario, Scenario::Custom);
        assert_eq!(cfg.tau, Some(0.05));
        assert_eq!(cfg.format, Format::Both);
        assert_eq!(cfg.custom.h, vec![1.0, 0.0, 0.0, 3.0]);
        assert_eq!(
            cfg.custom.ineqs,
            vec![
                AffineRow {
                    a: vec![-1.0, 1.0],
                    b: 0.0,
                    b_rate: 0.5
                },
                AffineRow {
                    a: vec![1.0, 0.0],
                    b: 2.0,
                    b_rate: 0.0
                },
            ]
        );
    }

    #[test]
    fn rejects_bad_documents() {
        for doc in [
            "tau = fast",
            "scenario = maze",
            "tau = 1\ntau = 2",
            "just words",
            "colour = red",
        ] {
            assert!(matches!(RunConfig::parse(doc), Err(CliError::Config(_))), "{doc}");
        }
    }
}
