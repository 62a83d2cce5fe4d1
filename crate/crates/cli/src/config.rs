//! Line-oriented run configuration: `section.key = value`, `#` comments.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dphase_core::VerificationTolerances;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice (first on line {first})")]
    Duplicate { line: usize, key: String, first: usize },
    #[error("line {line}: key `{key}`: {message}")]
    Invalid { line: usize, key: String, message: String },
    #[error("missing required key `{key}`")]
    Missing { key: String },
    #[error("{0}")]
    Conflict(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    SolveOneP,
    Continue,
    Verify,
    OracleCheck,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SolveOneP => "solve-one-p",
            Mode::Continue => "continue",
            Mode::Verify => "verify",
            Mode::OracleCheck => "oracle-check",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "solve-one-p" => Ok(Mode::SolveOneP),
            "continue" => Ok(Mode::Continue),
            "verify" => Ok(Mode::Verify),
            "oracle-check" => Ok(Mode::OracleCheck),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSpec {
    Interval { n: usize, length: f64 },
    UnitSquare { n: usize },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    Constant(f64),
    /// `a(x, y) = c0 + c1 x + c2 y`
    Affine([f64; 3]),
    /// One value per node, whitespace separated.
    Table(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundarySpec {
    Zero,
    Constant(f64),
    /// Value per side, chosen by the dominant component of the outward normal.
    Sides { left: f64, right: f64, bottom: f64, top: f64 },
    /// One value per boundary facet, in mesh facet order.
    Table(Vec<f64>),
    TableFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    /// `p_k = 1 + 2^{-k}`, keeping only values below q.
    Steps(usize),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub mesh: MeshSpec,
    pub weight: WeightSpec,
    pub lipschitz: Option<f64>,
    pub q: f64,
    pub p: Option<f64>,
    pub schedule: ScheduleSpec,
    pub boundary: BoundarySpec,
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub eps: Option<f64>,
    pub output: PathBuf,
    pub seed: u64,
    pub strict: bool,
    pub perturbation: f64,
    pub constants: bool,
    pub verify_input: Option<PathBuf>,
    pub tolerances: VerificationTolerances<f64>,
}

const KEYS: &[&str] = &[
    "mesh.kind",
    "mesh.n",
    "mesh.length",
    "mesh.path",
    "weight.kind",
    "weight.value",
    "weight.coeffs",
    "weight.path",
    "weight.lipschitz",
    "problem.q",
    "problem.p",
    "continuation.k",
    "continuation.schedule",
    "continuation.perturbation",
    "continuation.constants",
    "boundary.kind",
    "boundary.value",
    "boundary.left",
    "boundary.right",
    "boundary.bottom",
    "boundary.top",
    "boundary.values",
    "boundary.path",
    "solver.tol",
    "solver.max_iter",
    "solver.eps",
    "run.mode",
    "run.output",
    "run.seed",
    "run.strict",
    "verify.input",
    "verify.pairing",
    "verify.sup_norm",
    "verify.divergence",
    "verify.boundary_flux",
    "verify.minimality",
    "verify.grad_floor",
    "verify.probes",
];

struct Entries {
    map: BTreeMap<String, (usize, String)>,
    base: PathBuf,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.map.get(key).map(|(line, v)| (*line, v.as_str()))
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| ConfigError::Invalid {
                line,
                key: key.into(),
                message: format!("cannot parse `{v}`"),
            }),
        }
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        self.parse(key)?.ok_or_else(|| ConfigError::Missing { key: key.into() })
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| ConfigError::Invalid {
                    line,
                    key: key.into(),
                    message: format!("expected comma-separated numbers, got `{v}`"),
                }),
        }
    }

    fn flag(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        self.parse(key)
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|(_, v)| self.base.join(v))
    }

    fn line(&self, key: &str) -> usize {
        self.map.get(key).map_or(0, |(line, _)| *line)
    }

    fn invalid(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            line: self.line(key),
            key: key.into(),
            message: message.into(),
        }
    }

    fn positive(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        let v: Option<f64> = self.parse(key)?;
        match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(self.invalid(key, "must be positive")),
            _ => Ok(v),
        }
    }

    fn exclusive(&self, a: &str, b: &str) -> Result<(), ConfigError> {
        if self.map.contains_key(a) && self.map.contains_key(b) {
            return Err(ConfigError::Conflict(format!(
                "`{a}` (line {}) and `{b}` (line {}) are mutually exclusive",
                self.line(a),
                self.line(b)
            )));
        }
        Ok(())
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, &base)
}

/// Parses configuration text; relative paths are resolved against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
    let mut map: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            message: format!("expected `section.key = value`, got `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey { line, key: key.into() });
        }
        if value.is_empty() {
            return Err(ConfigError::Invalid {
                line,
                key: key.into(),
                message: "empty value".into(),
            });
        }
        if let Some((first, _)) = map.get(key) {
            return Err(ConfigError::Duplicate {
                line,
                key: key.into(),
                first: *first,
            });
        }
        map.insert(key.to_string(), (line, value.to_string()));
    }
    build(Entries {
        map,
        base: base.to_path_buf(),
    })
}

fn build(e: Entries) -> Result<RunConfig, ConfigError> {
    let mode = match e.raw("run.mode") {
        None => None,
        Some((line, v)) => {
            if v.contains(',') || v.split_whitespace().count() > 1 {
                return Err(ConfigError::Invalid {
                    line,
                    key: "run.mode".into(),
                    message: "exactly one mode may be set".into(),
                });
            }
            Some(v.parse::<Mode>().map_err(|message| ConfigError::Invalid {
                line,
                key: "run.mode".into(),
                message,
            })?)
        }
    };

    let mesh = match e.raw("mesh.kind").map(|(_, v)| v) {
        Some("interval") => MeshSpec::Interval {
            n: e.required("mesh.n")?,
            length: e.positive("mesh.length")?.unwrap_or(1.0),
        },
        Some("unit-square") => MeshSpec::UnitSquare { n: e.required("mesh.n")? },
        Some("file") => MeshSpec::File(e.path("mesh.path").ok_or_else(|| ConfigError::Missing {
            key: "mesh.path".into(),
        })?),
        Some(other) => return Err(e.invalid("mesh.kind", format!("unknown mesh kind `{other}`"))),
        None => return Err(ConfigError::Missing { key: "mesh.kind".into() }),
    };
    if let MeshSpec::Interval { n: 0, .. } | MeshSpec::UnitSquare { n: 0 } = mesh {
        return Err(e.invalid("mesh.n", "must be at least 1"));
    }

    let weight = match e.raw("weight.kind").map(|(_, v)| v).unwrap_or("constant") {
        "constant" => WeightSpec::Constant(e.parse("weight.value")?.unwrap_or(1.0)),
        "affine" => {
            let c = e.list("weight.coeffs")?.ok_or_else(|| ConfigError::Missing {
                key: "weight.coeffs".into(),
            })?;
            if c.len() < 2 || c.len() > 3 {
                return Err(e.invalid("weight.coeffs", "expected 2 or 3 coefficients"));
            }
            WeightSpec::Affine([c[0], c[1], c.get(2).copied().unwrap_or(0.0)])
        }
        "table" => WeightSpec::Table(e.path("weight.path").ok_or_else(|| ConfigError::Missing {
            key: "weight.path".into(),
        })?),
        other => return Err(e.invalid("weight.kind", format!("unknown weight kind `{other}`"))),
    };
    let lipschitz = e.parse("weight.lipschitz")?;

    let q: f64 = e.required("problem.q")?;
    if !(q > 1.0 && q.is_finite()) {
        return Err(e.invalid("problem.q", format!("q must exceed 1, got {q}")));
    }
    let p: Option<f64> = e.parse("problem.p")?;
    if let Some(p) = p {
        if !(p > 1.0 && p < q) {
            return Err(e.invalid("problem.p", format!("need 1 < p < q, got p = {p}, q = {q}")));
        }
    }

    e.exclusive("continuation.k", "continuation.schedule")?;
    let schedule = match e.list("continuation.schedule")? {
        Some(list) => {
            for (i, &x) in list.iter().enumerate() {
                if !(x > 1.0 && x < q) || (i > 0 && !(x < list[i - 1])) {
                    return Err(e.invalid(
                        "continuation.schedule",
                        "values must decrease strictly and lie in (1, q)",
                    ));
                }
            }
            ScheduleSpec::Explicit(list)
        }
        None => {
            let k = e.parse("continuation.k")?.unwrap_or(8);
            if k == 0 {
                return Err(e.invalid("continuation.k", "must be at least 1"));
            }
            ScheduleSpec::Steps(k)
        }
    };
    let perturbation = e.parse("continuation.perturbation")?.unwrap_or(0.0);
    if !(perturbation >= 0.0) {
        return Err(e.invalid("continuation.perturbation", "must be non-negative"));
    }

    let boundary = match e.raw("boundary.kind").map(|(_, v)| v).unwrap_or("zero") {
        "zero" => BoundarySpec::Zero,
        "constant" => BoundarySpec::Constant(e.required("boundary.value")?),
        "sides" => BoundarySpec::Sides {
            left: e.parse("boundary.left")?.unwrap_or(0.0),
            right: e.parse("boundary.right")?.unwrap_or(0.0),
            bottom: e.parse("boundary.bottom")?.unwrap_or(0.0),
            top: e.parse("boundary.top")?.unwrap_or(0.0),
        },
        "table" => {
            e.exclusive("boundary.values", "boundary.path")?;
            match e.list("boundary.values")? {
                Some(values) => BoundarySpec::Table(values),
                None => BoundarySpec::TableFile(e.path("boundary.path").ok_or_else(|| ConfigError::Missing {
                    key: "boundary.values".into(),
                })?),
            }
        }
        other => return Err(e.invalid("boundary.kind", format!("unknown boundary kind `{other}`"))),
    };

    let eps = match e.raw("solver.eps") {
        None | Some((_, "auto")) => None,
        Some(_) => {
            let v: f64 = e.required("solver.eps")?;
            if !(v >= 0.0) {
                return Err(e.invalid("solver.eps", "must be non-negative"));
            }
            Some(v)
        }
    };

    let defaults = VerificationTolerances::<f64>::default();
    let tolerances = VerificationTolerances {
        pairing: e.positive("verify.pairing")?.unwrap_or(defaults.pairing),
        sup_norm: e.positive("verify.sup_norm")?.unwrap_or(defaults.sup_norm),
        divergence: e.positive("verify.divergence")?.unwrap_or(defaults.divergence),
        boundary_flux: e.positive("verify.boundary_flux")?.unwrap_or(defaults.boundary_flux),
        minimality: e.positive("verify.minimality")?.unwrap_or(defaults.minimality),
        grad_floor_abs: e.positive("verify.grad_floor")?.unwrap_or(defaults.grad_floor_abs),
        probes: e.parse("verify.probes")?.unwrap_or(defaults.probes),
        ..defaults
    };

    Ok(RunConfig {
        mode,
        mesh,
        weight,
        lipschitz,
        q,
        p,
        schedule,
        boundary,
        tol: e.positive("solver.tol")?,
        max_iter: e.parse("solver.max_iter")?.unwrap_or(200),
        eps,
        output: e.path("run.output").unwrap_or_else(|| e.base.join("out")),
        seed: e.parse("run.seed")?.unwrap_or(0),
        strict: e.flag("run.strict")?.unwrap_or(false),
        perturbation,
        constants: e.flag("continuation.constants")?.unwrap_or(true),
        verify_input: e.path("verify.input"),
        tolerances,
    })
}
