//! Run configuration: command-line flags over an optional `key=value` file
//! over built-in defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use serde::Serialize;

use cr_afem::afem::AfemConfig;
use cr_afem::control::KktOptions;
use cr_afem::verify::{manufactured_with, CaseId, ManufacturedCase};
use cr_afem::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Subcommand {
    Run,
    Rates,
    Axioms,
    Equivalence,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Run => "run",
            Subcommand::Rates => "rates",
            Subcommand::Axioms => "axioms",
            Subcommand::Equivalence => "equivalence",
        }
    }
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to the defaults of [`RunConfig`].
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Manufactured case: stokes-square, ocp-square, ocp-lshape or zero.
    #[arg(long)]
    pub case: Option<String>,
    /// Dörfler bulk parameter in (0, 1).
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    /// Control cost α > 0.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    /// Lower control bound, `a` or `a1,a2`.
    #[arg(long, allow_hyphen_values = true)]
    pub ua: Option<String>,
    /// Upper control bound, `b` or `b1,b2`.
    #[arg(long, allow_hyphen_values = true)]
    pub ub: Option<String>,
    /// Stop refining once the next mesh would exceed this many unknowns.
    #[arg(long)]
    pub max_dofs: Option<usize>,
    /// Maximal number of adaptive levels.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// VI residual tolerance of the optimality-system solver.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed of the random fields sampled by `axioms`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Refine every element instead of Dörfler marking.
    #[arg(long)]
    pub uniform: bool,
    /// Number of uniform levels for `rates` and `equivalence`.
    #[arg(long)]
    pub levels: Option<usize>,
    /// First uniform level; level `l` has `2^l` cells per unit length.
    #[arg(long)]
    pub first_level: Option<usize>,
    /// Fill the `seconds` column of trace.csv (makes output nondeterministic).
    #[arg(long)]
    pub timing: bool,
    /// `key=value` file; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub case: String,
    pub theta: f64,
    pub alpha: f64,
    pub ua: Point,
    pub ub: Point,
    pub max_dofs: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub out: PathBuf,
    pub seed: u64,
    pub uniform: bool,
    pub levels: usize,
    pub first_level: usize,
    pub timing: bool,
}

/// A configuration that cannot be used; reported with exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

/// `a` or `a1,a2`.
pub fn parse_bound(s: &str) -> Result<Point, UsageError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |t: &str| t.parse::<f64>().map_err(|_| usage(format!("invalid bound `{s}`")));
    match parts.as_slice() {
        [a] => {
            let a = num(a)?;
            Ok([a, a])
        }
        [a, b] => Ok([num(a)?, num(b)?]),
        _ => Err(usage(format!("invalid bound `{s}`"))),
    }
}

/// Parse `key=value` lines; `#` starts a comment, blank lines are ignored.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, UsageError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key=value", i + 1)))?;
        map.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(map)
}

const KEYS: [&str; 14] = [
    "case",
    "theta",
    "alpha",
    "ua",
    "ub",
    "max-dofs",
    "max-iters",
    "tol",
    "out",
    "seed",
    "uniform",
    "levels",
    "first-level",
    "timing",
];

fn from_file<T: FromStr>(file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, UsageError> {
    file.get(key)
        .map(|v| v.parse::<T>().map_err(|_| usage(format!("config: invalid value `{v}` for {key}"))))
        .transpose()
}

fn load_file(path: &Path) -> Result<BTreeMap<String, String>, UsageError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let map = parse_config_file(&text)?;
    if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(usage(format!("config: unknown key `{k}`")));
    }
    Ok(map)
}

impl RunConfig {
    /// Merge flags over the config file over the defaults, then validate.
    pub fn resolve(subcommand: Subcommand, flags: &Flags) -> Result<Self, UsageError> {
        let file = match &flags.config {
            Some(p) => load_file(p)?,
            None => BTreeMap::new(),
        };
        let case = flags
            .case
            .clone()
            .or(from_file(&file, "case")?)
            .unwrap_or_else(|| "ocp-square".into());
        let id = CaseId::parse(&case).map_err(|_| usage(format!("unknown case `{case}`")))?;
        let bound = |flag: &Option<String>, key: &str| -> Result<Option<Point>, UsageError> {
            flag.clone().or(file.get(key).cloned()).map(|s| parse_bound(&s)).transpose()
        };
        let (l0, nl) = if subcommand == Subcommand::Equivalence { (2, 4) } else { (2, 5) };
        let defaults = AfemConfig::default();
        let cfg = RunConfig {
            subcommand,
            case: id.name().into(),
            theta: flags.theta.or(from_file(&file, "theta")?).unwrap_or(defaults.theta),
            alpha: flags.alpha.or(from_file(&file, "alpha")?).unwrap_or(id.default_alpha()),
            ua: bound(&flags.ua, "ua")?.unwrap_or(id.default_bounds().0),
            ub: bound(&flags.ub, "ub")?.unwrap_or(id.default_bounds().1),
            max_dofs: flags.max_dofs.or(from_file(&file, "max-dofs")?).unwrap_or(defaults.max_dofs),
            max_iters: flags.max_iters.or(from_file(&file, "max-iters")?).unwrap_or(defaults.max_iters),
            tol: flags.tol.or(from_file(&file, "tol")?).unwrap_or(defaults.kkt.tol),
            out: flags
                .out
                .clone()
                .or(from_file(&file, "out")?)
                .unwrap_or_else(|| PathBuf::from("out")),
            seed: flags.seed.or(from_file(&file, "seed")?).unwrap_or(0),
            uniform: flags.uniform || from_file(&file, "uniform")?.unwrap_or(false),
            levels: flags.levels.or(from_file(&file, "levels")?).unwrap_or(nl),
            first_level: flags.first_level.or(from_file(&file, "first-level")?).unwrap_or(l0),
            timing: flags.timing || from_file(&file, "timing")?.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(usage(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(usage(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.ua[0] <= self.ub[0] && self.ua[1] <= self.ub[1]) {
            return Err(usage("bounds must satisfy ua <= ub"));
        }
        if !(self.tol > 0.0) {
            return Err(usage("tol must be positive"));
        }
        if self.max_iters == 0 || self.levels == 0 {
            return Err(usage("max-iters and levels must be positive"));
        }
        if self.first_level + self.levels > 12 {
            return Err(usage("first-level + levels must not exceed 12"));
        }
        Ok(())
    }

    pub fn case(&self) -> Result<ManufacturedCase, UsageError> {
        let id = CaseId::parse(&self.case).map_err(|e| usage(e.to_string()))?;
        manufactured_with(id, self.alpha, self.ua, self.ub).map_err(|e| usage(e.to_string()))
    }

    pub fn kkt(&self) -> KktOptions {
        KktOptions {
            tol: self.tol,
            ..KktOptions::default()
        }
    }

    pub fn afem(&self) -> AfemConfig {
        AfemConfig {
            theta: self.theta,
            max_dofs: self.max_dofs,
            max_iters: self.max_iters,
            kkt: self.kkt(),
            uniform: self.uniform,
            ..AfemConfig::default()
        }
    }

    /// Uniform levels `first_level .. first_level + levels`.
    pub fn level_range(&self) -> Vec<usize> {
        (self.first_level..self.first_level + self.levels).collect()
    }

    /// One-line `key=value` rendering, stable across runs.
    pub fn describe(&self) -> String {
        format!(
            "subcommand={} case={} theta={} alpha={} ua={},{} ub={},{} max-dofs={} max-iters={} tol={:e} out={} seed={} uniform={} levels={} first-level={} timing={}",
            self.subcommand.name(),
            self.case,
            self.theta,
            self.alpha,
            self.ua[0],
            self.ua[1],
            self.ub[0],
            self.ub[1],
            self.max_dofs,
            self.max_iters,
            self.tol,
            self.out.display(),
            self.seed,
            self.uniform,
            self.levels,
            self.first_level,
            self.timing
        )
    }
}

/// `<crate version>-<git describe>`.
pub fn version() -> String {
    format!("{}-{}", env!("CARGO_PKG_VERSION"), env!("CR_AFEM_DESCRIBE"))
}

/// First line of every output file.
pub fn header_comment(cfg: &RunConfig) -> String {
    format!("cr-afem {} {}", version(), cfg.describe())
}
