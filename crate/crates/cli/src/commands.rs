//! The four subcommands. Each writes its artifacts into the output
//! directory and returns a verdict with a printable summary.

use std::fs;
use std::io;
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use cr_afem::afem::{afem_run, optimality_constant, rate_fit, reduction_fit, AfemTrace, Clock, NoClock};
use cr_afem::mesh::make_mesh;
use cr_afem::verify::axioms::{check_axioms, AxiomCheck, AxiomReport, DriftCriterion, EPSILONS, MAX_DRIFT, RHO_ETA, RHO_MU};
use cr_afem::verify::equivalence::{check_error_equivalence, EquivalenceReport};
use cr_afem::verify::properties::{check_properties, PropertyRow};
use cr_afem::verify::rates::{check_apriori_rates, check_two_sidedness, spread, Rate, RateTable};
use cr_afem::verify::CaseId;

use crate::config::{header_comment, RunConfig, Subcommand, UsageError};
use crate::formats::*;

/// Random fields per level in the property sample of `axioms`.
pub const PROPERTY_SAMPLES: usize = 20;
/// Largest admissible `max / min` of an equivalence ratio.
pub const EQUIVALENCE_BAND: f64 = 10.0;

#[derive(Debug)]
pub enum CommandError {
    Usage(UsageError),
    Io(io::Error),
    Numerical(cr_afem::Error),
}

impl std::fmt::Display for CommandError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CommandError::Usage(e) => write!(f, "{e}"),
            CommandError::Io(e) => write!(f, "output: {e}"),
            CommandError::Numerical(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CommandError {}

impl From<UsageError> for CommandError {
    fn from(e: UsageError) -> Self {
        CommandError::Usage(e)
    }
}

impl From<io::Error> for CommandError {
    fn from(e: io::Error) -> Self {
        CommandError::Io(e)
    }
}

impl From<cr_afem::Error> for CommandError {
    fn from(e: cr_afem::Error) -> Self {
        CommandError::Numerical(e)
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

struct WallClock(Instant);

impl Clock for WallClock {
    fn seconds(&self) -> Option<f64> {
        Some(self.0.elapsed().as_secs_f64())
    }
}

pub fn execute(cfg: &RunConfig) -> Result<Outcome, CommandError> {
    let probe = cfg.out.join(".cr-afem-probe");
    fs::create_dir_all(&cfg.out)
        .and_then(|_| fs::write(&probe, b""))
        .and_then(|_| fs::remove_file(&probe))
        .map_err(|e| UsageError(format!("output directory {} is not writable: {e}", cfg.out.display())))?;
    match cfg.subcommand {
        Subcommand::Run => run(cfg),
        Subcommand::Rates => rates(cfg),
        Subcommand::Axioms => axioms(cfg),
        Subcommand::Equivalence => equivalence(cfg),
    }
}

fn adaptive_trace(cfg: &RunConfig) -> Result<AfemTrace, CommandError> {
    let case = cfg.case()?;
    let mut afem = cfg.afem();
    afem.keep_levels = true;
    let clock: Box<dyn Clock> = if cfg.timing {
        Box::new(WallClock(Instant::now()))
    } else {
        Box::new(NoClock)
    };
    Ok(afem_run(
        &case.data,
        make_mesh(&case.domain)?,
        case.exact.as_ref(),
        &afem,
        clock.as_ref(),
    ))
}

fn write_trace(cfg: &RunConfig, trace: &AfemTrace, files: &mut Vec<PathBuf>) -> io::Result<()> {
    let path = cfg.out.join("trace.csv");
    write_csv_file(&path, &header_comment(cfg), &TRACE_COLUMNS, &trace_rows(trace, cfg.timing))?;
    files.push(path);
    Ok(())
}

/// `-slope` of `η` against the number of unknowns.
fn eta_rate(trace: &AfemTrace) -> Option<f64> {
    rate_fit(&trace.ndofs(), &trace.etas()).ok().map(|s| -s)
}

fn trace_table(trace: &AfemTrace) -> String {
    let mut s = format!(
        "{:>5} {:>8} {:>8} {:>11} {:>11} {:>11} {:>11}\n",
        "level", "nelem", "ndof", "eta", "mu", "delta", "error"
    );
    let n = trace.records.len();
    for r in trace.records.iter().skip(n.saturating_sub(12)) {
        let err = r.errors.map(|e| e.total2().sqrt());
        s += &format!(
            "{:>5} {:>8} {:>8} {:>11.4e} {:>11.4e} {:>11} {:>11}\n",
            r.level,
            r.nelem,
            r.ndof,
            r.eta,
            r.mu,
            r.delta_next.map(|d| format!("{d:.4e}")).unwrap_or_else(|| "-".into()),
            err.map(|d| format!("{d:.4e}")).unwrap_or_else(|| "-".into()),
        );
    }
    s
}

fn run(cfg: &RunConfig) -> Result<Outcome, CommandError> {
    let trace = adaptive_trace(cfg)?;
    let mut files = Vec::new();
    let comment = header_comment(cfg);
    write_trace(cfg, &trace, &mut files)?;
    let mut rows = Vec::new();
    for (l, lvl) in trace.levels.iter().enumerate() {
        rows.extend(indicator_rows(&lvl.report, l));
    }
    let path = cfg.out.join("indicators.csv");
    write_csv_file(&path, &comment, &INDICATOR_COLUMNS, &rows)?;
    files.push(path);
    if let Some(last) = trace.levels.last() {
        let path = cfg.out.join("solution.csv");
        let header = solution_header();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv_file(&path, &comment, &header, &solution_rows(&last.solution))?;
        files.push(path);
        let path = cfg.out.join("mesh.txt");
        write_mesh_file(&path, &comment, last.mesh())?;
        files.push(path);
    }

    let mut summary = trace_table(&trace);
    if let Some(s) = eta_rate(&trace) {
        summary += &format!("eta ~ ndof^-{s:.3}\n");
    }
    if let Ok(fit) = reduction_fit(&trace, 5) {
        summary += &format!(
            "estimator reduction over last {} steps: q = {:.3}, C = {:.3}\n",
            fit.transitions, fit.q, fit.c
        );
    }
    if let Some(e) = &trace.failure {
        summary += &format!("stopped early: {e}\n");
    }
    Ok(Outcome {
        pass: trace.failure.is_none() && !trace.records.is_empty(),
        summary,
        files,
    })
}

/// Accepted rate windows per column for a case.
pub fn rate_windows(id: CaseId) -> Vec<(&'static str, f64, f64)> {
    match id {
        CaseId::StokesSquare => vec![("stokes_energy", 0.85, 1.15), ("stokes_l2_velocity", 1.75, 2.25)],
        _ => vec![("ocp_energy_sum", 0.85, 1.15), ("ocp_l2_sum", 1.7, 2.3)],
    }
}

/// Check a rate table against [`rate_windows`]; `exact` columns pass.
pub fn judge_rates(id: CaseId, t: &RateTable) -> Vec<(&'static str, Option<Rate>, bool)> {
    rate_windows(id)
        .into_iter()
        .map(|(c, lo, hi)| {
            let r = t.rate(c);
            let ok = match r {
                Some(Rate::Exact) => true,
                Some(Rate::Fitted(s)) => (lo..=hi).contains(&s),
                None => false,
            };
            (c, r, ok)
        })
        .collect()
}

fn rates(cfg: &RunConfig) -> Result<Outcome, CommandError> {
    let case = cfg.case()?;
    if case.exact.is_none() {
        return Err(UsageError(format!("case `{}` has no closed-form solution for rates", cfg.case)).into());
    }
    let levels = cfg.level_range();
    let table = check_apriori_rates(&case, &levels, 1, cfg.kkt(), 1)?;
    let two = check_two_sidedness(&case, &levels, 1, cfg.kkt(), Default::default(), 1)?;
    let comment = header_comment(cfg);
    let mut files = Vec::new();
    let header = rate_header();
    let path = cfg.out.join("rates.csv");
    write_csv_file(&path, &comment, &header, &rate_rows(&table))?;
    files.push(path);
    let path = cfg.out.join("twosided.csv");
    write_csv_file(&path, &comment, &TWO_SIDED_COLUMNS, &two_sided_rows(&two))?;
    files.push(path);

    let mut summary = format!("{:>5} {:>8} {:>10}", "level", "nelem", "h");
    for c in ["stokes_energy", "stokes_l2_velocity", "ocp_energy_sum", "ocp_l2_sum"] {
        summary += &format!(" {c:>18}");
    }
    summary.push('\n');
    let idx: Vec<usize> = ["stokes_energy", "stokes_l2_velocity", "ocp_energy_sum", "ocp_l2_sum"]
        .iter()
        .map(|c| {
            cr_afem::verify::rates::RATE_COLUMNS
                .iter()
                .position(|x| x == c)
                .expect("known column")
        })
        .collect();
    for r in &table.rows {
        summary += &format!("{:>5} {:>8} {:>10.4e}", r.level, r.nelem, r.h);
        for &i in &idx {
            summary += &format!(" {:>18.4e}", r.errors[i]);
        }
        summary.push('\n');
    }
    let id = CaseId::parse(&cfg.case)?;
    let mut pass = true;
    for (c, r, ok) in judge_rates(id, &table) {
        pass &= ok;
        let shown = match r {
            Some(Rate::Fitted(s)) => format!("{s:.3}"),
            Some(Rate::Exact) => "exact".into(),
            None => "n/a".into(),
        };
        summary += &format!("rate {c}: {shown} {}\n", if ok { "ok" } else { "FAIL" });
    }
    let rel: Vec<f64> = two.iter().map(|r| r.reliability).collect();
    let eff: Vec<f64> = two.iter().map(|r| r.efficiency).collect();
    let exact_zero = two.iter().all(|r| r.error2 == 0.0 && r.eta2 == 0.0);
    let (sr, se) = (spread(&rel), spread(&eff));
    let two_ok = exact_zero || (sr < 3.0 && se < 3.0);
    pass &= two_ok;
    summary += &format!(
        "reliability spread {sr:.3}, efficiency spread {se:.3} {}\n",
        if two_ok { "ok" } else { "FAIL" }
    );
    Ok(Outcome { pass, summary, files })
}

#[derive(Serialize)]
struct EntryJson {
    level: usize,
    lhs: f64,
    rhs: f64,
    delta: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct CheckJson {
    name: &'static str,
    constant: f64,
    argmax_level: Option<usize>,
    drift: f64,
    pass: bool,
    entries: Vec<EntryJson>,
}

impl From<&AxiomCheck> for CheckJson {
    fn from(c: &AxiomCheck) -> Self {
        CheckJson {
            name: c.name,
            constant: c.constant,
            argmax_level: c.argmax,
            drift: c.drift,
            pass: c.pass,
            entries: c
                .entries
                .iter()
                .map(|e| EntryJson {
                    level: e.level,
                    lhs: e.lhs,
                    rhs: e.rhs,
                    delta: e.delta,
                    ratio: e.ratio,
                })
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct ConstantsJson {
    lambda0: f64,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
    lambda4: f64,
    rho2_empirical: f64,
    rho2_fixed: f64,
    rho_mu_fixed: f64,
    epsilons: [f64; 2],
    theta0: f64,
}

#[derive(Serialize)]
struct ReductionJson {
    q: f64,
    c: f64,
    transitions: usize,
}

#[derive(Serialize)]
struct PropertyJson {
    level: usize,
    nelem: usize,
    poincare: f64,
    sobolev: f64,
    nested_poincare: f64,
    jump_control: f64,
    companion: f64,
    companion_mean_defect: f64,
}

impl From<&PropertyRow> for PropertyJson {
    fn from(r: &PropertyRow) -> Self {
        PropertyJson {
            level: r.level,
            nelem: r.nelem,
            poincare: r.poincare,
            sobolev: r.sobolev,
            nested_poincare: r.nested_poincare,
            jump_control: r.jump_control,
            companion: r.companion,
            companion_mean_defect: r.companion_mean_defect,
        }
    }
}

#[derive(Serialize)]
struct PropertiesJson {
    seed: u64,
    samples: usize,
    rows: Vec<PropertyJson>,
}

#[derive(Serialize)]
struct AxiomsJson {
    config: RunConfig,
    levels: usize,
    drift_first_level: usize,
    drift_span: usize,
    max_drift: f64,
    pass: bool,
    constants: ConstantsJson,
    checks: Vec<CheckJson>,
    reduction: Option<ReductionJson>,
    eta_rate: Option<f64>,
    optimality_constant: Option<f64>,
    properties: PropertiesJson,
    failure: Option<String>,
}

fn axioms_json(
    cfg: &RunConfig,
    trace: &AfemTrace,
    report: &AxiomReport,
    crit: DriftCriterion,
    properties: &[PropertyRow],
    pass: bool,
) -> AxiomsJson {
    let c = report.constants();
    let s = eta_rate(trace);
    AxiomsJson {
        config: cfg.clone(),
        levels: trace.records.len(),
        drift_first_level: crit.first_level,
        drift_span: crit.span,
        max_drift: MAX_DRIFT,
        pass,
        constants: ConstantsJson {
            lambda0: c.lambda0,
            lambda1: c.lambda1,
            lambda2: c.lambda2,
            lambda3: c.lambda3,
            lambda4: c.lambda4,
            rho2_empirical: c.rho2,
            rho2_fixed: RHO_ETA,
            rho_mu_fixed: RHO_MU,
            epsilons: EPSILONS,
            theta0: report.theta0(),
        },
        checks: report.checks.iter().map(CheckJson::from).collect(),
        reduction: reduction_fit(trace, 5).ok().map(|f| ReductionJson {
            q: f.q,
            c: f.c,
            transitions: f.transitions,
        }),
        eta_rate: s,
        optimality_constant: s.map(|s| optimality_constant(trace, s)),
        properties: PropertiesJson {
            seed: cfg.seed,
            samples: PROPERTY_SAMPLES,
            rows: properties.iter().map(PropertyJson::from).collect(),
        },
        failure: trace.failure.as_ref().map(|e| e.to_string()),
    }
}

fn axioms(cfg: &RunConfig) -> Result<Outcome, CommandError> {
    let case = cfg.case()?;
    let crit = DriftCriterion::default();
    let (trace, props) = std::thread::scope(|s| {
        let props = s.spawn(|| check_properties(&case.domain, &cfg.level_range(), 1, cfg.seed, PROPERTY_SAMPLES));
        let trace = adaptive_trace(cfg);
        (trace, props.join().expect("property sampling panicked"))
    });
    let (trace, props) = (trace?, props?);
    let report = check_axioms(&trace, crit)?;
    let pass = report.pass() && trace.failure.is_none() && trace.records.len() > crit.first_level + crit.span;
    let mut files = Vec::new();
    write_trace(cfg, &trace, &mut files)?;
    let path = cfg.out.join("axioms.json");
    write_json(&path, &header_comment(cfg), &axioms_json(cfg, &trace, &report, crit, &props, pass))?;
    files.push(path);

    let mut summary = format!(
        "{} levels, {} unknowns on the finest mesh\n",
        trace.records.len(),
        trace.records.last().map(|r| r.ndof).unwrap_or(0)
    );
    summary += &format!("{:<12} {:>11} {:>6} {:>8} {:>5}\n", "check", "constant", "at", "drift", "pass");
    for c in &report.checks {
        summary += &format!(
            "{:<12} {:>11.4e} {:>6} {:>8.3} {:>5}\n",
            c.name,
            c.constant,
            c.argmax.map(|l| l.to_string()).unwrap_or_else(|| "-".into()),
            c.drift,
            if c.pass { "ok" } else { "FAIL" }
        );
    }
    summary += &format!("theta0 estimate {:.4}\n", report.theta0());
    if let Some(e) = &trace.failure {
        summary += &format!("stopped early: {e}\n");
    }
    Ok(Outcome { pass, summary, files })
}

#[derive(Serialize)]
struct ItemJson {
    item: u8,
    level: usize,
    nelem: usize,
    lhs: f64,
    rhs: f64,
    ratio: f64,
    inverse_ratio: f64,
}

#[derive(Serialize)]
struct StabilityJson {
    name: &'static str,
    level: usize,
    ratio: f64,
}

#[derive(Serialize)]
struct EquivalenceJson {
    config: RunConfig,
    max_band: f64,
    bands: Vec<(u8, f64)>,
    pass: bool,
    items: Vec<ItemJson>,
    stability: Vec<StabilityJson>,
}

fn equivalence(cfg: &RunConfig) -> Result<Outcome, CommandError> {
    let case = cfg.case()?;
    let report: EquivalenceReport = check_error_equivalence(&case, &cfg.level_range(), 1, cfg.kkt(), 1)?;
    let items: Vec<u8> = if case.exact.is_some() { vec![1, 2, 3, 4] } else { vec![3, 4] };
    let bands: Vec<(u8, f64)> = items.iter().map(|&i| (i, report.band(i))).collect();
    let pass = bands.iter().all(|&(_, b)| b < EQUIVALENCE_BAND);
    let json = EquivalenceJson {
        config: cfg.clone(),
        max_band: EQUIVALENCE_BAND,
        bands: bands.clone(),
        pass,
        items: report
            .items
            .iter()
            .map(|e| ItemJson {
                item: e.item,
                level: e.level,
                nelem: e.nelem,
                lhs: e.lhs,
                rhs: e.rhs,
                ratio: e.ratio,
                inverse_ratio: 1.0 / e.ratio,
            })
            .collect(),
        stability: report
            .stability
            .iter()
            .map(|s| StabilityJson {
                name: s.name,
                level: s.level,
                ratio: s.ratio,
            })
            .collect(),
    };
    let path = cfg.out.join("equivalence.json");
    write_json(&path, &header_comment(cfg), &json)?;

    let mut summary = format!(
        "{:>4} {:>5} {:>8} {:>11} {:>11} {:>8}\n",
        "item", "level", "nelem", "lhs", "rhs", "ratio"
    );
    for e in &report.items {
        summary += &format!(
            "{:>4} {:>5} {:>8} {:>11.4e} {:>11.4e} {:>8.4}\n",
            e.item, e.level, e.nelem, e.lhs, e.rhs, e.ratio
        );
    }
    for (i, b) in &bands {
        summary += &format!("item {i}: band {b:.3} {}\n", if *b < EQUIVALENCE_BAND { "ok" } else { "FAIL" });
    }
    for name in ["state", "adjoint", "discrete_state", "discrete_adjoint"] {
        let m = report.max_stability(name);
        if m > 0.0 {
            summary += &format!("stability {name}: max ratio {m:.3}\n");
        }
    }
    Ok(Outcome {
        pass,
        summary,
        files: vec![path],
    })
}
