//! The adaptive loop SOLVE → ESTIMATE → MARK → REFINE, its trace, and rate
//! fits over traces.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::assembly::ProblemData;
use crate::control::{l2_distance, solve_kkt, BrokenClamp, KktOptions, KktSolution};
use crate::estimate::{distance_squared, estimate, EstimatorOptions, EstimatorReport};
use crate::femspace::{broken_norms, error_norms, p0_error, prolong, Analytic, P0Field};
use crate::math::{ceil, ln, powf, sqrt};
use crate::mesh::{bisect, refine_uniform, Mesh, RefinementRelation};
use crate::verify::ExactSolution;
use crate::{Error, Result};

/// Greedy Dörfler marking: the shortest prefix of the elements sorted by
/// descending indicator (ties by ascending id) that carries `θ Σ η²_K`.
pub fn dorfler_mark(indicators: &[f64], theta: f64) -> Vec<usize> {
    let total: f64 = indicators.iter().sum();
    if !(total > 0.0) {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..indicators.len()).collect();
    order.sort_by(|&a, &b| indicators[b].total_cmp(&indicators[a]).then(a.cmp(&b)));
    let goal = theta * total;
    let mut acc = 0.0;
    let mut out = Vec::new();
    for k in order {
        if acc >= goal || indicators[k] == 0.0 {
            break;
        }
        acc += indicators[k];
        out.push(k);
    }
    out
}

/// Source of elapsed wall time; `None` leaves the trace column empty.
pub trait Clock {
    fn seconds(&self) -> Option<f64>;
}

/// Records no timings.
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AfemConfig {
    /// Dörfler parameter in `(0, 1)`.
    pub theta: f64,
    pub max_dofs: usize,
    /// Number of levels solved, at most.
    pub max_iters: usize,
    pub kkt: KktOptions,
    pub estimator: EstimatorOptions,
    /// Bisect every element instead of marking.
    pub uniform: bool,
    /// Keep meshes, solutions and reports of all levels.
    pub keep_levels: bool,
    /// Subdivision depth of the quadrature for errors against closed forms.
    pub error_depth: u8,
    /// Uniform refinements of the finest mesh for the reference solve when
    /// no closed form exists; zero disables reference errors.
    pub reference_gap: usize,
    /// Upper bound on the elements of the reference mesh; the gap shrinks
    /// to respect it.
    pub reference_max_elements: usize,
}

impl Default for AfemConfig {
    fn default() -> Self {
        Self {
            theta: 0.3,
            max_dofs: 20_000,
            max_iters: 40,
            kkt: KktOptions::default(),
            estimator: EstimatorOptions::default(),
            uniform: false,
            keep_levels: false,
            error_depth: 1,
            reference_gap: 2,
            reference_max_elements: 400_000,
        }
    }
}

impl AfemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidParameter("theta must lie in (0, 1)".into()));
        }
        if self.max_iters == 0 || self.max_dofs == 0 {
            return Err(Error::InvalidParameter("budgets must be positive".into()));
        }
        if !(self.kkt.tol > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Errors of one level against the exact or reference solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRecord {
    pub energy_y: f64,
    pub energy_p: f64,
    pub l2_y: f64,
    pub l2_p: f64,
    pub l2_r: f64,
    pub l2_s: f64,
    pub l2_u: f64,
}

impl ErrorRecord {
    /// `‖u - u_h‖² + ⫴y - y_h⫴² + ‖r - r_h‖² + ⫴p - p_h⫴² + ‖s - s_h‖²`.
    pub fn total2(&self) -> f64 {
        let e = self;
        e.l2_u * e.l2_u + e.energy_y * e.energy_y + e.l2_r * e.l2_r + e.energy_p * e.energy_p + e.l2_s * e.l2_s
    }

    /// Unsquared energy-type sum.
    pub fn energy_sum(&self) -> f64 {
        self.l2_u + self.energy_y + self.l2_r + self.energy_p + self.l2_s
    }

    /// Unsquared L²-type sum.
    pub fn l2_sum(&self) -> f64 {
        self.l2_u + self.l2_y + self.l2_r + self.l2_p + self.l2_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelRecord {
    pub level: usize,
    pub nelem: usize,
    pub ndof: usize,
    pub eta: f64,
    pub mu: f64,
    /// `(osc²_f + osc²_{y_d})^{1/2}`.
    pub osc: f64,
    /// `δ(𝒯_l, 𝒯_{l+1})`.
    pub delta_next: Option<f64>,
    pub errors: Option<ErrorRecord>,
    pub marked: usize,
    pub seconds: Option<f64>,
}

#[derive(Clone)]
pub struct StoredLevel {
    pub solution: KktSolution,
    pub report: EstimatorReport,
    /// Relation to the next level.
    pub relation: Option<RefinementRelation>,
}

impl StoredLevel {
    pub fn mesh(&self) -> &Arc<Mesh> {
        self.solution.mesh()
    }
}

#[derive(Clone, Default)]
pub struct AfemTrace {
    pub records: Vec<LevelRecord>,
    /// Filled when `keep_levels` is set.
    pub levels: Vec<StoredLevel>,
    /// Error that ended the loop early.
    pub failure: Option<Error>,
}

impl AfemTrace {
    pub fn ndofs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.ndof as f64).collect()
    }

    pub fn etas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.eta).collect()
    }
}

/// Unknowns of one state solve: free velocity DOFs plus pressures.
pub fn dof_count(mesh: &Mesh) -> usize {
    2 * mesh.edges.iter().filter(|e| !e.boundary).count() + mesh.num_elements()
}

/// Errors of `sol` against closed forms.
pub fn exact_errors(sol: &KktSolution, exact: &ExactSolution, depth: u8) -> ErrorRecord {
    let (l2_y, energy_y) = error_norms(&sol.state, &*exact.y, &*exact.grad_y, depth);
    let (l2_p, energy_p) = error_norms(&sol.adjoint, &*exact.p, &*exact.grad_p, depth);
    let l2_r = p0_error(&sol.pressure, &*exact.r, depth);
    let l2_s = p0_error(&sol.adjoint_pressure, &*exact.s, depth);
    let l2_u = l2_distance(sol.mesh(), &sol.control, &Analytic(exact.u.clone()), depth);
    ErrorRecord {
        energy_y,
        energy_p,
        l2_y,
        l2_p,
        l2_r,
        l2_s,
        l2_u,
    }
}

/// `‖q_fine - q_coarse‖` with the coarse field carried to the fine mesh.
pub fn p0_distance(coarse: &P0Field, fine: &P0Field, rel: &RefinementRelation) -> Result<f64> {
    if rel.coarse_id != coarse.space.mesh.id() || rel.fine_id != fine.space.mesh.id() {
        return Err(Error::MeshMismatch);
    }
    let m = &fine.space.mesh;
    let s: f64 = (0..m.num_elements())
        .map(|k| {
            let d = fine.values[k] - coarse.values[rel.parent[k]];
            m.area(k) * d * d
        })
        .sum();
    Ok(sqrt(s))
}

/// Errors of a coarse solution against a solution on a refinement.
pub fn relative_errors(coarse: &KktSolution, fine: &KktSolution, rel: &RefinementRelation) -> Result<ErrorRecord> {
    let fm = fine.mesh();
    let (l2_y, energy_y) = broken_norms(&fine.state.to_broken(), Some(&prolong(&coarse.state, fm, rel)?))?;
    let (l2_p, energy_p) = broken_norms(&fine.adjoint.to_broken(), Some(&prolong(&coarse.adjoint, fm, rel)?))?;
    let l2_r = p0_distance(&coarse.pressure, &fine.pressure, rel)?;
    let l2_s = p0_distance(&coarse.adjoint_pressure, &fine.adjoint_pressure, rel)?;
    let l2_u = l2_distance(fm, &fine.control, &BrokenClamp::prolonged(&coarse.control, fm, rel)?, 0);
    Ok(ErrorRecord {
        energy_y,
        energy_p,
        l2_y,
        l2_p,
        l2_r,
        l2_s,
        l2_u,
    })
}

/// Run the adaptive loop from `initial`.
///
/// Errors are measured against `exact` when given, otherwise against a
/// reference solve on uniform refinements of the finest mesh (which requires
/// `keep_levels`). A failing solve ends the loop; the trace up to that point
/// is returned with the error in `failure`.
pub fn afem_run(data: &ProblemData, initial: Mesh, exact: Option<&ExactSolution>, cfg: &AfemConfig, clock: &dyn Clock) -> AfemTrace {
    let mut trace = AfemTrace::default();
    if let Err(e) = cfg.validate().and_then(|_| data.validate()) {
        trace.failure = Some(e);
        return trace;
    }
    let mut mesh = Arc::new(initial);
    let mut previous: Option<(KktSolution, RefinementRelation)> = None;
    let mut stored: Vec<StoredLevel> = Vec::new();
    for level in 0..cfg.max_iters {
        let sol = match solve_kkt(data, mesh.clone(), cfg.kkt) {
            Ok(s) => s,
            Err(e) => {
                trace.failure = Some(e);
                break;
            }
        };
        if let Some((prev, rel)) = previous.take() {
            match distance_squared(&prev, &sol, &rel) {
                Ok(d2) => trace.records[level - 1].delta_next = Some(sqrt(d2)),
                Err(e) => {
                    trace.failure = Some(e);
                    break;
                }
            }
        }
        let report = estimate(&sol, data, cfg.estimator);
        let errors = exact.map(|ex| exact_errors(&sol, ex, cfg.error_depth));
        let ndof = dof_count(&mesh);
        let mut record = LevelRecord {
            level,
            nelem: mesh.num_elements(),
            ndof,
            eta: report.eta(),
            mu: report.mu(),
            osc: sqrt(report.osc2()),
            delta_next: None,
            errors,
            marked: 0,
            seconds: None,
        };

        let mut next = None;
        if level + 1 < cfg.max_iters && report.eta2 > 0.0 {
            let marked = if cfg.uniform {
                (0..mesh.num_elements()).collect()
            } else {
                dorfler_mark(&report.totals(), cfg.theta)
            };
            if !marked.is_empty() {
                match bisect(&mesh, &marked) {
                    Ok((fine, rel)) if dof_count(&fine) <= cfg.max_dofs => {
                        record.marked = marked.len();
                        next = Some((fine, rel));
                    }
                    Ok(_) => {}
                    Err(e) => trace.failure = Some(e),
                }
            }
        }
        record.seconds = clock.seconds();
        trace.records.push(record);
        if cfg.keep_levels {
            stored.push(StoredLevel {
                solution: sol.clone(),
                report,
                relation: next.as_ref().map(|n| n.1.clone()),
            });
        }
        match next {
            Some((fine, rel)) => {
                mesh = Arc::new(fine);
                previous = Some((sol, rel));
            }
            None => break,
        }
    }
    if exact.is_none() && cfg.keep_levels && cfg.reference_gap > 0 && !stored.is_empty() {
        if let Err(e) = reference_errors(data, cfg, &stored, &mut trace.records) {
            trace.failure.get_or_insert(e);
        }
    }
    trace.levels = stored;
    trace
}

/// Fill errors against a KKT solve on uniform refinements of the last mesh.
fn reference_errors(data: &ProblemData, cfg: &AfemConfig, levels: &[StoredLevel], records: &mut [LevelRecord]) -> Result<()> {
    let last = levels.last().ok_or(Error::TooFewPoints { needed: 1, got: 0 })?;
    let mut mesh = (**last.mesh()).clone();
    let mut to_ref = RefinementRelation::identity(&mesh);
    for _ in 0..cfg.reference_gap {
        if 4 * mesh.num_elements() > cfg.reference_max_elements {
            break;
        }
        let (fine, rel) = refine_uniform(&mesh);
        to_ref = to_ref.compose(&rel);
        mesh = fine;
    }
    let reference = solve_kkt(data, Arc::new(mesh), cfg.kkt)?;
    // relations from every level to the reference, composed backwards
    let mut rel = to_ref;
    for (l, lvl) in levels.iter().enumerate().rev() {
        if l + 1 < levels.len() {
            let step = lvl.relation.as_ref().ok_or(Error::MeshMismatch)?;
            rel = step.compose(&rel);
        }
        records[l].errors = Some(relative_errors(&lvl.solution, &reference, &rel)?);
    }
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x` over the last
/// `max(3, ⌈n/2⌉)` points.
pub fn rate_fit(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len().min(ys.len());
    if n < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: n });
    }
    let m = core::cmp::max(3, ceil(n as f64 / 2.0) as usize);
    let (xs, ys) = (&xs[n - m..n], &ys[n - m..n]);
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("rate fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|&v| ln(v)).collect();
    let ly: Vec<f64> = ys.iter().map(|&v| ln(v)).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / m as f64, ly.iter().sum::<f64>() / m as f64);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("rate fit needs distinct abscissae".into()));
    }
    Ok(sxy / sxx)
}

/// Slope through two points.
pub fn rate_fit_two_point(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    if [a.0, a.1, b.0, b.1].iter().any(|v| !(*v > 0.0)) || a.0 == b.0 {
        return Err(Error::InvalidParameter(
            "rate fit needs positive values and distinct abscissae".into(),
        ));
    }
    Ok((ln(b.1) - ln(a.1)) / (ln(b.0) - ln(a.0)))
}

/// Fitted `η²_{l+1} ≤ q η²_l + C δ²_{l,l+1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionFit {
    /// Smallest `q` for which the inequality holds on every used transition
    /// with the fitted `C`.
    pub q: f64,
    pub c: f64,
    pub transitions: usize,
}

/// Fit over the last `last` transitions of a trace by nonnegative least
/// squares, then tighten `q` so the inequality holds on each transition.
pub fn reduction_fit(trace: &AfemTrace, last: usize) -> Result<ReductionFit> {
    let rows: Vec<(f64, f64, f64)> = trace
        .records
        .windows(2)
        .filter_map(|w| w[0].delta_next.map(|d| (w[0].eta * w[0].eta, d * d, w[1].eta * w[1].eta)))
        .collect();
    if rows.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let rows = &rows[rows.len().saturating_sub(last)..];
    let (mut saa, mut sab, mut sbb, mut sya, mut syb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(a, b, y) in rows {
        saa += a * a;
        sab += a * b;
        sbb += b * b;
        sya += y * a;
        syb += y * b;
    }
    let det = saa * sbb - sab * sab;
    let (mut q, mut c) = if det > 0.0 {
        ((sya * sbb - syb * sab) / det, (syb * saa - sya * sab) / det)
    } else {
        (-1.0, -1.0)
    };
    if !(q >= 0.0 && c >= 0.0) {
        // boundary of the nonnegative orthant: q alone or C alone
        let q_only = if saa > 0.0 { (sya / saa).max(0.0) } else { 0.0 };
        let c_only = if sbb > 0.0 { (syb / sbb).max(0.0) } else { 0.0 };
        let res = |q: f64, c: f64| rows.iter().map(|&(a, b, y)| (y - q * a - c * b) * (y - q * a - c * b)).sum::<f64>();
        (q, c) = if res(q_only, 0.0) <= res(0.0, c_only) {
            (q_only, 0.0)
        } else {
            (0.0, c_only)
        };
    }
    let q = rows
        .iter()
        .filter(|r| r.0 > 0.0)
        .map(|&(a, b, y)| (y - c * b) / a)
        .fold(q, f64::max);
    Ok(ReductionFit {
        q,
        c,
        transitions: rows.len(),
    })
}

/// `sup_l (1 + |𝒯_l| - |𝒯_0|)^s η_l`.
pub fn optimality_constant(trace: &AfemTrace, s: f64) -> f64 {
    let Some(first) = trace.records.first() else { return 0.0 };
    trace
        .records
        .iter()
        .map(|r| powf(1.0 + (r.nelem - first.nelem) as f64, s) * r.eta)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_mesh, DomainSpec};
    use crate::verify::manufactured_problem;
    use alloc::vec;

    #[test]
    fn dorfler_examples() {
        let eta = [16.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(dorfler_mark(&eta, 0.5), vec![0]);
        assert_eq!(dorfler_mark(&eta, 0.9), vec![0, 1, 2]);
        assert_eq!(dorfler_mark(&[1.0; 4], 0.5), vec![0, 1]);
        assert!(dorfler_mark(&[0.0; 3], 0.5).is_empty());
        // θ close to one takes every nonzero indicator
        assert_eq!(dorfler_mark(&[3.0, 0.0, 2.0, 1.0], 0.999_999), vec![0, 2, 3]);
    }

    #[test]
    fn rate_fit_examples() {
        assert!((rate_fit_two_point((100.0, 1.0), (400.0, 0.5)).unwrap() + 0.5).abs() < 1e-15);
        let xs = [10.0, 20.0, 40.0, 80.0, 160.0];
        assert_eq!(rate_fit(&xs, &[3.0; 5]).unwrap(), 0.0);
        let inv: Vec<f64> = xs.iter().map(|x| 1.0 / x).collect();
        assert!((rate_fit(&xs, &inv).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(
            rate_fit(&xs[..2], &inv[..2]),
            Err(Error::TooFewPoints { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn config_rejects_bad_theta() {
        for theta in [0.0, 1.0, 1.5, -0.1, f64::NAN] {
            assert!(AfemConfig {
                theta,
                ..AfemConfig::default()
            }
            .validate()
            .is_err());
        }
    }

    #[test]
    fn short_run_is_monotone_and_deterministic() {
        let case = manufactured_problem("ocp-square").unwrap();
        let cfg = AfemConfig {
            max_iters: 4,
            keep_levels: true,
            ..AfemConfig::default()
        };
        let run = || {
            afem_run(
                &case.data,
                make_mesh(&DomainSpec::unit_square(2)).unwrap(),
                case.exact.as_ref(),
                &cfg,
                &NoClock,
            )
        };
        let (a, b) = (run(), run());
        assert!(a.failure.is_none());
        assert_eq!(a.records.len(), 4);
        assert_eq!(a.records, b.records);
        for w in a.records.windows(2) {
            assert!(w[1].nelem > w[0].nelem);
            assert!(w[0].marked > 0 && w[0].delta_next.is_some());
        }
        assert_eq!(a.levels.len(), 4);
    }

    #[test]
    fn reference_errors_without_closed_form() {
        let case = manufactured_problem("ocp-lshape").unwrap();
        let cfg = AfemConfig {
            max_iters: 3,
            keep_levels: true,
            reference_gap: 1,
            ..AfemConfig::default()
        };
        let t = afem_run(&case.data, make_mesh(&case.domain).unwrap(), None, &cfg, &NoClock);
        assert!(t.failure.is_none(), "{:?}", t.failure);
        let e: Vec<f64> = t.records.iter().map(|r| r.errors.unwrap().energy_y).collect();
        assert!(e.iter().all(|v| v.is_finite() && *v > 0.0));
        assert!(e[2] < e[0]);
    }
}
