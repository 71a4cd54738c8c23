//! Empirical constants of the axioms of adaptivity on stored traces.
//!
//! Every check turns a mesh pair `(𝒯_l, 𝒯_{l+1})` into one [`AxiomEntry`]
//! whose `ratio` is the smallest constant for which the inequality holds on
//! that pair. A check passes when its constant is stable across levels, see
//! [`drift`].

use alloc::vec::Vec;

use crate::afem::{AfemTrace, StoredLevel};
use crate::math::sqrt;
use crate::mesh::{mesh_size, refinement_region, RefinementRelation};
use crate::{Error, Result};

/// `ρ₂` for the estimator.
pub const RHO_ETA: f64 = 0.840_896_415_253_714_6;
/// Reduction factor of the volume estimator `μ`.
pub const RHO_MU: f64 = core::f64::consts::FRAC_1_SQRT_2;
/// Maximal admissible drift of an empirical constant.
pub const MAX_DRIFT: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AxiomEntry {
    /// Level of the coarse mesh of the pair.
    pub level: usize,
    pub lhs: f64,
    /// Main right-hand side term (the one multiplied by the fitted constant
    /// or by `ρ`).
    pub rhs: f64,
    pub delta: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxiomCheck {
    pub name: &'static str,
    pub entries: Vec<AxiomEntry>,
    /// Maximum ratio over the pairs.
    pub constant: f64,
    /// Level of the pair attaining `constant`.
    pub argmax: Option<usize>,
    pub drift: f64,
    pub pass: bool,
}

/// Which pairs enter the drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftCriterion {
    /// Pairs with a coarse level below this are pre-asymptotic.
    pub first_level: usize,
    /// Number of trailing trace lengths compared.
    pub span: usize,
}

impl Default for DriftCriterion {
    fn default() -> Self {
        Self { first_level: 3, span: 5 }
    }
}

/// Drift of an empirical constant as the trace grows: with `constant_at(n)`
/// the constant computed from the first `n` pairs, returns
/// `constant_at(n_pairs) / constant_at(n_pairs - span + 1)`. A constant that
/// is zero throughout has drift 1; one that appears late has infinite drift.
pub fn drift_of(constant_at: impl Fn(usize) -> f64, n_pairs: usize, c: DriftCriterion) -> f64 {
    let last = constant_at(n_pairs);
    let first = constant_at(n_pairs.saturating_sub(c.span.max(1) - 1).max(c.first_level + 1).min(n_pairs));
    if !last.is_finite() {
        f64::INFINITY
    } else if last == 0.0 {
        1.0
    } else if first > 0.0 {
        last / first
    } else {
        f64::INFINITY
    }
}

/// Drift of the running maximum of per-pair ratios from `first_level` on.
pub fn drift(entries: &[AxiomEntry], c: DriftCriterion) -> f64 {
    let at = |n: usize| {
        entries
            .iter()
            .filter(|e| e.level >= c.first_level && e.level < n)
            .map(|e| e.ratio)
            .fold(0.0, f64::max)
    };
    drift_of(at, entries.len(), c)
}

fn finish(name: &'static str, entries: Vec<AxiomEntry>, c: DriftCriterion) -> AxiomCheck {
    let d = drift(&entries, c);
    finish_with(name, entries, d)
}

fn finish_with(name: &'static str, entries: Vec<AxiomEntry>, drift: f64) -> AxiomCheck {
    let mut constant = 0.0;
    let mut argmax = None;
    for e in &entries {
        if e.ratio > constant {
            constant = e.ratio;
            argmax = Some(e.level);
        }
    }
    let finite = entries.iter().all(|e| e.ratio.is_finite() && e.ratio >= 0.0);
    AxiomCheck {
        name,
        entries,
        constant,
        argmax,
        drift,
        pass: finite && drift < MAX_DRIFT,
    }
}

/// `a / b` with `0 / 0 = 0`.
fn quotient(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else if b > 0.0 {
        a / b
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Default)]
pub struct AxiomReport {
    pub checks: Vec<AxiomCheck>,
}

/// Maxima of the empirical constants.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AxiomConstants {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    /// Largest `η̂(𝒯̂∖𝒯) / η(𝒯∖𝒯̂)`.
    pub rho2: f64,
}

impl AxiomReport {
    pub fn get(&self, name: &str) -> Option<&AxiomCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn merge(&mut self, other: AxiomReport) {
        self.checks.extend(other.checks);
    }

    fn constant(&self, names: &[&str]) -> f64 {
        names.iter().filter_map(|n| self.get(n)).map(|c| c.constant).fold(0.0, f64::max)
    }

    pub fn constants(&self) -> AxiomConstants {
        AxiomConstants {
            lambda0: self.constant(&["A1_mu", "A2_mu"]),
            lambda1: self.constant(&["A1"]),
            lambda2: self.constant(&["A2"]),
            lambda3: self.constant(&["A3"]),
            lambda4: self.constant(&["A4"]),
            rho2: self.constant(&["rho2"]),
        }
    }

    /// `1 / (1 + Λ̂₁² Λ̂₃)`, the bulk parameter below which optimal rates
    /// are guaranteed with the empirical constants.
    pub fn theta0(&self) -> f64 {
        let c = self.constants();
        1.0 / (1.0 + c.lambda1 * c.lambda1 * c.lambda3)
    }
}

/// Split of the estimators of one mesh pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMeasure {
    pub level: usize,
    /// `η²` and `μ²` on `𝒯 ∩ 𝒯̂` for the coarse and the fine solution.
    pub eta2_kept: (f64, f64),
    pub mu2_kept: (f64, f64),
    /// `η²(𝒯∖𝒯̂)` and `η̂²(𝒯̂∖𝒯)`.
    pub eta2_changed: (f64, f64),
    pub mu2_changed: (f64, f64),
    /// `η²(ℛ(𝒯, 𝒯̂))`.
    pub eta2_region: f64,
    pub delta: f64,
    /// `max_K |K|^{1/2}` of the coarse mesh.
    pub h: f64,
}

/// Measure one pair: `coarse` refined by `rel` into `fine` with distance `delta`.
pub fn measure_pair(level: usize, coarse: &StoredLevel, fine: &StoredLevel, rel: &RefinementRelation, delta: f64) -> Result<PairMeasure> {
    let (cm, fm) = (coarse.mesh(), fine.mesh());
    if rel.coarse_id != cm.id() || rel.fine_id != fm.id() {
        return Err(Error::MeshMismatch);
    }
    let (mut kept_c, mut kept_f, mut old, mut new) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for k in 0..cm.num_elements() {
        if rel.refined[k] {
            old.push(k);
            new.extend_from_slice(&rel.children[k]);
        } else {
            kept_c.push(k);
            kept_f.push(rel.children[k][0]);
        }
    }
    let (rc, rf) = (&coarse.report, &fine.report);
    Ok(PairMeasure {
        level,
        eta2_kept: (rc.eta2_on(&kept_c), rf.eta2_on(&kept_f)),
        mu2_kept: (rc.mu2_on(&kept_c), rf.mu2_on(&kept_f)),
        eta2_changed: (rc.eta2_on(&old), rf.eta2_on(&new)),
        mu2_changed: (rc.mu2_on(&old), rf.mu2_on(&new)),
        eta2_region: rc.eta2_on(&refinement_region(cm, rel)),
        delta,
        h: mesh_size(cm),
    })
}

/// Pair measures of every consecutive pair of a trace with stored levels.
pub fn trace_pairs(trace: &AfemTrace) -> Result<Vec<PairMeasure>> {
    if trace.levels.len() != trace.records.len() {
        return Err(Error::InvalidParameter("trace was run without keep_levels".into()));
    }
    let mut out = Vec::new();
    for l in 0..trace.levels.len().saturating_sub(1) {
        let rel = trace.levels[l].relation.as_ref().ok_or(Error::MeshMismatch)?;
        let delta = trace.records[l].delta_next.ok_or(Error::MeshMismatch)?;
        out.push(measure_pair(l, &trace.levels[l], &trace.levels[l + 1], rel, delta)?);
    }
    Ok(out)
}

/// (A1) for `η` and its `μ` counterpart, `|μ̂ - μ|(𝒯 ∩ 𝒯̂) ≤ h Λ₀ δ`.
pub fn stability_checks(pairs: &[PairMeasure], c: DriftCriterion) -> AxiomReport {
    let mut eta = Vec::new();
    let mut mu = Vec::new();
    for p in pairs {
        let lhs = (sqrt(p.eta2_kept.1) - sqrt(p.eta2_kept.0)).abs();
        eta.push(AxiomEntry {
            level: p.level,
            lhs,
            rhs: p.delta,
            delta: p.delta,
            ratio: quotient(lhs, p.delta),
        });
        let lhs = (sqrt(p.mu2_kept.1) - sqrt(p.mu2_kept.0)).abs();
        mu.push(AxiomEntry {
            level: p.level,
            lhs,
            rhs: p.h * p.delta,
            delta: p.delta,
            ratio: quotient(lhs, p.h * p.delta),
        });
    }
    AxiomReport {
        checks: alloc::vec![finish("A1", eta, c), finish("A1_mu", mu, c)],
    }
}

/// (A2) with `ρ₂ = 2^{-1/4}` for `η` and `2^{-1/2}` with slack `h Λ₀ δ`
/// for `μ`, plus the empirical `ρ̂₂`.
pub fn reduction_checks(pairs: &[PairMeasure], c: DriftCriterion) -> AxiomReport {
    let (mut eta, mut mu, mut rho) = (Vec::new(), Vec::new(), Vec::new());
    for p in pairs {
        let (old, new) = (sqrt(p.eta2_changed.0), sqrt(p.eta2_changed.1));
        let slack = (new - RHO_ETA * old).max(0.0);
        eta.push(AxiomEntry {
            level: p.level,
            lhs: new,
            rhs: old,
            delta: p.delta,
            ratio: quotient(slack, p.delta),
        });
        rho.push(AxiomEntry {
            level: p.level,
            lhs: new,
            rhs: old,
            delta: p.delta,
            ratio: quotient(new, old),
        });
        let (old, new) = (sqrt(p.mu2_changed.0), sqrt(p.mu2_changed.1));
        let slack = (new - RHO_MU * old).max(0.0);
        mu.push(AxiomEntry {
            level: p.level,
            lhs: new,
            rhs: old,
            delta: p.delta,
            ratio: quotient(slack, p.h * p.delta),
        });
    }
    AxiomReport {
        checks: alloc::vec![finish("A2", eta, c), finish("A2_mu", mu, c), finish("rho2", rho, c)],
    }
}

/// (A3): `δ² ≤ Λ₃ η²(ℛ)`.
pub fn reliability_check(pairs: &[PairMeasure], c: DriftCriterion) -> AxiomReport {
    let entries = pairs
        .iter()
        .map(|p| {
            let lhs = p.delta * p.delta;
            AxiomEntry {
                level: p.level,
                lhs,
                rhs: p.eta2_region,
                delta: p.delta,
                ratio: quotient(lhs, p.eta2_region),
            }
        })
        .collect();
    AxiomReport {
        checks: alloc::vec![finish("A3", entries, c)],
    }
}

/// Tolerances of the (A4_ε) form.
pub const EPSILONS: [f64; 2] = [0.1, 0.01];

/// Entries of (A4) (`eps = None`) or (A4_ε) using the first `n` distances.
fn orthogonality_entries(etas: &[f64], deltas: &[f64], n: usize, eps: Option<f64>) -> Vec<AxiomEntry> {
    let mut out = Vec::new();
    for l in 0..n {
        let e2 = etas[l] * etas[l];
        let (mut sd, mut se, mut worst, mut at) = (0.0, 0.0, 0.0, 0.0);
        for k in l..n {
            sd += deltas[k] * deltas[k];
            se += etas[k] * etas[k];
            let v = (sd - eps.unwrap_or(0.0) * se).max(0.0);
            if v > worst {
                worst = v;
                at = sd;
            }
        }
        out.push(AxiomEntry {
            level: l,
            lhs: at,
            rhs: e2,
            delta: deltas[l],
            ratio: quotient(worst, e2),
        });
    }
    out
}

/// (A4) `Σ_{k≥l} δ_k² ≤ Λ₄ η_l²` over the available tail, and the (A4_ε)
/// form `Σ_{k=l}^{l+m} δ_k² ≤ Λ_{4(ε)} η_l² + ε Σ_{k=l}^{l+m} η_k²` maximized
/// over `m`. The drift recomputes the constant on truncated traces.
pub fn orthogonality_checks(etas: &[f64], deltas: &[f64], c: DriftCriterion) -> AxiomReport {
    let n = deltas.len().min(etas.len());
    let mut checks = Vec::new();
    for (name, eps) in [("A4", None), ("A4_eps_0.1", Some(EPSILONS[0])), ("A4_eps_0.01", Some(EPSILONS[1]))] {
        let at = |m: usize| {
            orthogonality_entries(etas, deltas, m, eps)
                .iter()
                .filter(|e| e.level >= c.first_level)
                .map(|e| e.ratio)
                .fold(0.0, f64::max)
        };
        let d = drift_of(at, n, c);
        checks.push(finish_with(name, orthogonality_entries(etas, deltas, n, eps), d));
    }
    AxiomReport { checks }
}

pub fn check_axiom_stability(trace: &AfemTrace, c: DriftCriterion) -> Result<AxiomReport> {
    Ok(stability_checks(&trace_pairs(trace)?, c))
}

pub fn check_axiom_reduction(trace: &AfemTrace, c: DriftCriterion) -> Result<AxiomReport> {
    Ok(reduction_checks(&trace_pairs(trace)?, c))
}

pub fn check_discrete_reliability(trace: &AfemTrace, c: DriftCriterion) -> Result<AxiomReport> {
    Ok(reliability_check(&trace_pairs(trace)?, c))
}

/// Uses only the records, so it works without stored levels.
pub fn check_quasi_orthogonality(trace: &AfemTrace, c: DriftCriterion) -> AxiomReport {
    let deltas: Vec<f64> = trace.records.iter().map_while(|r| r.delta_next).collect();
    orthogonality_checks(&trace.etas(), &deltas, c)
}

/// All axiom checks of one trace.
pub fn check_axioms(trace: &AfemTrace, c: DriftCriterion) -> Result<AxiomReport> {
    let pairs = trace_pairs(trace)?;
    let mut r = stability_checks(&pairs, c);
    r.merge(reduction_checks(&pairs, c));
    r.merge(reliability_check(&pairs, c));
    r.merge(check_quasi_orthogonality(trace, c));
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(r: &[f64]) -> Vec<AxiomEntry> {
        r.iter()
            .enumerate()
            .map(|(l, &v)| AxiomEntry {
                level: l,
                lhs: v,
                rhs: 1.0,
                delta: 1.0,
                ratio: v,
            })
            .collect()
    }

    #[test]
    fn drift_of_running_maximum() {
        let c = DriftCriterion { first_level: 0, span: 2 };
        assert_eq!(drift(&entries(&[1.0, 0.0, 1.0, 0.0]), c), 1.0);
        assert_eq!(drift(&entries(&[0.0, 0.0]), c), 1.0);
        assert_eq!(drift(&entries(&[1.0, 4.0]), c), 4.0);
        assert_eq!(drift(&entries(&[0.0, 4.0]), c), f64::INFINITY);
        let c = DriftCriterion { first_level: 1, span: 5 };
        assert_eq!(drift(&entries(&[100.0, 2.0, 1.0, 3.0]), c), 1.5);
    }

    #[test]
    fn rho_constant() {
        assert!((RHO_ETA - crate::math::powf(2.0, -0.25)).abs() < 1e-15);
    }

    #[test]
    fn zero_distances_give_zero_constants() {
        let r = orthogonality_checks(&[1.0, 0.5, 0.25], &[0.0, 0.0], DriftCriterion::default());
        for c in &r.checks {
            assert_eq!(c.constant, 0.0);
            assert!(c.pass);
        }
    }

    #[test]
    fn last_term_of_a4_is_one_distance() {
        let r = orthogonality_checks(&[2.0, 1.0, 0.5], &[1.0, 0.5], DriftCriterion::default());
        let a4 = r.get("A4").unwrap();
        assert!((a4.entries[1].ratio - 0.25).abs() < 1e-15);
        assert!((a4.entries[0].ratio - 1.25 / 4.0).abs() < 1e-15);
        assert_eq!(a4.argmax, Some(0));
        let e = r.get("A4_eps_0.1").unwrap();
        // m = 0 gives (1 - 0.4)/4, m = 1 gives (1.25 - 0.5)/4
        assert!((e.entries[0].ratio - 0.1875).abs() < 1e-15);
    }
}
