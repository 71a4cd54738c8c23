//! Convergence rates on uniform mesh sequences and the two-sidedness of the
//! estimator.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::afem::{dof_count, exact_errors, rate_fit};
use crate::control::{integrate_kinked, KktOptions, KktSystem};
use crate::estimate::{estimate, EstimatorOptions};
use crate::femspace::{error_norms, p0_error, Analytic};
use crate::mesh::{make_mesh, mesh_size, DomainSpec};
use crate::stokes::PressureSign;
use crate::verify::ManufacturedCase;
use crate::{Error, Result};

/// Error columns of a rate table, in output order.
pub const RATE_COLUMNS: [&str; 8] = [
    "stokes_energy",
    "stokes_l2_velocity",
    "stokes_l2_pressure",
    "ocp_energy_sum",
    "ocp_l2_sum",
    "ocp_l2_velocity_sum",
    "ocp_l2_pressure_sum",
    "ocp_l2_control",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub level: usize,
    pub nelem: usize,
    pub ndof: usize,
    pub h: f64,
    /// One value per entry of [`RATE_COLUMNS`].
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    /// Slope of `ln error` against `ln h`.
    Fitted(f64),
    /// Every error vanished to roundoff.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    /// One rate per entry of [`RATE_COLUMNS`].
    pub rates: Vec<Option<Rate>>,
}

impl RateTable {
    pub fn rate(&self, column: &str) -> Option<Rate> {
        RATE_COLUMNS.iter().position(|c| *c == column).and_then(|i| self.rates[i])
    }

    pub fn fitted(&self, column: &str) -> Option<f64> {
        match self.rate(column)? {
            Rate::Fitted(r) => Some(r),
            Rate::Exact => None,
        }
    }
}

/// Errors at or below this are treated as zero.
const EXACT_ERROR: f64 = 1e-13;

fn level_mesh(domain: &DomainSpec, n0: usize, l: usize) -> Result<Arc<crate::mesh::Mesh>> {
    let mut spec = domain.clone();
    spec.n = n0 << l;
    Ok(Arc::new(make_mesh(&spec)?))
}

/// Errors on the uniform meshes `n0 · 2^l`, `l ∈ levels`, and their rates in
/// `h`: the Stokes problem alone with load `f + ū`, and the full optimality
/// system.
pub fn check_apriori_rates(case: &ManufacturedCase, levels: &[usize], n0: usize, opts: KktOptions, depth: u8) -> Result<RateTable> {
    let exact = case
        .exact
        .as_ref()
        .ok_or(Error::InvalidParameter("rates need a closed-form solution".into()))?;
    let mut table = RateTable::default();
    for &l in levels {
        let mesh = level_mesh(&case.domain, n0, l)?;
        let sys = KktSystem::new(&case.data, mesh.clone(), opts)?;
        let u_load = integrate_kinked(sys.space(), &Analytic(exact.u.clone()), depth);
        let rhs: Vec<f64> = sys.f_load.iter().zip(&u_load).map(|(a, b)| a + b).collect();
        let st = sys.stokes.solve_load(&rhs, PressureSign::Minus)?;
        let (sl2, sen) = error_norms(&st.velocity, &*exact.y, &*exact.grad_y, depth);
        let spr = p0_error(&st.pressure, &*exact.r, depth);

        let sol = sys.solve()?;
        let e = exact_errors(&sol, exact, depth);
        table.rows.push(RateRow {
            level: l,
            nelem: mesh.num_elements(),
            ndof: dof_count(&mesh),
            h: mesh_size(&mesh),
            errors: alloc::vec![sen, sl2, spr, e.energy_sum(), e.l2_sum(), e.l2_y + e.l2_p, e.l2_r + e.l2_s, e.l2_u],
        });
    }
    let hs: Vec<f64> = table.rows.iter().map(|r| r.h).collect();
    for c in 0..RATE_COLUMNS.len() {
        let errs: Vec<f64> = table.rows.iter().map(|r| r.errors[c]).collect();
        let rate = if errs.iter().all(|&e| e <= EXACT_ERROR) {
            Some(Rate::Exact)
        } else {
            rate_fit(&hs, &errs).ok().map(Rate::Fitted)
        };
        table.rates.push(rate);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoSidedRow {
    pub level: usize,
    pub nelem: usize,
    /// Squared energy-type error.
    pub error2: f64,
    pub eta2: f64,
    pub osc2: f64,
    /// `error² / η²`.
    pub reliability: f64,
    /// `η² / (error² + osc²)`.
    pub efficiency: f64,
}

/// `max / min` of a positive sequence; infinite if any entry is not positive.
pub fn spread(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(0.0, f64::max);
    if lo > 0.0 && hi.is_finite() {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Reliability and efficiency ratios on the uniform meshes `n0 · 2^l`.
pub fn check_two_sidedness(
    case: &ManufacturedCase,
    levels: &[usize],
    n0: usize,
    opts: KktOptions,
    est: EstimatorOptions,
    depth: u8,
) -> Result<Vec<TwoSidedRow>> {
    let exact = case
        .exact
        .as_ref()
        .ok_or(Error::InvalidParameter("two-sidedness needs a closed-form solution".into()))?;
    let mut rows = Vec::new();
    for &l in levels {
        let mesh = level_mesh(&case.domain, n0, l)?;
        let sol = KktSystem::new(&case.data, mesh.clone(), opts)?.solve()?;
        let rep = estimate(&sol, &case.data, est);
        let error2 = exact_errors(&sol, exact, depth).total2();
        let osc2 = rep.osc2();
        let q = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::INFINITY };
        rows.push(TwoSidedRow {
            level: l,
            nelem: mesh.num_elements(),
            error2,
            eta2: rep.eta2,
            osc2,
            reliability: q(error2, rep.eta2),
            efficiency: q(rep.eta2, error2 + osc2),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::manufactured_problem;

    #[test]
    fn zero_case_is_exact() {
        let case = manufactured_problem("zero").unwrap();
        let t = check_apriori_rates(&case, &[0, 1, 2], 2, KktOptions::default(), 1).unwrap();
        assert!(t.rates.iter().all(|r| *r == Some(Rate::Exact)));
    }

    #[test]
    fn spread_examples() {
        assert_eq!(spread(&[1.0, 2.0, 4.0]), 4.0);
        assert_eq!(spread(&[1.0, 0.0]), f64::INFINITY);
    }
}
