//! Two-sided equivalences between the discretization error and the error of
//! auxiliary solutions that see the discrete control or state as data.
//!
//! Items 1 and 2 compare exact errors with `(ỹ, r̃, p̃, s̃)`, the continuous
//! Stokes solutions for the loads `f + u_h` and `y_h - y_d`. These are
//! represented through linearity as `ỹ = ȳ + S(u_h - ū)` and
//! `p̃ = p̄ + S⁺(y_h - ȳ)`, with the correction solves carried out on a
//! uniformly refined mesh. Items 3 and 4 are the discrete analogues on a
//! refinement `𝒯̂` where every quantity is computable exactly.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::afem::{exact_errors, p0_distance, relative_errors, ErrorRecord};
use crate::control::{integrate_kinked, BrokenClamp, KinkedSource, KktOptions, KktSolution, KktSystem, LinearCombination};
use crate::femspace::{broken_norms, frob2, prolong, Analytic, BrokenField, P0Field};
use crate::math::sqrt;
use crate::mesh::{make_mesh, refine_uniform, DomainSpec, Mesh, RefinementRelation};
use crate::quadrature::for_each_point;
use crate::stokes::PressureSign;
use crate::verify::{ExactSolution, ManufacturedCase};
use crate::{Error, Result};

/// `lhs / rhs` of one item on one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceItem {
    pub item: u8,
    pub level: usize,
    pub nelem: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// A ratio bounding an auxiliary difference by a data difference.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityEntry {
    pub name: &'static str,
    pub level: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EquivalenceReport {
    pub items: Vec<EquivalenceItem>,
    pub stability: Vec<StabilityEntry>,
}

impl EquivalenceReport {
    /// `max ratio / min ratio` of one item across levels; 1 if absent.
    pub fn band(&self, item: u8) -> f64 {
        let r: Vec<f64> = self.items.iter().filter(|e| e.item == item).map(|e| e.ratio).collect();
        if r.is_empty() {
            return 1.0;
        }
        let hi = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
        if lo > 0.0 {
            hi / lo
        } else {
            f64::INFINITY
        }
    }

    pub fn max_stability(&self, name: &str) -> f64 {
        self.stability
            .iter()
            .filter(|e| e.name == name)
            .map(|e| e.ratio)
            .fold(0.0, f64::max)
    }
}

/// `lhs / rhs`, with `0 / 0 = 1`.
pub fn two_sided_ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 && rhs == 0.0 {
        1.0
    } else if rhs == 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    }
}

/// A smooth field and its gradient.
pub type SmoothPair<'a> = (
    &'a dyn Fn(crate::Point) -> crate::Point,
    &'a dyn Fn(crate::Point) -> crate::femspace::Grad,
);

/// `(‖v + Σ c_i b_i‖, ⫴v + Σ c_i b_i⫴_pw)` for a smooth `v` (when given) and
/// broken-affine `b_i` on `mesh`.
pub fn mixed_norms(mesh: &Mesh, exact: Option<SmoothPair<'_>>, parts: &[(f64, &BrokenField)], depth: u8) -> Result<(f64, f64)> {
    if parts.iter().any(|(_, b)| b.mesh.id() != mesh.id()) {
        return Err(Error::MeshMismatch);
    }
    let (mut l2, mut h1) = (0.0, 0.0);
    for k in 0..mesh.num_elements() {
        let area = mesh.area(k);
        let mut gk = [[0.0; 2]; 2];
        for (c, b) in parts {
            let g = b.gradient(k);
            for i in 0..2 {
                for j in 0..2 {
                    gk[i][j] += c * g[i][j];
                }
            }
        }
        let d = if exact.is_some() { depth } else { 0 };
        for_each_point(d, &[], |b, w| {
            let x = mesh.point(k, &b);
            let (mut v, mut g) = ([0.0; 2], gk);
            if let Some((u, gu)) = exact {
                v = u(x);
                let e = gu(x);
                for i in 0..2 {
                    for j in 0..2 {
                        g[i][j] += e[i][j];
                    }
                }
            }
            for (c, bf) in parts {
                let q = bf.eval_local(k, &b);
                v[0] += c * q[0];
                v[1] += c * q[1];
            }
            l2 += area * w * (v[0] * v[0] + v[1] * v[1]);
            h1 += area * w * frob2(&g);
        });
    }
    Ok((sqrt(l2), sqrt(h1)))
}

/// `‖q + Σ c_i q_i‖` for a smooth scalar `q` (when given) and elementwise
/// constants `q_i` on `mesh`.
pub fn mixed_scalar(mesh: &Mesh, exact: Option<&dyn Fn(crate::Point) -> f64>, parts: &[(f64, &[f64])], depth: u8) -> f64 {
    let mut s = 0.0;
    for k in 0..mesh.num_elements() {
        let area = mesh.area(k);
        let c: f64 = parts.iter().map(|(a, q)| a * q[k]).sum();
        match exact {
            Some(q) => for_each_point(depth, &[], |b, w| {
                let d = q(mesh.point(k, &b)) + c;
                s += area * w * d * d;
            }),
            None => s += area * c * c,
        }
    }
    sqrt(s)
}

fn carried(q: &P0Field, rel: &RefinementRelation) -> Vec<f64> {
    rel.parent.iter().map(|&c| q.values[c]).collect()
}

/// Discrete quantities of items 3 and 4 for a coarse solution and the
/// system on a refinement.
pub struct DiscreteComparison {
    /// `û_h - u_h` and friends.
    pub errors: ErrorRecord,
    /// `⫴ỹ_h - y_h⫴, ‖r̃_h - r_h‖, ⫴p̃_h - p_h⫴, ‖s̃_h - s_h‖`.
    pub aux_energy: [f64; 4],
    /// The same with L² norms for the velocities.
    pub aux_l2: [f64; 4],
    /// `⫴ŷ_h - ỹ_h⫴ + ‖r̂_h - r̃_h‖`.
    pub state_gap: f64,
    /// `⫴p̂_h - p̃_h⫴ + ‖ŝ_h - s̃_h‖`.
    pub adjoint_gap: f64,
}

impl DiscreteComparison {
    pub fn lhs3(&self) -> f64 {
        let e = &self.errors;
        e.l2_u + e.energy_y + e.l2_r + e.energy_p + e.l2_s
    }
    pub fn lhs4(&self) -> f64 {
        let e = &self.errors;
        e.l2_u + e.l2_y + e.l2_r + e.l2_p + e.l2_s
    }
    pub fn rhs3(&self) -> f64 {
        self.aux_energy.iter().sum()
    }
    pub fn rhs4(&self) -> f64 {
        self.aux_l2.iter().sum()
    }
}

/// Compare `coarse` with the solution `fine` of `fine_sys` on a refinement.
pub fn discrete_comparison(
    coarse: &KktSolution,
    fine_sys: &KktSystem,
    fine: &KktSolution,
    rel: &RefinementRelation,
) -> Result<DiscreteComparison> {
    let fm = fine.mesh().clone();
    let space = fine_sys.space();
    let errors = relative_errors(coarse, fine, rel)?;
    let uh = BrokenClamp::prolonged(&coarse.control, &fm, rel)?;
    let yh = prolong(&coarse.state, &fm, rel)?;
    let ph = prolong(&coarse.adjoint, &fm, rel)?;

    let u_load = integrate_kinked(space, &uh, 0);
    let rhs: Vec<f64> = fine_sys.f_load.iter().zip(&u_load).map(|(a, b)| a + b).collect();
    let ys = fine_sys.stokes.solve_load(&rhs, PressureSign::Minus)?;
    let y_load = integrate_kinked(space, &yh, 0);
    let rhs: Vec<f64> = y_load.iter().zip(&fine_sys.yd_load).map(|(a, b)| a - b).collect();
    let ps = fine_sys.stokes.solve_load(&rhs, PressureSign::Plus)?;

    let (ly, ey) = broken_norms(&ys.velocity.to_broken(), Some(&yh))?;
    let (lp, ep) = broken_norms(&ps.velocity.to_broken(), Some(&ph))?;
    let r = p0_distance(&coarse.pressure, &ys.pressure, rel)?;
    let s = p0_distance(&coarse.adjoint_pressure, &ps.pressure, rel)?;
    let diff = |a: &P0Field, b: &P0Field| mixed_scalar(&fm, None, &[(1.0, &a.values), (-1.0, &b.values)], 0);
    let (_, dy) = broken_norms(&fine.state.to_broken(), Some(&ys.velocity.to_broken()))?;
    let (_, dp) = broken_norms(&fine.adjoint.to_broken(), Some(&ps.velocity.to_broken()))?;
    Ok(DiscreteComparison {
        errors,
        aux_energy: [ey, r, ep, s],
        aux_l2: [ly, r, lp, s],
        state_gap: dy + diff(&fine.pressure, &ys.pressure),
        adjoint_gap: dp + diff(&fine.adjoint_pressure, &ps.pressure),
    })
}

/// Continuous quantities of items 1 and 2 for one discrete solution.
pub struct ContinuousComparison {
    pub errors: ErrorRecord,
    /// `⫴ỹ - y_h⫴, ‖r̃ - r_h‖, ⫴p̃ - p_h⫴, ‖s̃ - s_h‖`.
    pub aux_energy: [f64; 4],
    pub aux_l2: [f64; 4],
    /// `⫴ȳ - ỹ⫴ + ‖r̄ - r̃‖`.
    pub state_gap: f64,
    /// `⫴p̄ - p̃⫴ + ‖s̄ - s̃‖`.
    pub adjoint_gap: f64,
}

impl ContinuousComparison {
    pub fn lhs1(&self) -> f64 {
        self.errors.total2()
    }
    pub fn lhs2(&self) -> f64 {
        let e = &self.errors;
        e.l2_u * e.l2_u + e.l2_y * e.l2_y + e.l2_r * e.l2_r + e.l2_p * e.l2_p + e.l2_s * e.l2_s
    }
    pub fn rhs1(&self) -> f64 {
        self.aux_energy.iter().map(|v| v * v).sum()
    }
    pub fn rhs2(&self) -> f64 {
        self.aux_l2.iter().map(|v| v * v).sum()
    }
}

/// Evaluate items 1 and 2 for `sol`, solving the corrections on the mesh of
/// `fine_sys` (a refinement of `sol`'s mesh through `rel`).
pub fn continuous_comparison(
    sol: &KktSolution,
    exact: &ExactSolution,
    fine_sys: &KktSystem,
    rel: &RefinementRelation,
    depth: u8,
) -> Result<ContinuousComparison> {
    let fm = fine_sys.space().mesh.clone();
    let space = fine_sys.space();
    let errors = exact_errors(sol, exact, depth);
    let uh = BrokenClamp::prolonged(&sol.control, &fm, rel)?;
    let yh = prolong(&sol.state, &fm, rel)?;
    let ph = prolong(&sol.adjoint, &fm, rel)?;
    let ubar = Analytic(exact.u.clone());
    let ybar = Analytic(exact.y.clone());

    let du = LinearCombination {
        parts: alloc::vec![(1.0, &uh as &dyn KinkedSource), (-1.0, &ubar)],
    };
    let z = fine_sys
        .stokes
        .solve_load(&integrate_kinked(space, &du, depth), PressureSign::Minus)?;
    let dy = LinearCombination {
        parts: alloc::vec![(1.0, &yh as &dyn KinkedSource), (-1.0, &ybar)],
    };
    let w = fine_sys
        .stokes
        .solve_load(&integrate_kinked(space, &dy, depth), PressureSign::Plus)?;

    let zb = z.velocity.to_broken();
    let wb = w.velocity.to_broken();
    let (ly, ey) = mixed_norms(&fm, Some((&*exact.y, &*exact.grad_y)), &[(1.0, &zb), (-1.0, &yh)], depth)?;
    let (lp, ep) = mixed_norms(&fm, Some((&*exact.p, &*exact.grad_p)), &[(1.0, &wb), (-1.0, &ph)], depth)?;
    let rh = carried(&sol.pressure, rel);
    let sh = carried(&sol.adjoint_pressure, rel);
    let r = mixed_scalar(&fm, Some(&*exact.r), &[(1.0, &z.pressure.values), (-1.0, &rh)], depth);
    let s = mixed_scalar(&fm, Some(&*exact.s), &[(1.0, &w.pressure.values), (-1.0, &sh)], depth);
    let (_, zy) = broken_norms(&zb, None)?;
    let (_, wp) = broken_norms(&wb, None)?;
    Ok(ContinuousComparison {
        errors,
        aux_energy: [ey, r, ep, s],
        aux_l2: [ly, r, lp, s],
        state_gap: zy + z.pressure.l2_norm(),
        adjoint_gap: wp + w.pressure.l2_norm(),
    })
}

/// Evaluate all four items on the uniform meshes `n0 · 2^l` of the case's
/// domain for each `l` in `levels`. Items 1 and 2 need a closed form.
pub fn check_error_equivalence(
    case: &ManufacturedCase,
    levels: &[usize],
    n0: usize,
    opts: KktOptions,
    depth: u8,
) -> Result<EquivalenceReport> {
    let mut report = EquivalenceReport::default();
    for &l in levels {
        let mut spec: DomainSpec = case.domain.clone();
        spec.n = n0 << l;
        let coarse = Arc::new(make_mesh(&spec)?);
        let (fine, rel) = refine_uniform(&coarse);
        let fine = Arc::new(fine);
        let sol = KktSystem::new(&case.data, coarse.clone(), opts)?.solve()?;
        let fine_sys = KktSystem::new(&case.data, fine.clone(), opts)?;
        let fine_sol = fine_sys.solve()?;
        let nelem = coarse.num_elements();
        let mut push = |item: u8, lhs: f64, rhs: f64| {
            report.items.push(EquivalenceItem {
                item,
                level: l,
                nelem,
                lhs,
                rhs,
                ratio: two_sided_ratio(lhs, rhs),
            });
        };
        if let Some(exact) = &case.exact {
            let c = continuous_comparison(&sol, exact, &fine_sys, &rel, depth)?;
            push(1, c.lhs1(), c.rhs1());
            push(2, c.lhs2(), c.rhs2());
            report.stability.push(StabilityEntry {
                name: "state",
                level: l,
                ratio: two_sided_ratio(c.state_gap, c.errors.l2_u),
            });
            report.stability.push(StabilityEntry {
                name: "adjoint",
                level: l,
                ratio: two_sided_ratio(c.adjoint_gap, c.errors.l2_y),
            });
        }
        let d = discrete_comparison(&sol, &fine_sys, &fine_sol, &rel)?;
        push(3, d.lhs3(), d.rhs3());
        push(4, d.lhs4(), d.rhs4());
        report.stability.push(StabilityEntry {
            name: "discrete_state",
            level: l,
            ratio: two_sided_ratio(d.state_gap, d.errors.l2_u),
        });
        report.stability.push(StabilityEntry {
            name: "discrete_adjoint",
            level: l,
            ratio: two_sided_ratio(d.adjoint_gap, d.errors.l2_y),
        });
    }
    Ok(report)
}
