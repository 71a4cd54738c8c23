//! The discrete optimality system with a variationally discretized control.
//!
//! The control is never expanded in a basis. It is the pointwise projection
//! `Π_[ua,ub](-p_h/α)` of an adjoint CR field ([`ClampedField`]) or, during
//! the damped fixed point, a convex combination of such projections
//! ([`ControlBlend`]). Integrals involving a control are computed exactly:
//! each element is cut along the lines where `-p_h/α` meets a bound, and on
//! every cell the clamp is affine.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::assembly::{assemble_load_depth, ProblemData};
use crate::dense::gmres;
use crate::femspace::{Analytic, BrokenField, CrField, CrSpace, FieldSource, P0Field};
use crate::math::{clamp_scalar, sqrt};
use crate::mesh::{Mesh, NONE};
use crate::quadrature::{crosses, eval_affine, for_each_point, partition, Affine, Bary};
use crate::stokes::{PressureSign, StokesSolver};
use crate::{Error, Point, Result};

/// Componentwise `min(b, max(a, v))`.
#[inline]
pub fn clamp(v: Point, ua: Point, ub: Point) -> Point {
    [clamp_scalar(v[0], ua[0], ub[0]), clamp_scalar(v[1], ua[1], ub[1])]
}

/// A field whose restriction to an element is piecewise polynomial, with
/// pieces separated by the zero lines it reports.
pub trait KinkedSource: FieldSource {
    fn kinks(&self, _elem: usize, _out: &mut Vec<Affine>) {}
}

impl KinkedSource for CrField {}
impl KinkedSource for BrokenField {}
impl KinkedSource for Analytic {}

/// `x ↦ Π_[ua,ub](-p_h(x)/α)`.
#[derive(Clone)]
pub struct ClampedField {
    pub adjoint: CrField,
    pub alpha: f64,
    pub ua: Point,
    pub ub: Point,
}

impl ClampedField {
    pub fn new(adjoint: CrField, alpha: f64, ua: Point, ub: Point) -> Self {
        Self { adjoint, alpha, ua, ub }
    }

    pub fn mesh(&self) -> &Mesh {
        self.adjoint.mesh()
    }

    /// Vertex values of `-p_h/α` on element `k`, per component.
    pub fn unclamped(&self, k: usize) -> [Affine; 2] {
        let v = self.adjoint.vertex_values(k);
        let s = -1.0 / self.alpha;
        [[s * v[0][0], s * v[1][0], s * v[2][0]], [s * v[0][1], s * v[1][1], s * v[2][1]]]
    }

    #[inline]
    pub fn eval_local(&self, k: usize, b: &Bary) -> Point {
        let p = self.adjoint.eval_local(k, b);
        clamp([-p[0] / self.alpha, -p[1] / self.alpha], self.ua, self.ub)
    }
}

impl FieldSource for ClampedField {
    fn value(&self, elem: usize, _x: Point, bary: &Bary) -> Point {
        self.eval_local(elem, bary)
    }
}

impl KinkedSource for ClampedField {
    fn kinks(&self, k: usize, out: &mut Vec<Affine>) {
        clamp_kinks(self.adjoint.vertex_values(k), self.alpha, self.ua, self.ub, out);
    }
}

/// Lines where `-v/α` meets a bound, for vertex values `v` of an affine field.
fn clamp_kinks(v: [Point; 3], alpha: f64, ua: Point, ub: Point, out: &mut Vec<Affine>) {
    for c in 0..2 {
        for bound in [ua[c], ub[c]] {
            let l = [-v[0][c] / alpha - bound, -v[1][c] / alpha - bound, -v[2][c] / alpha - bound];
            if crosses(&l) {
                out.push(l);
            }
        }
    }
}

/// `Π_[ua,ub](-p/α)` for a broken-affine `p`, such as a prolonged adjoint.
#[derive(Clone)]
pub struct BrokenClamp {
    pub adjoint: BrokenField,
    pub alpha: f64,
    pub ua: Point,
    pub ub: Point,
}

impl BrokenClamp {
    /// The control of `field` carried to a refinement.
    pub fn prolonged(field: &ClampedField, fine: &Arc<Mesh>, rel: &crate::mesh::RefinementRelation) -> Result<Self> {
        let adjoint = crate::femspace::prolong(&field.adjoint, fine, rel)?;
        Ok(Self {
            adjoint,
            alpha: field.alpha,
            ua: field.ua,
            ub: field.ub,
        })
    }
}

impl FieldSource for BrokenClamp {
    fn value(&self, elem: usize, _x: Point, bary: &Bary) -> Point {
        let p = self.adjoint.eval_local(elem, bary);
        clamp([-p[0] / self.alpha, -p[1] / self.alpha], self.ua, self.ub)
    }
}

impl KinkedSource for BrokenClamp {
    fn kinks(&self, k: usize, out: &mut Vec<Affine>) {
        clamp_kinks(self.adjoint.vertex_values[k], self.alpha, self.ua, self.ub, out);
    }
}

/// Convex combination `Σ_j w_j Π(-p_j/α)`.
#[derive(Clone)]
pub struct ControlBlend {
    pub terms: Vec<(f64, ClampedField)>,
}

/// Terms whose weight falls below this are dropped and the rest rescaled.
const BLEND_DROP: f64 = 1e-14;

impl ControlBlend {
    pub fn single(c: ClampedField) -> Self {
        Self { terms: vec![(1.0, c)] }
    }

    /// `(1 - ω) self + ω next`.
    pub fn damp(&mut self, omega: f64, next: ClampedField) {
        for t in self.terms.iter_mut() {
            t.0 *= 1.0 - omega;
        }
        self.terms.retain(|t| t.0 >= BLEND_DROP);
        self.terms.push((omega, next));
        let s: f64 = self.terms.iter().map(|t| t.0).sum();
        for t in self.terms.iter_mut() {
            t.0 /= s;
        }
    }
}

impl FieldSource for ControlBlend {
    fn value(&self, elem: usize, _x: Point, bary: &Bary) -> Point {
        let mut out = [0.0; 2];
        for (w, t) in &self.terms {
            let v = t.eval_local(elem, bary);
            out[0] += w * v[0];
            out[1] += w * v[1];
        }
        out
    }
}

impl KinkedSource for ControlBlend {
    fn kinks(&self, k: usize, out: &mut Vec<Affine>) {
        for (_, t) in &self.terms {
            t.kinks(k, out);
        }
    }
}

/// `Σ_i c_i g_i` over kinked sources; kinks are the union of the parts'.
pub struct LinearCombination<'a> {
    pub parts: Vec<(f64, &'a dyn KinkedSource)>,
}

impl FieldSource for LinearCombination<'_> {
    fn value(&self, elem: usize, x: Point, bary: &Bary) -> Point {
        let mut out = [0.0; 2];
        for (c, g) in &self.parts {
            let v = g.value(elem, x, bary);
            out[0] += c * v[0];
            out[1] += c * v[1];
        }
        out
    }
}

impl KinkedSource for LinearCombination<'_> {
    fn kinks(&self, k: usize, out: &mut Vec<Affine>) {
        for (_, g) in &self.parts {
            g.kinks(k, out);
        }
    }
}

/// Visit quadrature points of element `k`, cut along the kinks of `fields`.
pub fn for_each_cut_point<F: FnMut(Bary, f64)>(k: usize, depth: u8, fields: &[&dyn KinkedSource], f: F) {
    let mut lines = Vec::new();
    for s in fields {
        s.kinks(k, &mut lines);
    }
    for_each_point(depth, &lines, f);
}

/// `∫_Ω g · φ_i` for every free DOF, cutting along the kinks of `g`.
pub fn integrate_kinked(space: &CrSpace, g: &dyn KinkedSource, depth: u8) -> Vec<f64> {
    let mesh = &space.mesh;
    let mut out = vec![0.0; space.num_free()];
    for k in 0..mesh.num_elements() {
        let area = mesh.area(k);
        let mut acc = [[0.0; 2]; 3];
        for_each_cut_point(k, depth, &[g], |b, w| {
            let v = g.value(k, mesh.point(k, &b), &b);
            for i in 0..3 {
                let phi = area * w * (1.0 - 2.0 * b[i]);
                acc[i][0] += phi * v[0];
                acc[i][1] += phi * v[1];
            }
        });
        let e = mesh.triangles[k].edges;
        for i in 0..3 {
            for c in 0..2 {
                let d = space.free_index(CrSpace::dof(e[i], c));
                if d != NONE {
                    out[d] += acc[i][c];
                }
            }
        }
    }
    out
}

/// `(Π(-p_h/α), φ_i)` for every free DOF of `space`; exact.
pub fn integrate_clamped(field: &ClampedField, space: &CrSpace) -> Vec<f64> {
    integrate_kinked(space, field, 0)
}

/// `‖a - b‖_{L²}` with both fields evaluated on the same mesh.
pub fn l2_distance(mesh: &Mesh, a: &dyn KinkedSource, b: &dyn KinkedSource, depth: u8) -> f64 {
    let mut s = 0.0;
    for k in 0..mesh.num_elements() {
        let area = mesh.area(k);
        for_each_cut_point(k, depth, &[a, b], |bary, w| {
            let x = mesh.point(k, &bary);
            let (u, v) = (a.value(k, x, &bary), b.value(k, x, &bary));
            let d = [u[0] - v[0], u[1] - v[1]];
            s += area * w * (d[0] * d[0] + d[1] * d[1]);
        });
    }
    sqrt(s)
}

pub fn l2_norm(mesh: &Mesh, a: &dyn KinkedSource, depth: u8) -> f64 {
    let zero = Analytic(Arc::new(|_x: Point| [0.0, 0.0]));
    l2_distance(mesh, a, &zero, depth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Damped fixed point, then the active-set method if it stalls.
    Auto,
    FixedPointOnly,
    ActiveSetOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktOptions {
    /// Target for the L² VI residual.
    pub tol: f64,
    pub max_iter: usize,
    pub strategy: Strategy,
    /// Subdivision depth for quadrature of `f` and `y_d`.
    pub data_depth: u8,
}

impl Default for KktOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            strategy: Strategy::Auto,
            data_depth: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    FixedPoint,
    ActiveSet,
}

#[derive(Clone)]
pub struct KktSolution {
    pub state: CrField,
    pub pressure: P0Field,
    pub adjoint: CrField,
    pub adjoint_pressure: P0Field,
    pub control: ClampedField,
    /// VI residual per outer iteration.
    pub history: Vec<f64>,
    /// Objective per fixed-point iteration.
    pub objective_history: Vec<f64>,
    pub solver: SolverKind,
}

impl KktSolution {
    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.state.space.mesh
    }
}

/// Operators and data loads of the optimality system on one mesh.
pub struct KktSystem {
    pub stokes: StokesSolver,
    pub data: ProblemData,
    /// `(f, φ_i)`.
    pub f_load: Vec<f64>,
    /// `(y_d, φ_i)`.
    pub yd_load: Vec<f64>,
    pub opts: KktOptions,
}

impl KktSystem {
    pub fn new(data: &ProblemData, mesh: Arc<Mesh>, opts: KktOptions) -> Result<Self> {
        data.validate()?;
        if !(opts.tol > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        let stokes = StokesSolver::new(mesh)?;
        let f_load = assemble_load_depth(&stokes.velocity, &Analytic(data.f.clone()), opts.data_depth);
        let yd_load = assemble_load_depth(&stokes.velocity, &Analytic(data.y_d.clone()), opts.data_depth);
        Ok(Self {
            stokes,
            data: data.clone(),
            f_load,
            yd_load,
            opts,
        })
    }

    pub fn space(&self) -> &CrSpace {
        &self.stokes.velocity
    }

    fn clamped(&self, p: &CrField) -> ClampedField {
        ClampedField::new(p.clone(), self.data.alpha, self.data.ua, self.data.ub)
    }

    /// State for a control load vector `(u, φ_i)`.
    pub fn state_for_load(&self, u_load: &[f64]) -> Result<(CrField, P0Field)> {
        let rhs: Vec<f64> = self.f_load.iter().zip(u_load).map(|(a, b)| a + b).collect();
        let s = self.stokes.solve_load(&rhs, PressureSign::Minus)?;
        Ok((s.velocity, s.pressure))
    }

    /// Adjoint for a state: `a_h(p, q) + b_h(q, s) = (y - y_d, q)`.
    pub fn adjoint_for_state(&self, y: &CrField) -> Result<(CrField, P0Field)> {
        let my = self.stokes.mass.apply(&y.to_free());
        let rhs: Vec<f64> = my.iter().zip(&self.yd_load).map(|(a, b)| a - b).collect();
        let s = self.stokes.solve_load(&rhs, PressureSign::Plus)?;
        Ok((s.velocity, s.pressure))
    }

    /// `J(y, u) = ½‖y - y_d‖² + (α/2)‖u‖²`.
    pub fn objective(&self, y: &CrField, u: &dyn KinkedSource) -> f64 {
        let mesh = &self.stokes.velocity.mesh;
        let yd = Analytic(self.data.y_d.clone());
        let a = l2_distance(mesh, y, &yd, self.opts.data_depth);
        let b = l2_norm(mesh, u, 0);
        0.5 * a * a + 0.5 * self.data.alpha * b * b
    }

    pub fn solve(&self) -> Result<KktSolution> {
        let mut history = Vec::new();
        if self.opts.strategy != Strategy::ActiveSetOnly {
            match self.fixed_point(&mut history) {
                Ok(sol) => return Ok(sol),
                Err(e) if self.opts.strategy == Strategy::FixedPointOnly => return Err(e),
                Err(_) => {}
            }
        }
        let start = self.space().zero();
        self.active_set(start, history)
    }

    /// Re-solve with `u = Π(-p/α)` and report the VI residual of the result.
    fn finish(&self, p: &CrField, history: Vec<f64>, objective_history: Vec<f64>, solver: SolverKind) -> Result<(KktSolution, f64)> {
        let control = self.clamped(p);
        let (state, pressure) = self.state_for_load(&integrate_clamped(&control, self.space()))?;
        let (adjoint, adjoint_pressure) = self.adjoint_for_state(&state)?;
        let sol = KktSolution {
            state,
            pressure,
            adjoint,
            adjoint_pressure,
            control,
            history,
            objective_history,
            solver,
        };
        let r = vi_residual(&sol);
        Ok((sol, r))
    }

    fn fixed_point(&self, history: &mut Vec<f64>) -> Result<KktSolution> {
        let mesh = self.stokes.velocity.mesh.clone();
        let mut u = ControlBlend::single(self.clamped(&self.space().zero()));
        let mut omega = 1.0;
        const OMEGA_FLOOR: f64 = 1.0 / 16.0;
        let mut objective_history = Vec::new();
        for _ in 0..self.opts.max_iter {
            let (y, _) = self.state_for_load(&integrate_kinked(self.space(), &u, 0))?;
            let (p, _) = self.adjoint_for_state(&y)?;
            objective_history.push(self.objective(&y, &u));
            let cand = self.clamped(&p);
            let res = l2_distance(&mesh, &u, &cand, 0);
            if let Some(&last) = history.last() {
                if res > last {
                    omega = f64::max(0.5 * omega, OMEGA_FLOOR);
                }
            }
            history.push(res);
            if res <= self.opts.tol {
                let (sol, r) = self.finish(&p, history.clone(), objective_history.clone(), SolverKind::FixedPoint)?;
                if r <= self.opts.tol {
                    return Ok(sol);
                }
            }
            u.damp(omega, cand);
        }
        Err(Error::NotConverged {
            history: history.clone(),
            last: history.last().copied().unwrap_or(f64::NAN),
        })
    }

    /// Primal-dual active-set iteration on the adjoint.
    ///
    /// With the active and inactive regions of `-p_k/α` frozen, the control
    /// is `u = u_act - (1/α) 1_I p`, and the optimality system reduces to the
    /// linear equation `p + (1/α) S M S (M_I p) = S(M S(F + U_act) - Y_d)`
    /// in the adjoint, solved by GMRES. `S` is the (symmetric) Stokes solve.
    fn active_set(&self, mut p: CrField, mut history: Vec<f64>) -> Result<KktSolution> {
        let space = self.space().clone();
        let alpha = self.data.alpha;
        let mut seen: Vec<Vec<u8>> = Vec::new();
        for _ in 0..self.opts.max_iter.max(1) {
            let regions = RegionMass::new(&self.clamped(&p));
            let signature = regions.signature.clone();
            let s = |load: &[f64]| -> Result<Vec<f64>> { Ok(self.stokes.solve_raw(load, PressureSign::Minus)?.0) };
            let y0 = s(&self.f_load.iter().zip(&regions.active_load).map(|(a, b)| a + b).collect::<Vec<_>>())?;
            let my0 = self.stokes.mass.apply(&y0);
            let rhs = s(&my0.iter().zip(&self.yd_load).map(|(a, b)| a - b).collect::<Vec<_>>())?;
            let mut failure = None;
            let apply = |x: &[f64]| -> Vec<f64> {
                let field = CrField::from_free(&space, x);
                let mi = regions.apply(&field);
                let t = s(&mi).and_then(|v| s(&self.stokes.mass.apply(&v)));
                match t {
                    Ok(t) => x.iter().zip(&t).map(|(a, b)| a + b / alpha).collect(),
                    Err(e) => {
                        failure = Some(e);
                        x.to_vec()
                    }
                }
            };
            let mut x = p.to_free();
            let rep = gmres(apply, &rhs, &mut x, 1e-13, 60, 600);
            if let Some(e) = failure {
                return Err(e);
            }
            if rep.relative_residual > 1e-9 {
                return Err(Error::Stalled {
                    residual: rep.relative_residual,
                });
            }
            p = CrField::from_free(&space, &x);
            let (sol, r) = self.finish(&p, history.clone(), Vec::new(), SolverKind::ActiveSet)?;
            history.push(r);
            if r <= self.opts.tol {
                let mut sol = sol;
                sol.history = history;
                return Ok(sol);
            }
            if seen.contains(&signature) {
                break;
            }
            seen.push(signature);
        }
        Err(Error::NotConverged {
            last: history.last().copied().unwrap_or(f64::NAN),
            history,
        })
    }
}

/// Element-local mass matrices restricted to the inactive region of a
/// clamped field, plus the load of the active bounds.
pub struct RegionMass {
    space: CrSpace,
    /// `[K][c][i][j] = ∫_{K ∩ I_c} φ_i φ_j`.
    local: Vec<[[[f64; 3]; 3]; 2]>,
    /// `(u_act, φ_i)` in free numbering.
    pub active_load: Vec<f64>,
    /// Region code of each cell, for detecting repeated active sets.
    pub signature: Vec<u8>,
}

impl RegionMass {
    pub fn new(field: &ClampedField) -> Self {
        let space = field.adjoint.space.clone();
        let mesh = &space.mesh;
        let mut local = Vec::with_capacity(mesh.num_elements());
        let mut active_load = vec![0.0; space.num_free()];
        let mut signature = Vec::new();
        let mut lines = Vec::new();
        for k in 0..mesh.num_elements() {
            let area = mesh.area(k);
            let u = field.unclamped(k);
            lines.clear();
            field.kinks(k, &mut lines);
            let tri = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            let cells = if lines.is_empty() {
                vec![tri.to_vec()]
            } else {
                partition(tri, &lines)
            };
            let mut m = [[[0.0; 3]; 3]; 2];
            let mut act = [[0.0; 2]; 3];
            for cell in &cells {
                let n = cell.len() as f64;
                let centre: Bary = [
                    cell.iter().map(|p| p[0]).sum::<f64>() / n,
                    cell.iter().map(|p| p[1]).sum::<f64>() / n,
                    cell.iter().map(|p| p[2]).sum::<f64>() / n,
                ];
                // 0 inactive, 1 lower bound, 2 upper bound
                let mut code = [0u8; 2];
                for c in 0..2 {
                    let v = eval_affine(&u[c], &centre);
                    code[c] = if v <= field.ua[c] {
                        1
                    } else if v >= field.ub[c] {
                        2
                    } else {
                        0
                    };
                }
                signature.push(code[0] * 3 + code[1]);
                crate::quadrature::for_each_point_in_cell(cell, |b, w| {
                    let phi = [1.0 - 2.0 * b[0], 1.0 - 2.0 * b[1], 1.0 - 2.0 * b[2]];
                    for c in 0..2 {
                        match code[c] {
                            0 => {
                                for i in 0..3 {
                                    for j in 0..3 {
                                        m[c][i][j] += area * w * phi[i] * phi[j];
                                    }
                                }
                            }
                            code => {
                                let bound = if code == 1 { field.ua[c] } else { field.ub[c] };
                                for i in 0..3 {
                                    act[i][c] += area * w * bound * phi[i];
                                }
                            }
                        }
                    }
                });
            }
            let e = mesh.triangles[k].edges;
            for i in 0..3 {
                for c in 0..2 {
                    let d = space.free_index(CrSpace::dof(e[i], c));
                    if d != NONE {
                        active_load[d] += act[i][c];
                    }
                }
            }
            local.push(m);
        }
        Self {
            space,
            local,
            active_load,
            signature,
        }
    }

    /// `(1_I p, φ_i)` in free numbering.
    pub fn apply(&self, p: &CrField) -> Vec<f64> {
        let mesh = &self.space.mesh;
        let mut out = vec![0.0; self.space.num_free()];
        for k in 0..mesh.num_elements() {
            let v = p.local(k);
            let e = mesh.triangles[k].edges;
            for c in 0..2 {
                for i in 0..3 {
                    let d = self.space.free_index(CrSpace::dof(e[i], c));
                    if d == NONE {
                        continue;
                    }
                    out[d] += (0..3).map(|j| self.local[k][c][i][j] * v[j][c]).sum::<f64>();
                }
            }
        }
        out
    }
}

/// Solve the discrete optimality system on `mesh`.
pub fn solve_kkt(data: &ProblemData, mesh: Arc<Mesh>, opts: KktOptions) -> Result<KktSolution> {
    KktSystem::new(data, mesh, opts)?.solve()
}

/// `‖u_h - Π(-p_h/α)‖_{L²}`, exact.
pub fn vi_residual(sol: &KktSolution) -> f64 {
    let c = &sol.control;
    let target = ClampedField::new(sol.adjoint.clone(), c.alpha, c.ua, c.ub);
    l2_distance(sol.mesh(), c, &target, 0)
}

/// `max |α u + p|` over quadrature points where `u` is strictly inside the box.
pub fn complementarity_defect(sol: &KktSolution) -> f64 {
    let mesh = sol.mesh();
    let c = &sol.control;
    let mut worst: f64 = 0.0;
    for k in 0..mesh.num_elements() {
        for_each_cut_point(k, 0, &[c], |b, _| {
            let u = c.eval_local(k, &b);
            let p = sol.adjoint.eval_local(k, &b);
            for d in 0..2 {
                if u[d] > c.ua[d] && u[d] < c.ub[d] {
                    worst = worst.max((c.alpha * u[d] + p[d]).abs());
                }
            }
        });
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_mass;
    use crate::femspace::interpolate;
    use crate::mesh::{make_mesh, DomainSpec};

    fn mesh(n: usize) -> Arc<Mesh> {
        Arc::new(make_mesh(&DomainSpec::unit_square(n)).unwrap())
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp([2.5, -3.0], [-1.0, -1.0], [1.0, 1.0]), [1.0, -1.0]);
        assert_eq!(clamp([0.5, 0.5], [0.0, 0.0], [1.0, 1.0]), [0.5, 0.5]);
        assert_eq!(clamp([-1.0, 1.0], [-1.0, -1.0], [1.0, 1.0]), [-1.0, 1.0]);
    }

    #[test]
    fn clamped_integration_limits() {
        let m = mesh(3);
        let space = CrSpace::new(m.clone(), false);
        let p = interpolate(&space, &|x: Point| [x[0] - 0.3, x[1] * x[1] - 0.6]).unwrap();
        // inactive everywhere: mass applied to -p/α
        let alpha = 1e6;
        let f = ClampedField::new(p.clone(), alpha, [-1.0; 2], [1.0; 2]);
        let got = integrate_clamped(&f, &space);
        let want: Vec<f64> = assemble_mass(&space).apply(&p.to_free()).iter().map(|v| -v / alpha).collect();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12 * 1e-6 + 1e-18);
        }
        // active everywhere: load of the constant bound
        let pos = interpolate(&space, &|x: Point| [1.0 + x[0], 2.0 + x[1]]).unwrap();
        let f = ClampedField::new(pos, 1e-6, [-0.25, -0.5], [1.0; 2]);
        let got = integrate_clamped(&f, &space);
        let want = crate::assembly::assemble_load(&space, &|_x: Point| [-0.25, -0.5]);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn blend_damping_keeps_weights_convex() {
        let m = mesh(1);
        let space = CrSpace::new(m, false);
        let c = ClampedField::new(space.zero(), 1.0, [-1.0; 2], [1.0; 2]);
        let mut b = ControlBlend::single(c.clone());
        for _ in 0..100 {
            b.damp(0.5, c.clone());
        }
        let s: f64 = b.terms.iter().map(|t| t.0).sum();
        assert!((s - 1.0).abs() < 1e-14);
        assert!(b.terms.len() < 60);
    }

    fn data(f: fn(Point) -> Point, yd: fn(Point) -> Point, alpha: f64, bound: f64) -> ProblemData {
        ProblemData {
            f: Arc::new(f),
            y_d: Arc::new(yd),
            alpha,
            ua: [-bound; 2],
            ub: [bound; 2],
        }
    }

    /// Dense Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, piv);
            b.swap(k, piv);
            for i in k + 1..n {
                let l = a[i][k] / a[k][k];
                if l != 0.0 {
                    for j in k..n {
                        a[i][j] -= l * a[k][j];
                    }
                    b[i] -= l * b[k];
                }
            }
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * b[j]).sum();
            b[i] = (b[i] - s) / a[i][i];
        }
        b
    }

    #[test]
    fn wide_bounds_match_unconstrained_oracle() {
        let m = mesh(4);
        let d = data(|x| [libm::sin(4.0 * x[1]), x[0] * x[0]], |x| [x[1], -x[0] * x[1]], 0.01, 1e6);
        let sys = KktSystem::new(
            &d,
            m.clone(),
            KktOptions {
                data_depth: 0,
                ..Default::default()
            },
        )
        .unwrap();
        let sol = sys.solve().unwrap();
        assert!(vi_residual(&sol) <= 1e-10);
        // unknowns [y, r, λ1, p, s, λ2]
        let (a, b, mm) = (sys.stokes.a.to_dense(), sys.stokes.b.to_dense(), sys.stokes.mass.to_dense());
        let (nv, np) = (a.len(), b.len());
        let n = 2 * (nv + np + 1);
        let (oy, or, ol, op, os, ol2) = (0, nv, nv + np, nv + np + 1, 2 * nv + np + 1, n - 1);
        let mut k = vec![vec![0.0; n]; n];
        let mut rhs = vec![0.0; n];
        for i in 0..nv {
            for j in 0..nv {
                k[oy + i][oy + j] = a[i][j];
                k[oy + i][op + j] = mm[i][j] / d.alpha;
                k[op + i][op + j] = a[i][j];
                k[op + i][oy + j] = -mm[i][j];
            }
            for t in 0..np {
                k[oy + i][or + t] = -b[t][i];
                k[op + i][os + t] = b[t][i];
            }
            rhs[oy + i] = sys.f_load[i];
            rhs[op + i] = -sys.yd_load[i];
        }
        for t in 0..np {
            for j in 0..nv {
                k[or + t][oy + j] = b[t][j];
                k[os + t][op + j] = b[t][j];
            }
            k[or + t][ol] = m.area(t);
            k[ol][or + t] = m.area(t);
            k[os + t][ol2] = m.area(t);
            k[ol2][os + t] = m.area(t);
        }
        let x = dense_solve(k, rhs);
        let y = sol.state.to_free();
        let p = sol.adjoint.to_free();
        let scale = y.iter().chain(&p).fold(0.0f64, |s, v| s.max(v.abs()));
        for i in 0..nv {
            assert!((x[oy + i] - y[i]).abs() < 1e-8 * scale);
            assert!((x[op + i] - p[i]).abs() < 1e-8 * scale);
        }
    }

    #[test]
    fn strategies_agree_with_active_bounds() {
        let m = mesh(6);
        let d = data(|x| [200.0 * (x[1] - 0.5), -200.0 * (x[0] - 0.5)], |_| [0.0, 0.0], 0.01, 0.3);
        let fp = solve_kkt(
            &d,
            m.clone(),
            KktOptions {
                strategy: Strategy::FixedPointOnly,
                ..Default::default()
            },
        )
        .unwrap();
        let pd = solve_kkt(
            &d,
            m.clone(),
            KktOptions {
                strategy: Strategy::ActiveSetOnly,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(fp.solver, SolverKind::FixedPoint);
        assert_eq!(pd.solver, SolverKind::ActiveSet);
        assert!(vi_residual(&fp) <= 1e-10 && vi_residual(&pd) <= 1e-10);
        let (_, diff) = crate::femspace::cr_norms(&fp.state, Some(&pd.state)).unwrap();
        let (_, size) = crate::femspace::cr_norms(&fp.state, None).unwrap();
        assert!(diff <= 1e-8 * size, "{diff} {size}");
        // the bounds are active somewhere and inactive somewhere
        let u = &fp.control;
        let mut hit = [false; 2];
        for k in 0..m.num_elements() {
            let v = u.eval_local(k, &[1.0 / 3.0; 3]);
            hit[0] |= v[0] == 0.3 || v[0] == -0.3;
            hit[1] |= v[0].abs() < 0.3;
        }
        assert!(hit[0] && hit[1]);
        assert!(complementarity_defect(&fp) <= 1e-9);
    }

    #[test]
    fn zero_data_converges_immediately() {
        let d = data(|_| [0.0, 0.0], |_| [0.0, 0.0], 0.01, 1.0);
        let sol = solve_kkt(&d, mesh(2), KktOptions::default()).unwrap();
        assert_eq!(sol.history.len(), 1);
        assert!(sol.state.values.iter().all(|v| v == &[0.0, 0.0]));
    }

    #[test]
    fn residual_is_scale_invariant() {
        let m = mesh(3);
        let space = CrSpace::new(m.clone(), true);
        let p = interpolate(&space, &|x: Point| [x[0] * (1.0 - x[0]), -x[1]]).unwrap();
        let u = ClampedField::new(p.clone(), 0.5, [-0.1; 2], [0.1; 2]);
        let half = ClampedField::new(p.scaled(2.0), 1.0, [-0.1; 2], [0.1; 2]);
        let a = l2_distance(&m, &u, &ClampedField::new(p.clone(), 0.1, [-0.1; 2], [0.1; 2]), 0);
        let b = l2_distance(&m, &half, &ClampedField::new(p.scaled(2.0), 0.2, [-0.1; 2], [0.1; 2]), 0);
        assert!((a - b).abs() < 1e-14);
    }
}
