//! Discrete Stokes problem `a_h(y, v) - b_h(v, r) = (g, v)`, `b_h(y, q) = 0`,
//! with `Σ_K |K| r_K = 0` imposed by one Lagrange multiplier.
//!
//! The exact system is
//!
//! ```text
//! K = [ A  -Bᵀ  0 ]
//!     [ -B  0   a ]
//!     [ 0   aᵀ  0 ]
//! ```
//!
//! with `a` the element areas. It is solved by iterative refinement with the
//! preconditioner obtained from the quasi-definite matrix
//! `[[A, -Bᵀ], [-B, -εI]]` (factored once by sparse LDLᵀ) bordered with the
//! multiplier column.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::assembly::{assemble_divergence, assemble_load, assemble_mass, assemble_stiffness};
use crate::dense::{cholesky_solve, nullspace};
use crate::femspace::{CrField, CrSpace, FieldSource, P0Field, P0Space};
use crate::math::{dot_slice, norm_slice};
use crate::mesh::Mesh;
use crate::sparse::{adjacency, nested_dissection, Ldl, SparseOperator};
use crate::{Error, Point, Result};

/// Required relative algebraic residual of a solve.
pub const SOLVE_TOLERANCE: f64 = 1e-11;
const REFINE_TARGET: f64 = 1e-14;
const MAX_REFINE: usize = 30;
const REGULARIZATION: f64 = 1e-6;

/// Sign of the pressure coupling in the momentum equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PressureSign {
    /// `a_h(y, v) - b_h(v, r)`: the state equation.
    Minus,
    /// `a_h(p, q) + b_h(q, s)`: the adjoint equation.
    Plus,
}

#[derive(Clone)]
pub struct StokesSolution {
    pub velocity: CrField,
    pub pressure: P0Field,
    /// `‖A y ∓ Bᵀ r - g‖`.
    pub momentum_residual: f64,
    /// `max_K |∫_K div_h y|`.
    pub mass_residual: f64,
    /// Relative residual of the full bordered system.
    pub relative_residual: f64,
}

/// Factored Stokes operator on one mesh, reusable for many loads.
pub struct StokesSolver {
    pub velocity: CrSpace,
    pub pressure: P0Space,
    pub a: SparseOperator,
    pub b: SparseOperator,
    pub mass: SparseOperator,
    areas: Vec<f64>,
    eps: f64,
    factor: Ldl,
    /// `Kε⁻¹ [0; a]`.
    w: Vec<f64>,
}

impl StokesSolver {
    pub fn new(mesh: Arc<Mesh>) -> Result<Self> {
        let velocity = CrSpace::new(mesh.clone(), true);
        let pressure = P0Space::new(mesh.clone(), true);
        let a = assemble_stiffness(&velocity);
        let b = assemble_divergence(&velocity, &pressure)?;
        let mass = assemble_mass(&velocity);
        let (nv, np) = (velocity.num_free(), mesh.num_elements());
        let areas: Vec<f64> = (0..np).map(|k| mesh.area(k)).collect();
        let min_area = areas.iter().cloned().fold(f64::INFINITY, f64::min);
        let eps = REGULARIZATION * min_area;

        let mut k = SparseOperator::new(nv + np, nv + np);
        k.entries.reserve(a.nnz() + 2 * b.nnz() + np);
        k.entries.extend_from_slice(&a.entries);
        for &(r, c, v) in &b.entries {
            k.push(c, nv + r, -v);
            k.push(nv + r, c, -v);
        }
        for i in 0..np {
            k.push(nv + i, nv + i, -eps);
        }
        k.finalize();

        let mut coords: Vec<Point> = vec![[0.0; 2]; nv + np];
        for e in 0..mesh.num_edges() {
            for c in 0..2 {
                let i = velocity.free_index(CrSpace::dof(e, c));
                if i != crate::mesh::NONE {
                    coords[i] = mesh.edge_midpoint(e);
                }
            }
        }
        for t in 0..np {
            coords[nv + t] = mesh.point(t, &[1.0 / 3.0; 3]);
        }
        let perm = nested_dissection(&adjacency(&k), &coords);
        let factor = Ldl::factor(&k, perm)?;
        let mut c = vec![0.0; nv + np];
        c[nv..].copy_from_slice(&areas);
        let w = factor.solve(&c);
        Ok(Self {
            velocity,
            pressure,
            a,
            b,
            mass,
            areas,
            eps,
            factor,
            w,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.velocity.mesh
    }

    pub fn num_velocity(&self) -> usize {
        self.velocity.num_free()
    }

    /// Apply the exact bordered operator (state sign).
    fn apply_exact(&self, x: &[f64]) -> Vec<f64> {
        let (nv, np) = (self.num_velocity(), self.areas.len());
        let (y, r, lam) = (&x[..nv], &x[nv..nv + np], x[nv + np]);
        let mut out = vec![0.0; nv + np + 1];
        let ay = self.a.apply(y);
        let btr = self.b.apply_transpose(r);
        let by = self.b.apply(y);
        for i in 0..nv {
            out[i] = ay[i] - btr[i];
        }
        for t in 0..np {
            out[nv + t] = -by[t] + self.areas[t] * lam;
        }
        out[nv + np] = dot_slice(&self.areas, r);
        out
    }

    fn apply_preconditioner(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len() - 1;
        let mut x0 = self.factor.solve(&rhs[..n]);
        let (nv, cw) = (self.num_velocity(), dot_slice(&self.areas, &self.w[self.num_velocity()..]));
        let cx = dot_slice(&self.areas, &x0[nv..]);
        let lam = (cx - rhs[n]) / cw;
        for (xi, wi) in x0.iter_mut().zip(&self.w) {
            *xi -= lam * wi;
        }
        x0.push(lam);
        x0
    }

    /// Solve for a velocity load vector in free-DOF numbering. Returns the
    /// raw unknowns `(velocity, pressure, relative residual)`.
    pub fn solve_raw(&self, load: &[f64], sign: PressureSign) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let (nv, np) = (self.num_velocity(), self.areas.len());
        let mut rhs = vec![0.0; nv + np + 1];
        rhs[..nv].copy_from_slice(load);
        let bnorm = norm_slice(&rhs);
        if bnorm == 0.0 {
            return Ok((vec![0.0; nv], vec![0.0; np], 0.0));
        }
        let mut x = self.apply_preconditioner(&rhs);
        let mut prev = f64::INFINITY;
        let mut rel;
        let mut it = 0;
        loop {
            let kx = self.apply_exact(&x);
            let r: Vec<f64> = rhs.iter().zip(&kx).map(|(p, q)| p - q).collect();
            rel = norm_slice(&r) / bnorm;
            // stop at the target or once refinement stagnates
            if rel <= REFINE_TARGET || it == MAX_REFINE || rel > 0.5 * prev {
                break;
            }
            prev = rel;
            it += 1;
            let d = self.apply_preconditioner(&r);
            for (xi, di) in x.iter_mut().zip(&d) {
                *xi += di;
            }
        }
        if !(rel <= SOLVE_TOLERANCE) {
            return Err(Error::Stalled { residual: rel });
        }
        let y = x[..nv].to_vec();
        let mut p = x[nv..nv + np].to_vec();
        if sign == PressureSign::Plus {
            p.iter_mut().for_each(|v| *v = -*v);
        }
        Ok((y, p, rel))
    }

    pub fn solve_load(&self, load: &[f64], sign: PressureSign) -> Result<StokesSolution> {
        let (y, p, rel) = self.solve_raw(load, sign)?;
        let velocity = CrField::from_free(&self.velocity, &y);
        let pressure = P0Field {
            space: self.pressure.clone(),
            values: p,
        };
        let ay = self.a.apply(&y);
        let btr = self.b.apply_transpose(&pressure.values);
        let s = if sign == PressureSign::Minus { -1.0 } else { 1.0 };
        let mom: Vec<f64> = (0..ay.len()).map(|i| ay[i] + s * btr[i] - load[i]).collect();
        let mass_residual = self.b.apply(&y).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(StokesSolution {
            velocity,
            pressure,
            momentum_residual: norm_slice(&mom),
            mass_residual,
            relative_residual: rel,
        })
    }

    pub fn solve(&self, g: &dyn FieldSource, sign: PressureSign) -> Result<StokesSolution> {
        self.solve_load(&assemble_load(&self.velocity, g), sign)
    }

    /// Regularization used in the factored preconditioner.
    pub fn regularization(&self) -> f64 {
        self.eps
    }

    /// Nonzeros of the triangular factor.
    pub fn factor_nnz(&self) -> usize {
        self.factor.nnz_l()
    }

    /// Velocity of the reduced problem on `Z_h = ker B` (dense; desk scale).
    pub fn solve_on_kernel(&self, load: &[f64]) -> Result<Vec<f64>> {
        let nv = self.num_velocity();
        let rows = self.b.to_dense();
        let z = nullspace(&rows, nv);
        let az: Vec<Vec<f64>> = z.iter().map(|zj| self.a.apply(zj)).collect();
        let m = z.len();
        let mut red = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..m {
                red[i][j] = dot_slice(&z[i], &az[j]);
            }
        }
        let rhs: Vec<f64> = z.iter().map(|zi| dot_slice(zi, load)).collect();
        let c = cholesky_solve(&red, &rhs)?;
        let mut y = vec![0.0; nv];
        for (cj, zj) in c.iter().zip(&z) {
            for (yi, zi) in y.iter_mut().zip(zj) {
                *yi += cj * zi;
            }
        }
        Ok(y)
    }
}

/// One-shot convenience wrapper.
pub fn solve_stokes(mesh: Arc<Mesh>, g: &dyn FieldSource) -> Result<StokesSolution> {
    StokesSolver::new(mesh)?.solve(g, PressureSign::Minus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::femspace::cr_norms;
    use crate::mesh::{make_mesh, DomainSpec};

    fn solver(n: usize) -> StokesSolver {
        StokesSolver::new(Arc::new(make_mesh(&DomainSpec::unit_square(n)).unwrap())).unwrap()
    }

    #[test]
    fn zero_load_gives_zero() {
        let s = solver(4);
        let sol = s.solve(&|_x: Point| [0.0, 0.0], PressureSign::Minus).unwrap();
        assert!(sol.velocity.values.iter().all(|v| v == &[0.0, 0.0]));
        assert!(sol.pressure.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residuals_incompressibility_and_mean() {
        let s = solver(8);
        let g = |x: Point| [libm::sin(3.0 * x[1]) + x[0], x[0] * x[1] - 0.3];
        let sol = s.solve(&g, PressureSign::Minus).unwrap();
        assert!(sol.relative_residual <= SOLVE_TOLERANCE);
        let (_, e) = cr_norms(&sol.velocity, None).unwrap();
        for k in 0..s.mesh().num_elements() {
            assert!(sol.velocity.divergence(k).abs() <= 1e-10 * e.max(1e-300));
        }
        assert!(sol.pressure.mean().abs() < 1e-10);
        let adj = s.solve(&g, PressureSign::Plus).unwrap();
        for (a, b) in adj.pressure.values.iter().zip(&sol.pressure.values) {
            assert!((a + b).abs() < 1e-10);
        }
    }

    #[test]
    fn kernel_solve_matches_saddle_point() {
        let s = solver(4);
        let g = |x: Point| [x[1] * x[1], -x[0]];
        let load = assemble_load(&s.velocity, &g);
        let (y, _, _) = s.solve_raw(&load, PressureSign::Minus).unwrap();
        let z = s.solve_on_kernel(&load).unwrap();
        let d = y.iter().zip(&z).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(d < 1e-9, "{d}");
    }
}
