//! Assembly of `a_h`, `b_h`, the velocity mass form and load vectors.
//!
//! Velocity operators are indexed by the free DOFs of the space, so
//! Dirichlet rows and columns are eliminated by construction.

use alloc::vec;
use alloc::vec::Vec;

use crate::femspace::{CrSpace, FieldSource, P0Space, VectorFn};
use crate::mesh::NONE;
use crate::quadrature::for_each_point;
use crate::sparse::SparseOperator;
use crate::{Error, Point, Result};

/// Data of the control problem.
#[derive(Clone)]
pub struct ProblemData {
    pub f: VectorFn,
    pub y_d: VectorFn,
    pub alpha: f64,
    pub ua: Point,
    pub ub: Point,
}

impl ProblemData {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter("alpha must be positive".into()));
        }
        if !(self.ua[0] <= self.ub[0] && self.ua[1] <= self.ub[1]) {
            return Err(Error::InvalidParameter("bounds must satisfy ua <= ub".into()));
        }
        Ok(())
    }
}

fn local_dofs(space: &CrSpace, k: usize) -> [[usize; 2]; 3] {
    let e = space.mesh.triangles[k].edges;
    let mut out = [[NONE; 2]; 3];
    for i in 0..3 {
        for c in 0..2 {
            out[i][c] = space.free_index(CrSpace::dof(e[i], c));
        }
    }
    out
}

/// `a_h(φ_i, φ_j) = Σ_K ∫_K ∇φ_i : ∇φ_j`.
pub fn assemble_stiffness(space: &CrSpace) -> SparseOperator {
    let mesh = &space.mesh;
    let n = space.num_free();
    let mut a = SparseOperator::new(n, n);
    a.entries.reserve(18 * mesh.num_elements());
    for k in 0..mesh.num_elements() {
        let g = &mesh.geometry(k);
        let dofs = local_dofs(space, k);
        for i in 0..3 {
            for j in 0..3 {
                let v = 4.0 * g.area * (g.grad_bary[i][0] * g.grad_bary[j][0] + g.grad_bary[i][1] * g.grad_bary[j][1]);
                for c in 0..2 {
                    let (r, s) = (dofs[i][c], dofs[j][c]);
                    if r != NONE && s != NONE {
                        a.push(r, s, v);
                    }
                }
            }
        }
    }
    a.finalize();
    a
}

/// `B[K, i] = ∫_K div φ_i`, so that `b_h(v, q) = qᵀ B v`.
pub fn assemble_divergence(v: &CrSpace, q: &P0Space) -> Result<SparseOperator> {
    if v.mesh.id() != q.mesh.id() {
        return Err(Error::MeshMismatch);
    }
    let mesh = &v.mesh;
    let mut b = SparseOperator::new(mesh.num_elements(), v.num_free());
    for k in 0..mesh.num_elements() {
        let g = &mesh.geometry(k);
        let dofs = local_dofs(v, k);
        for i in 0..3 {
            for c in 0..2 {
                if dofs[i][c] != NONE {
                    b.push(k, dofs[i][c], -2.0 * g.area * g.grad_bary[i][c]);
                }
            }
        }
    }
    b.finalize();
    Ok(b)
}

/// `M_ij = ∫_Ω φ_i · φ_j`; locally `(|K|/3) I`.
pub fn assemble_mass(space: &CrSpace) -> SparseOperator {
    let mesh = &space.mesh;
    let n = space.num_free();
    let mut m = SparseOperator::new(n, n);
    for k in 0..mesh.num_elements() {
        let dofs = local_dofs(space, k);
        for d in dofs.iter() {
            for &r in d {
                if r != NONE {
                    m.push(r, r, mesh.area(k) / 3.0);
                }
            }
        }
    }
    m.finalize();
    m
}

/// `∫_Ω g · φ_i` by the degree-4 rule.
pub fn assemble_load(space: &CrSpace, g: &dyn FieldSource) -> Vec<f64> {
    assemble_load_depth(space, g, 0)
}

/// As [`assemble_load`] with every element subdivided `depth` times.
pub fn assemble_load_depth(space: &CrSpace, g: &dyn FieldSource, depth: u8) -> Vec<f64> {
    let mesh = &space.mesh;
    let mut out = vec![0.0; space.num_free()];
    for k in 0..mesh.num_elements() {
        let dofs = local_dofs(space, k);
        let area = mesh.area(k);
        let mut acc = [[0.0; 2]; 3];
        for_each_point(depth, &[], |b, w| {
            let v = g.value(k, mesh.point(k, &b), &b);
            for i in 0..3 {
                let phi = area * w * (1.0 - 2.0 * b[i]);
                acc[i][0] += phi * v[0];
                acc[i][1] += phi * v[1];
            }
        });
        for i in 0..3 {
            for c in 0..2 {
                if dofs[i][c] != NONE {
                    out[dofs[i][c]] += acc[i][c];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::femspace::{cr_norms, interpolate};
    use crate::mesh::{make_mesh, DomainSpec, DomainTag, Mesh};
    use alloc::sync::Arc;

    fn reference() -> Arc<Mesh> {
        Arc::new(
            Mesh::from_parts(
                vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
                vec![([0, 1, 2], 0, 0, None)],
                DomainTag::Polygon,
            )
            .unwrap(),
        )
    }

    #[test]
    fn reference_stiffness_and_mass() {
        let space = CrSpace::new(reference(), false);
        let a = assemble_stiffness(&space);
        let m = assemble_mass(&space);
        let e = space.mesh.triangles[0].edges;
        let expect = [[4.0, -2.0, -2.0], [-2.0, 2.0, 0.0], [-2.0, 0.0, 2.0]];
        for i in 0..3 {
            for j in 0..3 {
                let (r, s) = (space.free_index(CrSpace::dof(e[i], 0)), space.free_index(CrSpace::dof(e[j], 0)));
                assert!((a.get(r, s) - expect[i][j]).abs() < 1e-14);
                let mass = if i == j { 1.0 / 6.0 } else { 0.0 };
                assert!((m.get(r, s) - mass).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constants_are_in_the_unconstrained_kernel() {
        let space = CrSpace::new(Arc::new(make_mesh(&DomainSpec::unit_square(3)).unwrap()), false);
        let a = assemble_stiffness(&space);
        let r = a.apply(&vec![1.0; space.num_free()]);
        assert!(r.iter().all(|v| v.abs() < 1e-13));
        assert!(a.asymmetry() < 1e-14);
    }

    #[test]
    fn divergence_of_affine_fields() {
        let mesh = Arc::new(make_mesh(&DomainSpec::unit_square(2)).unwrap());
        let (v, q) = (CrSpace::new(mesh.clone(), false), P0Space::new(mesh.clone(), true));
        let b = assemble_divergence(&v, &q).unwrap();
        let rot = interpolate(&v, &|x: Point| [x[1], x[0]]).unwrap();
        assert!(b.apply(&rot.to_free()).iter().all(|t| t.abs() < 1e-14));
        for f in [|x: Point| [x[0], 0.0], |x: Point| [0.0, x[1]]] {
            let d = b.apply(&interpolate(&v, &f).unwrap().to_free());
            for k in 0..mesh.num_elements() {
                assert!((d[k] - mesh.area(k)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn forms_match_norms_and_loads() {
        let mesh = Arc::new(make_mesh(&DomainSpec::unit_square(3)).unwrap());
        let space = CrSpace::new(mesh.clone(), true);
        let v = interpolate(&space, &|x: Point| [x[0] * x[1] * (1.0 - x[0]), x[1] * x[1] * (1.0 - x[1])]).unwrap();
        let (l2, h1) = cr_norms(&v, None).unwrap();
        let x = v.to_free();
        assert!((assemble_stiffness(&space).quadratic_form(&x) - h1 * h1).abs() < 1e-12);
        assert!((assemble_mass(&space).quadratic_form(&x) - l2 * l2).abs() < 1e-12);
        // constant load equals the mass applied to the interpolant
        let all = CrSpace::new(mesh.clone(), false);
        let c = |_x: Point| [2.0, -1.0];
        let load = assemble_load(&all, &c);
        let mv = assemble_mass(&all).apply(&interpolate(&all, &c).unwrap().to_free());
        for (p, q) in load.iter().zip(&mv) {
            assert!((p - q).abs() < 1e-14);
        }
    }
}
