//! Crouzeix–Raviart velocities, piecewise-constant pressures and the
//! operators acting on them.
//!
//! On element `K` with edge `E_i` opposite vertex `i` the CR basis function is
//! `φ_i = 1 - 2 λ_i`. It equals one at the midpoint of `E_i` and zero at the
//! other two midpoints.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::mesh::{Mesh, RefinementRelation, NONE};
use crate::quadrature::{for_each_point, Bary, EDGE_GAUSS3, TRI_DEGREE2};
use crate::{Error, Point, Result};

/// Rows are the gradients of the two velocity components.
pub type Grad = [[f64; 2]; 2];

pub type VectorFn = Arc<dyn Fn(Point) -> Point + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(Point) -> Grad + Send + Sync>;

/// Anything that can be evaluated at a point of a mesh element.
pub trait FieldSource {
    fn value(&self, elem: usize, x: Point, bary: &Bary) -> Point;
}

/// A globally defined vector field.
#[derive(Clone)]
pub struct Analytic(pub VectorFn);

impl FieldSource for Analytic {
    fn value(&self, _elem: usize, x: Point, _bary: &Bary) -> Point {
        (self.0)(x)
    }
}

impl<F: Fn(Point) -> Point> FieldSource for F {
    fn value(&self, _elem: usize, x: Point, _bary: &Bary) -> Point {
        self(x)
    }
}

#[derive(Clone)]
pub struct CrSpace {
    pub mesh: Arc<Mesh>,
    pub dirichlet: bool,
    free: Vec<usize>,
    num_free: usize,
}

impl CrSpace {
    /// Velocity space; with `dirichlet` the boundary-edge DOFs are fixed to zero.
    pub fn new(mesh: Arc<Mesh>, dirichlet: bool) -> Self {
        let mut free = vec![NONE; 2 * mesh.num_edges()];
        let mut num_free = 0;
        for (e, edge) in mesh.edges.iter().enumerate() {
            if dirichlet && edge.boundary {
                continue;
            }
            for c in 0..2 {
                free[2 * e + c] = num_free;
                num_free += 1;
            }
        }
        Self {
            mesh,
            dirichlet,
            free,
            num_free,
        }
    }

    pub fn num_dofs(&self) -> usize {
        2 * self.mesh.num_edges()
    }

    pub fn num_free(&self) -> usize {
        self.num_free
    }

    /// DOF of component `c` on edge `e`.
    #[inline]
    pub fn dof(e: usize, c: usize) -> usize {
        2 * e + c
    }

    /// Index among the unconstrained DOFs, or [`NONE`].
    #[inline]
    pub fn free_index(&self, dof: usize) -> usize {
        self.free[dof]
    }

    pub fn is_constrained(&self, e: usize) -> bool {
        self.dirichlet && self.mesh.edges[e].boundary
    }

    pub fn zero(&self) -> CrField {
        CrField {
            space: self.clone(),
            values: vec![[0.0; 2]; self.mesh.num_edges()],
        }
    }

    pub fn same(&self, other: &CrSpace) -> bool {
        self.mesh.id() == other.mesh.id() && self.dirichlet == other.dirichlet
    }
}

#[derive(Clone)]
pub struct P0Space {
    pub mesh: Arc<Mesh>,
    pub zero_mean: bool,
}

impl P0Space {
    pub fn new(mesh: Arc<Mesh>, zero_mean: bool) -> Self {
        Self { mesh, zero_mean }
    }

    pub fn zero(&self) -> P0Field {
        P0Field {
            space: self.clone(),
            values: vec![0.0; self.mesh.num_elements()],
        }
    }
}

#[derive(Clone)]
pub struct CrField {
    pub space: CrSpace,
    /// Value of the field at each edge midpoint.
    pub values: Vec<Point>,
}

#[derive(Clone)]
pub struct P0Field {
    pub space: P0Space,
    pub values: Vec<f64>,
}

impl P0Field {
    pub fn mean(&self) -> f64 {
        let m = &self.space.mesh;
        let s: f64 = self.values.iter().enumerate().map(|(k, v)| m.area(k) * v).sum();
        s / m.total_area()
    }

    pub fn l2_norm(&self) -> f64 {
        let m = &self.space.mesh;
        let s: f64 = self.values.iter().enumerate().map(|(k, v)| m.area(k) * v * v).sum();
        crate::math::sqrt(s)
    }

    /// L² projection of a scalar function (degree-4 quadrature per element).
    pub fn project(space: &P0Space, f: &dyn Fn(Point) -> f64) -> P0Field {
        let mesh = &space.mesh;
        let mut values = Vec::with_capacity(mesh.num_elements());
        for k in 0..mesh.num_elements() {
            let mut s = 0.0;
            for_each_point(0, &[], |b, w| s += w * f(mesh.point(k, &b)));
            values.push(s);
        }
        let mut field = P0Field {
            space: space.clone(),
            values,
        };
        if space.zero_mean {
            let m = field.mean();
            field.values.iter_mut().for_each(|v| *v -= m);
        }
        field
    }
}

impl CrField {
    pub fn mesh(&self) -> &Mesh {
        &self.space.mesh
    }

    /// Coefficients of the unconstrained DOFs in free numbering.
    pub fn to_free(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.space.num_free()];
        for (e, v) in self.values.iter().enumerate() {
            for c in 0..2 {
                let i = self.space.free_index(CrSpace::dof(e, c));
                if i != NONE {
                    out[i] = v[c];
                }
            }
        }
        out
    }

    pub fn from_free(space: &CrSpace, x: &[f64]) -> CrField {
        let mut f = space.zero();
        for e in 0..space.mesh.num_edges() {
            for c in 0..2 {
                let i = space.free_index(CrSpace::dof(e, c));
                if i != NONE {
                    f.values[e][c] = x[i];
                }
            }
        }
        f
    }

    /// Midpoint values of the three local edges, ordered as the vertices.
    #[inline]
    pub fn local(&self, k: usize) -> [Point; 3] {
        let e = self.mesh().triangles[k].edges;
        [self.values[e[0]], self.values[e[1]], self.values[e[2]]]
    }

    pub fn evaluate(&self, k: usize, b: &Bary) -> Result<Point> {
        if k >= self.mesh().num_elements() {
            return Err(Error::ElementOutOfRange(k));
        }
        Ok(self.eval_local(k, b))
    }

    #[inline]
    pub fn eval_local(&self, k: usize, b: &Bary) -> Point {
        let v = self.local(k);
        let mut out = [0.0; 2];
        for i in 0..3 {
            let phi = 1.0 - 2.0 * b[i];
            out[0] += phi * v[i][0];
            out[1] += phi * v[i][1];
        }
        out
    }

    /// Values at the three vertices of element `k`.
    pub fn vertex_values(&self, k: usize) -> [Point; 3] {
        let v = self.local(k);
        let s = [v[0][0] + v[1][0] + v[2][0], v[0][1] + v[1][1] + v[2][1]];
        [
            [s[0] - 2.0 * v[0][0], s[1] - 2.0 * v[0][1]],
            [s[0] - 2.0 * v[1][0], s[1] - 2.0 * v[1][1]],
            [s[0] - 2.0 * v[2][0], s[1] - 2.0 * v[2][1]],
        ]
    }

    /// Broken gradient on element `k`.
    pub fn gradient(&self, k: usize) -> Grad {
        let v = self.local(k);
        let g = &self.mesh().geometry(k).grad_bary;
        let mut out = [[0.0; 2]; 2];
        for i in 0..3 {
            for c in 0..2 {
                out[c][0] -= 2.0 * v[i][c] * g[i][0];
                out[c][1] -= 2.0 * v[i][c] * g[i][1];
            }
        }
        out
    }

    pub fn gradients(&self) -> Vec<Grad> {
        (0..self.mesh().num_elements()).map(|k| self.gradient(k)).collect()
    }

    /// Discrete divergence per element.
    pub fn divergence(&self, k: usize) -> f64 {
        let g = self.gradient(k);
        g[0][0] + g[1][1]
    }

    pub fn to_broken(&self) -> BrokenField {
        let vertex_values = (0..self.mesh().num_elements()).map(|k| self.vertex_values(k)).collect();
        BrokenField {
            mesh: self.space.mesh.clone(),
            vertex_values,
        }
    }

    pub fn axpy(&mut self, a: f64, x: &CrField) {
        for (v, w) in self.values.iter_mut().zip(&x.values) {
            v[0] += a * w[0];
            v[1] += a * w[1];
        }
    }

    pub fn scaled(&self, a: f64) -> CrField {
        let mut f = self.clone();
        f.values.iter_mut().for_each(|v| *v = [a * v[0], a * v[1]]);
        f
    }
}

impl FieldSource for CrField {
    fn value(&self, elem: usize, _x: Point, bary: &Bary) -> Point {
        self.eval_local(elem, bary)
    }
}

/// Piecewise-affine vector field without continuity requirements, stored by
/// its values at the element vertices.
#[derive(Clone)]
pub struct BrokenField {
    pub mesh: Arc<Mesh>,
    pub vertex_values: Vec<[Point; 3]>,
}

impl BrokenField {
    #[inline]
    pub fn eval_local(&self, k: usize, b: &Bary) -> Point {
        let v = &self.vertex_values[k];
        [
            b[0] * v[0][0] + b[1] * v[1][0] + b[2] * v[2][0],
            b[0] * v[0][1] + b[1] * v[1][1] + b[2] * v[2][1],
        ]
    }

    pub fn gradient(&self, k: usize) -> Grad {
        let v = &self.vertex_values[k];
        let g = &self.mesh.geometry(k).grad_bary;
        let mut out = [[0.0; 2]; 2];
        for i in 0..3 {
            for c in 0..2 {
                out[c][0] += v[i][c] * g[i][0];
                out[c][1] += v[i][c] * g[i][1];
            }
        }
        out
    }

    pub fn gradients(&self) -> Vec<Grad> {
        (0..self.mesh.num_elements()).map(|k| self.gradient(k)).collect()
    }
}

impl FieldSource for BrokenField {
    fn value(&self, elem: usize, _x: Point, bary: &Bary) -> Point {
        self.eval_local(elem, bary)
    }
}

/// Edge-mean interpolation `I_h` of a globally defined source.
///
/// Each DOF is the 3-point Gauss mean of the source over the edge, evaluated
/// through the first adjacent element. Constrained edges stay zero.
pub fn interpolate(space: &CrSpace, source: &dyn FieldSource) -> Result<CrField> {
    let mesh = &space.mesh;
    let mut out = space.zero();
    for (e, edge) in mesh.edges.iter().enumerate() {
        if space.is_constrained(e) {
            continue;
        }
        let k = edge.elements[0];
        let tri = &mesh.triangles[k];
        let local = (0..3).find(|&i| tri.edges[i] == e).expect("edge belongs to its element");
        let (a, b) = ((local + 1) % 3, (local + 2) % 3);
        let mut acc = [0.0; 2];
        for (t, w) in EDGE_GAUSS3.iter() {
            let mut bary = [0.0; 3];
            bary[a] = 1.0 - t;
            bary[b] = *t;
            let x = mesh.point(k, &bary);
            let v = source.value(k, x, &bary);
            if !v[0].is_finite() || !v[1].is_finite() {
                return Err(Error::Evaluation(e));
            }
            acc[0] += w * v[0];
            acc[1] += w * v[1];
        }
        out.values[e] = acc;
    }
    Ok(out)
}

/// `I_h` of a CR field living on a refinement of `space.mesh`.
///
/// The fine field is affine on every sub-edge, so its mean over a coarse edge
/// is the length-weighted mean of the fine midpoint values.
pub fn interpolate_fine(space: &CrSpace, fine: &CrField, rel: &RefinementRelation) -> Result<CrField> {
    let coarse = &space.mesh;
    let fmesh = fine.mesh();
    if rel.coarse_id != coarse.id() || rel.fine_id != fmesh.id() {
        return Err(Error::MeshMismatch);
    }
    let lookup = edge_lookup(fmesh);
    let mut out = space.zero();
    let mut parts = Vec::new();
    for (e, edge) in coarse.edges.iter().enumerate() {
        if space.is_constrained(e) {
            continue;
        }
        parts.clear();
        rel.sub_edges(edge.vertices[0], edge.vertices[1], &mut parts);
        if let [(a, b)] = parts[..] {
            out.values[e] = fine.values[*lookup.get(&key(a, b)).ok_or(Error::MeshMismatch)?];
            continue;
        }
        let mut acc = [0.0; 2];
        let mut len = 0.0;
        for &(a, b) in &parts {
            let fe = *lookup.get(&key(a, b)).ok_or(Error::MeshMismatch)?;
            let l = fmesh.edge_length(fe);
            acc[0] += l * fine.values[fe][0];
            acc[1] += l * fine.values[fe][1];
            len += l;
        }
        out.values[e] = [acc[0] / len, acc[1] / len];
    }
    Ok(out)
}

fn key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Map from sorted endpoint pairs to edge ids.
pub fn edge_lookup(mesh: &Mesh) -> BTreeMap<(usize, usize), usize> {
    mesh.edges
        .iter()
        .enumerate()
        .map(|(e, edge)| ((edge.vertices[0], edge.vertices[1]), e))
        .collect()
}

/// Restriction of a coarse CR field to the elements of a refinement.
/// Exact: every fine element inherits its parent's affine function.
pub fn prolong(coarse: &CrField, fine_mesh: &Arc<Mesh>, rel: &RefinementRelation) -> Result<BrokenField> {
    if rel.coarse_id != coarse.mesh().id() || rel.fine_id != fine_mesh.id() {
        return Err(Error::MeshMismatch);
    }
    prolong_broken(&coarse.to_broken(), fine_mesh, rel)
}

/// Same as [`prolong`] for a field that is already broken-affine.
pub fn prolong_broken(coarse: &BrokenField, fine_mesh: &Arc<Mesh>, rel: &RefinementRelation) -> Result<BrokenField> {
    if rel.coarse_id != coarse.mesh.id() || rel.fine_id != fine_mesh.id() {
        return Err(Error::MeshMismatch);
    }
    let cm = &coarse.mesh;
    let mut vertex_values = Vec::with_capacity(fine_mesh.num_elements());
    for (f, &c) in rel.parent.iter().enumerate() {
        let corners = fine_mesh.corners(f);
        let mut vals = [[0.0; 2]; 3];
        for (j, x) in corners.iter().enumerate() {
            vals[j] = coarse.eval_local(c, &cm.barycentric(c, *x));
        }
        vertex_values.push(vals);
    }
    Ok(BrokenField {
        mesh: fine_mesh.clone(),
        vertex_values,
    })
}

/// `(‖a - b‖, ⫴a - b⫴_pw)`, exact for broken-affine fields.
pub fn broken_norms(a: &BrokenField, b: Option<&BrokenField>) -> Result<(f64, f64)> {
    if let Some(b) = b {
        if a.mesh.id() != b.mesh.id() {
            return Err(Error::MeshMismatch);
        }
    }
    let mesh = &a.mesh;
    let (mut l2, mut h1) = (0.0, 0.0);
    for k in 0..mesh.num_elements() {
        let area = mesh.area(k);
        for (bary, w) in TRI_DEGREE2.iter() {
            let mut v = a.eval_local(k, bary);
            if let Some(b) = b {
                let u = b.eval_local(k, bary);
                v = [v[0] - u[0], v[1] - u[1]];
            }
            l2 += area * w * (v[0] * v[0] + v[1] * v[1]);
        }
        let mut g = a.gradient(k);
        if let Some(b) = b {
            let h = b.gradient(k);
            for c in 0..2 {
                for d in 0..2 {
                    g[c][d] -= h[c][d];
                }
            }
        }
        h1 += area * frob2(&g);
    }
    Ok((crate::math::sqrt(l2), crate::math::sqrt(h1)))
}

/// Same as [`broken_norms`] for CR fields on one mesh.
pub fn cr_norms(a: &CrField, b: Option<&CrField>) -> Result<(f64, f64)> {
    let mesh = a.mesh();
    if let Some(b) = b {
        if mesh.id() != b.mesh().id() {
            return Err(Error::MeshMismatch);
        }
    }
    let (mut l2, mut h1) = (0.0, 0.0);
    for k in 0..mesh.num_elements() {
        let mut v = a.local(k);
        let mut g = a.gradient(k);
        if let Some(b) = b {
            let u = b.local(k);
            let h = b.gradient(k);
            for i in 0..3 {
                v[i] = [v[i][0] - u[i][0], v[i][1] - u[i][1]];
            }
            for c in 0..2 {
                for d in 0..2 {
                    g[c][d] -= h[c][d];
                }
            }
        }
        let area = mesh.area(k);
        l2 += area / 3.0 * v.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>();
        h1 += area * frob2(&g);
    }
    Ok((crate::math::sqrt(l2), crate::math::sqrt(h1)))
}

#[inline]
pub fn frob2(g: &Grad) -> f64 {
    g[0][0] * g[0][0] + g[0][1] * g[0][1] + g[1][0] * g[1][0] + g[1][1] * g[1][1]
}

/// `(‖v - v_h‖, ⫴v - v_h⫴_pw)` against a smooth field, by degree-4
/// quadrature on each element subdivided `depth` times.
pub fn error_norms(field: &CrField, exact: &dyn Fn(Point) -> Point, grad: &dyn Fn(Point) -> Grad, depth: u8) -> (f64, f64) {
    let mesh = field.mesh();
    let (mut l2, mut h1) = (0.0, 0.0);
    for k in 0..mesh.num_elements() {
        let area = mesh.area(k);
        let gh = field.gradient(k);
        for_each_point(depth, &[], |b, w| {
            let x = mesh.point(k, &b);
            let v = field.eval_local(k, &b);
            let u = exact(x);
            let g = grad(x);
            let (d0, d1) = (u[0] - v[0], u[1] - v[1]);
            l2 += area * w * (d0 * d0 + d1 * d1);
            let d = [[g[0][0] - gh[0][0], g[0][1] - gh[0][1]], [g[1][0] - gh[1][0], g[1][1] - gh[1][1]]];
            h1 += area * w * frob2(&d);
        });
    }
    (crate::math::sqrt(l2), crate::math::sqrt(h1))
}

/// `‖r - r_h‖` for a scalar field against a smooth function.
pub fn p0_error(field: &P0Field, exact: &dyn Fn(Point) -> f64, depth: u8) -> f64 {
    let mesh = &field.space.mesh;
    let mut s = 0.0;
    for k in 0..mesh.num_elements() {
        let area = mesh.area(k);
        for_each_point(depth, &[], |b, w| {
            let d = exact(mesh.point(k, &b)) - field.values[k];
            s += area * w * d * d;
        });
    }
    crate::math::sqrt(s)
}

/// Per-edge `|E| · |[G] t_E|²` for broken-constant gradients `grads`.
/// Boundary edges use the one-sided trace.
pub fn tangential_jumps(mesh: &Mesh, grads: &[Grad]) -> Vec<f64> {
    mesh.edges
        .iter()
        .enumerate()
        .map(|(e, edge)| {
            let t = mesh.edge_tangent(e);
            let gt = |g: &Grad| [g[0][0] * t[0] + g[0][1] * t[1], g[1][0] * t[0] + g[1][1] * t[1]];
            let mut j = gt(&grads[edge.elements[0]]);
            if edge.elements[1] != NONE {
                let o = gt(&grads[edge.elements[1]]);
                j = [j[0] - o[0], j[1] - o[1]];
            }
            mesh.edge_length(e) * (j[0] * j[0] + j[1] * j[1])
        })
        .collect()
}

/// Continuous piecewise-linear field plus one vector cubic bubble
/// `27 λ0 λ1 λ2` per element.
#[derive(Clone)]
pub struct ConformingField {
    pub mesh: Arc<Mesh>,
    pub vertex: Vec<Point>,
    pub bubble: Vec<Point>,
}

impl ConformingField {
    pub fn eval_local(&self, k: usize, b: &Bary) -> Point {
        let v = self.mesh.triangles[k].vertices;
        let bub = 27.0 * b[0] * b[1] * b[2];
        let mut out = [0.0; 2];
        for c in 0..2 {
            out[c] = b[0] * self.vertex[v[0]][c] + b[1] * self.vertex[v[1]][c] + b[2] * self.vertex[v[2]][c] + bub * self.bubble[k][c];
        }
        out
    }

    pub fn gradient_at(&self, k: usize, b: &Bary) -> Grad {
        let v = self.mesh.triangles[k].vertices;
        let g = &self.mesh.geometry(k).grad_bary;
        let db = [
            27.0 * (b[1] * b[2] * g[0][0] + b[0] * b[2] * g[1][0] + b[0] * b[1] * g[2][0]),
            27.0 * (b[1] * b[2] * g[0][1] + b[0] * b[2] * g[1][1] + b[0] * b[1] * g[2][1]),
        ];
        let mut out = [[0.0; 2]; 2];
        for c in 0..2 {
            for d in 0..2 {
                out[c][d] = (0..3).map(|i| self.vertex[v[i]][c] * g[i][d]).sum::<f64>() + self.bubble[k][c] * db[d];
            }
        }
        out
    }
}

impl FieldSource for ConformingField {
    fn value(&self, elem: usize, _x: Point, bary: &Bary) -> Point {
        self.eval_local(elem, bary)
    }
}

/// Companion operator `J`: vertex averaging, zero boundary values, and a
/// bubble correction restoring every element mean.
pub fn companion(field: &CrField) -> ConformingField {
    let mesh = field.space.mesh.clone();
    let nv = mesh.vertices.len();
    let mut sum = vec![[0.0; 2]; nv];
    let mut count = vec![0usize; nv];
    for k in 0..mesh.num_elements() {
        let vals = field.vertex_values(k);
        for (i, &v) in mesh.triangles[k].vertices.iter().enumerate() {
            sum[v][0] += vals[i][0];
            sum[v][1] += vals[i][1];
            count[v] += 1;
        }
    }
    let on_boundary = mesh.boundary_vertices();
    let vertex: Vec<Point> = (0..nv)
        .map(|v| {
            if on_boundary[v] || count[v] == 0 {
                [0.0; 2]
            } else {
                [sum[v][0] / count[v] as f64, sum[v][1] / count[v] as f64]
            }
        })
        .collect();
    // mean of the bubble 27 λ0 λ1 λ2 over K
    const BUBBLE_MEAN: f64 = 9.0 / 20.0;
    let bubble = (0..mesh.num_elements())
        .map(|k| {
            let local = field.local(k);
            let tv = mesh.triangles[k].vertices;
            let mut c = [0.0; 2];
            for d in 0..2 {
                let mean_vh = (local[0][d] + local[1][d] + local[2][d]) / 3.0;
                let mean_lin = (vertex[tv[0]][d] + vertex[tv[1]][d] + vertex[tv[2]][d]) / 3.0;
                c[d] = (mean_vh - mean_lin) / BUBBLE_MEAN;
            }
            c
        })
        .collect();
    ConformingField { mesh, vertex, bubble }
}

/// Diagnostics of `J v_h` against `v_h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompanionDiagnostics {
    /// `max_K |∫_K (v_h - J v_h)|`, per component maximum.
    pub value_mean_defect: f64,
    /// `max_K |∫_K ∇_h(v_h - J v_h)|` (not enforced by the construction).
    pub gradient_moment_defect: f64,
    /// `Σ_K (|K|⁻¹ ‖v_h - J v_h‖²_K + ‖∇_h(v_h - J v_h)‖²_K)`.
    pub lhs: f64,
    /// `Σ_K |K|^{1/2} Σ_{E ∈ E_K} ‖[∇_h v_h] t_E‖²_E`.
    pub jump_sum: f64,
}

pub fn companion_diagnostics(field: &CrField, j: &ConformingField) -> CompanionDiagnostics {
    let mesh = field.mesh();
    let grads = field.gradients();
    let jumps = tangential_jumps(mesh, &grads);
    let mut d = CompanionDiagnostics {
        value_mean_defect: 0.0,
        gradient_moment_defect: 0.0,
        lhs: 0.0,
        jump_sum: 0.0,
    };
    for k in 0..mesh.num_elements() {
        let area = mesh.area(k);
        let gh = grads[k];
        let (mut mean, mut moment, mut l2, mut h1) = ([0.0; 2], [[0.0; 2]; 2], 0.0, 0.0);
        for_each_point(1, &[], |b, w| {
            let v = field.eval_local(k, &b);
            let u = j.eval_local(k, &b);
            let g = j.gradient_at(k, &b);
            let diff = [v[0] - u[0], v[1] - u[1]];
            let dg = [[gh[0][0] - g[0][0], gh[0][1] - g[0][1]], [gh[1][0] - g[1][0], gh[1][1] - g[1][1]]];
            for c in 0..2 {
                mean[c] += area * w * diff[c];
                for e in 0..2 {
                    moment[c][e] += area * w * dg[c][e];
                }
            }
            l2 += area * w * (diff[0] * diff[0] + diff[1] * diff[1]);
            h1 += area * w * frob2(&dg);
        });
        d.value_mean_defect = d.value_mean_defect.max(mean[0].abs()).max(mean[1].abs());
        d.gradient_moment_defect = moment.iter().flatten().fold(d.gradient_moment_defect, |m, x| m.max(x.abs()));
        d.lhs += l2 / area + h1;
        d.jump_sum += crate::math::sqrt(area) * mesh.triangles[k].edges.iter().map(|&e| jumps[e]).sum::<f64>();
    }
    d
}

/// Discrete jump-control ratio for a broken-affine field `g`:
/// `Σ_K |K|^{1/2} Σ_{E ∈ E_K} ‖[g]‖²_E / ‖g‖²`. Boundary jumps are traces.
pub fn jump_control_ratio(g: &BrokenField) -> f64 {
    let mesh = &g.mesh;
    let mut edge_jump = vec![0.0; mesh.num_edges()];
    for (e, edge) in mesh.edges.iter().enumerate() {
        let [a, b] = edge.vertices;
        let side = |k: usize| -> (Point, Point) {
            let v = mesh.triangles[k].vertices;
            let ia = v.iter().position(|&x| x == a).expect("vertex of edge");
            let ib = v.iter().position(|&x| x == b).expect("vertex of edge");
            (g.vertex_values[k][ia], g.vertex_values[k][ib])
        };
        let (mut ja, mut jb) = side(edge.elements[0]);
        if edge.elements[1] != NONE {
            let (oa, ob) = side(edge.elements[1]);
            ja = [ja[0] - oa[0], ja[1] - oa[1]];
            jb = [jb[0] - ob[0], jb[1] - ob[1]];
        }
        // ∫_E |affine|² = |E| (a² + a b + b²) / 3
        let s: f64 = (0..2).map(|c| ja[c] * ja[c] + ja[c] * jb[c] + jb[c] * jb[c]).sum();
        edge_jump[e] = mesh.edge_length(e) * s / 3.0;
    }
    let num: f64 = (0..mesh.num_elements())
        .map(|k| mesh.h(k) * mesh.triangles[k].edges.iter().map(|&e| edge_jump[e]).sum::<f64>())
        .sum();
    let (l2, _) = broken_norms(g, None).expect("same mesh");
    num / (l2 * l2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{bisect, make_mesh, DomainSpec};

    fn square(n: usize) -> Arc<Mesh> {
        Arc::new(make_mesh(&DomainSpec::unit_square(n)).unwrap())
    }

    #[test]
    fn affine_fields_are_reproduced() {
        let space = CrSpace::new(square(2), false);
        let f = |x: Point| [1.0 + 2.0 * x[0], 3.0 * x[1]];
        let v = interpolate(&space, &f).unwrap();
        for k in 0..space.mesh.num_elements() {
            let b = [0.2, 0.3, 0.5];
            let x = space.mesh.point(k, &b);
            let got = v.evaluate(k, &b).unwrap();
            assert!((got[0] - f(x)[0]).abs() < 1e-14 && (got[1] - f(x)[1]).abs() < 1e-14);
            let g = v.gradient(k);
            assert!((g[0][0] - 2.0).abs() < 1e-13 && (g[1][1] - 3.0).abs() < 1e-13);
        }
    }

    #[test]
    fn evaluation_basis_properties() {
        let space = CrSpace::new(square(1), false);
        let mut v = space.zero();
        v.values = vec![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0], [9.0, 10.0]];
        let e = space.mesh.triangles[0].edges;
        let mid = v.evaluate(0, &[0.0, 0.5, 0.5]).unwrap();
        assert_eq!(mid, v.values[e[0]]);
        let c = v.evaluate(0, &[1.0 / 3.0; 3]).unwrap();
        let mean = (v.values[e[0]][0] + v.values[e[1]][0] + v.values[e[2]][0]) / 3.0;
        assert!((c[0] - mean).abs() < 1e-14);
        assert!(matches!(v.evaluate(9, &[1.0, 0.0, 0.0]), Err(Error::ElementOutOfRange(9))));
    }

    #[test]
    fn non_finite_source_is_reported() {
        let space = CrSpace::new(square(1), false);
        let bad = |x: Point| [1.0 / (x[0] - 0.5), 0.0];
        // 3-point Gauss nodes on the bottom edge include x = 1/2
        assert!(matches!(interpolate(&space, &bad), Err(Error::Evaluation(_))));
    }

    #[test]
    fn seminorm_of_linear_field() {
        let space = CrSpace::new(square(3), false);
        let v = interpolate(&space, &|x: Point| [x[0], 0.0]).unwrap();
        let (_, h1) = cr_norms(&v, None).unwrap();
        assert!((h1 - 1.0).abs() < 1e-13);
        assert_eq!(cr_norms(&v, Some(&v)).unwrap(), (0.0, 0.0));
        let (bl2, bh1) = broken_norms(&v.to_broken(), None).unwrap();
        let (l2, _) = cr_norms(&v, None).unwrap();
        assert!((bl2 - l2).abs() < 1e-14 && (bh1 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn prolongation_preserves_energy() {
        let mesh = square(2);
        let space = CrSpace::new(mesh.clone(), true);
        let v = interpolate(&space, &|x: Point| [x[0] * x[1] * (1.0 - x[0]), x[1].sin()]).unwrap();
        let (fine, rel) = bisect(&mesh, &[0, 3]).unwrap();
        let fine = Arc::new(fine);
        let p = prolong(&v, &fine, &rel).unwrap();
        let (_, a) = cr_norms(&v, None).unwrap();
        let (_, b) = broken_norms(&p, None).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
        assert!(prolong(&v, &mesh, &rel).is_err());
    }

    #[test]
    fn companion_of_continuous_field_is_identity() {
        // hat-like continuous P1 field vanishing on the boundary: the CR
        // interpolant of a P1 conforming function is that function
        let mesh = square(2);
        let space = CrSpace::new(mesh.clone(), true);
        let centre = mesh
            .vertices
            .iter()
            .position(|x| (x[0] - 0.5).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12)
            .unwrap();
        let mut lin = vec![[0.0; 2]; mesh.vertices.len()];
        lin[centre] = [1.0, -2.0];
        let conf = ConformingField {
            mesh: mesh.clone(),
            vertex: lin.clone(),
            bubble: vec![[0.0; 2]; mesh.num_elements()],
        };
        let v = interpolate(&space, &conf).unwrap();
        let j = companion(&v);
        for (a, b) in j.vertex.iter().zip(&lin) {
            assert!((a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
        }
        assert!(j.bubble.iter().all(|b| b[0].abs() < 1e-13 && b[1].abs() < 1e-13));
    }
}
