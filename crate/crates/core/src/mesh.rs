//! Conforming triangulations with newest-vertex bisection.
//!
//! Triangles are stored counterclockwise. Each triangle carries the local
//! index of its refinement edge (the edge opposite its newest vertex). After
//! the first bisection every child is re-ordered so that the newest vertex
//! sits at local position 0.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::math::{cross, norm, sqrt, sub};
use crate::{Error, Point, Result};

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed)
}

/// Marker for "no element" in edge adjacency.
pub const NONE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Triangle {
    /// Counterclockwise vertex indices.
    pub vertices: [usize; 3],
    /// `edges[i]` is the edge opposite `vertices[i]`.
    pub edges: [usize; 3],
    /// Local index of the refinement edge.
    pub refinement_edge: u8,
    pub generation: u32,
    /// Element of the preceding mesh this one descends from.
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Endpoints with `vertices[0] < vertices[1]`.
    pub vertices: [usize; 2],
    pub boundary: bool,
    /// Adjacent elements; the second is [`NONE`] on the boundary.
    pub elements: [usize; 2],
}

/// Per-element geometric data, cached at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub area: f64,
    /// Gradients of the barycentric coordinates.
    pub grad_bary: [Point; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainKind {
    /// `(0,1)²` split into `n × n` cells, each cut along the `/` diagonal.
    UnitSquare,
    /// `(0,1)²` with diagonals mirrored about `x = 1/2` (symmetric for even `n`).
    SymmetricSquare,
    /// `(-1,1)² \ [0,1) × (-1,0]` with `3 n²` cells of width `1/n`.
    LShape,
    /// Simple counterclockwise polygon, ear-clipped and then refined
    /// uniformly `n - 1` times.
    Polygon(Vec<Point>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub n: usize,
}

impl DomainSpec {
    pub fn unit_square(n: usize) -> Self {
        Self {
            kind: DomainKind::UnitSquare,
            n,
        }
    }

    pub fn l_shape(n: usize) -> Self {
        Self {
            kind: DomainKind::LShape,
            n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainTag {
    UnitSquare,
    LShape,
    Polygon,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    id: u64,
    pub vertices: Vec<Point>,
    pub triangles: Vec<Triangle>,
    pub edges: Vec<Edge>,
    pub domain: DomainTag,
    geometry: Vec<ElementGeometry>,
}

/// Coarse-to-fine bookkeeping produced by [`bisect`].
#[derive(Debug, Clone)]
pub struct RefinementRelation {
    pub coarse_id: u64,
    pub fine_id: u64,
    /// Fine elements contained in each coarse element.
    pub children: Vec<Vec<usize>>,
    /// Coarse element containing each fine element.
    pub parent: Vec<usize>,
    /// Coarse elements that were bisected (the set 𝒯 \ 𝒯̂).
    pub refined: Vec<bool>,
    /// Midpoint vertex of every coarse-level edge that was split, keyed by
    /// its sorted endpoints. Nested splits are recorded too.
    pub midpoints: BTreeMap<(usize, usize), usize>,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    /// Build a mesh from vertices and counterclockwise triangles given as
    /// `(vertices, refinement edge, generation, parent)`.
    pub fn from_parts(vertices: Vec<Point>, cells: Vec<([usize; 3], u8, u32, Option<usize>)>, domain: DomainTag) -> Result<Self> {
        let nv = vertices.len();
        let mut triangles = Vec::with_capacity(cells.len());
        let mut geometry = Vec::with_capacity(cells.len());
        for (v, r, generation, parent) in cells {
            if v.iter().any(|&i| i >= nv) || r > 2 {
                return Err(Error::InvalidParameter("triangle references a missing vertex".into()));
            }
            let g = element_geometry(&vertices, v);
            if !(g.area > 0.0) {
                return Err(Error::InvalidParameter("triangle is degenerate or clockwise".into()));
            }
            geometry.push(g);
            triangles.push(Triangle {
                vertices: v,
                edges: [0; 3],
                refinement_edge: r,
                generation,
                parent,
            });
        }
        let mut index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut edges: Vec<Edge> = Vec::with_capacity(triangles.len() * 3 / 2 + 2);
        for (t, tri) in triangles.iter_mut().enumerate() {
            for i in 0..3 {
                let k = key(tri.vertices[(i + 1) % 3], tri.vertices[(i + 2) % 3]);
                let e = *index.entry(k).or_insert_with(|| {
                    edges.push(Edge {
                        vertices: [k.0, k.1],
                        boundary: true,
                        elements: [NONE, NONE],
                    });
                    edges.len() - 1
                });
                let edge = &mut edges[e];
                if edge.elements[0] == NONE {
                    edge.elements[0] = t;
                } else if edge.elements[1] == NONE {
                    edge.elements[1] = t;
                    edge.boundary = false;
                } else {
                    return Err(Error::InvalidParameter("edge shared by more than two triangles".into()));
                }
                tri.edges[i] = e;
            }
        }
        Ok(Self {
            id: fresh_id(),
            vertices,
            triangles,
            edges,
            domain,
            geometry,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn num_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn geometry(&self, k: usize) -> &ElementGeometry {
        &self.geometry[k]
    }

    pub fn area(&self, k: usize) -> f64 {
        self.geometry[k].area
    }

    /// `h_K = |K|^{1/2}`.
    pub fn h(&self, k: usize) -> f64 {
        sqrt(self.geometry[k].area)
    }

    pub fn corners(&self, k: usize) -> [Point; 3] {
        let v = self.triangles[k].vertices;
        [self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]]]
    }

    /// Physical point for barycentric coordinates in element `k`.
    pub fn point(&self, k: usize, b: &[f64; 3]) -> Point {
        let c = self.corners(k);
        [
            b[0] * c[0][0] + b[1] * c[1][0] + b[2] * c[2][0],
            b[0] * c[0][1] + b[1] * c[1][1] + b[2] * c[2][1],
        ]
    }

    /// Barycentric coordinates of `x` with respect to element `k`.
    pub fn barycentric(&self, k: usize, x: Point) -> [f64; 3] {
        let c = self.corners(k);
        let g = &self.geometry[k].grad_bary;
        let l1 = crate::math::dot(g[1], sub(x, c[0]));
        let l2 = crate::math::dot(g[2], sub(x, c[0]));
        [1.0 - l1 - l2, l1, l2]
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e].vertices;
        norm(sub(self.vertices[b], self.vertices[a]))
    }

    /// Unit tangent from the lower to the higher vertex index.
    pub fn edge_tangent(&self, e: usize) -> Point {
        let [a, b] = self.edges[e].vertices;
        let d = sub(self.vertices[b], self.vertices[a]);
        let l = norm(d);
        [d[0] / l, d[1] / l]
    }

    pub fn edge_midpoint(&self, e: usize) -> Point {
        let [a, b] = self.edges[e].vertices;
        let (p, q) = (self.vertices[a], self.vertices[b]);
        [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]
    }

    pub fn total_area(&self) -> f64 {
        self.geometry.iter().map(|g| g.area).sum()
    }

    /// Elements incident to each vertex, in increasing element order.
    pub fn vertex_patches(&self) -> Vec<Vec<usize>> {
        let mut patches = vec![Vec::new(); self.vertices.len()];
        for (k, t) in self.triangles.iter().enumerate() {
            for &v in &t.vertices {
                patches[v].push(k);
            }
        }
        patches
    }

    /// Vertices that lie on the boundary.
    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut on = vec![false; self.vertices.len()];
        for e in self.edges.iter().filter(|e| e.boundary) {
            on[e.vertices[0]] = true;
            on[e.vertices[1]] = true;
        }
        on
    }

    pub fn max_vertex_valence(&self) -> usize {
        self.vertex_patches().iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Minimum interior angle over all triangles, in radians.
    pub fn min_angle(&self) -> f64 {
        let mut best = f64::INFINITY;
        for k in 0..self.num_elements() {
            for a in angles(self.corners(k)) {
                best = best.min(a);
            }
        }
        best
    }

    /// Structural audit: positive orientation, edge adjacency, and the Euler
    /// characteristic of a simply connected domain (a hanging node lowers it).
    pub fn audit(&self) -> core::result::Result<(), &'static str> {
        if self.geometry.iter().any(|g| !(g.area > 0.0)) {
            return Err("non-positive element area");
        }
        let mut boundary_degree = vec![0usize; self.vertices.len()];
        for e in &self.edges {
            if e.elements[0] == NONE {
                return Err("edge without element");
            }
            if e.boundary {
                boundary_degree[e.vertices[0]] += 1;
                boundary_degree[e.vertices[1]] += 1;
            }
        }
        if boundary_degree.iter().any(|&d| d != 0 && d != 2) {
            return Err("boundary is not a closed curve");
        }
        let chi = self.vertices.len() as i64 - self.edges.len() as i64 + self.triangles.len() as i64;
        if chi != 1 {
            return Err("Euler characteristic differs from a disk (hanging node)");
        }
        Ok(())
    }
}

fn element_geometry(vertices: &[Point], v: [usize; 3]) -> ElementGeometry {
    let (x0, x1, x2) = (vertices[v[0]], vertices[v[1]], vertices[v[2]]);
    let twice = cross(sub(x1, x0), sub(x2, x0));
    let area = 0.5 * twice;
    let xs = [x0, x1, x2];
    let mut grad_bary = [[0.0; 2]; 3];
    for i in 0..3 {
        let a = xs[(i + 1) % 3];
        let b = xs[(i + 2) % 3];
        grad_bary[i] = [(a[1] - b[1]) / twice, (b[0] - a[0]) / twice];
    }
    ElementGeometry { area, grad_bary }
}

fn angles(c: [Point; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        let a = sub(c[(i + 1) % 3], c[i]);
        let b = sub(c[(i + 2) % 3], c[i]);
        out[i] = libm::atan2(cross(a, b).abs(), crate::math::dot(a, b));
    }
    out
}

/// Longest edge; ties go to the edge whose opposite vertex has the lowest index.
fn longest_edge(vertices: &[Point], v: [usize; 3]) -> u8 {
    let mut best = 0usize;
    let mut best_len = -1.0;
    for i in 0..3 {
        let l = crate::math::norm2(sub(vertices[v[(i + 1) % 3]], vertices[v[(i + 2) % 3]]));
        let better = l > best_len * (1.0 + 1e-12) || ((l - best_len).abs() <= 1e-12 * l && v[i] < v[best]);
        if better {
            best = i;
            best_len = l;
        }
    }
    best as u8
}

fn labelled(vertices: &[Point], tris: Vec<[usize; 3]>) -> Vec<([usize; 3], u8, u32, Option<usize>)> {
    tris.into_iter().map(|t| (t, longest_edge(vertices, t), 0, None)).collect()
}

/// Build the initial triangulation of a domain.
pub fn make_mesh(spec: &DomainSpec) -> Result<Mesh> {
    if spec.n == 0 {
        return Err(Error::InvalidParameter("subdivision parameter must be positive".into()));
    }
    let n = spec.n;
    match &spec.kind {
        DomainKind::UnitSquare | DomainKind::SymmetricSquare => {
            let mirrored = matches!(spec.kind, DomainKind::SymmetricSquare);
            let idx = |i: usize, j: usize| j * (n + 1) + i;
            let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
            for j in 0..=n {
                for i in 0..=n {
                    vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
                }
            }
            let mut tris = Vec::with_capacity(2 * n * n);
            for j in 0..n {
                for i in 0..n {
                    let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
                    if mirrored && 2 * i + 1 < n {
                        tris.push([v00, v10, v01]);
                        tris.push([v10, v11, v01]);
                    } else {
                        tris.push([v00, v10, v11]);
                        tris.push([v00, v11, v01]);
                    }
                }
            }
            let cells = labelled(&vertices, tris);
            Mesh::from_parts(vertices, cells, DomainTag::UnitSquare)
        }
        DomainKind::LShape => {
            let m = 2 * n;
            let h = 1.0 / n as f64;
            let inside = |i: usize, j: usize| !(i >= n && j < n);
            let mut index = vec![NONE; (m + 1) * (m + 1)];
            let mut vertices = Vec::new();
            let mut vid = |i: usize, j: usize, vertices: &mut Vec<Point>| {
                let slot = &mut index[j * (m + 1) + i];
                if *slot == NONE {
                    *slot = vertices.len();
                    vertices.push([-1.0 + i as f64 * h, -1.0 + j as f64 * h]);
                }
                *slot
            };
            let mut tris = Vec::with_capacity(6 * n * n);
            for j in 0..m {
                for i in 0..m {
                    if !inside(i, j) {
                        continue;
                    }
                    let v00 = vid(i, j, &mut vertices);
                    let v10 = vid(i + 1, j, &mut vertices);
                    let v01 = vid(i, j + 1, &mut vertices);
                    let v11 = vid(i + 1, j + 1, &mut vertices);
                    tris.push([v00, v10, v11]);
                    tris.push([v00, v11, v01]);
                }
            }
            let cells = labelled(&vertices, tris);
            Mesh::from_parts(vertices, cells, DomainTag::LShape)
        }
        DomainKind::Polygon(poly) => {
            let tris = ear_clip(poly)?;
            let vertices = poly.clone();
            let cells = labelled(&vertices, tris);
            let mut mesh = Mesh::from_parts(vertices, cells, DomainTag::Polygon)?;
            for _ in 1..n {
                mesh = refine_uniform(&mesh).0;
            }
            Ok(mesh)
        }
    }
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(sub(q2, q1), sub(p1, q1));
    let d2 = cross(sub(q2, q1), sub(p2, q1));
    let d3 = cross(sub(p2, p1), sub(q1, p1));
    let d4 = cross(sub(p2, p1), sub(q2, p1));
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn ear_clip(poly: &[Point]) -> Result<Vec<[usize; 3]>> {
    let n = poly.len();
    if n < 3 {
        return Err(Error::InvalidPolygon("fewer than three vertices"));
    }
    let signed: f64 = (0..n).map(|i| cross(poly[i], poly[(i + 1) % n])).sum::<f64>() * 0.5;
    if !(signed > 0.0) {
        return Err(Error::InvalidPolygon("polygon is not counterclockwise"));
    }
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if !adjacent && segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return Err(Error::InvalidPolygon("polygon is not simple"));
            }
        }
    }
    let mut ring: Vec<usize> = (0..n).collect();
    let mut tris = Vec::with_capacity(n - 2);
    while ring.len() > 3 {
        let m = ring.len();
        let mut clipped = false;
        for i in 0..m {
            let (a, b, c) = (ring[(i + m - 1) % m], ring[i], ring[(i + 1) % m]);
            if cross(sub(poly[b], poly[a]), sub(poly[c], poly[a])) <= 0.0 {
                continue;
            }
            let contains = ring.iter().any(|&p| {
                if p == a || p == b || p == c {
                    return false;
                }
                let x = poly[p];
                cross(sub(poly[b], poly[a]), sub(x, poly[a])) >= 0.0
                    && cross(sub(poly[c], poly[b]), sub(x, poly[b])) >= 0.0
                    && cross(sub(poly[a], poly[c]), sub(x, poly[c])) >= 0.0
            });
            if contains {
                continue;
            }
            tris.push([a, b, c]);
            ring.remove(i);
            clipped = true;
            break;
        }
        if !clipped {
            return Err(Error::InvalidPolygon("no ear found"));
        }
    }
    tris.push([ring[0], ring[1], ring[2]]);
    Ok(tris)
}

#[derive(Clone, Copy)]
struct Node {
    v: [usize; 3],
    r: u8,
    generation: u32,
    root: usize,
}

/// Newest-vertex bisection of the marked elements followed by closure.
///
/// Every marked element is bisected once; then any element with a split edge
/// is bisected along its refinement edge until no hanging node remains.
pub fn bisect(mesh: &Mesh, marked: &[usize]) -> Result<(Mesh, RefinementRelation)> {
    let nk = mesh.num_elements();
    if let Some(&bad) = marked.iter().find(|&&k| k >= nk) {
        return Err(Error::ElementOutOfRange(bad));
    }
    if marked.is_empty() {
        return Ok((mesh.clone(), RefinementRelation::identity(mesh)));
    }
    let mut vertices = mesh.vertices.clone();
    let mut midpoints: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut active: Vec<Node> = mesh
        .triangles
        .iter()
        .enumerate()
        .map(|(k, t)| Node {
            v: t.vertices,
            r: t.refinement_edge,
            generation: t.generation,
            root: k,
        })
        .collect();
    let mut flag = vec![false; nk];
    for &k in marked {
        flag[k] = true;
    }
    loop {
        let mut next = Vec::with_capacity(active.len() + 2 * marked.len());
        for (node, &f) in active.iter().zip(&flag) {
            if !f {
                next.push(*node);
                continue;
            }
            let k = node.r as usize;
            let (p1, p2, p3) = (node.v[k], node.v[(k + 1) % 3], node.v[(k + 2) % 3]);
            let m = *midpoints.entry(key(p2, p3)).or_insert_with(|| {
                let (a, b) = (vertices[p2], vertices[p3]);
                vertices.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
                vertices.len() - 1
            });
            let g = node.generation + 1;
            next.push(Node {
                v: [m, p1, p2],
                r: 0,
                generation: g,
                root: node.root,
            });
            next.push(Node {
                v: [m, p3, p1],
                r: 0,
                generation: g,
                root: node.root,
            });
        }
        active = next;
        flag.clear();
        let mut any = false;
        for node in &active {
            let hanging = (0..3).any(|i| midpoints.contains_key(&key(node.v[(i + 1) % 3], node.v[(i + 2) % 3])));
            flag.push(hanging);
            any |= hanging;
        }
        if !any {
            break;
        }
    }
    let mut children = vec![Vec::new(); nk];
    let mut parent = Vec::with_capacity(active.len());
    let mut refined = vec![false; nk];
    let mut cells = Vec::with_capacity(active.len());
    for (f, node) in active.iter().enumerate() {
        children[node.root].push(f);
        parent.push(node.root);
        if node.generation != mesh.triangles[node.root].generation {
            refined[node.root] = true;
        }
        cells.push((node.v, node.r, node.generation, Some(node.root)));
    }
    let fine = Mesh::from_parts(vertices, cells, mesh.domain)?;
    let rel = RefinementRelation {
        coarse_id: mesh.id,
        fine_id: fine.id,
        children,
        parent,
        refined,
        midpoints,
    };
    Ok((fine, rel))
}

/// Bisect every element twice (halves the mesh size).
pub fn refine_uniform(mesh: &Mesh) -> (Mesh, RefinementRelation) {
    let all: Vec<usize> = (0..mesh.num_elements()).collect();
    let (m1, r1) = bisect(mesh, &all).expect("all ids valid");
    let all: Vec<usize> = (0..m1.num_elements()).collect();
    let (m2, r2) = bisect(&m1, &all).expect("all ids valid");
    (m2, r1.compose(&r2))
}

impl RefinementRelation {
    pub fn identity(mesh: &Mesh) -> Self {
        let n = mesh.num_elements();
        Self {
            coarse_id: mesh.id,
            fine_id: mesh.id,
            children: (0..n).map(|k| vec![k]).collect(),
            parent: (0..n).collect(),
            refined: vec![false; n],
            midpoints: BTreeMap::new(),
        }
    }

    /// Chain `self` (coarse → mid) with `next` (mid → fine).
    pub fn compose(&self, next: &RefinementRelation) -> RefinementRelation {
        let parent: Vec<usize> = next.parent.iter().map(|&m| self.parent[m]).collect();
        let mut children = vec![Vec::new(); self.children.len()];
        for (f, &c) in parent.iter().enumerate() {
            children[c].push(f);
        }
        let refined = children
            .iter()
            .enumerate()
            .map(|(c, ch)| self.refined[c] || ch.len() != 1 || next.refined[self.children[c][0]])
            .collect();
        let mut midpoints = self.midpoints.clone();
        midpoints.extend(next.midpoints.iter().map(|(k, v)| (*k, *v)));
        RefinementRelation {
            coarse_id: self.coarse_id,
            fine_id: next.fine_id,
            children,
            parent,
            refined,
            midpoints,
        }
    }

    /// Indices of refined coarse elements.
    pub fn refined_set(&self) -> Vec<usize> {
        self.refined.iter().enumerate().filter(|(_, &r)| r).map(|(k, _)| k).collect()
    }

    /// Fine edges that tile the coarse segment `(a, b)`.
    pub fn sub_edges(&self, a: usize, b: usize, out: &mut Vec<(usize, usize)>) {
        match self.midpoints.get(&key(a, b)) {
            Some(&m) => {
                self.sub_edges(a, m, out);
                self.sub_edges(m, b, out);
            }
            None => out.push((a, b)),
        }
    }
}

/// Coarse elements touching (sharing at least a vertex with) a refined one.
pub fn refinement_region(coarse: &Mesh, rel: &RefinementRelation) -> Vec<usize> {
    let patches = coarse.vertex_patches();
    let mut hit = vec![false; coarse.num_elements()];
    for k in rel.refined_set() {
        for &v in &coarse.triangles[k].vertices {
            for &q in &patches[v] {
                hit[q] = true;
            }
        }
    }
    hit.iter().enumerate().filter(|(_, &h)| h).map(|(k, _)| k).collect()
}

/// `h = max_K |K|^{1/2}`.
pub fn mesh_size(mesh: &Mesh) -> f64 {
    mesh.geometry.iter().map(|g| sqrt(g.area)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_meshes_have_expected_counts() {
        let m = make_mesh(&DomainSpec::unit_square(1)).unwrap();
        assert_eq!((m.num_elements(), m.vertices.len(), m.num_edges()), (2, 4, 5));
        assert_eq!(make_mesh(&DomainSpec::unit_square(2)).unwrap().num_elements(), 8);
        let l = make_mesh(&DomainSpec::l_shape(1)).unwrap();
        assert_eq!(l.num_elements(), 6);
        assert!((l.total_area() - 3.0).abs() < 1e-14);
        l.audit().unwrap();
    }

    #[test]
    fn longest_edge_is_labelled() {
        let m = make_mesh(&DomainSpec::unit_square(1)).unwrap();
        for t in &m.triangles {
            let e = t.edges[t.refinement_edge as usize];
            assert!((m.edge_length(e) - 2f64.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn single_triangle_bisection_halves_area() {
        let m = Mesh::from_parts(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            labelled(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]),
            DomainTag::Polygon,
        )
        .unwrap();
        let (f, rel) = bisect(&m, &[0]).unwrap();
        assert_eq!(f.num_elements(), 2);
        for k in 0..2 {
            assert!((f.area(k) - 0.25).abs() < 1e-15);
        }
        assert_eq!(rel.children[0], vec![0, 1]);
        assert!((mesh_size(&m) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn closure_refines_the_neighbour() {
        let m = make_mesh(&DomainSpec::unit_square(1)).unwrap();
        let (f, rel) = bisect(&m, &[0]).unwrap();
        assert_eq!(f.num_elements(), 4);
        assert!(rel.refined.iter().all(|&r| r));
        f.audit().unwrap();
    }

    #[test]
    fn empty_marking_is_identity() {
        let m = make_mesh(&DomainSpec::unit_square(2)).unwrap();
        let (f, rel) = bisect(&m, &[]).unwrap();
        assert_eq!(f.id(), m.id());
        assert!(rel.refined_set().is_empty());
        assert!(refinement_region(&m, &rel).is_empty());
    }

    #[test]
    fn uniform_bisection_mesh_size() {
        let m = make_mesh(&DomainSpec::unit_square(1)).unwrap();
        assert!((mesh_size(&m) - 0.5f64.sqrt()).abs() < 1e-15);
        let (f, _) = bisect(&m, &[0, 1]).unwrap();
        assert!((mesh_size(&f) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn region_of_interior_refinement_is_vertex_patch() {
        let m = make_mesh(&DomainSpec::unit_square(4)).unwrap();
        // an element whose refinement edge is shared with its cell partner
        let k = 10;
        let (_, rel) = bisect(&m, &[k]).unwrap();
        let region = refinement_region(&m, &rel);
        let patches = m.vertex_patches();
        for r in rel.refined_set() {
            for &v in &m.triangles[r].vertices {
                for q in &patches[v] {
                    assert!(region.contains(q));
                }
            }
        }
        // each refined element contributes at most three vertex patches
        assert!(region.len() <= 3 * m.max_vertex_valence() * rel.refined_set().len());
        let (_, all) = bisect(&m, &(0..m.num_elements()).collect::<Vec<_>>()).unwrap();
        assert_eq!(refinement_region(&m, &all).len(), m.num_elements());
    }

    #[test]
    fn invalid_polygons_are_rejected() {
        let cw = DomainSpec {
            kind: DomainKind::Polygon(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]),
            n: 1,
        };
        assert!(matches!(make_mesh(&cw), Err(Error::InvalidPolygon(_))));
        let bow = DomainSpec {
            kind: DomainKind::Polygon(vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]),
            n: 1,
        };
        assert!(make_mesh(&bow).is_err());
        let ok = DomainSpec {
            kind: DomainKind::Polygon(vec![[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 0.5], [0.0, 1.0]]),
            n: 2,
        };
        let m = make_mesh(&ok).unwrap();
        m.audit().unwrap();
        assert!((m.total_area() - 1.5).abs() < 1e-14);
    }
}
