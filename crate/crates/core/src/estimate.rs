//! Residual estimators, oscillations, the distance `δ` and `η_aux`.
//!
//! With `h_K = |K|^{1/2}` the local contributions are
//!
//! ```text
//! η²_{S,K} = h_K² ‖f + u_h‖²_K        η²_{S,E(K)} = h_K Σ_{E∈E_K} ‖[∇_h y_h t_E]‖²_E
//! η²_{A,K} = h_K² ‖y_h - y_d‖²_K      η²_{A,E(K)} = h_K Σ_{E∈E_K} ‖[∇_h p_h t_E]‖²_E
//! ```
//!
//! Interior edges therefore enter once for each adjacent element.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::assembly::ProblemData;
use crate::control::{for_each_cut_point, KinkedSource, KktSolution};
use crate::femspace::{frob2, prolong, tangential_jumps, Analytic, CrField, Grad};
use crate::math::sqrt;
use crate::mesh::{Mesh, RefinementRelation};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    /// Include one-sided tangential traces on boundary edges.
    pub boundary_jumps: bool,
    /// Subdivision depth for quadrature of non-polynomial data.
    pub data_depth: u8,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            boundary_jumps: true,
            data_depth: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorReport {
    pub state_volume: Vec<f64>,
    pub state_edge: Vec<f64>,
    pub adjoint_volume: Vec<f64>,
    pub adjoint_edge: Vec<f64>,
    pub osc_f: Vec<f64>,
    pub osc_yd: Vec<f64>,
    /// `Σ_K` of all four contributions.
    pub eta2: f64,
    /// `Σ_K (η²_{S,K} + η²_{A,K})`.
    pub mu2: f64,
}

impl EstimatorReport {
    pub fn len(&self) -> usize {
        self.state_volume.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state_volume.is_empty()
    }

    /// Combined indicator of element `k`, the quantity used for marking.
    pub fn total(&self, k: usize) -> f64 {
        self.state_volume[k] + self.state_edge[k] + self.adjoint_volume[k] + self.adjoint_edge[k]
    }

    pub fn totals(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.total(k)).collect()
    }

    pub fn volume(&self, k: usize) -> f64 {
        self.state_volume[k] + self.adjoint_volume[k]
    }

    pub fn eta(&self) -> f64 {
        sqrt(self.eta2)
    }

    pub fn mu(&self) -> f64 {
        sqrt(self.mu2)
    }

    pub fn osc2(&self) -> f64 {
        self.osc_f.iter().sum::<f64>() + self.osc_yd.iter().sum::<f64>()
    }

    /// `η²` restricted to a set of elements.
    pub fn eta2_on(&self, set: &[usize]) -> f64 {
        set.iter().map(|&k| self.total(k)).sum()
    }

    /// `μ²` restricted to a set of elements.
    pub fn mu2_on(&self, set: &[usize]) -> f64 {
        set.iter().map(|&k| self.volume(k)).sum()
    }
}

/// Per element `(h_K² ‖g‖²_K, h_K² ‖g - g_K‖²_K)` with `g = Σ_i s_i g_i`.
fn volume_terms(mesh: &Mesh, parts: &[(&dyn KinkedSource, f64)], depth: u8) -> (Vec<f64>, Vec<f64>) {
    let sources: Vec<&dyn KinkedSource> = parts.iter().map(|p| p.0).collect();
    let mut vol = Vec::with_capacity(mesh.num_elements());
    let mut osc = Vec::with_capacity(mesh.num_elements());
    let mut pts = Vec::new();
    for k in 0..mesh.num_elements() {
        let area = mesh.area(k);
        pts.clear();
        for_each_cut_point(k, depth, &sources, |b, w| {
            let x = mesh.point(k, &b);
            let mut g = [0.0; 2];
            for (src, s) in parts {
                let v = src.value(k, x, &b);
                g[0] += s * v[0];
                g[1] += s * v[1];
            }
            pts.push((g, w));
        });
        let mut mean = [0.0; 2];
        let mut norm2 = 0.0;
        for (g, w) in &pts {
            mean[0] += w * g[0];
            mean[1] += w * g[1];
            norm2 += w * (g[0] * g[0] + g[1] * g[1]);
        }
        let var: f64 = pts
            .iter()
            .map(|(g, w)| {
                let d = [g[0] - mean[0], g[1] - mean[1]];
                w * (d[0] * d[0] + d[1] * d[1])
            })
            .sum();
        // h_K² |K| = |K|²
        vol.push(area * area * norm2);
        osc.push(area * area * var);
    }
    (vol, osc)
}

/// `h_K Σ_{E∈E_K} ‖[G t_E]‖²_E` per element.
pub fn edge_terms(mesh: &Mesh, grads: &[Grad], boundary_jumps: bool) -> Vec<f64> {
    let mut jumps = tangential_jumps(mesh, grads);
    if !boundary_jumps {
        for (j, e) in jumps.iter_mut().zip(&mesh.edges) {
            if e.boundary {
                *j = 0.0;
            }
        }
    }
    (0..mesh.num_elements())
        .map(|k| mesh.h(k) * mesh.triangles[k].edges.iter().map(|&e| jumps[e]).sum::<f64>())
        .collect()
}

/// `(η²_{S,K}, η²_{S,E(K)})` for every element.
pub fn state_indicators(sol: &KktSolution, data: &ProblemData, opts: EstimatorOptions) -> (Vec<f64>, Vec<f64>) {
    let mesh = sol.mesh();
    let f = Analytic(data.f.clone());
    let (vol, _) = volume_terms(mesh, &[(&f, 1.0), (&sol.control, 1.0)], opts.data_depth);
    (vol, edge_terms(mesh, &sol.state.gradients(), opts.boundary_jumps))
}

/// `(η²_{A,K}, η²_{A,E(K)})` for every element.
pub fn adjoint_indicators(sol: &KktSolution, data: &ProblemData, opts: EstimatorOptions) -> (Vec<f64>, Vec<f64>) {
    let mesh = sol.mesh();
    let yd = Analytic(data.y_d.clone());
    let (vol, _) = volume_terms(mesh, &[(&sol.state, 1.0), (&yd, -1.0)], opts.data_depth);
    (vol, edge_terms(mesh, &sol.adjoint.gradients(), opts.boundary_jumps))
}

/// Per element `(osc²(f + u_h), osc²(y_h - y_d))`.
pub fn oscillations(sol: &KktSolution, data: &ProblemData, opts: EstimatorOptions) -> (Vec<f64>, Vec<f64>) {
    let mesh = sol.mesh();
    let f = Analytic(data.f.clone());
    let yd = Analytic(data.y_d.clone());
    let (_, of) = volume_terms(mesh, &[(&f, 1.0), (&sol.control, 1.0)], opts.data_depth);
    let (_, oy) = volume_terms(mesh, &[(&sol.state, 1.0), (&yd, -1.0)], opts.data_depth);
    (of, oy)
}

pub fn estimate(sol: &KktSolution, data: &ProblemData, opts: EstimatorOptions) -> EstimatorReport {
    let mesh = sol.mesh();
    let f = Analytic(data.f.clone());
    let yd = Analytic(data.y_d.clone());
    let (state_volume, osc_f) = volume_terms(mesh, &[(&f, 1.0), (&sol.control, 1.0)], opts.data_depth);
    let (adjoint_volume, osc_yd) = volume_terms(mesh, &[(&sol.state, 1.0), (&yd, -1.0)], opts.data_depth);
    let state_edge = edge_terms(mesh, &sol.state.gradients(), opts.boundary_jumps);
    let adjoint_edge = edge_terms(mesh, &sol.adjoint.gradients(), opts.boundary_jumps);
    let mut r = EstimatorReport {
        state_volume,
        state_edge,
        adjoint_volume,
        adjoint_edge,
        osc_f,
        osc_yd,
        eta2: 0.0,
        mu2: 0.0,
    };
    r.eta2 = (0..r.len()).map(|k| r.total(k)).sum();
    r.mu2 = (0..r.len()).map(|k| r.volume(k)).sum();
    r
}

/// `δ² = ⫴ŷ_h - y_h⫴²_pw + ⫴p̂_h - p_h⫴²_pw`, evaluated on the fine mesh.
pub fn distance_squared(coarse: &KktSolution, fine: &KktSolution, rel: &RefinementRelation) -> Result<f64> {
    let fm: &Arc<Mesh> = fine.mesh();
    if rel.fine_id != fm.id() || rel.coarse_id != coarse.mesh().id() {
        return Err(Error::MeshMismatch);
    }
    let yc = prolong(&coarse.state, fm, rel)?;
    let pc = prolong(&coarse.adjoint, fm, rel)?;
    let mut s = 0.0;
    for k in 0..fm.num_elements() {
        let area = fm.area(k);
        for (a, b) in [(fine.state.gradient(k), yc.gradient(k)), (fine.adjoint.gradient(k), pc.gradient(k))] {
            let d = [[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]];
            s += area * frob2(&d);
        }
    }
    Ok(s)
}

pub fn distance(coarse: &KktSolution, fine: &KktSolution, rel: &RefinementRelation) -> Result<f64> {
    Ok(sqrt(distance_squared(coarse, fine, rel)?))
}

/// `η_aux² = Σ_K (h_K² ‖g‖²_K + h_K Σ_{E∈E_K} ‖[∇_h v t_E]‖²_E)`.
pub fn eta_aux(vel: &CrField, g: &dyn KinkedSource, opts: EstimatorOptions) -> f64 {
    let mesh = vel.mesh();
    let (vol, _) = volume_terms(mesh, &[(g, 1.0)], opts.data_depth);
    let edge = edge_terms(mesh, &vel.gradients(), opts.boundary_jumps);
    sqrt(vol.iter().sum::<f64>() + edge.iter().sum::<f64>())
}

/// Volume-only variant of [`volume_terms`] for a single source.
pub fn volume_indicator(mesh: &Mesh, g: &dyn KinkedSource, depth: u8) -> Vec<f64> {
    volume_terms(mesh, &[(g, 1.0)], depth).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::femspace::{interpolate, CrSpace};
    use crate::mesh::{make_mesh, DomainSpec};
    use crate::Point;
    use alloc::vec;

    #[test]
    fn single_interior_jump() {
        let m = Arc::new(make_mesh(&DomainSpec::unit_square(1)).unwrap());
        // gradients differ only across the diagonal in the tangential direction
        let grads = vec![[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]];
        let e = m.edges.iter().position(|e| !e.boundary).unwrap();
        let t = m.edge_tangent(e);
        let j = t[0];
        let terms = edge_terms(&m, &grads, false);
        let l = m.edge_length(e);
        for k in 0..2 {
            assert!((terms[k] - m.h(k) * j * j * l).abs() < 1e-14);
        }
    }

    #[test]
    fn affine_field_has_no_interior_jumps() {
        let m = Arc::new(make_mesh(&DomainSpec::unit_square(3)).unwrap());
        let s = CrSpace::new(m.clone(), false);
        let v = interpolate(&s, &|x: Point| [x[0] + 2.0 * x[1], -x[1]]).unwrap();
        assert!(edge_terms(&m, &v.gradients(), false).iter().all(|t| t.abs() < 1e-24));
        assert!(
            eta_aux(
                &v,
                &v,
                EstimatorOptions {
                    boundary_jumps: false,
                    data_depth: 0
                }
            ) > 0.0
        );
    }

    #[test]
    fn oscillation_of_constant_vanishes_and_is_bounded() {
        let m = Arc::new(make_mesh(&DomainSpec::unit_square(2)).unwrap());
        let c = Analytic(Arc::new(|_x: Point| [1.0, 2.0]));
        let (vol, osc) = volume_terms(&m, &[(&c, 1.0)], 0);
        assert!(osc.iter().all(|o| o.abs() < 1e-28));
        for k in 0..m.num_elements() {
            assert!((vol[k] - m.area(k).powi(2) * 5.0).abs() < 1e-14);
        }
        let g = Analytic(Arc::new(|x: Point| [x[0], x[1] * x[1]]));
        let (vol, osc) = volume_terms(&m, &[(&g, 1.0)], 0);
        for k in 0..m.num_elements() {
            assert!(osc[k] <= vol[k] && osc[k] > 0.0);
        }
    }
}
