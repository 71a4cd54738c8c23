//! Sanity ratios of the embeddings, the discrete jump control and the
//! companion operator on random fields, and the exact identities of the
//! interpolation `I_h` from a refinement.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::femspace::{
    broken_norms, companion, companion_diagnostics, cr_norms, frob2, interpolate_fine, jump_control_ratio, prolong, BrokenField, CrField,
    CrSpace,
};
use crate::math::sqrt;
use crate::mesh::{bisect, make_mesh, DomainSpec, Mesh, RefinementRelation};
use crate::quadrature::TRI_DEGREE4;
use crate::Result;

/// Field with free values drawn uniformly from `[-1, 1]`.
pub fn random_cr_field(space: &CrSpace, rng: &mut ChaCha8Rng) -> CrField {
    let x: Vec<f64> = (0..space.num_free()).map(|_| rng.random_range(-1.0..=1.0)).collect();
    CrField::from_free(space, &x)
}

/// Broken-affine field with independent random vertex values per element.
pub fn random_broken_field(mesh: &Arc<Mesh>, rng: &mut ChaCha8Rng) -> BrokenField {
    let vertex_values = (0..mesh.num_elements())
        .map(|_| {
            let mut v = [[0.0; 2]; 3];
            for p in v.iter_mut().flatten() {
                *p = rng.random_range(-1.0..=1.0);
            }
            v
        })
        .collect();
    BrokenField {
        mesh: mesh.clone(),
        vertex_values,
    }
}

/// `‖v‖_{L⁴}` of a CR field; the degree-4 rule integrates `|v|⁴` exactly.
pub fn l4_norm(v: &CrField) -> f64 {
    let mesh = v.mesh();
    let mut s = 0.0;
    for k in 0..mesh.num_elements() {
        for (b, w) in TRI_DEGREE4.iter() {
            let x = v.eval_local(k, b);
            let q = x[0] * x[0] + x[1] * x[1];
            s += mesh.area(k) * w * q * q;
        }
    }
    sqrt(sqrt(s))
}

/// Maxima over the random samples of one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropertyRow {
    pub level: usize,
    pub nelem: usize,
    /// `‖v_h‖ / ⫴v_h⫴_pw`.
    pub poincare: f64,
    /// `‖v_h‖_{L⁴} / ⫴v_h⫴_pw`.
    pub sobolev: f64,
    /// `‖v_h + v̂_h‖ / ⫴v_h + v̂_h⫴_pw` for `v_h` coarse and `v̂_h` on a refinement.
    pub nested_poincare: f64,
    /// [`jump_control_ratio`] of random broken-affine fields.
    pub jump_control: f64,
    /// `Σ_K (|K|⁻¹‖v - Jv‖²_K + ‖∇_h(v - Jv)‖²_K) / Σ_K |K|^{1/2} Σ_E ‖[∇_h v]t_E‖²_E`.
    pub companion: f64,
    /// `max_K |∫_K (v - Jv)|`.
    pub companion_mean_defect: f64,
}

/// Sample the ratios on the uniform meshes `n0 · 2^l` of `domain`, with
/// `samples` fields per level from a generator seeded by `seed` and `l`.
/// The refinement for the nested ratio bisects a random half of the elements.
pub fn check_properties(domain: &DomainSpec, levels: &[usize], n0: usize, seed: u64, samples: usize) -> Result<Vec<PropertyRow>> {
    let mut rows = Vec::new();
    for &l in levels {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (l as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut spec = domain.clone();
        spec.n = n0 << l;
        let mesh = Arc::new(make_mesh(&spec)?);
        let marked: Vec<usize> = (0..mesh.num_elements()).filter(|_| rng.random_bool(0.5)).collect();
        let (fine, rel) = bisect(&mesh, &marked)?;
        let fine = Arc::new(fine);
        let space = CrSpace::new(mesh.clone(), true);
        let fspace = CrSpace::new(fine.clone(), true);
        let mut row = PropertyRow {
            level: l,
            nelem: mesh.num_elements(),
            poincare: 0.0,
            sobolev: 0.0,
            nested_poincare: 0.0,
            jump_control: 0.0,
            companion: 0.0,
            companion_mean_defect: 0.0,
        };
        for _ in 0..samples {
            let v = random_cr_field(&space, &mut rng);
            let (l2, h1) = cr_norms(&v, None)?;
            row.poincare = row.poincare.max(l2 / h1);
            row.sobolev = row.sobolev.max(l4_norm(&v) / h1);

            let vf = random_cr_field(&fspace, &mut rng);
            let mut minus = prolong(&v, &fine, &rel)?;
            minus.vertex_values.iter_mut().flatten().flatten().for_each(|x| *x = -*x);
            let (l2, h1) = broken_norms(&vf.to_broken(), Some(&minus))?;
            row.nested_poincare = row.nested_poincare.max(l2 / h1);

            row.jump_control = row.jump_control.max(jump_control_ratio(&random_broken_field(&mesh, &mut rng)));

            let d = companion_diagnostics(&v, &companion(&v));
            row.companion = row.companion.max(d.lhs / d.jump_sum);
            row.companion_mean_defect = row.companion_mean_defect.max(d.value_mean_defect);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Defects of `I_h v̂` for `v̂` on a refinement, each zero in exact arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolationDefects {
    /// `max_K |∫_K ∇_h(v̂ - I_h v̂)|`.
    pub integral_mean: f64,
    /// `max_K |div_h I_h v̂ - Π₀ div_h v̂|_K`.
    pub divergence: f64,
    /// `max |I_h v̂ - v̂|` over the midpoint values on unrefined elements.
    pub locality: f64,
    /// `|⫴v̂⫴² - ⫴I_h v̂⫴² - ⫴v̂ - I_h v̂⫴²| / ⫴v̂⫴²`.
    pub pythagoras: f64,
}

pub fn interpolation_defects(space: &CrSpace, fine: &CrField, rel: &RefinementRelation) -> Result<InterpolationDefects> {
    let ih = interpolate_fine(space, fine, rel)?;
    let cm = &space.mesh;
    let fm = fine.mesh();
    let mut d = InterpolationDefects {
        integral_mean: 0.0,
        divergence: 0.0,
        locality: 0.0,
        pythagoras: 0.0,
    };
    let (mut nf, mut ni, mut nd) = (0.0, 0.0, 0.0);
    for k in 0..cm.num_elements() {
        let gc = ih.gradient(k);
        let mut moment = [[0.0; 2]; 2];
        let mut div = 0.0;
        for &c in &rel.children[k] {
            let a = fm.area(c);
            let gf = fine.gradient(c);
            let diff = [
                [gf[0][0] - gc[0][0], gf[0][1] - gc[0][1]],
                [gf[1][0] - gc[1][0], gf[1][1] - gc[1][1]],
            ];
            for i in 0..2 {
                for j in 0..2 {
                    moment[i][j] += a * diff[i][j];
                }
            }
            div += a * (gf[0][0] + gf[1][1]);
            nf += a * frob2(&gf);
            nd += a * frob2(&diff);
        }
        ni += cm.area(k) * frob2(&gc);
        d.integral_mean = moment.iter().flatten().fold(d.integral_mean, |m, x| m.max(x.abs()));
        d.divergence = d.divergence.max((gc[0][0] + gc[1][1] - div / cm.area(k)).abs());
        if !rel.refined[k] {
            let c = rel.children[k][0];
            let (a, b) = (ih.local(k), fine_local_matching(fine, c, &ih, k));
            for i in 0..3 {
                d.locality = d.locality.max((a[i][0] - b[i][0]).abs()).max((a[i][1] - b[i][1]).abs());
            }
        }
    }
    d.pythagoras = if nf > 0.0 { (nf - ni - nd).abs() / nf } else { 0.0 };
    Ok(d)
}

/// Midpoint values of fine element `c` in the local edge order of coarse
/// element `k`, which it equals as a set.
fn fine_local_matching(fine: &CrField, c: usize, coarse: &CrField, k: usize) -> [crate::Point; 3] {
    let (fm, cm) = (fine.mesh(), coarse.mesh());
    let mut out = [[f64::NAN; 2]; 3];
    for (i, &ce) in cm.triangles[k].edges.iter().enumerate() {
        let mid = cm.edge_midpoint(ce);
        for &fe in &fm.triangles[c].edges {
            let m = fm.edge_midpoint(fe);
            if (m[0] - mid[0]).abs() + (m[1] - mid[1]).abs() < 1e-14 {
                out[i] = fine.values[fe];
            }
        }
    }
    out
}

/// `max_K |∫_K div_h v|`.
pub fn divergence_defect(v: &CrField) -> f64 {
    let m = v.mesh();
    (0..m.num_elements())
        .map(|k| (m.area(k) * v.divergence(k)).abs())
        .fold(0.0, f64::max)
}
