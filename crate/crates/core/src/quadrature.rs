//! Quadrature on triangles and edges, in barycentric coordinates.
//!
//! Weights are normalized to sum to one; multiply by the element area (or
//! edge length) to integrate. Elements can be partitioned along lines where
//! an integrand has a kink (the clamp of an affine function), after which the
//! integrand is polynomial on every cell and the rules are exact.

use alloc::vec::Vec;

/// Barycentric coordinates of a point in a triangle.
pub type Bary = [f64; 3];

/// Degree-2 rule (edge midpoints).
pub const TRI_DEGREE2: [(Bary, f64); 3] = [
    ([0.0, 0.5, 0.5], 1.0 / 3.0),
    ([0.5, 0.0, 0.5], 1.0 / 3.0),
    ([0.5, 0.5, 0.0], 1.0 / 3.0),
];

const A1: f64 = 0.445_948_490_915_964_886;
const W1: f64 = 0.223_381_589_678_011_466;
const A2: f64 = 0.091_576_213_509_770_743;
const W2: f64 = 0.109_951_743_655_321_868;

/// Six-point rule, exact for polynomials of degree four.
pub const TRI_DEGREE4: [(Bary, f64); 6] = [
    ([A1, A1, 1.0 - 2.0 * A1], W1),
    ([A1, 1.0 - 2.0 * A1, A1], W1),
    ([1.0 - 2.0 * A1, A1, A1], W1),
    ([A2, A2, 1.0 - 2.0 * A2], W2),
    ([A2, 1.0 - 2.0 * A2, A2], W2),
    ([1.0 - 2.0 * A2, A2, A2], W2),
];

const G3: f64 = 0.387_298_334_620_741_7; // sqrt(3/5) / 2

/// Three-point Gauss rule on the unit interval (degree five).
pub const EDGE_GAUSS3: [(f64, f64); 3] = [(0.5 - G3, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + G3, 5.0 / 18.0)];

/// A linear functional on barycentric coordinates, `l(λ) = Σ c_i λ_i`.
/// Because the coordinates sum to one this represents any affine function
/// on the triangle; `c_i` is its value at vertex `i`.
pub type Affine = [f64; 3];

#[inline]
pub fn eval_affine(l: &Affine, b: &Bary) -> f64 {
    l[0] * b[0] + l[1] * b[1] + l[2] * b[2]
}

fn lerp(a: &Bary, b: &Bary, t: f64) -> Bary {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
}

fn det3(a: &Bary, b: &Bary, c: &Bary) -> f64 {
    a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0])
}

/// Keep the part of a convex polygon where `sign * l >= 0`.
fn clip(poly: &[Bary], l: &Affine, sign: f64) -> Vec<Bary> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    let n = poly.len();
    for i in 0..n {
        let a = &poly[i];
        let b = &poly[(i + 1) % n];
        let va = sign * eval_affine(l, a);
        let vb = sign * eval_affine(l, b);
        if va >= 0.0 {
            out.push(*a);
        }
        if (va > 0.0 && vb < 0.0) || (va < 0.0 && vb > 0.0) {
            out.push(lerp(a, b, va / (va - vb)));
        }
    }
    out
}

/// Split the triangle `tri` (given by the barycentric coordinates of its
/// corners) into convex cells on which none of `lines` changes sign.
pub fn partition(tri: [Bary; 3], lines: &[Affine]) -> Vec<Vec<Bary>> {
    let mut cells: Vec<Vec<Bary>> = alloc::vec![tri.to_vec()];
    for l in lines {
        let mut next = Vec::with_capacity(cells.len() + 1);
        for cell in cells {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut scale: f64 = 0.0;
            for p in &cell {
                let v = eval_affine(l, p);
                lo = lo.min(v);
                hi = hi.max(v);
                scale = scale.max(v.abs());
            }
            let tol = 1e-14 * scale;
            if lo >= -tol || hi <= tol {
                next.push(cell);
                continue;
            }
            let pos = clip(&cell, l, 1.0);
            let neg = clip(&cell, l, -1.0);
            if pos.len() >= 3 {
                next.push(pos);
            }
            if neg.len() >= 3 {
                next.push(neg);
            }
        }
        cells = next;
    }
    cells
}

/// Uniform subdivision of the reference triangle into `4^depth` pieces.
pub fn subdivide(depth: u8) -> Vec<[Bary; 3]> {
    let mut tris = alloc::vec![[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = lerp(&a, &b, 0.5);
            let bc = lerp(&b, &c, 0.5);
            let ca = lerp(&c, &a, 0.5);
            next.push([a, ab, ca]);
            next.push([ab, b, bc]);
            next.push([ca, bc, c]);
            next.push([ab, bc, ca]);
        }
        tris = next;
    }
    tris
}

/// Visit the quadrature points of an element integral.
///
/// The element is first subdivided `depth` times, every piece is cut along
/// the zero lines of `lines`, and the degree-4 rule is applied on a fan
/// triangulation of each cell. The callback receives the barycentric point
/// and its weight as a fraction of the element area.
pub fn for_each_point<F: FnMut(Bary, f64)>(depth: u8, lines: &[Affine], mut f: F) {
    let pieces = subdivide(depth);
    for tri in pieces {
        let cells = if lines.is_empty() {
            alloc::vec![tri.to_vec()]
        } else {
            partition(tri, lines)
        };
        for cell in cells {
            for_each_point_in_cell(&cell, &mut f);
        }
    }
}

/// Degree-4 rule on a fan triangulation of one convex cell.
pub fn for_each_point_in_cell<F: FnMut(Bary, f64)>(cell: &[Bary], mut f: F) {
    for k in 1..cell.len() - 1 {
        let (a, b, c) = (&cell[0], &cell[k], &cell[k + 1]);
        let frac = det3(a, b, c).abs();
        if frac == 0.0 {
            continue;
        }
        for (xi, w) in TRI_DEGREE4.iter() {
            let p = [
                xi[0] * a[0] + xi[1] * b[0] + xi[2] * c[0],
                xi[0] * a[1] + xi[1] * b[1] + xi[2] * c[1],
                xi[0] * a[2] + xi[1] * b[2] + xi[2] * c[2],
            ];
            f(p, w * frac);
        }
    }
}

/// True when the affine function changes sign strictly inside the triangle.
pub fn crosses(l: &Affine) -> bool {
    let lo = l[0].min(l[1]).min(l[2]);
    let hi = l[0].max(l[1]).max(l[2]);
    let scale = lo.abs().max(hi.abs());
    lo < -1e-14 * scale && hi > 1e-14 * scale
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate_poly(depth: u8, lines: &[Affine], f: impl Fn(&Bary) -> f64) -> f64 {
        let mut s = 0.0;
        for_each_point(depth, lines, |b, w| s += w * f(&b));
        s
    }

    #[test]
    fn degree4_rule_is_exact_on_monomials() {
        // ∫ λ0^a λ1^b λ2^c / |K| = 2 a! b! c! / (a+b+c+2)!
        let fact = |n: u32| (1..=n).product::<u32>() as f64;
        for a in 0..=4u32 {
            for b in 0..=(4 - a) {
                for c in 0..=(4 - a - b) {
                    let exact = 2.0 * fact(a) * fact(b) * fact(c) / fact(a + b + c + 2);
                    let mut s = 0.0;
                    for (p, w) in TRI_DEGREE4.iter() {
                        s += w * p[0].powi(a as i32) * p[1].powi(b as i32) * p[2].powi(c as i32);
                    }
                    assert!((s - exact).abs() < 1e-14, "{a}{b}{c}: {s} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn partition_preserves_area_and_is_exact() {
        let lines = [[0.3, -0.7, 0.2], [-0.1, 0.4, 0.05]];
        let area = integrate_poly(1, &lines, |_| 1.0);
        assert!((area - 1.0).abs() < 1e-14);
        // λ0² integrates to 1/6 of the area
        let m = integrate_poly(0, &lines, |b| b[0] * b[0]);
        assert!((m - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn kink_integral_matches_closed_form() {
        // ∫ max(0, λ0 - 1/2) / |K| = 2 ∫_{1/2}^1 (t - 1/2)(1 - t) dt = 1/24
        let l = [0.5, -0.5, -0.5];
        let s = integrate_poly(0, &[l], |b| (b[0] - 0.5).max(0.0));
        assert!((s - 1.0 / 24.0).abs() < 1e-14, "{s}");
    }

    #[test]
    fn edge_rule_integrates_quintics() {
        let s: f64 = EDGE_GAUSS3.iter().map(|(t, w)| w * t.powi(5)).sum();
        assert!((s - 1.0 / 6.0).abs() < 1e-14);
    }
}
