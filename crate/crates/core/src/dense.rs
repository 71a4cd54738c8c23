//! Small dense linear algebra: null spaces, Cholesky, and restarted GMRES.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{dot_slice, norm_slice, sqrt};
use crate::{Error, Result};

/// Orthonormal basis of `{x : M x = 0}` for a dense `m × n` matrix given by
/// rows, via Householder QR with column pivoting of `Mᵀ`.
pub fn nullspace(m_rows: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let m = m_rows.len();
    // a = Mᵀ, stored by columns: column j is row j of M
    let mut cols: Vec<Vec<f64>> = m_rows.to_vec();
    let mut house: Vec<(Vec<f64>, f64)> = Vec::new();
    let scale = cols.iter().map(|c| norm_slice(c)).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut rank = 0;
    for k in 0..m.min(n) {
        // pivot: column with the largest remaining norm
        let (best, bn) = (k..m)
            .map(|j| (j, norm_slice(&cols[j][k..])))
            .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if bn <= 1e-12 * scale {
            break;
        }
        cols.swap(k, best);
        let x = &cols[k][k..];
        let alpha = if x[0] >= 0.0 { -bn } else { bn };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vn2 = dot_slice(&v, &v);
        let beta = if vn2 > 0.0 { 2.0 / vn2 } else { 0.0 };
        for c in cols.iter_mut().skip(k) {
            let s = beta * dot_slice(&v, &c[k..]);
            for (ci, vi) in c[k..].iter_mut().zip(&v) {
                *ci -= s * vi;
            }
        }
        house.push((v, beta));
        rank += 1;
    }
    // Q e_j for j >= rank
    let mut basis = Vec::with_capacity(n - rank);
    for j in rank..n {
        let mut q = vec![0.0; n];
        q[j] = 1.0;
        for (k, (v, beta)) in house.iter().enumerate().rev() {
            let s = beta * dot_slice(v, &q[k..]);
            for (qi, vi) in q[k..].iter_mut().zip(v) {
                *qi -= s * vi;
            }
        }
        basis.push(q);
    }
    basis
}

/// Solve `A x = b` for symmetric positive definite `A` (rows).
pub fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::ZeroPivot { column: i });
                }
                l[i][i] = sqrt(s);
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i][k] * y[k];
        }
        y[i] /= l[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k][i] * y[k];
        }
        y[i] /= l[i][i];
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresReport {
    pub iterations: usize,
    /// Final `‖b - A x‖ / ‖b‖`.
    pub relative_residual: f64,
}

/// Restarted GMRES with Givens rotations, starting from `x`.
pub fn gmres(
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> GmresReport {
    let bnorm = norm_slice(b).max(f64::MIN_POSITIVE);
    let mut total = 0;
    loop {
        let ax = apply(x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let beta = norm_slice(&r);
        if beta / bnorm <= tol || total >= max_iter {
            return GmresReport {
                iterations: total,
                relative_residual: beta / bnorm,
            };
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|t| t / beta).collect()];
        let mut h: Vec<Vec<f64>> = Vec::new();
        let (mut cs, mut sn): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
        let mut g = vec![beta];
        let mut k = 0;
        while k < restart && total < max_iter {
            let mut w = apply(&v[k]);
            let mut col = vec![0.0; k + 2];
            // modified Gram-Schmidt, applied twice for robustness
            for _ in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let s = dot_slice(&w, vi);
                    col[i] += s;
                    for (wj, vj) in w.iter_mut().zip(vi) {
                        *wj -= s * vj;
                    }
                }
            }
            col[k + 1] = norm_slice(&w);
            for i in 0..k {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let denom = sqrt(col[k] * col[k] + col[k + 1] * col[k + 1]);
            let (c, s) = if denom == 0.0 {
                (1.0, 0.0)
            } else {
                (col[k] / denom, col[k + 1] / denom)
            };
            cs.push(c);
            sn.push(s);
            col[k] = denom;
            let hn = col[k + 1];
            col[k + 1] = 0.0;
            g.push(-s * g[k]);
            g[k] *= c;
            h.push(col);
            total += 1;
            k += 1;
            if (g[k]).abs() / bnorm <= tol || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|t| t / hn).collect());
        }
        // back substitution on the k × k triangle
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[j][i] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, vi) in x.iter_mut().zip(&v[j]) {
                *xi += yj * vi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nullspace_of_rank_deficient_matrix() {
        let m = vec![vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]];
        let z = nullspace(&m, 3);
        assert_eq!(z.len(), 2);
        for q in &z {
            for row in &m {
                assert!(dot_slice(row, q).abs() < 1e-13);
            }
            assert!((norm_slice(q) - 1.0).abs() < 1e-13);
        }
        assert!(dot_slice(&z[0], &z[1]).abs() < 1e-13);
    }

    #[test]
    fn cholesky_and_gmres_agree() {
        let a = vec![vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 2.0]];
        let b = [1.0, 2.0, 3.0];
        let x = cholesky_solve(&a, &b).unwrap();
        let mut y = vec![0.0; 3];
        let rep = gmres(|v| a.iter().map(|r| dot_slice(r, v)).collect(), &b, &mut y, 1e-14, 2, 50);
        assert!(rep.relative_residual <= 1e-14);
        for i in 0..3 {
            assert!((x[i] - y[i]).abs() < 1e-12);
        }
    }
}
