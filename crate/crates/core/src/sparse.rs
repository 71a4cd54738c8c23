//! Coordinate-format operators and a sparse LDLᵀ factorization.
//!
//! The factorization is the up-looking elimination-tree algorithm. It needs
//! no pivoting for quasi-definite matrices `[[H, Cᵀ], [C, -G]]` with `H` and
//! `G` positive definite, which is the form the saddle-point solver produces.

use alloc::vec;
use alloc::vec::Vec;

use crate::mesh::NONE;
use crate::{Error, Point, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    pub nrows: usize,
    pub ncols: usize,
    /// `(row, col, value)`; sorted and duplicate-free after [`finalize`](Self::finalize).
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseOperator {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols);
        self.entries.push((r, c, v));
    }

    /// Sort by `(row, col)` and sum duplicates. Exact zeros are kept so the
    /// sparsity pattern is independent of cancellation.
    pub fn finalize(&mut self) {
        self.entries.sort_by_key(|a| (a.0, a.1));
        let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(self.entries.len());
        for &(r, c, v) in &self.entries {
            match out.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => out.push((r, c, v)),
            }
        }
        self.entries = out;
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for &(r, c, v) in &self.entries {
            y[c] += v * x[r];
        }
        y
    }

    /// `xᵀ M x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.entries.iter().map(|&(r, c, v)| x[r] * v * x[c]).sum()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries.iter().filter(|e| e.0 == r && e.1 == c).map(|e| e.2).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for &(r, c, v) in &self.entries {
            d[r][c] += v;
        }
        d
    }

    /// `max |M_ij - M_ji|`; requires a finalized square operator.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut t: Vec<(usize, usize, f64)> = self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect();
        t.sort_by_key(|a| (a.0, a.1));
        let (mut i, mut j) = (0, 0);
        while i < self.entries.len() || j < t.len() {
            let a = self.entries.get(i).map(|e| (e.0, e.1));
            let b = t.get(j).map(|e| (e.0, e.1));
            match (a, b) {
                (Some(x), Some(y)) if x == y => {
                    worst = worst.max((self.entries[i].2 - t[j].2).abs());
                    i += 1;
                    j += 1;
                }
                (Some(x), Some(y)) if x < y => {
                    worst = worst.max(self.entries[i].2.abs());
                    i += 1;
                }
                (Some(_), None) => {
                    worst = worst.max(self.entries[i].2.abs());
                    i += 1;
                }
                _ => {
                    worst = worst.max(t[j].2.abs());
                    j += 1;
                }
            }
        }
        worst
    }
}

/// Nested-dissection ordering of a graph whose nodes carry coordinates.
///
/// Nodes are split at the median of the longest bounding-box axis; the
/// separator is the set of right-hand nodes adjacent to the left half and is
/// numbered after both halves. Returns `perm` with `perm[new] = old`.
pub fn nested_dissection(adj: &[Vec<usize>], coords: &[Point]) -> Vec<usize> {
    let n = adj.len();
    let mut perm = Vec::with_capacity(n);
    let mut side = vec![0u8; n];
    let nodes: Vec<usize> = (0..n).collect();
    dissect(adj, coords, nodes, &mut side, &mut perm);
    perm
}

const LEAF: usize = 48;

fn dissect(adj: &[Vec<usize>], coords: &[Point], mut nodes: Vec<usize>, side: &mut [u8], perm: &mut Vec<usize>) {
    if nodes.len() <= LEAF {
        perm.extend_from_slice(&nodes);
        return;
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for &v in &nodes {
        for d in 0..2 {
            lo[d] = lo[d].min(coords[v][d]);
            hi[d] = hi[d].max(coords[v][d]);
        }
    }
    let axis = if hi[0] - lo[0] >= hi[1] - lo[1] { 0 } else { 1 };
    nodes.sort_by(|&a, &b| coords[a][axis].total_cmp(&coords[b][axis]).then(a.cmp(&b)));
    let half = nodes.len() / 2;
    // tag: 1 = left, 2 = right, 0 = outside this subproblem
    for (i, &v) in nodes.iter().enumerate() {
        side[v] = if i < half { 1 } else { 2 };
    }
    let (mut left, mut right, mut sep) = (Vec::with_capacity(half), Vec::new(), Vec::new());
    for &v in &nodes {
        if side[v] == 1 {
            left.push(v);
        } else if adj[v].iter().any(|&u| side[u] == 1) {
            sep.push(v);
        } else {
            right.push(v);
        }
    }
    for &v in &nodes {
        side[v] = 0;
    }
    if left.is_empty() || right.is_empty() {
        perm.extend_from_slice(&nodes);
        return;
    }
    dissect(adj, coords, left, side, perm);
    dissect(adj, coords, right, side, perm);
    perm.extend_from_slice(&sep);
}

/// Sparse `P A Pᵀ = L D Lᵀ` with unit lower-triangular `L` stored by columns.
#[derive(Debug, Clone)]
pub struct Ldl {
    n: usize,
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

impl Ldl {
    /// Factor a symmetric operator given with both triangles. `perm[new] = old`.
    pub fn factor(a: &SparseOperator, perm: Vec<usize>) -> Result<Self> {
        let n = a.nrows;
        debug_assert_eq!(perm.len(), n);
        let mut pinv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            pinv[old] = new;
        }
        // upper triangle of the permuted matrix, by columns
        let mut count = vec![0usize; n + 1];
        for &(r, c, _) in &a.entries {
            let (i, j) = (pinv[r], pinv[c]);
            if i <= j {
                count[j + 1] += 1;
            }
        }
        for j in 0..n {
            count[j + 1] += count[j];
        }
        let ap = count.clone();
        let mut next = count;
        let mut ai = vec![0; ap[n]];
        let mut ax = vec![0.0; ap[n]];
        for &(r, c, v) in &a.entries {
            let (i, j) = (pinv[r], pinv[c]);
            if i <= j {
                ai[next[j]] = i;
                ax[next[j]] = v;
                next[j] += 1;
            }
        }

        // elimination tree and column counts
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for p in ap[j]..ap[j + 1] {
                let mut i = ai[p];
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let mut li = vec![0usize; lp[n]];
        let mut lx = vec![0.0; lp[n]];
        let mut d = vec![0.0; n];
        let mut dinv = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut marked = vec![false; n];
        let mut pattern = Vec::with_capacity(n);
        let mut stack = Vec::with_capacity(n);
        let mut fill = lp.clone();

        for k in 0..n {
            pattern.clear();
            for p in ap[k]..ap[k + 1] {
                let b = ai[p];
                if b == k {
                    d[k] += ax[p];
                    continue;
                }
                y[b] += ax[p];
                if marked[b] {
                    continue;
                }
                stack.clear();
                let mut i = b;
                while i != NONE && i < k && !marked[i] {
                    marked[i] = true;
                    stack.push(i);
                    i = etree[i];
                }
                while let Some(s) = stack.pop() {
                    pattern.push(s);
                }
            }
            for &c in pattern.iter().rev() {
                let yc = y[c];
                for q in lp[c]..fill[c] {
                    y[li[q]] -= lx[q] * yc;
                }
                let l = yc * dinv[c];
                li[fill[c]] = k;
                lx[fill[c]] = l;
                fill[c] += 1;
                d[k] -= yc * l;
                y[c] = 0.0;
                marked[c] = false;
            }
            if d[k] == 0.0 || !d[k].is_finite() {
                return Err(Error::ZeroPivot { column: perm[k] });
            }
            dinv[k] = 1.0 / d[k];
        }
        Ok(Self { n, perm, lp, li, lx, d })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_l(&self) -> usize {
        self.lp[self.n]
    }

    /// Diagonal of `D` in factor order.
    pub fn diagonal(&self) -> &[f64] {
        &self.d
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..self.n {
            let xi = x[i];
            for q in self.lp[i]..self.lp[i + 1] {
                x[self.li[q]] -= self.lx[q] * xi;
            }
        }
        for i in 0..self.n {
            x[i] /= self.d[i];
        }
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for q in self.lp[i]..self.lp[i + 1] {
                s -= self.lx[q] * x[self.li[q]];
            }
            x[i] = s;
        }
        let mut out = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }
}

/// Adjacency lists of the pattern of a square operator, without self loops.
pub fn adjacency(a: &SparseOperator) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); a.nrows];
    for &(r, c, _) in &a.entries {
        if r != c {
            adj[r].push(c);
            adj[c].push(r);
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    adj
}
