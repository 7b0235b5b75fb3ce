//! Sparse LDLᵀ factorization for symmetric quasi-definite systems.
//!
//! The interior-point solver factors a matrix of the form
//!
//! ```text
//!     [ H + D + δI      Aᵀ      ]
//!     [ A           -(W + δI)   ]
//! ```
//!
//! whose sparsity pattern is fixed for the lifetime of one solve. The pattern
//! is ordered once with a minimum-degree heuristic, analysed once (elimination
//! tree and column counts) and then refactored numerically on every iteration.
//! The numeric phase is the classic up-looking scheme driven by the elimination
//! tree, with no pivoting: quasi-definite matrices admit a stable LDLᵀ under any
//! symmetric permutation, and pivots whose sign disagrees with the expected
//! inertia are replaced by a small dynamic regularization.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

const NONE: usize = usize::MAX;

/// Greedy minimum-degree ordering of an undirected graph.
///
/// Returns `perm` with `perm[new] = old`. Ties are broken by the lowest node
/// index so the ordering is deterministic.
pub(crate) fn minimum_degree(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(i, j) in edges {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut eliminated = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|i| Reverse((adj[i].len(), i))).collect();
    let mut perm = Vec::with_capacity(n);

    while let Some(Reverse((deg, p))) = heap.pop() {
        if eliminated[p] || deg != adj[p].len() {
            continue;
        }
        eliminated[p] = true;
        perm.push(p);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[p]).into_iter().collect();
        for &a in &nbrs {
            adj[a].remove(&p);
            for &b in &nbrs {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
        for &a in &nbrs {
            heap.push(Reverse((adj[a].len(), a)));
        }
    }
    debug_assert_eq!(perm.len(), n);
    perm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LdlError {
    NotUpperTriangular,
    ZeroPivot(usize),
}

/// Symbolic + numeric LDLᵀ of an upper-triangular CSC matrix.
#[derive(Debug, Clone)]
pub(crate) struct Ldl {
    n: usize,
    ap: Vec<usize>,
    ai: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    // scratch
    y_vals: Vec<f64>,
    y_mark: Vec<bool>,
    y_idx: Vec<usize>,
    elim: Vec<usize>,
    next_space: Vec<usize>,
}

impl Ldl {
    /// Analyse the pattern given as an upper-triangular CSC (`ap`, `ai`).
    pub(crate) fn analyse(n: usize, ap: Vec<usize>, ai: Vec<usize>) -> Result<Self, LdlError> {
        let mut work = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut etree = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &row in &ai[ap[j]..ap[j + 1]] {
                let mut i = row;
                if i > j {
                    return Err(LdlError::NotUpperTriangular);
                }
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
        let nnz = lp[n];
        Ok(Self {
            n,
            ap,
            ai,
            etree,
            lp,
            li: vec![0; nnz],
            lx: vec![0.0; nnz],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            y_vals: vec![0.0; n],
            y_mark: vec![false; n],
            y_idx: vec![0; n],
            elim: vec![0; n],
            next_space: vec![0; n],
        })
    }

    pub(crate) fn nnz_pattern(&self) -> usize {
        self.ai.len()
    }

    /// Numeric factorization of the values `ax` (aligned with the analysed
    /// pattern). `signs[k]` is the expected pivot sign of column `k`; a pivot
    /// with the wrong sign or magnitude below `eps` is replaced by
    /// `signs[k] * delta`. Returns the number of replaced pivots.
    pub(crate) fn factor(
        &mut self,
        ax: &[f64],
        signs: &[f64],
        eps: f64,
        delta: f64,
    ) -> Result<usize, LdlError> {
        let n = self.n;
        debug_assert_eq!(ax.len(), self.ai.len());
        let mut bumped = 0;
        for i in 0..n {
            self.next_space[i] = self.lp[i];
            self.y_mark[i] = false;
            self.y_vals[i] = 0.0;
        }
        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = 0.0;
            for p in self.ap[k]..self.ap[k + 1] {
                let b = self.ai[p];
                if b == k {
                    self.d[k] = ax[p];
                    continue;
                }
                self.y_vals[b] = ax[p];
                if !self.y_mark[b] {
                    self.y_mark[b] = true;
                    self.elim[0] = b;
                    let mut n_elim = 1;
                    let mut next = self.etree[b];
                    while next != NONE && next < k {
                        if self.y_mark[next] {
                            break;
                        }
                        self.y_mark[next] = true;
                        self.elim[n_elim] = next;
                        n_elim += 1;
                        next = self.etree[next];
                    }
                    while n_elim > 0 {
                        n_elim -= 1;
                        self.y_idx[nnz_y] = self.elim[n_elim];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = self.y_idx[i];
                let tmp = self.next_space[c];
                let yc = self.y_vals[c];
                for j in self.lp[c]..tmp {
                    self.y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[tmp] = k;
                self.lx[tmp] = yc * self.dinv[c];
                self.d[k] -= yc * self.lx[tmp];
                self.next_space[c] += 1;
                self.y_vals[c] = 0.0;
                self.y_mark[c] = false;
            }
            if signs[k] * self.d[k] <= eps {
                self.d[k] = signs[k] * delta;
                bumped += 1;
            }
            if self.d[k] == 0.0 {
                return Err(LdlError::ZeroPivot(k));
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(bumped)
    }

    /// Solve `L D Lᵀ x = b` in place.
    pub(crate) fn solve(&self, x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                x[self.li[j]] -= self.lx[j] * xi;
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[j] * x[self.li[j]];
            }
            x[i] = acc;
        }
    }

    /// Pivots of the last factorization, in permuted order.
    #[cfg(test)]
    pub(crate) fn pivots(&self) -> &[f64] {
        &self.d
    }
}

/// A symmetric matrix stored as upper-triangular triplets in the caller's
/// index space, together with the permuted CSC layout used by [`Ldl`].
#[derive(Debug, Clone)]
pub(crate) struct SymSystem {
    pub(crate) n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    /// `slot[e]` is the CSC position of triplet `e` after permutation.
    slot: Vec<usize>,
    perm: Vec<usize>,
    iperm: Vec<usize>,
    ldl: Ldl,
    ax: Vec<f64>,
}

impl SymSystem {
    /// Build from upper triplet coordinates (`rows[e] <= cols[e]`). Every
    /// diagonal entry must be present exactly once so it can be regularized.
    pub(crate) fn new(n: usize, rows: Vec<usize>, cols: Vec<usize>) -> Result<Self, LdlError> {
        let edges: Vec<(usize, usize)> = rows
            .iter()
            .zip(&cols)
            .filter(|(r, c)| r != c)
            .map(|(&r, &c)| (r, c))
            .collect();
        let perm = minimum_degree(n, &edges);
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        // Permuted coordinates, upper triangle.
        let coords: Vec<(usize, usize)> = rows
            .iter()
            .zip(&cols)
            .map(|(&r, &c)| {
                let (pr, pc) = (iperm[r], iperm[c]);
                if pr <= pc {
                    (pr, pc)
                } else {
                    (pc, pr)
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by_key(|&e| (coords[e].1, coords[e].0));
        let mut ap = vec![0usize; n + 1];
        let mut ai = Vec::with_capacity(coords.len());
        let mut slot = vec![0usize; coords.len()];
        let mut last: Option<(usize, usize)> = None;
        for &e in &order {
            let (r, c) = coords[e];
            if last != Some((r, c)) {
                ai.push(r);
                ap[c + 1] += 1;
                last = Some((r, c));
            }
            slot[e] = ai.len() - 1;
        }
        for c in 0..n {
            ap[c + 1] += ap[c];
        }
        let nnz = ai.len();
        let ldl = Ldl::analyse(n, ap, ai)?;
        Ok(Self {
            n,
            rows,
            cols,
            slot,
            perm,
            iperm,
            ldl,
            ax: vec![0.0; nnz],
        })
    }

    /// Factor `M + diag(reg)` where `vals[e]` are the triplet values of `M`.
    /// `signs` is in the caller's index space.
    pub(crate) fn factor(
        &mut self,
        vals: &[f64],
        reg: &[f64],
        signs: &[f64],
        eps: f64,
        delta: f64,
    ) -> Result<usize, LdlError> {
        debug_assert_eq!(self.ax.len(), self.ldl.nnz_pattern());
        self.ax.iter_mut().for_each(|v| *v = 0.0);
        for (e, &v) in vals.iter().enumerate() {
            self.ax[self.slot[e]] += v;
        }
        for i in 0..self.n {
            // Diagonal slot of node i.
            let k = self.iperm[i];
            let pos = self.diag_slot(k);
            self.ax[pos] += reg[i];
        }
        let psigns: Vec<f64> = self.perm.iter().map(|&old| signs[old]).collect();
        self.ldl.factor(&self.ax, &psigns, eps, delta)
    }

    fn diag_slot(&self, k: usize) -> usize {
        // The diagonal is the last entry of its (sorted) column.
        self.ldl.ap[k + 1] - 1
    }

    /// Solve with the current factorization, `b` in the caller's index space.
    pub(crate) fn solve(&self, b: &mut [f64], scratch: &mut Vec<f64>) {
        scratch.clear();
        scratch.extend(self.perm.iter().map(|&old| b[old]));
        self.ldl.solve(scratch);
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = scratch[new];
        }
    }

    /// `y = M x` for the symmetric matrix described by `vals` plus `diag_extra`.
    pub(crate) fn mul(&self, vals: &[f64], diag_extra: &[f64], x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = diag_extra[i] * x[i];
        }
        for (e, &v) in vals.iter().enumerate() {
            let (r, c) = (self.rows[e], self.cols[e]);
            y[r] += v * x[c];
            if r != c {
                y[c] += v * x[r];
            }
        }
    }

    /// Number of pivots of each sign in the last factorization.
    #[cfg(test)]
    pub(crate) fn inertia(&self) -> (usize, usize) {
        let pos = self.ldl.pivots().iter().filter(|&&d| d > 0.0).count();
        (pos, self.n - pos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[i][j]);
        let v = nalgebra::DVector::from_column_slice(b);
        m.lu().solve(&v).unwrap().iter().copied().collect()
    }

    #[test]
    fn quasi_definite_solve_matches_dense() {
        // [ 4 1 | 1 0 ]
        // [ 1 3 | 0 2 ]
        // [ 1 0 |-1 0 ]
        // [ 0 2 | 0 -2]
        let dense = vec![
            vec![4.0, 1.0, 1.0, 0.0],
            vec![1.0, 3.0, 0.0, 2.0],
            vec![1.0, 0.0, -1.0, 0.0],
            vec![0.0, 2.0, 0.0, -2.0],
        ];
        let mut rows = vec![];
        let mut cols = vec![];
        let mut vals = vec![];
        for j in 0..4 {
            for i in 0..=j {
                if dense[i][j] != 0.0 || i == j {
                    rows.push(i);
                    cols.push(j);
                    vals.push(dense[i][j]);
                }
            }
        }
        let mut sys = SymSystem::new(4, rows, cols).unwrap();
        let signs = [1.0, 1.0, -1.0, -1.0];
        let bumped = sys.factor(&vals, &[0.0; 4], &signs, 0.0, 1e-12).unwrap();
        assert_eq!(bumped, 0);
        assert_eq!(sys.inertia(), (2, 2));
        let b = [1.0, -2.0, 0.5, 3.0];
        let mut x = b.to_vec();
        let mut scratch = Vec::new();
        sys.solve(&mut x, &mut scratch);
        let expect = dense_solve(&dense, &b);
        for (a, e) in x.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
        let mut y = vec![0.0; 4];
        sys.mul(&vals, &[0.0; 4], &x, &mut y);
        for (a, e) in y.iter().zip(&b) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn minimum_degree_eliminates_leaves_first() {
        // Star graph: center 0 with leaves 1..=4.
        let edges: Vec<_> = (1..5).map(|i| (0, i)).collect();
        let perm = minimum_degree(5, &edges);
        // The center only ties once a single leaf remains.
        assert!(!perm[..3].contains(&0), "{perm:?}");
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn rejects_lower_triangular_pattern() {
        assert_eq!(
            Ldl::analyse(2, vec![0, 1, 2], vec![0, 1]).map(|_| ()),
            Ok(())
        );
        assert_eq!(
            Ldl::analyse(2, vec![0, 2, 3], vec![0, 1, 1]).map(|_| ()),
            Err(LdlError::NotUpperTriangular)
        );
    }
}
