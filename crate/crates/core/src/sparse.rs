//! Sparse symmetric matrices and a fill-reducing sparse Cholesky.
//!
//! Matrices keep only the upper triangle (diagonal included) in compressed
//! column form. Factorization is split into a symbolic phase, which depends
//! only on the nonzero pattern and can be reused across value changes, and
//! an up-looking numeric phase.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative pivot tolerance: a pivot must exceed this times the largest
/// diagonal entry.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

const NONE: usize = usize::MAX;

/// Symmetric matrix stored as its upper triangle in CSC form.
///
/// The pattern may contain explicit zeros; builders keep structurally
/// present entries so that the pattern stays fixed while values change.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSymMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    /// Assembles from `(row, col, value)` triplets. Entries below the
    /// diagonal are mirrored into the upper triangle; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("matrix dimension must be positive".into()));
        }
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(Error::IndexOutOfRange { row: r, col: c });
            }
            entries.push((r.min(c), r.max(c), v));
        }
        // column-major order for CSC
        entries.sort_by_key(|a| (a.1, a.0));
        let mut col_ptr = vec![0; n + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            last = Some((r, c));
            row_idx.push(r);
            values.push(v);
            col_ptr[c + 1] += 1;
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        Ok(SparseSymMatrix {
            n,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let triplets: Vec<_> = diag.iter().enumerate().map(|(k, &v)| (k, k, v)).collect();
        Self::from_triplets(diag.len(), &triplets).expect("diagonal is well formed")
    }

    /// Upper triangle of a dense symmetric matrix; zeros are dropped except on
    /// the diagonal.
    pub fn from_dense(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        let mut triplets = Vec::new();
        for c in 0..a.ncols() {
            for r in 0..=c {
                if r == c || a[(r, c)] != 0.0 {
                    triplets.push((r, c, a[(r, c)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), &triplets)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored entries in the upper triangle.
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Nonzeros of the full symmetric matrix (both triangles).
    pub fn nnz_full(&self) -> usize {
        let diag = (0..self.n).filter(|&c| self.find(c, c).is_some()).count();
        2 * self.nnz() - diag
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to values in storage order; the pattern is fixed.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn same_pattern(&self, other: &SparseSymMatrix) -> bool {
        self.n == other.n && self.col_ptr == other.col_ptr && self.row_idx == other.row_idx
    }

    fn find(&self, r: usize, c: usize) -> Option<usize> {
        let (r, c) = (r.min(c), r.max(c));
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        self.row_idx[range.clone()]
            .binary_search(&r)
            .ok()
            .map(|k| range.start + k)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.find(r, c).map_or(0.0, |p| self.values[p])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.get(k, k)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Iterates `(row, col, value)` over the stored upper triangle.
    pub fn iter_upper(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |p| (self.row_idx[p], c, self.values[p]))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, x.len())?;
        let mut y = vec![0.0; self.n];
        for (r, c, v) in self.iter_upper() {
            y[r] += v * x[c];
            if r != c {
                y[c] += v * x[r];
            }
        }
        Ok(y)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for (r, c, v) in self.iter_upper() {
            a[(r, c)] = v;
            a[(c, r)] = v;
        }
        a
    }

    /// Both triangles in row-compressed form, for row-wise neighbor scans.
    pub fn full_rows(&self) -> FullRows {
        let mut counts = vec![0usize; self.n + 1];
        for (r, c, _) in self.iter_upper() {
            counts[r + 1] += 1;
            if r != c {
                counts[c + 1] += 1;
            }
        }
        for k in 0..self.n {
            counts[k + 1] += counts[k];
        }
        let mut next = counts.clone();
        let total = counts[self.n];
        let mut cols = vec![0; total];
        let mut vals = vec![0.0; total];
        let mut place = |row: usize, col: usize, v: f64| {
            let p = next[row];
            next[row] += 1;
            cols[p] = col;
            vals[p] = v;
        };
        for (r, c, v) in self.iter_upper() {
            place(r, c, v);
            if r != c {
                place(c, r, v);
            }
        }
        let mut rows = FullRows {
            row_ptr: counts,
            col_idx: cols,
            values: vals,
        };
        rows.sort_rows();
        rows
    }

    /// Coordinate dump, one `row col value` line per stored upper-triangle
    /// entry with 1-based indices, preceded by a `% n nnz` header.
    pub fn to_coordinate_text(&self) -> String {
        let mut out = format!("% symmetric-upper {} {}\n", self.n, self.nnz());
        for (r, c, v) in self.iter_upper() {
            out.push_str(&format!("{} {} {}\n", r + 1, c + 1, crate::io::fmt_f64(v)));
        }
        out
    }
}

/// Row-compressed storage of a full symmetric matrix.
#[derive(Clone, Debug)]
pub struct FullRows {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl FullRows {
    fn sort_rows(&mut self) {
        for r in 0..self.row_ptr.len() - 1 {
            let range = self.row_ptr[r]..self.row_ptr[r + 1];
            let mut pairs: Vec<(usize, f64)> = range.clone().map(|p| (self.col_idx[p], self.values[p])).collect();
            pairs.sort_by_key(|p| p.0);
            for (p, (c, v)) in range.zip(pairs) {
                self.col_idx[p] = c;
                self.values[p] = v;
            }
        }
    }

    pub fn n(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// `(col, value)` pairs of row `r`, diagonal included, columns ascending.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |p| (self.col_idx[p], self.values[p]))
    }

    pub fn diag(&self, r: usize) -> f64 {
        self.row(r).find(|&(c, _)| c == r).map_or(0.0, |(_, v)| v)
    }
}

/// `x^T Q y`, summed over stored nonzeros.
pub fn quad_form(q: &SparseSymMatrix, x: &[f64], y: &[f64]) -> Result<f64> {
    check_len(q.n, x.len())?;
    check_len(q.n, y.len())?;
    let mut total = 0.0;
    for (r, c, v) in q.iter_upper() {
        total += if r == c {
            v * x[r] * y[r]
        } else {
            v * (x[r] * y[c] + x[c] * y[r])
        };
    }
    Ok(total)
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Elimination order used by the symbolic phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ordering {
    Natural,
    MinimumDegree,
}

/// Pattern-only analysis: ordering, elimination tree and column counts of
/// the factor. Reusable for any matrix with the same pattern.
#[derive(Clone, Debug)]
pub struct SymbolicCholesky {
    n: usize,
    a_col_ptr: Vec<usize>,
    a_row_idx: Vec<usize>,
    perm: Vec<usize>,
    // permuted upper pattern C = P A P^T and where each C entry comes from in A
    c_col_ptr: Vec<usize>,
    c_row_idx: Vec<usize>,
    c_source: Vec<usize>,
    parent: Vec<usize>,
    l_col_ptr: Vec<usize>,
}

impl SymbolicCholesky {
    pub fn analyze(a: &SparseSymMatrix, ordering: Ordering) -> Self {
        let n = a.n;
        let perm = match ordering {
            Ordering::Natural => (0..n).collect(),
            Ordering::MinimumDegree => minimum_degree(a),
        };
        let mut inv = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }

        let mut permuted: Vec<(usize, usize, usize)> = (0..n)
            .flat_map(|c| (a.col_ptr[c]..a.col_ptr[c + 1]).map(move |p| (p, c)))
            .map(|(p, c)| {
                let (r2, c2) = (inv[a.row_idx[p]], inv[c]);
                (r2.min(c2), r2.max(c2), p)
            })
            .collect();
        permuted.sort_by_key(|x| (x.1, x.0));
        let mut c_col_ptr = vec![0; n + 1];
        let mut c_row_idx = Vec::with_capacity(permuted.len());
        let mut c_source = Vec::with_capacity(permuted.len());
        for (r, c, p) in permuted {
            c_col_ptr[c + 1] += 1;
            c_row_idx.push(r);
            c_source.push(p);
        }
        for c in 0..n {
            c_col_ptr[c + 1] += c_col_ptr[c];
        }

        let parent = elimination_tree(n, &c_col_ptr, &c_row_idx);

        let mut counts = vec![1usize; n];
        let mut stack = vec![0; n];
        let mut mark = vec![NONE; n];
        for k in 0..n {
            let top = ereach(k, &c_col_ptr, &c_row_idx, &parent, &mut stack, &mut mark);
            for &i in &stack[top..] {
                counts[i] += 1;
            }
        }
        let mut l_col_ptr = vec![0; n + 1];
        for k in 0..n {
            l_col_ptr[k + 1] = l_col_ptr[k] + counts[k];
        }

        SymbolicCholesky {
            n,
            a_col_ptr: a.col_ptr.clone(),
            a_row_idx: a.row_idx.clone(),
            perm,
            c_col_ptr,
            c_row_idx,
            c_source,
            parent,
            l_col_ptr,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Nonzeros in the factor, diagonal included.
    pub fn factor_nnz(&self) -> usize {
        self.l_col_ptr[self.n]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn matches(&self, a: &SparseSymMatrix) -> bool {
        a.n == self.n && a.col_ptr == self.a_col_ptr && a.row_idx == self.a_row_idx
    }

    /// Numeric factorization of `a`, which must share the analyzed pattern.
    pub fn factor(&self, a: &SparseSymMatrix) -> Result<CholeskyFactor> {
        if !self.matches(a) {
            return Err(Error::Validation(
                "matrix pattern differs from the analyzed pattern".into(),
            ));
        }
        let n = self.n;
        let max_diag = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = PIVOT_TOLERANCE * max_diag;

        let nnz = self.factor_nnz();
        let mut l_row = vec![0usize; nnz];
        let mut l_val = vec![0.0f64; nnz];
        let mut next: Vec<usize> = self.l_col_ptr[..n].to_vec();
        let mut x = vec![0.0f64; n];
        let mut stack = vec![0; n];
        let mut mark = vec![NONE; n];

        for k in 0..n {
            let top = ereach(k, &self.c_col_ptr, &self.c_row_idx, &self.parent, &mut stack, &mut mark);
            for p in self.c_col_ptr[k]..self.c_col_ptr[k + 1] {
                x[self.c_row_idx[p]] = a.values[self.c_source[p]];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &stack[top..] {
                let lki = x[i] / l_val[self.l_col_ptr[i]];
                x[i] = 0.0;
                for p in self.l_col_ptr[i] + 1..next[i] {
                    x[l_row[p]] -= l_val[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                l_row[p] = k;
                l_val[p] = lki;
            }
            if !(d > tol) {
                return Err(Error::NotPositiveDefinite { step: k, pivot: d });
            }
            let p = next[k];
            next[k] += 1;
            l_row[p] = k;
            l_val[p] = d.sqrt();
        }

        Ok(CholeskyFactor {
            n,
            perm: self.perm.clone(),
            l_col_ptr: self.l_col_ptr.clone(),
            l_row_idx: l_row,
            l_values: l_val,
        })
    }
}

/// Lower-triangular factor `L` with `P Q P^T = L L^T`; each column stores its
/// diagonal first.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    n: usize,
    perm: Vec<usize>,
    l_col_ptr: Vec<usize>,
    l_row_idx: Vec<usize>,
    l_values: Vec<f64>,
}

/// Analyzes with a minimum-degree ordering and factors in one call.
pub fn cholesky(q: &SparseSymMatrix) -> Result<CholeskyFactor> {
    SymbolicCholesky::analyze(q, Ordering::MinimumDegree).factor(q)
}

impl CholeskyFactor {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `perm[k]` is the original index eliminated at step `k`.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|k| self.l_values[self.l_col_ptr[k]].ln()).sum::<f64>()
    }

    /// Dense copy of `L` (in permuted coordinates).
    pub fn lower_dense(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for c in 0..self.n {
            for p in self.l_col_ptr[c]..self.l_col_ptr[c + 1] {
                l[(self.l_row_idx[p], c)] = self.l_values[p];
            }
        }
        l
    }

    /// Dense `P^T L L^T P`, which should equal the factored matrix.
    pub fn reconstruct_dense(&self) -> DMatrix<f64> {
        let l = self.lower_dense();
        let llt = &l * l.transpose();
        DMatrix::from_fn(self.n, self.n, |r, c| {
            let (pr, pc) = (self.inverse_index(r), self.inverse_index(c));
            llt[(pr, pc)]
        })
    }

    fn inverse_index(&self, original: usize) -> usize {
        self.perm.iter().position(|&p| p == original).expect("valid index")
    }

    fn lower_solve_in_place(&self, y: &mut [f64]) {
        for c in 0..self.n {
            let start = self.l_col_ptr[c];
            y[c] /= self.l_values[start];
            let yc = y[c];
            for p in start + 1..self.l_col_ptr[c + 1] {
                y[self.l_row_idx[p]] -= self.l_values[p] * yc;
            }
        }
    }

    fn upper_solve_in_place(&self, y: &mut [f64]) {
        for c in (0..self.n).rev() {
            let start = self.l_col_ptr[c];
            let mut acc = y[c];
            for p in start + 1..self.l_col_ptr[c + 1] {
                acc -= self.l_values[p] * y[self.l_row_idx[p]];
            }
            y[c] = acc / self.l_values[start];
        }
    }

    /// Solves `Q x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, rhs.len())?;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        self.lower_solve_in_place(&mut y);
        self.upper_solve_in_place(&mut y);
        let mut x = vec![0.0; self.n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        Ok(x)
    }

    /// Maps standard-normal `z` to a draw from `N(0, Q^{-1})` by solving
    /// `L^T P x = z`.
    pub fn transform_standard_normal(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, z.len())?;
        let mut v = z.to_vec();
        self.upper_solve_in_place(&mut v);
        let mut x = vec![0.0; self.n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = v[k];
        }
        Ok(x)
    }

    pub fn sample_gaussian<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.n).map(|_| rng.sample(StandardNormal)).collect();
        self.transform_standard_normal(&z).expect("length matches")
    }
}

/// Draw from `N(0, Q^{-1})` given a factor of `Q`.
pub fn sample_gaussian_precision<R: Rng + ?Sized>(f: &CholeskyFactor, rng: &mut R) -> Vec<f64> {
    f.sample_gaussian(rng)
}

fn elimination_tree(n: usize, col_ptr: &[usize], row_idx: &[usize]) -> Vec<usize> {
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for &row in &row_idx[col_ptr[k]..col_ptr[k + 1]] {
            let mut i = row;
            while i != NONE && i < k {
                let next = ancestor[i];
                ancestor[i] = k;
                if next == NONE {
                    parent[i] = k;
                }
                i = next;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of `L` (excluding the diagonal), written to
/// `stack[top..]` in topological order. Returns `top`.
fn ereach(
    k: usize,
    col_ptr: &[usize],
    row_idx: &[usize],
    parent: &[usize],
    stack: &mut [usize],
    mark: &mut [usize],
) -> usize {
    let n = stack.len();
    let mut top = n;
    mark[k] = k;
    for &row in &row_idx[col_ptr[k]..col_ptr[k + 1]] {
        let mut i = row;
        if i > k {
            continue;
        }
        let mut len = 0;
        while mark[i] != k {
            stack[len] = i;
            len += 1;
            mark[i] = k;
            i = parent[i];
        }
        while len > 0 {
            top -= 1;
            len -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

/// Greedy minimum-degree ordering on the elimination graph; ties go to the
/// smallest index.
fn minimum_degree(a: &SparseSymMatrix) -> Vec<usize> {
    let n = a.n;
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (r, c, _) in a.iter_upper() {
        if r != c {
            adj[r].insert(c);
            adj[c].insert(r);
        }
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|v| (adj[v].len(), v)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some((_, v)) = queue.pop_first() {
        order.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &w in &nbrs {
            queue.remove(&(adj[w].len(), w));
            adj[w].remove(&v);
        }
        for (x, &w) in nbrs.iter().enumerate() {
            for &u in &nbrs[x + 1..] {
                adj[w].insert(u);
                adj[u].insert(w);
            }
        }
        for &w in &nbrs {
            queue.insert((adj[w].len(), w));
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense(rows: &[&[f64]]) -> DMatrix<f64> {
        let n = rows.len();
        DMatrix::from_fn(n, n, |r, c| rows[r][c])
    }

    #[test]
    fn identity_factors_to_identity() {
        let f = cholesky(&SparseSymMatrix::identity(3)).unwrap();
        assert_eq!(f.lower_dense(), DMatrix::identity(3, 3));
        assert_eq!(f.log_det(), 0.0);
    }

    #[test]
    fn intrinsic_two_path_is_rejected() {
        let q = SparseSymMatrix::from_dense(&dense(&[&[1.0, -1.0], &[-1.0, 1.0]])).unwrap();
        assert!(matches!(cholesky(&q), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn hand_cholesky_2x2() {
        let q = SparseSymMatrix::from_dense(&dense(&[&[4.0, 2.0], &[2.0, 3.0]])).unwrap();
        let f = SymbolicCholesky::analyze(&q, Ordering::Natural).factor(&q).unwrap();
        let l = f.lower_dense();
        assert!((l[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((l[(1, 0)] - 1.0).abs() < 1e-15);
        assert!((l[(1, 1)] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn log_det_of_diagonal() {
        let f = cholesky(&SparseSymMatrix::from_diagonal(&[2.0, 3.0])).unwrap();
        assert!((f.log_det() - 6f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn solve_examples() {
        let f = cholesky(&SparseSymMatrix::identity(3)).unwrap();
        assert_eq!(f.solve(&[1.0, -2.0, 5.0]).unwrap(), vec![1.0, -2.0, 5.0]);
        let f = cholesky(&SparseSymMatrix::from_diagonal(&[2.0, 4.0])).unwrap();
        let x = f.solve(&[2.0, 4.0]).unwrap();
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert!(matches!(f.solve(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn quad_form_examples() {
        let i3 = SparseSymMatrix::identity(3);
        assert_eq!(quad_form(&i3, &[1.0; 3], &[1.0; 3]).unwrap(), 3.0);
        let q = SparseSymMatrix::from_dense(&dense(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert_eq!(quad_form(&q, &[1.0, -1.0], &[1.0, -1.0]).unwrap(), 2.0);
        // Q y = (3, 3) for y = (1, 1); x = (1, -1) is orthogonal to it
        assert_eq!(quad_form(&q, &[1.0, -1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(quad_form(&q, &[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn triplets_mirror_and_sum() {
        let q = SparseSymMatrix::from_triplets(2, &[(1, 0, 1.0), (0, 1, 0.5), (0, 0, 2.0), (1, 1, 3.0)]).unwrap();
        assert_eq!(q.nnz(), 3);
        assert_eq!(q.get(1, 0), 1.5);
        assert_eq!(q.nnz_full(), 4);
        assert!(SparseSymMatrix::from_triplets(0, &[]).is_err());
        assert!(SparseSymMatrix::from_triplets(2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn full_rows_cover_both_triangles() {
        let q = SparseSymMatrix::from_dense(&dense(&[&[4.0, 1.0, 0.0], &[1.0, 4.0, 2.0], &[0.0, 2.0, 4.0]])).unwrap();
        let rows = q.full_rows();
        let row1: Vec<_> = rows.row(1).collect();
        assert_eq!(row1, vec![(0, 1.0), (1, 4.0), (2, 2.0)]);
        assert_eq!(rows.diag(2), 4.0);
    }

    #[test]
    fn coordinate_text_lists_upper_entries() {
        let q = SparseSymMatrix::from_dense(&dense(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        let text = q.to_coordinate_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "% symmetric-upper 2 3");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("1 2 "));
    }

    #[test]
    fn symbolic_reuse_across_values() {
        let g = crate::graph::AdjacencyGraph::grid(3, 4);
        let build = |rho: f64| {
            let mut t = Vec::new();
            for v in 0..g.n_vertices() {
                t.push((v, v, g.degree(v) as f64));
                for &w in g.neighbors(v) {
                    if w > v {
                        t.push((v, w, -rho));
                    }
                }
            }
            SparseSymMatrix::from_triplets(g.n_vertices(), &t).unwrap()
        };
        let sym = SymbolicCholesky::analyze(&build(0.5), Ordering::MinimumDegree);
        for rho in [0.0, 0.3, 0.9, -0.7] {
            let q = build(rho);
            let fresh = cholesky(&q).unwrap();
            let reused = sym.factor(&q).unwrap();
            assert!((fresh.log_det() - reused.log_det()).abs() < 1e-12);
        }
        assert!(sym.factor(&SparseSymMatrix::identity(12)).is_err());
    }

    #[test]
    fn minimum_degree_limits_fill_on_arrow_matrix() {
        // Arrow matrix with the hub first fills completely in natural order.
        let n = 8;
        let mut t: Vec<(usize, usize, f64)> = (0..n).map(|k| (k, k, n as f64)).collect();
        t.extend((1..n).map(|k| (0, k, 1.0)));
        let q = SparseSymMatrix::from_triplets(n, &t).unwrap();
        let natural = SymbolicCholesky::analyze(&q, Ordering::Natural);
        let amd = SymbolicCholesky::analyze(&q, Ordering::MinimumDegree);
        assert_eq!(natural.factor_nnz(), n * (n + 1) / 2);
        assert_eq!(amd.factor_nnz(), 2 * n - 1);
        let a = natural.factor(&q).unwrap().log_det();
        let b = amd.factor(&q).unwrap().log_det();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn proper_car_two_path_sample_covariance() {
        // D - 0.5 C on the 2-path: [[1, -0.5], [-0.5, 1]], inverse (4/3)[[1, .5], [.5, 1]]
        let q = SparseSymMatrix::from_dense(&dense(&[&[1.0, -0.5], &[-0.5, 1.0]])).unwrap();
        let f = cholesky(&q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 50_000;
        let mut s = [[0.0; 2]; 2];
        for _ in 0..draws {
            let x = f.sample_gaussian(&mut rng);
            for a in 0..2 {
                for b in 0..2 {
                    s[a][b] += x[a] * x[b];
                }
            }
        }
        let expected = [[4.0 / 3.0, 2.0 / 3.0], [2.0 / 3.0, 4.0 / 3.0]];
        for a in 0..2 {
            for b in 0..2 {
                let est = s[a][b] / draws as f64;
                assert!((est / expected[a][b] - 1.0).abs() < 0.05, "{a}{b}: {est}");
            }
        }
    }

    #[test]
    fn diagonal_precision_sample_variance() {
        let f = cholesky(&SparseSymMatrix::from_diagonal(&[4.0, 4.0])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 50_000;
        let mut ss = [0.0; 2];
        for _ in 0..draws {
            let x = f.sample_gaussian(&mut rng);
            ss[0] += x[0] * x[0];
            ss[1] += x[1] * x[1];
        }
        for v in ss {
            assert!((v / draws as f64 / 0.25 - 1.0).abs() < 0.05);
        }
    }
}
