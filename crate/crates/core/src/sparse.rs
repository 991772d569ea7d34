//! Compressed sparse row matrices and the linear solvers used by the flow
//! solver: an envelope Cholesky factorization under reverse Cuthill–McKee
//! ordering, and preconditioned BiCGSTAB / CG.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinearSolveError {
    #[error("{method} did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    NotConverged {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("{method} broke down at iteration {iteration}")]
    Breakdown {
        method: &'static str,
        iteration: usize,
    },
    #[error("matrix is not positive definite at row {0}")]
    NotPositiveDefinite(usize),
}

#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds the sparsity pattern from per-row column lists; values are zero.
    pub fn from_pattern(ncols: usize, mut rows: Vec<Vec<usize>>) -> CsrMatrix {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix {
            nrows: rows.len(),
            ncols,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    /// Sums duplicate `(row, col, value)` entries.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> CsrMatrix {
        let mut rows = vec![Vec::new(); nrows];
        for &(r, c, _) in triplets {
            rows[r].push(c);
        }
        let mut m = CsrMatrix::from_pattern(ncols, rows);
        for &(r, c, v) in triplets {
            let pos = m.position(r, c).expect("entry in pattern");
            m.values[pos] += v;
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        self.col_idx[range.clone()]
            .binary_search(&col)
            .ok()
            .map(|k| range.start + k)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.position(row, col).map_or(0.0, |p| self.values[p])
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yr = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y += alpha * A x`.
    pub fn mul_vec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yr += alpha * acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.get(r, r)).collect()
    }

    /// Same pattern, values `alpha * self + beta * other`. Patterns must match.
    pub fn linear_combination(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> CsrMatrix {
        assert_eq!(self.col_idx, other.col_idx, "patterns differ");
        let mut out = self.clone();
        for (o, (a, b)) in out.values.iter_mut().zip(self.values.iter().zip(&other.values)) {
            *o = alpha * a + beta * b;
        }
        out
    }

    /// Replaces rows and columns of `fixed` dofs by the identity.
    pub fn eliminate_symmetric(&mut self, fixed: &[bool]) {
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                if fixed[r] || fixed[c] {
                    self.values[k] = if r == c { 1.0 } else { 0.0 };
                }
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Reverse Cuthill–McKee ordering of the (structurally symmetric) pattern.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(m: &CsrMatrix) -> Vec<usize> {
    let n = m.nrows;
    let degree: Vec<usize> = (0..n).map(|r| m.row_ptr[r + 1] - m.row_ptr[r]).collect();
    let neighbors = |r: usize| m.col_idx[m.row_ptr[r]..m.row_ptr[r + 1]].iter().copied().filter(move |&c| c != r);

    let bfs_last = |start: usize, visited: &mut Vec<bool>, order: &mut Vec<usize>| {
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = neighbors(v).filter(|&c| !visited[c]).collect();
            next.sort_by_key(|&c| (degree[c], c));
            for c in next {
                visited[c] = true;
                queue.push_back(c);
            }
        }
        *order.last().expect("non-empty component")
    };

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree[v], v))
            .unwrap();
        // One pass of the pseudo-peripheral heuristic: restart from the last
        // vertex reached by a BFS from the minimum-degree seed.
        let mut scratch_visited = visited.clone();
        let mut scratch = Vec::new();
        let far = bfs_last(seed, &mut scratch_visited, &mut scratch);
        bfs_last(far, &mut visited, &mut order);
    }
    order.reverse();
    order
}

/// Envelope (profile) Cholesky factorization `P A P^T = L L^T`.
pub struct EnvelopeCholesky {
    perm: Vec<usize>,
    /// First stored column of each row of `L`.
    first: Vec<usize>,
    /// Offset of row `i`'s storage in `values`.
    offset: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<EnvelopeCholesky, LinearSolveError> {
        let n = a.nrows;
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old in 0..n {
            let i = inv[old];
            for k in a.row_ptr[old]..a.row_ptr[old + 1] {
                let j = inv[a.col_idx[k]];
                if j < i && a.values[k] != 0.0 {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        let mut total = 0;
        for i in 0..n {
            offset.push(total);
            total += i - first[i] + 1;
        }
        offset.push(total);
        let mut values = vec![0.0; total];
        for old in 0..n {
            let i = inv[old];
            for k in a.row_ptr[old]..a.row_ptr[old + 1] {
                let j = inv[a.col_idx[k]];
                if j <= i && j >= first[i] {
                    values[offset[i] + j - first[i]] += a.values[k];
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let start = fi.max(fj);
                let mut s = values[offset[i] + j - fi];
                let ri = offset[i] + start - fi;
                let rj = offset[j] + start - fj;
                let len = j - start;
                s -= dot(&values[ri..ri + len], &values[rj..rj + len]);
                if j == i {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(LinearSolveError::NotPositiveDefinite(perm[i]));
                    }
                    values[offset[i] + i - fi] = s.sqrt();
                } else {
                    values[offset[i] + j - fi] = s / values[offset[j] + j - fj];
                }
            }
        }
        Ok(EnvelopeCholesky {
            perm,
            first,
            offset,
            values,
        })
    }

    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    pub fn solve_into(&self, b: &[f64], x: &mut [f64]) {
        let n = self.perm.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.values[self.offset[i]..self.offset[i + 1]];
            let s = y[i] - dot(&row[..i - fi], &y[fi..i]);
            y[i] = s / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.values[self.offset[i]..self.offset[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for (k, l) in row[..i - fi].iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; b.len()];
        self.solve_into(b, &mut x);
        x
    }
}

pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

impl Preconditioner for EnvelopeCholesky {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.solve_into(r, z);
    }
}

pub struct Jacobi(pub Vec<f64>);

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((z, r), d) in z.iter_mut().zip(r).zip(&self.0) {
            *z = r / d;
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IterativeConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for IterativeConfig {
    fn default() -> Self {
        IterativeConfig {
            rel_tol: 1e-8,
            max_iter: 1000,
        }
    }
}

/// Right-preconditioned BiCGSTAB for `op(x) = b`, starting from `x`.
/// Convergence is measured as `||b - op(x)|| <= rel_tol * ||b||`.
pub fn bicgstab(
    op: impl Fn(&[f64], &mut [f64]),
    precond: &dyn Preconditioner,
    b: &[f64],
    x: &mut [f64],
    cfg: IterativeConfig,
) -> Result<usize, LinearSolveError> {
    const METHOD: &str = "BiCGSTAB";
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let tol = cfg.rel_tol * b_norm;
    let mut r = vec![0.0; n];
    op(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    if norm(&r) <= tol {
        return Ok(0);
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut s = vec![0.0; n];
    for it in 1..=cfg.max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(LinearSolveError::Breakdown {
                method: METHOD,
                iteration: it,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond.apply(&p, &mut p_hat);
        op(&p_hat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            return Err(LinearSolveError::Breakdown {
                method: METHOD,
                iteration: it,
            });
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= tol {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            return Ok(it);
        }
        precond.apply(&s, &mut s_hat);
        op(&s_hat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= tol {
            return Ok(it);
        }
    }
    // Report the true residual.
    op(x, &mut t);
    let res = b.iter().zip(&t).map(|(b, t)| (b - t).powi(2)).sum::<f64>().sqrt();
    Err(LinearSolveError::NotConverged {
        method: METHOD,
        iterations: cfg.max_iter,
        residual: res / b_norm,
    })
}

/// Preconditioned conjugate gradients for symmetric positive definite `a`.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    precond: &dyn Preconditioner,
    b: &[f64],
    x: &mut [f64],
    cfg: IterativeConfig,
) -> Result<usize, LinearSolveError> {
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let tol = cfg.rel_tol * b_norm;
    let mut r = b.to_vec();
    a.mul_vec_add(-1.0, x, &mut r);
    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..cfg.max_iter {
        if norm(&r) <= tol {
            return Ok(it);
        }
        a.mul_vec_into(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(LinearSolveError::NotConverged {
        method: "CG",
        iterations: cfg.max_iter,
        residual: norm(&r) / b_norm,
    })
}
