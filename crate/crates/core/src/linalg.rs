//! Sparse linear algebra for the Newton steps of the policy iteration:
//! CSR storage, ILU(0) preconditioning and BiCGSTAB.

/// Square sparse matrix in compressed-row form. Column indices within a row
/// are sorted and unique.
#[derive(Clone, Debug)]
pub struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Row-by-row CSR assembly; duplicate entries in a row are summed.
#[derive(Debug)]
pub struct CsrBuilder {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    scratch: Vec<(usize, f64)>,
}

impl CsrBuilder {
    pub fn new(n: usize) -> Self {
        CsrBuilder {
            n,
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
            scratch: Vec::new(),
        }
    }

    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        self.scratch.clear();
        self.scratch.extend(entries);
        self.scratch.sort_unstable_by_key(|e| e.0);
        let mut last = usize::MAX;
        for &(c, v) in &self.scratch {
            if c == last {
                *self.vals.last_mut().expect("entry exists") += v;
            } else {
                self.cols.push(c);
                self.vals.push(v);
                last = c;
            }
        }
        self.row_ptr.push(self.cols.len());
    }

    pub fn finish(self) -> Csr {
        assert_eq!(self.row_ptr.len(), self.n + 1, "every row must be pushed");
        Csr {
            n: self.n,
            row_ptr: self.row_ptr,
            cols: self.cols,
            vals: self.vals,
        }
    }
}

impl Csr {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *yi = s;
        }
    }
}

/// Incomplete LU factorisation with the sparsity pattern of the matrix.
#[derive(Debug)]
pub struct Ilu0 {
    lu: Csr,
    diag: Vec<usize>,
}

impl Ilu0 {
    /// Returns `None` if a zero pivot is met.
    pub fn new(a: &Csr) -> Option<Self> {
        let mut lu = a.clone();
        let n = a.n;
        let mut diag = vec![usize::MAX; n];
        for (i, d) in diag.iter_mut().enumerate() {
            for k in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                if lu.cols[k] == i {
                    *d = k;
                }
            }
            if *d == usize::MAX {
                return None;
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for k in start..end {
                pos[lu.cols[k]] = k;
            }
            for k in start..end {
                let j = lu.cols[k];
                if j >= i {
                    break;
                }
                let pivot = lu.vals[diag[j]];
                if pivot == 0.0 {
                    return None;
                }
                let factor = lu.vals[k] / pivot;
                lu.vals[k] = factor;
                for m in diag[j] + 1..lu.row_ptr[j + 1] {
                    let p = pos[lu.cols[m]];
                    if p != usize::MAX {
                        lu.vals[p] -= factor * lu.vals[m];
                    }
                }
            }
            for k in start..end {
                pos[lu.cols[k]] = usize::MAX;
            }
            if lu.vals[diag[i]] == 0.0 {
                return None;
            }
        }
        Some(Ilu0 { lu, diag })
    }

    /// Solves `LU z = r` in place.
    pub fn apply(&self, z: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut s = z[i];
            for k in lu.row_ptr[i]..self.diag[i] {
                s -= lu.vals[k] * z[lu.cols[k]];
            }
            z[i] = s;
        }
        for i in (0..lu.n).rev() {
            let mut s = z[i];
            for k in self.diag[i] + 1..lu.row_ptr[i + 1] {
                s -= lu.vals[k] * z[lu.cols[k]];
            }
            z[i] = s / lu.vals[self.diag[i]];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of an iterative linear solve.
#[derive(Clone, Copy, Debug)]
pub struct LinearSolve {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Right-preconditioned BiCGSTAB for `A x = b`, starting from `x`.
pub fn bicgstab(a: &Csr, b: &[f64], x: &mut [f64], rel_tol: f64, max_iter: usize) -> LinearSolve {
    let n = a.n;
    let pre = Ilu0::new(a);
    let precondition = |v: &mut [f64]| {
        if let Some(p) = &pre {
            p.apply(v);
        }
    };
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let mut r = vec![0.0; n];
    a.mul(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r0 = r.clone();
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut rel = norm(&r) / bnorm;
    if rel <= rel_tol {
        return LinearSolve {
            iterations: 0,
            relative_residual: rel,
            converged: true,
        };
    }
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return LinearSolve {
                iterations: it,
                relative_residual: rel,
                converged: false,
            };
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        phat.copy_from_slice(&p);
        precondition(&mut phat);
        a.mul(&phat, &mut v);
        let denom = dot(&r0, &v);
        if denom == 0.0 {
            return LinearSolve {
                iterations: it,
                relative_residual: rel,
                converged: false,
            };
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / bnorm <= rel_tol {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            return LinearSolve {
                iterations: it,
                relative_residual: norm(&s) / bnorm,
                converged: true,
            };
        }
        shat.copy_from_slice(&s);
        precondition(&mut shat);
        a.mul(&shat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        rel = norm(&r) / bnorm;
        if rel <= rel_tol {
            return LinearSolve {
                iterations: it,
                relative_residual: rel,
                converged: true,
            };
        }
    }
    LinearSolve {
        iterations: max_iter,
        relative_residual: rel,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize, shift: f64) -> Csr {
        let mut b = CsrBuilder::new(n);
        for i in 0..n {
            let mut row = vec![(i, 2.0 + shift)];
            if i > 0 {
                row.push((i - 1, -1.0));
            }
            if i + 1 < n {
                row.push((i + 1, -1.3));
            }
            b.push_row(row);
        }
        b.finish()
    }

    #[test]
    fn ilu_is_exact_for_tridiagonal() {
        let a = laplacian_1d(20, 0.1);
        let ilu = Ilu0::new(&a).unwrap();
        let x: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let mut b = vec![0.0; 20];
        a.mul(&x, &mut b);
        ilu.apply(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let n = 200;
        let mut bld = CsrBuilder::new(n);
        for i in 0..n {
            let mut row = vec![(i, 4.5)];
            for (j, w) in [(i + 1, -1.0), (i + 7, -1.5), (i + 13, -0.5)] {
                if j < n {
                    row.push((j, w));
                }
            }
            if i >= 3 {
                row.push((i - 3, -1.2));
            }
            bld.push_row(row);
        }
        let a = bld.finish();
        let x: Vec<f64> = (0..n).map(|i| (0.1 * i as f64).cos()).collect();
        let mut b = vec![0.0; n];
        a.mul(&x, &mut b);
        let mut y = vec![0.0; n];
        let out = bicgstab(&a, &b, &mut y, 1e-12, 500);
        assert!(out.converged);
        for (u, v) in y.iter().zip(&x) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicate_entries_are_summed() {
        let mut b = CsrBuilder::new(1);
        b.push_row([(0, 1.0), (0, 2.0)]);
        let a = b.finish();
        let mut y = [0.0];
        a.mul(&[1.0], &mut y);
        assert_eq!(y[0], 3.0);
    }
}
