//! Sparse matrices, Jacobi-preconditioned Krylov solvers and a banded LU
//! for the slice-sized systems.

use crate::error::{HomogError, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct Csr {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl Csr {
    /// Builds from per-row `(column, value)` lists; duplicates are summed and
    /// every row keeps an explicit diagonal entry.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.push((i, 0.0));
            row.sort_by_key(|&(j, _)| j);
            let mut last = usize::MAX;
            for (j, v) in row {
                if j == last {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    data.push(v);
                    last = j;
                }
            }
            indptr.push(indices.len());
        }
        Csr {
            n,
            indptr,
            indices,
            data,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()]
            .iter()
            .copied()
            .zip(self.data[r].iter().copied())
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).find(|&(j, _)| j == i).map_or(0.0, |(_, v)| v))
            .collect()
    }

    /// Adds `d[i]` to each diagonal entry.
    pub fn add_diagonal(&mut self, d: &[f64]) {
        for (i, &di) in d.iter().enumerate() {
            for p in self.indptr[i]..self.indptr[i + 1] {
                if self.indices[p] == i {
                    self.data[p] += di;
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn transpose(&self) -> Csr {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                rows[j].push((i, v));
            }
        }
        Csr::from_rows(rows)
    }

    /// Replaces row `i` by the unit row `e_i`.
    pub fn pin_row(&mut self, i: usize) {
        for p in self.indptr[i]..self.indptr[i + 1] {
            self.data[p] = if self.indices[p] == i { 1.0 } else { 0.0 };
        }
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let t = self.transpose();
        let scale = self.norm_inf().max(1e-300);
        (0..self.n).all(|i| {
            let a: Vec<(usize, f64)> = self.row(i).collect();
            let b: Vec<(usize, f64)> = t.row(i).collect();
            a.len() == b.len()
                && a.iter()
                    .zip(&b)
                    .all(|(x, y)| x.0 == y.0 && (x.1 - y.1).abs() <= tol * scale)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn jacobi(a: &Csr) -> Vec<f64> {
    a.diagonal()
        .into_iter()
        .map(|d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect()
}

fn true_residual(a: &Csr, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.apply(x);
    let r: f64 = ax.iter().zip(b).map(|(p, q)| (q - p).powi(2)).sum();
    r.sqrt() / dotv(b, b).sqrt()
}

/// Preconditioned conjugate gradients for symmetric positive definite `a`.
pub fn cg(a: &Csr, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats> {
    let bn = dotv(b, b).sqrt();
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let pre = jacobi(a);
    let n = a.dim();
    let mut r: Vec<f64> = b.iter().zip(a.apply(x)).map(|(p, q)| p - q).collect();
    let mut z: Vec<f64> = r.iter().zip(&pre).map(|(p, q)| p * q).collect();
    let mut p = z.clone();
    let mut rz = dotv(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap = dotv(&p, &ap);
        if !(pap > 0.0) {
            return Err(HomogError::IllConditioned {
                residual: dotv(&r, &r).sqrt() / bn,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = dotv(&r, &r).sqrt() / bn;
        if res <= tol {
            return Ok(SolveStats {
                iterations: it,
                residual: true_residual(a, x, b),
            });
        }
        for i in 0..n {
            z[i] = r[i] * pre[i];
        }
        let rz_new = dotv(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(HomogError::SolverDiverged {
        iterations: max_iter,
        residual: true_residual(a, x, b),
    })
}

/// Jacobi-preconditioned BiCGSTAB for general nonsymmetric `a`.
pub fn bicgstab(
    a: &Csr,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let bn = dotv(b, b).sqrt();
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let pre = jacobi(a);
    let n = a.dim();
    let mut r: Vec<f64> = b.iter().zip(a.apply(x)).map(|(p, q)| p - q).collect();
    if dotv(&r, &r).sqrt() / bn <= tol {
        return Ok(SolveStats {
            iterations: 0,
            residual: dotv(&r, &r).sqrt() / bn,
        });
    }
    let mut r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega: f64 = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for it in 1..=max_iter {
        let rho_new = dotv(&r0, &r);
        if rho_new.abs() < 1e-300 || omega.abs() < 1e-300 {
            // Restart with the current residual as shadow vector.
            r0.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|q| *q = 0.0);
            p.iter_mut().for_each(|q| *q = 0.0);
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * pre[i];
        }
        a.matvec(&y, &mut v);
        let r0v = dotv(&r0, &v);
        if r0v.abs() < 1e-300 {
            return Err(HomogError::IllConditioned {
                residual: dotv(&r, &r).sqrt() / bn,
            });
        }
        alpha = rho / r0v;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        let sn = dotv(&s, &s).sqrt() / bn;
        if sn <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return finish(a, x, b, it, tol);
        }
        for i in 0..n {
            z[i] = s[i] * pre[i];
        }
        a.matvec(&z, &mut t);
        let tt = dotv(&t, &t);
        omega = if tt > 0.0 { dotv(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        let res = dotv(&r, &r).sqrt() / bn;
        if res <= tol {
            return finish(a, x, b, it, tol);
        }
        if res < 0.5 * best {
            best = res;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > 20 * n.max(50) {
                return Err(HomogError::IllConditioned { residual: res });
            }
        }
    }
    Err(HomogError::SolverDiverged {
        iterations: max_iter,
        residual: true_residual(a, x, b),
    })
}

fn finish(a: &Csr, x: &mut [f64], b: &[f64], it: usize, tol: f64) -> Result<SolveStats> {
    let res = true_residual(a, x, b);
    if res > 100.0 * tol {
        // Recurrence drifted from the true residual; polish once.
        return bicgstab(a, b, x, tol, 10 * a.dim().max(100)).map(|s| SolveStats {
            iterations: it + s.iterations,
            residual: s.residual,
        });
    }
    Ok(SolveStats {
        iterations: it,
        residual: res,
    })
}

/// Chooses CG when `a` is symmetric, BiCGSTAB otherwise.
pub fn krylov(a: &Csr, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats> {
    if a.is_symmetric(1e-14) {
        cg(a, b, x, tol, max_iter)
    } else {
        bicgstab(a, b, x, tol, max_iter)
    }
}

/// Ordering `0, n-1, 1, n-2, ...` placing periodic neighbours at distance <= 2.
pub fn interleave(n: usize) -> Vec<usize> {
    let mut rank = vec![0; n];
    let (mut lo, mut hi) = (0usize, n);
    let mut pos = 0;
    while lo < hi {
        rank[lo] = pos;
        pos += 1;
        lo += 1;
        if lo < hi {
            hi -= 1;
            rank[hi] = pos;
            pos += 1;
        }
    }
    rank
}

/// Permutation (old index → new index) of a periodic tensor grid that
/// keeps the bandwidth proportional to the size of one hyperplane.
pub fn periodic_grid_ordering(dims: &[usize]) -> Vec<usize> {
    let ranks: Vec<Vec<usize>> = dims.iter().map(|&n| interleave(n)).collect();
    let total: usize = dims.iter().product();
    let mut idx = vec![0; dims.len()];
    (0..total)
        .map(|lin| {
            crate::grid::unravel(lin, dims, &mut idx);
            idx.iter()
                .zip(&ranks)
                .zip(dims)
                .fold(0, |acc, ((&i, r), &n)| acc * n + r[i])
        })
        .collect()
}

/// LU factorization with partial pivoting of a banded matrix.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    width: usize,
    rows: Vec<f64>,
    lower: Vec<f64>,
    piv: Vec<usize>,
    perm: Vec<usize>,
}

impl BandedLu {
    /// Factors `P a Pᵀ` where `perm[old] = new`.
    pub fn factor(a: &Csr, perm: &[usize]) -> Result<Self> {
        let n = a.dim();
        let (mut kl, mut ku) = (0usize, 0usize);
        for i in 0..n {
            for (j, v) in a.row(i) {
                if v == 0.0 {
                    continue;
                }
                let (pi, pj) = (perm[i], perm[j]);
                if pj < pi {
                    kl = kl.max(pi - pj);
                } else {
                    ku = ku.max(pj - pi);
                }
            }
        }
        let width = 2 * kl + ku + 1;
        let mut rows = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in a.row(i) {
                let (pi, pj) = (perm[i], perm[j]);
                rows[pi * width + (pj + kl - pi)] += v;
            }
        }
        let at = |i: usize, j: usize| i * width + (j + kl - i);
        let mut lower = vec![0.0; n * kl.max(1)];
        let mut piv = vec![0; n];
        let scale = a.norm_inf().max(1e-300);
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = rows[at(k, k)].abs();
            for i in k + 1..=last {
                let v = rows[at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-300 * scale {
                return Err(HomogError::IllConditioned { residual: f64::NAN });
            }
            piv[k] = p;
            let cmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=cmax {
                    rows.swap(at(k, j), at(p, j));
                }
            }
            let pivot = rows[at(k, k)];
            for i in k + 1..=last {
                let f = rows[at(i, k)] / pivot;
                lower[k * kl.max(1) + (i - k - 1)] = f;
                if f == 0.0 {
                    continue;
                }
                rows[at(i, k)] = 0.0;
                for j in k + 1..=cmax {
                    let u = rows[at(k, j)];
                    rows[at(i, j)] -= f * u;
                }
            }
        }
        Ok(BandedLu {
            n,
            kl,
            width,
            rows,
            lower,
            piv,
            perm: perm.to_vec(),
        })
    }

    pub fn bandwidth(&self) -> usize {
        self.kl
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl, w) = (self.n, self.kl, self.width);
        let mut x = vec![0.0; n];
        for (old, &new) in self.perm.iter().enumerate() {
            x[new] = b[old];
        }
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            let last = (k + kl).min(n - 1);
            for i in k + 1..=last {
                x[i] -= self.lower[k * kl.max(1) + (i - k - 1)] * xk;
            }
        }
        let ku_total = w - kl - 1;
        for k in (0..n).rev() {
            let mut s = x[k];
            let cmax = (k + ku_total).min(n - 1);
            for j in k + 1..=cmax {
                s -= self.rows[k * w + (j + kl - k)] * x[j];
            }
            x[k] = s / self.rows[k * w + kl];
        }
        let mut out = vec![0.0; n];
        for (old, &new) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }
}
