//! Torus geometry: rational directions, their slice lattices `Z^d ∩ ⟨e⟩^⊥`,
//! slice sub-tori, and rational sequences approaching a direction from a
//! prescribed side.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{HomogError, Result};
use crate::grid::unravel;

pub(crate) fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn norm2_i(k: &[i64]) -> i64 {
    k.iter().map(|x| x * x).sum()
}

fn to_f64(k: &[i64]) -> Vec<f64> {
    k.iter().map(|&x| x as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum DirectionKind {
    /// Primitive integer vector `k` with `e = k / |k|`.
    Rational { k: Vec<i64> },
    /// Floating point stand-in for an irrational direction, optionally with
    /// Diophantine constants `(C_e, tau)`.
    IrrationalProxy {
        v: Vec<f64>,
        diophantine: Option<(f64, f64)>,
    },
}

/// Unit vector on the sphere together with its arithmetic type.
#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    kind: DirectionKind,
    e: Vec<f64>,
}

impl Direction {
    pub fn proxy(v: &[f64], diophantine: Option<(f64, f64)>) -> Result<Self> {
        let n = norm(v);
        if v.len() < 2 {
            return Err(HomogError::InvalidInput("directions need d >= 2".into()));
        }
        if !(n > 0.0) || !n.is_finite() {
            return Err(HomogError::ZeroVector);
        }
        Ok(Direction {
            kind: DirectionKind::IrrationalProxy {
                v: v.to_vec(),
                diophantine,
            },
            e: v.iter().map(|x| x / n).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.e.len()
    }

    pub fn unit(&self) -> &[f64] {
        &self.e
    }

    pub fn kind(&self) -> &DirectionKind {
        &self.kind
    }

    pub fn is_rational(&self) -> bool {
        matches!(self.kind, DirectionKind::Rational { .. })
    }

    pub fn lattice_vector(&self) -> Option<&[i64]> {
        match &self.kind {
            DirectionKind::Rational { k } => Some(k),
            _ => None,
        }
    }

    pub fn require_rational(&self) -> Result<&[i64]> {
        self.lattice_vector()
            .ok_or_else(|| HomogError::InvalidInput(format!("direction {self} is not rational")))
    }

    /// Period `r_e = 1/|k|` of the slice foliation.
    pub fn period(&self) -> Option<f64> {
        self.lattice_vector()
            .map(|k| 1.0 / (norm2_i(k) as f64).sqrt())
    }

    /// `Id - e⊗e`.
    pub fn projector(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| {
            (if i == j { 1.0 } else { 0.0 }) - self.e[i] * self.e[j]
        })
    }

    /// Image of `-e`.
    pub fn reversed(&self) -> Direction {
        match &self.kind {
            DirectionKind::Rational { k } => Direction {
                kind: DirectionKind::Rational {
                    k: k.iter().map(|x| -x).collect(),
                },
                e: self.e.iter().map(|x| -x).collect(),
            },
            DirectionKind::IrrationalProxy { v, diophantine } => Direction {
                kind: DirectionKind::IrrationalProxy {
                    v: v.iter().map(|x| -x).collect(),
                    diophantine: *diophantine,
                },
                e: self.e.iter().map(|x| -x).collect(),
            },
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            DirectionKind::Rational { k } => {
                let parts: Vec<String> = k.iter().map(|x| x.to_string()).collect();
                write!(f, "k=[{}]", parts.join(","))
            }
            DirectionKind::IrrationalProxy { v, .. } => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                write!(f, "v=[{}]", parts.join(","))
            }
        }
    }
}

impl FromStr for Direction {
    type Err = HomogError;

    /// Parses `k=[a,b,..]` (integer) or `v=[x,y,..]` (float).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || HomogError::InvalidInput(format!("cannot parse direction `{s}`"));
        let s = s.trim();
        let (tag, rest) = s.split_once('=').ok_or_else(bad)?;
        let body = rest
            .trim()
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(bad)?;
        let items: Vec<&str> = body.split(',').map(str::trim).collect();
        match tag.trim() {
            "k" => {
                let k = items
                    .iter()
                    .map(|x| x.parse::<i64>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                primitive_direction(&k)
            }
            "v" => {
                let v = items
                    .iter()
                    .map(|x| x.parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                Direction::proxy(&v, None)
            }
            _ => Err(bad()),
        }
    }
}

/// Reduces `k` by the gcd of its entries.
pub fn primitive_direction(k: &[i64]) -> Result<Direction> {
    if k.len() < 2 {
        return Err(HomogError::InvalidInput("directions need d >= 2".into()));
    }
    let g = k.iter().fold(0, |g, &x| gcd(g, x));
    if g == 0 {
        return Err(HomogError::ZeroVector);
    }
    let k: Vec<i64> = k.iter().map(|x| x / g).collect();
    let n = (norm2_i(&k) as f64).sqrt();
    let e = k.iter().map(|&x| x as f64 / n).collect();
    Ok(Direction {
        kind: DirectionKind::Rational { k },
        e,
    })
}

/// Parametrization `t ↦ anchor + B t`, `t ∈ [0,1)^{d-1}`, of a slice torus.
#[derive(Clone, Debug)]
pub struct SliceChart {
    e: Direction,
    basis: Vec<Vec<i64>>,
    complement: Vec<i64>,
    q: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
    anchor: Vec<f64>,
}

impl SliceChart {
    pub fn direction(&self) -> &Direction {
        &self.e
    }

    /// Columns of `B`, shortest first.
    pub fn basis(&self) -> &[Vec<i64>] {
        &self.basis
    }

    pub fn basis_matrix(&self) -> DMatrix<f64> {
        let d = self.e.dim();
        DMatrix::from_fn(d, d - 1, |i, j| self.basis[j][i] as f64)
    }

    /// Orthonormal basis of `⟨e⟩^⊥` (columns).
    pub fn orthonormal(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Integer `w` with `⟨w, k⟩ = 1`, completing `B` to a unimodular matrix.
    pub fn complement(&self) -> &[i64] {
        &self.complement
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    /// Offset `s = ⟨anchor, e⟩`.
    pub fn offset(&self) -> f64 {
        dot(&self.anchor, &self.e.e)
    }

    /// Chart of the slice `⟨y,e⟩ = s`, anchored at `s e`.
    pub fn at_offset(&self, s: f64) -> SliceChart {
        let mut c = self.clone();
        c.anchor = self.e.e.iter().map(|x| s * x).collect();
        c
    }

    /// Chart anchored at `frac · w`; its offset is `frac · r_e`.
    pub fn at_level(&self, frac: f64) -> SliceChart {
        let mut c = self.clone();
        c.anchor = self.complement.iter().map(|&x| frac * x as f64).collect();
        c
    }

    pub fn point(&self, t: &[f64]) -> Vec<f64> {
        let mut y = self.anchor.clone();
        for (b, &tj) in self.basis.iter().zip(t) {
            for (yi, &bi) in y.iter_mut().zip(b) {
                *yi += tj * bi as f64;
            }
        }
        y
    }

    /// Coefficient of `tr(c D_t^2)` in chart coordinates for the operator
    /// `tr(b D^2)` restricted to the slice: `G^{-1} Bᵀ b B G^{-1}`.
    pub fn pullback(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let bm = self.basis_matrix();
        let r = &self.gram_inv * bm.transpose();
        let mut c = &r * b * r.transpose();
        symmetrize(&mut c);
        c
    }

    /// `(U, U^{-1})` with `U = [B | w]`; `U` maps the unit lattice onto itself.
    pub fn frame(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.e.dim();
        let u = DMatrix::from_fn(d, d, |i, j| {
            if j + 1 < d {
                self.basis[j][i] as f64
            } else {
                self.complement[i] as f64
            }
        });
        let inv = u
            .clone()
            .try_inverse()
            .expect("unimodular frame is invertible")
            .map(|x| x.round());
        (u, inv)
    }

    /// Integer coordinates of `v` in the basis `B`, if `v ∈ M_e`.
    pub fn coordinates(&self, v: &[i64]) -> Option<Vec<i64>> {
        let (_, inv) = self.frame();
        let d = self.e.dim();
        let c: Vec<f64> = (0..d)
            .map(|i| (0..d).map(|j| inv[(i, j)] * v[j] as f64).sum())
            .collect();
        if c[d - 1].abs() > 0.5 {
            return None;
        }
        let coords: Vec<i64> = c[..d - 1].iter().map(|x| x.round() as i64).collect();
        let back: Vec<i64> = (0..d)
            .map(|i| {
                coords
                    .iter()
                    .zip(&self.basis)
                    .map(|(cj, b)| cj * b[i])
                    .sum()
            })
            .collect();
        (back == v).then_some(coords)
    }
}

pub(crate) fn symmetrize(c: &mut DMatrix<f64>) {
    let n = c.nrows();
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = m;
            c[(j, i)] = m;
        }
    }
}

/// Column operations reducing `kᵀ` to a unit row vector; returns the columns
/// of the unimodular transform and the pivot index.
fn unimodular_reduction(k: &[i64]) -> (Vec<Vec<i64>>, usize) {
    let d = k.len();
    let mut r = k.to_vec();
    let mut cols: Vec<Vec<i64>> = (0..d)
        .map(|j| (0..d).map(|i| i64::from(i == j)).collect())
        .collect();
    loop {
        let nz: Vec<usize> = (0..d).filter(|&i| r[i] != 0).collect();
        let p = *nz.iter().min_by_key(|&&i| (r[i].abs(), i)).unwrap();
        if nz.len() == 1 {
            if r[p] < 0 {
                r[p] = -r[p];
                cols[p].iter_mut().for_each(|x| *x = -*x);
            }
            return (cols, p);
        }
        for &j in &nz {
            if j == p {
                continue;
            }
            let q = r[j] / r[p];
            r[j] -= q * r[p];
            let cp = cols[p].clone();
            for (x, y) in cols[j].iter_mut().zip(&cp) {
                *x -= q * y;
            }
        }
    }
}

fn gram_schmidt(b: &[Vec<i64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = b.len();
    let mut star: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut mu = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut v = to_f64(&b[i]);
        for j in 0..i {
            mu[i][j] = dot(&to_f64(&b[i]), &star[j]) / dot(&star[j], &star[j]);
            for (x, y) in v.iter_mut().zip(&star[j]) {
                *x -= mu[i][j] * y;
            }
        }
        star.push(v);
    }
    (star, mu)
}

/// Textbook LLL with parameter 0.99; the bases here are tiny.
fn lll_reduce(mut b: Vec<Vec<i64>>) -> Vec<Vec<i64>> {
    let n = b.len();
    let mut k = 1;
    while k < n {
        for j in (0..k).rev() {
            let (_, mu) = gram_schmidt(&b);
            let q = mu[k][j].round() as i64;
            if q != 0 {
                let bj = b[j].clone();
                for (x, y) in b[k].iter_mut().zip(&bj) {
                    *x -= q * y;
                }
            }
        }
        let (star, mu) = gram_schmidt(&b);
        let lhs = dot(&star[k], &star[k]);
        let rhs = (0.99 - mu[k][k - 1].powi(2)) * dot(&star[k - 1], &star[k - 1]);
        if lhs >= rhs {
            k += 1;
        } else {
            b.swap(k, k - 1);
            k = k.saturating_sub(1).max(1);
        }
    }
    b
}

fn sign_normalize(v: &mut [i64]) {
    if let Some(&first) = v.iter().find(|&&x| x != 0) {
        if first < 0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Integer basis of `Z^d ∩ ⟨k⟩^⊥` (shortest vectors first) with an orthonormal
/// chart of `⟨e⟩^⊥`. The returned chart is anchored at the origin.
pub fn slice_lattice_basis(e: &Direction) -> Result<SliceChart> {
    let k = e.require_rational()?.to_vec();
    let d = k.len();
    let (cols, p) = unimodular_reduction(&k);
    let mut w = cols[p].clone();
    let kernel: Vec<Vec<i64>> = (0..d)
        .filter(|&j| j != p)
        .map(|j| cols[j].clone())
        .collect();
    let mut basis = lll_reduce(kernel);
    for b in basis.iter_mut() {
        sign_normalize(b);
    }
    basis.sort_by(|a, b| norm2_i(a).cmp(&norm2_i(b)).then_with(|| b.cmp(a)));

    let bm = DMatrix::from_fn(d, d - 1, |i, j| basis[j][i] as f64);
    let gram = bm.transpose() * &bm;
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| HomogError::InvalidInput("degenerate slice lattice".into()))?;

    // Size-reduce the complement so the lattice frame stays well conditioned.
    let wf = DMatrix::from_fn(d, 1, |i, _| w[i] as f64);
    let coef = &gram_inv * bm.transpose() * wf;
    for (j, b) in basis.iter().enumerate() {
        let c = coef[(j, 0)].round() as i64;
        for (x, y) in w.iter_mut().zip(b) {
            *x -= c * y;
        }
    }

    let (star, _) = gram_schmidt(&basis);
    let q = DMatrix::from_fn(d, d - 1, |i, j| star[j][i] / norm(&star[j]));
    Ok(SliceChart {
        e: e.clone(),
        basis,
        complement: w,
        q,
        gram_inv,
        anchor: vec![0.0; d],
    })
}

/// Rational directions `e_n → e` with `(e_n - e)/|e_n - e| → -eta`.
#[derive(Clone, Debug)]
pub struct ApproachSpec {
    pub e: Direction,
    pub eta: Vec<f64>,
    pub depth: usize,
    /// Primitive lattice vector of `⟨e⟩^⊥` pointing along `eta`.
    pub k_eta: Vec<i64>,
    pub sequence: Vec<Direction>,
    /// Angles between `e_n` and `e`.
    pub thetas: Vec<f64>,
}

fn angle(a: &[f64], b: &[f64]) -> f64 {
    (dot(a, b) / (norm(a) * norm(b))).clamp(-1.0, 1.0).acos()
}

/// Builds `e_n ∝ round(N |k_eta| / |k_e|) k_e - k_eta` for `N = 2, 4, 8, ...`.
pub fn approach_sequence(e: &Direction, eta: &[f64], depth: usize) -> Result<ApproachSpec> {
    let ke = e.require_rational()?.to_vec();
    let d = ke.len();
    if eta.len() != d {
        return Err(HomogError::InvalidInput(
            "eta has the wrong dimension".into(),
        ));
    }
    let en = norm(eta);
    if !(en > 0.0) {
        return Err(HomogError::ZeroVector);
    }
    let eta: Vec<f64> = eta.iter().map(|x| x / en).collect();
    if dot(&eta, e.unit()).abs() > 1e-10 {
        return Err(HomogError::InvalidInput(
            "eta must be orthogonal to e".into(),
        ));
    }
    let chart = slice_lattice_basis(e)?;
    let bm = chart.basis_matrix();
    let t = &chart.gram_inv * bm.transpose() * DMatrix::from_column_slice(d, 1, &eta);
    let tmax = t.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let mut k_eta = None;
    for n in 1..=10_000 {
        let lam = n as f64 / tmax;
        let c: Vec<i64> = t.iter().map(|x| (lam * x).round() as i64).collect();
        if c.iter().all(|&x| x == 0) {
            continue;
        }
        let v: Vec<i64> = (0..d)
            .map(|i| c.iter().zip(chart.basis()).map(|(cj, b)| cj * b[i]).sum())
            .collect();
        if (norm2_i(&v) as f64).sqrt() > 1e4 {
            break;
        }
        if angle(&to_f64(&v), &eta) < 1e-3 {
            let g = v.iter().fold(0, |g, &x| gcd(g, x));
            k_eta = Some(v.iter().map(|x| x / g).collect::<Vec<i64>>());
            break;
        }
    }
    let k_eta = k_eta.ok_or(HomogError::EtaNotRepresentable)?;

    let ratio = (norm2_i(&k_eta) as f64 / norm2_i(&ke) as f64).sqrt();
    let mut sequence = Vec::with_capacity(depth);
    let mut thetas = Vec::with_capacity(depth);
    let mut big_n: i64 = 2;
    let mut last_norm = 0;
    while sequence.len() < depth {
        let scale = ((big_n as f64 * ratio).round() as i64).max(1);
        let k: Vec<i64> = ke.iter().zip(&k_eta).map(|(a, b)| scale * a - b).collect();
        let dir = primitive_direction(&k)?;
        let nk = norm2_i(dir.lattice_vector().unwrap());
        big_n *= 2;
        if nk <= last_norm {
            continue;
        }
        last_norm = nk;
        thetas.push(angle(dir.unit(), e.unit()));
        sequence.push(dir);
    }
    Ok(ApproachSpec {
        e: e.clone(),
        eta,
        depth,
        k_eta,
        sequence,
        thetas,
    })
}

/// Rectangle-rule (periodic trapezoid) average of `f` over the slice
/// `⟨y,e⟩ = s` with `n` nodes per chart axis.
pub fn slice_average<F: Fn(&[f64]) -> f64>(f: F, e: &Direction, s: f64, n: usize) -> Result<f64> {
    if n < 8 {
        return Err(HomogError::InvalidInput(
            "slice quadrature needs n >= 8".into(),
        ));
    }
    let chart = slice_lattice_basis(e)?.at_offset(s);
    Ok(chart_average(&chart, n, f))
}

pub(crate) fn chart_average<F: Fn(&[f64]) -> f64>(chart: &SliceChart, n: usize, f: F) -> f64 {
    let m = chart.direction().dim() - 1;
    let dims = vec![n; m];
    let total = n.pow(m as u32);
    let mut idx = vec![0; m];
    let mut t = vec![0.0; m];
    let mut acc = 0.0;
    for lin in 0..total {
        unravel(lin, &dims, &mut idx);
        for (tj, &ij) in t.iter_mut().zip(&idx) {
            *tj = ij as f64 / n as f64;
        }
        acc += f(&chart.point(&t));
    }
    acc / total as f64
}
