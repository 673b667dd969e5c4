//! Obstacle problems on cubes of the hyperplane `⟨e⟩^⊥`, their contact-set
//! densities, and the critical value `μ̂ = −F̄(e,X)` found by bisection.
//!
//! With `L = tr(b(y) D^2)` (Dirichlet data on the cube boundary) and
//! `g = m μ + tr(b X)`, the two variants are the complementarity problems
//!
//! * sub, with `v = −u`: `v ≥ 0`, `−L v + g ≥ 0`, `v (−L v + g) = 0`;
//! * super: `u ≥ 0`, `−L u − g ≥ 0`, `u (−L u − g) = 0`.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::coeffs::{trace_product, Mat, ProjectedOperator};
use crate::error::{HomogError, Result};
use crate::grid::unravel;
use crate::lattice::{norm, Direction};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObstacleKind {
    /// `u ≤ 0` with contact where `u = 0`.
    Sub,
    /// `u ≥ 0` with contact where `u = 0`.
    Super,
}

/// Physical setup of one cube problem.
#[derive(Clone, Debug)]
pub struct CubeSpec {
    /// Side length `R`.
    pub r: f64,
    /// Torus shift of the cube center.
    pub x_shift: Vec<f64>,
    /// Coefficient scale: `a` is evaluated at `x_shift + θ^{-1} O t`.
    pub theta: f64,
    /// Grid cells per axis.
    pub m: usize,
}

#[derive(Clone, Debug)]
pub struct ObstacleSolution {
    pub kind: ObstacleKind,
    pub e: Direction,
    pub x: Mat,
    pub mu: f64,
    pub cube: CubeSpec,
    /// Interior values, `(m-1)^{d-1}` nodes in row-major order.
    pub u: Vec<f64>,
    pub dims: Vec<usize>,
    pub contact: Vec<bool>,
    /// Contact measure over cube measure: each of the `(m-1)^{d-1}` interior
    /// nodes carries the volume `(R/(m-1))^{d-1}`.
    pub density: f64,
    /// `max_i |min(|u_i|, r_i / A_ii)|` with `r` the equation residual.
    pub complementarity: f64,
    pub sweeps: usize,
}

impl ObstacleSolution {
    /// Contact mask as a plain PBM bitmap (1 = contact). Cubes of dimension
    /// above two are written as stacked rows of their first two axes.
    pub fn mask_pbm(&self) -> String {
        let width = self.dims.last().copied().unwrap_or(1);
        let height = self.contact.len() / width.max(1);
        let mut s = format!("P1\n{width} {height}\n");
        for row in self.contact.chunks(width) {
            let line: Vec<&str> = row.iter().map(|&c| if c { "1" } else { "0" }).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }
}

/// Orthonormal basis of `⟨e⟩^⊥` from Gram–Schmidt on the projected unit vectors.
fn orthonormal_complement(e: &Direction) -> DMatrix<f64> {
    let d = e.dim();
    let p = e.projector();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d - 1);
    // Start from the coordinate axes least aligned with e.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| e.unit()[i].abs().total_cmp(&e.unit()[j].abs()));
    for &i in &order {
        let mut v: Vec<f64> = (0..d).map(|r| p[(r, i)]).collect();
        for c in &cols {
            let proj: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= proj * b);
        }
        let n = norm(&v);
        if n > 1e-8 {
            cols.push(v.iter().map(|x| x / n).collect());
        }
        if cols.len() == d - 1 {
            break;
        }
    }
    DMatrix::from_fn(d, d - 1, |r, c| cols[c][r])
}

/// Discretized cube problem: 5/9-point stencil of `−tr(c D_t^2)` and `g`.
struct CubeSystem {
    dims: Vec<usize>,
    rows: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
    g: Vec<f64>,
}

fn assemble(op: &ProjectedOperator, x: &Mat, mu: f64, cube: &CubeSpec) -> CubeSystem {
    let field = op.field();
    let e = op.direction();
    let d = e.dim();
    let k = d - 1;
    let o = orthonormal_complement(e);
    let h = cube.r / cube.m as f64;
    let n = cube.m - 1;
    let dims = vec![n; k];
    let total = n.pow(k as u32);
    let proj = e.projector();
    let data: Vec<(Vec<(usize, f64)>, f64, f64)> = (0..total)
        .into_par_iter()
        .map(|p| {
            let mut idx = vec![0; k];
            unravel(p, &dims, &mut idx);
            let t: Vec<f64> = idx
                .iter()
                .map(|&i| (i + 1) as f64 * h - 0.5 * cube.r)
                .collect();
            let y: Vec<f64> = (0..d)
                .map(|r| {
                    cube.x_shift[r] + (0..k).map(|c| o[(r, c)] * t[c]).sum::<f64>() / cube.theta
                })
                .collect();
            let a = field.a(&y, e.unit());
            let b = &proj * &a * &proj;
            let c = o.transpose() * &a * &o;
            let g = field.m(&y, e.unit()) * mu + trace_product(&b, x);
            // Neighbour index, or None on the Dirichlet boundary.
            let nb = |axes: &[(usize, isize)]| -> Option<usize> {
                let mut j = idx.clone();
                for &(ax, s) in axes {
                    let v = j[ax] as isize + s;
                    if v < 0 || v >= n as isize {
                        return None;
                    }
                    j[ax] = v as usize;
                }
                Some(crate::grid::ravel(&j, &dims))
            };
            let mut row = Vec::new();
            let mut diag = 0.0;
            for i in 0..k {
                let w = c[(i, i)] / (h * h);
                diag += 2.0 * w;
                for s in [-1, 1] {
                    if let Some(q) = nb(&[(i, s)]) {
                        row.push((q, -w));
                    }
                }
                for j in i + 1..k {
                    let w = 2.0 * c[(i, j)] / (4.0 * h * h);
                    if w == 0.0 {
                        continue;
                    }
                    for (si, sj, sign) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)]
                    {
                        if let Some(q) = nb(&[(i, si), (j, sj)]) {
                            row.push((q, -sign * w));
                        }
                    }
                }
            }
            (row, diag, g)
        })
        .collect();
    let mut rows = Vec::with_capacity(total);
    let mut diag = Vec::with_capacity(total);
    let mut g = Vec::with_capacity(total);
    for (r, dg, gg) in data {
        rows.push(r);
        diag.push(dg);
        g.push(gg);
    }
    CubeSystem {
        dims,
        rows,
        diag,
        g,
    }
}

const OMEGA: f64 = 1.5;
const SWEEP_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 1_000_000;

/// Projected SOR for `z ≥ 0, A z + q ≥ 0, z·(A z + q) = 0`.
fn psor(sys: &CubeSystem, q: &[f64]) -> Result<(Vec<f64>, usize)> {
    let n = q.len();
    let mut z = vec![0.0; n];
    for sweep in 1..=MAX_SWEEPS {
        let mut max_update = 0.0f64;
        for i in 0..n {
            let r: f64 =
                q[i] + sys.diag[i] * z[i] + sys.rows[i].iter().map(|&(j, a)| a * z[j]).sum::<f64>();
            let new = (z[i] - OMEGA * r / sys.diag[i]).max(0.0);
            max_update = max_update.max((new - z[i]).abs());
            z[i] = new;
        }
        if max_update <= SWEEP_TOL {
            return Ok((z, sweep));
        }
    }
    Err(HomogError::NotConverged(MAX_SWEEPS))
}

/// Solves the sub- or supersolution obstacle problem on one cube.
pub fn solve_obstacle(
    op: &ProjectedOperator,
    kind: ObstacleKind,
    x: &Mat,
    mu: f64,
    cube: &CubeSpec,
) -> Result<ObstacleSolution> {
    let e = op.direction();
    let d = e.dim();
    if !(cube.r > 0.0) || !(cube.theta > 0.0) {
        return Err(HomogError::InvalidInput(
            "cube side and theta must be positive".into(),
        ));
    }
    if cube.x_shift.len() != d || x.nrows() != d || x.ncols() != d {
        return Err(HomogError::InvalidInput(
            "shift or X has the wrong dimension".into(),
        ));
    }
    let needed = (8.0 * cube.r / cube.theta).ceil() as usize;
    if cube.m < needed.max(2) {
        return Err(HomogError::InvalidInput(format!(
            "grid of {} cells does not resolve the coefficient period (need {needed})",
            cube.m
        )));
    }
    let sys = assemble(op, x, mu, cube);
    // sub: v = −u, q = g; super: u, q = −g.
    let q: Vec<f64> = match kind {
        ObstacleKind::Sub => sys.g.clone(),
        ObstacleKind::Super => sys.g.iter().map(|v| -v).collect(),
    };
    let (z, sweeps) = psor(&sys, &q)?;
    let scale = z.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let contact: Vec<bool> = z.iter().map(|&v| v <= 1e-12 * scale).collect();
    let complementarity = (0..z.len())
        .map(|i| {
            let r =
                q[i] + sys.diag[i] * z[i] + sys.rows[i].iter().map(|&(j, a)| a * z[j]).sum::<f64>();
            z[i].min(r / sys.diag[i]).abs()
        })
        .fold(0.0, f64::max);
    let count = contact.iter().filter(|&&c| c).count();
    let density = count as f64 / contact.len() as f64;
    let u = match kind {
        ObstacleKind::Sub => z.iter().map(|v| -v).collect(),
        ObstacleKind::Super => z,
    };
    Ok(ObstacleSolution {
        kind,
        e: e.clone(),
        x: x.clone(),
        mu,
        cube: cube.clone(),
        u,
        dims: sys.dims,
        contact,
        density,
        complementarity,
        sweeps,
    })
}

/// Settings of [`critical_mu`].
#[derive(Clone, Debug)]
pub struct CriticalOptions {
    pub r: f64,
    pub theta: f64,
    pub m: usize,
    /// Cube centers; the density is averaged over them.
    pub shifts: Vec<Vec<f64>>,
    /// Bracket width.
    pub tol: f64,
    /// Density separating "no contact" from "contact".
    pub threshold: f64,
}

impl CriticalOptions {
    /// Four shifts `(0, ¼, ½, ¾)` of the period along every axis.
    pub fn with_default_shifts(d: usize, r: f64, tol: f64) -> Self {
        let shifts = (0..4).map(|i| vec![i as f64 / 4.0; d]).collect();
        CriticalOptions {
            r,
            theta: 1.0,
            m: (8.0 * r).ceil() as usize,
            shifts,
            tol,
            threshold: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticalMu {
    pub mu_hat: f64,
    pub sub_bracket: (f64, f64),
    pub super_bracket: (f64, f64),
}

fn mean_density(
    op: &ProjectedOperator,
    kind: ObstacleKind,
    x: &Mat,
    mu: f64,
    opts: &CriticalOptions,
) -> Result<f64> {
    let dens: Vec<f64> = opts
        .shifts
        .par_iter()
        .map(|s| {
            let cube = CubeSpec {
                r: opts.r,
                x_shift: s.clone(),
                theta: opts.theta,
                m: opts.m,
            };
            solve_obstacle(op, kind, x, mu, &cube).map(|sol| sol.density)
        })
        .collect::<Result<_>>()?;
    Ok(dens.iter().sum::<f64>() / dens.len() as f64)
}

/// Bisection for the contact transition; `contact(μ)` must be monotone with
/// the given orientation. Returns `(lo, hi)` with the transition inside.
fn bisect_transition<F>(
    contact: F,
    increasing: bool,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<bool>,
{
    // With increasing orientation: no contact at lo, contact at hi.
    let inside = |mu: f64| contact(mu).map(|c| c == increasing);
    let mut span = hi - lo;
    while inside(lo)? {
        lo -= span;
        span *= 2.0;
        if span > 1e8 {
            return Err(HomogError::InvalidInput(
                "no contact transition found".into(),
            ));
        }
    }
    while !inside(hi)? {
        hi += span;
        span *= 2.0;
        if span > 1e8 {
            return Err(HomogError::InvalidInput(
                "no contact transition found".into(),
            ));
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if inside(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo, hi))
}

/// Critical value `μ̂` where contact sets of positive density appear, from
/// both obstacle variants.
pub fn critical_mu(op: &ProjectedOperator, x: &Mat, opts: &CriticalOptions) -> Result<CriticalMu> {
    if !(opts.tol > 0.0) {
        return Err(HomogError::InvalidInput("tol must be positive".into()));
    }
    if opts.shifts.is_empty() {
        return Err(HomogError::InvalidInput(
            "at least one shift is required".into(),
        ));
    }
    let field = op.field();
    let spread = field.big_lambda() * x.abs().sum() / field.m_min() + 1.0;
    let sub = bisect_transition(
        |mu| mean_density(op, ObstacleKind::Sub, x, mu, opts).map(|d| d >= opts.threshold),
        true,
        -spread,
        spread,
        opts.tol,
    )?;
    // The supersolution density decreases in μ: "contact" orientation flips.
    let sup = bisect_transition(
        |mu| mean_density(op, ObstacleKind::Super, x, mu, opts).map(|d| d < opts.threshold),
        true,
        -spread,
        spread,
        opts.tol,
    )?;
    let lo = sub.0.max(sup.0);
    let hi = sub.1.min(sup.1);
    let mu_hat = if lo <= hi {
        0.5 * (lo + hi)
    } else {
        let gap = lo - hi;
        if gap > 3.0 * opts.tol {
            return Err(HomogError::BracketsDisagree {
                sub_lo: sub.0,
                sub_hi: sub.1,
                sup_lo: sup.0,
                sup_hi: sup.1,
            });
        }
        0.5 * (lo + hi)
    };
    Ok(CriticalMu {
        mu_hat,
        sub_bracket: sub,
        super_bracket: sup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{project_a, CoefficientField, TrigMode, TrigSeries};
    use crate::lattice::primitive_direction;

    fn harmonic_field() -> CoefficientField {
        CoefficientField::isotropic_trig(
            2,
            TrigSeries::new(2.0, vec![TrigMode::new(1.0, &[1, 0])]),
            TrigSeries::constant(1.0),
        )
        .unwrap()
    }

    fn cube(d: usize, r: f64) -> CubeSpec {
        CubeSpec {
            r,
            x_shift: vec![0.0; d],
            theta: 1.0,
            m: (8.0 * r) as usize,
        }
    }

    fn e1e1() -> Mat {
        Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])
    }

    #[test]
    fn very_negative_mu_has_no_contact() {
        let f = harmonic_field();
        let e = primitive_direction(&[0, 1]).unwrap();
        let op = project_a(&f, &e).unwrap();
        let mu = -f.big_lambda() * 1.0 - 1.0;
        let sol = solve_obstacle(&op, ObstacleKind::Sub, &e1e1(), mu, &cube(2, 4.0)).unwrap();
        assert_eq!(sol.density, 0.0);
        assert!(sol.u.iter().all(|&u| u < 0.0));
        assert!(sol.complementarity <= 1e-8, "{}", sol.complementarity);
    }

    #[test]
    fn very_positive_mu_is_all_contact() {
        let f = harmonic_field();
        let e = primitive_direction(&[0, 1]).unwrap();
        let op = project_a(&f, &e).unwrap();
        let sol = solve_obstacle(&op, ObstacleKind::Sub, &e1e1(), 10.0, &cube(2, 4.0)).unwrap();
        assert_eq!(sol.density, 1.0);
        assert!(sol.u.iter().all(|&u| u == 0.0));
        let sup = solve_obstacle(&op, ObstacleKind::Super, &e1e1(), -10.0, &cube(2, 4.0)).unwrap();
        assert_eq!(sup.density, 1.0);
    }

    #[test]
    fn constant_coefficients_one_dimensional_cube() {
        // b = 3 e⊥⊗e⊥, X = 2 e⊥⊗e⊥: critical μ = −tr(bX)/m = −6/2.
        let a0 = Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let f = CoefficientField::constant(a0, TrigSeries::constant(2.0)).unwrap();
        let e = primitive_direction(&[0, 1]).unwrap();
        let op = project_a(&f, &e).unwrap();
        let x = e1e1() * 2.0;
        let c = cube(2, 4.0);
        let below = solve_obstacle(&op, ObstacleKind::Sub, &x, -3.1, &c).unwrap();
        let above = solve_obstacle(&op, ObstacleKind::Sub, &x, -2.9, &c).unwrap();
        assert_eq!(below.density, 0.0);
        assert!(above.density > 0.0);
        // Closed form of the unconstrained problem: v'' = (2μ + 6)/3, v = 0 at the ends.
        let h = c.r / c.m as f64;
        for (i, u) in below.u.iter().enumerate() {
            let t = (i + 1) as f64 * h;
            let v = -(2.0 * -3.1 + 6.0) / 3.0 * t * (c.r - t) / 2.0;
            assert!((-u - v).abs() < 1e-7, "{i}: {u} {v}");
        }
        let opts = CriticalOptions::with_default_shifts(2, 4.0, 1e-3);
        let crit = critical_mu(&op, &x, &opts).unwrap();
        assert!((crit.mu_hat + 3.0).abs() < 1e-3, "{crit:?}");
    }

    #[test]
    fn zero_hessian_gives_zero_critical_value() {
        let f = harmonic_field();
        let e = primitive_direction(&[0, 1]).unwrap();
        let op = project_a(&f, &e).unwrap();
        let crit = critical_mu(
            &op,
            &Mat::zeros(2, 2),
            &CriticalOptions::with_default_shifts(2, 4.0, 1e-3),
        )
        .unwrap();
        assert!(crit.mu_hat.abs() < 1e-3, "{crit:?}");
    }

    #[test]
    fn sub_density_is_monotone_in_mu() {
        let f = harmonic_field();
        let e = primitive_direction(&[0, 1]).unwrap();
        let op = project_a(&f, &e).unwrap();
        let dens: Vec<f64> = (0..12)
            .map(|i| {
                let mu = -2.2 + 0.1 * i as f64;
                solve_obstacle(&op, ObstacleKind::Sub, &e1e1(), mu, &cube(2, 8.0))
                    .unwrap()
                    .density
            })
            .collect();
        assert!(dens.windows(2).all(|w| w[0] <= w[1]), "{dens:?}");
        assert!(dens[0] == 0.0 && dens[11] > 0.0);
    }

    #[test]
    fn complementarity_holds_in_the_mixed_regime() {
        let f = harmonic_field();
        let e = primitive_direction(&[0, 1]).unwrap();
        let op = project_a(&f, &e).unwrap();
        for kind in [ObstacleKind::Sub, ObstacleKind::Super] {
            let sol = solve_obstacle(&op, kind, &e1e1(), -1.6, &cube(2, 8.0)).unwrap();
            assert!(
                sol.complementarity <= 1e-8,
                "{kind:?}: {}",
                sol.complementarity
            );
            match kind {
                ObstacleKind::Sub => assert!(sol.u.iter().all(|&u| u <= 0.0)),
                ObstacleKind::Super => assert!(sol.u.iter().all(|&u| u >= 0.0)),
            }
        }
    }

    #[test]
    fn density_grows_at_least_quadratically() {
        let f = harmonic_field();
        let e = primitive_direction(&[0, 1]).unwrap();
        let op = project_a(&f, &e).unwrap();
        let crit = critical_mu(
            &op,
            &e1e1(),
            &CriticalOptions::with_default_shifts(2, 8.0, 0.025),
        )
        .unwrap();
        let fitted = [0.2, 0.4, 0.8]
            .iter()
            .map(|&delta| {
                let d = solve_obstacle(
                    &op,
                    ObstacleKind::Sub,
                    &e1e1(),
                    crit.mu_hat + delta,
                    &cube(2, 8.0),
                )
                .unwrap()
                .density;
                d / (delta * delta)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(fitted > 0.0);
    }

    #[test]
    fn under_resolved_grid_is_rejected() {
        let f = harmonic_field();
        let e = primitive_direction(&[0, 1]).unwrap();
        let op = project_a(&f, &e).unwrap();
        let c = CubeSpec {
            m: 10,
            ..cube(2, 4.0)
        };
        assert!(matches!(
            solve_obstacle(&op, ObstacleKind::Sub, &e1e1(), 0.0, &c),
            Err(HomogError::InvalidInput(_))
        ));
    }

    #[test]
    fn mask_bitmap_layout() {
        let a0 = Mat::identity(3, 3);
        let f = CoefficientField::constant(a0, TrigSeries::constant(1.0)).unwrap();
        let e = primitive_direction(&[0, 0, 1]).unwrap();
        let op = project_a(&f, &e).unwrap();
        let sol = solve_obstacle(
            &op,
            ObstacleKind::Sub,
            &Mat::zeros(3, 3),
            1.0,
            &cube(3, 1.0),
        )
        .unwrap();
        let pbm = sol.mask_pbm();
        let mut lines = pbm.lines();
        assert_eq!(lines.next(), Some("P1"));
        assert_eq!(lines.next(), Some("7 7"));
        assert!(lines.all(|l| l.split(' ').count() == 7 && l.split(' ').all(|c| c == "1")));
    }

    #[test]
    fn orthonormal_complement_is_orthonormal() {
        for k in [vec![1i64, 2, 3], vec![0, 0, 1], vec![3, -1]] {
            let e = primitive_direction(&k).unwrap();
            let o = orthonormal_complement(&e);
            let g = o.transpose() * &o;
            assert!((g - Mat::identity(k.len() - 1, k.len() - 1)).amax() < 1e-14);
            let ev = DMatrix::from_column_slice(k.len(), 1, e.unit());
            assert!((o.transpose() * ev).amax() < 1e-14);
        }
    }
}
