//! Penalized and slice cell problems, the extrapolated oscillating profile
//! `F_e^⊥`, and the Fourier corrector for Diophantine directions.
//!
//! Rational directions are discretized on the lattice-aligned grid `y = U z`
//! (see [`SliceChart::frame`]): the last grid axis indexes the slices, so the
//! degenerate operator `tr(b D^2)` decouples exactly into one uniformly
//! elliptic problem per level.

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::coeffs::{trace_product, Mat, ProjectedOperator, TrigSeries};
use crate::error::{HomogError, Result};
use crate::grid::{lattice_point, trace_operator, GridDomain, GridFunction};
use crate::lattice::{dot, norm, slice_lattice_basis, Direction, SliceChart};
use crate::linalg::{krylov, periodic_grid_ordering, BandedLu, Csr};
use crate::measures::{invariant_measure_slice, slice_generator, InvariantMeasure};
use crate::spectral::{apply_multiplier, fftn, wavenumber};

const KRYLOV_TOL: f64 = 1e-10;

/// Discrete corrector with its residual and gauge.
#[derive(Clone, Debug)]
pub struct Corrector {
    pub v: GridFunction,
    /// Penalization `δ` (zero for exact correctors).
    pub delta: f64,
    /// Sup norm of the discrete equation residual.
    pub residual_inf: f64,
    /// Bound the residual was solved to.
    pub tol: f64,
    pub mean: f64,
}

/// Samples of an `r_e`-periodic function of `s = ⟨y,e⟩` on `s_j = j r_e / n`.
#[derive(Clone, Debug)]
pub struct OscillatingProfile<T> {
    pub e: Direction,
    pub period: f64,
    pub s_grid: Vec<f64>,
    pub values: Vec<T>,
}

impl<T> OscillatingProfile<T> {
    pub fn uniform(e: Direction, period: f64, values: Vec<T>) -> Self {
        let n = values.len();
        let s_grid = (0..n).map(|j| j as f64 * period / n as f64).collect();
        OscillatingProfile {
            e,
            period,
            s_grid,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl OscillatingProfile<f64> {
    /// Periodic trapezoid average over one period.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Trigonometric interpolation at an arbitrary offset.
    pub fn eval(&self, s: f64) -> f64 {
        crate::spectral::trig_interpolate(&self.values, self.period, s)
    }
}

impl OscillatingProfile<Mat> {
    pub fn mean(&self) -> Mat {
        let mut acc = self.values[0].clone() * 0.0;
        for v in &self.values {
            acc += v;
        }
        acc / self.len() as f64
    }
}

fn check_x(op: &ProjectedOperator, x: &Mat) -> Result<()> {
    let d = op.direction().dim();
    if x.nrows() != d || x.ncols() != d {
        return Err(HomogError::InvalidInput(format!("X must be {d}x{d}")));
    }
    if (x - x.transpose()).amax() > 1e-12 * x.amax().max(1.0) {
        return Err(HomogError::InvalidInput("X must be symmetric".into()));
    }
    Ok(())
}

/// Lattice-frame coefficient `U^{-1} b U^{-T}` restricted to the slice axes.
fn level_coefficient(uinv: &DMatrix<f64>, b: &Mat) -> Mat {
    let d = b.nrows();
    let c = uinv * b * uinv.transpose();
    let mut top = c.view((0, 0), (d - 1, d - 1)).into_owned();
    crate::lattice::symmetrize(&mut top);
    top
}

/// Solves `(diag + (-L)) v = f` on one grid and returns `(v, ‖residual‖_∞, tol)`.
fn solve_shifted(l: &Csr, dims: &[usize], diag: &[f64], f: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    let mut a = l.clone();
    a.scale(-1.0);
    a.add_diagonal(diag);
    let n = f.len();
    let v = if dims.len() == 1 {
        BandedLu::factor(&a, &periodic_grid_ordering(dims))?.solve(f)
    } else {
        let mut v = vec![0.0; n];
        match krylov(&a, f, &mut v, KRYLOV_TOL, 20 * n + 2000) {
            Ok(_) => v,
            Err(err) if n <= 10_000 => {
                log::debug!("krylov failed ({err}); falling back to banded LU");
                BandedLu::factor(&a, &periodic_grid_ordering(dims))?.solve(f)
            }
            Err(err) => return Err(err),
        }
    };
    let r = a
        .apply(&v)
        .iter()
        .zip(f)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    let tol = KRYLOV_TOL * f.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok((v, r, tol))
}

/// `δ m V − tr(b D^2 V) = tr(b X)` on an `N^d` periodic grid.
///
/// Rational directions use the lattice frame (one decoupled system per
/// level); irrational proxies fall back to the Cartesian grid where the
/// operator is degenerate and only `δ > 0` makes it invertible.
pub fn solve_penalized(op: &ProjectedOperator, x: &Mat, delta: f64, n: usize) -> Result<Corrector> {
    if !(delta > 0.0) {
        return Err(HomogError::InvalidInput("delta must be positive".into()));
    }
    if n < 16 {
        return Err(HomogError::InvalidInput(
            "penalized grids need N >= 16".into(),
        ));
    }
    check_x(op, x)?;
    let d = op.direction().dim();
    if op.direction().is_rational() {
        let chart = slice_lattice_basis(op.direction())?;
        let (_, uinv) = chart.frame();
        let mut out = GridFunction::zeros(GridDomain::LatticeTorus(chart.clone()), vec![n; d]);
        let levels: Vec<(Vec<f64>, f64, f64)> = (0..n)
            .into_par_iter()
            .map(|j| {
                let dims = vec![n; d - 1];
                let h = vec![1.0 / n as f64; d - 1];
                let local = GridFunction::zeros(GridDomain::Torus, dims.clone());
                let data: Vec<(Mat, f64, f64)> = (0..local.len())
                    .map(|p| {
                        let mut z = local.node(p);
                        z.push(j as f64 / n as f64);
                        let y = lattice_point(&chart, &z);
                        let b = op.b(&y);
                        (
                            level_coefficient(&uinv, &b),
                            delta * op.m(&y),
                            trace_product(&b, x),
                        )
                    })
                    .collect();
                let l = trace_operator(&dims, &h, |p| data[p].0.clone());
                let diag: Vec<f64> = data.iter().map(|t| t.1).collect();
                let f: Vec<f64> = data.iter().map(|t| t.2).collect();
                solve_shifted(&l, &dims, &diag, &f)
            })
            .collect::<Result<_>>()?;
        let (mut res, mut tol) = (0.0f64, 0.0f64);
        for (j, (v, r, t)) in levels.into_iter().enumerate() {
            for (p, val) in v.into_iter().enumerate() {
                out.values[p * n + j] = val;
            }
            res = res.max(r);
            tol = tol.max(t);
        }
        let mean = out.mean();
        Ok(Corrector {
            v: out,
            delta,
            residual_inf: res,
            tol,
            mean,
        })
    } else {
        let mut out = GridFunction::zeros(GridDomain::Torus, vec![n; d]);
        let data: Vec<(Mat, f64, f64)> = (0..out.len())
            .into_par_iter()
            .map(|p| {
                let y = out.node(p);
                let b = op.b(&y);
                let f = trace_product(&b, x);
                (b, delta * op.m(&y), f)
            })
            .collect();
        let l = trace_operator(&out.dims, &out.h, |p| data[p].0.clone());
        let diag: Vec<f64> = data.iter().map(|t| t.1).collect();
        let f: Vec<f64> = data.iter().map(|t| t.2).collect();
        let (v, residual_inf, tol) = solve_shifted(&l, &out.dims, &diag, &f)?;
        out.values = v;
        let mean = out.mean();
        Ok(Corrector {
            v: out,
            delta,
            residual_inf,
            tol,
            mean,
        })
    }
}

/// Schedule and extrapolation settings for [`extract_fperp`].
#[derive(Clone, Debug)]
pub struct FperpOptions {
    /// Decreasing penalizations.
    pub schedule: Vec<f64>,
    /// Number of Richardson eliminations (error terms `δ, δ^2, ...`).
    pub levels: usize,
    /// Largest acceptable spread of the last two extrapolants.
    pub tol: f64,
}

impl Default for FperpOptions {
    fn default() -> Self {
        FperpOptions {
            schedule: vec![0.2, 0.1, 0.05],
            levels: 1,
            tol: 1e-2,
        }
    }
}

/// Extrapolated `F_e^⊥(X, ·)` with the raw per-δ profiles.
#[derive(Clone, Debug)]
pub struct FperpEstimate {
    pub profile: OscillatingProfile<f64>,
    pub spread: f64,
    pub raw: Vec<OscillatingProfile<f64>>,
}

/// Richardson table over a decreasing schedule, assuming error terms
/// `c_1 δ + c_2 δ^2 + ...`; returns the final value and its spread.
fn richardson(deltas: &[f64], values: &[f64], levels: usize) -> (f64, f64) {
    let mut col: Vec<f64> = values.to_vec();
    let mut ds: Vec<f64> = deltas.to_vec();
    let mut prev_last = *col.last().unwrap();
    for p in 1..=levels {
        if col.len() < 2 {
            break;
        }
        prev_last = *col.last().unwrap();
        let next: Vec<f64> = col
            .windows(2)
            .zip(ds.windows(2))
            .map(|(v, d)| {
                let q = (d[0] / d[1]).powi(p as i32);
                (q * v[1] - v[0]) / (q - 1.0)
            })
            .collect();
        col = next;
        ds.remove(0);
    }
    let last = *col.last().unwrap();
    let spread = if col.len() >= 2 {
        (last - col[col.len() - 2]).abs()
    } else {
        (last - prev_last).abs()
    };
    (last, spread)
}

/// `F_e^⊥(X, s e) = lim δ V^δ` averaged over each slice and extrapolated in δ.
pub fn extract_fperp(
    op: &ProjectedOperator,
    x: &Mat,
    opts: &FperpOptions,
    n: usize,
) -> Result<FperpEstimate> {
    let e = op.direction().clone();
    e.require_rational()?;
    if opts.schedule.len() < 2 || opts.levels == 0 || opts.levels >= opts.schedule.len() {
        return Err(HomogError::InvalidInput(
            "schedule needs at least levels + 1 decreasing penalizations".into(),
        ));
    }
    if opts.schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(HomogError::InvalidInput(
            "schedule must be strictly decreasing".into(),
        ));
    }
    let r = e.period().expect("rational");
    let raw: Vec<OscillatingProfile<f64>> = opts
        .schedule
        .par_iter()
        .map(|&delta| {
            let c = solve_penalized(op, x, delta, n)?;
            let per_level: Vec<f64> = (0..n)
                .map(|j| {
                    let s: f64 = c.v.values.iter().skip(j).step_by(n).sum();
                    delta * s / (c.v.len() / n) as f64
                })
                .collect();
            Ok(OscillatingProfile::uniform(e.clone(), r, per_level))
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(n);
    let mut spread = 0.0f64;
    for j in 0..n {
        let col: Vec<f64> = raw.iter().map(|p| p.values[j]).collect();
        let (v, s) = richardson(&opts.schedule, &col, opts.levels);
        values.push(v);
        spread = spread.max(s);
    }
    if spread > opts.tol {
        return Err(HomogError::NonConvergent {
            spread,
            tol: opts.tol,
        });
    }
    Ok(FperpEstimate {
        profile: OscillatingProfile::uniform(e, r, values),
        spread,
        raw,
    })
}

/// Constant fixing the null direction of a slice cell problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gauge {
    /// `Ṽ(chart origin) = 0`.
    Origin,
    /// Zero grid mean.
    MeanZero,
}

/// Solution of `−tr(b D_e^2 Ṽ) = f − f_e^⊥(s)` on one slice.
#[derive(Clone, Debug)]
pub struct SliceCell {
    pub v: GridFunction,
    pub f_perp: f64,
    pub residual_inf: f64,
    pub measure: InvariantMeasure,
}

pub fn solve_slice_cell<F>(
    op: &ProjectedOperator,
    chart: &SliceChart,
    f: F,
    m: usize,
    gauge: Gauge,
) -> Result<SliceCell>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let measure = invariant_measure_slice(op, chart, m)?;
    let (l, mut grid) = slice_generator(op, chart, m);
    let fv: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|p| f(&grid.point(p)))
        .collect();
    let rho = &measure.rho.values;
    let n = fv.len() as f64;
    let f_perp = fv.iter().zip(rho).map(|(a, b)| a * b).sum::<f64>() / n;
    let rhs: Vec<f64> = fv.iter().map(|v| v - f_perp).collect();
    let compat = rhs.iter().zip(rho).map(|(a, b)| a * b).sum::<f64>() / n;
    let scale = fv.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if compat.abs() > 1e-8 * scale {
        return Err(HomogError::CompatibilityViolation(compat));
    }
    let mut a = l.clone();
    a.scale(-1.0);
    let full = a.clone();
    a.pin_row(0);
    let mut b = rhs.clone();
    b[0] = 0.0;
    let lu = BandedLu::factor(&a, &periodic_grid_ordering(&grid.dims))?;
    let mut v = lu.solve(&b);
    // One step of iterative refinement against the pinned system.
    let r: Vec<f64> = a.apply(&v).iter().zip(&b).map(|(p, q)| q - p).collect();
    let dv = lu.solve(&r);
    v.iter_mut().zip(&dv).for_each(|(x, y)| *x += y);
    if gauge == Gauge::MeanZero {
        let mean = v.iter().sum::<f64>() / n;
        v.iter_mut().for_each(|x| *x -= mean);
    }
    let residual_inf = full
        .apply(&v)
        .iter()
        .zip(&rhs)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    grid.values = v;
    Ok(SliceCell {
        v: grid,
        f_perp,
        residual_inf,
        measure,
    })
}

/// Exact corrector of `f − f_e^⊥ − tr(b D^2 Ṽ) = 0` on the lattice grid of a
/// rational direction, solved slice by slice (mean-zero gauge on each level),
/// together with the profile `f_e^⊥` on the levels.
pub fn oscillating_corrector<F>(
    op: &ProjectedOperator,
    f: F,
    n: usize,
) -> Result<(Corrector, OscillatingProfile<f64>)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let e = op.direction().clone();
    let r = e
        .period()
        .ok_or_else(|| HomogError::InvalidInput("rational direction required".into()))?;
    let chart = slice_lattice_basis(&e)?;
    let d = e.dim();
    let cells: Vec<SliceCell> = (0..n)
        .into_par_iter()
        .map(|j| {
            solve_slice_cell(
                op,
                &chart.at_level(j as f64 / n as f64),
                &f,
                n,
                Gauge::MeanZero,
            )
        })
        .collect::<Result<_>>()?;
    let mut out = GridFunction::zeros(GridDomain::LatticeTorus(chart), vec![n; d]);
    let mut res = 0.0f64;
    let mut perp = Vec::with_capacity(n);
    for (j, c) in cells.iter().enumerate() {
        // The slice cell solves −tr(b D^2 v) = f − f^⊥, so Ṽ = −v.
        for (p, &val) in c.v.values.iter().enumerate() {
            out.values[p * n + j] = -val;
        }
        res = res.max(c.residual_inf);
        perp.push(c.f_perp);
    }
    let mean = out.mean();
    Ok((
        Corrector {
            v: out,
            delta: 0.0,
            residual_inf: res,
            tol: 1e-9,
            mean,
        },
        OscillatingProfile::uniform(e, r, perp),
    ))
}

/// Outcome of [`diophantine_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct DiophantineReport {
    pub passed: bool,
    /// Minimizer of `‖k − ⟨k,e⟩e‖ ‖k‖^τ`.
    pub worst_k: Vec<i64>,
    pub worst_value: f64,
}

fn lattice_ball(d: usize, radius: f64) -> Vec<Vec<i64>> {
    let r = radius.floor() as i64;
    let side = (2 * r + 1) as usize;
    let total = side.pow(d as u32);
    let mut out = Vec::new();
    let mut idx = vec![0usize; d];
    let dims = vec![side; d];
    for lin in 0..total {
        crate::grid::unravel(lin, &dims, &mut idx);
        let k: Vec<i64> = idx.iter().map(|&i| i as i64 - r).collect();
        let n2: i64 = k.iter().map(|x| x * x).sum();
        if n2 > 0 && (n2 as f64) <= radius * radius + 1e-9 {
            out.push(k);
        }
    }
    out
}

fn sign_normalized(mut k: Vec<i64>) -> Vec<i64> {
    if k.iter().find(|&&x| x != 0).is_some_and(|&x| x < 0) {
        k.iter_mut().for_each(|x| *x = -*x);
    }
    k
}

fn projected_norm(k: &[i64], e: &[f64]) -> f64 {
    let kf: Vec<f64> = k.iter().map(|&x| x as f64).collect();
    let c = dot(&kf, e);
    let p: Vec<f64> = kf.iter().zip(e).map(|(a, b)| a - c * b).collect();
    norm(&p)
}

/// Checks `‖k − ⟨k,e⟩e‖ ≥ C_e ‖k‖^{−τ}` for all `0 < ‖k‖ ≤ K_max`.
pub fn diophantine_check(e: &[f64], c_e: f64, tau: f64, k_max: usize) -> DiophantineReport {
    let nrm = norm(e);
    let e: Vec<f64> = e.iter().map(|x| x / nrm).collect();
    let ks = lattice_ball(e.len(), k_max.max(1) as f64);
    let (worst_k, worst_value) = ks
        .par_iter()
        .map(|k| {
            let kn = (k.iter().map(|x| x * x).sum::<i64>() as f64).sqrt();
            (k.clone(), projected_norm(k, &e) * kn.powf(tau))
        })
        .reduce(
            || (Vec::new(), f64::INFINITY),
            |a, b| {
                // Near-ties (exact zeros up to rounding) go to the shortest vector.
                let tie = (a.1 - b.1).abs() <= 1e-12;
                let key = |k: &[i64]| {
                    (
                        k.iter().map(|x| x * x).sum::<i64>(),
                        sign_normalized(k.to_vec()),
                    )
                };
                if (!tie && b.1 < a.1) || (tie && key(&b.0) < key(&a.0)) {
                    b
                } else {
                    a
                }
            },
        );
    DiophantineReport {
        passed: worst_value >= c_e,
        worst_k: sign_normalized(worst_k),
        worst_value,
    }
}

/// Fourier corrector with its coefficients and error budget.
#[derive(Clone, Debug)]
pub struct FourierCorrector {
    pub corrector: Corrector,
    /// Retained `(k, amplitude, phase)` of `V_e = Σ amp cos(2π⟨k,y⟩ + phase)`.
    pub modes: Vec<(Vec<i64>, f64, f64)>,
    /// `Σ |amp|` of the mobility modes beyond the truncation radius.
    pub tail_bound: f64,
    pub m_bar: f64,
}

/// Solves `m − m̄ − tr((Id − e⊗e) D^2 V) = 0` mode by mode,
/// `V̂(k) = −m̂(k) / (4π^2 ‖k − ⟨k,e⟩e‖^2)`, keeping `0 < ‖k‖ ≤ K`.
/// The residual is measured with exact spectral differentiation on an `n^d` grid.
pub fn fourier_corrector(
    mobility: &TrigSeries,
    e: &Direction,
    k_trunc: usize,
    n: usize,
) -> Result<FourierCorrector> {
    let d = e.dim();
    let u = e.unit();
    for k in lattice_ball(d, k_trunc as f64) {
        let pn = projected_norm(&k, u);
        if pn < 1e-12 {
            return Err(HomogError::SmallDivisor {
                k: sign_normalized(k),
                norm: pn,
            });
        }
    }
    let four_pi2 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;
    let mut modes = Vec::new();
    let mut tail_bound = 0.0;
    for mode in &mobility.modes {
        if mode.k.len() != d {
            return Err(HomogError::InvalidInput(
                "mobility mode has the wrong dimension".into(),
            ));
        }
        let kn = (mode.k.iter().map(|x| x * x).sum::<i64>() as f64).sqrt();
        if kn == 0.0 {
            continue;
        }
        if kn > k_trunc as f64 + 1e-9 {
            tail_bound += mode.amp.abs();
            continue;
        }
        let pn = projected_norm(&mode.k, u);
        modes.push((mode.k.clone(), -mode.amp / (four_pi2 * pn * pn), mode.phase));
    }
    let m_bar = mobility.mean
        + mobility
            .modes
            .iter()
            .filter(|m| m.k.iter().all(|&x| x == 0))
            .map(|m| m.amp * m.phase.cos())
            .sum::<f64>();

    let mut grid = GridFunction::zeros(GridDomain::Torus, vec![n; d]);
    grid.values = (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let y = grid.node(p);
            modes
                .iter()
                .map(|(k, amp, ph)| {
                    let arg: f64 = k.iter().zip(&y).map(|(&a, b)| a as f64 * b).sum();
                    amp * (2.0 * std::f64::consts::PI * arg + ph).cos()
                })
                .sum()
        })
        .collect();
    let lap = apply_multiplier(&grid.values, &grid.dims, |k| {
        let pn = projected_norm(k, u);
        Complex64::new(-four_pi2 * pn * pn, 0.0)
    });
    let residual_inf = (0..grid.len())
        .map(|p| {
            let y = grid.node(p);
            (mobility.eval(&y) - m_bar - lap[p]).abs()
        })
        .fold(0.0, f64::max);
    let mmax = mobility
        .upper_bound()
        .abs()
        .max(mobility.lower_bound().abs());
    let tol = tail_bound + 10.0 * f64::EPSILON * mmax;
    let mean = grid.mean();
    Ok(FourierCorrector {
        corrector: Corrector {
            v: grid,
            delta: 0.0,
            residual_inf,
            tol,
            mean,
        },
        modes,
        tail_bound,
        m_bar,
    })
}

/// Spectral coefficients of real samples on a periodic grid, keyed by signed wavenumber.
pub fn fourier_coefficients(values: &[f64], dims: &[usize]) -> Vec<(Vec<i64>, Complex64)> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fftn(&mut buf, dims, false);
    let total = values.len() as f64;
    let mut idx = vec![0; dims.len()];
    buf.into_iter()
        .enumerate()
        .map(|(lin, c)| {
            crate::grid::unravel(lin, dims, &mut idx);
            let k = idx
                .iter()
                .zip(dims)
                .map(|(&i, &n)| wavenumber(i, n))
                .collect();
            (k, c / total)
        })
        .collect()
}
