//! Pulsating waves of the averaged one-dimensional problem, traveling
//! sub/supersolutions of the forced equation, and a direct front simulator.
//!
//! The simulator works in cell variables: with `u(x,t) = ⟨x,e⟩ + ε ω(x/ε, t/ε^2)`
//! the forced equation becomes
//! `m(y,p̂) ω_τ = tr(A(y,p̂) D^2 ω) + εα |e + ∇ω|`, `p = e + ∇ω`,
//! on the lattice-aligned grid of the rational direction `e`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::cellsolve::{Corrector, OscillatingProfile};
use crate::coeffs::{trace_product, CoefficientField, Mat};
use crate::error::{HomogError, Result};
use crate::grid::{
    gradient, hessian, lattice_point, neighbor, trace_operator, GridDomain, GridFunction,
};
use crate::lattice::{norm, slice_lattice_basis, Direction, SliceChart};
use crate::linalg::{bicgstab, Csr};
use crate::spectral::{apply_multiplier, trig_interpolate};
use rustfft::num_complex::Complex64;

/// `s + P(s) + α m̄_pl^{-1} t` solves `m_e^⊥(s) U_t = α |U_s|`.
#[derive(Clone, Debug)]
pub struct PulsatingWave {
    pub e: Direction,
    pub m_perp: OscillatingProfile<f64>,
    pub m_pl: f64,
    /// `P` on the profile grid, `P(0) = 0`.
    pub p: Vec<f64>,
    pub p_prime: Vec<f64>,
    pub p_second: Vec<f64>,
}

impl PulsatingWave {
    pub fn period(&self) -> f64 {
        self.m_perp.period
    }

    pub fn s_grid(&self) -> &[f64] {
        &self.m_perp.s_grid
    }

    pub fn eval(&self, s: f64) -> f64 {
        trig_interpolate(&self.p, self.period(), s)
    }

    pub fn eval_prime(&self, s: f64) -> f64 {
        trig_interpolate(&self.p_prime, self.period(), s)
    }

    pub fn eval_second(&self, s: f64) -> f64 {
        trig_interpolate(&self.p_second, self.period(), s)
    }

    /// `max_s |m_e^⊥(s)/m̄_pl − (1 + P'(s))|` on the profile grid.
    pub fn wave_defect(&self) -> f64 {
        self.m_perp
            .values
            .iter()
            .zip(&self.p_prime)
            .map(|(m, dp)| (m / self.m_pl - 1.0 - dp).abs())
            .fold(0.0, f64::max)
    }
}

/// `m̄_pl = r_e^{-1}∫ m_e^⊥` and `P(s) = m̄_pl^{-1} ∫_0^s m_e^⊥ − s`.
///
/// The antiderivative is taken spectrally (exact for band-limited samples);
/// `P'` and `P''` are spectral derivatives of the resulting `P`.
pub fn pulsating_profile(m_perp: &OscillatingProfile<f64>) -> Result<PulsatingWave> {
    if m_perp.is_empty() {
        return Err(HomogError::InvalidInput("empty mobility profile".into()));
    }
    if !(m_perp.min() > 0.0) {
        return Err(HomogError::InvalidInput(
            "mobility profile must be positive".into(),
        ));
    }
    let n = m_perp.len();
    let r = m_perp.period;
    let m_pl = m_perp.mean();
    let g: Vec<f64> = m_perp.values.iter().map(|m| m / m_pl - 1.0).collect();
    let w = 2.0 * std::f64::consts::PI / r;
    let mut p = apply_multiplier(&g, &[n], |k| {
        if k[0] == 0 || (n % 2 == 0 && k[0].unsigned_abs() as usize == n / 2) {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, -1.0 / (w * k[0] as f64))
        }
    });
    let p0 = p[0];
    p.iter_mut().for_each(|x| *x -= p0);
    let p_prime = crate::spectral::derivative_1d(&p, r, 1);
    let p_second = crate::spectral::derivative_1d(&p, r, 2);
    Ok(PulsatingWave {
        e: m_perp.e.clone(),
        m_perp: m_perp.clone(),
        m_pl,
        p,
        p_prime,
        p_second,
    })
}

/// Result of [`verify_traveling`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TravelingBounds {
    /// Smallest forcing making `u^{+,ε}` a supersolution on the grid.
    pub alpha_plus: f64,
    /// Largest forcing making `u^{-,ε}` a subsolution on the grid.
    pub alpha_minus: f64,
    /// `min(min R(α^+), −max R(α^−)) ≥ 0`.
    pub margin: f64,
    pub c_plus: f64,
    pub c_minus: f64,
}

/// Geometric diffusion `(Id − p̂⊗p̂) a(y,p̂) (Id − p̂⊗p̂)`.
fn geometric_a(field: &CoefficientField, y: &[f64], phat: &[f64]) -> Mat {
    let d = phat.len();
    let proj = DMatrix::from_fn(d, d, |i, j| {
        (if i == j { 1.0 } else { 0.0 }) - phat[i] * phat[j]
    });
    let mut a = &proj * field.a(y, phat) * &proj;
    crate::lattice::symmetrize(&mut a);
    a
}

/// Per-node data of `u^{±,ε}` on the lattice grid of the corrector.
struct AnsatzNode {
    y: Vec<f64>,
    dp: f64,
    ddp: f64,
    dv: Vec<f64>,
    d2v: Mat,
}

fn chart_of(v: &GridFunction) -> Result<&SliceChart> {
    match &v.domain {
        GridDomain::LatticeTorus(c) => Ok(c),
        _ => Err(HomogError::InvalidInput(
            "corrector must live on the lattice grid of a rational direction".into(),
        )),
    }
}

/// Bisects the forcing for the traveling sub- and supersolutions
/// `u^{±,ε} = ⟨x,e⟩ + εP(⟨x,e⟩/ε) + α^± m̄_pl^{-1}(ε^2 Ṽ(x/ε) + t)` of
/// `m u_t − tr(A D^2u) − α|Du| = 0`, evaluated on one periodicity cell.
pub fn verify_traveling(
    field: &CoefficientField,
    e: &Direction,
    alpha: f64,
    epsilon: f64,
    v_tilde: &Corrector,
    wave: &PulsatingWave,
) -> Result<TravelingBounds> {
    if alpha == 0.0 {
        return Err(HomogError::InvalidAlpha);
    }
    if !(epsilon > 0.0) {
        return Err(HomogError::InvalidInput("epsilon must be positive".into()));
    }
    if v_tilde.residual_inf > 1e-8 {
        return Err(HomogError::InvalidInput(format!(
            "corrector residual {:e} exceeds 1e-8",
            v_tilde.residual_inf
        )));
    }
    let r = e.require_rational().map(|_| e.period().unwrap())?;
    let chart = chart_of(&v_tilde.v)?;
    if chart.direction() != e {
        return Err(HomogError::InvalidInput(
            "corrector and direction differ".into(),
        ));
    }
    let (_, uinv) = chart.frame();
    let v = &v_tilde.v;
    let n_level = v.dims[e.dim() - 1];
    let on_grid = wave.p.len() == n_level;
    let nodes: Vec<AnsatzNode> = (0..v.len())
        .into_par_iter()
        .map(|p| {
            let z = v.node(p);
            let s = z[z.len() - 1] * r;
            let (dp, ddp) = if on_grid {
                let j = p % n_level;
                (wave.p_prime[j], wave.p_second[j])
            } else {
                (wave.eval_prime(s), wave.eval_second(s))
            };
            let gz = DMatrix::from_column_slice(z.len(), 1, &gradient(v, p));
            let dv = (uinv.transpose() * gz).iter().copied().collect();
            let d2v = uinv.transpose() * hessian(v, p) * &uinv;
            AnsatzNode {
                y: lattice_point(chart, &z),
                dp,
                ddp,
                dv,
                d2v,
            }
        })
        .collect();
    let u = e.unit();
    let d = u.len();
    let ee = DMatrix::from_fn(d, d, |i, j| u[i] * u[j]);
    let m_pl = wave.m_pl;

    // Residual range (min, max) over the cell for forcing beta.
    let residual = |beta: f64| -> Result<(f64, f64)> {
        let vals: Vec<f64> = nodes
            .par_iter()
            .map(|nd| {
                let k = beta / m_pl;
                let p: Vec<f64> = (0..d)
                    .map(|i| (1.0 + nd.dp) * u[i] + epsilon * k * nd.dv[i])
                    .collect();
                let pn = norm(&p);
                if pn < 0.5 {
                    return Err(HomogError::GradientDegenerate(pn));
                }
                let phat: Vec<f64> = p.iter().map(|x| x / pn).collect();
                let a = geometric_a(field, &nd.y, &phat);
                let d2u = &ee * (nd.ddp / epsilon) + &nd.d2v * k;
                Ok(field.m(&nd.y, &phat) * k - trace_product(&a, &d2u) - alpha * pn)
            })
            .collect::<Result<_>>()?;
        Ok(vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            }))
    };

    let limit = 10.0 * (alpha.abs() + 1.0);
    let step0 = epsilon * alpha.abs().max(1.0);
    // Supersolution: smallest beta with min R >= 0.
    let super_ok = |b: f64| residual(b).map(|(lo, _)| lo >= 0.0);
    let sub_ok = |b: f64| residual(b).map(|(_, hi)| hi <= 0.0);
    let alpha_plus = bracket_and_bisect(alpha, step0, limit, &super_ok, true)?;
    let alpha_minus = bracket_and_bisect(alpha, step0, limit, &sub_ok, false)?;
    let margin = residual(alpha_plus)?.0.min(-residual(alpha_minus)?.1);
    Ok(TravelingBounds {
        alpha_plus,
        alpha_minus,
        margin,
        c_plus: (alpha_plus - alpha).abs() / epsilon,
        c_minus: (alpha_minus - alpha).abs() / epsilon,
    })
}

/// For `upward`, finds the smallest `b` with `ok(b)` assuming `ok` is
/// monotone increasing in `b`; otherwise the largest `b` with `ok(b)`.
fn bracket_and_bisect<F>(alpha: f64, step0: f64, limit: f64, ok: &F, upward: bool) -> Result<f64>
where
    F: Fn(f64) -> Result<bool>,
{
    let dir = if upward { 1.0 } else { -1.0 };
    let (mut good, mut bad);
    if ok(alpha)? {
        good = alpha;
        let mut step = step0;
        loop {
            let b = alpha - dir * step;
            if !ok(b)? {
                bad = b;
                break;
            }
            good = b;
            step *= 2.0;
            if step > limit {
                return Ok(good);
            }
        }
    } else {
        bad = alpha;
        let mut step = step0;
        loop {
            let b = alpha + dir * step;
            if ok(b)? {
                good = b;
                break;
            }
            bad = b;
            step *= 2.0;
            if step > limit {
                return Err(HomogError::NoMargin(step));
            }
        }
    }
    for _ in 0..200 {
        if (good - bad).abs() <= 1e-13 * alpha.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (good + bad);
        if ok(mid)? {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(good)
}

/// Time discretization of the front simulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeScheme {
    /// Implicit diffusion with coefficients frozen at the current iterate,
    /// explicit Lax–Friedrichs/ENO2 forcing term.
    Imex,
    /// Fully explicit, diffusion-CFL limited.
    ForwardEuler,
}

#[derive(Clone, Debug)]
pub struct FrontOptions {
    /// Nodes per lattice axis of the cell grid.
    pub n: usize,
    pub scheme: TimeScheme,
    /// Cell-time step; chosen from the forcing CFL when `None`.
    pub dt: Option<f64>,
}

impl Default for FrontOptions {
    fn default() -> Self {
        FrontOptions {
            n: 32,
            scheme: TimeScheme::Imex,
            dt: None,
        }
    }
}

/// Simulation state and the extracted front speed.
#[derive(Clone, Debug)]
pub struct FrontState {
    pub e: Direction,
    pub epsilon: f64,
    pub alpha: f64,
    /// `w(x,t) = u − ⟨x,e⟩` sampled at `x = ε y` on the cell grid.
    pub w: GridFunction,
    /// Physical time reached.
    pub t: f64,
    /// `(t, mean w)` after every step.
    pub series: Vec<(f64, f64)>,
    /// Least-squares slope of `mean w` over `[t/2, t]`.
    pub speed: f64,
    /// RMS deviation from the fitted line.
    pub fit_residual: f64,
    pub steps: usize,
    pub dt: f64,
    /// Largest `‖Dw‖_∞` seen.
    pub max_gradient: f64,
}

fn least_squares_slope(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mw = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mw)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let rms = (pts
        .iter()
        .map(|p| (p.1 - mw - slope * (p.0 - mt)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, rms)
}

/// Slope of `mean w` over the last half of the run. The series is first
/// averaged over one pulsation period (the time the front needs to cross one
/// lattice slice spacing), which removes the persistent periodic pulsation
/// of `mean w` around its linear trend.
fn fit_speed(series: &[(f64, f64)], spacing: f64) -> (f64, f64) {
    let t_end = series.last().map_or(0.0, |p| p.0);
    let tail: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|p| p.0 >= 0.5 * t_end)
        .collect();
    let (rough, rough_res) = least_squares_slope(&tail);
    if rough == 0.0 {
        return (rough, rough_res);
    }
    let period = spacing / rough.abs();
    if period > 0.5 * t_end {
        log::warn!("run covers fewer than two pulsation periods; using the raw slope");
        return (rough, rough_res);
    }
    let mut cum = vec![0.0; series.len()];
    for i in 1..series.len() {
        cum[i] =
            cum[i - 1] + 0.5 * (series[i].1 + series[i - 1].1) * (series[i].0 - series[i - 1].0);
    }
    // Cumulative integral at an arbitrary time, by linear interpolation.
    let cum_at = |t: f64| -> f64 {
        let i = series
            .partition_point(|p| p.0 <= t)
            .clamp(1, series.len() - 1);
        let (t0, t1) = (series[i - 1].0, series[i].0);
        let (w0, w1) = (series[i - 1].1, series[i].1);
        let x = t - t0;
        let wt = w0 + (w1 - w0) * x / (t1 - t0);
        cum[i - 1] + 0.5 * (w0 + wt) * x
    };
    let filtered: Vec<(f64, f64)> = series
        .iter()
        .enumerate()
        .filter(|(_, p)| p.0 >= 0.5 * t_end && p.0 >= period)
        .map(|(i, p)| (p.0, (cum[i] - cum_at(p.0 - period)) / period))
        .collect();
    least_squares_slope(&filtered)
}

fn eno_choice(a: f64, b: f64) -> f64 {
    if a.abs() <= b.abs() {
        a
    } else {
        b
    }
}

/// One-sided second-order ENO derivatives `(D^-, D^+)` along `axis`.
fn eno_derivatives(v: &[f64], dims: &[usize], p: usize, axis: usize, h: f64) -> (f64, f64) {
    let at = |q: usize, s: isize| v[neighbor(q, dims, axis, s)];
    let d2 = |q: usize| (at(q, 1) - 2.0 * v[q] + at(q, -1)) / (h * h);
    let qm = neighbor(p, dims, axis, -1);
    let qp = neighbor(p, dims, axis, 1);
    let dm = (v[p] - at(p, -1)) / h + 0.5 * h * eno_choice(d2(qm), d2(p));
    let dp = (at(p, 1) - v[p]) / h - 0.5 * h * eno_choice(d2(p), d2(qp));
    (dm, dp)
}

/// Simulates the forced problem in a rational direction from planar data
/// up to physical time `t_final` and extracts the front speed.
pub fn simulate_front(
    field: &CoefficientField,
    e: &Direction,
    alpha: f64,
    epsilon: f64,
    t_final: f64,
    opts: &FrontOptions,
) -> Result<FrontState> {
    if alpha == 0.0 {
        return Err(HomogError::InvalidAlpha);
    }
    if !(epsilon > 0.0) || !(t_final > 0.0) {
        return Err(HomogError::InvalidInput(
            "epsilon and T must be positive".into(),
        ));
    }
    if opts.n < 4 {
        return Err(HomogError::InvalidInput("front grid needs n >= 4".into()));
    }
    if e.dim() != field.dim() {
        return Err(HomogError::InvalidInput(
            "direction and field dimensions differ".into(),
        ));
    }
    e.require_rational()?;
    let chart = slice_lattice_basis(e)?;
    if opts.dt.is_some_and(|dt| !(dt > 0.0 && dt.is_finite())) {
        return Err(HomogError::InvalidInput(
            "time step must be positive".into(),
        ));
    }
    let (_, uinv) = chart.frame();
    let d = e.dim();
    let n = opts.n;
    let h = 1.0 / n as f64;
    let mut omega = GridFunction::zeros(GridDomain::LatticeTorus(chart.clone()), vec![n; d]);
    let dims = omega.dims.clone();
    let points: Vec<Vec<f64>> = (0..omega.len()).map(|p| omega.point(p)).collect();
    let u = e.unit().to_vec();
    let forcing = epsilon * alpha;
    // |∂H/∂q_i| ≤ ‖row_i(U^{-1})‖ for H(q) = |e + U^{-T} q|.
    let theta: Vec<f64> = (0..d).map(|i| uinv.row(i).norm()).collect();
    let m_min = field.m_min();
    // Along characteristics of the planar problem |Du| = m(x)/m(x_0) ≥ m_min/m_max.
    let floor = 0.5 * m_min / field.m_max();
    let tau_final = t_final / (epsilon * epsilon);
    let hyper_rate = forcing.abs() * theta.iter().sum::<f64>() / (h * m_min);
    let mut dt = opts
        .dt
        .unwrap_or_else(|| (0.25 / hyper_rate).min(tau_final / 400.0));
    let steps = (tau_final / dt).ceil() as usize;
    dt = tau_final / steps as f64;

    let mut series = Vec::with_capacity(steps + 1);
    series.push((0.0, 0.0));
    let mut max_gradient = 0.0f64;
    let mut tau = 0.0;
    for step in 1..=steps {
        let vals = &omega.values;
        // Coefficients frozen at the current iterate.
        let frozen: Vec<(Mat, f64, f64)> = (0..omega.len())
            .into_par_iter()
            .map(|p| {
                let gz = DMatrix::from_column_slice(d, 1, &gradient(&omega, p));
                let gy = uinv.transpose() * gz;
                let dw = gy.amax();
                let pv: Vec<f64> = (0..d).map(|i| u[i] + gy[i]).collect();
                let pn = norm(&pv);
                if pn < floor {
                    return Err(HomogError::GradientDegenerate(pn));
                }
                let phat: Vec<f64> = pv.iter().map(|x| x / pn).collect();
                let a = geometric_a(field, &points[p], &phat);
                let c = &uinv * a * uinv.transpose();
                Ok((c, field.m(&points[p], &phat), dw))
            })
            .collect::<Result<_>>()?;
        max_gradient = frozen.iter().fold(max_gradient, |m, t| m.max(t.2));
        let l = trace_operator(&dims, &vec![h; d], |p| frozen[p].0.clone());
        let mob: Vec<f64> = frozen.iter().map(|t| t.1).collect();
        // Lax–Friedrichs numerical Hamiltonian with ENO2 one-sided derivatives.
        let ham: Vec<f64> = (0..omega.len())
            .into_par_iter()
            .map(|p| {
                let mut avg = vec![0.0; d];
                let mut diss = 0.0;
                for i in 0..d {
                    let (dm, dp) = eno_derivatives(vals, &dims, p, i, h);
                    avg[i] = 0.5 * (dm + dp);
                    diss += theta[i] * 0.5 * (dp - dm);
                }
                let q = DMatrix::from_column_slice(d, 1, &avg);
                let gy = uinv.transpose() * q;
                let pn = (0..d).map(|i| (u[i] + gy[i]).powi(2)).sum::<f64>().sqrt();
                forcing * pn + forcing.abs() * diss
            })
            .collect();
        let lw = l.apply(vals);
        let inc: Vec<f64> = match opts.scheme {
            TimeScheme::ForwardEuler => {
                let bound = mob.iter().copied().fold(f64::INFINITY, f64::min) / l.norm_inf();
                if dt > bound {
                    return Err(HomogError::CflViolation { dt, bound });
                }
                (0..omega.len())
                    .map(|p| dt * (lw[p] + ham[p]) / mob[p])
                    .collect()
            }
            TimeScheme::Imex => {
                let mut a: Csr = l.clone();
                a.scale(-1.0);
                a.add_diagonal(&mob.iter().map(|m| m / dt).collect::<Vec<_>>());
                let rhs: Vec<f64> = (0..omega.len()).map(|p| lw[p] + ham[p]).collect();
                let mut x: Vec<f64> = (0..omega.len()).map(|p| dt * rhs[p] / mob[p]).collect();
                bicgstab(&a, &rhs, &mut x, 1e-11, 10 * omega.len() + 1000)?;
                x
            }
        };
        omega
            .values
            .iter_mut()
            .zip(&inc)
            .for_each(|(w, di)| *w += di);
        tau += dt;
        if step % 100 == 0 && omega.values.iter().any(|v| !v.is_finite()) {
            return Err(HomogError::SolverDiverged {
                iterations: step,
                residual: f64::NAN,
            });
        }
        series.push((tau * epsilon * epsilon, epsilon * omega.mean()));
    }
    let t = tau * epsilon * epsilon;
    let period = e.period().unwrap() * epsilon;
    let (speed, fit_residual) = fit_speed(&series, period);
    let mut w = omega;
    w.values.iter_mut().for_each(|v| *v *= epsilon);
    Ok(FrontState {
        e: e.clone(),
        epsilon,
        alpha,
        w,
        t,
        series,
        speed,
        fit_residual,
        steps,
        dt,
        max_gradient,
    })
}

/// `λ_e(α)` of the unscaled forced problem in `d = 2` (`ε = 1`), run to cell time `t_final`.
pub fn front_speed_2d(
    field: &CoefficientField,
    e: &Direction,
    alpha: f64,
    t_final: f64,
    opts: &FrontOptions,
) -> Result<f64> {
    if e.dim() != 2 {
        return Err(HomogError::InvalidInput(
            "front_speed_2d needs d = 2".into(),
        ));
    }
    simulate_front(field, e, alpha, 1.0, t_final, opts).map(|s| s.speed)
}
