//! Invariant measures of the slice diffusions, oscillating and effective
//! tensors, direction-dependent limits and a Monte-Carlo cross-check.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::cellsolve::OscillatingProfile;
use crate::coeffs::{project_a, quadratic_form, CoefficientField, Mat, ProjectedOperator};
use crate::error::{HomogError, Result};
use crate::grid::{trace_operator, GridDomain, GridFunction};
use crate::lattice::{slice_lattice_basis, ApproachSpec, Direction, SliceChart};
use crate::linalg::{periodic_grid_ordering, BandedLu, Csr};

const SHIFT: f64 = 1e-8;

/// Generator `tr(c D_t^2)` of the slice diffusion on an `m^{d-1}` chart grid.
pub(crate) fn slice_generator(
    op: &ProjectedOperator,
    chart: &SliceChart,
    m: usize,
) -> (Csr, GridFunction) {
    let d = op.direction().dim();
    let grid = GridFunction::zeros(GridDomain::Slice(chart.clone()), vec![m; d - 1]);
    let coefs: Vec<Mat> = (0..grid.len())
        .into_par_iter()
        .map(|p| chart.pullback(&op.b(&grid.point(p))))
        .collect();
    let l = trace_operator(&grid.dims, &grid.h, |p| coefs[p].clone());
    (l, grid)
}

/// Density of `μ_e^s` on a slice grid, normalized to mean one.
#[derive(Clone, Debug)]
pub struct InvariantMeasure {
    pub rho: GridFunction,
    /// `‖Lᵀρ‖_∞ / (‖L‖_∞ ‖ρ‖_∞)`.
    pub residual: f64,
}

impl InvariantMeasure {
    pub fn chart(&self) -> &SliceChart {
        match &self.rho.domain {
            GridDomain::Slice(c) => c,
            _ => unreachable!("invariant measures live on slices"),
        }
    }

    /// `∫ f dμ` by the grid quadrature.
    pub fn integrate<F: Fn(&[f64]) -> f64 + Sync>(&self, f: F) -> f64 {
        let n = self.rho.len();
        // Collected first so the summation order does not depend on the pool size.
        let terms: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|p| f(&self.rho.point(p)) * self.rho.values[p])
            .collect();
        terms.iter().sum::<f64>() / n as f64
    }

    pub fn integrate_tensor<F: Fn(&[f64]) -> Mat + Sync>(&self, f: F) -> Mat {
        let n = self.rho.len();
        let terms: Vec<Mat> = (0..n)
            .into_par_iter()
            .map(|p| f(&self.rho.point(p)) * self.rho.values[p])
            .collect();
        let mut acc = terms[0].clone() * 0.0;
        for t in &terms {
            acc += t;
        }
        acc / n as f64
    }

    pub fn min(&self) -> f64 {
        self.rho
            .values
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x /= s);
}

fn inverse_iteration(lu: &BandedLu, mut x: Vec<f64>) -> Vec<f64> {
    normalize(&mut x);
    for _ in 0..50 {
        let mut y = lu.solve(&x);
        normalize(&mut y);
        let change = y
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = y;
        if change < 1e-14 {
            break;
        }
    }
    x
}

/// Null vector of the adjoint slice generator by shifted inverse iteration.
pub fn invariant_measure_slice(
    op: &ProjectedOperator,
    chart: &SliceChart,
    m: usize,
) -> Result<InvariantMeasure> {
    op.direction().require_rational()?;
    if m < 4 {
        return Err(HomogError::InvalidInput(
            "slice grid needs at least 4 nodes per axis".into(),
        ));
    }
    let (l, mut grid) = slice_generator(op, chart, m);
    let mut at = l.transpose();
    let n = at.dim();
    at.add_diagonal(&vec![-SHIFT; n]);
    let lu = BandedLu::factor(&at, &periodic_grid_ordering(&grid.dims))?;

    let a = inverse_iteration(&lu, vec![1.0; n]);
    let b = inverse_iteration(
        &lu,
        (0..n)
            .map(|i| 1.5 + (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect(),
    );
    let diff = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    if diff > 1e-8 {
        return Err(HomogError::NullspaceDegenerate(format!(
            "two starts differ by {diff:e}"
        )));
    }
    let mut rho = a;
    let top = rho.iter().copied().fold(0.0, f64::max);
    rho.iter_mut().for_each(|x| {
        if *x < 1e-14 * top {
            *x = 0.0
        }
    });
    normalize(&mut rho);
    let min = rho.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(HomogError::NullspaceDegenerate(format!(
            "density not positive (min {min:e})"
        )));
    }
    let lt = l.transpose();
    let r = lt
        .apply(&rho)
        .iter()
        .fold(0.0, |acc: f64, v| acc.max(v.abs()));
    let rmax = rho.iter().copied().fold(0.0, f64::max);
    grid.values = rho;
    Ok(InvariantMeasure {
        rho: grid,
        residual: r / (l.norm_inf() * rmax),
    })
}

/// Profiles `s ↦ (∫ a dμ_e^s, ∫ m dμ_e^s)` on `n_s` uniform offsets of `[0, r_e)`.
pub fn oscillating_tensors(
    field: &CoefficientField,
    e: &Direction,
    n_s: usize,
    m: usize,
) -> Result<(OscillatingProfile<Mat>, OscillatingProfile<f64>)> {
    let op = project_a(field, e)?;
    let chart = slice_lattice_basis(e)?;
    let r = e.period().expect("rational");
    let rows: Vec<(Mat, f64)> = (0..n_s)
        .into_par_iter()
        .map(|j| {
            let c = chart.at_level(j as f64 / n_s as f64);
            let mu = invariant_measure_slice(&op, &c, m)?;
            let a = mu.integrate_tensor(|y| field.a(y, e.unit()));
            let mm = mu.integrate(|y| field.m(y, e.unit()));
            Ok((a, mm))
        })
        .collect::<Result<_>>()?;
    let (a, mm): (Vec<Mat>, Vec<f64>) = rows.into_iter().unzip();
    Ok((
        OscillatingProfile::uniform(e.clone(), r, a),
        OscillatingProfile::uniform(e.clone(), r, mm),
    ))
}

/// Harmonic weights and the resulting `(ã_e^η, m̃_e^η)`.
#[derive(Clone, Debug)]
pub struct LimitingTensors {
    pub eta: Vec<f64>,
    pub weights: OscillatingProfile<f64>,
    pub a_tilde: Mat,
    pub m_tilde: f64,
}

/// `w(s) ∝ ⟨a_e^⊥(s)η,η⟩^{-1}`, `ã = ∫ a_e^⊥ w`, `m̃ = ∫ m_e^⊥ w`.
pub fn limits_from_profiles(
    a_perp: &OscillatingProfile<Mat>,
    m_perp: &OscillatingProfile<f64>,
    eta: &[f64],
) -> Result<LimitingTensors> {
    let e = &a_perp.e;
    let nrm = eta.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(nrm > 0.0) {
        return Err(HomogError::ZeroVector);
    }
    let eta: Vec<f64> = eta.iter().map(|x| x / nrm).collect();
    let along: f64 = eta.iter().zip(e.unit()).map(|(a, b)| a * b).sum();
    if along.abs() > 1e-10 {
        return Err(HomogError::InvalidInput(
            "eta must be orthogonal to e".into(),
        ));
    }
    let raw: Vec<f64> = a_perp
        .values
        .iter()
        .map(|a| 1.0 / quadratic_form(a, &eta))
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let w: Vec<f64> = raw.iter().map(|x| x / mean).collect();
    let n = w.len() as f64;
    let d = e.dim();
    let mut a_tilde = DMatrix::zeros(d, d);
    for (a, wi) in a_perp.values.iter().zip(&w) {
        a_tilde += a * *wi;
    }
    a_tilde /= n;
    let m_tilde = m_perp
        .values
        .iter()
        .zip(&w)
        .map(|(m, wi)| m * wi)
        .sum::<f64>()
        / n;
    Ok(LimitingTensors {
        eta,
        weights: OscillatingProfile::uniform(e.clone(), a_perp.period, w),
        a_tilde,
        m_tilde,
    })
}

pub fn limiting_tensors(
    field: &CoefficientField,
    e: &Direction,
    eta: &[f64],
    n_s: usize,
    m: usize,
) -> Result<LimitingTensors> {
    let (a, mm) = oscillating_tensors(field, e, n_s, m)?;
    limits_from_profiles(&a, &mm, eta)
}

/// Averages over the whole foliation in a rational direction.
#[derive(Clone, Debug)]
pub struct EffectiveTensors {
    pub e: Direction,
    pub a_bar: Mat,
    pub m_bar: f64,
    pub a_perp: OscillatingProfile<Mat>,
    pub m_perp: OscillatingProfile<f64>,
    /// `r_e^{-1} ∫ m_e^⊥`.
    pub m_pl: f64,
}

impl EffectiveTensors {
    pub fn tilde(&self, eta: &[f64]) -> Result<LimitingTensors> {
        limits_from_profiles(&self.a_perp, &self.m_perp, eta)
    }
}

pub fn effective_tensors(
    field: &CoefficientField,
    e: &Direction,
    n_s: usize,
    m: usize,
) -> Result<EffectiveTensors> {
    let (a_perp, m_perp) = oscillating_tensors(field, e, n_s, m)?;
    let a_bar = a_perp.mean();
    let m_bar = m_perp.mean();
    Ok(EffectiveTensors {
        e: e.clone(),
        a_bar,
        m_bar,
        m_pl: m_bar,
        a_perp,
        m_perp,
    })
}

/// Terms `(ā(e_n), m̄(e_n))` along an approach sequence with an Aitken limit.
#[derive(Clone, Debug)]
pub struct ApproachResult {
    pub directions: Vec<Direction>,
    pub a_terms: Vec<Mat>,
    pub m_terms: Vec<f64>,
    pub a_limit: Mat,
    pub m_limit: f64,
    /// Size of the Aitken correction applied to the last term.
    pub error_estimate: f64,
}

const SETTLED_FLOOR: f64 = 1e-12;

fn aitken(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 3 {
        return x[n - 1];
    }
    let (a, b, c) = (x[n - 3], x[n - 2], x[n - 1]);
    let den = c - 2.0 * b + a;
    if den.abs() < 1e-14 || (c - b).abs() >= (b - a).abs() {
        return c;
    }
    c - (c - b).powi(2) / den
}

pub fn effective_tensors_irrational(
    field: &CoefficientField,
    approach: &ApproachSpec,
    n_s: usize,
    m: usize,
) -> Result<ApproachResult> {
    let terms: Vec<(Mat, f64)> = approach
        .sequence
        .par_iter()
        .map(|en| effective_tensors(field, en, n_s, m).map(|t| (t.a_bar, t.m_bar)))
        .collect::<Result<_>>()?;
    let (a_terms, m_terms): (Vec<Mat>, Vec<f64>) = terms.into_iter().unzip();
    let diffs: Vec<f64> = a_terms
        .windows(2)
        .zip(m_terms.windows(2))
        .map(|(a, m)| (&a[1] - &a[0]).norm().max((m[1] - m[0]).abs()))
        .collect();
    for w in diffs.windows(2) {
        if w[1] > w[0] && w[1] > SETTLED_FLOOR {
            return Err(HomogError::SequenceNotSettled(format!(
                "successive differences grew from {:e} to {:e}",
                w[0], w[1]
            )));
        }
    }
    let d = approach.e.dim();
    let a_limit = DMatrix::from_fn(d, d, |i, j| {
        aitken(&a_terms.iter().map(|a| a[(i, j)]).collect::<Vec<_>>())
    });
    let m_limit = aitken(&m_terms);
    let last_a = a_terms.last().expect("non-empty approach");
    let error_estimate = (&a_limit - last_a)
        .norm()
        .max((m_limit - m_terms[m_terms.len() - 1]).abs());
    Ok(ApproachResult {
        directions: approach.sequence.clone(),
        a_terms,
        m_terms,
        a_limit,
        m_limit,
        error_estimate,
    })
}

/// Euler–Maruyama histogram of the slice diffusion `dT = σ dB`, `σσᵀ = 2c`,
/// started at the chart origin, normalized to mean one on the slice grid.
pub fn sde_empirical_measure(
    op: &ProjectedOperator,
    chart: &SliceChart,
    m: usize,
    steps: usize,
    dt: f64,
    seed: u64,
) -> Result<GridFunction> {
    let counts = sde_counts(op, chart, m, steps, dt, seed)?;
    Ok(density_from_counts(chart, m, counts))
}

/// Independent chains with seeds `seed + i`, each running `steps / chains` steps.
pub fn sde_empirical_measure_chains(
    op: &ProjectedOperator,
    chart: &SliceChart,
    m: usize,
    steps: usize,
    dt: f64,
    seed: u64,
    chains: usize,
) -> Result<GridFunction> {
    let chains = chains.max(1);
    let per: Vec<Vec<u64>> = (0..chains)
        .into_par_iter()
        .map(|i| sde_counts(op, chart, m, steps / chains, dt, seed + i as u64))
        .collect::<Result<_>>()?;
    let mut total = vec![0u64; per[0].len()];
    for c in &per {
        for (t, x) in total.iter_mut().zip(c) {
            *t += x;
        }
    }
    Ok(density_from_counts(chart, m, total))
}

fn density_from_counts(chart: &SliceChart, m: usize, counts: Vec<u64>) -> GridFunction {
    let d = chart.direction().dim();
    let mut g = GridFunction::zeros(GridDomain::Slice(chart.clone()), vec![m; d - 1]);
    let total: u64 = counts.iter().sum::<u64>().max(1);
    let n = g.len() as f64;
    for (v, c) in g.values.iter_mut().zip(&counts) {
        *v = *c as f64 * n / total as f64;
    }
    g
}

fn sde_counts(
    op: &ProjectedOperator,
    chart: &SliceChart,
    m: usize,
    steps: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<u64>> {
    if !(dt > 0.0) {
        return Err(HomogError::InvalidInput("dt must be positive".into()));
    }
    let k = op.direction().dim() - 1;
    let dims = vec![m; k];
    let mut counts = vec![0u64; m.pow(k as u32)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = vec![0.0; k];
    let bin = |t: &[f64]| -> usize {
        let idx: Vec<usize> = t
            .iter()
            .map(|&x| ((x * m as f64 + 0.5).floor() as i64).rem_euclid(m as i64) as usize)
            .collect();
        crate::grid::ravel(&idx, &dims)
    };
    if steps == 0 {
        counts[bin(&t)] += 1;
        return Ok(counts);
    }
    let sq = dt.sqrt();
    let mut xi = vec![0.0; k];
    for _ in 0..steps {
        let c = chart.pullback(&op.b(&chart.point(&t))) * 2.0;
        for x in xi.iter_mut() {
            *x = rng.sample::<f64, _>(StandardNormal);
        }
        let l = c
            .cholesky()
            .ok_or_else(|| {
                HomogError::InvalidInput("slice diffusion is not positive definite".into())
            })?
            .l();
        for i in 0..k {
            let inc: f64 = (0..=i).map(|j| l[(i, j)] * xi[j]).sum();
            t[i] = (t[i] + sq * inc).rem_euclid(1.0);
        }
        counts[bin(&t)] += 1;
    }
    Ok(counts)
}

/// Total variation distance between two mean-one densities on the same grid.
pub fn tv_distance(p: &GridFunction, q: &GridFunction) -> Result<f64> {
    if p.dims != q.dims {
        return Err(HomogError::InvalidInput(
            "densities live on different grids".into(),
        ));
    }
    Ok(0.5
        * p.values
            .iter()
            .zip(&q.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
        / p.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{TrigMode, TrigSeries};
    use crate::lattice::{approach_sequence, primitive_direction};
    use rand::Rng;
    use std::f64::consts::PI;

    fn simpson<F: Fn(f64) -> f64>(f: F, n: usize) -> f64 {
        let h = 1.0 / n as f64;
        let mut acc = f(0.0) + f(1.0);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        acc * h / 3.0
    }

    fn harmonic_field() -> CoefficientField {
        CoefficientField::isotropic_trig(
            2,
            TrigSeries::new(2.0, vec![TrigMode::new(1.0, &[1, 0])]),
            TrigSeries::constant(1.0),
        )
        .unwrap()
    }

    fn laminar(eta0: &[f64]) -> CoefficientField {
        CoefficientField::laminar(
            Mat::identity(3, 3),
            0.5,
            vec![0, 0, 1],
            eta0.to_vec(),
            TrigSeries::constant(1.0),
        )
        .unwrap()
    }

    #[test]
    fn laplacian_measure_is_uniform() {
        for k in [vec![1, 2], vec![1, 1, 1], vec![0, 1, 2]] {
            let e = primitive_direction(&k).unwrap();
            let f = CoefficientField::constant(
                Mat::identity(k.len(), k.len()),
                TrigSeries::constant(1.0),
            )
            .unwrap();
            let op = project_a(&f, &e).unwrap();
            let chart = slice_lattice_basis(&e).unwrap().at_offset(0.3);
            let mu = invariant_measure_slice(&op, &chart, 12).unwrap();
            assert!(
                mu.rho.values.iter().all(|v| (v - 1.0).abs() < 1e-10),
                "{k:?}"
            );
            assert!(mu.residual < 1e-8);
        }
    }

    #[test]
    fn measure_inverse_to_diffusivity() {
        let f = harmonic_field();
        let e = primitive_direction(&[0, 1]).unwrap();
        let op = project_a(&f, &e).unwrap();
        let chart = slice_lattice_basis(&e).unwrap();
        let mu = invariant_measure_slice(&op, &chart, 64).unwrap();
        for p in 0..64 {
            let x = mu.rho.point(p)[0];
            let oracle = 3f64.sqrt() / (2.0 + (2.0 * PI * x).cos());
            assert!((mu.rho.values[p] - oracle).abs() < 1e-10);
        }
        assert!(mu.min() > 0.0);
        assert!((mu.rho.mean() - 1.0).abs() < 1e-12);
        assert!(mu.residual < 1e-8);
    }

    #[test]
    fn slice_constant_coefficients_give_uniform_measure() {
        let f = laminar(&[1.0, 0.0, 0.0]);
        let e = primitive_direction(&[0, 0, 1]).unwrap();
        let op = project_a(&f, &e).unwrap();
        let chart = slice_lattice_basis(&e).unwrap().at_offset(0.37);
        let mu = invariant_measure_slice(&op, &chart, 16).unwrap();
        assert!(mu.rho.values.iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn stationarity_pairing() {
        let field = CoefficientField::anisotropic_trig(
            Mat::from_row_slice(3, 3, &[2.0, 0.2, 0.0, 0.2, 1.8, 0.1, 0.0, 0.1, 2.2]),
            vec![crate::coeffs::TensorMode {
                s: Mat::from_row_slice(3, 3, &[0.3, 0.1, 0.0, 0.1, -0.2, 0.0, 0.0, 0.0, 0.1]),
                k: vec![1, -1, 1],
                phase: 0.4,
            }],
            TrigSeries::constant(1.0),
        )
        .unwrap();
        let e = primitive_direction(&[1, 1, 0]).unwrap();
        let op = project_a(&field, &e).unwrap();
        let base = slice_lattice_basis(&e).unwrap();
        let m = 16;
        let charts = [base.at_offset(0.1), base.at_offset(0.45)];
        let measures: Vec<InvariantMeasure> = charts
            .iter()
            .map(|c| invariant_measure_slice(&op, c, m).unwrap())
            .collect();
        let gens: Vec<Csr> = charts
            .iter()
            .map(|c| slice_generator(&op, c, m).0)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let k: Vec<i64> = (0..3).map(|_| rng.random_range(-2..=2)).collect();
            let ph: f64 = rng.random_range(0.0..1.0);
            let phi = |y: &[f64]| {
                (2.0 * PI * (k[0] as f64 * y[0] + k[1] as f64 * y[1] + k[2] as f64 * y[2] + ph))
                    .cos()
            };
            let lam: f64 = rng.random_range(0.0..1.0);
            let mut pairing = 0.0;
            for ((mu, l), w) in measures.iter().zip(&gens).zip([lam, 1.0 - lam]) {
                let samples: Vec<f64> = (0..mu.rho.len()).map(|p| phi(&mu.rho.point(p))).collect();
                let lphi = l.apply(&samples);
                let scale = l.norm_inf();
                pairing += w * lphi
                    .iter()
                    .zip(&mu.rho.values)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    / (mu.rho.len() as f64 * scale);
            }
            assert!(pairing.abs() < 1e-7, "{k:?}: {pairing:e}");
        }
    }

    #[test]
    fn oscillating_tensors_examples() {
        let a0 = Mat::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 1.0]);
        let f = CoefficientField::constant(a0.clone(), TrigSeries::constant(0.7)).unwrap();
        let (a, m) = oscillating_tensors(&f, &primitive_direction(&[1, 2]).unwrap(), 5, 8).unwrap();
        assert!(a.values.iter().all(|x| (x - &a0).amax() < 1e-12));
        assert!(m.values.iter().all(|x| (x - 0.7).abs() < 1e-12));

        let (a, m) = oscillating_tensors(
            &harmonic_field(),
            &primitive_direction(&[0, 1]).unwrap(),
            4,
            64,
        )
        .unwrap();
        for x in &a.values {
            assert!((x - Mat::identity(2, 2) * 3f64.sqrt()).amax() < 1e-10);
        }
        assert!(m.values.iter().all(|x| (x - 1.0).abs() < 1e-12));

        let eta0 = [1.0, 0.0, 0.0];
        let (a, _) = oscillating_tensors(
            &laminar(&eta0),
            &primitive_direction(&[0, 0, 1]).unwrap(),
            8,
            8,
        )
        .unwrap();
        for (s, x) in a.s_grid.iter().zip(&a.values) {
            let mut expect = Mat::identity(3, 3);
            expect[(0, 0)] += 0.5 * (2.0 * PI * s).cos();
            assert!((x - expect).amax() < 1e-12);
        }
    }

    #[test]
    fn limiting_tensors_laminar_witness() {
        let eta0 = [1.0, 0.0, 0.0];
        let f = laminar(&eta0);
        let e = primitive_direction(&[0, 0, 1]).unwrap();
        let along = limiting_tensors(&f, &e, &eta0, 64, 8).unwrap();
        let across = limiting_tensors(&f, &e, &[0.0, 1.0, 0.0], 64, 8).unwrap();
        let harmonic = 1.0 / simpson(|t| 1.0 / (1.0 + 0.5 * (2.0 * PI * t).cos()), 20_000);
        let mut expect_along = Mat::identity(3, 3);
        expect_along[(0, 0)] = harmonic;
        assert!((&along.a_tilde - expect_along).amax() < 1e-10);
        assert!((across.a_tilde.clone() - Mat::identity(3, 3)).amax() < 1e-12);
        assert!((along.a_tilde - across.a_tilde).norm() > 0.05);
        assert!((along.m_tilde - 1.0).abs() < 1e-12);
    }

    #[test]
    fn limiting_tensors_symmetry_and_constant() {
        let f = CoefficientField::isotropic_trig(
            2,
            TrigSeries::new(
                2.0,
                vec![TrigMode::new(0.5, &[0, 1]), TrigMode::new(0.4, &[1, 1])],
            ),
            TrigSeries::new(1.0, vec![TrigMode::new(0.3, &[0, 1])]),
        )
        .unwrap();
        let e = primitive_direction(&[0, 1]).unwrap();
        let p = limiting_tensors(&f, &e, &[1.0, 0.0], 16, 16).unwrap();
        let q = limiting_tensors(&f, &e, &[-1.0, 0.0], 16, 16).unwrap();
        assert!((p.a_tilde - q.a_tilde).amax() < 1e-10);
        assert!((p.m_tilde - q.m_tilde).abs() < 1e-10);

        let a0 = Mat::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 1.0]);
        let c = CoefficientField::constant(a0.clone(), TrigSeries::constant(2.0)).unwrap();
        let l = limiting_tensors(
            &c,
            &primitive_direction(&[1, 1]).unwrap(),
            &[1.0, -1.0],
            4,
            8,
        )
        .unwrap();
        assert!((l.a_tilde - a0).amax() < 1e-12);
        assert!((l.m_tilde - 2.0).abs() < 1e-12);
        assert!(limiting_tensors(
            &c,
            &primitive_direction(&[1, 1]).unwrap(),
            &[1.0, 0.0],
            4,
            8
        )
        .is_err());
    }

    #[test]
    fn effective_tensors_stay_in_ellipticity_interval() {
        let f = CoefficientField::isotropic_trig(
            2,
            TrigSeries::new(
                2.0,
                vec![TrigMode::new(0.6, &[1, 0]), TrigMode::new(0.3, &[1, 1])],
            ),
            TrigSeries::new(1.0, vec![TrigMode::new(0.4, &[1, 2])]),
        )
        .unwrap();
        for k in [[1, 0], [1, 1], [2, 1]] {
            let e = primitive_direction(&k).unwrap();
            let t = effective_tensors(&f, &e, 8, 32).unwrap();
            let p = e.projector();
            let restricted = &p * &t.a_bar * &p;
            let q = restricted.symmetric_eigenvalues();
            let top = q.iter().copied().fold(f64::MIN, f64::max);
            assert!(top <= f.big_lambda() + 1e-12 && top >= f.lambda() - 1e-12);
            assert!(t.m_bar >= f.m_min() - 1e-12 && t.m_bar <= f.m_max() + 1e-12);
            assert_eq!(t.m_pl, t.m_bar);
        }
    }

    #[test]
    fn irrational_sequence_of_constant_field() {
        let a0 = Mat::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.5, 0.2, 0.0, 0.2, 1.0]);
        let f = CoefficientField::constant(
            a0.clone(),
            TrigSeries::new(1.0, vec![TrigMode::new(0.5, &[1, 0, 0])]),
        )
        .unwrap();
        let e = primitive_direction(&[0, 0, 1]).unwrap();
        let ap = approach_sequence(&e, &[1.0, 0.0, 0.0], 3).unwrap();
        let r = effective_tensors_irrational(&f, &ap, 4, 12).unwrap();
        for (a, m) in r.a_terms.iter().zip(&r.m_terms) {
            assert!((a - &a0).amax() < 1e-12);
            assert!((m - 1.0).abs() < 1e-12);
        }
        assert!((r.m_limit - 1.0).abs() < 1e-12);
    }

    #[test]
    fn irrational_sequence_follows_limiting_tensor() {
        let eta0 = [1.0, 0.0, 0.0];
        let f = laminar(&eta0);
        let e = primitive_direction(&[0, 0, 1]).unwrap();
        let target = limiting_tensors(&f, &e, &eta0, 64, 8).unwrap();
        let ap = approach_sequence(&e, &eta0, 3).unwrap();
        let r = effective_tensors_irrational(&f, &ap, 2, 24).unwrap();
        let gaps: Vec<f64> = r
            .a_terms
            .iter()
            .map(|a| (a - &target.a_tilde).norm())
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        assert!((&r.a_limit - &target.a_tilde).norm() < 1e-2);
    }

    #[test]
    fn sde_on_flat_torus_is_uniform() {
        let f = CoefficientField::constant(Mat::identity(2, 2), TrigSeries::constant(1.0)).unwrap();
        let e = primitive_direction(&[0, 1]).unwrap();
        let op = project_a(&f, &e).unwrap();
        let chart = slice_lattice_basis(&e).unwrap();
        let steps = 100_000;
        let bins = 16;
        let h = sde_empirical_measure(&op, &chart, bins, steps, 0.01, 3).unwrap();
        let tol = 3.0 / ((steps / bins) as f64).sqrt();
        assert!(
            h.values.iter().all(|v| (v - 1.0).abs() < tol),
            "{:?}",
            h.values
        );
        let again = sde_empirical_measure(&op, &chart, bins, steps, 0.01, 3).unwrap();
        assert_eq!(h.values, again.values);
    }

    #[test]
    fn sde_without_steps_is_a_point_mass() {
        let f = harmonic_field();
        let e = primitive_direction(&[0, 1]).unwrap();
        let op = project_a(&f, &e).unwrap();
        let chart = slice_lattice_basis(&e).unwrap();
        let h = sde_empirical_measure(&op, &chart, 8, 0, 0.01, 1).unwrap();
        assert_eq!(h.values[0], 8.0);
        assert!(h.values[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tv_distance_basics() {
        let chart = slice_lattice_basis(&primitive_direction(&[0, 1]).unwrap()).unwrap();
        let mut p = GridFunction::zeros(GridDomain::Slice(chart.clone()), vec![4]);
        p.values = vec![2.0, 0.0, 2.0, 0.0];
        let mut q = p.clone();
        q.values = vec![0.0, 2.0, 0.0, 2.0];
        assert!((tv_distance(&p, &q).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
    }
}
