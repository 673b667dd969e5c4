//! Coefficient fields `a(y,e)`, `m(y,e)`, their projection onto `⟨e⟩^⊥`,
//! and the analytic families used as fixtures.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HomogError, Result};
use crate::lattice::{norm, Direction};

pub type Mat = DMatrix<f64>;

/// `amp · cos(2π⟨k,y⟩ + phase)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigMode {
    pub amp: f64,
    pub k: Vec<i64>,
    pub phase: f64,
}

impl TrigMode {
    pub fn new(amp: f64, k: &[i64]) -> Self {
        TrigMode {
            amp,
            k: k.to_vec(),
            phase: 0.0,
        }
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    fn arg(&self, y: &[f64]) -> f64 {
        2.0 * PI
            * self
                .k
                .iter()
                .zip(y)
                .map(|(&k, y)| k as f64 * y)
                .sum::<f64>()
            + self.phase
    }
}

/// Real trigonometric polynomial `mean + Σ modes`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigSeries {
    pub mean: f64,
    pub modes: Vec<TrigMode>,
}

impl TrigSeries {
    pub fn constant(c: f64) -> Self {
        TrigSeries {
            mean: c,
            modes: Vec::new(),
        }
    }

    pub fn new(mean: f64, modes: Vec<TrigMode>) -> Self {
        TrigSeries { mean, modes }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.mean
            + self
                .modes
                .iter()
                .map(|m| m.amp * m.arg(y).cos())
                .sum::<f64>()
    }

    fn spread(&self) -> f64 {
        self.modes.iter().map(|m| m.amp.abs()).sum()
    }

    pub fn lower_bound(&self) -> f64 {
        self.mean - self.spread()
    }

    pub fn upper_bound(&self) -> f64 {
        self.mean + self.spread()
    }
}

/// `s · cos(2π⟨k,y⟩ + phase)` with a symmetric matrix `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorMode {
    pub s: Mat,
    pub k: Vec<i64>,
    pub phase: f64,
}

/// Plug-in interface for user supplied coefficients.
pub trait FieldEvaluator: Send + Sync + fmt::Debug {
    fn a(&self, y: &[f64], e: &[f64]) -> Mat;
    fn m(&self, y: &[f64], e: &[f64]) -> f64;
}

#[derive(Clone, Debug)]
pub enum Family {
    Constant {
        a0: Mat,
    },
    /// `ã(y) Id`.
    IsotropicTrig {
        scalar: TrigSeries,
    },
    /// `base + nu cos(2π⟨k,y⟩) η⊗η`.
    Laminar {
        base: Mat,
        nu: f64,
        k: Vec<i64>,
        eta: Vec<f64>,
    },
    /// `base + Σ s_j cos(2π⟨k_j,y⟩ + phase_j)`.
    AnisotropicTrig {
        base: Mat,
        modes: Vec<TensorMode>,
    },
    Custom(Arc<dyn FieldEvaluator>),
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Constant { .. } => "constant",
            Family::IsotropicTrig { .. } => "isotropic-trig",
            Family::Laminar { .. } => "laminar",
            Family::AnisotropicTrig { .. } => "anisotropic-trig",
            Family::Custom(_) => "custom",
        }
    }
}

/// Diffusion matrix `a` and mobility `m` on `T^d × S^{d-1}`.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    d: usize,
    family: Family,
    mobility: Option<TrigSeries>,
    /// `g` in the orientation-dependent part `⟨e, g(y)⟩` of the mobility.
    drift: Vec<TrigSeries>,
    lambda: f64,
    big_lambda: f64,
    m_min: f64,
    m_max: f64,
}

fn sym_extremes(a: &Mat) -> (f64, f64) {
    let ev = a.clone().symmetric_eigen().eigenvalues;
    (ev.min(), ev.max())
}

fn spectral_norm(a: &Mat) -> f64 {
    let (lo, hi) = sym_extremes(a);
    lo.abs().max(hi.abs())
}

fn is_symmetric(a: &Mat) -> bool {
    (a - a.transpose()).amax() <= 1e-14 * a.amax().max(1.0)
}

impl CoefficientField {
    pub fn constant(a0: Mat, mobility: TrigSeries) -> Result<Self> {
        let d = a0.nrows();
        let (lambda, big_lambda) = sym_extremes(&a0);
        Self::validated(d, Family::Constant { a0 }, mobility, lambda, big_lambda)
    }

    pub fn isotropic_trig(d: usize, scalar: TrigSeries, mobility: TrigSeries) -> Result<Self> {
        let (lambda, big_lambda) = (scalar.lower_bound(), scalar.upper_bound());
        Self::validated(
            d,
            Family::IsotropicTrig { scalar },
            mobility,
            lambda,
            big_lambda,
        )
    }

    pub fn laminar(
        base: Mat,
        nu: f64,
        k: Vec<i64>,
        eta: Vec<f64>,
        mobility: TrigSeries,
    ) -> Result<Self> {
        let d = base.nrows();
        let n = norm(&eta);
        if eta.len() != d || n == 0.0 {
            return Err(HomogError::InvalidInput(
                "laminar eta must be a nonzero d-vector".into(),
            ));
        }
        let eta: Vec<f64> = eta.iter().map(|x| x / n).collect();
        let outer = Mat::from_fn(d, d, |i, j| eta[i] * eta[j]);
        // Eigenvalues of base + t η⊗η are monotone in t.
        let lambda = sym_extremes(&(&base - &outer * nu.abs())).0;
        let big_lambda = sym_extremes(&(&base + &outer * nu.abs())).1;
        Self::validated(
            d,
            Family::Laminar { base, nu, k, eta },
            mobility,
            lambda,
            big_lambda,
        )
    }

    pub fn anisotropic_trig(
        base: Mat,
        modes: Vec<TensorMode>,
        mobility: TrigSeries,
    ) -> Result<Self> {
        let d = base.nrows();
        let (lo, hi) = sym_extremes(&base);
        let spread: f64 = modes.iter().map(|m| spectral_norm(&m.s)).sum();
        if modes
            .iter()
            .any(|m| !is_symmetric(&m.s) || m.s.nrows() != d)
        {
            return Err(HomogError::InvalidInput(
                "tensor modes must be symmetric d×d".into(),
            ));
        }
        Self::validated(
            d,
            Family::AnisotropicTrig { base, modes },
            mobility,
            lo - spread,
            hi + spread,
        )
    }

    /// User field with caller-certified bounds.
    pub fn custom(
        d: usize,
        eval: Arc<dyn FieldEvaluator>,
        lambda: f64,
        big_lambda: f64,
        m_min: f64,
        m_max: f64,
    ) -> Result<Self> {
        if !(lambda > 0.0 && big_lambda >= lambda && m_min > 0.0 && m_max >= m_min) {
            return Err(HomogError::InvalidInput(
                "invalid bounds for custom field".into(),
            ));
        }
        Ok(CoefficientField {
            d,
            family: Family::Custom(eval),
            mobility: None,
            drift: Vec::new(),
            lambda,
            big_lambda,
            m_min,
            m_max,
        })
    }

    fn validated(
        d: usize,
        family: Family,
        mobility: TrigSeries,
        lambda: f64,
        big_lambda: f64,
    ) -> Result<Self> {
        if d < 2 {
            return Err(HomogError::InvalidInput("dimension must be >= 2".into()));
        }
        let check_k = |k: &[i64]| {
            if k.len() != d {
                Err(HomogError::InvalidInput(format!(
                    "wave vector {k:?} has wrong dimension"
                )))
            } else {
                Ok(())
            }
        };
        for m in &mobility.modes {
            check_k(&m.k)?;
        }
        match &family {
            Family::Constant { a0 }
            | Family::AnisotropicTrig { base: a0, .. }
            | Family::Laminar { base: a0, .. } => {
                if a0.nrows() != d || a0.ncols() != d || !is_symmetric(a0) {
                    return Err(HomogError::InvalidInput(
                        "base matrix must be symmetric d×d".into(),
                    ));
                }
            }
            _ => {}
        }
        match &family {
            Family::IsotropicTrig { scalar } => {
                scalar.modes.iter().try_for_each(|m| check_k(&m.k))?
            }
            Family::Laminar { k, .. } => check_k(k)?,
            Family::AnisotropicTrig { modes, .. } => {
                modes.iter().try_for_each(|m| check_k(&m.k))?
            }
            _ => {}
        }
        if !(lambda > 0.0) {
            return Err(HomogError::InvalidInput(format!(
                "field is not uniformly elliptic (lambda = {lambda})"
            )));
        }
        let (m_min, m_max) = (mobility.lower_bound(), mobility.upper_bound());
        if !(m_min > 0.0) {
            return Err(HomogError::InvalidInput(format!(
                "mobility lower bound {m_min} is not positive"
            )));
        }
        Ok(CoefficientField {
            d,
            family,
            mobility: Some(mobility),
            drift: Vec::new(),
            lambda,
            big_lambda,
            m_min,
            m_max,
        })
    }

    /// Adds the orientation-dependent mobility `m(y,e) = m_0(y) + ⟨e, g(y)⟩`.
    pub fn with_mobility_drift(mut self, g: Vec<TrigSeries>) -> Result<Self> {
        if self.mobility.is_none() {
            return Err(HomogError::InvalidInput(
                "custom fields carry their own mobility".into(),
            ));
        }
        if g.len() != self.d || g.iter().flat_map(|s| &s.modes).any(|m| m.k.len() != self.d) {
            return Err(HomogError::InvalidInput(
                "mobility drift needs d components in d dimensions".into(),
            ));
        }
        let bound = g
            .iter()
            .map(|s| s.lower_bound().abs().max(s.upper_bound().abs()).powi(2))
            .sum::<f64>()
            .sqrt();
        let m0 = self.mobility.as_ref().unwrap();
        let m_min = m0.lower_bound() - bound;
        if !(m_min > 0.0) {
            return Err(HomogError::InvalidInput(format!(
                "mobility lower bound {m_min} is not positive"
            )));
        }
        self.m_min = m_min;
        self.m_max = m0.upper_bound() + bound;
        self.drift = g;
        Ok(self)
    }

    pub fn mobility_drift(&self) -> &[TrigSeries] {
        &self.drift
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Mobility as a trigonometric polynomial (built-in families only).
    pub fn mobility(&self) -> Option<&TrigSeries> {
        self.mobility.as_ref()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn big_lambda(&self) -> f64 {
        self.big_lambda
    }

    pub fn m_min(&self) -> f64 {
        self.m_min
    }

    pub fn m_max(&self) -> f64 {
        self.m_max
    }

    pub fn a(&self, y: &[f64], e: &[f64]) -> Mat {
        let d = self.d;
        match &self.family {
            Family::Constant { a0 } => a0.clone(),
            Family::IsotropicTrig { scalar } => Mat::identity(d, d) * scalar.eval(y),
            Family::Laminar { base, nu, k, eta } => {
                let c = nu * TrigMode::new(1.0, k).arg(y).cos();
                Mat::from_fn(d, d, |i, j| base[(i, j)] + c * eta[i] * eta[j])
            }
            Family::AnisotropicTrig { base, modes } => {
                let mut a = base.clone();
                for m in modes {
                    let c = (2.0 * PI * m.k.iter().zip(y).map(|(&k, y)| k as f64 * y).sum::<f64>()
                        + m.phase)
                        .cos();
                    a += &m.s * c;
                }
                a
            }
            Family::Custom(f) => f.a(y, e),
        }
    }

    pub fn m(&self, y: &[f64], e: &[f64]) -> f64 {
        match (&self.mobility, &self.family) {
            (Some(s), _) => {
                s.eval(y)
                    + self
                        .drift
                        .iter()
                        .zip(e)
                        .map(|(g, ei)| ei * g.eval(y))
                        .sum::<f64>()
            }
            (None, Family::Custom(f)) => f.m(y, e),
            (None, _) => unreachable!("built-in fields always carry a mobility"),
        }
    }
}

/// Typed parameters for [`builtin_field`]; unset entries take the defaults
/// `a0 = Id`, `m ≡ 1`.
#[derive(Clone, Debug, Default)]
pub struct FieldParams {
    pub d: usize,
    pub a0: Option<Mat>,
    pub scalar: Option<TrigSeries>,
    pub nu: Option<f64>,
    pub k: Option<Vec<i64>>,
    pub eta: Option<Vec<f64>>,
    pub tensor_modes: Vec<TensorMode>,
    pub mobility: Option<TrigSeries>,
    /// Orientation-dependent mobility `⟨e, g(y)⟩`; empty for none.
    pub drift: Vec<TrigSeries>,
}

pub fn builtin_field(name: &str, p: &FieldParams) -> Result<CoefficientField> {
    let d = p.d;
    let missing = |what: &str| HomogError::InvalidInput(format!("family `{name}` needs `{what}`"));
    let a0 = p.a0.clone().unwrap_or_else(|| Mat::identity(d, d));
    let mobility = p
        .mobility
        .clone()
        .unwrap_or_else(|| TrigSeries::constant(1.0));
    let field = match name {
        "constant" => CoefficientField::constant(a0, mobility),
        "isotropic-trig" => {
            let scalar = p.scalar.clone().ok_or_else(|| missing("scalar"))?;
            CoefficientField::isotropic_trig(d, scalar, mobility)
        }
        "laminar" => CoefficientField::laminar(
            a0,
            p.nu.ok_or_else(|| missing("nu"))?,
            p.k.clone().ok_or_else(|| missing("k"))?,
            p.eta.clone().ok_or_else(|| missing("eta"))?,
            mobility,
        ),
        "anisotropic-trig" => {
            CoefficientField::anisotropic_trig(a0, p.tensor_modes.clone(), mobility)
        }
        other => Err(HomogError::UnknownFamily(other.to_string())),
    }?;
    if p.drift.is_empty() {
        Ok(field)
    } else {
        field.with_mobility_drift(p.drift.clone())
    }
}

/// `b(y) = (Id - e⊗e) a(y,e) (Id - e⊗e)` together with `m(y,e)`.
#[derive(Clone, Debug)]
pub struct ProjectedOperator<'a> {
    field: &'a CoefficientField,
    e: Direction,
    p: Mat,
}

pub fn project_a<'a>(field: &'a CoefficientField, e: &Direction) -> Result<ProjectedOperator<'a>> {
    if e.dim() != field.dim() {
        return Err(HomogError::InvalidInput(
            "direction and field dimensions differ".into(),
        ));
    }
    Ok(ProjectedOperator {
        field,
        e: e.clone(),
        p: e.projector(),
    })
}

impl<'a> ProjectedOperator<'a> {
    pub fn field(&self) -> &'a CoefficientField {
        self.field
    }

    pub fn direction(&self) -> &Direction {
        &self.e
    }

    pub fn projector(&self) -> &Mat {
        &self.p
    }

    pub fn b(&self, y: &[f64]) -> Mat {
        let mut b = &self.p * self.field.a(y, self.e.unit()) * &self.p;
        crate::lattice::symmetrize(&mut b);
        b
    }

    pub fn m(&self, y: &[f64]) -> f64 {
        self.field.m(y, self.e.unit())
    }

    /// `X̃_e = P X P`.
    pub fn project(&self, x: &Mat) -> Mat {
        &self.p * x * &self.p
    }
}

/// Empirical bounds over a quasi-random sampling net.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipticityReport {
    pub lambda_hat: f64,
    pub big_lambda_hat: f64,
    pub m_min_hat: f64,
}

const PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base as u64) as f64 * inv;
        i /= base as u64;
        inv /= b;
    }
    r
}

/// Checks `λ Id ≤ a ≤ Λ Id`, `m > 0` and periodicity on `n_samples`
/// Halton points (randomly shifted by `seed`) in `T^d × S^{d-1}`.
pub fn verify_ellipticity(
    field: &CoefficientField,
    n_samples: usize,
    seed: u64,
) -> Result<EllipticityReport> {
    if n_samples == 0 {
        return Err(HomogError::InvalidInput("n_samples must be >= 1".into()));
    }
    let d = field.dim();
    if 2 * d > PRIMES.len() {
        return Err(HomogError::InvalidInput(
            "dimension too large for the Halton net".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..2 * d).map(|_| rng.random::<f64>()).collect();
    let mut rep = EllipticityReport {
        lambda_hat: f64::INFINITY,
        big_lambda_hat: f64::NEG_INFINITY,
        m_min_hat: f64::INFINITY,
    };
    let mut i = 0u64;
    let mut taken = 0;
    while taken < n_samples {
        i += 1;
        let u: Vec<f64> = (0..2 * d)
            .map(|j| (radical_inverse(i, PRIMES[j]) + shift[j]).fract())
            .collect();
        let y = &u[..d];
        let v: Vec<f64> = u[d..].iter().map(|x| 2.0 * x - 1.0).collect();
        let nv = norm(&v);
        if nv < 1e-3 {
            continue;
        }
        let e: Vec<f64> = v.iter().map(|x| x / nv).collect();
        taken += 1;
        let a = field.a(y, &e);
        let (lo, hi) = sym_extremes(&a);
        let m = field.m(y, &e);
        let violation = |what, value| HomogError::EllipticityViolation {
            y: y.to_vec(),
            e: e.clone(),
            what,
            value,
        };
        if lo < field.lambda() - 1e-9 {
            return Err(violation("min eigenvalue", lo));
        }
        if hi > field.big_lambda() + 1e-9 {
            return Err(violation("max eigenvalue", hi));
        }
        if !(m > 0.0) {
            return Err(violation("mobility", m));
        }
        if taken % 8 == 1 {
            for axis in 0..d {
                let mut yw = y.to_vec();
                yw[axis] += 1.0;
                let da = (field.a(&yw, &e) - &a).amax();
                let dm = (field.m(&yw, &e) - m).abs();
                if da > 1e-9 || dm > 1e-9 {
                    return Err(violation("periodicity defect", da.max(dm)));
                }
            }
        }
        rep.lambda_hat = rep.lambda_hat.min(lo);
        rep.big_lambda_hat = rep.big_lambda_hat.max(hi);
        rep.m_min_hat = rep.m_min_hat.min(m);
    }
    Ok(rep)
}

/// Contraction `tr(b X)`.
pub fn trace_product(b: &Mat, x: &Mat) -> f64 {
    b.component_mul(&x.transpose()).sum()
}

/// `⟨a v, v⟩`.
pub fn quadratic_form(a: &Mat, v: &[f64]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)] * v[i] * v[j]).sum::<f64>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::primitive_direction;
    use proptest::prelude::*;

    fn iso(d: usize) -> CoefficientField {
        CoefficientField::isotropic_trig(
            d,
            TrigSeries::new(2.0, vec![TrigMode::new(1.0, &[1, 0, 0][..d])]),
            TrigSeries::constant(1.0),
        )
        .unwrap()
    }

    #[test]
    fn projection_examples() {
        let f = CoefficientField::constant(Mat::identity(2, 2), TrigSeries::constant(1.0)).unwrap();
        let op = project_a(&f, &primitive_direction(&[0, 1]).unwrap()).unwrap();
        assert_eq!(
            op.b(&[0.3, 0.2]),
            Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])
        );

        let f = CoefficientField::constant(
            Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]),
            TrigSeries::constant(1.0),
        )
        .unwrap();
        let op = project_a(&f, &primitive_direction(&[1, 0]).unwrap()).unwrap();
        assert_eq!(
            op.b(&[0.0, 0.0]),
            Mat::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 3.0])
        );

        let f = iso(3);
        let op = project_a(&f, &primitive_direction(&[0, 0, 1]).unwrap()).unwrap();
        let y = [0.17, 0.4, 0.9];
        let s = 2.0 + (2.0 * PI * y[0]).cos();
        let expect = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![s, s, 0.0]));
        assert!((op.b(&y) - expect).amax() < 1e-15);
    }

    #[test]
    fn builtin_bounds() {
        let p = FieldParams {
            d: 2,
            scalar: Some(TrigSeries::new(2.0, vec![TrigMode::new(1.0, &[1, 1])])),
            ..Default::default()
        };
        let f = builtin_field("isotropic-trig", &p).unwrap();
        assert_eq!((f.lambda(), f.big_lambda()), (1.0, 3.0));

        let p = FieldParams {
            d: 3,
            nu: Some(0.5),
            k: Some(vec![0, 0, 1]),
            eta: Some(vec![1.0, 0.0, 0.0]),
            ..Default::default()
        };
        let f = builtin_field("laminar", &p).unwrap();
        assert!((f.lambda() - 0.5).abs() < 1e-14 && (f.big_lambda() - 1.5).abs() < 1e-14);

        let f = builtin_field(
            "constant",
            &FieldParams {
                d: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(f.a(&[0.1, 0.2], &[1.0, 0.0]), Mat::identity(2, 2));
        assert_eq!(f.m(&[0.1, 0.2], &[1.0, 0.0]), 1.0);

        assert!(matches!(
            builtin_field(
                "wavy",
                &FieldParams {
                    d: 2,
                    ..Default::default()
                }
            ),
            Err(HomogError::UnknownFamily(_))
        ));
        assert!(builtin_field(
            "laminar",
            &FieldParams {
                d: 3,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn ellipticity_examples() {
        let f = CoefficientField::constant(Mat::identity(3, 3), TrigSeries::constant(1.0)).unwrap();
        let r = verify_ellipticity(&f, 64, 1).unwrap();
        assert!((r.lambda_hat - 1.0).abs() < 1e-12 && (r.big_lambda_hat - 1.0).abs() < 1e-12);

        let f = CoefficientField::constant(
            Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]),
            TrigSeries::constant(1.0),
        )
        .unwrap();
        let r = verify_ellipticity(&f, 64, 2).unwrap();
        assert_eq!(
            (r.lambda_hat, r.big_lambda_hat, r.m_min_hat),
            (1.0, 4.0, 1.0)
        );

        // Extremes of 2 + cos are 1 and 3.
        let r = verify_ellipticity(&iso(2), 8192, 3).unwrap();
        assert!((r.lambda_hat - 1.0).abs() < 1e-6, "{r:?}");
        assert!((r.big_lambda_hat - 3.0).abs() < 1e-6, "{r:?}");
    }

    #[derive(Debug)]
    struct Overshoot;
    impl FieldEvaluator for Overshoot {
        fn a(&self, y: &[f64], _: &[f64]) -> Mat {
            Mat::identity(2, 2) * (2.0 + (2.0 * PI * y[0]).cos())
        }
        fn m(&self, _: &[f64], _: &[f64]) -> f64 {
            1.0
        }
    }

    #[derive(Debug)]
    struct Aperiodic;
    impl FieldEvaluator for Aperiodic {
        fn a(&self, y: &[f64], _: &[f64]) -> Mat {
            Mat::identity(2, 2) * (1.0 + 0.1 * y[0])
        }
        fn m(&self, _: &[f64], _: &[f64]) -> f64 {
            1.0
        }
    }

    #[test]
    fn custom_field_violations_are_reported() {
        let f = CoefficientField::custom(2, Arc::new(Overshoot), 1.0, 2.5, 1.0, 1.0).unwrap();
        match verify_ellipticity(&f, 100, 0) {
            Err(HomogError::EllipticityViolation { what, value, .. }) => {
                assert_eq!(what, "max eigenvalue");
                assert!(value > 2.5);
            }
            other => panic!("unexpected {other:?}"),
        }
        let f = CoefficientField::custom(2, Arc::new(Aperiodic), 1.0, 2.5, 1.0, 1.0).unwrap();
        assert!(matches!(
            verify_ellipticity(&f, 100, 0),
            Err(HomogError::EllipticityViolation {
                what: "periodicity defect",
                ..
            })
        ));
        assert!(verify_ellipticity(&f, 0, 0).is_err());
    }

    fn sym(v: &[f64]) -> Mat {
        let m = Mat::from_row_slice(3, 3, v);
        (&m + m.transpose()) * 0.5
    }

    proptest! {
        #[test]
        fn contraction_ignores_normal_part(v in prop::collection::vec(-2.0..2.0f64, 9),
                                            k in prop::collection::vec(-3i64..=3, 3)) {
            prop_assume!(k.iter().any(|&x| x != 0));
            let e = primitive_direction(&k).unwrap();
            let f = CoefficientField::anisotropic_trig(
                Mat::identity(3, 3) * 2.0,
                vec![TensorMode { s: sym(&[0.3, 0.1, 0.0, 0.1, -0.2, 0.2, 0.0, 0.2, 0.1]), k: vec![1, -1, 2], phase: 0.4 }],
                TrigSeries::constant(1.0),
            ).unwrap();
            let op = project_a(&f, &e).unwrap();
            let x = sym(&v);
            let y = [0.3, 0.7, 0.11];
            let b = op.b(&y);
            prop_assert!((trace_product(&b, &x) - trace_product(&b, &op.project(&x))).abs() < 1e-12);
            let be = &b * DMatrix::from_column_slice(3, 1, e.unit());
            prop_assert!(be.amax() < 1e-14);
        }

        #[test]
        fn projection_forgets_normal_couplings(w in prop::collection::vec(-1.0..1.0f64, 3),
                                               k in prop::collection::vec(-3i64..=3, 3)) {
            prop_assume!(k.iter().any(|&x| x != 0));
            let e = primitive_direction(&k).unwrap();
            let a0 = sym(&[2.0, 0.3, 0.1, 0.3, 1.5, 0.0, 0.1, 0.0, 1.2]);
            let ev = DMatrix::from_column_slice(3, 1, e.unit());
            let wv = DMatrix::from_column_slice(3, 1, &w);
            let a1 = &a0 + &ev * wv.transpose() + &wv * ev.transpose();
            let p = e.projector();
            prop_assert!((&p * &a0 * &p - &p * &a1 * &p).amax() < 1e-13);
        }
    }
}
