//! FFT helpers on periodic grids: multi-dimensional transforms and spectral
//! derivatives of periodic samples.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Signed wavenumber of FFT bin `j` on an `n`-point grid.
pub fn wavenumber(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// In-place d-dimensional FFT of row-major data. The inverse is normalized.
pub fn fftn(data: &mut [Complex64], dims: &[usize], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let total: usize = dims.iter().product();
    let mut line = Vec::new();
    for (axis, &n) in dims.iter().enumerate() {
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let stride: usize = dims[axis + 1..].iter().product();
        for base in 0..total {
            if (base / stride) % n != 0 {
                continue;
            }
            line.clear();
            line.extend((0..n).map(|j| data[base + j * stride]));
            fft.process(&mut line);
            for (j, v) in line.iter().enumerate() {
                data[base + j * stride] = *v;
            }
        }
    }
    if inverse {
        let s = 1.0 / total as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Applies the Fourier multiplier `symbol(k)` to real periodic samples.
pub fn apply_multiplier<F: Fn(&[i64]) -> Complex64>(
    values: &[f64],
    dims: &[usize],
    symbol: F,
) -> Vec<f64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fftn(&mut buf, dims, false);
    let mut idx = vec![0; dims.len()];
    let mut k = vec![0i64; dims.len()];
    for (lin, v) in buf.iter_mut().enumerate() {
        crate::grid::unravel(lin, dims, &mut idx);
        for ((kk, &i), &n) in k.iter_mut().zip(&idx).zip(dims) {
            *kk = wavenumber(i, n);
        }
        *v *= symbol(&k);
    }
    fftn(&mut buf, dims, true);
    buf.into_iter().map(|c| c.re).collect()
}

/// `order`-th derivative of samples of a function with period `period`.
/// The Nyquist mode is dropped for odd orders.
pub fn derivative_1d(values: &[f64], period: f64, order: u32) -> Vec<f64> {
    let n = values.len();
    let w = 2.0 * std::f64::consts::PI / period;
    apply_multiplier(values, &[n], |k| {
        if order % 2 == 1 && n % 2 == 0 && k[0].unsigned_abs() as usize == n / 2 {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::new(0.0, w * k[0] as f64).powu(order)
    })
}

/// Trigonometric interpolation of periodic samples at `s`.
pub fn trig_interpolate(values: &[f64], period: f64, s: f64) -> f64 {
    let n = values.len();
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fftn(&mut buf, &[n], false);
    let x = 2.0 * std::f64::consts::PI * s / period;
    let mut acc = 0.0;
    for (j, c) in buf.iter().enumerate() {
        let k = wavenumber(j, n);
        let weight = if n % 2 == 0 && k.unsigned_abs() as usize == n / 2 {
            0.5
        } else {
            1.0
        };
        let phase = Complex64::new(0.0, k as f64 * x).exp();
        acc += weight * (c * phase).re;
        if weight == 0.5 {
            acc += 0.5 * (c * Complex64::new(0.0, -(k as f64) * x).exp()).re;
        }
    }
    acc / n as f64
}
