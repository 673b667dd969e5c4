//! Uniform periodic grids, grid functions and the central-difference
//! stencil of `tr(c D^2)`.

use std::io::{self, Write};

use nalgebra::DMatrix;

use crate::lattice::SliceChart;
use crate::linalg::Csr;

/// Row-major multi-index of `lin` (last axis fastest).
pub fn unravel(mut lin: usize, dims: &[usize], out: &mut [usize]) {
    for (o, &n) in out.iter_mut().zip(dims).rev() {
        *o = lin % n;
        lin /= n;
    }
}

pub fn ravel(idx: &[usize], dims: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Linear index of the neighbour of `lin` shifted by `shift` along `axis`, with wraparound.
pub fn neighbor(lin: usize, dims: &[usize], axis: usize, shift: isize) -> usize {
    let stride: usize = dims[axis + 1..].iter().product();
    let n = dims[axis];
    let i = (lin / stride) % n;
    let j = (i as isize + shift).rem_euclid(n as isize) as usize;
    lin - i * stride + j * stride
}

/// What a grid discretizes.
#[derive(Clone, Debug)]
pub enum GridDomain {
    /// Cartesian grid over `[0,1)^d`.
    Torus,
    /// Grid over `[0,1)^d` in the lattice coordinates `y = U z` of the chart's frame.
    LatticeTorus(SliceChart),
    /// Grid over a slice torus in chart coordinates `t`.
    Slice(SliceChart),
}

/// Real values on a uniform periodic grid.
#[derive(Clone, Debug)]
pub struct GridFunction {
    pub domain: GridDomain,
    pub dims: Vec<usize>,
    pub h: Vec<f64>,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(domain: GridDomain, dims: Vec<usize>) -> Self {
        let h = dims.iter().map(|&n| 1.0 / n as f64).collect();
        let len = dims.iter().product();
        GridFunction {
            domain,
            dims,
            h,
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.values[ravel(idx, &self.dims)]
    }

    /// Periodic lookup with arbitrary integer indices.
    pub fn at_wrapped(&self, idx: &[i64]) -> f64 {
        let w: Vec<usize> = idx
            .iter()
            .zip(&self.dims)
            .map(|(&i, &n)| i.rem_euclid(n as i64) as usize)
            .collect();
        self.at(&w)
    }

    /// Grid coordinates (in `[0,1)`) of node `lin`.
    pub fn node(&self, lin: usize) -> Vec<f64> {
        let mut idx = vec![0; self.dims.len()];
        unravel(lin, &self.dims, &mut idx);
        idx.iter()
            .zip(&self.h)
            .map(|(&i, h)| i as f64 * h)
            .collect()
    }

    /// Point of the torus represented by node `lin`.
    pub fn point(&self, lin: usize) -> Vec<f64> {
        let z = self.node(lin);
        match &self.domain {
            GridDomain::Torus => z,
            GridDomain::LatticeTorus(chart) => lattice_point(chart, &z),
            GridDomain::Slice(chart) => chart.point(&z),
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with one column per index axis and a value column.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let names: Vec<String> = (0..self.dims.len()).map(|i| format!("i{i}")).collect();
        writeln!(out, "{},value", names.join(","))?;
        let mut idx = vec![0; self.dims.len()];
        for (lin, v) in self.values.iter().enumerate() {
            unravel(lin, &self.dims, &mut idx);
            let parts: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
            writeln!(out, "{},{}", parts.join(","), crate::io::fmt_f64(*v))?;
        }
        Ok(())
    }

    /// Self-describing little-endian block: magic, rank, dims, spacings, values.
    pub fn write_binary<W: Write>(&self, out: &mut W) -> io::Result<()> {
        out.write_all(b"HGRD")?;
        out.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &n in &self.dims {
            out.write_all(&(n as u64).to_le_bytes())?;
        }
        for &h in &self.h {
            out.write_all(&h.to_le_bytes())?;
        }
        for &v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(bytes: &[u8]) -> io::Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
        let bad = || io::Error::new(io::ErrorKind::InvalidData, "malformed grid block");
        if bytes.len() < 8 || &bytes[..4] != b"HGRD" {
            return Err(bad());
        }
        let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let mut pos = 8;
        let take8 = |pos: &mut usize| -> io::Result<[u8; 8]> {
            let s = bytes.get(*pos..*pos + 8).ok_or_else(bad)?;
            *pos += 8;
            Ok(s.try_into().unwrap())
        };
        let dims: Vec<usize> = (0..rank)
            .map(|_| take8(&mut pos).map(|b| u64::from_le_bytes(b) as usize))
            .collect::<io::Result<_>>()?;
        let h: Vec<f64> = (0..rank)
            .map(|_| take8(&mut pos).map(f64::from_le_bytes))
            .collect::<io::Result<_>>()?;
        let len: usize = dims.iter().product();
        let values: Vec<f64> = (0..len)
            .map(|_| take8(&mut pos).map(f64::from_le_bytes))
            .collect::<io::Result<_>>()?;
        Ok((dims, h, values))
    }
}

/// `y = U z` for the frame `U = [B | w]` of `chart`.
pub fn lattice_point(chart: &SliceChart, z: &[f64]) -> Vec<f64> {
    let d = z.len();
    let mut y = vec![0.0; d];
    for (j, b) in chart.basis().iter().enumerate() {
        for i in 0..d {
            y[i] += z[j] * b[i] as f64;
        }
    }
    for i in 0..d {
        y[i] += z[d - 1] * chart.complement()[i] as f64;
    }
    y
}

/// Assembles `tr(c(p) D^2)` with second-order central differences,
/// including mixed derivatives, on a periodic grid with spacings `h`.
pub fn trace_operator<F>(dims: &[usize], h: &[f64], coef: F) -> Csr
where
    F: Fn(usize) -> DMatrix<f64> + Sync,
{
    use rayon::prelude::*;
    let m = dims.len();
    let total: usize = dims.iter().product();
    let rows: Vec<Vec<(usize, f64)>> = (0..total)
        .into_par_iter()
        .map(|p| {
            let c = coef(p);
            let mut row = Vec::with_capacity(1 + 2 * m + 2 * m * m);
            let mut diag = 0.0;
            for i in 0..m {
                let w = c[(i, i)] / (h[i] * h[i]);
                row.push((neighbor(p, dims, i, 1), w));
                row.push((neighbor(p, dims, i, -1), w));
                diag -= 2.0 * w;
                for j in i + 1..m {
                    let w = 2.0 * c[(i, j)] / (4.0 * h[i] * h[j]);
                    if w == 0.0 {
                        continue;
                    }
                    let pi = neighbor(p, dims, i, 1);
                    let mi = neighbor(p, dims, i, -1);
                    row.push((neighbor(pi, dims, j, 1), w));
                    row.push((neighbor(pi, dims, j, -1), -w));
                    row.push((neighbor(mi, dims, j, 1), -w));
                    row.push((neighbor(mi, dims, j, -1), w));
                }
            }
            row.push((p, diag));
            row
        })
        .collect();
    Csr::from_rows(rows)
}

/// Central-difference gradient (grid coordinates) at node `p`.
pub fn gradient(f: &GridFunction, p: usize) -> Vec<f64> {
    (0..f.dims.len())
        .map(|i| {
            let a = f.values[neighbor(p, &f.dims, i, 1)];
            let b = f.values[neighbor(p, &f.dims, i, -1)];
            (a - b) / (2.0 * f.h[i])
        })
        .collect()
}

/// Central-difference Hessian (grid coordinates) at node `p`.
pub fn hessian(f: &GridFunction, p: usize) -> DMatrix<f64> {
    let m = f.dims.len();
    let dims = &f.dims;
    let v = &f.values;
    let mut hm = DMatrix::zeros(m, m);
    for i in 0..m {
        let a = v[neighbor(p, dims, i, 1)];
        let b = v[neighbor(p, dims, i, -1)];
        hm[(i, i)] = (a - 2.0 * v[p] + b) / (f.h[i] * f.h[i]);
        for j in i + 1..m {
            let pi = neighbor(p, dims, i, 1);
            let mi = neighbor(p, dims, i, -1);
            let val = (v[neighbor(pi, dims, j, 1)]
                - v[neighbor(pi, dims, j, -1)]
                - v[neighbor(mi, dims, j, 1)]
                + v[neighbor(mi, dims, j, -1)])
                / (4.0 * f.h[i] * f.h[j]);
            hm[(i, j)] = val;
            hm[(j, i)] = val;
        }
    }
    hm
}
