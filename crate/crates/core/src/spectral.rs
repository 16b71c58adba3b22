//! Truncated orthonormal bases on [-1, 1] and conversion between grid values
//! and spectral coefficients.
//!
//! Basis enumeration:
//! - Fourier: `e_0 = 1/sqrt(2)`, `e_{2m-1} = sin(m pi t)`, `e_{2m} = cos(m pi t)`.
//! - Legendre: `e_k = sqrt((2k+1)/2) P_k(t)`.
//! - Haar: `h_0 = 1/sqrt(2)`, then `h_{j,k}` ordered by scale `j` and shift
//!   `k`. Each wavelet is supported on `[a, a + w)` with `w = 2 / 2^j`,
//!   positive on the left half-open half and negative on the right one, so
//!   every `h_{j,k}` vanishes at `t = 1`.
//!
//! Haar Gram matrices computed by trapezoid quadrature are only accurate when
//! the grid contains the dyadic breakpoints; use `M = 2^p + 1` uniform points
//! with `2^p` divisible by the finest scale.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Fourier,
    Legendre,
    Haar,
}

/// A truncated orthonormal basis `{e_0, .., e_{K-1}}` on [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub num_modes: usize,
}

impl fmt::Display for BasisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}(K={})", self.kind, self.num_modes)
    }
}

pub const DOMAIN: (f64, f64) = (-1.0, 1.0);

impl BasisSpec {
    pub fn new(kind: BasisKind, num_modes: usize) -> Result<Self> {
        let spec = BasisSpec { kind, num_modes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn fourier(num_modes: usize) -> Result<Self> {
        Self::new(BasisKind::Fourier, num_modes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_modes == 0 {
            return Err(Error::invalid("basis needs at least one mode"));
        }
        Ok(())
    }

    pub(crate) fn ensure_same(&self, other: &BasisSpec) -> Result<()> {
        if self != other {
            return Err(Error::BasisMismatch {
                left: self.to_string(),
                right: other.to_string(),
            });
        }
        Ok(())
    }

    /// `e_k(t)`.
    pub fn eval(&self, k: usize, t: f64) -> Result<f64> {
        if k >= self.num_modes {
            return Err(Error::IndexOutOfRange {
                index: k,
                num_modes: self.num_modes,
            });
        }
        check_domain(t)?;
        Ok(match self.kind {
            BasisKind::Fourier => fourier(k, t),
            BasisKind::Legendre => legendre_all(k + 1, t)[k],
            BasisKind::Haar => haar(k, t),
        })
    }

    /// All `K` basis functions at `t`, in enumeration order.
    pub fn eval_all(&self, t: f64) -> Result<Vec<f64>> {
        check_domain(t)?;
        let k = self.num_modes;
        Ok(match self.kind {
            BasisKind::Fourier => (0..k).map(|i| fourier(i, t)).collect(),
            BasisKind::Legendre => legendre_all(k, t),
            BasisKind::Haar => (0..k).map(|i| haar(i, t)).collect(),
        })
    }

    /// `M x K` matrix of basis values on a grid.
    pub fn design_matrix(&self, grid: &[f64]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((grid.len(), self.num_modes));
        for (i, &t) in grid.iter().enumerate() {
            for (k, v) in self.eval_all(t)?.into_iter().enumerate() {
                out[[i, k]] = v;
            }
        }
        Ok(out)
    }
}

fn check_domain(t: f64) -> Result<()> {
    if !(DOMAIN.0..=DOMAIN.1).contains(&t) {
        return Err(Error::OutsideDomain(t));
    }
    Ok(())
}

fn fourier(k: usize, t: f64) -> f64 {
    if k == 0 {
        FRAC_1_SQRT_2
    } else if k % 2 == 1 {
        let m = k.div_ceil(2);
        (m as f64 * PI * t).sin()
    } else {
        let m = k / 2;
        (m as f64 * PI * t).cos()
    }
}

/// Normalized Legendre values `e_0(t) .. e_{count-1}(t)` via the three-term
/// recurrence.
fn legendre_all(count: usize, t: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(count);
    for n in 0..count {
        let v = match n {
            0 => 1.0,
            1 => t,
            _ => {
                let m = (n - 1) as f64;
                ((2.0 * m + 1.0) * t * p[n - 1] - m * p[n - 2]) / (m + 1.0)
            }
        };
        p.push(v);
    }
    p.iter()
        .enumerate()
        .map(|(n, v)| ((2 * n + 1) as f64 / 2.0).sqrt() * v)
        .collect()
}

/// Scale and shift of Haar index `k >= 1`.
fn haar_scale_shift(k: usize) -> (u32, usize) {
    let i = k - 1;
    let j = usize::BITS - 1 - (i + 1).leading_zeros();
    (j, i + 1 - (1usize << j))
}

fn haar(k: usize, t: f64) -> f64 {
    if k == 0 {
        return FRAC_1_SQRT_2;
    }
    let (j, shift) = haar_scale_shift(k);
    let scale = (1u64 << j) as f64;
    let width = 2.0 / scale;
    let start = -1.0 + shift as f64 * width;
    let mid = start + 0.5 * width;
    let end = start + width;
    let amp = scale.sqrt() * FRAC_1_SQRT_2;
    if t >= start && t < mid {
        amp
    } else if t >= mid && t < end {
        -amp
    } else {
        0.0
    }
}

/// `M` uniformly spaced points covering [-1, 1] including both endpoints.
pub fn uniform_grid(m: usize) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::GridTooSmall(m));
    }
    let h = 2.0 / (m - 1) as f64;
    let mut g: Vec<f64> = (0..m).map(|i| -1.0 + i as f64 * h).collect();
    g[m - 1] = 1.0;
    Ok(g)
}

/// Composite trapezoid weights for a strictly increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Result<Vec<f64>> {
    validate_grid(grid)?;
    let m = grid.len();
    let mut w = vec![0.0; m];
    for i in 0..m - 1 {
        let h = grid[i + 1] - grid[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    Ok(w)
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::GridTooSmall(grid.len()));
    }
    for (i, w) in grid.windows(2).enumerate() {
        if w[1].is_nan() || w[0].is_nan() || w[1] <= w[0] {
            return Err(Error::GridNotIncreasing(i + 1));
        }
    }
    for &t in grid {
        check_domain(t)?;
    }
    Ok(())
}

/// A function given by its values on a grid in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        validate_grid(&grid)?;
        if grid.len() != values.len() {
            return Err(Error::shape("grid_function", &[grid.len()], &[values.len()]));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("grid function value at position {i}")));
        }
        Ok(GridFunction { grid, values })
    }

    /// Samples `f` on `grid`.
    pub fn from_fn(grid: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Trapezoid approximation of the integral of `f^2`.
    pub fn quadrature_norm2(&self) -> f64 {
        let w = trapezoid_weights(&self.grid).expect("grid validated on construction");
        w.iter().zip(&self.values).map(|(w, v)| w * v * v).sum()
    }

    /// Two-column CSV with header `t,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,value")?;
        for (t, v) in self.grid.iter().zip(&self.values) {
            writeln!(out, "{t},{v}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Parse(format!("line {}: expected `t,value`", lineno + 1)))
            };
            grid.push(parse(parts.next())?);
            values.push(parse(parts.next())?);
        }
        Self::new(grid, values)
    }
}

/// A function represented by its first `K` coefficients in a basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSample {
    coeffs: Vec<f64>,
    basis: BasisSpec,
}

impl FunctionSample {
    pub fn new(coeffs: Vec<f64>, basis: BasisSpec) -> Result<Self> {
        basis.validate()?;
        if coeffs.len() != basis.num_modes {
            return Err(Error::shape("function_sample", &[basis.num_modes], &[coeffs.len()]));
        }
        if let Some(i) = coeffs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("coefficient {i}")));
        }
        Ok(FunctionSample { coeffs, basis })
    }

    pub fn zeros(basis: BasisSpec) -> Self {
        FunctionSample {
            coeffs: vec![0.0; basis.num_modes],
            basis,
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn basis(&self) -> BasisSpec {
        self.basis
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// `<x, y>_H` through Parseval on the truncated span.
    pub fn inner(&self, other: &FunctionSample) -> Result<f64> {
        self.basis.ensure_same(&other.basis)?;
        Ok(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum())
    }

    /// `||x||_H^2`.
    pub fn norm2(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn sub(&self, other: &FunctionSample) -> Result<FunctionSample> {
        self.basis.ensure_same(&other.basis)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        Ok(FunctionSample { coeffs, basis: self.basis })
    }
}

/// Projects `f` onto the span of `spec`.
///
/// The inner products `<f, e_k>` are computed by trapezoid quadrature on
/// `f`'s grid and then corrected by the discrete Gram matrix of the basis on
/// the same grid, so that the result is the orthogonal projection under the
/// discrete inner product. On grids where the discrete Gram matrix is the
/// identity (Fourier on a uniform grid) the correction is a no-op; for
/// Legendre it removes the O(h^2) endpoint error of the trapezoid rule for
/// functions inside the span.
pub fn project(f: &GridFunction, spec: &BasisSpec) -> Result<FunctionSample> {
    spec.validate()?;
    let w = Array1::from(trapezoid_weights(&f.grid)?);
    let phi = spec.design_matrix(&f.grid)?;
    let weighted = &phi * &w.view().insert_axis(ndarray::Axis(1));
    let rhs = weighted.t().dot(&Array1::from(f.values.clone()));
    let gram = weighted.t().dot(&phi);
    let coeffs = solve_spd(gram, rhs)?;
    FunctionSample::new(coeffs.to_vec(), *spec)
}

/// Raw trapezoid inner products `<f, e_k>` without Gram correction.
pub fn quadrature_inner_products(f: &GridFunction, spec: &BasisSpec) -> Result<Vec<f64>> {
    let w = trapezoid_weights(&f.grid)?;
    let mut out = vec![0.0; spec.num_modes];
    for ((&t, &v), &wi) in f.grid.iter().zip(&f.values).zip(&w) {
        for (k, e) in spec.eval_all(t)?.into_iter().enumerate() {
            out[k] += wi * v * e;
        }
    }
    Ok(out)
}

/// Gram matrix `G[j][k] = <e_j, e_k>` by trapezoid quadrature on `grid`.
pub fn gram_matrix(spec: &BasisSpec, grid: &[f64]) -> Result<Array2<f64>> {
    let w = Array1::from(trapezoid_weights(grid)?);
    let phi = spec.design_matrix(grid)?;
    let weighted = &phi * &w.view().insert_axis(ndarray::Axis(1));
    Ok(weighted.t().dot(&phi))
}

/// `values(t) = sum_k c_k e_k(t)` on `grid`.
pub fn reconstruct(x: &FunctionSample, grid: &[f64]) -> Result<GridFunction> {
    let phi = x.basis.design_matrix(grid)?;
    let values = phi.dot(&Array1::from(x.coeffs.clone()));
    GridFunction::new(grid.to_vec(), values.to_vec())
}

/// Cholesky solve of a small symmetric positive definite system.
fn solve_spd(mut a: Array2<f64>, mut b: Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if d.is_nan() || d <= 0.0 {
            return Err(Error::invalid(
                "grid too coarse: discrete Gram matrix is singular",
            ));
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[[i, k]] * b[k];
        }
        b[i] = s / a[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[[k, i]] * b[k];
        }
        b[i] = s / a[[i, i]];
    }
    Ok(b)
}
