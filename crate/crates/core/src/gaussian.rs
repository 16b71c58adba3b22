//! Diagonal trace-class covariance operators, Gaussian sampling in coefficient
//! space, spectral smoothing and the linear annealing schedule.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::spectral::{BasisSpec, FunctionSample};

/// A covariance operator `Q = diag(lambda_0, .., lambda_{K-1})` in a basis.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    eigenvalues: Vec<f64>,
    std_devs: Vec<f64>,
    basis: BasisSpec,
}

impl CovarianceSpec {
    /// Rejects negative, non-finite or all-zero spectra.
    pub fn new(eigenvalues: Vec<f64>, basis: BasisSpec) -> Result<Self> {
        let cov = Self::build(eigenvalues, basis)?;
        if cov.eigenvalues.iter().all(|&l| l == 0.0) {
            return Err(Error::invalid(
                "covariance has no positive eigenvalue; use CovarianceSpec::zero for the zero operator",
            ));
        }
        Ok(cov)
    }

    /// The zero operator.
    pub fn zero(basis: BasisSpec) -> Self {
        Self::build(vec![0.0; basis.num_modes], basis).expect("zero spectrum is valid")
    }

    fn build(eigenvalues: Vec<f64>, basis: BasisSpec) -> Result<Self> {
        basis.validate()?;
        if eigenvalues.len() != basis.num_modes {
            return Err(Error::shape("covariance", &[basis.num_modes], &[eigenvalues.len()]));
        }
        for (k, &l) in eigenvalues.iter().enumerate() {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::invalid(format!(
                    "covariance eigenvalue {k} must be finite and >= 0, got {l}"
                )));
            }
        }
        let std_devs = eigenvalues.iter().map(|l| l.sqrt()).collect();
        Ok(CovarianceSpec {
            eigenvalues,
            std_devs,
            basis,
        })
    }

    /// `lambda_i = 1 / (i + 1)^2` for coefficient index `i = 0..K-1`.
    pub fn inverse_square(basis: BasisSpec) -> Result<Self> {
        let ev = (1..=basis.num_modes).map(|k| 1.0 / (k * k) as f64).collect();
        Self::new(ev, basis)
    }

    /// The inverse-square spectrum with the listed indices zeroed.
    pub fn inverse_square_with_kernel(basis: BasisSpec, kernel: &[usize]) -> Result<Self> {
        let mut ev: Vec<f64> = (1..=basis.num_modes).map(|k| 1.0 / (k * k) as f64).collect();
        for &k in kernel {
            if k >= basis.num_modes {
                return Err(Error::IndexOutOfRange {
                    index: k,
                    num_modes: basis.num_modes,
                });
            }
            ev[k] = 0.0;
        }
        Self::new(ev, basis)
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn basis(&self) -> BasisSpec {
        self.basis
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Indices with zero eigenvalue.
    pub fn kernel(&self) -> Vec<usize> {
        self.eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 0.0)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.eigenvalues.iter().all(|&l| l == 0.0)
    }

    /// Draws `xi = sum_k sqrt(lambda_k) zeta_k e_k`.
    ///
    /// One standard normal is consumed per coordinate, kernel coordinates
    /// included, so the stream position does not depend on the spectrum.
    pub fn sample_noise(&self, rng: &mut Rng) -> FunctionSample {
        let coeffs = self
            .std_devs
            .iter()
            .map(|&s| {
                let z: f64 = rng.sample(StandardNormal);
                if s == 0.0 {
                    0.0
                } else {
                    s * z
                }
            })
            .collect();
        FunctionSample::new(coeffs, self.basis).expect("finite by construction")
    }

    /// `c_k + epsilon sqrt(lambda_k) zeta_k`. `epsilon == 0` returns `x`
    /// unchanged and draws nothing.
    pub fn smooth_sample(&self, x: &FunctionSample, epsilon: f64, rng: &mut Rng) -> Result<FunctionSample> {
        self.basis.ensure_same(&x.basis())?;
        check_epsilon(epsilon)?;
        if epsilon == 0.0 {
            return Ok(x.clone());
        }
        let coeffs = x
            .coeffs()
            .iter()
            .zip(&self.std_devs)
            .map(|(&c, &s)| {
                let z: f64 = rng.sample(StandardNormal);
                if s == 0.0 {
                    c
                } else {
                    c + epsilon * s * z
                }
            })
            .collect();
        FunctionSample::new(coeffs, self.basis)
    }

    /// Row-wise [`smooth_sample`](Self::smooth_sample) on an `n x K` batch,
    /// in row-major draw order.
    pub fn smooth_batch(&self, batch: &Array2<f64>, epsilon: f64, rng: &mut Rng) -> Result<Array2<f64>> {
        if batch.ncols() != self.basis.num_modes {
            return Err(Error::shape("smooth_batch", &[self.basis.num_modes], &[batch.ncols()]));
        }
        check_epsilon(epsilon)?;
        let mut out = batch.clone();
        if epsilon == 0.0 {
            return Ok(out);
        }
        for mut row in out.rows_mut() {
            for (c, &s) in row.iter_mut().zip(&self.std_devs) {
                let z: f64 = rng.sample(StandardNormal);
                if s != 0.0 {
                    *c += epsilon * s * z;
                }
            }
        }
        Ok(out)
    }

    /// `pi_K x`: keeps the coefficients in the kernel of `Q`, zeroes the rest.
    pub fn kernel_projection(&self, x: &FunctionSample) -> Result<FunctionSample> {
        self.basis.ensure_same(&x.basis())?;
        let coeffs = x
            .coeffs()
            .iter()
            .zip(&self.eigenvalues)
            .map(|(&c, &l)| if l == 0.0 { c } else { 0.0 })
            .collect();
        FunctionSample::new(coeffs, self.basis)
    }

    /// True iff no singular direction of the data lies in the kernel of `Q`.
    pub fn covers_singular_directions(&self, singular_dirs: &[usize]) -> bool {
        singular_dirs
            .iter()
            .all(|&k| self.eigenvalues.get(k).is_some_and(|&l| l > 0.0))
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::invalid(format!("smoothing amplitude must be finite and >= 0, got {epsilon}")));
    }
    Ok(())
}

/// Linear decay from `sigma_max` to `sigma_min` over the first
/// `active_fraction` of the epochs, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub total_epochs: usize,
    #[serde(default = "default_active_fraction")]
    pub active_fraction: f64,
}

fn default_active_fraction() -> f64 {
    0.8
}

impl NoiseSchedule {
    pub fn new(sigma_max: f64, sigma_min: f64, total_epochs: usize, active_fraction: f64) -> Result<Self> {
        let s = NoiseSchedule {
            sigma_max,
            sigma_min,
            total_epochs,
            active_fraction,
        };
        s.validate()?;
        Ok(s)
    }

    /// A schedule that is zero everywhere (no smoothing).
    pub fn off(total_epochs: usize) -> Self {
        NoiseSchedule {
            sigma_max: 0.0,
            sigma_min: 0.0,
            total_epochs,
            active_fraction: 0.8,
        }
    }

    /// `sigma_max > 0` is relaxed to `>= 0` so that the unsmoothed ablation
    /// `sigma_max = sigma_min = 0` is expressible.
    pub fn validate(&self) -> Result<()> {
        let finite = self.sigma_max.is_finite() && self.sigma_min.is_finite();
        if !finite || self.sigma_min < 0.0 || self.sigma_min > self.sigma_max {
            return Err(Error::invalid(format!(
                "schedule needs 0 <= sigma_min <= sigma_max, got sigma_min={} sigma_max={}",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.active_fraction > 0.0 && self.active_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "active_fraction must lie in (0, 1], got {}",
                self.active_fraction
            )));
        }
        Ok(())
    }

    pub fn sigma_at(&self, epoch: usize) -> Result<f64> {
        if epoch > self.total_epochs {
            return Err(Error::invalid(format!(
                "epoch {epoch} outside schedule of {} epochs",
                self.total_epochs
            )));
        }
        let active = self.active_fraction * self.total_epochs as f64;
        let e = epoch as f64;
        if e >= active {
            return Ok(self.sigma_min);
        }
        let t = e / active;
        Ok(self.sigma_min.max((1.0 - t) * self.sigma_max + t * self.sigma_min))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use approx::assert_abs_diff_eq;

    fn basis(k: usize) -> BasisSpec {
        BasisSpec::fourier(k).unwrap()
    }

    #[test]
    fn rejects_bad_spectra() {
        assert!(CovarianceSpec::new(vec![1.0, -0.1], basis(2)).is_err());
        assert!(CovarianceSpec::new(vec![0.0, 0.0], basis(2)).is_err());
        assert!(CovarianceSpec::new(vec![1.0], basis(2)).is_err());
        assert!(CovarianceSpec::new(vec![1.0, f64::NAN], basis(2)).is_err());
    }

    #[test]
    fn trace_and_kernel() {
        let c = CovarianceSpec::inverse_square_with_kernel(basis(16), &[1]).unwrap();
        assert_eq!(c.kernel(), vec![1]);
        let full = CovarianceSpec::inverse_square(basis(16)).unwrap();
        let oracle: f64 = (1..=16).map(|k| 1.0 / (k * k) as f64).sum();
        assert_abs_diff_eq!(full.trace(), oracle, epsilon = 1e-12);
        assert!(full.kernel().is_empty());
    }

    #[test]
    fn zero_operator_gives_zero_noise() {
        let c = CovarianceSpec::zero(basis(8));
        let mut rng = stream(0, Stream::Noise);
        let x = c.sample_noise(&mut rng);
        assert!(x.coeffs().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kernel_coordinates_are_exactly_zero() {
        let c = CovarianceSpec::inverse_square_with_kernel(basis(6), &[0, 3]).unwrap();
        let mut rng = stream(9, Stream::Noise);
        for _ in 0..1000 {
            let x = c.sample_noise(&mut rng);
            assert_eq!(x.coeffs()[0].to_bits(), 0.0f64.to_bits());
            assert_eq!(x.coeffs()[3].to_bits(), 0.0f64.to_bits());
        }
    }

    #[test]
    fn smoothing_with_zero_amplitude_is_identity() {
        let c = CovarianceSpec::inverse_square(basis(4)).unwrap();
        let x = FunctionSample::new(vec![0.1, -2.0, 3.5, 1e-300], basis(4)).unwrap();
        let mut rng = stream(1, Stream::Noise);
        let y = c.smooth_sample(&x, 0.0, &mut rng).unwrap();
        assert_eq!(x, y);
        assert!(c.smooth_sample(&x, -1.0, &mut rng).is_err());
        let other = FunctionSample::zeros(basis(5));
        assert!(c.smooth_sample(&other, 0.1, &mut rng).is_err());
    }

    #[test]
    fn smoothing_only_touches_positive_directions() {
        let c = CovarianceSpec::new(vec![1.0, 0.0, 0.0], basis(3)).unwrap();
        let x = FunctionSample::zeros(basis(3));
        let mut rng = stream(2, Stream::Noise);
        let n = 20_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let y = c.smooth_sample(&x, 1.0, &mut rng).unwrap();
            assert_eq!(y.coeffs()[1], 0.0);
            assert_eq!(y.coeffs()[2], 0.0);
            s += y.coeffs()[0];
            s2 += y.coeffs()[0] * y.coeffs()[0];
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn kernel_projection_examples() {
        let full = CovarianceSpec::inverse_square(basis(3)).unwrap();
        let x = FunctionSample::new(vec![3.0, 5.0, 7.0], basis(3)).unwrap();
        assert!(full.kernel_projection(&x).unwrap().coeffs().iter().all(|&v| v == 0.0));
        let c = CovarianceSpec::new(vec![0.0, 1.0, 1.0], basis(3)).unwrap();
        assert_eq!(c.kernel_projection(&x).unwrap().coeffs(), &[3.0, 0.0, 0.0]);
    }

    #[test]
    fn coverage_examples() {
        let b = basis(16);
        let singular: Vec<usize> = (0..16).filter(|&k| k != 1).collect();
        let appropriate = CovarianceSpec::inverse_square_with_kernel(b, &[1]).unwrap();
        let inappropriate = CovarianceSpec::inverse_square_with_kernel(b, &[3]).unwrap();
        assert!(appropriate.covers_singular_directions(&singular));
        assert!(!inappropriate.covers_singular_directions(&singular));
        assert!(inappropriate.covers_singular_directions(&[]));
    }

    #[test]
    fn schedule_values() {
        let s = NoiseSchedule::new(0.5, 0.06, 5000, 0.8).unwrap();
        assert_eq!(s.sigma_at(0).unwrap(), 0.5);
        assert_eq!(s.sigma_at(4000).unwrap(), 0.06);
        assert_abs_diff_eq!(s.sigma_at(2000).unwrap(), 0.28, epsilon = 1e-15);
        assert_eq!(s.sigma_at(5000).unwrap(), 0.06);
        assert!(s.sigma_at(5001).is_err());
        assert!(NoiseSchedule::new(0.1, 0.2, 10, 0.8).is_err());
        assert!(NoiseSchedule::new(0.5, 0.1, 10, 0.0).is_err());
    }
}
