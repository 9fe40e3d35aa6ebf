//! Feature-space Fréchet distance between two Gaussian fits.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sample mean and covariance (unbiased, `n - 1` denominator) of a feature
/// set.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    /// Fit from row samples. Requires at least two samples of equal
    /// dimensionality.
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid_input("need at least 2 samples to fit a Gaussian"));
        }
        let dim = samples[0].len();
        if dim == 0 || samples.iter().any(|s| s.len() != dim) {
            return Err(Error::invalid_input("feature dimension mismatch"));
        }
        let n = samples.len() as f64;
        let mut mean = DVector::zeros(dim);
        for s in samples {
            for (i, &v) in s.iter().enumerate() {
                mean[i] += v;
            }
        }
        mean /= n;
        let mut cov = DMatrix::zeros(dim, dim);
        for s in samples {
            let d = DVector::from_row_slice(s) - &mean;
            cov += &d * d.transpose();
        }
        cov /= n - 1.0;
        Ok(Self { mean, cov })
    }
}

/// Symmetric PSD square root via eigendecomposition; negative eigenvalues
/// (numerical noise) are clamped at zero.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("eigendecomposition failed on covariance matrix".into()));
    }
    let sqrt_vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()),
    );
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose())
}

/// `||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2})`.
///
/// The cross term uses the equivalent symmetric form
/// `tr((S_a^{1/2} S_b S_a^{1/2})^{1/2})` so only symmetric
/// eigendecompositions are needed.
pub fn frechet_distance_from_stats(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::invalid_input("feature dimension mismatch"));
    }
    let diff = &a.mean - &b.mean;
    let mean_term = diff.dot(&diff);

    let sqrt_a = psd_sqrt(&a.cov)?;
    let inner = &sqrt_a * &b.cov * &sqrt_a;
    let eig = ((&inner + inner.transpose()) * 0.5).symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("eigendecomposition failed on cross covariance".into()));
    }
    let tr_cross: f64 = eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()).sum();

    let dist = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * tr_cross;
    Ok(dist.max(0.0))
}

/// Fréchet distance between Gaussian fits of two feature sets.
pub fn frechet_feature_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let stats_a = GaussianStats::from_samples(a)?;
    let stats_b = GaussianStats::from_samples(b)?;
    frechet_distance_from_stats(&stats_a, &stats_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_stats(dim: usize, mean: &[f64]) -> GaussianStats {
        GaussianStats { mean: DVector::from_row_slice(mean), cov: DMatrix::identity(dim, dim) }
    }

    #[test]
    fn identical_stats_give_zero() {
        let a = identity_stats(3, &[0.5, -1.0, 2.0]);
        let d = frechet_distance_from_stats(&a, &a.clone()).unwrap();
        assert!(d.abs() < 1e-9);
    }

    #[test]
    fn identity_cov_mean_shift_gives_squared_norm() {
        let a = identity_stats(4, &[0.0; 4]);
        let shift = [1.0, -2.0, 0.5, 3.0];
        let b = identity_stats(4, &shift);
        let expected: f64 = shift.iter().map(|v| v * v).sum();
        let d = frechet_distance_from_stats(&a, &b).unwrap();
        assert!((d - expected).abs() < 1e-9, "d={d} expected={expected}");
    }

    /// Samples `mu +- s e_i` whose sample covariance is exactly the
    /// identity: with `n = 2 dim` points, `sum v v^T = 2 s^2 I`, so
    /// `s^2 = (n - 1) / 2` makes the unbiased estimate `I`.
    fn identity_cov_samples(dim: usize, mu: &[f64]) -> Vec<Vec<f64>> {
        let s = (((2 * dim - 1) as f64) / 2.0).sqrt();
        let mut out = Vec::new();
        for i in 0..dim {
            for sign in [1.0, -1.0] {
                let mut v = mu.to_vec();
                v[i] += sign * s;
                out.push(v);
            }
        }
        out
    }

    #[test]
    fn sample_route_matches_closed_form() {
        let mu_a = vec![0.0; 3];
        let mu_b = vec![0.6, -0.2, 1.5];
        let a = identity_cov_samples(3, &mu_a);
        let b = identity_cov_samples(3, &mu_b);
        let expected: f64 = mu_b.iter().map(|v| v * v).sum();
        let d = frechet_feature_distance(&a, &b).unwrap();
        assert!((d - expected).abs() < 1e-9, "d={d} expected={expected}");
    }

    #[test]
    fn identical_sample_sets_give_zero() {
        let a = identity_cov_samples(5, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let d = frechet_feature_distance(&a, &a).unwrap();
        assert!(d.abs() < 1e-9);
    }

    #[test]
    fn invariant_to_sample_order() {
        let a = identity_cov_samples(3, &[0.1, 0.2, 0.3]);
        let b = identity_cov_samples(3, &[-1.0, 0.5, 2.0]);
        let mut b_rev = b.clone();
        b_rev.reverse();
        let d1 = frechet_feature_distance(&a, &b).unwrap();
        let d2 = frechet_feature_distance(&a, &b_rev).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
    }

    #[test]
    fn symmetric_in_arguments() {
        let a = identity_cov_samples(3, &[0.0, 0.0, 0.0]);
        let b = identity_cov_samples(3, &[1.0, 1.0, 1.0]);
        let d1 = frechet_feature_distance(&a, &b).unwrap();
        let d2 = frechet_feature_distance(&b, &a).unwrap();
        assert!((d1 - d2).abs() < 1e-9);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(frechet_feature_distance(&[vec![1.0]], &[vec![1.0], vec![2.0]]).is_err());
        assert!(frechet_feature_distance(&[vec![1.0], vec![2.0]], &[vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
    }
}
