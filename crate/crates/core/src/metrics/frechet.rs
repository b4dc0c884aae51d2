use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Mean and `1/(N-1)` covariance of the rows of `x`.
pub fn gaussian_stats(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows();
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = (n.max(2) - 1) as f64;
    let cov = centered.transpose() * &centered / denom;
    (mean, cov)
}

fn clamped_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for v in eig.eigenvalues.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-8 * max {
                tracing::warn!(eigenvalue = *v, "clamping a negative eigenvalue of a PSD matrix");
            }
            *v = 0.0;
        }
    }
    eig
}

/// Square root of a symmetric positive semi-definite matrix.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = clamped_eigen(m);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two feature sets (rows are
/// samples). `tr (S_a S_b)^(1/2)` is taken as `tr (S_a^(1/2) S_b S_a^(1/2))^(1/2)`,
/// the square root of a symmetrised product with the same eigenvalues.
pub fn frechet_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!("feature widths differ: {} vs {}", a.ncols(), b.ncols())));
    }
    if a.nrows() < 2 || b.nrows() < 2 {
        return Err(Error::Contract("Fréchet distance needs at least 2 samples per set".into()));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Contract("non-finite features".into()));
    }
    let d = a.ncols();
    if a.nrows() <= d || b.nrows() <= d {
        tracing::warn!(na = a.nrows(), nb = b.nrows(), d, "fewer samples than feature dimensions");
    }
    let (mu_a, cov_a) = gaussian_stats(a);
    let (mu_b, cov_b) = gaussian_stats(b);
    let root_a = sqrtm_psd(&cov_a);
    let inner = &root_a * &cov_b * &root_a;
    let tr_sqrt: f64 = clamped_eigen(&inner).eigenvalues.iter().map(|v| v.sqrt()).sum();
    let value = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    Ok(value.max(0.0))
}
