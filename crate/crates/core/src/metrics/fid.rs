//! Fréchet distance between two Gaussian feature fits:
//! ‖μa−μb‖² + Tr(Σa + Σb − 2(ΣaΣb)^{1/2}).
//!
//! Tr((ΣaΣb)^{1/2}) is computed from the eigenvalues of the symmetric matrix
//! Σa^{1/2} Σb Σa^{1/2}, which shares them with ΣaΣb but keeps everything in
//! real symmetric territory. Eigenvalues that are tiny and negative from
//! round-off are clamped; genuinely negative ones mean the input was not a
//! covariance and are rejected.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::error::{Result, SpicError};
use crate::metrics::features::FeatureStatistics;

const NEG_EIG_TOL: f64 = 1e-8;

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

/// Symmetric PSD square root via eigendecomposition. `scale` calibrates the
/// round-off tolerance for slightly negative eigenvalues.
fn sqrt_psd(m: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let tol = NEG_EIG_TOL * scale.max(1.0);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -tol {
            return Err(SpicError::InvalidMetricInput(format!(
                "matrix is not PSD: eigenvalue {v}"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let d = DMatrix::from_diagonal(&vals);
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

pub fn fid(a: &FeatureStatistics, b: &FeatureStatistics) -> Result<f64> {
    if a.d() != b.d() {
        return Err(SpicError::DimensionMismatch {
            expected: format!("{} feature dims", a.d()),
            got: format!("{}", b.d()),
        });
    }
    for st in [a, b] {
        if st.mu.iter().any(|v| !v.is_finite()) || st.sigma.iter().any(|v| !v.is_finite()) {
            return Err(SpicError::InvalidMetricInput(
                "non-finite feature statistics".into(),
            ));
        }
    }
    let sa = to_dmatrix(&a.sigma);
    let sb = to_dmatrix(&b.sigma);
    let scale = sa.trace().abs().max(sb.trace().abs());
    let ra = sqrt_psd(&sa, scale)?;
    let inner = &ra * &sb * &ra;
    let inner_sqrt = sqrt_psd(&inner, scale * scale)?;
    let mean_term: f64 = a
        .mu
        .iter()
        .zip(b.mu.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let value = mean_term + sa.trace() + sb.trace() - 2.0 * inner_sqrt.trace();
    Ok(value.max(0.0))
}
