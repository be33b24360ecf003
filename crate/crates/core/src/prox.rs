//! Proximal operators of the l1 norm and the nuclear norm.

use nalgebra::SVD;

use crate::error::{Error, Result};
use crate::Matrix;

/// Result of singular value thresholding.
#[derive(Debug, Clone)]
pub struct SvtResult {
    pub matrix: Matrix,
    /// Number of singular values strictly above the threshold.
    pub rank: usize,
    /// Thresholded singular values, nonincreasing.
    pub singular_values: Vec<f64>,
}

impl SvtResult {
    /// Nuclear norm of `matrix`, read off the thresholded spectrum.
    pub fn nuclear_norm(&self) -> f64 {
        self.singular_values.iter().sum()
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau >= 0.0) {
        return Err(Error::arg(format!("threshold must be >= 0, got {tau}")));
    }
    Ok(())
}

#[inline]
pub(crate) fn shrink(v: f64, tau: f64) -> f64 {
    let m = v.abs() - tau;
    if m > 0.0 {
        m.copysign(v)
    } else {
        0.0
    }
}

/// Entrywise `sign(m) * max(|m| - tau, 0)`.
pub fn soft_threshold(m: &Matrix, tau: f64) -> Result<Matrix> {
    check_tau(tau)?;
    Ok(m.map(|v| shrink(v, tau)))
}

/// `U * max(Sigma - tau, 0) * V^T`, the minimizer of `0.5 ||X - M||_F^2 + tau ||X||_*`.
pub fn singular_value_threshold(m: &Matrix, tau: f64) -> Result<SvtResult> {
    check_tau(tau)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("SVD of a matrix with non-finite entries".into()));
    }
    let (r, c) = m.shape();
    if m.iter().all(|&v| v == 0.0) {
        return Ok(SvtResult {
            matrix: Matrix::zeros(r, c),
            rank: 0,
            singular_values: vec![0.0; r.min(c)],
        });
    }
    let svd = SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut out = Matrix::zeros(r, c);
    let mut kept = Vec::with_capacity(order.len());
    let mut rank = 0;
    for &k in &order {
        let s = svd.singular_values[k] - tau;
        if s > 0.0 {
            rank += 1;
            out.ger(s, &u.column(k), &v_t.row(k).transpose(), 1.0);
            kept.push(s);
        } else {
            kept.push(0.0);
        }
    }
    Ok(SvtResult {
        matrix: out,
        rank,
        singular_values: kept,
    })
}

/// Numerical rank: singular values above `sigma_max * max(rows, cols) * 1e-10`.
pub fn numerical_rank(m: &Matrix) -> usize {
    if m.iter().all(|&v| v == 0.0) {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let cutoff = smax * m.nrows().max(m.ncols()) as f64 * 1e-10;
    sv.iter().filter(|&&s| s > cutoff).count()
}
