//! Central-difference Jacobians, used as the reference for every analytic
//! derivative in the crate.

use nalgebra::DMatrix;

use crate::error::{CsrnError, Result};

/// Central-difference Jacobian of `f` at `x`.
///
/// Column `i` is `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn fd_jacobian<F>(mut f: F, x: &[f64], h: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(CsrnError::rejected(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut probe = x.to_vec();
    let mut jac: Option<DMatrix<f64>> = None;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe)?;
        probe[i] = x[i] - h;
        let minus = f(&probe)?;
        probe[i] = x[i];
        if plus.len() != minus.len() {
            return Err(CsrnError::OracleFailure(
                "function output width changed".into(),
            ));
        }
        let m = jac.get_or_insert_with(|| DMatrix::zeros(plus.len(), x.len()));
        if m.nrows() != plus.len() {
            return Err(CsrnError::OracleFailure(
                "function output width changed".into(),
            ));
        }
        for (k, (p, q)) in plus.iter().zip(&minus).enumerate() {
            if !p.is_finite() || !q.is_finite() {
                return Err(CsrnError::OracleFailure(format!(
                    "non-finite value for output {k} while perturbing coordinate {i}"
                )));
            }
            m[(k, i)] = (p - q) / (2.0 * h);
        }
    }
    match jac {
        Some(m) => Ok(m),
        None => {
            let width = f(x)?.len();
            Ok(DMatrix::zeros(width, 0))
        }
    }
}
