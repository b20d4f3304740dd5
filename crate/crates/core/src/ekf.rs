//! Extended Kalman filter weight estimation.
//!
//! The weights are the filter state, the network outputs are the
//! measurements and the network Jacobian is the measurement matrix `C`.
//! One update with covariance `K`, measurement noise `R = r I` and process
//! noise `Q = q I`:
//!
//! ```text
//! G      = K C^T (C K C^T + R)^-1
//! dW     = G (t - y)
//! K_next = K - G C K + Q
//! ```
//!
//! `r` is annealed from the current batch squared error as
//! `r = a ln(b * sse + 1)`. Several patterns are handled at once by stacking
//! their Jacobians and residuals row-wise (multi-streaming).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CsrnError, Result};

/// Filter hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EkfConfig {
    /// Initial covariance `K0 = k0 I`. With the small annealed noise, the
    /// ratio `r / k0` sets how strongly early updates are damped.
    pub k0: f64,
    /// Process noise `Q = q_scale I`.
    pub q_scale: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        EkfConfig {
            k0: 3e-6,
            q_scale: 3e-7,
            a: 0.001,
            b: 0.001,
        }
    }
}

/// Tolerance on the most negative covariance eigenvalue.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub covariance: DMatrix<f64>,
    pub q_scale: f64,
    pub a: f64,
    pub b: f64,
    pub step: usize,
}

impl EkfState {
    pub fn new(n_weights: usize, config: &EkfConfig) -> Self {
        EkfState {
            covariance: DMatrix::identity(n_weights, n_weights) * config.k0,
            q_scale: config.q_scale,
            a: config.a,
            b: config.b,
            step: 0,
        }
    }

    pub fn n_weights(&self) -> usize {
        self.covariance.nrows()
    }
}

/// Stacked targets-minus-outputs, `t - y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual(pub DVector<f64>);

impl Residual {
    pub fn from_targets(targets: &[f64], outputs: &[f64]) -> Result<Self> {
        if targets.len() != outputs.len() {
            return Err(CsrnError::rejected(format!(
                "{} targets for {} outputs",
                targets.len(),
                outputs.len()
            )));
        }
        let r = Residual(DVector::from_iterator(
            targets.len(),
            targets.iter().zip(outputs).map(|(t, y)| t - y),
        ));
        r.check()?;
        Ok(r)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sse(&self) -> f64 {
        self.0.norm_squared()
    }

    fn check(&self) -> Result<()> {
        if self.0.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(CsrnError::Divergence {
                context: "residual".into(),
                detail: "non-finite residual".into(),
            })
        }
    }
}

/// Measurement noise level for squared error `sse`: `a ln(b sse + 1)`.
pub fn anneal_r(a: f64, b: f64, sse: f64) -> Result<f64> {
    if !(sse >= 0.0) {
        return Err(CsrnError::rejected(format!(
            "squared error must be non-negative, got {sse}"
        )));
    }
    Ok(a * (b * sse).ln_1p())
}

/// Kalman gain `K C^T (C K C^T + r I)^-1`, obtained from a Cholesky solve of
/// the innovation matrix.
pub fn kalman_gain(c: &DMatrix<f64>, k: &DMatrix<f64>, r_diag: f64) -> Result<DMatrix<f64>> {
    Ok(gain_parts(c, k, r_diag)?.0)
}

/// Returns `(G, C K)`.
fn gain_parts(
    c: &DMatrix<f64>,
    k: &DMatrix<f64>,
    r_diag: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = k.nrows();
    if k.ncols() != p {
        return Err(CsrnError::rejected("covariance must be square"));
    }
    if c.ncols() != p {
        return Err(CsrnError::rejected(format!(
            "Jacobian has {} columns, covariance is {p}x{p}",
            c.ncols()
        )));
    }
    let ck = c * k;
    let mut innovation = &ck * c.transpose();
    for i in 0..innovation.nrows() {
        innovation[(i, i)] += r_diag;
    }
    // G^T = S^-1 C K, since S and K are symmetric.
    let chol = match innovation.clone().cholesky() {
        Some(ch) => ch,
        None => {
            return Err(CsrnError::Conditioning {
                condition: condition_estimate(&innovation),
            })
        }
    };
    let gt = chol.solve(&ck);
    if gt.iter().any(|v| !v.is_finite()) {
        return Err(CsrnError::Conditioning {
            condition: condition_estimate(&innovation),
        });
    }
    Ok((gt.transpose(), ck))
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    if m.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// One filter update. Returns the weight increment and the next state.
pub fn ekf_update(
    state: &EkfState,
    c: &DMatrix<f64>,
    residual: &Residual,
) -> Result<(DVector<f64>, EkfState)> {
    residual.check()?;
    if c.nrows() != residual.len() {
        return Err(CsrnError::rejected(format!(
            "Jacobian has {} rows, residual has {}",
            c.nrows(),
            residual.len()
        )));
    }
    let r_diag = anneal_r(state.a, state.b, residual.sse())?;
    let (gain, ck) = gain_parts(c, &state.covariance, r_diag)?;
    let delta_w = &gain * &residual.0;

    let mut k = &state.covariance - &gain * &ck;
    let p = k.nrows();
    for i in 0..p {
        k[(i, i)] += state.q_scale;
    }
    symmetrize(&mut k);
    check_psd(&k)?;

    Ok((
        delta_w,
        EkfState {
            covariance: k,
            q_scale: state.q_scale,
            a: state.a,
            b: state.b,
            step: state.step + 1,
        },
    ))
}

/// `K <- (K + K^T) / 2`
pub fn symmetrize(k: &mut DMatrix<f64>) {
    let p = k.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
}

fn check_psd(k: &DMatrix<f64>) -> Result<()> {
    if k.iter().any(|v| !v.is_finite()) {
        return Err(CsrnError::FilterDivergence {
            min_eigenvalue: f64::NAN,
        });
    }
    let mut shifted = k.clone();
    for i in 0..k.nrows() {
        shifted[(i, i)] += PSD_TOLERANCE;
    }
    if shifted.cholesky().is_some() {
        return Ok(());
    }
    let min = min_eigenvalue(k);
    if min >= -PSD_TOLERANCE {
        Ok(())
    } else {
        Err(CsrnError::FilterDivergence {
            min_eigenvalue: min,
        })
    }
}

pub fn min_eigenvalue(k: &DMatrix<f64>) -> f64 {
    k.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v))
}

/// Concatenates per-pattern Jacobians and residuals row-wise, in order.
pub fn multi_stream_stack(
    per_pattern: &[(DMatrix<f64>, Residual)],
) -> Result<(DMatrix<f64>, Residual)> {
    let Some((first, _)) = per_pattern.first() else {
        return Err(CsrnError::rejected("nothing to stack"));
    };
    let (s, p) = first.shape();
    for (i, (c, res)) in per_pattern.iter().enumerate() {
        if c.shape() != (s, p) || res.len() != s {
            return Err(CsrnError::rejected(format!(
                "pattern {i} has Jacobian {:?} and residual {}, expected ({s}, {p}) and {s}",
                c.shape(),
                res.len()
            )));
        }
    }
    let m = per_pattern.len();
    let mut stacked = DMatrix::zeros(m * s, p);
    let mut residual = DVector::zeros(m * s);
    for (i, (c, res)) in per_pattern.iter().enumerate() {
        stacked.rows_mut(i * s, s).copy_from(c);
        residual.rows_mut(i * s, s).copy_from(&res.0);
    }
    Ok((stacked, Residual(residual)))
}
