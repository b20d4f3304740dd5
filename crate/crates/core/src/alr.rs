//! Gradient descent with an adaptive learning rate, used as the baseline
//! trainer.
//!
//! After each step the rate grows by `up_factor` if the error did not
//! increase. Otherwise the rate shrinks by `down_factor` and the step is
//! retried once from the pre-step weights. A retry that still increases the
//! error is rejected and the weights stay put.

use serde::{Deserialize, Serialize};

use crate::error::{CsrnError, Result};

pub const MIN_LR: f64 = 1e-8;
pub const MAX_LR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlrConfig {
    pub lr0: f64,
    pub up_factor: f64,
    pub down_factor: f64,
}

impl Default for AlrConfig {
    fn default() -> Self {
        AlrConfig {
            lr0: 0.01,
            up_factor: 1.05,
            down_factor: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlrState {
    pub lr: f64,
    pub up_factor: f64,
    pub down_factor: f64,
    /// Error at the last accepted weights.
    pub prev_error: f64,
}

impl AlrState {
    pub fn new(config: &AlrConfig) -> Result<Self> {
        if !(config.lr0 > 0.0)
            || !(config.up_factor > 1.0)
            || !(config.down_factor > 0.0 && config.down_factor < 1.0)
        {
            return Err(CsrnError::Config(format!(
                "invalid adaptive learning rate settings {config:?}"
            )));
        }
        Ok(AlrState {
            lr: config.lr0.clamp(MIN_LR, MAX_LR),
            up_factor: config.up_factor,
            down_factor: config.down_factor,
            prev_error: f64::INFINITY,
        })
    }
}

/// Outcome of one [`alr_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct AlrOutcome {
    pub weights: Vec<f64>,
    pub state: AlrState,
    pub error: f64,
    pub retried: bool,
    pub accepted: bool,
}

/// One adaptive step from `w`, whose error is `error`, along `-grad`.
///
/// `eval` returns the training error for candidate weights.
pub fn alr_step<F>(
    state: &AlrState,
    w: &[f64],
    grad: &[f64],
    error: f64,
    mut eval: F,
) -> Result<AlrOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if grad.len() != w.len() {
        return Err(CsrnError::rejected(format!(
            "gradient has {} entries, weights {}",
            grad.len(),
            w.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(CsrnError::Divergence {
            context: "adaptive learning rate step".into(),
            detail: "non-finite gradient".into(),
        });
    }
    let step = |lr: f64| -> Vec<f64> { w.iter().zip(grad).map(|(wi, gi)| wi - lr * gi).collect() };

    let mut next = *state;
    let candidate = step(state.lr);
    let cand_error = eval(&candidate)?;
    if cand_error <= error {
        next.lr = (state.lr * state.up_factor).clamp(MIN_LR, MAX_LR);
        next.prev_error = cand_error;
        return Ok(AlrOutcome {
            weights: candidate,
            state: next,
            error: cand_error,
            retried: false,
            accepted: true,
        });
    }

    next.lr = (state.lr * state.down_factor).clamp(MIN_LR, MAX_LR);
    let retry = step(next.lr);
    let retry_error = eval(&retry)?;
    if retry_error <= error {
        next.prev_error = retry_error;
        Ok(AlrOutcome {
            weights: retry,
            state: next,
            error: retry_error,
            retried: true,
            accepted: true,
        })
    } else {
        next.prev_error = error;
        Ok(AlrOutcome {
            weights: w.to_vec(),
            state: next,
            error,
            retried: true,
            accepted: false,
        })
    }
}
