//! Cellular simultaneous recurrent networks (CSRN) trained with an extended
//! Kalman filter.
//!
//! - [`gmlp`]: the generalized MLP cell with exact reverse-mode derivatives
//! - [`csrn`]: the weight-shared torus grid and its full Jacobian
//! - [`ekf`]: Kalman-gain weight updates with annealed measurement noise
//! - [`alr`]: adaptive-learning-rate gradient descent baseline
//! - [`maze`]: generalized maze navigation benchmark
//! - [`connect`]: corner connectedness benchmark and the MLP baseline
//! - [`harness`]: training cycle, experiment driver and persistence

pub mod alr;
pub mod connect;
pub mod csrn;
pub mod ekf;
pub mod error;
pub mod fd;
pub mod gmlp;
pub mod harness;
pub mod maze;

pub use csrn::{
    grid_forward, grid_jacobian, ExternalInputs, GridSpec, Jacobian, NetworkState, OutputDeltas,
};
pub use ekf::{
    anneal_r, ekf_update, kalman_gain, multi_stream_stack, EkfConfig, EkfState, Residual,
};
pub use error::{CsrnError, Result};
pub use gmlp::{cell_backward, cell_forward, Activation, CellSpec, ForwardTrace, WeightVector};
pub use harness::{run_experiment, ExperimentConfig};
