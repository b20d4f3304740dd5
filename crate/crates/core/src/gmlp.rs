//! Generalized MLP cell.
//!
//! Nodes are numbered `0..n_nodes`: the `n_inputs` input nodes first, then an
//! optional constant-1 bias node, then `n_hidden` hidden nodes and finally the
//! `n_outputs` output nodes. Every non-input node receives a weighted
//! connection from every node with a smaller index, so output nodes also feed
//! later output nodes.
//!
//! # Weight layout
//!
//! Weights are stored destination-major: for each non-input node `j` in
//! increasing order, the weights of its connections from sources `0..j` in
//! increasing source order. The last entry of the vector is the output
//! scaling weight that multiplies the final output node. For a destination
//! `j` the first incoming weight sits at
//! `(j*(j-1) - f*(f-1)) / 2` where `f` is the index of the first non-input
//! node.
//!
//! Derivatives are computed with the rule of ordered derivatives, visiting
//! nodes in reverse order of evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{CsrnError, Result};

/// Nonlinearity applied at every non-input node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Logistic,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Logistic => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation value `y = f(x)`.
    #[inline]
    pub fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Logistic => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// Topology of a generalized MLP cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub n_inputs: usize,
    pub n_hidden: usize,
    pub n_outputs: usize,
    pub has_bias: bool,
    #[serde(default)]
    pub activation: Activation,
}

impl CellSpec {
    pub fn new(
        n_inputs: usize,
        n_hidden: usize,
        n_outputs: usize,
        has_bias: bool,
        activation: Activation,
    ) -> Result<Self> {
        let spec = CellSpec {
            n_inputs,
            n_hidden,
            n_outputs,
            has_bias,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_inputs == 0 {
            return Err(CsrnError::rejected("cell needs at least one input"));
        }
        if self.n_outputs == 0 {
            return Err(CsrnError::rejected("cell needs at least one output"));
        }
        Ok(())
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.first_computed() + self.n_hidden + self.n_outputs
    }

    /// Index of the first node that receives connections.
    #[inline]
    pub fn first_computed(&self) -> usize {
        self.n_inputs + usize::from(self.has_bias)
    }

    #[inline]
    pub fn first_output(&self) -> usize {
        self.first_computed() + self.n_hidden
    }

    /// Offset in the weight vector of the first connection into node `dest`.
    #[inline]
    pub fn weight_offset(&self, dest: usize) -> usize {
        let f = self.first_computed();
        debug_assert!(dest >= f);
        (dest * (dest - 1) - f * f.saturating_sub(1)) / 2
    }

    /// Number of forward connections, excluding the output scale.
    #[inline]
    pub fn n_connections(&self) -> usize {
        self.weight_offset(self.n_nodes())
    }

    /// Length of the flat weight vector, output scale included.
    #[inline]
    pub fn n_weights(&self) -> usize {
        self.n_connections() + 1
    }

    #[inline]
    pub fn output_scale_index(&self) -> usize {
        self.n_connections()
    }

    /// Flat index of the connection `source -> dest`.
    pub fn connection_index(&self, source: usize, dest: usize) -> Option<usize> {
        (dest >= self.first_computed() && dest < self.n_nodes() && source < dest)
            .then(|| self.weight_offset(dest) + source)
    }
}

/// Flat trainable parameter vector of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(spec: &CellSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.n_weights() {
            return Err(CsrnError::rejected(format!(
                "weight vector has {} entries, cell needs {}",
                values.len(),
                spec.n_weights()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CsrnError::rejected("weights must be finite"));
        }
        Ok(WeightVector(values))
    }

    pub fn zeros(spec: &CellSpec) -> Self {
        WeightVector(vec![0.0; spec.n_weights()])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn check(&self, spec: &CellSpec) -> Result<()> {
        if self.0.len() != spec.n_weights() {
            return Err(CsrnError::rejected(format!(
                "weight vector has {} entries, cell needs {}",
                self.0.len(),
                spec.n_weights()
            )));
        }
        Ok(())
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// Node activations recorded by a forward pass.
///
/// Input and bias nodes store their value; computed nodes store `f(net)`.
/// Pre-activations are kept alongside for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
}

impl ForwardTrace {
    pub fn new(spec: &CellSpec) -> Self {
        let n = spec.n_nodes();
        ForwardTrace {
            pre: vec![0.0; n],
            act: vec![0.0; n],
        }
    }

    /// Cell outputs implied by the recorded activations.
    pub fn outputs(&self, spec: &CellSpec, w: &WeightVector) -> Vec<f64> {
        let mut y = vec![0.0; spec.n_outputs];
        read_outputs(spec, w.values(), &self.act, &mut y);
        y
    }
}

/// Evaluates the cell on `x`.
pub fn cell_forward(
    spec: &CellSpec,
    w: &WeightVector,
    x: &[f64],
) -> Result<(Vec<f64>, ForwardTrace)> {
    w.check(spec)?;
    if x.len() != spec.n_inputs {
        return Err(CsrnError::rejected(format!(
            "cell expects {} inputs, got {}",
            spec.n_inputs,
            x.len()
        )));
    }
    let mut trace = ForwardTrace::new(spec);
    let mut y = vec![0.0; spec.n_outputs];
    forward_raw(spec, w.values(), x, &mut trace.pre, &mut trace.act);
    read_outputs(spec, w.values(), &trace.act, &mut y);
    Ok((y, trace))
}

/// Backpropagates `output_deltas` through one recorded evaluation.
///
/// Returns `(input_deltas, weight_grad)` where
/// `input_deltas[p] = sum_k d_k * d+y_k/dx_p` and
/// `weight_grad[a] = sum_k d_k * d+y_k/dw_a`.
pub fn cell_backward(
    spec: &CellSpec,
    w: &WeightVector,
    trace: &ForwardTrace,
    output_deltas: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    w.check(spec)?;
    let n = spec.n_nodes();
    if trace.act.len() != n || trace.pre.len() != n {
        return Err(CsrnError::rejected("trace does not match cell spec"));
    }
    if output_deltas.len() != spec.n_outputs {
        return Err(CsrnError::rejected(format!(
            "expected {} output deltas, got {}",
            spec.n_outputs,
            output_deltas.len()
        )));
    }
    let mut input_deltas = vec![0.0; spec.n_inputs];
    let mut grad = vec![0.0; spec.n_weights()];
    let mut scratch = vec![0.0; n];
    backward_lanes(
        spec,
        w.values(),
        &trace.act,
        output_deltas,
        1,
        &mut input_deltas,
        &mut grad,
        &mut scratch,
        true,
    );
    Ok((input_deltas, grad))
}

/// Forward pass writing node pre-activations and activations in place.
pub(crate) fn forward_raw(spec: &CellSpec, w: &[f64], x: &[f64], pre: &mut [f64], act: &mut [f64]) {
    let n_in = spec.n_inputs;
    pre[..n_in].copy_from_slice(x);
    act[..n_in].copy_from_slice(x);
    if spec.has_bias {
        pre[n_in] = 1.0;
        act[n_in] = 1.0;
    }
    let f = spec.activation;
    for j in spec.first_computed()..spec.n_nodes() {
        let off = spec.weight_offset(j);
        let row = &w[off..off + j];
        let net: f64 = row.iter().zip(&act[..j]).map(|(wi, ai)| wi * ai).sum();
        pre[j] = net;
        act[j] = f.apply(net);
    }
}

pub(crate) fn read_outputs(spec: &CellSpec, w: &[f64], act: &[f64], y: &mut [f64]) {
    let first = spec.first_output();
    y.copy_from_slice(&act[first..first + spec.n_outputs]);
    let last = spec.n_outputs - 1;
    y[last] *= w[spec.output_scale_index()];
}

/// Reverse pass over `lanes` independent delta vectors at once.
///
/// Buffers are lane-minor: `out_deltas[k * lanes + l]`,
/// `input_deltas[p * lanes + l]`, `grad[a * lanes + l]`, and `scratch` holds
/// `n_nodes * lanes` values. `input_deltas` is overwritten while `grad` is
/// accumulated into. With `scaled` false the last output delta refers to the
/// raw activation of the last node and the output scale is left alone. Each lane goes through exactly the same sequence of
/// floating-point operations it would see on its own, so results do not
/// depend on how many lanes are batched together.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_lanes(
    spec: &CellSpec,
    w: &[f64],
    act: &[f64],
    out_deltas: &[f64],
    lanes: usize,
    input_deltas: &mut [f64],
    grad: &mut [f64],
    scratch: &mut [f64],
    scaled: bool,
) {
    let n = spec.n_nodes();
    let first_out = spec.first_output();
    let last_out = n - 1;
    let scale_idx = spec.output_scale_index();
    let fprime = spec.activation;

    // d_act: derivative of the lane target w.r.t. each node activation.
    let d_act = &mut scratch[..n * lanes];
    d_act[..first_out * lanes].fill(0.0);
    d_act[first_out * lanes..].copy_from_slice(&out_deltas[..spec.n_outputs * lanes]);

    // y_last = scale * act[last]
    if scaled {
        let scale = w[scale_idx];
        let a_last = act[last_out];
        let g = &mut grad[scale_idx * lanes..(scale_idx + 1) * lanes];
        let d = &mut d_act[last_out * lanes..(last_out + 1) * lanes];
        for l in 0..lanes {
            g[l] += d[l] * a_last;
            d[l] *= scale;
        }
    }

    for j in (spec.first_computed()..n).rev() {
        let deriv = fprime.derivative(act[j]);
        let (below, at) = d_act.split_at_mut(j * lanes);
        let d_pre = &mut at[..lanes];
        for v in d_pre.iter_mut() {
            *v *= deriv;
        }
        let off = spec.weight_offset(j);
        for i in 0..j {
            let wi = w[off + i];
            let ai = act[i];
            let g = &mut grad[(off + i) * lanes..(off + i + 1) * lanes];
            let d_src = &mut below[i * lanes..(i + 1) * lanes];
            for l in 0..lanes {
                g[l] += d_pre[l] * ai;
                d_src[l] += wi * d_pre[l];
            }
        }
    }

    input_deltas[..spec.n_inputs * lanes].copy_from_slice(&d_act[..spec.n_inputs * lanes]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd::fd_jacobian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_weights(spec: &CellSpec, rng: &mut ChaCha8Rng, range: f64) -> WeightVector {
        let v = (0..spec.n_weights())
            .map(|_| rng.gen_range(-range..=range))
            .collect();
        WeightVector::new(spec, v).unwrap()
    }

    #[test]
    fn weight_count_matches_full_forward_connectivity() {
        let spec = CellSpec::new(3, 2, 2, true, Activation::Tanh).unwrap();
        // nodes 4,5,6,7 receive 4+5+6+7 connections, plus the output scale
        assert_eq!(spec.n_weights(), 4 + 5 + 6 + 7 + 1);
        assert_eq!(spec.connection_index(0, 4), Some(0));
        assert_eq!(spec.connection_index(3, 4), Some(3));
        assert_eq!(spec.connection_index(0, 5), Some(4));
        assert_eq!(spec.connection_index(6, 7), Some(4 + 5 + 6 + 6));
        assert_eq!(spec.connection_index(7, 7), None);
        assert_eq!(spec.connection_index(0, 3), None);
    }

    #[test]
    fn no_bias_layout() {
        let spec = CellSpec::new(2, 0, 1, false, Activation::Tanh).unwrap();
        assert_eq!(spec.n_weights(), 3);
        assert_eq!(spec.weight_offset(2), 0);
    }

    #[test]
    fn rejects_empty_cells() {
        assert!(CellSpec::new(0, 1, 1, true, Activation::Tanh).is_err());
        assert!(CellSpec::new(1, 1, 0, true, Activation::Tanh).is_err());
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let spec = CellSpec::new(3, 1, 1, true, Activation::Tanh).unwrap();
        let w = WeightVector::zeros(&spec);
        assert!(matches!(
            cell_forward(&spec, &w, &[1.0, 2.0]),
            Err(CsrnError::RejectedInput(_))
        ));
    }

    #[test]
    fn backward_rejects_mismatched_trace() {
        let spec = CellSpec::new(3, 1, 1, true, Activation::Tanh).unwrap();
        let other = CellSpec::new(3, 2, 1, true, Activation::Tanh).unwrap();
        let w = WeightVector::zeros(&spec);
        let trace = ForwardTrace::new(&other);
        assert!(cell_backward(&spec, &w, &trace, &[1.0]).is_err());
        let trace = ForwardTrace::new(&spec);
        assert!(cell_backward(&spec, &w, &trace, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn single_node_by_hand() {
        // y = s * tanh(w0 x + w1 * 1)
        let spec = CellSpec::new(1, 0, 1, true, Activation::Tanh).unwrap();
        let w = WeightVector::new(&spec, vec![0.4, -0.2, 1.5]).unwrap();
        let (y, trace) = cell_forward(&spec, &w, &[0.7]).unwrap();
        let h = (0.4f64 * 0.7 - 0.2).tanh();
        assert_eq!(y[0], 1.5 * h);
        let (dx, dw) = cell_backward(&spec, &w, &trace, &[1.0]).unwrap();
        let phi = 1.0 - h * h;
        assert!((dx[0] - 1.5 * phi * 0.4).abs() < 1e-15);
        assert!((dw[0] - 1.5 * phi * 0.7).abs() < 1e-15);
        assert!((dw[1] - 1.5 * phi).abs() < 1e-15);
        assert!((dw[2] - h).abs() < 1e-15);
    }

    #[test]
    fn replaying_trace_reproduces_outputs() {
        let spec = CellSpec::new(4, 3, 2, true, Activation::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_weights(&spec, &mut rng, 0.5);
        let x = [0.1, -0.4, 0.9, 0.3];
        let (y, trace) = cell_forward(&spec, &w, &x).unwrap();
        assert_eq!(trace.outputs(&spec, &w), y);
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let spec = CellSpec::new(4, 3, 2, true, Activation::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random_weights(&spec, &mut rng, 0.5);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, trace) = cell_forward(&spec, &w, &x).unwrap();
        let fd = fd_jacobian(
            |wv: &[f64]| {
                let wv = WeightVector::new(&spec, wv.to_vec()).unwrap();
                Ok(cell_forward(&spec, &wv, &x).unwrap().0)
            },
            w.values(),
            1e-6,
        )
        .unwrap();
        for k in 0..spec.n_outputs {
            let mut d = vec![0.0; spec.n_outputs];
            d[k] = 1.0;
            let (_, g) = cell_backward(&spec, &w, &trace, &d).unwrap();
            for (a, ga) in g.iter().enumerate() {
                let want = fd[(k, a)];
                let tol = 1e-5 * want.abs().max(ga.abs()) + 1e-8;
                assert!(
                    (ga - want).abs() <= tol,
                    "out {k} weight {a}: {ga} vs {want}"
                );
            }
        }
    }

    #[test]
    fn zero_deltas_give_exact_zeros() {
        let spec = CellSpec::new(3, 2, 3, true, Activation::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_weights(&spec, &mut rng, 0.5);
        let (_, trace) = cell_forward(&spec, &w, &[0.3, 0.2, -0.1]).unwrap();
        let (dx, dw) = cell_backward(&spec, &w, &trace, &[0.0; 3]).unwrap();
        assert!(dx.iter().all(|&v| v == 0.0));
        assert!(dw.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lanes_match_single_lane_bitwise() {
        let spec = CellSpec::new(5, 2, 3, true, Activation::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random_weights(&spec, &mut rng, 0.5);
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, trace) = cell_forward(&spec, &w, &x).unwrap();
        let lanes = 4;
        let deltas: Vec<Vec<f64>> = (0..lanes)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut packed = vec![0.0; 3 * lanes];
        for (l, d) in deltas.iter().enumerate() {
            for k in 0..3 {
                packed[k * lanes + l] = d[k];
            }
        }
        let mut dx = vec![0.0; 5 * lanes];
        let mut g = vec![0.0; spec.n_weights() * lanes];
        let mut scratch = vec![0.0; spec.n_nodes() * lanes];
        backward_lanes(
            &spec,
            w.values(),
            &trace.act,
            &packed,
            lanes,
            &mut dx,
            &mut g,
            &mut scratch,
            true,
        );
        for (l, d) in deltas.iter().enumerate() {
            let (dx1, g1) = cell_backward(&spec, &w, &trace, d).unwrap();
            for p in 0..5 {
                assert_eq!(dx[p * lanes + l].to_bits(), dx1[p].to_bits());
            }
            for a in 0..spec.n_weights() {
                assert_eq!(g[a * lanes + l].to_bits(), g1[a].to_bits());
            }
        }
    }
}
