//! Cellular simultaneous recurrent network.
//!
//! A `rows x cols` torus of identical GMLP cells. At every internal step each
//! cell reads its external inputs, its own `r` recurrent outputs from the
//! previous step and the previous value of the last output node of its four
//! neighbours (north, east, south, west, wrapping around the edges). It
//! produces `r` recurrent outputs plus that last output node. All cells update
//! synchronously from the previous step's state, which starts at zero. After
//! the final step each cell's last output node is multiplied by the output
//! scale weight to give the exposed cell output; the scale never enters the
//! recurrence, so the state stays inside the activation's range.
//!
//! Derivatives of the final outputs w.r.t. the shared weights are computed by
//! running deltas backwards through the unrolled steps. Every cell's input
//! deltas become the output deltas of the cells that fed it one step earlier,
//! and each cell's weight derivative is added into the shared columns.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CsrnError, Result};
use crate::gmlp::{backward_lanes, forward_raw, Activation, CellSpec, WeightVector};

/// Ordered derivatives of the exposed network outputs (rows) with respect to
/// the shared cell weights (columns).
pub type Jacobian = DMatrix<f64>;

/// Number of torus neighbours feeding each cell.
pub const NEIGHBOURS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub cell: CellSpec,
    pub n_recurrent: usize,
    pub n_external: usize,
    pub internal_steps: usize,
    pub settle_tolerance: f64,
}

impl GridSpec {
    /// Builds a grid whose cell has the input and output widths the wiring
    /// requires.
    pub fn new(
        rows: usize,
        cols: usize,
        n_external: usize,
        n_recurrent: usize,
        n_hidden: usize,
        internal_steps: usize,
    ) -> Result<Self> {
        Self::with_cell_options(
            rows,
            cols,
            n_external,
            n_recurrent,
            n_hidden,
            internal_steps,
            true,
            Activation::Tanh,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_cell_options(
        rows: usize,
        cols: usize,
        n_external: usize,
        n_recurrent: usize,
        n_hidden: usize,
        internal_steps: usize,
        has_bias: bool,
        activation: Activation,
    ) -> Result<Self> {
        let cell = CellSpec::new(
            n_external + n_recurrent + NEIGHBOURS,
            n_hidden,
            n_recurrent + 1,
            has_bias,
            activation,
        )?;
        let grid = GridSpec {
            rows,
            cols,
            cell,
            n_recurrent,
            n_external,
            internal_steps,
            settle_tolerance: 1e-4,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        if self.rows == 0 || self.cols == 0 {
            return Err(CsrnError::rejected(
                "grid needs at least one row and column",
            ));
        }
        if self.internal_steps == 0 {
            return Err(CsrnError::rejected("need at least one internal step"));
        }
        if self.cell.n_inputs != self.n_external + self.n_recurrent + NEIGHBOURS {
            return Err(CsrnError::rejected(format!(
                "cell has {} inputs, wiring needs {} external + {} recurrent + {NEIGHBOURS} neighbour",
                self.cell.n_inputs, self.n_external, self.n_recurrent
            )));
        }
        if self.cell.n_outputs != self.n_recurrent + 1 {
            return Err(CsrnError::rejected(format!(
                "cell has {} outputs, wiring needs {}",
                self.cell.n_outputs,
                self.n_recurrent + 1
            )));
        }
        if !(self.settle_tolerance >= 0.0) {
            return Err(CsrnError::rejected("settle tolerance must be non-negative"));
        }
        Ok(())
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Shared weight count; independent of the grid size.
    #[inline]
    pub fn n_weights(&self) -> usize {
        self.cell.n_weights()
    }

    /// Values each cell carries between steps: `r` recurrent outputs and the
    /// unscaled last output node.
    #[inline]
    pub fn state_width(&self) -> usize {
        self.n_recurrent + 1
    }

    /// Torus neighbours of `cell` in N, E, S, W order.
    #[inline]
    pub fn neighbours(&self, cell: usize) -> [usize; NEIGHBOURS] {
        let (r, c) = (cell / self.cols, cell % self.cols);
        let up = (r + self.rows - 1) % self.rows;
        let down = (r + 1) % self.rows;
        let left = (c + self.cols - 1) % self.cols;
        let right = (c + 1) % self.cols;
        [
            up * self.cols + c,
            r * self.cols + right,
            down * self.cols + c,
            r * self.cols + left,
        ]
    }
}

/// Problem inputs for every cell: `rows x cols x channels`, row-major with the
/// channel index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalInputs {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ExternalInputs {
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        ExternalInputs {
            rows,
            cols,
            channels,
            data: vec![0.0; rows * cols * channels],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * channels {
            return Err(CsrnError::rejected(format!(
                "input grid has {} values, expected {rows}x{cols}x{channels}",
                data.len()
            )));
        }
        Ok(ExternalInputs {
            rows,
            cols,
            channels,
            data,
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.cols + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        self.data[(row * self.cols + col) * self.channels + channel] = value;
    }

    pub fn cell(&self, cell: usize) -> &[f64] {
        &self.data[cell * self.channels..(cell + 1) * self.channels]
    }
}

/// Per-cell recurrent state: `state_width` values for every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub rows: usize,
    pub cols: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl NetworkState {
    pub fn zeros(grid: &GridSpec) -> Self {
        NetworkState {
            rows: grid.rows,
            cols: grid.cols,
            width: grid.state_width(),
            values: vec![0.0; grid.n_cells() * grid.state_width()],
        }
    }

    pub fn cell(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.width..(cell + 1) * self.width]
    }
}

/// Every cell evaluation of one forward run, indexed by step then cell.
#[derive(Debug, Clone)]
pub struct GridTrace {
    steps: usize,
    cells: usize,
    nodes: usize,
    weights: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

impl GridTrace {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    #[inline]
    fn base(&self, step: usize, cell: usize) -> usize {
        (step * self.cells + cell) * self.nodes
    }

    /// Node activations of `cell` at `step` (0-based).
    pub fn activations(&self, step: usize, cell: usize) -> &[f64] {
        let b = self.base(step, cell);
        &self.act[b..b + self.nodes]
    }

    pub fn cell_trace(&self, step: usize, cell: usize) -> crate::gmlp::ForwardTrace {
        let b = self.base(step, cell);
        crate::gmlp::ForwardTrace {
            pre: self.pre[b..b + self.nodes].to_vec(),
            act: self.act[b..b + self.nodes].to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridOutput {
    /// Exposed output of every cell after the last step, row-major.
    pub outputs: Vec<f64>,
    pub state: NetworkState,
    pub trace: GridTrace,
    pub settled: bool,
    /// Largest absolute state change during the last step.
    pub final_change: f64,
}

/// Runs the grid for `internal_steps` synchronous steps from a zero state.
pub fn grid_forward(
    grid: &GridSpec,
    w: &WeightVector,
    inputs: &ExternalInputs,
) -> Result<GridOutput> {
    grid.validate()?;
    w.check(&grid.cell)?;
    if inputs.rows != grid.rows || inputs.cols != grid.cols || inputs.channels != grid.n_external {
        return Err(CsrnError::rejected(format!(
            "input grid is {}x{}x{}, network expects {}x{}x{}",
            inputs.rows, inputs.cols, inputs.channels, grid.rows, grid.cols, grid.n_external
        )));
    }
    let spec = &grid.cell;
    let wv = w.values();
    let cells = grid.n_cells();
    let nodes = spec.n_nodes();
    let width = grid.state_width();
    let r = grid.n_recurrent;
    let ne = grid.n_external;
    let steps = grid.internal_steps;

    let mut pre = vec![0.0; steps * cells * nodes];
    let mut act = vec![0.0; steps * cells * nodes];
    let mut prev = vec![0.0; cells * width];
    let mut next = vec![0.0; cells * width];
    let mut x = vec![0.0; spec.n_inputs];
    let mut final_change = 0.0f64;
    let first_out = spec.first_output();

    for t in 0..steps {
        for cell in 0..cells {
            x[..ne].copy_from_slice(inputs.cell(cell));
            x[ne..ne + r].copy_from_slice(&prev[cell * width..cell * width + r]);
            for (d, nb) in grid.neighbours(cell).into_iter().enumerate() {
                x[ne + r + d] = prev[nb * width + r];
            }
            let b = (t * cells + cell) * nodes;
            forward_raw(spec, wv, &x, &mut pre[b..b + nodes], &mut act[b..b + nodes]);
            next[cell * width..(cell + 1) * width].copy_from_slice(&act[b + first_out..b + nodes]);
        }
        let mut change = 0.0f64;
        for (a, b) in next.iter().zip(&prev) {
            if !a.is_finite() {
                return Err(CsrnError::Divergence {
                    context: format!("internal step {}", t + 1),
                    detail: "non-finite cell state".into(),
                });
            }
            change = change.max((a - b).abs());
        }
        final_change = change;
        std::mem::swap(&mut prev, &mut next);
    }

    let scale = wv[spec.output_scale_index()];
    let outputs = (0..cells).map(|c| scale * prev[c * width + r]).collect();
    Ok(GridOutput {
        outputs,
        state: NetworkState {
            rows: grid.rows,
            cols: grid.cols,
            width,
            values: prev,
        },
        trace: GridTrace {
            steps,
            cells,
            nodes,
            weights: wv.to_vec(),
            pre,
            act,
        },
        settled: final_change < grid.settle_tolerance,
        final_change,
    })
}

/// Deltas applied to the final cell outputs: one row per exposed network
/// output, one column per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputDeltas {
    rows: usize,
    cells: usize,
    data: Vec<f64>,
}

impl OutputDeltas {
    /// One row per cell selecting that cell's output (`delta = 1`).
    pub fn identity(cells: usize) -> Self {
        let mut data = vec![0.0; cells * cells];
        for c in 0..cells {
            data[c * cells + c] = 1.0;
        }
        OutputDeltas {
            rows: cells,
            cells,
            data,
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cells = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cells) {
            return Err(CsrnError::rejected("output delta rows differ in length"));
        }
        Ok(OutputDeltas {
            rows: rows.len(),
            cells,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cells..(i + 1) * self.cells]
    }
}

/// Jacobian of the delta-weighted final outputs w.r.t. the shared weights.
///
/// Row `j` of the result is `sum_c deltas[j][c] * d+out_c / dw`, summed over
/// every cell and every internal step.
pub fn grid_jacobian(
    grid: &GridSpec,
    w: &WeightVector,
    trace: &GridTrace,
    deltas: &OutputDeltas,
) -> Result<Jacobian> {
    grid.validate()?;
    w.check(&grid.cell)?;
    let spec = &grid.cell;
    let cells = grid.n_cells();
    if trace.steps != grid.internal_steps || trace.cells != cells || trace.nodes != spec.n_nodes() {
        return Err(CsrnError::rejected("trace does not match grid"));
    }
    if trace.weights != w.values() {
        return Err(CsrnError::rejected(
            "trace was recorded with different weights",
        ));
    }
    if deltas.cells != cells {
        return Err(CsrnError::rejected(format!(
            "output deltas cover {} cells, grid has {cells}",
            deltas.cells
        )));
    }

    let lanes = deltas.rows;
    let p = spec.n_weights();
    let width = grid.state_width();
    let r = grid.n_recurrent;
    let ne = grid.n_external;
    let wv = w.values();

    // State deltas, lane-minor: [(cell * width + k) * lanes + lane].
    let mut cur = vec![0.0; cells * width * lanes];
    let mut prev = vec![0.0; cells * width * lanes];
    let mut grad = vec![0.0; p * lanes];
    let scale_idx = spec.output_scale_index();
    let scale = wv[scale_idx];
    let last = grid.internal_steps - 1;
    for lane in 0..lanes {
        for (c, &d) in deltas.row(lane).iter().enumerate() {
            // exposed output = scale * last node
            cur[(c * width + r) * lanes + lane] = d * scale;
            grad[scale_idx * lanes + lane] += d * trace.activations(last, c)[spec.n_nodes() - 1];
        }
    }

    let mut in_d = vec![0.0; spec.n_inputs * lanes];
    let mut scratch = vec![0.0; spec.n_nodes() * lanes];

    for t in (0..grid.internal_steps).rev() {
        prev.fill(0.0);
        for cell in 0..cells {
            let out_d = &cur[cell * width * lanes..(cell + 1) * width * lanes];
            if out_d.iter().all(|&v| v == 0.0) {
                continue;
            }
            backward_lanes(
                spec,
                wv,
                trace.activations(t, cell),
                out_d,
                lanes,
                &mut in_d,
                &mut grad,
                &mut scratch,
                false,
            );
            if t == 0 {
                // Initial state is a constant.
                continue;
            }
            for k in 0..r {
                let src = &in_d[(ne + k) * lanes..(ne + k + 1) * lanes];
                let dst = &mut prev[(cell * width + k) * lanes..(cell * width + k + 1) * lanes];
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += b;
                }
            }
            for (dir, nb) in grid.neighbours(cell).into_iter().enumerate() {
                let src = &in_d[(ne + r + dir) * lanes..(ne + r + dir + 1) * lanes];
                let dst = &mut prev[(nb * width + r) * lanes..(nb * width + r + 1) * lanes];
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
        std::mem::swap(&mut cur, &mut prev);
    }

    Ok(DMatrix::from_fn(lanes, p, |j, a| grad[a * lanes + j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmlp::cell_backward;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_weights(grid: &GridSpec, rng: &mut ChaCha8Rng, range: f64) -> WeightVector {
        let v = (0..grid.n_weights())
            .map(|_| rng.gen_range(-range..=range))
            .collect();
        WeightVector::new(&grid.cell, v).unwrap()
    }

    fn random_inputs(grid: &GridSpec, rng: &mut ChaCha8Rng) -> ExternalInputs {
        let n = grid.n_cells() * grid.n_external;
        ExternalInputs::from_vec(
            grid.rows,
            grid.cols,
            grid.n_external,
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn neighbours_wrap() {
        let g = GridSpec::new(3, 4, 1, 1, 0, 1).unwrap();
        assert_eq!(g.neighbours(0), [8, 1, 4, 3]);
        assert_eq!(g.neighbours(11), [7, 8, 3, 10]);
        let single = GridSpec::new(1, 1, 1, 1, 0, 1).unwrap();
        assert_eq!(single.neighbours(0), [0; 4]);
    }

    #[test]
    fn weight_count_independent_of_grid_size() {
        let small = GridSpec::new(3, 3, 2, 5, 2, 10).unwrap();
        let large = GridSpec::new(9, 9, 2, 5, 2, 10).unwrap();
        assert_eq!(small.n_weights(), large.n_weights());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(GridSpec::new(0, 3, 2, 1, 0, 1).is_err());
        assert!(GridSpec::new(3, 3, 2, 1, 0, 0).is_err());
        let g = GridSpec::new(2, 2, 2, 1, 0, 2).unwrap();
        let w = WeightVector::zeros(&g.cell);
        let bad = ExternalInputs::zeros(2, 3, 2);
        assert!(matches!(
            grid_forward(&g, &w, &bad),
            Err(CsrnError::RejectedInput(_))
        ));
    }

    #[test]
    fn zero_weights_without_bias_stay_at_zero() {
        let g = GridSpec::with_cell_options(3, 3, 2, 2, 1, 5, false, Activation::Tanh).unwrap();
        let w = WeightVector::zeros(&g.cell);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = random_inputs(&g, &mut rng);
        let out = grid_forward(&g, &w, &inputs).unwrap();
        assert!(out.outputs.iter().all(|&v| v == 0.0));
        assert!(out.state.values.iter().all(|&v| v == 0.0));
        assert!(out.settled);
    }

    #[test]
    fn one_by_one_grid_matches_scalar_recursion() {
        // r = 1, no hidden, no bias: nodes x_ext, x_self, xN, xE, xS, xW, o_rec, o_out
        let g = GridSpec::with_cell_options(1, 1, 1, 1, 0, 6, false, Activation::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w = random_weights(&g, &mut rng, 0.6);
        let v = w.values().to_vec();
        let ext = 0.37;
        let inputs = ExternalInputs::from_vec(1, 1, 1, vec![ext]).unwrap();
        let out = grid_forward(&g, &w, &inputs).unwrap();

        let (mut rec, mut o) = (0.0f64, 0.0f64);
        for _ in 0..6 {
            let src = [ext, rec, o, o, o, o];
            let h: f64 = (0..6).map(|i| v[i] * src[i]).sum::<f64>().tanh();
            let src2 = [ext, rec, o, o, o, o, h];
            let y: f64 = (0..7).map(|i| v[6 + i] * src2[i]).sum::<f64>().tanh();
            rec = h;
            o = y;
        }
        assert!((out.outputs[0] - v[13] * o).abs() < 1e-14);
        assert!((out.state.values[0] - rec).abs() < 1e-14);
    }

    #[test]
    fn translation_equivariance_is_exact() {
        let g = GridSpec::new(3, 3, 2, 2, 1, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random_weights(&g, &mut rng, 0.5);
        let inputs = random_inputs(&g, &mut rng);
        let mut shifted = ExternalInputs::zeros(3, 3, 2);
        for r in 0..3 {
            for c in 0..3 {
                for ch in 0..2 {
                    shifted.set(r, (c + 1) % 3, ch, inputs.get(r, c, ch));
                }
            }
        }
        let a = grid_forward(&g, &w, &inputs).unwrap();
        let b = grid_forward(&g, &w, &shifted).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(
                    a.outputs[r * 3 + c].to_bits(),
                    b.outputs[r * 3 + (c + 1) % 3].to_bits()
                );
            }
        }
    }

    #[test]
    fn single_step_is_feed_forward() {
        let g = GridSpec::new(2, 3, 2, 2, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random_weights(&g, &mut rng, 0.5);
        let inputs = random_inputs(&g, &mut rng);
        let out = grid_forward(&g, &w, &inputs).unwrap();
        let jac = grid_jacobian(&g, &w, &out.trace, &OutputDeltas::identity(6)).unwrap();
        for cell in 0..6 {
            let mut d = vec![0.0; g.state_width()];
            d[g.n_recurrent] = 1.0;
            let (_, grad) = cell_backward(&g.cell, &w, &out.trace.cell_trace(0, cell), &d).unwrap();
            for (a, ga) in grad.iter().enumerate() {
                assert!((jac[(cell, a)] - ga).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rows_computed_alone_match_batch_bitwise() {
        let g = GridSpec::new(2, 2, 2, 2, 1, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = random_weights(&g, &mut rng, 0.4);
        let inputs = random_inputs(&g, &mut rng);
        let out = grid_forward(&g, &w, &inputs).unwrap();
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let batch = grid_jacobian(
            &g,
            &w,
            &out.trace,
            &OutputDeltas::from_rows(rows.clone()).unwrap(),
        )
        .unwrap();
        for (j, row) in rows.into_iter().enumerate() {
            let one = grid_jacobian(
                &g,
                &w,
                &out.trace,
                &OutputDeltas::from_rows(vec![row]).unwrap(),
            )
            .unwrap();
            for a in 0..g.n_weights() {
                assert_eq!(batch[(j, a)].to_bits(), one[(0, a)].to_bits());
            }
        }
    }

    #[test]
    fn jacobian_rejects_foreign_trace() {
        let g = GridSpec::new(2, 2, 2, 1, 0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_weights(&g, &mut rng, 0.4);
        let inputs = random_inputs(&g, &mut rng);
        let out = grid_forward(&g, &w, &inputs).unwrap();
        let w2 = random_weights(&g, &mut rng, 0.4);
        assert!(grid_jacobian(&g, &w2, &out.trace, &OutputDeltas::identity(4)).is_err());
        assert!(grid_jacobian(&g, &w, &out.trace, &OutputDeltas::identity(5)).is_err());
    }

    #[test]
    fn divergence_names_the_step() {
        let g = GridSpec::with_cell_options(1, 1, 1, 1, 0, 3, false, Activation::Identity).unwrap();
        let mut v = vec![0.0; g.n_weights()];
        // the output node feeds back through the four neighbour slots
        for src in 0..6 {
            v[g.cell.connection_index(src, 7).unwrap()] = 1e300;
        }
        let w = WeightVector::new(&g.cell, v).unwrap();
        let inputs = ExternalInputs::from_vec(1, 1, 1, vec![1.0]).unwrap();
        match grid_forward(&g, &w, &inputs) {
            Err(CsrnError::Divergence { context, .. }) => assert!(context.contains("step")),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
