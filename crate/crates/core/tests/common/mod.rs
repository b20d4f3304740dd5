//! Independent oracles and helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use csrn_core::connect::{classify_inputs, classify_linearized, OutputTransform};
use csrn_core::fd::fd_jacobian;
use csrn_core::maze::MazeInstance;
use csrn_core::{
    grid_forward, grid_jacobian, ExternalInputs, GridSpec, OutputDeltas, WeightVector,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-5;
pub const ABS_FLOOR: f64 = 1e-8;

/// Worst ratio of `|a - b|` to the allowed error over all entries; the two
/// matrices agree when the result is at most 1.
pub fn worst_violation(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, b)| (a - b).abs() / (REL_TOL * a.abs().max(b.abs()) + ABS_FLOOR))
        .fold(0.0, f64::max)
}

/// A random small grid problem for gradient checks.
pub struct GridCase {
    pub grid: GridSpec,
    pub weights: WeightVector,
    pub inputs: ExternalInputs,
}

impl GridCase {
    /// Up to 3x3 cells, at most 8 computed nodes per cell and at most 5
    /// internal steps.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = rng.gen_range(1..=3);
        let cols = rng.gen_range(1..=3);
        let r = rng.gen_range(1..=3);
        let hidden = rng.gen_range(0..=8 - (r + 1));
        let steps = rng.gen_range(1..=5);
        let bias = rng.gen_bool(0.8);
        let grid = GridSpec::with_cell_options(
            rows,
            cols,
            2,
            r,
            hidden,
            steps,
            bias,
            csrn_core::Activation::Tanh,
        )
        .unwrap();
        let values = (0..grid.n_weights())
            .map(|_| rng.gen_range(-0.5..=0.5))
            .collect();
        let weights = WeightVector::new(&grid.cell, values).unwrap();
        let data = (0..rows * cols * 2)
            .map(|_| rng.gen_range(-1.0..=1.0))
            .collect();
        let inputs = ExternalInputs::from_vec(rows, cols, 2, data).unwrap();
        GridCase {
            grid,
            weights,
            inputs,
        }
    }

    pub fn forward(&self, w: &[f64]) -> Vec<f64> {
        let w = WeightVector::new(&self.grid.cell, w.to_vec()).unwrap();
        grid_forward(&self.grid, &w, &self.inputs).unwrap().outputs
    }

    /// Worst FD violation of the all-cells output Jacobian.
    pub fn grid_violation(&self) -> f64 {
        let out = grid_forward(&self.grid, &self.weights, &self.inputs).unwrap();
        let analytic = grid_jacobian(
            &self.grid,
            &self.weights,
            &out.trace,
            &OutputDeltas::identity(self.grid.n_cells()),
        )
        .unwrap();
        let numeric = fd_jacobian(|w| Ok(self.forward(w)), self.weights.values(), FD_STEP).unwrap();
        worst_violation(&analytic, &numeric)
    }

    /// Worst FD violation of the score Jacobian through a frozen readout.
    pub fn transform_violation(&self, transform_seed: u64) -> f64 {
        let t = OutputTransform::random(self.grid.n_cells(), 4, transform_seed).unwrap();
        let (_, analytic, _) =
            classify_linearized(&self.grid, &self.weights, &t, &self.inputs).unwrap();
        let numeric = fd_jacobian(
            |w| {
                let w = WeightVector::new(&self.grid.cell, w.to_vec()).unwrap();
                Ok(vec![
                    classify_inputs(&self.grid, &w, &t, &self.inputs).unwrap().0,
                ])
            },
            self.weights.values(),
            FD_STEP,
        )
        .unwrap();
        worst_violation(&analytic, &numeric)
    }
}

/// Shortest-path lengths to the goal by breadth-first search, `None` for
/// obstacles. Written independently of the library's value iteration.
pub fn bfs_distances(maze: &MazeInstance) -> Vec<Option<usize>> {
    let m = maze.m;
    let mut dist = vec![None; m * m];
    let start = maze.goal.0 * m + maze.goal.1;
    dist[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        let (r, c) = (i / m, i % m);
        let d = dist[i].unwrap();
        let mut nbrs = Vec::new();
        if r > 0 {
            nbrs.push(i - m);
        }
        if r + 1 < m {
            nbrs.push(i + m);
        }
        if c > 0 {
            nbrs.push(i - 1);
        }
        if c + 1 < m {
            nbrs.push(i + 1);
        }
        for j in nbrs {
            if !maze.obstacles[j] && dist[j].is_none() {
                dist[j] = Some(d + 1);
                queue.push_back(j);
            }
        }
    }
    dist
}

/// Disjoint-set forest over pixel indices.
pub struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    pub fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

/// Corner-to-corner connectivity via union-find over 4-adjacent on pixels.
pub fn corners_joined(size: usize, pixels: &[bool]) -> bool {
    let mut uf = UnionFind::new(size * size);
    for r in 0..size {
        for c in 0..size {
            let i = r * size + c;
            if !pixels[i] {
                continue;
            }
            if c + 1 < size && pixels[i + 1] {
                uf.union(i, i + 1);
            }
            if r + 1 < size && pixels[i + size] {
                uf.union(i, i + size);
            }
        }
    }
    let last = size * size - 1;
    pixels[0] && pixels[last] && uf.find(0) == uf.find(last)
}

/// Navigation goodness by walking every start cell one move: the move goes
/// to the lowest-predicted neighbour (first in N, E, S, W order on ties) and
/// is correct when it lands on a neighbour with the fewest steps to the goal
/// or, when every neighbour is blocked, on the blocked value.
pub fn goodness_by_simulation(pred: &[f64], maze: &MazeInstance, v_obs: f64) -> f64 {
    let m = maze.m;
    let side = m + 2;
    let dist = bfs_distances(maze);
    let true_value = |pr: usize, pc: usize| -> f64 {
        if pr == 0 || pc == 0 || pr == side - 1 || pc == side - 1 {
            return v_obs;
        }
        dist[(pr - 1) * m + pc - 1].map_or(v_obs, |d| d as f64)
    };
    let (mut correct, mut total) = (0, 0);
    for r in 0..m {
        for c in 0..m {
            if maze.obstacles[r * m + c] || (r, c) == maze.goal {
                continue;
            }
            let (pr, pc) = (r + 1, c + 1);
            let options = [(pr - 1, pc), (pr, pc + 1), (pr + 1, pc), (pr, pc - 1)];
            let mut pick = 0;
            for k in 1..4 {
                let (a, b) = options[k];
                let (x, y) = options[pick];
                if pred[a * side + b] < pred[x * side + y] {
                    pick = k;
                }
            }
            let best = options
                .iter()
                .map(|&(a, b)| true_value(a, b))
                .fold(f64::INFINITY, f64::min);
            total += 1;
            if true_value(options[pick].0, options[pick].1) == best {
                correct += 1;
            }
        }
    }
    100.0 * correct as f64 / total as f64
}
