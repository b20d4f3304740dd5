//! Datasets and the network/readout pairing for each benchmark.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Benchmark, ExperimentConfig};
use crate::connect::{
    classify_inputs, classify_linearized, encode_pattern, generate_patterns_from, OutputTransform,
    PixelPattern,
};
use crate::csrn::{grid_forward, grid_jacobian, ExternalInputs, GridSpec, Jacobian, OutputDeltas};
use crate::ekf::Residual;
use crate::error::{CsrnError, Result};
use crate::gmlp::WeightVector;
use crate::maze::{
    dp_solve_with_cap, encode_maze, generate_maze_from, goodness, MazeInstance, ValueGrid,
};

#[derive(Debug, Clone)]
pub enum Instance {
    Maze {
        maze: MazeInstance,
        target: ValueGrid,
    },
    Pattern(PixelPattern),
}

/// One training or testing example: encoded inputs plus targets for every
/// exposed network output.
#[derive(Debug, Clone)]
pub struct Sample {
    pub inputs: ExternalInputs,
    pub targets: Vec<f64>,
    pub instance: Instance,
}

impl Sample {
    pub fn from_maze(maze: MazeInstance, v_obs: f64) -> Self {
        let target = dp_solve_with_cap(&maze, v_obs);
        Sample {
            inputs: encode_maze(&maze),
            targets: target.values.clone(),
            instance: Instance::Maze { maze, target },
        }
    }

    pub fn from_pattern(pattern: PixelPattern) -> Self {
        Sample {
            inputs: encode_pattern(&pattern),
            targets: vec![pattern.target()],
            instance: Instance::Pattern(pattern),
        }
    }
}

/// Forward evaluation of one sample.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub outputs: Vec<f64>,
    pub sse: f64,
    /// Navigation goodness (maze) or 100/0 for a correct/incorrect
    /// classification (connectedness).
    pub score: f64,
    pub settled: bool,
}

/// Aggregates over a set of samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetMetrics {
    pub mean_sse: f64,
    pub score: f64,
    pub settled: usize,
    pub count: usize,
}

/// The trainable grid, its fixed readout and the data.
#[derive(Debug, Clone)]
pub struct Problem {
    pub benchmark: Benchmark,
    pub grid: GridSpec,
    pub transform: Option<OutputTransform>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Problem {
    /// Generates the datasets and readout named by `config`. Test instances
    /// are drawn after, and never equal to, training instances.
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid_spec()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seeds.dataset);
        let problem = match config.benchmark {
            Benchmark::Maze => {
                let mc = &config.maze;
                let mut mazes: Vec<MazeInstance> = Vec::with_capacity(mc.n_train + mc.n_test);
                let mut attempts = 0usize;
                while mazes.len() < mc.n_train + mc.n_test {
                    attempts += 1;
                    if attempts > 100 * (mc.n_train + mc.n_test) + 1000 {
                        return Err(CsrnError::GenerationFailure {
                            what: format!("{} distinct mazes", mc.n_train + mc.n_test),
                            attempts,
                        });
                    }
                    let maze = generate_maze_from(&mut rng, mc.m, mc.density)?;
                    if !mazes.contains(&maze) {
                        mazes.push(maze);
                    }
                }
                let v_obs = mc.v_obs.unwrap_or((mc.m * mc.m) as f64);
                let test = mazes.split_off(mc.n_train);
                Problem {
                    benchmark: Benchmark::Maze,
                    grid,
                    transform: None,
                    train: mazes
                        .into_iter()
                        .map(|m| Sample::from_maze(m, v_obs))
                        .collect(),
                    test: test
                        .into_iter()
                        .map(|m| Sample::from_maze(m, v_obs))
                        .collect(),
                }
            }
            Benchmark::Connect => {
                let cc = &config.connect;
                let train = generate_patterns_from(
                    &mut rng,
                    cc.size,
                    cc.n_train_connected,
                    cc.n_train_disconnected,
                    &[],
                )?;
                let test = generate_patterns_from(
                    &mut rng,
                    cc.size,
                    cc.n_test_connected,
                    cc.n_test_disconnected,
                    &train,
                )?;
                let transform = OutputTransform::random(
                    grid.n_cells(),
                    cc.transform_hidden,
                    config.seeds.transform,
                )?;
                Problem {
                    benchmark: Benchmark::Connect,
                    grid,
                    transform: Some(transform),
                    train: train.into_iter().map(Sample::from_pattern).collect(),
                    test: test.into_iter().map(Sample::from_pattern).collect(),
                }
            }
        };
        problem.assert_disjoint()?;
        Ok(problem)
    }

    /// Fails if any test instance also appears in the training set.
    pub fn assert_disjoint(&self) -> Result<()> {
        for t in &self.test {
            if self.train.iter().any(|s| s.inputs == t.inputs) {
                return Err(CsrnError::rejected("test set overlaps training set"));
            }
        }
        Ok(())
    }

    /// Exposed outputs per sample.
    pub fn n_outputs(&self) -> usize {
        match &self.transform {
            Some(_) => 1,
            None => self.grid.n_cells(),
        }
    }

    pub fn evaluate(&self, w: &WeightVector, sample: &Sample) -> Result<Evaluation> {
        let (outputs, settled) = match &self.transform {
            Some(t) => {
                let (score, settled) = classify_inputs(&self.grid, w, t, &sample.inputs)?;
                (vec![score], settled)
            }
            None => {
                let out = grid_forward(&self.grid, w, &sample.inputs)?;
                (out.outputs, out.settled)
            }
        };
        let sse = squared_error(&outputs, &sample.targets);
        let score = score_of(&sample.instance, &outputs)?;
        Ok(Evaluation {
            outputs,
            sse,
            score,
            settled,
        })
    }

    /// Outputs, Jacobian and residual for one sample at `w`.
    pub fn linearize(
        &self,
        w: &WeightVector,
        sample: &Sample,
    ) -> Result<(Jacobian, Residual, Evaluation)> {
        let (outputs, jac, settled) = match &self.transform {
            Some(t) => {
                let (score, jac, settled) = classify_linearized(&self.grid, w, t, &sample.inputs)?;
                (vec![score], jac, settled)
            }
            None => {
                let out = grid_forward(&self.grid, w, &sample.inputs)?;
                let jac = grid_jacobian(
                    &self.grid,
                    w,
                    &out.trace,
                    &OutputDeltas::identity(self.grid.n_cells()),
                )?;
                (out.outputs, jac, out.settled)
            }
        };
        let residual = Residual::from_targets(&sample.targets, &outputs)?;
        let eval = Evaluation {
            sse: squared_error(&outputs, &sample.targets),
            score: score_of(&sample.instance, &outputs)?,
            outputs,
            settled,
        };
        Ok((jac, residual, eval))
    }

    pub fn evaluate_set(&self, w: &WeightVector, set: &[Sample]) -> Result<Option<SetMetrics>> {
        if set.is_empty() {
            return Ok(None);
        }
        let evals = set
            .iter()
            .map(|s| self.evaluate(w, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(aggregate(&evals)))
    }

    /// Total squared error over the training set.
    pub fn train_error(&self, w: &WeightVector) -> Result<f64> {
        let mut total = 0.0;
        for s in &self.train {
            total += self.evaluate(w, s)?.sse;
        }
        Ok(total)
    }
}

pub(crate) fn aggregate(evals: &[Evaluation]) -> SetMetrics {
    let n = evals.len() as f64;
    SetMetrics {
        mean_sse: evals.iter().map(|e| e.sse).sum::<f64>() / n,
        score: evals.iter().map(|e| e.score).sum::<f64>() / n,
        settled: evals.iter().filter(|e| e.settled).count(),
        count: evals.len(),
    }
}

fn squared_error(outputs: &[f64], targets: &[f64]) -> f64 {
    outputs
        .iter()
        .zip(targets)
        .map(|(y, t)| (t - y) * (t - y))
        .sum()
}

fn score_of(instance: &Instance, outputs: &[f64]) -> Result<f64> {
    match instance {
        Instance::Maze { maze, target } => {
            let pred = ValueGrid::new(target.side, outputs.to_vec())?;
            goodness(&pred, target, maze)
        }
        Instance::Pattern(p) => Ok(if (outputs[0] > 0.0) == p.label {
            100.0
        } else {
            0.0
        }),
    }
}
