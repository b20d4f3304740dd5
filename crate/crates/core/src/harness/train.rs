//! The training cycle and experiment driver.
//!
//! One cycle: for every training pattern run the grid forward, compute the
//! error, backpropagate through the readout and the grid, and append the
//! pattern's Jacobian and residual to the batch. Then apply one trainer update
//! and evaluate both sets at the new weights for the stopping decision.

use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, TrainerKind};
use super::persist::{MetricsFile, WeightsFile};
use super::problem::{Problem, SetMetrics};
use crate::alr::{alr_step, AlrState};
use crate::ekf::{anneal_r, ekf_update, multi_stream_stack, EkfState};
use crate::error::{CsrnError, Result};
use crate::gmlp::WeightVector;

#[derive(Debug, Clone)]
pub enum TrainerState {
    Ekf(EkfState),
    Alr(AlrState),
}

impl TrainerState {
    pub fn new(config: &ExperimentConfig, n_weights: usize) -> Result<Self> {
        Ok(match config.trainer {
            TrainerKind::Ekf => TrainerState::Ekf(EkfState::new(n_weights, &config.ekf)),
            TrainerKind::Alr => TrainerState::Alr(AlrState::new(&config.alr)?),
        })
    }
}

/// Metrics after one training cycle; cycle 0 is the untrained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub cycle: usize,
    /// Mean per-pattern sum of squared errors.
    pub train_sse: f64,
    pub test_sse: Option<f64>,
    /// Mean navigation goodness G (maze) or classification accuracy
    /// (connectedness), in percent.
    pub train_score: f64,
    pub test_score: Option<f64>,
    /// Fraction of evaluated patterns whose grid settled.
    pub settled_fraction: f64,
    /// Measurement noise used by this cycle's filter update.
    pub r_diag: Option<f64>,
    /// Learning rate after this cycle's adaptive step.
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl MetricsRecord {
    fn from_sets(cycle: usize, train: SetMetrics, test: Option<SetMetrics>) -> Self {
        let settled = train.settled + test.map_or(0, |t| t.settled);
        let count = train.count + test.map_or(0, |t| t.count);
        MetricsRecord {
            cycle,
            train_sse: train.mean_sse,
            test_sse: test.map(|t| t.mean_sse),
            train_score: train.score,
            test_score: test.map(|t| t.score),
            settled_fraction: settled as f64 / count as f64,
            r_diag: None,
            learning_rate: None,
            wall_time_s: None,
        }
    }

    /// Test SSE when a test set exists, else train SSE.
    pub fn stopping_sse(&self) -> f64 {
        self.test_sse.unwrap_or(self.train_sse)
    }

    pub fn stopping_score(&self) -> f64 {
        self.test_score.unwrap_or(self.train_score)
    }
}

/// Uniform initial weights.
pub fn init_weights(problem: &Problem, range: f64, seed: u64) -> WeightVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..problem.grid.n_weights())
        .map(|_| {
            if range > 0.0 {
                rng.gen_range(-range..=range)
            } else {
                0.0
            }
        })
        .collect();
    WeightVector::new(&problem.grid.cell, values).expect("weights sized from the grid")
}

/// Evaluates the network without training, as cycle `cycle`.
pub fn evaluate_record(problem: &Problem, w: &WeightVector, cycle: usize) -> Result<MetricsRecord> {
    let train = problem
        .evaluate_set(w, &problem.train)?
        .ok_or_else(|| CsrnError::rejected("empty training set"))?;
    if !train.mean_sse.is_finite() {
        return Err(CsrnError::Divergence {
            context: format!("cycle {cycle}"),
            detail: "training error is not finite".into(),
        });
    }
    let test = problem.evaluate_set(w, &problem.test)?;
    Ok(MetricsRecord::from_sets(cycle, train, test))
}

/// Runs one training cycle and returns the updated weights, trainer state
/// and the cycle's metrics.
pub fn train_cycle(
    problem: &Problem,
    w: &WeightVector,
    state: &TrainerState,
    cycle: usize,
) -> Result<(WeightVector, TrainerState, MetricsRecord)> {
    if problem.train.is_empty() {
        return Err(CsrnError::rejected("empty training set"));
    }
    let mut per_pattern = Vec::with_capacity(problem.train.len());
    for sample in &problem.train {
        let (jac, residual, _) = problem.linearize(w, sample)?;
        per_pattern.push((jac, residual));
    }
    let (c, residual) = multi_stream_stack(&per_pattern)?;
    drop(per_pattern);

    let (new_w, new_state, r_diag, lr) = match state {
        TrainerState::Ekf(ekf) => {
            let r = anneal_r(ekf.a, ekf.b, residual.sse())?;
            let (delta, next) = ekf_update(ekf, &c, &residual)?;
            let mut values = w.values().to_vec();
            for (v, d) in values.iter_mut().zip(delta.iter()) {
                *v += d;
            }
            check_finite(&values)?;
            (
                WeightVector::new(&problem.grid.cell, values)?,
                TrainerState::Ekf(next),
                Some(r),
                None,
            )
        }
        TrainerState::Alr(alr) => {
            // gradient of sse / 2 is -C^T (t - y)
            let grad: DVector<f64> = -(c.transpose() * &residual.0);
            let error = residual.sse();
            let spec = problem.grid.cell;
            let out = alr_step(alr, w.values(), grad.as_slice(), error, |cand| {
                problem.train_error(&WeightVector::new(&spec, cand.to_vec())?)
            })?;
            let lr = out.state.lr;
            (
                WeightVector::new(&spec, out.weights)?,
                TrainerState::Alr(out.state),
                None,
                Some(lr),
            )
        }
    };

    let mut record = evaluate_record(problem, &new_w, cycle)?;
    record.r_diag = r_diag;
    record.learning_rate = lr;
    Ok((new_w, new_state, record))
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CsrnError::Divergence {
            context: "weight update".into(),
            detail: "non-finite weight".into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    SseThreshold,
    Plateau,
    CycleCap,
    Error,
}

/// A running experiment: problem, weights, trainer and metrics so far.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: Problem,
    pub weights: WeightVector,
    pub trainer: TrainerState,
    pub records: Vec<MetricsRecord>,
}

impl Experiment {
    /// Builds datasets and initial weights, and records the untrained
    /// network as cycle 0.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let problem = Problem::from_config(&config)?;
        Self::with_problem(config, problem)
    }

    pub fn with_problem(config: ExperimentConfig, problem: Problem) -> Result<Self> {
        let weights = init_weights(&problem, config.network.init_range, config.seeds.weights);
        let trainer = TrainerState::new(&config, weights.len())?;
        let start = Instant::now();
        let mut first = evaluate_record(&problem, &weights, 0)?;
        if config.record_wall_time {
            first.wall_time_s = Some(start.elapsed().as_secs_f64());
        }
        Ok(Experiment {
            config,
            problem,
            weights,
            trainer,
            records: vec![first],
        })
    }

    pub fn cycles_run(&self) -> usize {
        self.records.len() - 1
    }

    pub fn last(&self) -> &MetricsRecord {
        self.records.last().expect("cycle 0 is always recorded")
    }

    pub fn step(&mut self) -> Result<&MetricsRecord> {
        let start = Instant::now();
        let (w, state, mut record) = train_cycle(
            &self.problem,
            &self.weights,
            &self.trainer,
            self.cycles_run() + 1,
        )?;
        if self.config.record_wall_time {
            record.wall_time_s = Some(start.elapsed().as_secs_f64());
        }
        self.weights = w;
        self.trainer = state;
        self.records.push(record);
        Ok(self.last())
    }

    /// Stopping decision based on the records so far.
    pub fn stop_reason(&self) -> Option<StopReason> {
        let last = self.last();
        if let Some(th) = self.config.sse_threshold() {
            if last.stopping_sse() < th {
                return Some(StopReason::SseThreshold);
            }
        }
        let window = self.config.stopping.plateau_cycles;
        if window > 0 && self.records.len() > window {
            let split = self.records.len() - window;
            let best_before = self.records[..split]
                .iter()
                .map(MetricsRecord::stopping_score)
                .fold(f64::NEG_INFINITY, f64::max);
            let best_recent = self.records[split..]
                .iter()
                .map(MetricsRecord::stopping_score)
                .fold(f64::NEG_INFINITY, f64::max);
            if best_recent <= best_before {
                return Some(StopReason::Plateau);
            }
        }
        if self.cycles_run() >= self.config.cycles {
            return Some(StopReason::CycleCap);
        }
        None
    }

    /// Trains until a stop rule fires. On error the partial records stay in
    /// `self.records`.
    pub fn run(&mut self) -> Result<StopReason> {
        loop {
            if let Some(reason) = self.stop_reason() {
                return Ok(reason);
            }
            self.step()?;
        }
    }

    pub fn metrics_file(&self, stop_reason: StopReason) -> MetricsFile {
        MetricsFile {
            config: self.config.clone(),
            seeds: self.config.seeds,
            n_weights: self.weights.len(),
            stop_reason,
            records: self.records.clone(),
        }
    }

    pub fn weights_file(&self) -> WeightsFile {
        WeightsFile {
            grid: self.problem.grid,
            weights: self.weights.clone(),
        }
    }
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub stop_reason: StopReason,
    pub metrics: MetricsFile,
    pub weights: WeightsFile,
}

pub const METRICS_FILE: &str = "metrics.json";
pub const WEIGHTS_FILE: &str = "weights.json";
pub const CONFIG_FILE: &str = "config.json";

/// Generates data, trains until a stop rule fires and, when `out_dir` is
/// given, writes the config, metrics and final weights there. If training
/// fails the metrics gathered so far are still written before the error is
/// returned.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentResult> {
    let mut exp = Experiment::new(config.clone())?;
    let outcome = exp.run();
    let stop_reason = match &outcome {
        Ok(r) => *r,
        Err(_) => StopReason::Error,
    };
    let metrics = exp.metrics_file(stop_reason);
    let weights = exp.weights_file();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CONFIG_FILE), config.to_json() + "\n")?;
        metrics.save(&dir.join(METRICS_FILE))?;
        weights.save(&dir.join(WEIGHTS_FILE))?;
    }
    outcome?;
    Ok(ExperimentResult {
        stop_reason,
        metrics,
        weights,
    })
}

/// Metrics of `weights` on the training and test sets of `problem`.
pub fn evaluate_weights(
    problem: &Problem,
    weights: &WeightVector,
) -> Result<(SetMetrics, Option<SetMetrics>)> {
    let train = problem
        .evaluate_set(weights, &problem.train)?
        .ok_or_else(|| CsrnError::rejected("empty training set"))?;
    Ok((train, problem.evaluate_set(weights, &problem.test)?))
}
