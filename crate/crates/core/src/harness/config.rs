use serde::{Deserialize, Serialize};

use crate::alr::AlrConfig;
use crate::connect::MlpConfig;
use crate::csrn::GridSpec;
use crate::ekf::EkfConfig;
use crate::error::{CsrnError, Result};
use crate::gmlp::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Maze,
    Connect,
}

impl std::str::FromStr for Benchmark {
    type Err = CsrnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maze" => Ok(Benchmark::Maze),
            "connect" | "connectedness" => Ok(Benchmark::Connect),
            other => Err(CsrnError::Config(format!("unknown benchmark {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainerKind {
    Ekf,
    Alr,
}

impl std::str::FromStr for TrainerKind {
    type Err = CsrnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ekf" => Ok(TrainerKind::Ekf),
            "alr" => Ok(TrainerKind::Alr),
            other => Err(CsrnError::Config(format!("unknown trainer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MazeConfig {
    /// Maze side; the network is `(m+2) x (m+2)`.
    pub m: usize,
    pub density: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Target for walls and obstacles; `m^2` when unset.
    pub v_obs: Option<f64>,
}

impl Default for MazeConfig {
    fn default() -> Self {
        MazeConfig {
            m: 5,
            density: 0.25,
            n_train: 30,
            n_test: 10,
            v_obs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConnectConfig {
    pub size: usize,
    pub n_train_connected: usize,
    pub n_train_disconnected: usize,
    pub n_test_connected: usize,
    pub n_test_disconnected: usize,
    pub transform_hidden: usize,
    pub mlp: MlpConfig,
}

impl Default for ConnectConfig {
    fn default() -> Self {
        ConnectConfig {
            size: 5,
            n_train_connected: 30,
            n_train_disconnected: 30,
            n_test_connected: 10,
            n_test_disconnected: 10,
            transform_hidden: 8,
            mlp: MlpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub n_recurrent: usize,
    pub n_hidden: usize,
    pub internal_steps: usize,
    pub settle_tolerance: f64,
    pub has_bias: bool,
    pub activation: Activation,
    /// Initial weights are uniform in `[-init_range, init_range]`.
    pub init_range: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            n_recurrent: 15,
            n_hidden: 0,
            internal_steps: 20,
            settle_tolerance: 1e-4,
            has_bias: true,
            activation: Activation::Tanh,
            init_range: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoppingConfig {
    /// Stop once the mean per-pattern SSE on the test set (train set when
    /// there is no test set) falls below this. Maze runs default to
    /// `0.25 (m+2)^2` when unset.
    pub sse_threshold: Option<f64>,
    /// Stop when the test score has not improved for this many cycles;
    /// 0 disables the check.
    pub plateau_cycles: usize,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        StoppingConfig {
            sse_threshold: None,
            plateau_cycles: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub dataset: u64,
    pub weights: u64,
    pub transform: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            dataset: 1,
            weights: 2,
            transform: 3,
        }
    }
}

impl Seeds {
    /// Derives all three seeds from one number.
    pub fn from_base(seed: u64) -> Self {
        Seeds {
            dataset: seed.wrapping_mul(3).wrapping_add(1),
            weights: seed.wrapping_mul(3).wrapping_add(2),
            transform: seed.wrapping_mul(3).wrapping_add(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    pub maze: MazeConfig,
    pub connect: ConnectConfig,
    pub network: NetworkConfig,
    pub ekf: EkfConfig,
    pub alr: AlrConfig,
    pub trainer: TrainerKind,
    /// Training cycle cap.
    pub cycles: usize,
    pub stopping: StoppingConfig,
    pub seeds: Seeds,
    /// Adds per-cycle wall time to the metrics, which makes them
    /// non-reproducible.
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            benchmark: Benchmark::Maze,
            maze: MazeConfig::default(),
            connect: ConnectConfig::default(),
            network: NetworkConfig::default(),
            ekf: EkfConfig::default(),
            alr: AlrConfig::default(),
            trainer: TrainerKind::Ekf,
            cycles: 150,
            stopping: StoppingConfig::default(),
            seeds: Seeds::default(),
            record_wall_time: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| CsrnError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CsrnError::Config(msg));
        let n = &self.network;
        if n.internal_steps == 0 {
            return bad("network.internal_steps must be positive".into());
        }
        // the sampler needs 2 * init_range to stay finite
        if !(n.init_range >= 0.0 && n.init_range <= f64::MAX / 4.0) {
            return bad("network.init_range must be a non-negative number below 4e307".into());
        }
        if !(n.settle_tolerance >= 0.0) {
            return bad("network.settle_tolerance must be non-negative".into());
        }
        let e = &self.ekf;
        if !(e.k0 > 0.0 && e.q_scale >= 0.0 && e.a >= 0.0 && e.b >= 0.0) {
            return bad(format!("invalid ekf parameters {e:?}"));
        }
        crate::alr::AlrState::new(&self.alr)?;
        match self.benchmark {
            Benchmark::Maze => {
                let m = &self.maze;
                if m.m < 3 {
                    return bad("maze.m must be at least 3".into());
                }
                if !(0.0..=0.4).contains(&m.density) {
                    return bad("maze.density must lie in [0, 0.4]".into());
                }
                if m.n_train == 0 {
                    return bad("maze.n_train must be positive".into());
                }
            }
            Benchmark::Connect => {
                let c = &self.connect;
                if c.size < 2 {
                    return bad("connect.size must be at least 2".into());
                }
                if c.n_train_connected + c.n_train_disconnected == 0 {
                    return bad("connect needs training patterns".into());
                }
            }
        }
        Ok(())
    }

    /// Network shape implied by the benchmark and network settings.
    pub fn grid_spec(&self) -> Result<GridSpec> {
        let side = match self.benchmark {
            Benchmark::Maze => self.maze.m + 2,
            Benchmark::Connect => self.connect.size,
        };
        let n = &self.network;
        let mut grid = GridSpec::with_cell_options(
            side,
            side,
            2,
            n.n_recurrent,
            n.n_hidden,
            n.internal_steps,
            n.has_bias,
            n.activation,
        )?;
        grid.settle_tolerance = n.settle_tolerance;
        Ok(grid)
    }

    pub fn sse_threshold(&self) -> Option<f64> {
        self.stopping.sse_threshold.or(match self.benchmark {
            Benchmark::Maze => Some(0.25 * ((self.maze.m + 2) * (self.maze.m + 2)) as f64),
            Benchmark::Connect => None,
        })
    }
}
