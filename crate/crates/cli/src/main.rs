use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use csrn_core::connect::write_pattern;
use csrn_core::harness::persist::write_text_files;
use csrn_core::harness::{
    emit_plot_data, evaluate_weights, run_experiment, Benchmark, ExperimentConfig, Instance,
    MetricsFile, Problem, Seeds, SetMetrics, TrainerKind, WeightsFile, CONFIG_FILE, WEIGHTS_FILE,
};
use csrn_core::maze::write_maze;
use csrn_core::{CsrnError, Result};

#[derive(Parser)]
#[command(
    name = "csrn",
    version,
    about = "Cellular simultaneous recurrent network experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the training and test mazes of a configuration as text grids.
    GenMazes(Common),
    /// Write the training and test pixel patterns of a configuration.
    GenPatterns(Common),
    /// Train a network and write config, metrics and weights to --out.
    Train(Common),
    /// Evaluate saved weights on the datasets of a configuration.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Weights file; defaults to <out>/weights.json.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Turn a metrics file into tab-separated error and score tables.
    PlotData {
        /// Metrics file written by `train`.
        #[arg(long)]
        metrics: PathBuf,
        /// Directory for error.tsv and score.tsv; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Derives the dataset, weight and transform seeds from one number.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for generated data or a training run.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training algorithm, ekf or alr.
    #[arg(long)]
    trainer: Option<TrainerKind>,
    /// Problem to run, maze or connect.
    #[arg(long)]
    benchmark: Option<Benchmark>,
    /// Training cycle cap.
    #[arg(long)]
    cycles: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json(&read(path)?)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seeds = Seeds::from_base(seed);
        }
        if let Some(t) = self.trainer {
            cfg.trainer = t;
        }
        if let Some(b) = self.benchmark {
            cfg.benchmark = b;
        }
        if let Some(c) = self.cycles {
            cfg.cycles = c;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CsrnError::Config("--out is required".into()))
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CsrnError::Config(format!("{}: {e}", path.display())))
}

fn gen_data(common: &Common, benchmark: Benchmark) -> Result<()> {
    let mut cfg = common.load()?;
    cfg.benchmark = benchmark;
    let out = common.out_dir()?;
    let problem = Problem::from_config(&cfg)?;
    let (prefix, render): (&str, fn(&Instance) -> String) = match benchmark {
        Benchmark::Maze => ("maze", |i| match i {
            Instance::Maze { maze, .. } => write_maze(maze),
            Instance::Pattern(_) => unreachable!("maze problem"),
        }),
        Benchmark::Connect => ("pattern", |i| match i {
            Instance::Pattern(p) => write_pattern(p),
            Instance::Maze { .. } => unreachable!("connect problem"),
        }),
    };
    for (name, set) in [("train", &problem.train), ("test", &problem.test)] {
        let texts: Vec<String> = set.iter().map(|s| render(&s.instance)).collect();
        write_text_files(&out.join(name), prefix, texts.iter().map(String::as_str))?;
    }
    std::fs::write(out.join(CONFIG_FILE), cfg.to_json() + "\n")?;
    println!(
        "wrote {} training and {} test {prefix}s to {}",
        problem.train.len(),
        problem.test.len(),
        out.display()
    );
    Ok(())
}

fn train(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let out = common.out_dir()?;
    let result = run_experiment(&cfg, Some(out))?;
    let last = result
        .metrics
        .records
        .last()
        .expect("cycle 0 is always recorded");
    println!(
        "stopped after {} cycles ({:?}): train sse {:.4}, test sse {}, train score {:.2}, test score {}",
        last.cycle,
        result.stop_reason,
        last.train_sse,
        fmt_opt(last.test_sse),
        last.train_score,
        fmt_opt(last.test_score)
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn set_json(m: &Option<SetMetrics>) -> serde_json::Value {
    match m {
        Some(m) => serde_json::json!({
            "mean_sse": m.mean_sse,
            "score": m.score,
            "settled": m.settled,
            "count": m.count,
        }),
        None => serde_json::Value::Null,
    }
}

fn eval(common: &Common, weights: Option<&Path>) -> Result<()> {
    let cfg = common.load()?;
    let path = match weights {
        Some(p) => p.to_path_buf(),
        None => common.out_dir()?.join(WEIGHTS_FILE),
    };
    let file = WeightsFile::from_json(&read(&path)?)?;
    let problem = Problem::from_config(&cfg)?;
    if file.grid != problem.grid {
        return Err(CsrnError::Config(format!(
            "weights in {} were trained for a different grid",
            path.display()
        )));
    }
    let (train, test) = evaluate_weights(&problem, &file.weights)?;
    let report = serde_json::json!({ "train": set_json(&Some(train)), "test": set_json(&test) });
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}

fn plot_data(metrics: &Path, out: Option<&Path>) -> Result<()> {
    let file = MetricsFile::from_json(&read(metrics)?)?;
    let series = emit_plot_data(&file.records);
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            for s in &series {
                std::fs::write(dir.join(format!("{}.tsv", s.name)), s.to_text())?;
            }
        }
        None => {
            for s in &series {
                println!("# {}", s.name);
                print!("{}", s.to_text());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::GenMazes(c) => gen_data(c, Benchmark::Maze),
        Command::GenPatterns(c) => gen_data(c, Benchmark::Connect),
        Command::Train(c) => train(c),
        Command::Eval { common, weights } => eval(common, weights.as_deref()),
        Command::PlotData { metrics, out } => plot_data(metrics, out.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
