//! Generalized 2D maze benchmark.
//!
//! An `m x m` maze is presented to an `(m+2) x (m+2)` network: the extra ring
//! of cells is a wall that keeps the agent inside. The target for every cell
//! is its cost-to-go, the length of the shortest 4-connected path to the goal
//! with unit step cost. Walls and obstacles get a fixed cap value.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::csrn::ExternalInputs;
use crate::error::{CsrnError, Result};

/// Rejection-sampling budget for [`generate_maze`].
pub const MAX_GENERATION_ATTEMPTS: usize = 1000;

/// N, E, S, W offsets.
pub const MOVES: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MazeInstance {
    pub m: usize,
    /// Row-major `m x m`, `true` for an obstacle.
    pub obstacles: Vec<bool>,
    pub goal: (usize, usize),
}

impl MazeInstance {
    /// Builds a maze and checks that every clear cell can reach the goal.
    pub fn new(m: usize, obstacles: Vec<bool>, goal: (usize, usize)) -> Result<Self> {
        if m == 0 || obstacles.len() != m * m {
            return Err(CsrnError::rejected(format!(
                "obstacle grid has {} cells, expected {m}x{m}",
                obstacles.len()
            )));
        }
        if goal.0 >= m || goal.1 >= m {
            return Err(CsrnError::rejected(format!(
                "goal {goal:?} outside {m}x{m} maze"
            )));
        }
        let maze = MazeInstance { m, obstacles, goal };
        if maze.is_obstacle(goal.0, goal.1) {
            return Err(CsrnError::rejected("goal cell is an obstacle"));
        }
        if !maze.all_clear_reach_goal() {
            return Err(CsrnError::rejected("some clear cell cannot reach the goal"));
        }
        Ok(maze)
    }

    /// Obstacle-free maze.
    pub fn empty(m: usize, goal: (usize, usize)) -> Result<Self> {
        Self::new(m, vec![false; m * m], goal)
    }

    #[inline]
    pub fn is_obstacle(&self, row: usize, col: usize) -> bool {
        self.obstacles[row * self.m + col]
    }

    #[inline]
    pub fn is_clear(&self, row: usize, col: usize) -> bool {
        !self.is_obstacle(row, col)
    }

    /// Side of the padded grid the network sees.
    #[inline]
    pub fn padded_side(&self) -> usize {
        self.m + 2
    }

    fn clear_neighbours(
        &self,
        row: usize,
        col: usize,
    ) -> impl Iterator<Item = (usize, usize)> + '_ {
        MOVES.iter().filter_map(move |&(dr, dc)| {
            let r = row as isize + dr;
            let c = col as isize + dc;
            if r < 0 || c < 0 || r >= self.m as isize || c >= self.m as isize {
                return None;
            }
            let (r, c) = (r as usize, c as usize);
            self.is_clear(r, c).then_some((r, c))
        })
    }

    fn all_clear_reach_goal(&self) -> bool {
        // depth-first flood fill from the goal
        let mut seen = vec![false; self.m * self.m];
        let mut stack = vec![self.goal];
        seen[self.goal.0 * self.m + self.goal.1] = true;
        while let Some((r, c)) = stack.pop() {
            for (nr, nc) in self.clear_neighbours(r, c) {
                let i = nr * self.m + nc;
                if !seen[i] {
                    seen[i] = true;
                    stack.push((nr, nc));
                }
            }
        }
        (0..self.m * self.m).all(|i| self.obstacles[i] || seen[i])
    }

    /// Default cap for wall and obstacle targets, `m^2`.
    pub fn default_v_obs(&self) -> f64 {
        (self.m * self.m) as f64
    }
}

/// Samples a solvable maze from `rng`.
pub fn generate_maze_from(rng: &mut impl Rng, m: usize, density: f64) -> Result<MazeInstance> {
    if m < 3 {
        return Err(CsrnError::rejected(format!(
            "maze side must be at least 3, got {m}"
        )));
    }
    if !(0.0..=0.4).contains(&density) {
        return Err(CsrnError::rejected(format!(
            "obstacle density {density} outside [0, 0.4]"
        )));
    }
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let obstacles: Vec<bool> = (0..m * m).map(|_| rng.gen_bool(density)).collect();
        let clear: Vec<usize> = (0..m * m).filter(|&i| !obstacles[i]).collect();
        if clear.is_empty() {
            continue;
        }
        let g = clear[rng.gen_range(0..clear.len())];
        let maze = MazeInstance {
            m,
            obstacles,
            goal: (g / m, g % m),
        };
        if maze.all_clear_reach_goal() {
            return Ok(maze);
        }
    }
    Err(CsrnError::GenerationFailure {
        what: format!("{m}x{m} maze at density {density}"),
        attempts: MAX_GENERATION_ATTEMPTS,
    })
}

/// Samples a solvable maze; identical seeds give identical mazes.
pub fn generate_maze(m: usize, density: f64, seed: u64) -> Result<MazeInstance> {
    generate_maze_from(&mut ChaCha8Rng::seed_from_u64(seed), m, density)
}

/// Padded `(m+2) x (m+2)` grid of target values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub side: usize,
    pub values: Vec<f64>,
}

impl ValueGrid {
    pub fn new(side: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != side * side {
            return Err(CsrnError::rejected(format!(
                "value grid has {} entries, expected {side}x{side}",
                values.len()
            )));
        }
        Ok(ValueGrid { side, values })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.side + col]
    }
}

/// Cost-to-go by value iteration with unit costs and no discounting.
/// Walls and obstacles get `m^2`.
pub fn dp_solve(maze: &MazeInstance) -> ValueGrid {
    dp_solve_with_cap(maze, maze.default_v_obs())
}

/// [`dp_solve`] with an explicit wall/obstacle value.
pub fn dp_solve_with_cap(maze: &MazeInstance, v_obs: f64) -> ValueGrid {
    let m = maze.m;
    let mut j = vec![f64::INFINITY; m * m];
    j[maze.goal.0 * m + maze.goal.1] = 0.0;
    // Bellman sweeps: J(i) = min over moves of 1 + J(next); transitions are
    // deterministic and only lead into clear cells.
    loop {
        let mut next = j.clone();
        for r in 0..m {
            for c in 0..m {
                if maze.is_obstacle(r, c) || (r, c) == maze.goal {
                    continue;
                }
                let best = maze
                    .clear_neighbours(r, c)
                    .map(|(nr, nc)| 1.0 + j[nr * m + nc])
                    .fold(f64::INFINITY, f64::min);
                next[r * m + c] = best;
            }
        }
        if next == j {
            break;
        }
        j = next;
    }

    let side = m + 2;
    let mut values = vec![v_obs; side * side];
    for r in 0..m {
        for c in 0..m {
            if maze.is_clear(r, c) {
                values[(r + 1) * side + c + 1] = j[r * m + c];
            }
        }
    }
    ValueGrid { side, values }
}

/// Two input channels per padded cell: obstacle-or-wall flag, goal flag.
pub fn encode_maze(maze: &MazeInstance) -> ExternalInputs {
    let side = maze.padded_side();
    let mut inputs = ExternalInputs::zeros(side, side, 2);
    for r in 0..side {
        for c in 0..side {
            let wall = r == 0 || c == 0 || r == side - 1 || c == side - 1;
            let blocked = wall || maze.is_obstacle(r - 1, c - 1);
            inputs.set(r, c, 0, if blocked { 1.0 } else { 0.0 });
        }
    }
    inputs.set(maze.goal.0 + 1, maze.goal.1 + 1, 1, 1.0);
    inputs
}

/// Inverse of [`encode_maze`].
pub fn decode_maze(inputs: &ExternalInputs) -> Result<MazeInstance> {
    if inputs.rows != inputs.cols || inputs.rows < 3 || inputs.channels != 2 {
        return Err(CsrnError::rejected("not a maze encoding"));
    }
    let m = inputs.rows - 2;
    let obstacles = (0..m * m)
        .map(|i| inputs.get(i / m + 1, i % m + 1, 0) != 0.0)
        .collect();
    let goals: Vec<(usize, usize)> = (0..m * m)
        .filter(|i| inputs.get(i / m + 1, i % m + 1, 1) != 0.0)
        .map(|i| (i / m, i % m))
        .collect();
    match goals.as_slice() {
        [goal] => MazeInstance::new(m, obstacles, *goal),
        _ => Err(CsrnError::rejected(format!(
            "encoding marks {} goal cells",
            goals.len()
        ))),
    }
}

/// Sum of squared differences over every padded cell.
pub fn sse(pred: &ValueGrid, target: &ValueGrid) -> Result<f64> {
    if pred.side != target.side {
        return Err(CsrnError::rejected("value grids differ in size"));
    }
    Ok(pred
        .values
        .iter()
        .zip(&target.values)
        .map(|(p, t)| (p - t) * (p - t))
        .sum())
}

/// Percentage of clear non-goal cells whose steepest-descent move on `pred`
/// is also optimal on `target`.
///
/// The predicted move is the neighbour with the smallest predicted value,
/// ties going to the first of N, E, S, W. It counts as correct when that
/// neighbour attains the smallest target value among the four neighbours.
pub fn goodness(pred: &ValueGrid, target: &ValueGrid, maze: &MazeInstance) -> Result<f64> {
    let side = maze.padded_side();
    if pred.side != side || target.side != side {
        return Err(CsrnError::rejected("value grids do not match the maze"));
    }
    let mut total = 0usize;
    let mut correct = 0usize;
    for r in 0..maze.m {
        for c in 0..maze.m {
            if maze.is_obstacle(r, c) || (r, c) == maze.goal {
                continue;
            }
            let (pr, pc) = (r + 1, c + 1);
            let nbrs =
                MOVES.map(|(dr, dc)| ((pr as isize + dr) as usize, (pc as isize + dc) as usize));
            let mut chosen = nbrs[0];
            for &n in &nbrs[1..] {
                if pred.get(n.0, n.1) < pred.get(chosen.0, chosen.1) {
                    chosen = n;
                }
            }
            let best = nbrs
                .iter()
                .map(|&(a, b)| target.get(a, b))
                .fold(f64::INFINITY, f64::min);
            total += 1;
            if target.get(chosen.0, chosen.1) == best {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(CsrnError::UndefinedMetric(
            "maze has no clear non-goal cells".into(),
        ));
    }
    Ok(100.0 * correct as f64 / total as f64)
}

/// Text form: a `maze <m>` header, then `m` rows of `.` (clear), `#`
/// (obstacle) and `G` (goal, exactly one).
pub fn write_maze(maze: &MazeInstance) -> String {
    let mut out = String::with_capacity((maze.m + 1) * (maze.m + 1) + 8);
    let _ = writeln!(out, "maze {}", maze.m);
    for r in 0..maze.m {
        for c in 0..maze.m {
            out.push(if (r, c) == maze.goal {
                'G'
            } else if maze.is_obstacle(r, c) {
                '#'
            } else {
                '.'
            });
        }
        out.push('\n');
    }
    out
}

pub fn parse_maze(text: &str) -> Result<MazeInstance> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CsrnError::Parse("empty maze file".into()))?;
    let m: usize = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["maze", n] => n
            .parse()
            .map_err(|_| CsrnError::Parse(format!("bad maze size {n:?}")))?,
        _ => return Err(CsrnError::Parse(format!("bad maze header {header:?}"))),
    };
    let mut obstacles = Vec::with_capacity(m * m);
    let mut goal = None;
    for r in 0..m {
        let line = lines
            .next()
            .ok_or_else(|| CsrnError::Parse(format!("maze has {r} rows, expected {m}")))?;
        if line.chars().count() != m {
            return Err(CsrnError::Parse(format!(
                "row {r} has {} cells, expected {m}",
                line.chars().count()
            )));
        }
        for (c, ch) in line.chars().enumerate() {
            match ch {
                '.' => obstacles.push(false),
                '#' => obstacles.push(true),
                'G' => {
                    if goal.replace((r, c)).is_some() {
                        return Err(CsrnError::Parse("more than one goal".into()));
                    }
                    obstacles.push(false);
                }
                other => return Err(CsrnError::Parse(format!("unexpected character {other:?}"))),
            }
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(CsrnError::Parse("trailing content after maze rows".into()));
    }
    let goal = goal.ok_or_else(|| CsrnError::Parse("maze has no goal".into()))?;
    MazeInstance::new(m, obstacles, goal).map_err(|e| CsrnError::Parse(e.to_string()))
}
