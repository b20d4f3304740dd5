//! Corner-to-corner connectedness benchmark.
//!
//! A square binary image is "connected" when its top-left and bottom-right
//! pixels are both on and joined by a path of on pixels moving only up,
//! down, left or right. The network sees one pixel per cell; a frozen
//! random GMLP reduces the grid outputs to a single score whose target is
//! `+0.5` for connected and `-0.5` for disconnected patterns.

mod mlp;

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csrn::{grid_forward, grid_jacobian, ExternalInputs, GridSpec, Jacobian, OutputDeltas};
use crate::error::{CsrnError, Result};
use crate::gmlp::{cell_backward, cell_forward, Activation, CellSpec, ForwardTrace, WeightVector};

pub use mlp::{mlp_baseline, mlp_sweep, Mlp, MlpConfig, MlpOutcome};

pub const CONNECTED_TARGET: f64 = 0.5;
pub const DISCONNECTED_TARGET: f64 = -0.5;
/// Draw budget for [`generate_patterns`].
pub const MAX_PATTERN_DRAWS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PixelPattern {
    pub size: usize,
    /// Row-major `size x size`, `true` for an on pixel.
    pub pixels: Vec<bool>,
    pub label: bool,
}

impl PixelPattern {
    /// Labels `pixels` with the connectivity oracle.
    pub fn new(size: usize, pixels: Vec<bool>) -> Result<Self> {
        if size == 0 || pixels.len() != size * size {
            return Err(CsrnError::rejected(format!(
                "pattern has {} pixels, expected {size}x{size}",
                pixels.len()
            )));
        }
        let label = corners_connected(size, &pixels);
        Ok(PixelPattern {
            size,
            pixels,
            label,
        })
    }

    pub fn target(&self) -> f64 {
        if self.label {
            CONNECTED_TARGET
        } else {
            DISCONNECTED_TARGET
        }
    }
}

/// Breadth-first search over on pixels from the top-left corner.
pub fn is_connected_oracle(pattern: &PixelPattern) -> bool {
    corners_connected(pattern.size, &pattern.pixels)
}

fn corners_connected(n: usize, px: &[bool]) -> bool {
    let last = n * n - 1;
    if !px[0] || !px[last] {
        return false;
    }
    let mut seen = vec![false; n * n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        if i == last {
            return true;
        }
        let (r, c) = (i / n, i % n);
        let mut visit = |j: usize| {
            if px[j] && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        };
        if r > 0 {
            visit(i - n);
        }
        if r + 1 < n {
            visit(i + n);
        }
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < n {
            visit(i + 1);
        }
    }
    false
}

/// Rejection-samples patterns until both quotas are filled, skipping anything
/// in `exclude`. Both corner pixels are always on and every other pixel is on
/// with probability 0.5, so the label cannot be read off the corners alone.
/// Patterns come back in draw order.
pub fn generate_patterns_from(
    rng: &mut impl Rng,
    size: usize,
    n_connected: usize,
    n_disconnected: usize,
    exclude: &[PixelPattern],
) -> Result<Vec<PixelPattern>> {
    if size < 2 {
        return Err(CsrnError::rejected(format!(
            "pattern size must be at least 2, got {size}"
        )));
    }
    let mut out = Vec::with_capacity(n_connected + n_disconnected);
    let (mut conn, mut disc) = (0, 0);
    for _ in 0..MAX_PATTERN_DRAWS {
        if conn == n_connected && disc == n_disconnected {
            return Ok(out);
        }
        let last = size * size - 1;
        let pixels: Vec<bool> = (0..size * size)
            .map(|i| i == 0 || i == last || rng.gen_bool(0.5))
            .collect();
        let label = corners_connected(size, &pixels);
        let wanted = if label {
            conn < n_connected
        } else {
            disc < n_disconnected
        };
        if !wanted {
            continue;
        }
        let pattern = PixelPattern {
            size,
            pixels,
            label,
        };
        if exclude.contains(&pattern) {
            continue;
        }
        if label {
            conn += 1;
        } else {
            disc += 1;
        }
        out.push(pattern);
    }
    if conn == n_connected && disc == n_disconnected {
        return Ok(out);
    }
    Err(CsrnError::GenerationFailure {
        what: format!(
            "{n_connected} connected and {n_disconnected} disconnected {size}x{size} patterns"
        ),
        attempts: MAX_PATTERN_DRAWS,
    })
}

pub fn generate_patterns(
    size: usize,
    n_connected: usize,
    n_disconnected: usize,
    seed: u64,
) -> Result<Vec<PixelPattern>> {
    generate_patterns_from(
        &mut ChaCha8Rng::seed_from_u64(seed),
        size,
        n_connected,
        n_disconnected,
        &[],
    )
}

/// Pixel channel plus an unused zero channel, matching the two-channel maze
/// layout.
pub fn encode_pattern(pattern: &PixelPattern) -> ExternalInputs {
    let n = pattern.size;
    let mut inputs = ExternalInputs::zeros(n, n, 2);
    for (i, &on) in pattern.pixels.iter().enumerate() {
        inputs.set(i / n, i % n, 0, if on { 1.0 } else { 0.0 });
    }
    inputs
}

/// Text form: a `pattern <size> <label>` header with label 0 or 1, then
/// `size` rows of `0`/`1`.
pub fn write_pattern(pattern: &PixelPattern) -> String {
    let n = pattern.size;
    let mut out = String::with_capacity((n + 1) * (n + 1) + 16);
    let _ = writeln!(out, "pattern {} {}", n, u8::from(pattern.label));
    for r in 0..n {
        for c in 0..n {
            out.push(if pattern.pixels[r * n + c] { '1' } else { '0' });
        }
        out.push('\n');
    }
    out
}

/// Parses [`write_pattern`] output; the stored label must agree with the
/// oracle.
pub fn parse_pattern(text: &str) -> Result<PixelPattern> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CsrnError::Parse("empty pattern file".into()))?;
    let (n, label) = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["pattern", n, l] => {
            let n: usize = n
                .parse()
                .map_err(|_| CsrnError::Parse(format!("bad size {n:?}")))?;
            let label = match *l {
                "0" => false,
                "1" => true,
                other => return Err(CsrnError::Parse(format!("bad label {other:?}"))),
            };
            (n, label)
        }
        _ => return Err(CsrnError::Parse(format!("bad pattern header {header:?}"))),
    };
    let mut pixels = Vec::with_capacity(n * n);
    for r in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| CsrnError::Parse(format!("pattern has {r} rows, expected {n}")))?;
        if line.chars().count() != n {
            return Err(CsrnError::Parse(format!(
                "row {r} has {} pixels, expected {n}",
                line.chars().count()
            )));
        }
        for ch in line.chars() {
            pixels.push(match ch {
                '0' => false,
                '1' => true,
                other => return Err(CsrnError::Parse(format!("unexpected character {other:?}"))),
            });
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(CsrnError::Parse(
            "trailing content after pattern rows".into(),
        ));
    }
    let pattern = PixelPattern::new(n, pixels).map_err(|e| CsrnError::Parse(e.to_string()))?;
    if pattern.label != label {
        return Err(CsrnError::Parse(format!(
            "stored label {} disagrees with pixel connectivity",
            u8::from(label)
        )));
    }
    Ok(pattern)
}

/// Frozen single-output GMLP that reduces the grid outputs to one score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputTransform {
    pub spec: CellSpec,
    pub weights: WeightVector,
}

impl OutputTransform {
    /// Connection weights uniform in `[-0.5, 0.5]`; the output scale is fixed
    /// at 1 so the score can reach the `+-0.5` targets.
    pub fn random(n_inputs: usize, n_hidden: usize, seed: u64) -> Result<Self> {
        let spec = CellSpec::new(n_inputs, n_hidden, 1, true, Activation::Tanh)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values: Vec<f64> = (0..spec.n_connections())
            .map(|_| rng.gen_range(-0.5..=0.5))
            .collect();
        values.push(1.0);
        Ok(OutputTransform {
            weights: WeightVector::new(&spec, values)?,
            spec,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.spec.n_inputs
    }

    pub fn forward(&self, grid_outputs: &[f64]) -> Result<(f64, ForwardTrace)> {
        if grid_outputs.len() != self.spec.n_inputs {
            return Err(CsrnError::rejected(format!(
                "transform takes {} inputs, got {}",
                self.spec.n_inputs,
                grid_outputs.len()
            )));
        }
        let (y, trace) = cell_forward(&self.spec, &self.weights, grid_outputs)?;
        Ok((y[0], trace))
    }

    /// Derivative of the score w.r.t. each grid output.
    pub fn input_gradient(&self, trace: &ForwardTrace) -> Result<Vec<f64>> {
        Ok(cell_backward(&self.spec, &self.weights, trace, &[1.0])?.0)
    }
}

/// Score of `pattern` through the grid and the frozen transform.
pub fn csrn_classify(
    grid: &GridSpec,
    w: &WeightVector,
    transform: &OutputTransform,
    pattern: &PixelPattern,
) -> Result<f64> {
    Ok(classify_inputs(grid, w, transform, &encode_pattern(pattern))?.0)
}

/// Returns `(score, settled)`.
pub fn classify_inputs(
    grid: &GridSpec,
    w: &WeightVector,
    transform: &OutputTransform,
    inputs: &ExternalInputs,
) -> Result<(f64, bool)> {
    check_width(grid, transform)?;
    let out = grid_forward(grid, w, inputs)?;
    let (score, _) = transform.forward(&out.outputs)?;
    Ok((score, out.settled))
}

/// Score and its `1 x p` Jacobian w.r.t. the grid weights, obtained by
/// backpropagating through the transform and then through the grid.
pub fn classify_linearized(
    grid: &GridSpec,
    w: &WeightVector,
    transform: &OutputTransform,
    inputs: &ExternalInputs,
) -> Result<(f64, Jacobian, bool)> {
    check_width(grid, transform)?;
    let out = grid_forward(grid, w, inputs)?;
    let (score, trace) = transform.forward(&out.outputs)?;
    let deltas = OutputDeltas::from_rows(vec![transform.input_gradient(&trace)?])?;
    let jac = grid_jacobian(grid, w, &out.trace, &deltas)?;
    Ok((score, jac, out.settled))
}

fn check_width(grid: &GridSpec, transform: &OutputTransform) -> Result<()> {
    if transform.n_inputs() != grid.n_cells() {
        return Err(CsrnError::rejected(format!(
            "transform takes {} inputs but the grid has {} cells",
            transform.n_inputs(),
            grid.n_cells()
        )));
    }
    Ok(())
}
