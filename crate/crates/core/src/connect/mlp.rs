//! One-hidden-layer perceptron baseline for the connectedness task.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PixelPattern;
use crate::error::{CsrnError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Test accuracy is sampled every this many epochs for the best-so-far figure.
    pub eval_every: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_sizes: vec![10, 25, 50],
            learning_rate: 0.05,
            epochs: 2000,
            eval_every: 10,
        }
    }
}

/// Flattened pixels -> tanh hidden layer -> tanh output.
#[derive(Debug, Clone)]
pub struct Mlp {
    n_in: usize,
    hidden: usize,
    /// `hidden x (n_in + 1)`, bias last in each row.
    w1: Vec<f64>,
    /// `hidden + 1`, bias last.
    w2: Vec<f64>,
}

impl Mlp {
    pub fn new(n_in: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let s1 = 1.0 / ((n_in + 1) as f64).sqrt();
        let s2 = 1.0 / ((hidden + 1) as f64).sqrt();
        Mlp {
            n_in,
            hidden,
            w1: (0..hidden * (n_in + 1))
                .map(|_| rng.gen_range(-s1..=s1))
                .collect(),
            w2: (0..hidden + 1).map(|_| rng.gen_range(-s2..=s2)).collect(),
        }
    }

    fn hidden_acts(&self, x: &[f64], h: &mut [f64]) {
        let stride = self.n_in + 1;
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &self.w1[j * stride..(j + 1) * stride];
            let net: f64 = row[..self.n_in]
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>()
                + row[self.n_in];
            *hj = net.tanh();
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut h = vec![0.0; self.hidden];
        self.hidden_acts(x, &mut h);
        let net: f64 =
            h.iter().zip(&self.w2).map(|(a, b)| a * b).sum::<f64>() + self.w2[self.hidden];
        net.tanh()
    }

    /// One full-batch gradient step on the mean of `(y - t)^2 / 2`.
    pub fn train_epoch(&mut self, xs: &[Vec<f64>], ts: &[f64], lr: f64) {
        let stride = self.n_in + 1;
        let mut g1 = vec![0.0; self.w1.len()];
        let mut g2 = vec![0.0; self.w2.len()];
        let mut h = vec![0.0; self.hidden];
        for (x, &t) in xs.iter().zip(ts) {
            self.hidden_acts(x, &mut h);
            let net: f64 =
                h.iter().zip(&self.w2).map(|(a, b)| a * b).sum::<f64>() + self.w2[self.hidden];
            let y = net.tanh();
            let d_out = (y - t) * (1.0 - y * y);
            for j in 0..self.hidden {
                g2[j] += d_out * h[j];
                let d_h = d_out * self.w2[j] * (1.0 - h[j] * h[j]);
                let g = &mut g1[j * stride..(j + 1) * stride];
                for (gi, xi) in g[..self.n_in].iter_mut().zip(x) {
                    *gi += d_h * xi;
                }
                g[self.n_in] += d_h;
            }
            g2[self.hidden] += d_out;
        }
        let scale = lr / xs.len() as f64;
        for (w, g) in self.w1.iter_mut().zip(&g1) {
            *w -= scale * g;
        }
        for (w, g) in self.w2.iter_mut().zip(&g2) {
            *w -= scale * g;
        }
    }
}

fn features(p: &PixelPattern) -> Vec<f64> {
    p.pixels
        .iter()
        .map(|&on| if on { 1.0 } else { 0.0 })
        .collect()
}

fn accuracy(net: &Mlp, set: &[PixelPattern]) -> f64 {
    let correct = set
        .iter()
        .filter(|p| (net.predict(&features(p)) > 0.0) == p.label)
        .count();
    100.0 * correct as f64 / set.len() as f64
}

/// Test accuracies (percent) of one baseline run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpOutcome {
    /// After the last epoch.
    pub final_accuracy: f64,
    /// Highest value seen at the sampled epochs, the final one included.
    pub best_accuracy: f64,
}

/// Trains an MLP with `hidden` units on `train` and scores it on `test`
/// (sign of the output against the label).
pub fn mlp_baseline(
    size: usize,
    hidden: usize,
    train: &[PixelPattern],
    test: &[PixelPattern],
    seed: u64,
    config: &MlpConfig,
) -> Result<MlpOutcome> {
    if train.is_empty() || test.is_empty() {
        return Err(CsrnError::rejected(
            "MLP baseline needs non-empty train and test sets",
        ));
    }
    if hidden == 0 {
        return Err(CsrnError::rejected("MLP needs at least one hidden unit"));
    }
    if train.iter().chain(test).any(|p| p.size != size) {
        return Err(CsrnError::rejected(format!(
            "all patterns must be {size}x{size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::new(size * size, hidden, &mut rng);
    let xs: Vec<Vec<f64>> = train.iter().map(features).collect();
    let ts: Vec<f64> = train.iter().map(PixelPattern::target).collect();
    let mut best = accuracy(&net, test);
    for epoch in 1..=config.epochs {
        net.train_epoch(&xs, &ts, config.learning_rate);
        if config.eval_every > 0 && epoch % config.eval_every == 0 {
            best = best.max(accuracy(&net, test));
        }
    }
    let final_accuracy = accuracy(&net, test);
    Ok(MlpOutcome {
        final_accuracy,
        best_accuracy: best.max(final_accuracy),
    })
}

/// Runs [`mlp_baseline`] for every configured hidden size.
pub fn mlp_sweep(
    size: usize,
    train: &[PixelPattern],
    test: &[PixelPattern],
    seed: u64,
    config: &MlpConfig,
) -> Result<Vec<(usize, MlpOutcome)>> {
    config
        .hidden_sizes
        .iter()
        .map(|&h| Ok((h, mlp_baseline(size, h, train, test, seed, config)?)))
        .collect()
}
