//! Linear-softmax policy over the discrete response actions.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::empathy::DeficitState;
use crate::error::{MapoError, Result};
use crate::sim::{Action, EnvParams};

/// Length of [`FeatureVector`].
pub const FEATURE_DIM: usize = 12;
pub const NUM_ACTIONS: usize = Action::COUNT;

/// Dense row-major matrix; used for the policy weights and their gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if n == 0 || cols == 0 {
            return Err(MapoError::Shape(
                "matrix needs at least one row and column".into(),
            ));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(MapoError::Shape(format!(
                "row {bad} has {} columns, expected {cols}",
                rows[bad].len()
            )));
        }
        Ok(Self {
            rows: n,
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(MapoError::Shape(format!(
                "cannot add {:?} to {:?}",
                other.shape(),
                self.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(w, x)| w * x).sum())
            .collect()
    }
}

/// What the policy is allowed to see of the dialogue so far.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistorySummary {
    pub state: DeficitState,
    pub last_action: Option<Action>,
    /// Consecutive repetitions of `last_action` beyond its first use.
    pub repeat_count: usize,
    pub regression_streak: usize,
    pub turn_index: usize,
}

impl HistorySummary {
    pub fn start(state: DeficitState) -> Self {
        Self {
            state,
            last_action: None,
            repeat_count: 0,
            regression_streak: 0,
            turn_index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: [f64; FEATURE_DIM],
}

impl FeatureVector {
    pub fn new(values: [f64; FEATURE_DIM]) -> Self {
        FeatureVector { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Layout: normalised x, y, z and potential; one-hot last action; regression
/// streak, turn index and repeat count as fractions of their limits; bias.
pub fn featurize(history: &HistorySummary, params: &EnvParams) -> FeatureVector {
    let m = params.init_max;
    let s = history.state;
    let mut v = [0.0; FEATURE_DIM];
    v[0] = s.x() / m;
    v[1] = s.y() / m;
    v[2] = s.z() / m;
    v[3] = s.potential() / (3f64.sqrt() * m);
    if let Some(a) = history.last_action {
        v[4 + a.index()] = 1.0;
    }
    v[8] = history.regression_streak as f64 / params.fail_streak as f64;
    v[9] = history.turn_index as f64 / params.max_turns as f64;
    v[10] = history.repeat_count as f64 / params.max_turns as f64;
    v[11] = 1.0;
    FeatureVector { values: v }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    weights: Matrix,
    temperature: f64,
}

impl PolicyParams {
    pub fn new(weights: Matrix, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(MapoError::Policy(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if !weights.is_finite() {
            return Err(MapoError::Policy("non-finite policy weight".into()));
        }
        Ok(Self {
            weights,
            temperature,
        })
    }

    /// Uniform policy over the simulator's actions.
    pub fn zeros() -> Self {
        Self {
            weights: Matrix::zeros(NUM_ACTIONS, FEATURE_DIM),
            temperature: 1.0,
        }
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        Self::new(self.weights.clone(), temperature)
    }

    pub fn num_actions(&self) -> usize {
        self.weights.rows()
    }
}

impl fmt::Display for PolicyParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.weights.rows() {
            let row: Vec<String> = self
                .weights
                .row(r)
                .iter()
                .map(|v| format!("{v:+.3}"))
                .collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Max-subtracted softmax of `logits / temperature`. Entries that underflow
/// are floored at the smallest positive normal so every action keeps
/// non-zero mass.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<ActionDistribution> {
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(MapoError::Policy(format!("non-finite logits {logits:?}")));
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs = exps
        .into_iter()
        .map(|e| (e / total).max(f64::MIN_POSITIVE))
        .collect();
    Ok(ActionDistribution { probs })
}

pub fn logits(theta: &PolicyParams, f: &FeatureVector) -> Vec<f64> {
    theta.weights.mul_vec(f.as_slice())
}

pub fn action_probs(theta: &PolicyParams, f: &FeatureVector) -> Result<ActionDistribution> {
    if theta.weights.cols() != f.as_slice().len() {
        return Err(MapoError::Shape(format!(
            "policy expects {} features, got {}",
            theta.weights.cols(),
            f.as_slice().len()
        )));
    }
    softmax(&logits(theta, f), theta.temperature)
}

/// Inverse-CDF draw over the fixed action order.
pub fn sample_index<R: Rng + ?Sized>(dist: &ActionDistribution, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, p) in dist.probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    // u landed in the rounding gap above the final cumulative sum.
    dist.probs.len() - 1
}

pub fn sample_action<R: Rng + ?Sized>(dist: &ActionDistribution, rng: &mut R) -> Result<Action> {
    let i = sample_index(dist, rng);
    Action::from_index(i)
        .ok_or_else(|| MapoError::Policy(format!("sampled index {i} is not an action")))
}

/// Gradient of `log p(a | f)` with respect to the weights, from an already
/// computed distribution: row `b` is `(1[b = a] - p_b) / T * f`.
pub fn log_prob_grad_from(
    dist: &ActionDistribution,
    temperature: f64,
    f: &[f64],
    a: usize,
) -> Matrix {
    let mut g = Matrix::zeros(dist.probs.len(), f.len());
    for (b, p) in dist.probs.iter().enumerate() {
        let coef = (if b == a { 1.0 } else { 0.0 } - p) / temperature;
        for (c, x) in f.iter().enumerate() {
            g.set(b, c, coef * x);
        }
    }
    g
}

pub fn log_prob_grad(theta: &PolicyParams, f: &FeatureVector, a: usize) -> Result<Matrix> {
    if a >= theta.num_actions() {
        return Err(MapoError::Shape(format!(
            "action {a} out of range for {} actions",
            theta.num_actions()
        )));
    }
    let dist = action_probs(theta, f)?;
    Ok(log_prob_grad_from(
        &dist,
        theta.temperature,
        f.as_slice(),
        a,
    ))
}
