//! Monte Carlo returns and the two normalisation granularities.
//!
//! Turn-level advantages standardise returns across the `k` trajectories of
//! a group at each turn index, restricted to the turns every trajectory
//! reached (`t_min`). Batch-level advantages standardise immediate rewards
//! over every turn of every trajectory. The trainer mixes the two with a
//! convex weight `alpha`.

use serde::{Deserialize, Serialize};

use crate::error::{MapoError, Result};

pub const DEFAULT_SIGMA_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdvantageConfig {
    pub gamma: f64,
    /// Weight of the turn-level term; the batch-level weight is `1 - alpha`.
    pub alpha: f64,
    pub sigma_epsilon: f64,
}

impl Default for AdvantageConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            alpha: 0.5,
            sigma_epsilon: DEFAULT_SIGMA_EPSILON,
        }
    }
}

impl AdvantageConfig {
    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        check_alpha(self.alpha)?;
        if !(self.sigma_epsilon > 0.0 && self.sigma_epsilon.is_finite()) {
            return Err(MapoError::Config(format!(
                "sigma_epsilon must be positive, got {}",
                self.sigma_epsilon
            )));
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        1.0 - self.alpha
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(MapoError::Config(format!(
            "gamma must lie in (0, 1], got {gamma}"
        )))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(MapoError::Config(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )))
    }
}

/// Per-turn rewards of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTrajectory {
    rewards: Vec<f64>,
}

impl RewardTrajectory {
    pub fn new(rewards: Vec<f64>) -> Result<Self> {
        if rewards.is_empty() {
            return Err(MapoError::Shape(
                "trajectory must have at least one turn".into(),
            ));
        }
        if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
            return Err(MapoError::Shape(format!("non-finite reward at turn {i}")));
        }
        Ok(Self { rewards })
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// `k >= 2` trajectories sampled from one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGroup {
    trajectories: Vec<RewardTrajectory>,
    t_min: usize,
}

impl TrajectoryGroup {
    pub fn new(trajectories: Vec<RewardTrajectory>) -> Result<Self> {
        if trajectories.len() < 2 {
            return Err(MapoError::Group(format!(
                "group needs at least 2 trajectories, got {}",
                trajectories.len()
            )));
        }
        let lengths: Vec<usize> = trajectories.iter().map(RewardTrajectory::len).collect();
        let t_min = compute_t_min(&lengths)?;
        Ok(Self {
            trajectories,
            t_min,
        })
    }

    pub fn from_rewards(rewards: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            rewards
                .into_iter()
                .map(RewardTrajectory::new)
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn trajectories(&self) -> &[RewardTrajectory] {
        &self.trajectories
    }

    pub fn k(&self) -> usize {
        self.trajectories.len()
    }

    pub fn t_min(&self) -> usize {
        self.t_min
    }
}

/// Discounted reward-to-go for every turn, one backward pass.
pub fn mc_returns(traj: &RewardTrajectory, gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let rewards = traj.rewards();
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    Ok(out)
}

pub fn compute_t_min(lengths: &[usize]) -> Result<usize> {
    lengths
        .iter()
        .copied()
        .min()
        .ok_or_else(|| MapoError::Group("cannot take t_min of an empty group".into()))
}

/// Population mean and standard deviation.
pub(crate) fn population_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardise in place; an (almost) constant sample maps to all zeros.
pub(crate) fn standardize(values: &[f64], sigma_epsilon: f64) -> Vec<f64> {
    let (mean, std) = population_stats(values);
    if std < sigma_epsilon {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Ragged per-turn advantages together with the loss mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedAdvantages {
    pub values: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
}

/// Standardise returns across trajectories at each turn `t < t_min`
/// (0-based). Later turns get advantage 0 and are masked out of the loss.
pub fn turn_level_advantages(
    returns_by_traj: &[Vec<f64>],
    t_min: usize,
    sigma_epsilon: f64,
) -> Result<MaskedAdvantages> {
    let k = returns_by_traj.len();
    if k < 2 {
        return Err(MapoError::Group(format!(
            "turn-level normalisation needs k >= 2, got {k}"
        )));
    }
    if let Some(short) = returns_by_traj.iter().position(|r| r.len() < t_min) {
        return Err(MapoError::Shape(format!(
            "trajectory {short} has {} turns, fewer than t_min = {t_min}",
            returns_by_traj[short].len()
        )));
    }

    let mut values: Vec<Vec<f64>> = returns_by_traj.iter().map(|r| vec![0.0; r.len()]).collect();
    let mask: Vec<Vec<bool>> = returns_by_traj
        .iter()
        .map(|r| (0..r.len()).map(|t| t < t_min).collect())
        .collect();

    let mut column = vec![0.0; k];
    for t in 0..t_min {
        for (slot, r) in column.iter_mut().zip(returns_by_traj) {
            *slot = r[t];
        }
        for (i, a) in standardize(&column, sigma_epsilon).into_iter().enumerate() {
            values[i][t] = a;
        }
    }
    Ok(MaskedAdvantages { values, mask })
}

/// Standardise every immediate reward in the batch against the whole batch.
pub fn batch_level_advantages(rewards_all: &[f64], sigma_epsilon: f64) -> Result<Vec<f64>> {
    if rewards_all.len() < 2 {
        return Err(MapoError::Batch(format!(
            "batch normalisation needs at least 2 samples, got {}",
            rewards_all.len()
        )));
    }
    Ok(standardize(rewards_all, sigma_epsilon))
}

#[inline]
pub fn mix(turn_adv: f64, batch_adv: f64, alpha: f64) -> f64 {
    alpha * turn_adv + (1.0 - alpha) * batch_adv
}

/// Convex mixture `alpha * A^t + (1 - alpha) * A^b`; masked turns get 0.
pub fn mixed_advantages(
    turn_adv: &[Vec<f64>],
    batch_adv: &[Vec<f64>],
    mask: &[Vec<bool>],
    alpha: f64,
) -> Result<Vec<Vec<f64>>> {
    check_alpha(alpha)?;
    if turn_adv.len() != batch_adv.len() || turn_adv.len() != mask.len() {
        return Err(MapoError::Shape(format!(
            "trajectory counts differ: turn {}, batch {}, mask {}",
            turn_adv.len(),
            batch_adv.len(),
            mask.len()
        )));
    }
    turn_adv
        .iter()
        .zip(batch_adv)
        .zip(mask)
        .enumerate()
        .map(|(i, ((t, b), m))| {
            if t.len() != b.len() || t.len() != m.len() {
                return Err(MapoError::Shape(format!(
                    "trajectory {i}: turn {} vs batch {} vs mask {} entries",
                    t.len(),
                    b.len(),
                    m.len()
                )));
            }
            Ok(t.iter()
                .zip(b)
                .zip(m)
                .map(|((&ta, &ba), &keep)| if keep { mix(ta, ba, alpha) } else { 0.0 })
                .collect())
        })
        .collect()
}

/// Closed-form variance of `alpha X + (1 - alpha) Y` for unit-variance
/// `X`, `Y` with covariance `c`: `1 - 2 alpha (1 - alpha) (1 - c)`.
pub fn mixture_variance_formula(alpha: f64, covariance: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&covariance) {
        return Err(MapoError::Domain(format!(
            "covariance of unit-variance variables lies in [-1, 1], got {covariance}"
        )));
    }
    check_alpha(alpha)?;
    Ok(1.0 - 2.0 * alpha * (1.0 - alpha) * (1.0 - covariance))
}

/// Everything the loss needs for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageTensor {
    pub returns: Vec<Vec<f64>>,
    pub turn_adv: Vec<Vec<f64>>,
    /// Normalised over the whole batch, including turns past `t_min`.
    pub batch_adv: Vec<Vec<f64>>,
    pub mixed_adv: Vec<Vec<f64>>,
    pub loss_mask: Vec<Vec<bool>>,
    pub t_min: usize,
}

impl AdvantageTensor {
    pub fn included_turns(&self) -> usize {
        self.loss_mask.iter().flatten().filter(|m| **m).count()
    }
}

pub fn compute_advantages(
    group: &TrajectoryGroup,
    config: &AdvantageConfig,
) -> Result<AdvantageTensor> {
    config.validate()?;
    let returns = group
        .trajectories()
        .iter()
        .map(|t| mc_returns(t, config.gamma))
        .collect::<Result<Vec<_>>>()?;
    let turn = turn_level_advantages(&returns, group.t_min(), config.sigma_epsilon)?;

    let flat: Vec<f64> = group
        .trajectories()
        .iter()
        .flat_map(|t| t.rewards().iter().copied())
        .collect();
    let flat_adv = batch_level_advantages(&flat, config.sigma_epsilon)?;
    let mut batch_adv = Vec::with_capacity(group.k());
    let mut offset = 0;
    for t in group.trajectories() {
        batch_adv.push(flat_adv[offset..offset + t.len()].to_vec());
        offset += t.len();
    }

    let mixed_adv = mixed_advantages(&turn.values, &batch_adv, &turn.mask, config.alpha)?;
    Ok(AdvantageTensor {
        returns,
        turn_adv: turn.values,
        batch_adv,
        mixed_adv,
        loss_mask: turn.mask,
        t_min: group.t_min(),
    })
}
