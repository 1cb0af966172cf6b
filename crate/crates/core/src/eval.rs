//! Evaluation metrics over recorded episodes: alignment of each turn's
//! realised deficit change with the ideal direction, success rates per
//! dominant axis, and empirical checks of the mixture-variance identity.

use serde::{Deserialize, Serialize};

use crate::advantage::{mc_returns, mixture_variance_formula, population_stats, RewardTrajectory};
use crate::empathy::{Axis, DeficitState, JudgeDelta};
use crate::error::{MapoError, Result};
use crate::sim::{EpisodeOutcome, EpisodeStatus, Scenario};

/// Vectors shorter than this make the alignment undefined.
pub const ALIGNMENT_MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub turn_index: usize,
    pub deficit_before: DeficitState,
    pub delta: JudgeDelta,
    pub alignment: f64,
}

/// Cosine between the realised change and `normalize(-deficit_before)`.
/// `None` when either vector is (numerically) zero.
pub fn alignment_score(deficit_before: &DeficitState, delta: &JudgeDelta) -> Option<f64> {
    let p = deficit_before.to_array();
    let v = delta.to_array();
    let np = norm3(&p);
    let nv = norm3(&v);
    if np < ALIGNMENT_MIN_NORM || nv < ALIGNMENT_MIN_NORM {
        return None;
    }
    let dot: f64 = p.iter().zip(&v).map(|(a, b)| -a * b).sum();
    Some((dot / (np * nv)).clamp(-1.0, 1.0))
}

fn norm3(v: &[f64; 3]) -> f64 {
    v[0].hypot(v[1]).hypot(v[2])
}

/// Defined alignment records of one episode.
pub fn episode_alignments(outcome: &EpisodeOutcome) -> Vec<AlignmentRecord> {
    outcome
        .turn_records
        .iter()
        .filter_map(|r| {
            alignment_score(&r.state_before, &r.delta).map(|alignment| AlignmentRecord {
                turn_index: r.turn_index,
                deficit_before: r.state_before,
                delta: r.delta,
                alignment,
            })
        })
        .collect()
}

pub fn success_rate(outcomes: &[EpisodeOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(MapoError::Evaluation(
            "success rate of zero episodes".into(),
        ));
    }
    let wins = outcomes
        .iter()
        .filter(|o| o.status == EpisodeStatus::Success)
        .count();
    Ok(wins as f64 / outcomes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisRow {
    pub axis: Axis,
    pub episodes: usize,
    pub success_rate: f64,
    /// Mean over defined turn alignments; `None` if there are none.
    pub mean_alignment: Option<f64>,
}

/// Success rate and mean alignment for each dominant axis that occurs.
pub fn axis_breakdown(episodes: &[(Scenario, EpisodeOutcome)]) -> Result<Vec<AxisRow>> {
    if episodes.is_empty() {
        return Err(MapoError::Evaluation(
            "axis breakdown of zero episodes".into(),
        ));
    }
    let mut rows = Vec::new();
    for axis in Axis::ALL {
        let outcomes: Vec<&EpisodeOutcome> = episodes
            .iter()
            .filter(|(s, _)| s.dominant_axis == axis)
            .map(|(_, o)| o)
            .collect();
        if outcomes.is_empty() {
            continue;
        }
        let wins = outcomes
            .iter()
            .filter(|o| o.status == EpisodeStatus::Success)
            .count();
        let aligned: Vec<f64> = outcomes
            .iter()
            .flat_map(|o| episode_alignments(o).into_iter().map(|r| r.alignment))
            .collect();
        let mean_alignment = if aligned.is_empty() {
            None
        } else {
            Some(aligned.iter().sum::<f64>() / aligned.len() as f64)
        };
        rows.push(AxisRow {
            axis,
            episodes: outcomes.len(),
            success_rate: wins as f64 / outcomes.len() as f64,
            mean_alignment,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub alpha: f64,
    pub covariance: f64,
    pub empirical: f64,
    pub formula: f64,
}

/// Empirical variance of `alpha * turn + (1 - alpha) * batch` next to the
/// closed form evaluated at the empirical covariance. Inputs should already
/// be standardised.
pub fn variance_diagnostics(
    turn_adv: &[f64],
    batch_adv: &[f64],
    alpha_grid: &[f64],
) -> Result<Vec<VarianceRow>> {
    if turn_adv.len() != batch_adv.len() {
        return Err(MapoError::Shape(format!(
            "unpaired samples: {} turn-level vs {} batch-level",
            turn_adv.len(),
            batch_adv.len()
        )));
    }
    if turn_adv.len() < 2 {
        return Err(MapoError::Shape(
            "variance diagnostics need at least 2 pairs".into(),
        ));
    }
    let n = turn_adv.len() as f64;
    let (mt, _) = population_stats(turn_adv);
    let (mb, _) = population_stats(batch_adv);
    let cov = turn_adv
        .iter()
        .zip(batch_adv)
        .map(|(t, b)| (t - mt) * (b - mb))
        .sum::<f64>()
        / n;
    // Rounding can push the covariance of identical samples just past 1.
    let c = if cov.abs() > 1.0 && cov.abs() - 1.0 < 1e-9 {
        cov.signum()
    } else {
        cov
    };

    alpha_grid
        .iter()
        .map(|&alpha| {
            let mixed: Vec<f64> = turn_adv
                .iter()
                .zip(batch_adv)
                .map(|(t, b)| alpha * t + (1.0 - alpha) * b)
                .collect();
            let (_, sd) = population_stats(&mixed);
            Ok(VarianceRow {
                alpha,
                covariance: c,
                empirical: sd * sd,
                formula: mixture_variance_formula(alpha, c)?,
            })
        })
        .collect()
}

/// Grid point with the smallest empirical variance (first on ties).
pub fn variance_minimizer(rows: &[VarianceRow]) -> Option<f64> {
    rows.iter()
        .min_by(|a, b| a.empirical.total_cmp(&b.empirical))
        .map(|r| r.alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnProfileRow {
    pub turn: usize,
    pub samples: usize,
    pub mean_return: f64,
    pub mean_reward: f64,
}

/// Mean Monte Carlo return and mean immediate reward at each turn index.
pub fn turn_return_profile(outcomes: &[EpisodeOutcome], gamma: f64) -> Result<Vec<TurnProfileRow>> {
    let mut sums: Vec<(usize, f64, f64)> = Vec::new();
    for o in outcomes {
        let rewards = o.rewards();
        let returns = mc_returns(&RewardTrajectory::new(rewards.clone())?, gamma)?;
        for (t, (g, r)) in returns.iter().zip(&rewards).enumerate() {
            if sums.len() <= t {
                sums.push((0, 0.0, 0.0));
            }
            sums[t].0 += 1;
            sums[t].1 += g;
            sums[t].2 += r;
        }
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(turn, (n, g, r))| TurnProfileRow {
            turn,
            samples: n,
            mean_return: g / n as f64,
            mean_reward: r / n as f64,
        })
        .collect())
}
