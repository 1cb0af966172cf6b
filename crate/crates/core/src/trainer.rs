//! On-policy training loop: group rollouts, per-mode advantages, the
//! advantage-weighted log-likelihood gradient, and a plain ascent step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::advantage::{
    compute_advantages, mc_returns, standardize, AdvantageConfig, AdvantageTensor,
    RewardTrajectory, TrajectoryGroup,
};
use crate::error::{MapoError, Result};
use crate::policy::{action_probs, featurize, log_prob_grad_from, Matrix, PolicyParams};
use crate::rng::derive_seed;
use crate::sim::{
    rollout_group, sample_scenario, EnvParams, EpisodeOutcome, EpisodeStatus, Scenario,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Convex mixture of turn- and batch-level advantages.
    Mapo,
    TurnOnly,
    BatchOnly,
    /// Group-normalised trajectory outcome broadcast to every turn.
    GrpoOutcome,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Mapo,
        Mode::TurnOnly,
        Mode::BatchOnly,
        Mode::GrpoOutcome,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Mapo => "mapo",
            Mode::TurnOnly => "turn_only",
            Mode::BatchOnly => "batch_only",
            Mode::GrpoOutcome => "grpo_outcome",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = MapoError;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                MapoError::Config(format!(
                    "unknown mode `{s}` (expected mapo, turn_only, batch_only or grpo_outcome)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub group_size: usize,
    pub updates: usize,
    pub scenarios_per_update: usize,
    pub learning_rate: f64,
    /// Frobenius-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub advantage: AdvantageConfig,
    pub env: EnvParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mapo,
            group_size: 4,
            updates: 300,
            scenarios_per_update: 8,
            learning_rate: 0.05,
            grad_clip: None,
            seed: 0,
            advantage: AdvantageConfig::default(),
            env: EnvParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(MapoError::Config(format!(
                "group_size must be at least 2, got {}",
                self.group_size
            )));
        }
        if self.updates == 0 {
            return Err(MapoError::Config("updates must be positive".into()));
        }
        if self.scenarios_per_update == 0 {
            return Err(MapoError::Config(
                "scenarios_per_update must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MapoError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(MapoError::Config(format!(
                    "grad_clip must be positive, got {c}"
                )));
            }
        }
        self.advantage.validate()?;
        self.env.validate()
    }

    /// Turn-level weight actually used by the mode; `None` for the outcome
    /// baseline, which has no mixture.
    pub fn effective_alpha(&self) -> Option<f64> {
        match self.mode {
            Mode::Mapo => Some(self.advantage.alpha),
            Mode::TurnOnly => Some(1.0),
            Mode::BatchOnly => Some(0.0),
            Mode::GrpoOutcome => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    pub mode: Mode,
    pub alpha: Option<f64>,
    /// Mean undiscounted shaped reward per episode.
    pub mean_group_reward: f64,
    pub mean_return_turn0: f64,
    /// Frobenius norm of the update gradient before clipping.
    pub grad_norm: f64,
    pub success_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub records: Vec<UpdateRecord>,
}

impl TrainMetrics {
    pub fn rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_group_reward).collect()
    }

    pub fn grad_norms(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.grad_norm).collect()
    }

    pub fn max_grad_norm(&self) -> f64 {
        self.grad_norms().into_iter().fold(0.0, f64::max)
    }

    /// Mean reward over the last `n` updates (or all, if fewer).
    pub fn tail_mean_reward(&self, n: usize) -> f64 {
        let r = self.rewards();
        let tail = &r[r.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    pub fn head_mean_reward(&self, n: usize) -> f64 {
        let r = self.rewards();
        let head = &r[..n.min(r.len())];
        head.iter().sum::<f64>() / head.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub metrics: TrainMetrics,
    pub policy: PolicyParams,
}

/// Per-turn advantages applied in the loss, with the mask of included turns.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedAdvantages {
    pub values: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
}

impl AppliedAdvantages {
    pub fn from_tensor(t: &AdvantageTensor) -> Self {
        Self {
            values: t.mixed_adv.clone(),
            mask: t.loss_mask.clone(),
        }
    }

    /// Every turn of trajectory `i` carries `per_trajectory[i]`.
    pub fn broadcast(per_trajectory: &[f64], lengths: &[usize]) -> Result<Self> {
        if per_trajectory.len() != lengths.len() {
            return Err(MapoError::Shape(format!(
                "{} outcomes for {} trajectories",
                per_trajectory.len(),
                lengths.len()
            )));
        }
        Ok(Self {
            values: per_trajectory
                .iter()
                .zip(lengths)
                .map(|(a, n)| vec![*a; *n])
                .collect(),
            mask: lengths.iter().map(|n| vec![true; *n]).collect(),
        })
    }
}

/// Outcome baseline: standardise each trajectory's total reward within the
/// group (population statistics).
pub fn outcome_advantages(totals: &[f64], sigma_epsilon: f64) -> Result<Vec<f64>> {
    if totals.len() < 2 {
        return Err(MapoError::Group(format!(
            "outcome normalisation needs k >= 2, got {}",
            totals.len()
        )));
    }
    Ok(standardize(totals, sigma_epsilon))
}

pub fn reward_group(group: &[EpisodeOutcome]) -> Result<TrajectoryGroup> {
    TrajectoryGroup::new(
        group
            .iter()
            .map(|ep| RewardTrajectory::new(ep.rewards()))
            .collect::<Result<Vec<_>>>()?,
    )
}

/// Advantages the given mode applies to one rollout group.
pub fn group_advantages(
    group: &[EpisodeOutcome],
    mode: Mode,
    config: &AdvantageConfig,
) -> Result<AppliedAdvantages> {
    let rewards = reward_group(group)?;
    let alpha = match mode {
        Mode::Mapo => config.alpha,
        Mode::TurnOnly => 1.0,
        Mode::BatchOnly => 0.0,
        Mode::GrpoOutcome => {
            let totals: Vec<f64> = group.iter().map(EpisodeOutcome::total_reward).collect();
            let adv = outcome_advantages(&totals, config.sigma_epsilon)?;
            let lengths: Vec<usize> = group.iter().map(|ep| ep.turns_used).collect();
            return AppliedAdvantages::broadcast(&adv, &lengths);
        }
    };
    let cfg = AdvantageConfig { alpha, ..*config };
    Ok(AppliedAdvantages::from_tensor(&compute_advantages(
        &rewards, &cfg,
    )?))
}

/// Sum of `A * grad log p(a | h)` over included turns, and how many turns
/// were included.
pub fn loss_gradient_sum(
    group: &[EpisodeOutcome],
    advantages: &AppliedAdvantages,
    policy: &PolicyParams,
    env: &EnvParams,
) -> Result<(Matrix, usize)> {
    if advantages.values.len() != group.len() || advantages.mask.len() != group.len() {
        return Err(MapoError::Shape(format!(
            "advantages cover {} trajectories, group has {}",
            advantages.values.len(),
            group.len()
        )));
    }
    let (rows, cols) = policy.weights().shape();
    let mut sum = Matrix::zeros(rows, cols);
    let mut included = 0;
    for (i, ep) in group.iter().enumerate() {
        let (adv, mask) = (&advantages.values[i], &advantages.mask[i]);
        if adv.len() != ep.turns_used || mask.len() != ep.turns_used {
            return Err(MapoError::Shape(format!(
                "trajectory {i}: {} turns but {} advantages and {} mask entries",
                ep.turns_used,
                adv.len(),
                mask.len()
            )));
        }
        for ((h, rec), (a, keep)) in ep
            .histories()
            .iter()
            .zip(&ep.turn_records)
            .zip(adv.iter().zip(mask))
        {
            if !keep {
                continue;
            }
            included += 1;
            if *a == 0.0 {
                continue;
            }
            let f = featurize(h, env);
            let dist = action_probs(policy, &f)?;
            let g = log_prob_grad_from(
                &dist,
                policy.temperature(),
                f.as_slice(),
                rec.action.index(),
            );
            sum.add_scaled(&g, *a)?;
        }
    }
    Ok((sum, included))
}

/// Gradient of the mean advantage-weighted log-likelihood over included
/// turns, oriented for ascent.
pub fn loss_gradient(
    group: &[EpisodeOutcome],
    advantages: &AppliedAdvantages,
    policy: &PolicyParams,
    env: &EnvParams,
) -> Result<Matrix> {
    let (mut sum, n) = loss_gradient_sum(group, advantages, policy, env)?;
    if n > 0 {
        sum.scale(1.0 / n as f64);
    }
    Ok(sum)
}

/// One ascent step. Returns the new policy and the pre-clip gradient norm.
pub fn apply_update(
    policy: &PolicyParams,
    grad: &Matrix,
    learning_rate: f64,
    grad_clip: Option<f64>,
) -> Result<(PolicyParams, f64)> {
    if !grad.is_finite() {
        return Err(MapoError::Training("non-finite gradient".into()));
    }
    let norm = grad.frobenius_norm();
    let scale = match grad_clip {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    let mut weights = policy.weights().clone();
    weights.add_scaled(grad, learning_rate * scale)?;
    if !weights.is_finite() {
        return Err(MapoError::Training(format!(
            "update produced non-finite weights (grad norm {norm}, learning rate {learning_rate})"
        )));
    }
    Ok((PolicyParams::new(weights, policy.temperature())?, norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    /// Rollouts of an update run on the rayon pool; results are identical.
    Parallel,
}

/// Seeds of scenario `s` in update `u`: (scenario seed, rollout base seed).
pub fn rollout_seeds(run_seed: u64, update: usize, scenario: usize) -> (u64, u64) {
    (
        derive_seed(run_seed, &[update as u64, scenario as u64, 0]),
        derive_seed(run_seed, &[update as u64, scenario as u64, 1]),
    )
}

/// Scenarios and rollout groups for one update under a frozen policy.
pub fn collect_update(
    config: &TrainConfig,
    policy: &PolicyParams,
    update: usize,
    execution: Execution,
) -> Result<Vec<(Scenario, Vec<EpisodeOutcome>)>> {
    let one = |s: usize| -> Result<(Scenario, Vec<EpisodeOutcome>)> {
        let (scenario_seed, base_seed) = rollout_seeds(config.seed, update, s);
        let scenario = sample_scenario(scenario_seed, &config.env);
        let group = rollout_group(policy, &scenario, config.group_size, base_seed, &config.env)?;
        Ok((scenario, group))
    };
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..config.scenarios_per_update)
                .into_par_iter()
                .map(one)
                .collect()
        }
        _ => (0..config.scenarios_per_update).map(one).collect(),
    }
}

pub fn train(config: &TrainConfig) -> Result<TrainOutput> {
    train_with(config, Execution::Sequential)
}

pub fn train_with(config: &TrainConfig, execution: Execution) -> Result<TrainOutput> {
    train_from(config, PolicyParams::zeros(), execution, |_, _| {})
}

/// Training loop starting from `policy`; `on_update` sees every record and
/// the policy after that update.
pub fn train_from<F>(
    config: &TrainConfig,
    mut policy: PolicyParams,
    execution: Execution,
    mut on_update: F,
) -> Result<TrainOutput>
where
    F: FnMut(&UpdateRecord, &PolicyParams),
{
    config.validate()?;
    let mut metrics = TrainMetrics::default();
    for u in 0..config.updates {
        let groups = collect_update(config, &policy, u, execution)?;

        let (rows, cols) = policy.weights().shape();
        let mut grad = Matrix::zeros(rows, cols);
        let mut included = 0;
        let (mut reward_sum, mut return_sum, mut successes, mut episodes) =
            (0.0, 0.0, 0usize, 0usize);
        for (_, group) in &groups {
            let adv = group_advantages(group, config.mode, &config.advantage)?;
            let (g, n) = loss_gradient_sum(group, &adv, &policy, &config.env)?;
            grad.add_scaled(&g, 1.0)?;
            included += n;
            for ep in group {
                reward_sum += ep.total_reward();
                return_sum += mc_returns(
                    &RewardTrajectory::new(ep.rewards())?,
                    config.advantage.gamma,
                )?[0];
                successes += usize::from(ep.status == EpisodeStatus::Success);
                episodes += 1;
            }
        }
        if included > 0 {
            grad.scale(1.0 / included as f64);
        }

        let (next, grad_norm) =
            apply_update(&policy, &grad, config.learning_rate, config.grad_clip)
                .map_err(|e| MapoError::Training(format!("update {u}: {e}")))?;
        policy = next;
        let record = UpdateRecord {
            update: u,
            mode: config.mode,
            alpha: config.effective_alpha(),
            mean_group_reward: reward_sum / episodes as f64,
            mean_return_turn0: return_sum / episodes as f64,
            grad_norm,
            success_fraction: successes as f64 / episodes as f64,
        };
        on_update(&record, &policy);
        metrics.records.push(record);
    }
    Ok(TrainOutput { metrics, policy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{log_prob_grad, FEATURE_DIM};
    use crate::rng::stream;
    use crate::sim::run_episode;
    use rand::Rng;

    fn small(mode: Mode) -> TrainConfig {
        TrainConfig {
            mode,
            updates: 12,
            scenarios_per_update: 3,
            ..TrainConfig::default()
        }
    }

    fn sample_group(seed: u64) -> Vec<EpisodeOutcome> {
        let env = EnvParams::default();
        let sc = sample_scenario(seed, &env);
        rollout_group(&PolicyParams::zeros(), &sc, 4, seed * 10, &env).unwrap()
    }

    fn random_policy(seed: u64) -> PolicyParams {
        let mut rng = stream(seed, 5);
        let rows = (0..4)
            .map(|_| {
                (0..FEATURE_DIM)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        PolicyParams::new(Matrix::from_rows(rows).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn outcome_examples() {
        assert_eq!(
            outcome_advantages(&[2.0, 4.0], 1e-8).unwrap(),
            vec![-1.0, 1.0]
        );
        assert_eq!(
            outcome_advantages(&[1.5, 1.5, 1.5], 1e-8).unwrap(),
            vec![0.0; 3]
        );
        assert!(matches!(
            outcome_advantages(&[1.0], 1e-8),
            Err(MapoError::Group(_))
        ));
    }

    #[test]
    fn outcome_mode_broadcasts_per_trajectory() {
        let group = sample_group(3);
        let adv = group_advantages(&group, Mode::GrpoOutcome, &AdvantageConfig::default()).unwrap();
        for (vals, ep) in adv.values.iter().zip(&group) {
            assert_eq!(vals.len(), ep.turns_used);
            assert!(vals.iter().all(|v| *v == vals[0]));
        }
        assert!(adv.mask.iter().flatten().all(|m| *m));
    }

    #[test]
    fn zero_advantages_give_zero_gradient() {
        let group = sample_group(1);
        let lengths: Vec<usize> = group.iter().map(|e| e.turns_used).collect();
        let adv = AppliedAdvantages::broadcast(&[0.0; 4], &lengths).unwrap();
        let g = loss_gradient(&group, &adv, &random_policy(1), &EnvParams::default()).unwrap();
        assert_eq!(g.frobenius_norm(), 0.0);
    }

    #[test]
    fn single_included_turn_equals_log_prob_grad() {
        let env = EnvParams::default();
        let policy = random_policy(2);
        let ep = run_episode(&policy, &sample_scenario(8, &env), 4, &env).unwrap();
        let group = vec![ep.clone()];
        let mut mask = vec![false; ep.turns_used];
        mask[0] = true;
        let mut values = vec![0.0; ep.turns_used];
        values[0] = 1.0;
        let adv = AppliedAdvantages {
            values: vec![values],
            mask: vec![mask],
        };
        let g = loss_gradient(&group, &adv, &policy, &env).unwrap();
        let f = featurize(&ep.histories()[0], &env);
        let expect = log_prob_grad(&policy, &f, ep.turn_records[0].action.index()).unwrap();
        assert!(g.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn misaligned_advantages_rejected() {
        let group = sample_group(2);
        let adv = AppliedAdvantages::broadcast(&[1.0, -1.0], &[1, 1]).unwrap();
        assert!(matches!(
            loss_gradient(&group, &adv, &PolicyParams::zeros(), &EnvParams::default()),
            Err(MapoError::Shape(_))
        ));
    }

    #[test]
    fn apply_update_examples() {
        let p = random_policy(3);
        let zero = Matrix::zeros(4, FEATURE_DIM);
        let (q, n) = apply_update(&p, &zero, 0.1, None).unwrap();
        assert_eq!((q, n), (p.clone(), 0.0));

        let mut g = Matrix::zeros(4, FEATURE_DIM);
        g.set(0, 0, 6.0);
        g.set(1, 3, 8.0);
        let (q, n) = apply_update(&p, &g, 0.5, Some(2.0)).unwrap();
        assert_eq!(n, 10.0);
        let mut step = q.weights().clone();
        step.add_scaled(p.weights(), -1.0).unwrap();
        assert!((step.frobenius_norm() - 2.0 * 0.5).abs() < 1e-12);

        let (q, _) = apply_update(&p, &g, 0.0, None).unwrap();
        assert_eq!(q, p);

        g.set(2, 2, f64::NAN);
        assert!(matches!(
            apply_update(&p, &g, 0.1, None),
            Err(MapoError::Training(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let a = train(&small(Mode::Mapo)).unwrap();
        let b = train(&small(Mode::Mapo)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.metrics.records.len(), 12);
    }

    #[test]
    fn mode_aliases() {
        let mut cfg = small(Mode::Mapo);
        cfg.advantage.alpha = 1.0;
        let mapo1 = train(&cfg).unwrap();
        let turn = train(&small(Mode::TurnOnly)).unwrap();
        cfg.advantage.alpha = 0.0;
        let mapo0 = train(&cfg).unwrap();
        let batch = train(&small(Mode::BatchOnly)).unwrap();
        let strip = |m: &TrainMetrics| -> Vec<(f64, f64, f64, f64, Option<f64>)> {
            m.records
                .iter()
                .map(|r| {
                    (
                        r.mean_group_reward,
                        r.mean_return_turn0,
                        r.grad_norm,
                        r.success_fraction,
                        r.alpha,
                    )
                })
                .collect()
        };
        assert_eq!(strip(&mapo1.metrics), strip(&turn.metrics));
        assert_eq!(mapo1.policy, turn.policy);
        assert_eq!(strip(&mapo0.metrics), strip(&batch.metrics));
        assert_eq!(mapo0.policy, batch.policy);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_training_is_identical() {
        let cfg = small(Mode::Mapo);
        assert_eq!(
            train(&cfg).unwrap(),
            train_with(&cfg, Execution::Parallel).unwrap()
        );
    }

    #[test]
    fn accumulation_order_does_not_matter() {
        let env = EnvParams::default();
        let cfg = small(Mode::Mapo);
        let policy = random_policy(4);
        let groups = collect_update(&cfg, &policy, 0, Execution::Sequential).unwrap();
        let accumulate = |order: &[usize]| {
            let mut g = Matrix::zeros(4, FEATURE_DIM);
            let mut n = 0;
            for &i in order {
                let adv = group_advantages(&groups[i].1, Mode::Mapo, &cfg.advantage).unwrap();
                let (s, k) = loss_gradient_sum(&groups[i].1, &adv, &policy, &env).unwrap();
                g.add_scaled(&s, 1.0).unwrap();
                n += k;
            }
            g.scale(1.0 / n as f64);
            g.frobenius_norm()
        };
        assert!((accumulate(&[0, 1, 2]) - accumulate(&[2, 0, 1])).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            group_size: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            grad_clip: Some(-1.0),
            ..Default::default()
        }
        .validate()
        .is_err());
        assert_eq!("batch_only".parse::<Mode>().unwrap(), Mode::BatchOnly);
        assert!("ppo".parse::<Mode>().is_err());
    }
}
