//! Rule-based stand-in for a four-role empathy dialogue environment.
//!
//! The scenario generator plays the simulated user, [`judge_step`] plays the
//! judge/director pair that turns a response into a deficit change, and
//! [`run_episode`] applies the early-termination rules. Everything is seeded.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::empathy::{apply_delta, incremental_reward, Axis, DeficitState, JudgeDelta};
use crate::error::{MapoError, Result};
use crate::policy::{action_probs, featurize, sample_action, HistorySummary, PolicyParams};
use crate::rng::{stream, JUDGE_STREAM, POLICY_STREAM, SCENARIO_STREAM};

/// Judge outputs are clipped to this magnitude before validation.
pub const DELTA_CLIP: f64 = 1.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvParams {
    /// Fraction of the targeted deficit removed by a fresh, well-aimed action.
    pub effectiveness: f64,
    pub noise_std: f64,
    /// Increase of the dominant deficit when a different axis is targeted.
    pub frustration: f64,
    /// Multiplicative effectiveness decay per consecutive repetition.
    pub repeat_decay: f64,
    pub success_epsilon: f64,
    pub fail_streak: usize,
    pub max_turns: usize,
    pub init_max: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            effectiveness: 0.5,
            noise_std: 0.05,
            frustration: 0.2,
            repeat_decay: 0.7,
            success_epsilon: 0.3,
            fail_streak: 5,
            max_turns: 15,
            init_max: 3.0,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MapoError::Config(msg));
        if !(self.effectiveness > 0.0 && self.effectiveness < 1.0) {
            return bad(format!(
                "env.effectiveness must lie in (0, 1), got {}",
                self.effectiveness
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!(
                "env.noise_std must be non-negative, got {}",
                self.noise_std
            ));
        }
        if !(self.frustration >= 0.0 && self.frustration.is_finite()) {
            return bad(format!(
                "env.frustration must be non-negative, got {}",
                self.frustration
            ));
        }
        if !(self.repeat_decay > 0.0 && self.repeat_decay <= 1.0) {
            return bad(format!(
                "env.repeat_decay must lie in (0, 1], got {}",
                self.repeat_decay
            ));
        }
        if !(self.success_epsilon > 0.0 && self.success_epsilon.is_finite()) {
            return bad(format!(
                "env.success_epsilon must be positive, got {}",
                self.success_epsilon
            ));
        }
        if self.fail_streak == 0 {
            return bad("env.fail_streak must be at least 1".into());
        }
        if self.max_turns == 0 {
            return bad("env.max_turns must be at least 1".into());
        }
        if !(self.init_max > 0.0 && self.init_max.is_finite()) {
            return bad(format!(
                "env.init_max must be positive, got {}",
                self.init_max
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Cognitive,
    Affective,
    Proactive,
    /// Low-effect information gathering; never frustrates the user.
    Probe,
}

impl Action {
    pub const COUNT: usize = 4;
    pub const ALL: [Action; 4] = [
        Action::Cognitive,
        Action::Affective,
        Action::Proactive,
        Action::Probe,
    ];

    pub fn index(self) -> usize {
        match self {
            Action::Cognitive => 0,
            Action::Affective => 1,
            Action::Proactive => 2,
            Action::Probe => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// Axis the action works on; `None` for a probe.
    pub fn axis(self) -> Option<Axis> {
        match self {
            Action::Cognitive => Some(Axis::Cognitive),
            Action::Affective => Some(Axis::Affective),
            Action::Proactive => Some(Axis::Proactive),
            Action::Probe => None,
        }
    }

    pub fn for_axis(axis: Axis) -> Action {
        Action::ALL[axis.index()]
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Cognitive => "cognitive",
            Action::Affective => "affective",
            Action::Proactive => "proactive",
            Action::Probe => "probe",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub initial_state: DeficitState,
    pub dominant_axis: Axis,
    pub seed: u64,
}

impl Scenario {
    /// Hand-built scenario; the dominant axis is read off the state.
    pub fn new(initial_state: DeficitState, seed: u64) -> Self {
        Self {
            initial_state,
            dominant_axis: initial_state.dominant_axis(),
            seed,
        }
    }
}

/// Draws each component in `[0.2 * init_max, init_max]` and moves the largest
/// draw onto a uniformly chosen dominant axis.
pub fn sample_scenario(seed: u64, params: &EnvParams) -> Scenario {
    let mut rng = stream(seed, SCENARIO_STREAM);
    let dominant = rng.random_range(0..3usize);
    let lo = 0.2 * params.init_max;
    let hi = params.init_max;
    let v = loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(lo..=hi));
        let top = argmax3(&v);
        if (0..3).all(|i| i == top || v[i] < v[top]) {
            let mut v = v;
            v.swap(top, dominant);
            break v;
        }
    };
    let state = DeficitState::from_array(v).expect("finite draws");
    Scenario {
        initial_state: state,
        dominant_axis: Axis::ALL[dominant],
        seed,
    }
}

fn argmax3(v: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// One judge evaluation. A response aimed at the currently dominant deficit
/// removes `effectiveness * repeat_decay^repeat_count` of it; aimed elsewhere
/// it removes that share of its own (smaller) axis and frustrates the
/// dominant one; a probe only carries noise.
pub fn judge_step<R: Rng + ?Sized>(
    state: &DeficitState,
    action: Action,
    repeat_count: usize,
    rng: &mut R,
    params: &EnvParams,
) -> JudgeDelta {
    // Three draws every turn, whatever the action, keep streams aligned.
    let mut d: [f64; 3] = std::array::from_fn(|_| {
        let z: f64 = rng.sample(StandardNormal);
        z * params.noise_std
    });
    if let Some(axis) = action.axis() {
        let decay = params
            .repeat_decay
            .powi(repeat_count.min(i32::MAX as usize) as i32);
        d[axis.index()] -= params.effectiveness * decay * state.component(axis);
        let dominant = state.dominant_axis();
        if axis != dominant {
            d[dominant.index()] += params.frustration;
        }
    }
    let d = d.map(|v| v.clamp(-DELTA_CLIP, DELTA_CLIP));
    JudgeDelta::from_array(d).expect("clipped components lie inside the delta bound")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Success,
    Failure,
    MaxTurns,
}

impl EpisodeStatus {
    pub fn name(self) -> &'static str {
        match self {
            EpisodeStatus::Success => "success",
            EpisodeStatus::Failure => "failure",
            EpisodeStatus::MaxTurns => "max_turns",
        }
    }
}

impl fmt::Display for EpisodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn_index: usize,
    pub state_before: DeficitState,
    pub action: Action,
    pub delta: JudgeDelta,
    pub reward: f64,
    /// Consecutive regressing turns up to and including this one.
    pub regression_streak: usize,
}

impl TurnRecord {
    pub fn state_after(&self) -> DeficitState {
        apply_delta(&self.state_before, &self.delta).expect("recorded transitions are finite")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub status: EpisodeStatus,
    pub turns_used: usize,
    pub final_state: DeficitState,
    pub final_potential: f64,
    pub turn_records: Vec<TurnRecord>,
}

impl EpisodeOutcome {
    pub fn rewards(&self) -> Vec<f64> {
        self.turn_records.iter().map(|r| r.reward).collect()
    }

    /// Undiscounted sum of the shaped rewards.
    pub fn total_reward(&self) -> f64 {
        self.turn_records.iter().map(|r| r.reward).sum()
    }

    pub fn initial_state(&self) -> DeficitState {
        self.turn_records[0].state_before
    }

    /// The history summary the policy saw before each recorded turn.
    pub fn histories(&self) -> Vec<HistorySummary> {
        let mut out = Vec::with_capacity(self.turn_records.len());
        let mut h = HistorySummary::start(self.initial_state());
        for rec in &self.turn_records {
            h.state = rec.state_before;
            h.turn_index = rec.turn_index;
            out.push(h);
            h.repeat_count = next_repeat_count(&h, rec.action);
            h.last_action = Some(rec.action);
            h.regression_streak = rec.regression_streak;
        }
        out
    }
}

fn next_repeat_count(h: &HistorySummary, action: Action) -> usize {
    if h.last_action == Some(action) {
        h.repeat_count + 1
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActionSelection {
    #[default]
    Sample,
    Greedy,
}

pub fn run_episode(
    policy: &PolicyParams,
    scenario: &Scenario,
    action_seed: u64,
    params: &EnvParams,
) -> Result<EpisodeOutcome> {
    run_episode_with(
        policy,
        scenario,
        action_seed,
        params,
        ActionSelection::Sample,
    )
}

/// Plays one episode. At least one turn is always taken, then the episode
/// ends on success (potential within `success_epsilon`), on failure
/// (`fail_streak` consecutive regressions) or at `max_turns`.
pub fn run_episode_with(
    policy: &PolicyParams,
    scenario: &Scenario,
    action_seed: u64,
    params: &EnvParams,
    selection: ActionSelection,
) -> Result<EpisodeOutcome> {
    params.validate()?;
    let mut policy_rng = stream(action_seed, POLICY_STREAM);
    let mut judge_rng = stream(action_seed, JUDGE_STREAM);

    let mut history = HistorySummary::start(scenario.initial_state);
    let mut records = Vec::with_capacity(params.max_turns);
    let mut status = EpisodeStatus::MaxTurns;

    for turn in 0..params.max_turns {
        history.turn_index = turn;
        let dist = action_probs(policy, &featurize(&history, params))?;
        let action = match selection {
            ActionSelection::Sample => sample_action(&dist, &mut policy_rng)?,
            ActionSelection::Greedy => Action::from_index(dist.argmax())
                .ok_or_else(|| MapoError::Policy("policy has more rows than actions".into()))?,
        };
        let repeat = next_repeat_count(&history, action);
        let state = history.state;
        let delta = judge_step(&state, action, repeat, &mut judge_rng, params);
        let next = apply_delta(&state, &delta)?;
        let reward = incremental_reward(&state, &next);
        let streak = if reward < 0.0 {
            history.regression_streak + 1
        } else {
            0
        };
        records.push(TurnRecord {
            turn_index: turn,
            state_before: state,
            action,
            delta,
            reward,
            regression_streak: streak,
        });

        history.state = next;
        history.last_action = Some(action);
        history.repeat_count = repeat;
        history.regression_streak = streak;

        if next.potential() <= params.success_epsilon {
            status = EpisodeStatus::Success;
            break;
        }
        if streak >= params.fail_streak {
            status = EpisodeStatus::Failure;
            break;
        }
    }

    Ok(EpisodeOutcome {
        status,
        turns_used: records.len(),
        final_state: history.state,
        final_potential: history.state.potential(),
        turn_records: records,
    })
}

fn check_group_size(k: usize) -> Result<()> {
    if k < 2 {
        return Err(MapoError::Group(format!(
            "rollout group needs k >= 2, got {k}"
        )));
    }
    Ok(())
}

/// `k` episodes from one scenario; episode `i` uses action seed
/// `base_seed + i`.
pub fn rollout_group(
    policy: &PolicyParams,
    scenario: &Scenario,
    k: usize,
    base_seed: u64,
    params: &EnvParams,
) -> Result<Vec<EpisodeOutcome>> {
    check_group_size(k)?;
    (0..k as u64)
        .map(|i| run_episode(policy, scenario, base_seed.wrapping_add(i), params))
        .collect()
}

/// Same as [`rollout_group`] with members on the rayon pool. Output order
/// and contents are identical to the sequential version.
#[cfg(feature = "parallel")]
pub fn rollout_group_parallel(
    policy: &PolicyParams,
    scenario: &Scenario,
    k: usize,
    base_seed: u64,
    params: &EnvParams,
) -> Result<Vec<EpisodeOutcome>> {
    use rayon::prelude::*;
    check_group_size(k)?;
    (0..k as u64)
        .into_par_iter()
        .map(|i| run_episode(policy, scenario, base_seed.wrapping_add(i), params))
        .collect()
}
