//! Line-delimited JSON trajectory logs, one object per turn.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{round_sig9, FormatError};
use crate::empathy::{apply_delta, incremental_reward, DeficitState, JudgeDelta};
use crate::sim::{Action, EpisodeOutcome, EpisodeStatus, TurnRecord};

/// Logged rewards must match the states they connect within this.
pub const REWARD_TOLERANCE: f64 = 1e-6;
/// Allowed gap between `state + delta` and the next record's `state`.
pub const CONTINUITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    None,
    Success,
    Failure,
    MaxTurns,
}

impl From<EpisodeStatus> for Terminal {
    fn from(s: EpisodeStatus) -> Self {
        match s {
            EpisodeStatus::Success => Terminal::Success,
            EpisodeStatus::Failure => Terminal::Failure,
            EpisodeStatus::MaxTurns => Terminal::MaxTurns,
        }
    }
}

impl Terminal {
    fn status(self) -> Option<EpisodeStatus> {
        match self {
            Terminal::None => None,
            Terminal::Success => Some(EpisodeStatus::Success),
            Terminal::Failure => Some(EpisodeStatus::Failure),
            Terminal::MaxTurns => Some(EpisodeStatus::MaxTurns),
        }
    }
}

/// Field order here is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryLogRecord {
    pub episode: u64,
    pub group: u64,
    pub scenario_seed: u64,
    pub turn: usize,
    pub state: [f64; 3],
    pub action: usize,
    pub delta: [f64; 3],
    pub reward: f64,
    pub terminal: Terminal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedEpisode {
    pub episode: u64,
    pub group: u64,
    pub scenario_seed: u64,
    pub outcome: EpisodeOutcome,
}

/// Episodes sharing a `(scenario_seed, group)` key, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedGroup {
    pub group: u64,
    pub scenario_seed: u64,
    pub episodes: Vec<LoggedEpisode>,
}

impl LoggedGroup {
    pub fn rewards(&self) -> Vec<Vec<f64>> {
        self.episodes.iter().map(|e| e.outcome.rewards()).collect()
    }
}

fn round3(v: [f64; 3]) -> [f64; 3] {
    v.map(round_sig9)
}

pub fn episode_records(ep: &LoggedEpisode) -> Vec<TrajectoryLogRecord> {
    let last = ep.outcome.turn_records.len().saturating_sub(1);
    ep.outcome
        .turn_records
        .iter()
        .enumerate()
        .map(|(i, r)| TrajectoryLogRecord {
            episode: ep.episode,
            group: ep.group,
            scenario_seed: ep.scenario_seed,
            turn: r.turn_index,
            state: round3(r.state_before.to_array()),
            action: r.action.index(),
            delta: round3(r.delta.to_array()),
            reward: round_sig9(r.reward),
            terminal: if i == last {
                ep.outcome.status.into()
            } else {
                Terminal::None
            },
        })
        .collect()
}

/// Writes every turn of every episode; returns the record count.
pub fn write_trajectories<W: Write>(
    episodes: &[LoggedEpisode],
    mut sink: W,
) -> Result<usize, FormatError> {
    let mut n = 0;
    for ep in episodes {
        for rec in episode_records(ep) {
            serde_json::to_writer(&mut sink, &rec).map_err(std::io::Error::from)?;
            sink.write_all(b"\n")?;
            n += 1;
        }
    }
    sink.flush()?;
    Ok(n)
}

struct Pending {
    episode: u64,
    group: u64,
    scenario_seed: u64,
    records: Vec<TurnRecord>,
    status: Option<EpisodeStatus>,
    last_line: usize,
}

impl Pending {
    fn finish(self) -> Result<LoggedEpisode, FormatError> {
        let Some(status) = self.status else {
            return Err(FormatError::Validation {
                line: self.last_line,
                episode: self.episode,
                turn: self.records.len() - 1,
                message: "episode ends without a terminal flag".into(),
            });
        };
        let last = self.records.last().expect("pending episodes hold a record");
        let final_state = last.state_after();
        Ok(LoggedEpisode {
            episode: self.episode,
            group: self.group,
            scenario_seed: self.scenario_seed,
            outcome: EpisodeOutcome {
                status,
                turns_used: self.records.len(),
                final_state,
                final_potential: final_state.potential(),
                turn_records: self.records,
            },
        })
    }
}

/// Parses and validates a log, grouping episodes by
/// `(scenario_seed, group)`. Blank lines are skipped. An episode's records
/// must be contiguous and start at turn 0.
pub fn read_trajectories<R: BufRead>(source: R) -> Result<Vec<LoggedGroup>, FormatError> {
    let mut episodes: Vec<LoggedEpisode> = Vec::new();
    let mut pending: Option<Pending> = None;

    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryLogRecord =
            serde_json::from_str(&line).map_err(|e| FormatError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let fail = |message: String| FormatError::Validation {
            line: line_no,
            episode: rec.episode,
            turn: rec.turn,
            message,
        };

        let state = DeficitState::from_array(rec.state).map_err(|e| fail(e.to_string()))?;
        let delta = JudgeDelta::from_array(rec.delta).map_err(|e| fail(e.to_string()))?;
        let action = Action::from_index(rec.action)
            .ok_or_else(|| fail(format!("unknown action {}", rec.action)))?;
        if !rec.reward.is_finite() {
            return Err(fail("reward is not finite".into()));
        }
        let next = apply_delta(&state, &delta).map_err(|e| fail(e.to_string()))?;
        let expected = incremental_reward(&state, &next);
        if (expected - rec.reward).abs() > REWARD_TOLERANCE {
            return Err(fail(format!(
                "reward {} disagrees with its states (expected {expected})",
                rec.reward
            )));
        }

        let continues = pending
            .as_ref()
            .is_some_and(|p| p.episode == rec.episode && p.status.is_none());
        if continues {
            let p = pending.as_mut().expect("checked above");
            if p.group != rec.group || p.scenario_seed != rec.scenario_seed {
                return Err(fail(
                    "group or scenario_seed changes within an episode".into(),
                ));
            }
            let prev = p.records.last().expect("pending episodes hold a record");
            if rec.turn != prev.turn_index + 1 {
                return Err(fail(format!(
                    "expected turn {}, found {}",
                    prev.turn_index + 1,
                    rec.turn
                )));
            }
            let gap = prev
                .state_after()
                .to_array()
                .iter()
                .zip(state.to_array())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if gap > CONTINUITY_TOLERANCE {
                return Err(fail(format!(
                    "state does not follow from the previous turn (gap {gap:e})"
                )));
            }
        } else {
            if let Some(p) = pending.take() {
                episodes.push(p.finish()?);
            }
            if episodes.iter().any(|e| e.episode == rec.episode) {
                return Err(fail("episode id appears twice".into()));
            }
            if rec.turn != 0 {
                return Err(fail(format!(
                    "episode starts at turn {}, expected 0",
                    rec.turn
                )));
            }
            pending = Some(Pending {
                episode: rec.episode,
                group: rec.group,
                scenario_seed: rec.scenario_seed,
                records: Vec::new(),
                status: None,
                last_line: line_no,
            });
        }

        let p = pending.as_mut().expect("set above");
        let prev_streak = p.records.last().map_or(0, |r| r.regression_streak);
        p.records.push(TurnRecord {
            turn_index: rec.turn,
            state_before: state,
            action,
            delta,
            reward: rec.reward,
            regression_streak: if rec.reward < 0.0 { prev_streak + 1 } else { 0 },
        });
        p.status = rec.terminal.status();
        p.last_line = line_no;
    }
    if let Some(p) = pending.take() {
        episodes.push(p.finish()?);
    }

    let mut groups: Vec<LoggedGroup> = Vec::new();
    for ep in episodes {
        match groups
            .iter_mut()
            .find(|g| g.group == ep.group && g.scenario_seed == ep.scenario_seed)
        {
            Some(g) => g.episodes.push(ep),
            None => groups.push(LoggedGroup {
                group: ep.group,
                scenario_seed: ep.scenario_seed,
                episodes: vec![ep],
            }),
        }
    }
    Ok(groups)
}
