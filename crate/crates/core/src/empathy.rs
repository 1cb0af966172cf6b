//! Empathy-deficit state, the distance potential and the shaped rewards
//! derived from it.
//!
//! The user's unmet needs are a point `(x, y, z)` along the cognitive,
//! affective and proactive axes. Each assistant turn moves that point by a
//! judge delta; the policy's job is to drive it to the origin.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{MapoError, Result};

/// Exclusive bound on every judge delta component.
pub const DELTA_BOUND: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Cognitive,
    Affective,
    Proactive,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Cognitive, Axis::Affective, Axis::Proactive];

    pub fn index(self) -> usize {
        match self {
            Axis::Cognitive => 0,
            Axis::Affective => 1,
            Axis::Proactive => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Axis> {
        Axis::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Cognitive => "cognitive",
            Axis::Affective => "affective",
            Axis::Proactive => "proactive",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The user's deficit vector. Components are unclamped: overshooting past
/// the origin is penalised by the potential like any other distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeficitState {
    x: f64,
    y: f64,
    z: f64,
}

impl DeficitState {
    pub const ORIGIN: DeficitState = DeficitState {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(MapoError::InvalidState(format!(
                "non-finite component in ({x}, {y}, {z})"
            )));
        }
        Ok(Self { x, y, z })
    }

    pub fn from_array(v: [f64; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn component(&self, axis: Axis) -> f64 {
        self.to_array()[axis.index()]
    }

    /// Axis with the largest deficit; ties resolve in x, y, z order.
    pub fn dominant_axis(&self) -> Axis {
        let v = self.to_array();
        let mut best = 0;
        for i in 1..3 {
            if v[i] > v[best] {
                best = i;
            }
        }
        Axis::ALL[best]
    }

    /// Distance from the origin.
    pub fn potential(&self) -> f64 {
        potential(self)
    }
}

/// Per-turn change of the deficit vector reported by the judge. Every
/// component lies strictly inside `(-2, 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeDelta {
    dx: f64,
    dy: f64,
    dz: f64,
}

impl JudgeDelta {
    pub const ZERO: JudgeDelta = JudgeDelta {
        dx: 0.0,
        dy: 0.0,
        dz: 0.0,
    };

    pub fn new(dx: f64, dy: f64, dz: f64) -> Result<Self> {
        for (name, v) in [("dx", dx), ("dy", dy), ("dz", dz)] {
            if !v.is_finite() || v.abs() >= DELTA_BOUND {
                return Err(MapoError::InvalidDelta(format!(
                    "{name} = {v} outside the open interval (-2, 2)"
                )));
            }
        }
        Ok(Self { dx, dy, dz })
    }

    pub fn from_array(v: [f64; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.dx, self.dy, self.dz]
    }
}

pub fn potential(state: &DeficitState) -> f64 {
    // hypot keeps the norm exact at the scale boundaries.
    state.x.hypot(state.y).hypot(state.z)
}

pub fn apply_delta(state: &DeficitState, delta: &JudgeDelta) -> Result<DeficitState> {
    DeficitState::new(state.x + delta.dx, state.y + delta.dy, state.z + delta.dz)
}

/// Incremental distance reward: positive iff the turn moved the state
/// strictly closer to the origin.
pub fn incremental_reward(prev: &DeficitState, next: &DeficitState) -> f64 {
    potential(prev) - potential(next)
}

/// Negated distance, kept as a diagnostic baseline. It scores a turn by
/// where the dialogue already is rather than by what the turn changed.
pub fn absolute_reward(state: &DeficitState) -> f64 {
    -potential(state)
}
