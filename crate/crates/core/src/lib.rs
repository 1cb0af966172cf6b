//! Critic-free policy optimisation with mixed turn-level and batch-level
//! advantages, trained against a simulated empathy-support dialogue.
//!
//! The crate is layered bottom-up: [`empathy`] holds the deficit state and
//! shaped rewards, [`advantage`] the return and normalisation engine,
//! [`sim`] the dialogue environment, [`policy`] a linear softmax policy,
//! [`trainer`] the update loop, [`eval`] diagnostics and [`io`] the file
//! formats.

pub mod advantage;
pub mod empathy;
pub mod error;
pub mod eval;
pub mod io;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod trainer;

pub use advantage::{compute_advantages, AdvantageConfig, AdvantageTensor, TrajectoryGroup};
pub use empathy::{Axis, DeficitState, JudgeDelta};
pub use error::{MapoError, Result};
pub use policy::PolicyParams;
pub use sim::{Action, EnvParams, EpisodeOutcome, EpisodeStatus, Scenario};
pub use trainer::{train, Mode, TrainConfig, TrainMetrics, TrainOutput};
