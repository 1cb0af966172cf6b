//! Run configuration as a flat `key = value` document with dotted keys:
//!
//! ```text
//! mode = "mapo"
//! updates = 300
//! learning_rate = 0.05
//! advantage.alpha = 0.5
//! env.max_turns = 15
//! ```
//!
//! Omitted keys keep their defaults, unknown keys are rejected and
//! `grad_clip` is only set when present.

use std::fmt::Write as _;
use std::path::Path;

use super::FormatError;
use crate::trainer::TrainConfig;

pub fn parse_config(text: &str) -> Result<TrainConfig, FormatError> {
    let config: TrainConfig =
        toml::from_str(text).map_err(|e| FormatError::Config(e.to_string().trim().to_owned()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<TrainConfig, FormatError> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Every key, in a fixed order; `parse_config` reads it back unchanged.
pub fn render_config(c: &TrainConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("mode", format!("\"{}\"", c.mode));
    kv("group_size", c.group_size.to_string());
    kv("updates", c.updates.to_string());
    kv("scenarios_per_update", c.scenarios_per_update.to_string());
    kv("learning_rate", float(c.learning_rate));
    if let Some(clip) = c.grad_clip {
        kv("grad_clip", float(clip));
    }
    kv("seed", c.seed.to_string());
    kv("advantage.gamma", float(c.advantage.gamma));
    kv("advantage.alpha", float(c.advantage.alpha));
    kv("advantage.sigma_epsilon", float(c.advantage.sigma_epsilon));
    kv("env.effectiveness", float(c.env.effectiveness));
    kv("env.noise_std", float(c.env.noise_std));
    kv("env.frustration", float(c.env.frustration));
    kv("env.repeat_decay", float(c.env.repeat_decay));
    kv("env.success_epsilon", float(c.env.success_epsilon));
    kv("env.fail_streak", c.env.fail_streak.to_string());
    kv("env.max_turns", c.env.max_turns.to_string());
    kv("env.init_max", float(c.env.init_max));
    s
}

// TOML floats need a decimal point or exponent.
fn float(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'E']) {
        s
    } else {
        format!("{s}.0")
    }
}
