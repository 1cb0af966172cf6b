//! Browser bindings. Every export returns a JSON string; the plain
//! functions underneath do the work and are what the tests exercise.

use mapo_core::advantage::{compute_advantages, mixture_variance_formula};
use mapo_core::eval::{variance_diagnostics, variance_minimizer};
use mapo_core::policy::PolicyParams;
use mapo_core::rng::derive_seed;
use mapo_core::sim::{run_episode, sample_scenario};
use mapo_core::trainer::{collect_update, reward_group, train_with, Execution, Mode, TrainConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Upper bound on updates per call so a page cannot lock up the tab.
pub const MAX_UPDATES: u32 = 1000;

const GRID_STEPS: usize = 20;

#[derive(Debug, Serialize)]
pub struct VarianceCurve {
    pub alpha: Vec<f64>,
    /// Closed form at the requested covariance.
    pub formula: Vec<f64>,
    /// Measured on turn/batch advantage pairs from one rollout batch.
    pub empirical: Vec<f64>,
    pub empirical_covariance: f64,
    pub empirical_minimizer: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct TurnView {
    pub turn: usize,
    pub action: &'static str,
    pub state: [f64; 3],
    pub delta: [f64; 3],
    pub reward: f64,
    pub potential: f64,
}

#[derive(Debug, Serialize)]
pub struct EpisodeView {
    pub dominant_axis: &'static str,
    pub initial_state: [f64; 3],
    pub initial_potential: f64,
    pub status: &'static str,
    pub total_reward: f64,
    pub turns: Vec<TurnView>,
}

#[derive(Debug, Serialize)]
pub struct ModeCurve {
    pub mode: &'static str,
    pub reward: Vec<f64>,
    pub grad_norm: Vec<f64>,
}

fn check_updates(updates: u32) -> Result<(), String> {
    if updates > MAX_UPDATES {
        return Err(format!("at most {MAX_UPDATES} updates, got {updates}"));
    }
    Ok(())
}

fn trained_policy(seed: u64, updates: u32) -> Result<PolicyParams, String> {
    check_updates(updates)?;
    if updates == 0 {
        return Ok(PolicyParams::zeros());
    }
    let config = TrainConfig {
        seed,
        updates: updates as usize,
        ..TrainConfig::default()
    };
    Ok(train_with(&config, Execution::Sequential)
        .map_err(|e| e.to_string())?
        .policy)
}

pub fn variance_curve_data(covariance: f64, seed: u64) -> Result<VarianceCurve, String> {
    let alpha: Vec<f64> = (0..=GRID_STEPS)
        .map(|i| i as f64 / GRID_STEPS as f64)
        .collect();
    let formula = alpha
        .iter()
        .map(|&a| mixture_variance_formula(a, covariance))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;

    let config = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let groups = collect_update(&config, &PolicyParams::zeros(), 0, Execution::Sequential)
        .map_err(|e| e.to_string())?;
    let (mut turn, mut batch) = (Vec::new(), Vec::new());
    for (_, group) in &groups {
        let rewards = reward_group(group).map_err(|e| e.to_string())?;
        let t = compute_advantages(&rewards, &config.advantage).map_err(|e| e.to_string())?;
        for i in 0..t.turn_adv.len() {
            for s in 0..t.t_min {
                turn.push(t.turn_adv[i][s]);
                batch.push(t.batch_adv[i][s]);
            }
        }
    }
    let rows = variance_diagnostics(&standardized(&turn), &standardized(&batch), &alpha)
        .map_err(|e| e.to_string())?;
    Ok(VarianceCurve {
        empirical: rows.iter().map(|r| r.empirical).collect(),
        empirical_covariance: rows.first().map_or(0.0, |r| r.covariance),
        empirical_minimizer: variance_minimizer(&rows),
        alpha,
        formula,
    })
}

// Pooled pairs are re-standardised so the identity applies exactly.
fn standardized(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - mean) / sd).collect()
}

pub fn episode_data(seed: u64, updates: u32) -> Result<EpisodeView, String> {
    let policy = trained_policy(seed, updates)?;
    let env = TrainConfig::default().env;
    let scenario = sample_scenario(derive_seed(seed, &[u64::MAX, 0]), &env);
    let outcome = run_episode(&policy, &scenario, derive_seed(seed, &[u64::MAX, 1]), &env)
        .map_err(|e| e.to_string())?;
    Ok(EpisodeView {
        dominant_axis: scenario.dominant_axis.name(),
        initial_state: scenario.initial_state.to_array(),
        initial_potential: scenario.initial_state.potential(),
        status: outcome.status.name(),
        total_reward: outcome.total_reward(),
        turns: outcome
            .turn_records
            .iter()
            .map(|r| TurnView {
                turn: r.turn_index,
                action: r.action.name(),
                state: r.state_before.to_array(),
                delta: r.delta.to_array(),
                reward: r.reward,
                potential: r.state_after().potential(),
            })
            .collect(),
    })
}

pub fn training_curves_data(seed: u64, updates: u32) -> Result<Vec<ModeCurve>, String> {
    check_updates(updates)?;
    if updates == 0 {
        return Err("updates must be positive".into());
    }
    Mode::ALL
        .into_iter()
        .map(|mode| {
            let config = TrainConfig {
                mode,
                seed,
                updates: updates as usize,
                ..TrainConfig::default()
            };
            let out = train_with(&config, Execution::Sequential).map_err(|e| e.to_string())?;
            Ok(ModeCurve {
                mode: mode.name(),
                reward: out.metrics.rewards(),
                grad_norm: out.metrics.grad_norms(),
            })
        })
        .collect()
}

fn to_json<T: Serialize>(v: Result<T, String>) -> Result<String, JsError> {
    let v = v.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// Mixture variance against alpha: closed form at `covariance` plus the
/// curve measured on one batch of real advantages.
#[wasm_bindgen]
pub fn variance_curve(covariance: f64, seed: u32) -> Result<String, JsError> {
    to_json(variance_curve_data(covariance, u64::from(seed)))
}

/// One episode under a policy trained for `updates` updates (0 = uniform).
#[wasm_bindgen]
pub fn simulate_episode(seed: u32, updates: u32) -> Result<String, JsError> {
    to_json(episode_data(u64::from(seed), updates))
}

/// Reward and gradient-norm curves of every mode on a shared seed.
#[wasm_bindgen]
pub fn training_curves(seed: u32, updates: u32) -> Result<String, JsError> {
    to_json(training_curves_data(u64::from(seed), updates))
}
