//! CSV reports. Every writer emits a header row and a fixed column order;
//! floats use the shortest round-trip form and missing values are empty.

use std::io::Write;

use super::log::LoggedGroup;
use super::FormatError;
use crate::advantage::{compute_advantages, AdvantageConfig, TrajectoryGroup};
use crate::eval::{AxisRow, TurnProfileRow, VarianceRow};
use crate::trainer::UpdateRecord;

pub const METRICS_HEADER: &str =
    "update,mode,alpha,mean_group_reward,mean_return_turn0,grad_norm,success_fraction";
pub const EVALUATION_HEADER: &str = "axis,episodes,success_rate,mean_alignment";
pub const ADVANTAGES_HEADER: &str = "episode,turn,return,turn_adv,batch_adv,mixed_adv,mask";
pub const TURN_PROFILE_HEADER: &str = "turn,samples,mean_return,mean_reward";
pub const VARIANCE_HEADER: &str = "alpha,covariance,empirical,formula";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics<W: Write>(records: &[UpdateRecord], mut w: W) -> Result<(), FormatError> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.update,
            r.mode,
            opt(r.alpha),
            r.mean_group_reward,
            r.mean_return_turn0,
            r.grad_norm,
            r.success_fraction
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_evaluation<W: Write>(rows: &[AxisRow], mut w: W) -> Result<(), FormatError> {
    writeln!(w, "{EVALUATION_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.axis.name(),
            r.episodes,
            r.success_rate,
            opt(r.mean_alignment)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_turn_profile<W: Write>(rows: &[TurnProfileRow], mut w: W) -> Result<(), FormatError> {
    writeln!(w, "{TURN_PROFILE_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.turn, r.samples, r.mean_return, r.mean_reward
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_variance<W: Write>(rows: &[VarianceRow], mut w: W) -> Result<(), FormatError> {
    writeln!(w, "{VARIANCE_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.alpha, r.covariance, r.empirical, r.formula
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvantageRow {
    pub episode: u64,
    pub turn: usize,
    pub ret: f64,
    pub turn_adv: f64,
    pub batch_adv: f64,
    pub mixed_adv: f64,
    pub mask: bool,
}

/// Per-turn advantages of logged groups through the same engine the
/// trainer uses. Each group needs at least two episodes.
pub fn advantage_rows(
    groups: &[LoggedGroup],
    config: &AdvantageConfig,
) -> Result<Vec<AdvantageRow>, FormatError> {
    let mut rows = Vec::new();
    for g in groups {
        let tensor = compute_advantages(&TrajectoryGroup::from_rewards(g.rewards())?, config)?;
        for (i, ep) in g.episodes.iter().enumerate() {
            for t in 0..tensor.returns[i].len() {
                rows.push(AdvantageRow {
                    episode: ep.episode,
                    turn: t,
                    ret: tensor.returns[i][t],
                    turn_adv: tensor.turn_adv[i][t],
                    batch_adv: tensor.batch_adv[i][t],
                    mixed_adv: tensor.mixed_adv[i][t],
                    mask: tensor.loss_mask[i][t],
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_advantages<W: Write>(rows: &[AdvantageRow], mut w: W) -> Result<(), FormatError> {
    writeln!(w, "{ADVANTAGES_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.episode,
            r.turn,
            r.ret,
            r.turn_adv,
            r.batch_adv,
            r.mixed_adv,
            u8::from(r.mask)
        )?;
    }
    w.flush()?;
    Ok(())
}
