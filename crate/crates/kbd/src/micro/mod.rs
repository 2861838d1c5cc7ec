//! Hourly (micro) control: a PID pacing rule, a return-conditioned sequence
//! policy, a divergence-penalized training objective, and an
//! uncertainty-weighted fusion of the two at decision time.

pub mod control;
pub mod dt;
pub mod fusion;
pub mod pid;
pub mod store;
pub mod train;

pub use control::{control_day, hindsight_reference, ControlConfig, DayInput, DayResult, PolicyMode};
pub use dt::{DtModel, DtPrefix};
pub use fusion::{fuse, update_uncertainty, FusionState};
pub use pid::{pid_action, PidGains};
pub use store::{read_trajectories, write_trajectories};
pub use train::{train_micro, MicroReport, MicroTrainConfig};

use crate::auction::{AuctionError, Strategy};
use crate::substrate::SubstrateError;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Number of hourly decision steps in a campaign-day.
pub const DAY_STEPS: usize = 24;

/// Action bounds for the multiplicative bid coefficient.
pub const ACTION_MIN: f64 = 0.8;
pub const ACTION_MAX: f64 = 1.2;

#[derive(Debug, Clone, PartialEq)]
pub enum MicroError {
    InvalidTrajectory { index: usize, reason: String },
    InvalidGains(String),
    MalformedPrefix(String),
    InvalidArgument(String),
    Auction(AuctionError),
    Substrate(SubstrateError),
    Io(String),
    Parse { line: usize, message: String },
}

impl fmt::Display for MicroError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MicroError::InvalidTrajectory { index, reason } => {
                write!(f, "trajectory {index}: {reason}")
            }
            MicroError::InvalidGains(msg) => write!(f, "invalid pid gains: {msg}"),
            MicroError::MalformedPrefix(msg) => write!(f, "malformed prefix: {msg}"),
            MicroError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            MicroError::Auction(e) => write!(f, "auction: {e}"),
            MicroError::Substrate(e) => write!(f, "substrate: {e}"),
            MicroError::Io(msg) => write!(f, "io: {msg}"),
            MicroError::Parse { line, message } => {
                write!(f, "trajectory store line {line}: {message}")
            }
        }
    }
}

impl std::error::Error for MicroError {}

impl From<AuctionError> for MicroError {
    fn from(e: AuctionError) -> Self {
        MicroError::Auction(e)
    }
}

impl From<SubstrateError> for MicroError {
    fn from(e: SubstrateError) -> Self {
        MicroError::Substrate(e)
    }
}

/// Feature view of one hourly decision point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpState {
    pub hour: u8,
    pub remaining_budget_frac: f64,
    pub cost_frac: f64,
    pub gmv_frac: f64,
    /// Realized CPA over the macro base target; 0 while CPA is undefined.
    pub cpa_ratio: f64,
    pub strategy: Strategy,
    pub prev_action: f64,
}

impl MdpState {
    pub const DIM: usize = 9;

    /// Clamps ratio features into [0, 5] and packs the feature vector.
    pub fn features(&self) -> [f64; Self::DIM] {
        let c = |x: f64| x.clamp(0.0, 5.0);
        let one_hot = self.strategy.one_hot();
        [
            self.hour as f64 / 23.0,
            c(self.remaining_budget_frac),
            c(self.cost_frac),
            c(self.gmv_frac),
            c(self.cpa_ratio),
            one_hot[0],
            one_hot[1],
            one_hot[2],
            self.prev_action,
        ]
    }
}

/// One hourly step of a recorded day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// Return-to-go at decision time.
    pub rtg: f64,
    pub state: MdpState,
    pub action: f64,
    pub reward: f64,
}

/// A full (or partial) campaign-day of (return-to-go, state, action, reward).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    /// GMV reference (average over past days) used in the reward.
    pub gmv_ref: f64,
}

impl Trajectory {
    /// Builds a trajectory whose return-to-go entries are canonical suffix
    /// sums (accumulated right to left) of the rewards.
    pub fn from_rewards(states: Vec<MdpState>, actions: Vec<f64>, rewards: Vec<f64>, gmv_ref: f64) -> Self {
        debug_assert_eq!(states.len(), actions.len());
        debug_assert_eq!(states.len(), rewards.len());
        let rtgs = suffix_sums(&rewards);
        let steps = states
            .into_iter()
            .zip(actions)
            .zip(rewards)
            .zip(rtgs)
            .map(|(((state, action), reward), rtg)| TrajectoryStep { rtg, state, action, reward })
            .collect();
        Trajectory { steps, gmv_ref }
    }

    /// Checks the return-to-go identity (bit-exact against the canonical
    /// suffix-sum order), action bounds, and step count.
    pub fn validate(&self, index: usize) -> Result<(), MicroError> {
        let fail = |reason: String| MicroError::InvalidTrajectory { index, reason };
        if self.steps.is_empty() || self.steps.len() > DAY_STEPS {
            return Err(fail(format!("{} steps outside 1..={DAY_STEPS}", self.steps.len())));
        }
        let rewards: Vec<f64> = self.steps.iter().map(|s| s.reward).collect();
        let expect = suffix_sums(&rewards);
        for (t, (step, want)) in self.steps.iter().zip(&expect).enumerate() {
            if step.rtg.to_bits() != want.to_bits() {
                return Err(fail(format!(
                    "return-to-go at step {} is {}, suffix sum of rewards is {}",
                    t + 1,
                    step.rtg,
                    want
                )));
            }
            if !(ACTION_MIN..=ACTION_MAX).contains(&step.action) {
                return Err(fail(format!("action {} outside [{ACTION_MIN}, {ACTION_MAX}]", step.action)));
            }
        }
        Ok(())
    }
}

fn suffix_sums(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc += r;
        out[i] = acc;
    }
    out
}

/// Hourly reward: normalized cumulative GMV plus a spend-utilization
/// penalty that activates only past the budget. A non-positive GMV
/// reference is floored to one currency unit and flagged.
pub fn step_reward(gmv_cum: f64, cost_cum: f64, gmv_ref: f64, budget: f64) -> (f64, bool) {
    debug_assert!(budget > 0.0);
    let (gref, floored) = if gmv_ref > 0.0 { (gmv_ref, false) } else { (1.0, true) };
    let reward = gmv_cum / gref + (1.0 - cost_cum / budget).min(0.0);
    (reward, floored)
}
