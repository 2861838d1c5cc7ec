//! Hourly control of one campaign-day: compute the coefficient by mode,
//! bid the hour, track rewards, and (in fused mode) measure the sequence
//! policy's recent error against a hindsight reference action.

use super::dt::{DtModel, DtPrefix};
use super::fusion::{fuse, update_uncertainty, FusionState};
use super::pid::{pid_action, PidGains};
use super::{step_reward, MdpState, MicroError, Trajectory, TrajectoryStep, ACTION_MAX, ACTION_MIN, DAY_STEPS};
use crate::auction::{realized_cpa, replay_hour, roll_hour, CampaignState, HourLog, Impression, PlatformDuals, Strategy};
use crate::seed::stream_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    Pid,
    Dt,
    Fused,
}

#[derive(Clone, Debug)]
pub struct ControlConfig {
    pub mode: PolicyMode,
    /// Overrides the measured uncertainty (testing and ablation hook).
    pub pin_mape: Option<f64>,
    /// Grid resolution of the hindsight coefficient search.
    pub hindsight_grid: usize,
    /// Cumulative-spend slack multiplier for hindsight pace feasibility.
    pub pace_slack: f64,
    /// Uniform behavior noise (amplitude, seed) applied to executed actions;
    /// used to generate exploratory offline data.
    pub action_noise: Option<(f64, u64)>,
}

impl ControlConfig {
    pub fn new(mode: PolicyMode) -> Self {
        ControlConfig {
            mode,
            pin_mape: None,
            hindsight_grid: 41,
            pace_slack: 1.2,
            action_noise: None,
        }
    }
}

/// One campaign-day of inputs for the controller.
#[derive(Clone, Debug)]
pub struct DayInput<'a> {
    pub impressions: &'a [Impression],
    pub budget: f64,
    /// Advertiser's nominal tCPA (constraint accounting).
    pub nominal_target: f64,
    pub strategy: Strategy,
    /// Day-level base tCPA from the macro stage.
    pub c_ma: f64,
    /// GMV reference (e.g. trailing 7-day average).
    pub gmv_ref: f64,
}

#[derive(Clone, Debug)]
pub struct DayResult {
    pub trajectory: Trajectory,
    pub state: CampaignState,
    pub c_mi: Vec<f64>,
    pub a_pid: Vec<f64>,
    /// Sequence-policy actions; NaN-free but only meaningful off PID mode.
    pub a_dt: Vec<f64>,
    pub mape_series: Vec<f64>,
    pub warnings: Vec<String>,
}

impl DayResult {
    pub fn hour_logs(&self) -> &[HourLog] {
        &self.state.hours
    }
}

/// Best fixed coefficient for one completed hour in hindsight: replays the
/// hour's impressions under each grid coefficient with the hour's dual
/// snapshot, maximizing hour GMV among pace-feasible outcomes (cumulative
/// cost at most `pace_limit`). Falls back to the cheapest outcome when no
/// coefficient is feasible; returns `None` when the hour carries no signal
/// (every coefficient yields the same outcome).
pub fn hindsight_reference(
    impressions: &[Impression],
    duals: &PlatformDuals,
    c_ma: f64,
    cost_before: f64,
    budget: f64,
    pace_limit: f64,
    grid: usize,
) -> Result<Option<f64>, MicroError> {
    if grid < 2 {
        return Err(MicroError::InvalidArgument(format!("hindsight grid {grid} too small")));
    }
    let mut best_feasible: Option<(f64, f64)> = None; // (gmv, coeff)
    let mut best_cheap: Option<(f64, f64)> = None; // (cum cost, coeff)
    let mut lo_outcome = None;
    let mut all_same = true;
    for i in 0..grid {
        let coeff = ACTION_MIN + (ACTION_MAX - ACTION_MIN) * i as f64 / (grid - 1) as f64;
        let outcome = replay_hour(impressions, duals, c_ma * coeff, cost_before, budget)?;
        let cum = cost_before + outcome.cost;
        match &lo_outcome {
            None => lo_outcome = Some((outcome.gmv, outcome.cost)),
            Some((g, c)) => {
                if *g != outcome.gmv || *c != outcome.cost {
                    all_same = false;
                }
            }
        }
        if cum <= pace_limit {
            let better = match best_feasible {
                None => true,
                Some((g, _)) => outcome.gmv > g,
            };
            if better {
                best_feasible = Some((outcome.gmv, coeff));
            }
        }
        let cheaper = match best_cheap {
            None => true,
            Some((c, _)) => cum < c,
        };
        if cheaper {
            best_cheap = Some((cum, coeff));
        }
    }
    if all_same {
        return Ok(None);
    }
    Ok(Some(match best_feasible {
        Some((_, coeff)) => coeff,
        None => best_cheap.expect("grid is non-empty").1,
    }))
}

/// Runs 24 hourly decisions over the day's impressions.
///
/// Per hour: pick the coefficient by mode, bid the hour at C_ma times that
/// coefficient, observe the reward (normalized cumulative GMV plus budget
/// penalty), and in fused mode update the uncertainty window from the
/// hindsight reference. Returns the executed trajectory with canonical
/// return-to-go suffix sums plus full accounting.
pub fn control_day(
    dt: Option<&DtModel>,
    gains: &PidGains,
    input: &DayInput,
    config: &ControlConfig,
) -> Result<DayResult, MicroError> {
    if !(input.budget > 0.0) {
        return Err(MicroError::InvalidArgument(format!("budget {} not positive", input.budget)));
    }
    if !(input.c_ma > 0.0) {
        return Err(MicroError::InvalidArgument(format!("c_ma {} not positive", input.c_ma)));
    }
    let needs_dt = config.mode != PolicyMode::Pid;
    let dt = match (needs_dt, dt) {
        (true, None) => {
            return Err(MicroError::InvalidArgument(format!(
                "{:?} mode requires a trained sequence policy",
                config.mode
            )))
        }
        (true, Some(m)) => Some(m),
        (false, m) => m,
    };

    let mut warnings = Vec::new();
    let (gmv_ref, floored) = if input.gmv_ref > 0.0 { (input.gmv_ref, false) } else { (1.0, true) };
    if floored {
        warnings.push("gmv reference not positive; floored to 1.0".into());
    }

    let mut buckets: Vec<Vec<Impression>> = vec![Vec::new(); DAY_STEPS];
    for imp in input.impressions {
        buckets[imp.hour as usize].push(imp.clone());
    }

    let mut state = CampaignState::new(input.budget, input.nominal_target, input.strategy);
    let mut duals = PlatformDuals::default();
    let mut fusion = FusionState::new();
    let mut noise_rng = config.action_noise.map(|(amp, seed)| (amp, stream_rng(seed, &[0x6e6f])));

    let mut cost_fracs: Vec<f64> = Vec::with_capacity(DAY_STEPS);
    let mut states = Vec::with_capacity(DAY_STEPS);
    let mut rewards = Vec::with_capacity(DAY_STEPS);
    let mut executed = Vec::with_capacity(DAY_STEPS);
    let mut past_steps: Vec<TrajectoryStep> = Vec::with_capacity(DAY_STEPS);
    let mut a_pid_series = Vec::with_capacity(DAY_STEPS);
    let mut a_dt_series = Vec::with_capacity(DAY_STEPS);
    let mut c_mi_series = Vec::with_capacity(DAY_STEPS);
    let mut mape_series = Vec::with_capacity(DAY_STEPS);
    let mut conditioning_rtg = dt.map(|m| m.target_return).unwrap_or(0.0);
    let mut prev_action = 1.0;

    for hour in 0..DAY_STEPS {
        let mdp = MdpState {
            hour: hour as u8,
            remaining_budget_frac: (input.budget - state.cost) / input.budget,
            cost_frac: state.cost / input.budget,
            gmv_frac: state.gmv / gmv_ref,
            cpa_ratio: realized_cpa(&state).map(|c| c / input.c_ma).unwrap_or(0.0),
            strategy: input.strategy,
            prev_action,
        };
        let a_pid = if hour == 0 { 1.0 } else { pid_action(gains, &cost_fracs, hour) };
        let a_dt = match dt {
            Some(model) if config.mode != PolicyMode::Pid => model.predict(&DtPrefix {
                past: past_steps.clone(),
                current_rtg: conditioning_rtg,
                current_state: mdp,
            })?,
            _ => 1.0,
        };
        let mape_used = match config.mode {
            PolicyMode::Fused => config.pin_mape.unwrap_or_else(|| fusion.mape()),
            _ => 0.0,
        };
        let mut action = match config.mode {
            PolicyMode::Pid => a_pid,
            PolicyMode::Dt => a_dt,
            PolicyMode::Fused => fuse(a_dt, a_pid, mape_used),
        };
        if let Some((amp, rng)) = noise_rng.as_mut() {
            action = (action + rng.gen_range(-*amp..=*amp)).clamp(ACTION_MIN, ACTION_MAX);
        }

        let log = roll_hour(&mut state, &mut duals, &buckets[hour], hour as u8, input.c_ma * action)?;
        let (reward, _) = step_reward(state.gmv, state.cost, gmv_ref, input.budget);

        if config.mode == PolicyMode::Fused && config.pin_mape.is_none() {
            let pace_limit = input.budget * (gains.pace_after(hour + 1) * config.pace_slack).min(1.0);
            let snapshot = PlatformDuals { p: log.p, q: log.q, ..duals };
            if let Some(reference) = hindsight_reference(
                &buckets[hour],
                &snapshot,
                input.c_ma,
                state.cost - log.cost,
                input.budget,
                pace_limit,
                config.hindsight_grid,
            )? {
                fusion = update_uncertainty(&fusion, a_dt, reference);
            }
        }

        past_steps.push(TrajectoryStep { rtg: conditioning_rtg, state: mdp, action, reward });
        conditioning_rtg -= reward;
        cost_fracs.push(state.cost / input.budget);
        prev_action = action;
        states.push(mdp);
        rewards.push(reward);
        executed.push(action);
        a_pid_series.push(a_pid);
        a_dt_series.push(a_dt);
        c_mi_series.push(action);
        mape_series.push(mape_used);
    }

    Ok(DayResult {
        trajectory: Trajectory::from_rewards(states, executed.clone(), rewards, gmv_ref),
        state,
        c_mi: c_mi_series,
        a_pid: a_pid_series,
        a_dt: a_dt_series,
        mape_series,
        warnings,
    })
}
