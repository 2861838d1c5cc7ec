//! Rule-based pacing controller.

use super::{MicroError, ACTION_MAX, ACTION_MIN, DAY_STEPS};
use serde::{Deserialize, Serialize};

/// Proportional/integral gains plus the ideal cumulative spend curve, held
/// as fractions of the daily budget (last entry is exactly 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub k_p: f64,
    pub k_i: f64,
    pace: Vec<f64>,
}

impl PidGains {
    pub fn new(k_p: f64, k_i: f64, pace: Vec<f64>) -> Result<Self, MicroError> {
        if pace.len() != DAY_STEPS {
            return Err(MicroError::InvalidGains(format!(
                "pace curve needs {DAY_STEPS} entries, got {}",
                pace.len()
            )));
        }
        let mut prev = 0.0;
        for (i, p) in pace.iter().enumerate() {
            if !(*p >= prev) {
                return Err(MicroError::InvalidGains(format!(
                    "pace curve decreases at hour {i}: {prev} -> {p}"
                )));
            }
            prev = *p;
        }
        if (pace[DAY_STEPS - 1] - 1.0).abs() > 1e-9 {
            return Err(MicroError::InvalidGains(format!(
                "pace curve must end at 1.0, ends at {}",
                pace[DAY_STEPS - 1]
            )));
        }
        let mut pace = pace;
        pace[DAY_STEPS - 1] = 1.0;
        Ok(PidGains { k_p, k_i, pace })
    }

    /// Uniform hourly pacing.
    pub fn uniform(k_p: f64, k_i: f64) -> Self {
        let pace = (1..=DAY_STEPS).map(|h| h as f64 / DAY_STEPS as f64).collect();
        PidGains::new(k_p, k_i, pace).expect("uniform pace is valid")
    }

    /// Pacing proportional to an hourly volume curve (weights need not be
    /// normalized).
    pub fn from_volume_curve(k_p: f64, k_i: f64, volume: &[f64; DAY_STEPS]) -> Result<Self, MicroError> {
        let total: f64 = volume.iter().sum();
        if !(total > 0.0) || volume.iter().any(|v| *v < 0.0) {
            return Err(MicroError::InvalidGains("volume curve must be non-negative with positive sum".into()));
        }
        let mut pace = Vec::with_capacity(DAY_STEPS);
        let mut acc = 0.0;
        for v in volume {
            acc += v / total;
            pace.push(acc);
        }
        pace[DAY_STEPS - 1] = 1.0;
        PidGains::new(k_p, k_i, pace)
    }

    /// Ideal cumulative spend fraction after 1-indexed hour `h`.
    pub fn pace_after(&self, h: usize) -> f64 {
        self.pace[h - 1]
    }
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains::uniform(0.7, 0.1)
    }
}

/// Pacing action from the spend errors of the first `t` completed hours.
///
/// `cost_fracs[h-1]` is cumulative cost / budget after 1-indexed hour `h`.
/// The raw error signal k_p e_t + k_i sum(e_h) maps to a coefficient via
/// clamp(1 - raw, 0.8, 1.2): overspend suppresses bids, underspend raises.
pub fn pid_action(gains: &PidGains, cost_fracs: &[f64], t: usize) -> f64 {
    debug_assert!(t >= 1, "pid_action needs at least one completed hour");
    debug_assert!(t <= cost_fracs.len() && t <= DAY_STEPS);
    let mut integral = 0.0;
    for h in 1..=t {
        integral += cost_fracs[h - 1] - gains.pace_after(h);
    }
    let current = cost_fracs[t - 1] - gains.pace_after(t);
    let raw = gains.k_p * current + gains.k_i * integral;
    (1.0 - raw).clamp(ACTION_MIN, ACTION_MAX)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn on_pace_every_hour_is_neutral() {
        let gains = PidGains::uniform(0.7, 0.1);
        let cost_fracs: Vec<f64> = (1..=24).map(|h| h as f64 / 24.0).collect();
        for t in 1..=24 {
            assert_eq!(pid_action(&gains, &cost_fracs, t), 1.0);
        }
    }

    #[test]
    fn proportional_only_worked_example() {
        // k_p=1, k_i=0, overspend of 0.1 B at hour 1 -> 0.9.
        let gains = PidGains::uniform(1.0, 0.0);
        let cost_fracs = vec![gains.pace_after(1) + 0.1];
        assert!((pid_action(&gains, &cost_fracs, 1) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn extreme_overspend_clamps_low() {
        let gains = PidGains::uniform(1.0, 0.5);
        let cost_fracs = vec![1.0, 1.0, 1.0];
        assert_eq!(pid_action(&gains, &cost_fracs, 3), ACTION_MIN);
    }

    #[test]
    fn extreme_underspend_clamps_high() {
        let gains = PidGains::uniform(2.0, 0.5);
        let cost_fracs = vec![0.0; 20];
        assert_eq!(pid_action(&gains, &cost_fracs, 20), ACTION_MAX);
    }

    #[test]
    fn underspend_raises_the_coefficient() {
        let gains = PidGains::default();
        let cost_fracs = vec![0.01];
        assert!(pid_action(&gains, &cost_fracs, 1) > 1.0);
    }

    #[test]
    fn volume_curve_pacing_matches_cumulative_weights() {
        let mut volume = [1.0; DAY_STEPS];
        volume[0] = 25.0; // front-loaded day
        let gains = PidGains::from_volume_curve(0.7, 0.1, &volume).unwrap();
        assert!((gains.pace_after(1) - 0.5208333333333334).abs() < 1e-12);
        assert_eq!(gains.pace_after(24), 1.0);
    }

    #[test]
    fn rejects_bad_curves() {
        assert!(PidGains::new(1.0, 0.0, vec![0.5; 24]).is_err()); // ends below 1
        let mut pace: Vec<f64> = (1..=24).map(|h| h as f64 / 24.0).collect();
        pace[5] = 0.1; // decreasing
        assert!(PidGains::new(1.0, 0.0, pace).is_err());
        assert!(PidGains::new(1.0, 0.0, vec![1.0; 23]).is_err()); // wrong length
    }
}
