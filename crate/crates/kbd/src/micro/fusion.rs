//! Uncertainty-weighted blending of the two controllers.

use serde::{Deserialize, Serialize};

/// Ring of the sequence policy's last three relative prediction errors.
/// Its mean absolute percentage error proxies model uncertainty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FusionState {
    errors: Vec<f64>,
}

const WINDOW: usize = 3;

impl FusionState {
    pub fn new() -> Self {
        FusionState::default()
    }

    /// Mean absolute error over the buffer; 0 while empty.
    pub fn mape(&self) -> f64 {
        if self.errors.is_empty() {
            0.0
        } else {
            self.errors.iter().sum::<f64>() / self.errors.len() as f64
        }
    }

    pub fn observations(&self) -> usize {
        self.errors.len()
    }
}

/// Pushes |a_dt - reference| / reference into the three-slot window.
pub fn update_uncertainty(state: &FusionState, a_dt: f64, reference: f64) -> FusionState {
    debug_assert!(reference > 0.0, "hindsight reference must be positive");
    let mut errors = state.errors.clone();
    errors.push((a_dt - reference).abs() / reference);
    if errors.len() > WINDOW {
        errors.remove(0);
    }
    FusionState { errors }
}

/// Final hourly coefficient: max(1 - mape, 0) * a_dt + min(mape, 1) * a_pid.
/// At mape 0 this is exactly the sequence policy; at mape >= 1 control hands
/// over to the pacing rule entirely.
pub fn fuse(a_dt: f64, a_pid: f64, mape: f64) -> f64 {
    debug_assert!(mape >= 0.0);
    (1.0 - mape).max(0.0) * a_dt + mape.min(1.0) * a_pid
}
