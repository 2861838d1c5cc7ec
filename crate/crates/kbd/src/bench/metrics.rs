//! Evaluation metrics: regression accuracy and constraint satisfaction.

use super::BenchError;
use serde::{Deserialize, Serialize};

/// mape / wmape / perf10 over a prediction set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub wmape: f64,
    pub mape: f64,
    /// Fraction of predictions within 10% relative error (inclusive).
    pub perf10: f64,
    /// Samples evaluated.
    pub count: usize,
    /// Samples excluded for non-positive targets.
    pub excluded: usize,
}

/// Relative-error metrics; `costs` weight the wmape numerator and denominator.
/// Samples with non-positive targets are excluded and counted.
pub fn regression_metrics(
    predictions: &[f64],
    targets: &[f64],
    costs: &[f64],
) -> Result<RegressionMetrics, BenchError> {
    if predictions.len() != targets.len() || predictions.len() != costs.len() {
        return Err(BenchError::Invalid(format!(
            "metric input lengths differ: {} predictions, {} targets, {} costs",
            predictions.len(),
            targets.len(),
            costs.len()
        )));
    }
    let mut m = RegressionMetrics::default();
    let mut abs_rel_sum = 0.0;
    let mut weighted_sum = 0.0;
    let mut weight_sum = 0.0;
    let mut within = 0usize;
    for ((p, t), c) in predictions.iter().zip(targets).zip(costs) {
        if !(*t > 0.0) {
            m.excluded += 1;
            continue;
        }
        let rel = (p - t).abs() / t;
        abs_rel_sum += rel;
        weighted_sum += c * rel;
        weight_sum += c;
        if rel <= 0.10 {
            within += 1;
        }
        m.count += 1;
    }
    if m.count > 0 {
        m.mape = abs_rel_sum / m.count as f64;
        m.perf10 = within as f64 / m.count as f64;
        m.wmape = if weight_sum > 0.0 { weighted_sum / weight_sum } else { m.mape };
    }
    Ok(m)
}

/// Budget/CPA outcome of one campaign-day.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub cost: f64,
    pub budget: f64,
    /// Realized CPA; `None` when no conversions were attributed.
    pub cpa: Option<f64>,
    /// The advertiser's nominal tCPA target.
    pub target: f64,
}

impl ConstraintCheck {
    pub fn satisfied(&self) -> bool {
        let budget_ok = self.cost <= self.budget;
        let cpa_ok = match self.cpa {
            Some(cpa) => cpa <= self.target,
            None => self.cost == 0.0,
        };
        budget_ok && cpa_ok
    }
}

/// Fraction of campaign-days meeting both the budget and the CPA constraint.
pub fn constraint_satisfaction(checks: &[ConstraintCheck]) -> f64 {
    if checks.is_empty() {
        return 0.0;
    }
    checks.iter().filter(|c| c.satisfied()).count() as f64 / checks.len() as f64
}
