//! Macro-stage training loop.

use super::data::{build_samples, split_last_day, DayRecord, TrainingSample};
use super::model::{loss_total, LossAlphas, ModelKind, PriceVolumeModel};
use super::partition::{fit_partition_gla, PartitionSpec};
use super::IeformerError;
use crate::bench::metrics::{regression_metrics, RegressionMetrics};
use crate::seed::stream_rng;
use crate::substrate::{clip_grad_norm, sgd_step, AdamState, SubstrateError, Tape};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Optimizer choice for the training loops.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MacroTrainConfig {
    pub optimizer: OptimizerKind,
    pub segments: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub dim: usize,
    pub heads: usize,
    pub max_history: usize,
    pub alpha_smooth: f64,
    pub alpha_margin: f64,
    /// Off = unconstrained regression head (the interpreter ablation).
    pub use_isotonic: bool,
    /// Off = equal-width partition at the same segment count.
    pub use_gla: bool,
    /// Off = converted tROI/tCPC samples are dropped from supervision.
    pub use_augmented: bool,
    pub gla_max_iters: usize,
    pub gla_tol: f64,
}

impl Default for MacroTrainConfig {
    fn default() -> Self {
        MacroTrainConfig {
            optimizer: OptimizerKind::Adam,
            segments: 10,
            epochs: 150,
            lr: 0.01,
            batch_size: 16,
            clip_norm: Some(5.0),
            seed: 0,
            dim: 16,
            heads: 2,
            max_history: 28,
            alpha_smooth: 0.5,
            alpha_margin: 0.1,
            use_isotonic: true,
            use_gla: true,
            use_augmented: true,
            gla_max_iters: 40,
            gla_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MacroReport {
    pub epoch_losses: Vec<f64>,
    pub heldout: RegressionMetrics,
    pub diverged: bool,
    pub partition_entropy: f64,
    pub equal_width_entropy: f64,
    pub train_samples: usize,
    pub heldout_samples: usize,
    pub warnings: Vec<String>,
}

fn partition_for(
    train: &[TrainingSample],
    config: &MacroTrainConfig,
    warnings: &mut Vec<String>,
) -> Result<(PartitionSpec, f64, f64), IeformerError> {
    let mut by_campaign: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for s in train {
        by_campaign.entry(s.campaign_id).or_default().push(s.cost);
    }
    let groups: Vec<Vec<f64>> = by_campaign.into_values().collect();
    let fit = fit_partition_gla(&groups, config.segments, config.gla_max_iters, config.gla_tol)?;
    warnings.extend(fit.warnings.iter().cloned());
    if config.use_gla {
        Ok((fit.spec, fit.entropy, fit.equal_width_entropy))
    } else {
        let spec = PartitionSpec::equal_width(fit.spec.min(), fit.spec.max(), fit.spec.segments())?;
        Ok((spec, fit.equal_width_entropy, fit.equal_width_entropy))
    }
}

/// Fits the partition once on the training costs, then minimizes the total
/// objective by seeded minibatch SGD. On divergence the last epoch's healthy
/// parameters are returned with the report marked accordingly.
pub fn train_macro(
    records: &[DayRecord],
    config: &MacroTrainConfig,
) -> Result<(PriceVolumeModel, MacroReport), IeformerError> {
    if records.is_empty() {
        return Err(IeformerError::InsufficientData("no day records".into()));
    }
    let (samples, mut warnings) = build_samples(records, config.max_history, config.use_augmented);
    let (train, heldout) = split_last_day(samples);
    if train.is_empty() {
        return Err(IeformerError::InsufficientData("no training samples after split".into()));
    }

    let (spec, partition_entropy, equal_width_entropy) =
        partition_for(&train, config, &mut warnings)?;

    // Targets are learned in units of their weighted mean magnitude.
    let weight_sum: f64 = train.iter().map(|s| s.weight).sum();
    let target_scale =
        (train.iter().map(|s| s.weight * s.target_tcpa.abs()).sum::<f64>() / weight_sum).max(1e-9);

    let kind = if config.use_isotonic { ModelKind::Isotonic } else { ModelKind::EndToEnd };
    let mut model = PriceVolumeModel::init(
        spec,
        kind,
        config.dim,
        config.heads,
        config.max_history,
        target_scale,
        config.seed,
    );
    // Token features are normalized by their mean training magnitudes.
    let mean_ln = |f: &dyn Fn(&TrainingSample) -> f64| {
        (train.iter().map(|s| f(s).ln_1p()).sum::<f64>() / train.len() as f64).max(1e-9)
    };
    model.feat_scale = (mean_ln(&|s| s.cost), mean_ln(&|s| s.target_tcpa));
    let alphas = LossAlphas { smooth: config.alpha_smooth, margin: config.alpha_margin };

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut diverged = false;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut snapshot = model.params.clone();
    let mut adam = AdamState::new(&model.params);

    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut stream_rng(config.seed, &[0x6570, epoch as u64]));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<TrainingSample> = chunk.iter().map(|i| train[*i].clone()).collect();
            let mut tape = Tape::new();
            let bind = model.params.bind(&mut tape);
            let step = (|| -> Result<f64, IeformerError> {
                let loss = loss_total(&mut tape, &bind, &model, &batch, alphas)?;
                tape.backward(loss)?;
                let mut grads = bind.gradients(&tape);
                if let Some(max_norm) = config.clip_norm {
                    clip_grad_norm(&mut grads, max_norm);
                }
                match config.optimizer {
                    OptimizerKind::Sgd => sgd_step(&mut model.params, &grads, config.lr)?,
                    OptimizerKind::Adam => adam.step(&mut model.params, &grads, config.lr)?,
                }
                Ok(tape.value(loss).as_scalar())
            })();
            match step {
                Ok(loss) => {
                    epoch_loss += loss;
                    batches += 1;
                }
                Err(IeformerError::Substrate(SubstrateError::NonFinite { context })) => {
                    warnings.push(format!("diverged at epoch {epoch}: {context}"));
                    model.params = snapshot;
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        epoch_losses.push(epoch_loss / batches.max(1) as f64);
        snapshot = model.params.clone();
    }

    let mut predictions = Vec::with_capacity(heldout.len());
    let mut targets = Vec::with_capacity(heldout.len());
    let mut costs = Vec::with_capacity(heldout.len());
    for s in &heldout {
        predictions.push(model.predict_tcpa(&s.history, s.cost)?);
        targets.push(s.target_tcpa);
        costs.push(s.cost);
    }
    let heldout_metrics = regression_metrics(&predictions, &targets, &costs)
        .map_err(|e| IeformerError::InsufficientData(e.to_string()))?;

    let report = MacroReport {
        epoch_losses,
        heldout: heldout_metrics,
        diverged,
        partition_entropy,
        equal_width_entropy,
        train_samples: train.len(),
        heldout_samples: heldout.len(),
        warnings,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::Strategy;

    /// Noiseless concave ground truth: tcpa(cost) = base * (cost/ref)^0.7 + floor.
    fn concave_records(campaigns: u64, days: u32) -> Vec<DayRecord> {
        let golden = 0.618_033_988_749_894_9_f64;
        let mut out = Vec::new();
        for c in 0..campaigns {
            let base = 20.0 + 6.0 * c as f64;
            for d in 1..=days {
                // Golden-ratio sweep: costs cover the range in scrambled
                // order, so the held-out day is interior, not extrapolation.
                let u = (golden * (d as f64 + 5.0 * c as f64)).fract();
                let cost = 50.0 + 800.0 * u * u;
                let tcpa = base * (cost / 100.0).powf(0.7) + 10.0;
                out.push(DayRecord {
                    campaign_id: c,
                    day: d,
                    strategy: Strategy::TCpa,
                    target_value: tcpa,
                    cost,
                    gmv: cost * 1.8,
                    avg_pcvr: 0.04,
                    listed_price: 90.0,
                });
            }
        }
        out
    }

    fn quick_config(seed: u64) -> MacroTrainConfig {
        MacroTrainConfig {
            epochs: 200,
            seed,
            ..MacroTrainConfig::default()
        }
    }

    #[test]
    fn learns_a_noiseless_concave_curve_to_five_percent() {
        let records = concave_records(8, 28);
        let (model, report) = train_macro(&records, &quick_config(4)).unwrap();
        assert!(!report.diverged);
        assert!(
            report.heldout.mape < 0.05,
            "held-out mape {} too high; losses tail {:?}",
            report.heldout.mape,
            &report.epoch_losses[report.epoch_losses.len().saturating_sub(3)..]
        );
        // Structural monotonicity survives training.
        let hist = Vec::new();
        let mut last = 0.0;
        for step in 0..30 {
            let cost = step as f64 * 40.0;
            let p = model.predict_tcpa(&hist, cost).unwrap();
            assert!(p >= last && p > 0.0);
            last = p;
        }
    }

    #[test]
    fn same_seed_reproduces_the_report_bit_for_bit() {
        let records = concave_records(3, 10);
        let config = quick_config(11);
        let (model_a, report_a) = train_macro(&records, &config).unwrap();
        let (model_b, report_b) = train_macro(&records, &config).unwrap();
        assert_eq!(report_a.epoch_losses, report_b.epoch_losses);
        assert_eq!(report_a.heldout, report_b.heldout);
        assert_eq!(model_a.params, model_b.params);
    }

    #[test]
    fn base_target_is_monotone_in_budget() {
        let records = concave_records(3, 12);
        let (model, _) = train_macro(&records, &quick_config(5)).unwrap();
        let hist = Vec::new();
        let lo = model.base_target(&hist, 100.0).unwrap();
        let hi = model.base_target(&hist, 800.0).unwrap();
        assert!(hi >= lo);
        // Below the first boundary the prediction is the intercept.
        let (w0, _) = model.interpretable_weights(&hist).unwrap();
        let tiny = model.base_target(&hist, 0.0).unwrap();
        assert!((tiny - w0).abs() < 1e-9);
    }

    #[test]
    fn equal_width_toggle_changes_the_partition() {
        let records = concave_records(3, 12);
        let mut config = quick_config(7);
        config.epochs = 5;
        let (gla_model, gla_report) = train_macro(&records, &config).unwrap();
        config.use_gla = false;
        let (ew_model, ew_report) = train_macro(&records, &config).unwrap();
        assert!(gla_report.partition_entropy >= ew_report.partition_entropy - 1e-12);
        assert_eq!(
            gla_model.spec.boundaries().first(),
            ew_model.spec.boundaries().first()
        );
        let widths = ew_model.spec.steps();
        for w in &widths {
            assert!((w - widths[0]).abs() < 1e-9, "equal-width steps expected");
        }
    }
}
