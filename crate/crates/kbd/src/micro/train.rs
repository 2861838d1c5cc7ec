//! Offline training of the sequence policy with a divergence penalty toward
//! the pacing rule.

use super::dt::DtModel;
use super::pid::{pid_action, PidGains};
use super::{MicroError, Trajectory};
use crate::ieformer::OptimizerKind;
use crate::seed::stream_rng;
use crate::substrate::{clip_grad_norm, mse, sgd_step, AdamState, SubstrateError, Tape, Tensor, TensorId};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MicroTrainConfig {
    /// Weight of the divergence-from-PID term.
    pub beta: f64,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub context_steps: usize,
    /// Trajectories per gradient step.
    pub batch_size: usize,
    /// Quantile of training first-step returns used for inference
    /// conditioning.
    pub target_return_quantile: f64,
}

impl Default for MicroTrainConfig {
    fn default() -> Self {
        MicroTrainConfig {
            beta: 0.1,
            epochs: 40,
            lr: 0.003,
            optimizer: OptimizerKind::Adam,
            clip_norm: Some(5.0),
            seed: 0,
            dim: 32,
            layers: 2,
            heads: 2,
            context_steps: 24,
            batch_size: 4,
            target_return_quantile: 0.9,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MicroReport {
    /// Ground-truth action loss per epoch.
    pub epoch_mse: Vec<f64>,
    /// Divergence-from-PID loss per epoch (unweighted by beta).
    pub epoch_mdl: Vec<f64>,
    pub target_return: f64,
    pub diverged: bool,
    pub warnings: Vec<String>,
}

/// PID actions recomputed from a trajectory's recorded cost fractions.
/// Step 1 has no completed hours and gets the neutral coefficient.
pub fn pid_actions_for(trajectory: &Trajectory, gains: &PidGains) -> Vec<f64> {
    let mut out = Vec::with_capacity(trajectory.steps.len());
    // state at step t carries cumulative cost/B after hour t-1.
    let cost_fracs: Vec<f64> = trajectory.steps.iter().skip(1).map(|s| s.state.cost_frac).collect();
    for t in 0..trajectory.steps.len() {
        if t == 0 {
            out.push(1.0);
        } else {
            out.push(pid_action(gains, &cost_fracs, t));
        }
    }
    out
}

/// Builds both loss terms for one trajectory: (action MSE, PID-divergence MSE).
pub fn trajectory_losses(
    tape: &mut Tape,
    bind: &crate::substrate::Binding,
    model: &DtModel,
    trajectory: &Trajectory,
    gains: &PidGains,
) -> Result<(TensorId, TensorId), MicroError> {
    let preds = model.forward_actions(tape, bind, &trajectory.steps)?;
    // Predictions are [1,1] cells; one row tensor feeds both mse terms.
    let row = tape.concat_cols(&preds)?;
    let gt = tape.input(Tensor::row(trajectory.steps.iter().map(|s| s.action).collect()));
    let loss_gt = mse(tape, row, gt)?;
    let pid_row = tape.input(Tensor::row(pid_actions_for(trajectory, gains)));
    let loss_pid = mse(tape, row, pid_row)?;
    Ok((loss_gt, loss_pid))
}

/// Minimizes mse(a_dt, a_gt) + beta * mse(a_dt, a_pid) over the trajectory
/// set. PID targets are recomputed per step from each trajectory's recorded
/// spend history.
pub fn train_micro(
    trajectories: &[Trajectory],
    gains: &PidGains,
    config: &MicroTrainConfig,
) -> Result<(DtModel, MicroReport), MicroError> {
    if trajectories.is_empty() {
        return Err(MicroError::InvalidArgument("no trajectories".into()));
    }
    if !(config.beta >= 0.0) {
        return Err(MicroError::InvalidArgument(format!("beta must be >= 0, got {}", config.beta)));
    }
    for (i, t) in trajectories.iter().enumerate() {
        t.validate(i)?;
    }

    let mut model = DtModel::init(config.dim, config.layers, config.heads, config.context_steps, config.seed);
    model.target_return = first_return_quantile(trajectories, config.target_return_quantile);

    let mut warnings = Vec::new();
    let mut diverged = false;
    let mut epoch_mse = Vec::with_capacity(config.epochs);
    let mut epoch_mdl = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..trajectories.len()).collect();
    let mut snapshot = model.params.clone();
    let mut adam = AdamState::new(&model.params);

    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut stream_rng(config.seed, &[0x6d69, epoch as u64]));
        let mut sum_mse = 0.0;
        let mut sum_mdl = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let mut tape = Tape::new();
            let bind = model.params.bind(&mut tape);
            let step = (|| -> Result<(f64, f64), MicroError> {
                let mut total: Option<TensorId> = None;
                let mut batch_mse = 0.0;
                let mut batch_mdl = 0.0;
                for idx in chunk {
                    let (gt, pid) = trajectory_losses(&mut tape, &bind, &model, &trajectories[*idx], gains)?;
                    batch_mse += tape.value(gt).as_scalar();
                    batch_mdl += tape.value(pid).as_scalar();
                    let combined = if config.beta > 0.0 {
                        let scaled = tape.scale(pid, config.beta)?;
                        tape.add(gt, scaled)?
                    } else {
                        gt
                    };
                    total = Some(match total {
                        Some(acc) => tape.add(acc, combined)?,
                        None => combined,
                    });
                }
                let total = tape.scale(total.expect("non-empty chunk"), 1.0 / chunk.len() as f64)?;
                tape.backward(total)?;
                let mut grads = bind.gradients(&tape);
                if let Some(max_norm) = config.clip_norm {
                    clip_grad_norm(&mut grads, max_norm);
                }
                match config.optimizer {
                    OptimizerKind::Sgd => sgd_step(&mut model.params, &grads, config.lr)?,
                    OptimizerKind::Adam => adam.step(&mut model.params, &grads, config.lr)?,
                }
                Ok((batch_mse / chunk.len() as f64, batch_mdl / chunk.len() as f64))
            })();
            match step {
                Ok((m, d)) => {
                    sum_mse += m;
                    sum_mdl += d;
                    batches += 1;
                }
                Err(MicroError::Substrate(SubstrateError::NonFinite { context })) => {
                    warnings.push(format!("diverged at epoch {epoch}: {context}"));
                    model.params = snapshot;
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        epoch_mse.push(sum_mse / batches.max(1) as f64);
        epoch_mdl.push(sum_mdl / batches.max(1) as f64);
        snapshot = model.params.clone();
    }

    let report = MicroReport {
        epoch_mse,
        epoch_mdl,
        target_return: model.target_return,
        diverged,
        warnings,
    };
    Ok((model, report))
}

/// Nearest-rank quantile of the first-step returns.
fn first_return_quantile(trajectories: &[Trajectory], q: f64) -> f64 {
    let mut firsts: Vec<f64> = trajectories.iter().map(|t| t.steps[0].rtg).collect();
    firsts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((q.clamp(0.0, 1.0) * firsts.len() as f64).ceil() as usize).clamp(1, firsts.len());
    firsts[rank - 1]
}
