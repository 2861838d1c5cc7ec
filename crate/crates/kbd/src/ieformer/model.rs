//! The price-volume model: history encoder, isotonic interpreter, losses.

use super::data::{HistoryDay, TrainingSample};
use super::partition::{isotonic_embed, PartitionSpec};
use super::IeformerError;
use crate::substrate::{
    causal_self_attention, linear, AttentionWeights, Binding, Checkpoint, ParamSet, Tape, Tensor,
    TensorId,
};
use crate::seed::stream_rng;

/// History-day token features: ln(1+cost), ln(1+tCPA), strategy one-hot.
pub const TOKEN_DIM: usize = 5;

/// Guard added to the smoothness denominator.
const SMOOTH_EPS: f64 = 1e-12;

/// Hidden width of the unconstrained regression head.
const E2E_HIDDEN: usize = 16;

/// Which prediction head sits on top of the encoder.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Interpreter: tCPA = w0 + P(cost) . W with W = softplus(head(e)).
    Isotonic,
    /// Unconstrained regression on [embedding, ln(1+cost)]; the ablation
    /// that drops the interpreter.
    EndToEnd,
}

/// Trained (or initialized) macro model together with its partition.
#[derive(Clone, Debug)]
pub struct PriceVolumeModel {
    pub params: ParamSet,
    pub spec: PartitionSpec,
    pub kind: ModelKind,
    pub dim: usize,
    pub heads: usize,
    pub max_history: usize,
    /// Targets are trained in units of this scale; predictions multiply back.
    pub target_scale: f64,
    /// Scales for the ln(1+cost) and ln(1+tCPA) token features.
    pub feat_scale: (f64, f64),
}

impl PriceVolumeModel {
    pub fn init(
        spec: PartitionSpec,
        kind: ModelKind,
        dim: usize,
        heads: usize,
        max_history: usize,
        target_scale: f64,
        seed: u64,
    ) -> Self {
        let mut rng = stream_rng(seed, &[0x6d61]);
        let mut params = ParamSet::new();
        params.insert_uniform("encoder.token_default", vec![1, TOKEN_DIM], TOKEN_DIM, &mut rng);
        params.insert_uniform("encoder.embed.w", vec![TOKEN_DIM, dim], TOKEN_DIM, &mut rng);
        params.insert_uniform("encoder.embed.b", vec![dim], TOKEN_DIM, &mut rng);
        for name in ["wq", "wk", "wv"] {
            params.insert_uniform(format!("encoder.attn.{name}"), vec![dim, dim], dim, &mut rng);
        }
        // Zero output projection: attention starts as identity-plus-nothing
        // and opens up during training.
        params.insert("encoder.attn.wo", Tensor::zeros(vec![dim, dim]));
        let n = spec.segments();
        match kind {
            ModelKind::Isotonic => {
                params.insert_uniform("head.w", vec![dim, n + 1], dim, &mut rng);
                params.insert_uniform("head.b", vec![n + 1], dim, &mut rng);
            }
            ModelKind::EndToEnd => {
                params.insert_uniform("e2e.w1", vec![dim + 1, E2E_HIDDEN], dim + 1, &mut rng);
                params.insert_uniform("e2e.b1", vec![E2E_HIDDEN], dim + 1, &mut rng);
                params.insert_uniform("e2e.w2", vec![E2E_HIDDEN, 1], E2E_HIDDEN, &mut rng);
                params.insert_uniform("e2e.b2", vec![1], E2E_HIDDEN, &mut rng);
            }
        }
        PriceVolumeModel {
            params,
            spec,
            kind,
            dim,
            heads,
            max_history,
            target_scale,
            feat_scale: (1.0, 1.0),
        }
    }

    pub fn history_tokens(&self, history: &[HistoryDay]) -> Option<Tensor> {
        if history.is_empty() {
            return None;
        }
        let start = history.len().saturating_sub(self.max_history);
        let (fc, ft) = self.feat_scale;
        let rows: Vec<Vec<f64>> = history[start..]
            .iter()
            .map(|d| {
                let one_hot = d.strategy.one_hot();
                vec![d.cost.ln_1p() / fc, d.tcpa.ln_1p() / ft, one_hot[0], one_hot[1], one_hot[2]]
            })
            .collect();
        Some(Tensor::matrix(&rows).expect("history rows are rectangular"))
    }

    /// Encodes a history into a `[1, dim]` embedding on the tape.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        history: &[HistoryDay],
    ) -> Result<TensorId, IeformerError> {
        let x = match self.history_tokens(history) {
            Some(t) => tape.input(t),
            None => bind.id("encoder.token_default"),
        };
        let h = linear(tape, x, bind.id("encoder.embed.w"), bind.id("encoder.embed.b"))?;
        let attn = AttentionWeights {
            wq: bind.id("encoder.attn.wq"),
            wk: bind.id("encoder.attn.wk"),
            wv: bind.id("encoder.attn.wv"),
            wo: bind.id("encoder.attn.wo"),
            heads: self.heads,
        };
        let a = causal_self_attention(tape, h, &attn, false, self.max_history)?;
        let res = tape.add(h, a)?;
        Ok(tape.mean_rows(res)?)
    }

    /// Positive weight row [w0, w1..wN] on the tape (isotonic head only).
    pub fn weight_row(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        history: &[HistoryDay],
    ) -> Result<TensorId, IeformerError> {
        debug_assert_eq!(self.kind, ModelKind::Isotonic);
        let e = self.encode(tape, bind, history)?;
        let raw = linear(tape, e, bind.id("head.w"), bind.id("head.b"))?;
        Ok(tape.softplus(raw)?)
    }

    /// Scaled-unit prediction for (history, cost) on the tape.
    pub fn predict_scaled(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        history: &[HistoryDay],
        cost: f64,
    ) -> Result<TensorId, IeformerError> {
        match self.kind {
            ModelKind::Isotonic => {
                let w = self.weight_row(tape, bind, history)?;
                let mut coverage = vec![1.0]; // intercept slot
                coverage.extend(isotonic_embed(cost, &self.spec));
                let p = tape.input(Tensor::row(coverage));
                let contrib = tape.mul(w, p)?;
                Ok(tape.sum(contrib)?)
            }
            ModelKind::EndToEnd => {
                let e = self.encode(tape, bind, history)?;
                let c = tape.input(Tensor::row(vec![cost.ln_1p() / self.feat_scale.0]));
                let cat = tape.concat_cols(&[e, c])?;
                let h1 = linear(tape, cat, bind.id("e2e.w1"), bind.id("e2e.b1"))?;
                let h1 = tape.relu(h1)?;
                let out = linear(tape, h1, bind.id("e2e.w2"), bind.id("e2e.b2"))?;
                Ok(tape.sum(out)?)
            }
        }
    }

    /// Predicted tCPA in original currency units.
    pub fn predict_tcpa(&self, history: &[HistoryDay], cost: f64) -> Result<f64, IeformerError> {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape);
        let pred = self.predict_scaled(&mut tape, &bind, history, cost)?;
        Ok(tape.value(pred).as_scalar() * self.target_scale)
    }

    /// Day-level base target: the tCPA at which the model expects the whole
    /// budget to be spent, i.e. the prediction at cost = B.
    pub fn base_target(&self, history: &[HistoryDay], budget: f64) -> Result<f64, IeformerError> {
        self.predict_tcpa(history, budget)
    }

    /// Intercept and marginal weights in original units (isotonic head).
    pub fn interpretable_weights(&self, history: &[HistoryDay]) -> Result<(f64, Vec<f64>), IeformerError> {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape);
        let w = self.weight_row(&mut tape, &bind, history)?;
        let vals = tape.value(w).values();
        let w0 = vals[0] * self.target_scale;
        let marginals = vals[1..].iter().map(|v| v * self.target_scale).collect();
        Ok((w0, marginals))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut params = self.params.clone();
        params.insert(
            "partition.boundaries",
            Tensor::vector(self.spec.boundaries().to_vec()),
        );
        Checkpoint::new(params)
            .with_meta("kind", match self.kind {
                ModelKind::Isotonic => "isotonic",
                ModelKind::EndToEnd => "end-to-end",
            })
            .with_meta("model", "price-volume")
            .with_meta("dim", self.dim.to_string())
            .with_meta("heads", self.heads.to_string())
            .with_meta("max_history", self.max_history.to_string())
            .with_meta("target_scale", format!("{}", self.target_scale))
            .with_meta("feat_scale_cost", format!("{}", self.feat_scale.0))
            .with_meta("feat_scale_tcpa", format!("{}", self.feat_scale.1))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, IeformerError> {
        let missing = |what: &str| IeformerError::Io(format!("checkpoint missing {what}"));
        let boundaries = ckpt
            .params
            .get("partition.boundaries")
            .ok_or_else(|| missing("partition.boundaries"))?;
        let spec = PartitionSpec::new(boundaries.values().to_vec())?;
        let kind = match ckpt.meta.get("kind").map(String::as_str) {
            Some("isotonic") => ModelKind::Isotonic,
            Some("end-to-end") => ModelKind::EndToEnd,
            _ => return Err(missing("kind")),
        };
        let mut params = ParamSet::new();
        for (name, tensor) in ckpt.params.iter() {
            if name != "partition.boundaries" {
                params.insert(name, tensor.clone());
            }
        }
        Ok(PriceVolumeModel {
            params,
            spec,
            kind,
            dim: ckpt.meta_usize("dim").ok_or_else(|| missing("dim"))?,
            heads: ckpt.meta_usize("heads").ok_or_else(|| missing("heads"))?,
            max_history: ckpt.meta_usize("max_history").ok_or_else(|| missing("max_history"))?,
            target_scale: ckpt.meta_f64("target_scale").ok_or_else(|| missing("target_scale"))?,
            feat_scale: (
                ckpt.meta_f64("feat_scale_cost").ok_or_else(|| missing("feat_scale_cost"))?,
                ckpt.meta_f64("feat_scale_tcpa").ok_or_else(|| missing("feat_scale_tcpa"))?,
            ),
        })
    }
}

/// Smoothness penalty over the N marginal weights (intercept excluded):
/// sum_j (w_j - w_{j+1})^2 / (w_j * w_{j+1}).
pub fn loss_smooth_value(marginals: &[f64]) -> f64 {
    marginals
        .windows(2)
        .map(|w| (w[0] - w[1]).powi(2) / (w[0] * w[1] + SMOOTH_EPS))
        .sum()
}

/// Diminishing-marginal-returns penalty: sum_j relu(w_{j+1}/step_{j+1} - w_j/step_j).
pub fn loss_margin_value(marginals: &[f64], spec: &PartitionSpec) -> f64 {
    debug_assert_eq!(marginals.len(), spec.segments());
    let slopes: Vec<f64> = marginals
        .iter()
        .enumerate()
        .map(|(k, w)| w / spec.step(k))
        .collect();
    slopes.windows(2).map(|s| (s[1] - s[0]).max(0.0)).sum()
}

/// Tape version of [`loss_smooth_value`] for a weight row `[1, N+1]`.
pub fn loss_smooth(tape: &mut Tape, weight_row: TensorId) -> Result<TensorId, IeformerError> {
    let n_plus_1 = tape.value(weight_row).cols();
    let a = tape.slice_cols(weight_row, 1, n_plus_1 - 1)?;
    let b = tape.slice_cols(weight_row, 2, n_plus_1)?;
    let d = tape.sub(a, b)?;
    let num = tape.mul(d, d)?;
    let den = tape.mul(a, b)?;
    let den = tape.add_scalar(den, SMOOTH_EPS)?;
    let ratio = tape.div(num, den)?;
    Ok(tape.sum(ratio)?)
}

/// Tape version of [`loss_margin_value`] for a weight row `[1, N+1]`.
pub fn loss_margin(
    tape: &mut Tape,
    weight_row: TensorId,
    spec: &PartitionSpec,
) -> Result<TensorId, IeformerError> {
    let n = spec.segments();
    let marginals = tape.slice_cols(weight_row, 1, n + 1)?;
    let inv_steps = tape.input(Tensor::row(spec.steps().iter().map(|s| 1.0 / s).collect()));
    let slopes = tape.mul(marginals, inv_steps)?;
    let left = tape.slice_cols(slopes, 0, n - 1)?;
    let right = tape.slice_cols(slopes, 1, n)?;
    let diff = tape.sub(right, left)?;
    let viol = tape.relu(diff)?;
    Ok(tape.sum(viol)?)
}

/// Regularizer strengths for the total objective.
#[derive(Copy, Clone, Debug)]
pub struct LossAlphas {
    pub smooth: f64,
    pub margin: f64,
}

impl Default for LossAlphas {
    fn default() -> Self {
        LossAlphas { smooth: 0.5, margin: 0.1 }
    }
}

/// Weighted prediction loss plus the two regularizers over a batch:
/// sum_i weight_i (pred_i - target_i)^2 / sum_i weight_i
///   + alpha_smooth * mean_i L_smooth + alpha_margin * mean_i L_margin.
/// Targets enter in scaled units (target / target_scale).
pub fn loss_total(
    tape: &mut Tape,
    bind: &Binding,
    model: &PriceVolumeModel,
    batch: &[TrainingSample],
    alphas: LossAlphas,
) -> Result<TensorId, IeformerError> {
    if batch.is_empty() {
        return Err(IeformerError::InsufficientData("empty batch".into()));
    }
    let mut weight_sum = 0.0;
    let mut sq_acc: Option<TensorId> = None;
    let mut smooth_acc: Option<TensorId> = None;
    let mut margin_acc: Option<TensorId> = None;
    let fold = |tape: &mut Tape, acc: &mut Option<TensorId>, term: TensorId| -> Result<(), IeformerError> {
        *acc = Some(match acc.take() {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
        Ok(())
    };

    for sample in batch {
        let pred = match model.kind {
            ModelKind::Isotonic => {
                let w = model.weight_row(tape, bind, &sample.history)?;
                if alphas.smooth != 0.0 {
                    let s = loss_smooth(tape, w)?;
                    fold(tape, &mut smooth_acc, s)?;
                }
                if alphas.margin != 0.0 {
                    let m = loss_margin(tape, w, &model.spec)?;
                    fold(tape, &mut margin_acc, m)?;
                }
                let mut coverage = vec![1.0];
                coverage.extend(isotonic_embed(sample.cost, &model.spec));
                let p = tape.input(Tensor::row(coverage));
                let contrib = tape.mul(w, p)?;
                tape.sum(contrib)?
            }
            ModelKind::EndToEnd => model.predict_scaled(tape, bind, &sample.history, sample.cost)?,
        };
        let target = tape.input(Tensor::scalar(sample.target_tcpa / model.target_scale));
        let d = tape.sub(pred, target)?;
        let sq = tape.mul(d, d)?;
        let wsq = tape.scale(sq, sample.weight)?;
        weight_sum += sample.weight;
        fold(tape, &mut sq_acc, wsq)?;
    }

    let mut total = tape.scale(sq_acc.expect("non-empty batch"), 1.0 / weight_sum)?;
    let b = batch.len() as f64;
    if let Some(s) = smooth_acc {
        let s = tape.scale(s, alphas.smooth / b)?;
        total = tape.add(total, s)?;
    }
    if let Some(m) = margin_acc {
        let m = tape.scale(m, alphas.margin / b)?;
        total = tape.add(total, m)?;
    }
    Ok(total)
}
