//! Return-conditioned sequence policy over interleaved
//! (return-to-go, state, action) tokens with causal attention.

use super::{MdpState, MicroError, TrajectoryStep, DAY_STEPS};
use crate::seed::stream_rng;
use crate::substrate::{
    causal_self_attention, linear, AttentionWeights, Binding, Checkpoint, ParamSet, Tape, Tensor,
    TensorId,
};

/// Token features: 3 type slots + the state payload width.
pub const TOKEN_DIM: usize = 3 + MdpState::DIM;

/// Fixed normalizer for return-to-go token features (day returns are a
/// couple of units per hour at most).
const RTG_SCALE: f64 = 12.0;

#[derive(Clone, Debug)]
pub struct DtModel {
    pub params: ParamSet,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub context_steps: usize,
    /// Return-to-go used to condition the first step at inference.
    pub target_return: f64,
}

/// Inference-time prefix: completed steps plus the pending decision point.
#[derive(Clone, Debug)]
pub struct DtPrefix {
    pub past: Vec<TrajectoryStep>,
    pub current_rtg: f64,
    pub current_state: MdpState,
}

impl DtModel {
    pub fn init(dim: usize, layers: usize, heads: usize, context_steps: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, &[0x6474]);
        let mut params = ParamSet::new();
        params.insert_uniform("embed.w", vec![TOKEN_DIM, dim], TOKEN_DIM, &mut rng);
        params.insert_uniform("embed.b", vec![dim], TOKEN_DIM, &mut rng);
        params.insert_uniform("pos", vec![3 * context_steps, dim], dim, &mut rng);
        for l in 0..layers {
            for name in ["wq", "wk", "wv"] {
                params.insert_uniform(format!("layer{l}.attn.{name}"), vec![dim, dim], dim, &mut rng);
            }
            // Zero-init output projections: each block starts as identity.
            params.insert(format!("layer{l}.attn.wo"), Tensor::zeros(vec![dim, dim]));
            params.insert_uniform(format!("layer{l}.ffn.w1"), vec![dim, 2 * dim], dim, &mut rng);
            params.insert_uniform(format!("layer{l}.ffn.b1"), vec![2 * dim], dim, &mut rng);
            params.insert(format!("layer{l}.ffn.w2"), Tensor::zeros(vec![2 * dim, dim]));
            params.insert_uniform(format!("layer{l}.ffn.b2"), vec![dim], 2 * dim, &mut rng);
        }
        params.insert_uniform("head.w", vec![dim, 1], dim, &mut rng);
        params.insert_uniform("head.b", vec![1], dim, &mut rng);
        DtModel {
            params,
            dim,
            layers,
            heads,
            context_steps,
            target_return: 0.0,
        }
    }

    fn token_rows(&self, steps: &[(f64, MdpState, Option<f64>)]) -> Vec<Vec<f64>> {
        let mut rows = Vec::with_capacity(3 * steps.len());
        for (rtg, state, action) in steps {
            let mut r_tok = vec![0.0; TOKEN_DIM];
            r_tok[0] = 1.0;
            r_tok[3] = rtg / RTG_SCALE;
            rows.push(r_tok);

            let mut s_tok = vec![0.0; TOKEN_DIM];
            s_tok[1] = 1.0;
            s_tok[3..].copy_from_slice(&state.features());
            rows.push(s_tok);

            if let Some(a) = action {
                let mut a_tok = vec![0.0; TOKEN_DIM];
                a_tok[2] = 1.0;
                a_tok[3] = *a;
                rows.push(a_tok);
            }
        }
        rows
    }

    /// Runs the trunk over a token matrix; returns the `[rows, dim]` output.
    fn trunk(&self, tape: &mut Tape, bind: &Binding, tokens: Tensor) -> Result<TensorId, MicroError> {
        let rows = tokens.rows();
        let x = tape.input(tokens);
        let emb = linear(tape, x, bind.id("embed.w"), bind.id("embed.b"))?;
        let pos = tape.slice_rows(bind.id("pos"), 0, rows)?;
        let mut h = tape.add(emb, pos)?;
        for l in 0..self.layers {
            let attn = AttentionWeights {
                wq: bind.id(&format!("layer{l}.attn.wq")),
                wk: bind.id(&format!("layer{l}.attn.wk")),
                wv: bind.id(&format!("layer{l}.attn.wv")),
                wo: bind.id(&format!("layer{l}.attn.wo")),
                heads: self.heads,
            };
            let a = causal_self_attention(tape, h, &attn, true, 3 * self.context_steps)?;
            h = tape.add(h, a)?;
            let f1 = linear(tape, h, bind.id(&format!("layer{l}.ffn.w1")), bind.id(&format!("layer{l}.ffn.b1")))?;
            let f1 = tape.relu(f1)?;
            let f2 = linear(tape, f1, bind.id(&format!("layer{l}.ffn.w2")), bind.id(&format!("layer{l}.ffn.b2")))?;
            h = tape.add(h, f2)?;
        }
        Ok(h)
    }

    /// Action cell of shape `[1,1]`: 1.0 + 0.2 tanh(head(trunk row)).
    fn action_head(&self, tape: &mut Tape, bind: &Binding, trunk: TensorId, row: usize) -> Result<TensorId, MicroError> {
        let r = tape.slice_rows(trunk, row, row + 1)?;
        let logit = linear(tape, r, bind.id("head.w"), bind.id("head.b"))?;
        let t = tape.tanh(logit)?;
        let scaled = tape.scale(t, 0.2)?;
        Ok(tape.add_scalar(scaled, 1.0)?)
    }

    /// Action predictions for every step of a training trajectory, read at
    /// the state-token positions; causal masking keeps step t blind to
    /// anything later than its own state token.
    pub fn forward_actions(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        steps: &[TrajectoryStep],
    ) -> Result<Vec<TensorId>, MicroError> {
        if steps.is_empty() || steps.len() > self.context_steps {
            return Err(MicroError::MalformedPrefix(format!(
                "{} steps outside 1..={}",
                steps.len(),
                self.context_steps
            )));
        }
        let triples: Vec<(f64, MdpState, Option<f64>)> =
            steps.iter().map(|s| (s.rtg, s.state, Some(s.action))).collect();
        let tokens = Tensor::matrix(&self.token_rows(&triples)).expect("token rows rectangular");
        let trunk = self.trunk(tape, bind, tokens)?;
        (0..steps.len())
            .map(|t| self.action_head(tape, bind, trunk, 3 * t + 1))
            .collect()
    }

    /// Single-action inference for the pending step of `prefix`.
    pub fn predict(&self, prefix: &DtPrefix) -> Result<f64, MicroError> {
        let steps = prefix.past.len() + 1;
        if steps > self.context_steps || steps > DAY_STEPS {
            return Err(MicroError::MalformedPrefix(format!(
                "prefix of {steps} steps exceeds context {}",
                self.context_steps.min(DAY_STEPS)
            )));
        }
        for (i, s) in prefix.past.iter().enumerate() {
            if !(s.rtg.is_finite() && s.action.is_finite()) {
                return Err(MicroError::MalformedPrefix(format!("non-finite step {i}")));
            }
        }
        if !prefix.current_rtg.is_finite() {
            return Err(MicroError::MalformedPrefix("non-finite return-to-go".into()));
        }
        let mut triples: Vec<(f64, MdpState, Option<f64>)> = prefix
            .past
            .iter()
            .map(|s| (s.rtg, s.state, Some(s.action)))
            .collect();
        triples.push((prefix.current_rtg, prefix.current_state, None));
        let tokens = Tensor::matrix(&self.token_rows(&triples)).expect("token rows rectangular");
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape);
        let trunk = self.trunk(&mut tape, &bind, tokens)?;
        let rows = 3 * prefix.past.len() + 2;
        let out = self.action_head(&mut tape, &bind, trunk, rows - 1)?;
        Ok(tape.value(out).as_scalar())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.params.clone())
            .with_meta("model", "sequence-policy")
            .with_meta("dim", self.dim.to_string())
            .with_meta("layers", self.layers.to_string())
            .with_meta("heads", self.heads.to_string())
            .with_meta("context_steps", self.context_steps.to_string())
            .with_meta("target_return", format!("{}", self.target_return))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, MicroError> {
        let missing = |what: &str| MicroError::Io(format!("checkpoint missing {what}"));
        Ok(DtModel {
            params: ckpt.params.clone(),
            dim: ckpt.meta_usize("dim").ok_or_else(|| missing("dim"))?,
            layers: ckpt.meta_usize("layers").ok_or_else(|| missing("layers"))?,
            heads: ckpt.meta_usize("heads").ok_or_else(|| missing("heads"))?,
            context_steps: ckpt.meta_usize("context_steps").ok_or_else(|| missing("context_steps"))?,
            target_return: ckpt.meta_f64("target_return").ok_or_else(|| missing("target_return"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::Strategy;

    fn state(hour: u8) -> MdpState {
        MdpState {
            hour,
            remaining_budget_frac: 1.0 - hour as f64 / 24.0,
            cost_frac: hour as f64 / 24.0,
            gmv_frac: 0.4,
            cpa_ratio: 0.9,
            strategy: Strategy::TCpa,
            prev_action: 1.0,
        }
    }

    fn step(hour: u8, action: f64) -> TrajectoryStep {
        TrajectoryStep { rtg: 6.0 - hour as f64 * 0.2, state: state(hour), action, reward: 0.2 }
    }

    fn prefix(len: usize) -> DtPrefix {
        DtPrefix {
            past: (0..len as u8).map(|h| step(h, 1.05)).collect(),
            current_rtg: 4.0,
            current_state: state(len as u8),
        }
    }

    #[test]
    fn predictions_always_land_in_the_action_range() {
        for seed in 0..8 {
            let model = DtModel::init(8, 2, 2, 24, seed);
            for len in [0, 1, 5, 23] {
                let a = model.predict(&prefix(len)).unwrap();
                assert!((0.8..=1.2).contains(&a), "seed {seed} len {len}: {a}");
            }
        }
    }

    /// Init model with the zero-initialized projections replaced, so the
    /// attention path genuinely mixes tokens.
    fn dense_model(seed: u64) -> DtModel {
        let mut model = DtModel::init(8, 2, 2, 24, seed);
        let mut rng = crate::seed::TestRng::new(seed ^ 0xabc);
        let mut params = crate::substrate::ParamSet::new();
        for (name, t) in model.params.iter() {
            if t.values().iter().all(|v| *v == 0.0) {
                let vals = rng.uniform_vec(t.len());
                params.insert(name, Tensor::new(t.shape().to_vec(), vals).unwrap());
            } else {
                params.insert(name, t.clone());
            }
        }
        model.params = params;
        model
    }

    #[test]
    fn future_tokens_cannot_change_earlier_predictions() {
        let model = dense_model(3);
        let steps: Vec<TrajectoryStep> = (0..6u8).map(|h| step(h, 1.1)).collect();
        let mut tape = Tape::new();
        let bind = model.params.bind(&mut tape);
        let preds = model.forward_actions(&mut tape, &bind, &steps).unwrap();
        let base: Vec<f64> = preds.iter().map(|p| tape.value(*p).as_scalar()).collect();

        let mut tampered = steps.clone();
        tampered[4].action = 0.85;
        tampered[5].rtg = -3.0;
        tampered[5].state.gmv_frac = 3.0;
        tampered[5].action = 0.8;
        let mut tape2 = Tape::new();
        let bind2 = model.params.bind(&mut tape2);
        let preds2 = model.forward_actions(&mut tape2, &bind2, &tampered).unwrap();
        for t in 0..4 {
            let a = base[t];
            let b = tape2.value(preds2[t]).as_scalar();
            assert_eq!(a.to_bits(), b.to_bits(), "step {t} saw the future");
        }
        // The tampered steps themselves may move.
        assert_ne!(base[5].to_bits(), tape2.value(preds2[5]).as_scalar().to_bits());
    }

    #[test]
    fn prediction_is_deterministic() {
        let model = DtModel::init(8, 2, 2, 24, 5);
        let a = model.predict(&prefix(7)).unwrap();
        let b = model.predict(&prefix(7)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn rejects_oversized_or_malformed_prefixes() {
        let model = DtModel::init(8, 1, 2, 24, 6);
        assert!(matches!(
            model.predict(&prefix(24)),
            Err(MicroError::MalformedPrefix(_))
        ));
        let mut p = prefix(2);
        p.current_rtg = f64::NAN;
        assert!(model.predict(&p).is_err());
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let mut model = DtModel::init(8, 2, 2, 24, 9);
        model.target_return = 7.25;
        let text = model.to_checkpoint().render();
        let back = DtModel::from_checkpoint(&Checkpoint::parse(&text).unwrap()).unwrap();
        assert_eq!(back.target_return, 7.25);
        let p = prefix(5);
        assert_eq!(
            model.predict(&p).unwrap().to_bits(),
            back.predict(&p).unwrap().to_bits()
        );
    }
}
