use super::{SubstrateError, Tape, Tensor, TensorId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Ordered, named parameter collection. Order is insertion order and is part
/// of the determinism contract (checkpoints, SGD traversal, grad checks).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        debug_assert!(
            !self.entries.iter().any(|(n, _)| *n == name),
            "duplicate parameter {name}"
        );
        self.entries.push((name, tensor));
    }

    /// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn insert_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(shape, values).expect("finite init"));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn coord_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub(crate) fn entry_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx].1
    }

    pub(crate) fn entry(&self, idx: usize) -> (&str, &Tensor) {
        let (n, t) = &self.entries[idx];
        (n.as_str(), t)
    }

    /// Registers every parameter on `tape`, preserving order.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let ids = self
            .entries
            .iter()
            .map(|(n, t)| (n.clone(), tape.input(t.clone())))
            .collect();
        Binding { ids }
    }
}

/// Tape handles for one registration of a [`ParamSet`].
pub struct Binding {
    ids: Vec<(String, TensorId)>,
}

impl Binding {
    pub fn id(&self, name: &str) -> TensorId {
        self.ids
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
            .1
    }

    /// Gradients for every bound parameter, in binding order.
    pub fn gradients(&self, tape: &Tape) -> Gradients {
        Gradients {
            entries: self
                .ids
                .iter()
                .map(|(n, id)| (n.clone(), tape.grad(*id).values().to_vec()))
                .collect(),
        }
    }
}

/// Named gradient buffers aligned with a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Gradients {
    entries: Vec<(String, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradients {
            entries: params
                .iter()
                .map(|(n, t)| (n.to_string(), vec![0.0; t.len()]))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| g.as_slice())
    }

    /// Accumulates `other` scaled by `k`.
    pub fn add_scaled(&mut self, other: &Gradients, k: f64) {
        for ((_, dst), (_, src)) in self.entries.iter_mut().zip(&other.entries) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (_, g) in &mut self.entries {
            g.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|(_, g)| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Scales gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
}

/// Adam moment buffers aligned with a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<(String, Vec<f64>)>,
    v: Vec<(String, Vec<f64>)>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = |p: &ParamSet| {
            p.iter()
                .map(|(n, t)| (n.to_string(), vec![0.0; t.len()]))
                .collect::<Vec<_>>()
        };
        AdamState {
            m: zeros(params),
            v: zeros(params),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update. Same contract as [`sgd_step`]:
    /// positive lr, finite gradients, identical inputs give identical output.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &Gradients,
        lr: f64,
    ) -> Result<(), SubstrateError> {
        if !(lr > 0.0) {
            return Err(SubstrateError::InvalidArgument(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((pname, tensor), (_, grad)), ((_, m), (_, v))) in params
            .entries
            .iter_mut()
            .zip(&grads.entries)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (i, g) in grad.iter().enumerate() {
                if !g.is_finite() {
                    return Err(SubstrateError::NonFinite {
                        context: format!("gradient of {pname} at index {i} is {g}"),
                    });
                }
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                tensor.values_mut()[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Plain SGD: p <- p - lr * g. Rejects non-positive learning rates and
/// aborts with diagnostics on any non-finite gradient.
pub fn sgd_step(params: &mut ParamSet, grads: &Gradients, lr: f64) -> Result<(), SubstrateError> {
    if !(lr > 0.0) {
        return Err(SubstrateError::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if params.entries.len() != grads.entries.len() {
        return Err(SubstrateError::InvalidArgument(format!(
            "gradient set has {} entries, parameter set has {}",
            grads.entries.len(),
            params.entries.len()
        )));
    }
    for ((pname, tensor), (gname, grad)) in params.entries.iter_mut().zip(&grads.entries) {
        if pname != gname {
            return Err(SubstrateError::InvalidArgument(format!(
                "gradient order mismatch: {gname} vs parameter {pname}"
            )));
        }
        for (i, g) in grad.iter().enumerate() {
            if !g.is_finite() {
                return Err(SubstrateError::NonFinite {
                    context: format!("gradient of {pname} at index {i} is {g}"),
                });
            }
        }
        for (p, g) in tensor.values_mut().iter_mut().zip(grad) {
            *p -= lr * g;
        }
    }
    Ok(())
}
