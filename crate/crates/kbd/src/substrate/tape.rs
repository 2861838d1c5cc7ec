use super::{SubstrateError, Tensor};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TensorId(usize);

/// Attention projection weights, all shape `[dim, dim]`, already on the tape.
#[derive(Copy, Clone, Debug)]
pub struct AttentionWeights {
    pub wq: TensorId,
    pub wk: TensorId,
    pub wv: TensorId,
    pub wo: TensorId,
    pub heads: usize,
}

enum Rec {
    MatMul { a: usize, b: usize, out: usize },
    Transpose { a: usize, out: usize },
    Add { a: usize, b: usize, out: usize },
    Sub { a: usize, b: usize, out: usize },
    Mul { a: usize, b: usize, out: usize },
    Div { a: usize, b: usize, out: usize },
    AddBias { x: usize, bias: usize, out: usize },
    Scale { a: usize, k: f64, out: usize },
    AddScalar { a: usize, out: usize },
    Softplus { a: usize, out: usize },
    Relu { a: usize, out: usize },
    Tanh { a: usize, out: usize },
    Sum { a: usize, out: usize },
    Mean { a: usize, out: usize },
    MeanRows { a: usize, out: usize },
    SoftmaxRows { a: usize, out: usize, causal: bool },
    SliceRows { a: usize, from: usize, out: usize },
    SliceCols { a: usize, from: usize, out: usize },
    ConcatCols { parts: Vec<usize>, out: usize },
}

impl Rec {
    fn out_index(&self) -> usize {
        match self {
            Rec::MatMul { out, .. }
            | Rec::Transpose { out, .. }
            | Rec::Add { out, .. }
            | Rec::Sub { out, .. }
            | Rec::Mul { out, .. }
            | Rec::Div { out, .. }
            | Rec::AddBias { out, .. }
            | Rec::Scale { out, .. }
            | Rec::AddScalar { out, .. }
            | Rec::Softplus { out, .. }
            | Rec::Relu { out, .. }
            | Rec::Tanh { out, .. }
            | Rec::Sum { out, .. }
            | Rec::Mean { out, .. }
            | Rec::MeanRows { out, .. }
            | Rec::SoftmaxRows { out, .. }
            | Rec::SliceRows { out, .. }
            | Rec::SliceCols { out, .. }
            | Rec::ConcatCols { out, .. } => *out,
        }
    }
}

/// Records forward operations and replays them in exact reverse order on
/// [`Tape::backward`]. Tensors that do not participate in the requested
/// output keep gradients of exactly zero.
#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    grads: Vec<Vec<f64>>,
    ops: Vec<Rec>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Registers a leaf tensor (input, parameter, or constant).
    pub fn input(&mut self, t: Tensor) -> TensorId {
        self.push(t)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.values[id.0]
    }

    /// Gradient buffer of `id`, shaped like its value.
    pub fn grad(&self, id: TensorId) -> Tensor {
        Tensor::new(self.values[id.0].shape().to_vec(), self.grads[id.0].clone())
            .expect("gradient buffer matches value shape")
    }

    fn push(&mut self, t: Tensor) -> TensorId {
        let id = self.values.len();
        self.grads.push(vec![0.0; t.len()]);
        self.values.push(t);
        TensorId(id)
    }

    fn record(&mut self, t: Tensor, op: impl FnOnce(usize) -> Rec) -> Result<TensorId, SubstrateError> {
        t.check_finite("forward pass")?;
        let id = self.push(t);
        self.ops.push(op(id.0));
        Ok(id)
    }

    fn rank2(&self, op: &'static str, id: TensorId) -> Result<(usize, usize), SubstrateError> {
        let t = &self.values[id.0];
        if t.rank() != 2 {
            return Err(SubstrateError::ShapeMismatch {
                op,
                detail: format!("expected rank-2 tensor, got shape {}", t.shape_string()),
            });
        }
        Ok((t.rows(), t.cols()))
    }

    fn same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<(), SubstrateError> {
        if self.values[a.0].shape() != self.values[b.0].shape() {
            return Err(SubstrateError::ShapeMismatch {
                op,
                detail: format!(
                    "{} vs {}",
                    self.values[a.0].shape_string(),
                    self.values[b.0].shape_string()
                ),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, SubstrateError> {
        let (m, k) = self.rank2("matmul", a)?;
        let (k2, n) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(SubstrateError::ShapeMismatch {
                op: "matmul",
                detail: format!(
                    "inner dims differ: {} vs {}",
                    self.values[a.0].shape_string(),
                    self.values[b.0].shape_string()
                ),
            });
        }
        let av = self.values[a.0].values();
        let bv = self.values[b.0].values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        self.record(t, |o| Rec::MatMul { a: a.0, b: b.0, out: o })
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId, SubstrateError> {
        let (m, n) = self.rank2("transpose", a)?;
        let av = self.values[a.0].values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        self.record(t, |o| Rec::Transpose { a: a.0, out: o })
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, SubstrateError> {
        self.same_shape("add", a, b)?;
        let t = self.zip(a, b, |x, y| x + y)?;
        self.record(t, |o| Rec::Add { a: a.0, b: b.0, out: o })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, SubstrateError> {
        self.same_shape("sub", a, b)?;
        let t = self.zip(a, b, |x, y| x - y)?;
        self.record(t, |o| Rec::Sub { a: a.0, b: b.0, out: o })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, SubstrateError> {
        self.same_shape("mul", a, b)?;
        let t = self.zip(a, b, |x, y| x * y)?;
        self.record(t, |o| Rec::Mul { a: a.0, b: b.0, out: o })
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, SubstrateError> {
        self.same_shape("div", a, b)?;
        let t = self.zip(a, b, |x, y| x / y)?;
        self.record(t, |o| Rec::Div { a: a.0, b: b.0, out: o })
    }

    fn zip(&self, a: TensorId, b: TensorId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, SubstrateError> {
        let av = self.values[a.0].values();
        let bv = self.values[b.0].values();
        let out: Vec<f64> = av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(self.values[a.0].shape().to_vec(), out)
    }

    /// Adds a rank-1 bias of length `cols` to every row of a rank-2 tensor.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId, SubstrateError> {
        let (r, c) = self.rank2("add_bias", x)?;
        let bt = &self.values[bias.0];
        if bt.rank() != 1 || bt.len() != c {
            return Err(SubstrateError::ShapeMismatch {
                op: "add_bias",
                detail: format!(
                    "bias shape {} does not match {} columns",
                    bt.shape_string(),
                    c
                ),
            });
        }
        let xv = self.values[x.0].values();
        let bv = self.values[bias.0].values();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(xv[i * c + j] + bv[j]);
            }
        }
        let t = Tensor::new(vec![r, c], out)?;
        self.record(t, |o| Rec::AddBias { x: x.0, bias: bias.0, out: o })
    }

    pub fn scale(&mut self, a: TensorId, k: f64) -> Result<TensorId, SubstrateError> {
        let t = self.map(a, |x| x * k)?;
        self.record(t, |o| Rec::Scale { a: a.0, k, out: o })
    }

    pub fn add_scalar(&mut self, a: TensorId, k: f64) -> Result<TensorId, SubstrateError> {
        let t = self.map(a, |x| x + k)?;
        self.record(t, |o| Rec::AddScalar { a: a.0, out: o })
    }

    /// Elementwise ln(1 + exp(x)), stabilized as max(x,0) + ln(1 + exp(-|x|))
    /// so large |x| cannot overflow. Output is strictly positive.
    pub fn softplus(&mut self, a: TensorId) -> Result<TensorId, SubstrateError> {
        let t = self.map(a, softplus_scalar)?;
        self.record(t, |o| Rec::Softplus { a: a.0, out: o })
    }

    /// Elementwise max(0, x); the subgradient at 0 is taken as 0.
    pub fn relu(&mut self, a: TensorId) -> Result<TensorId, SubstrateError> {
        let t = self.map(a, |x| x.max(0.0))?;
        self.record(t, |o| Rec::Relu { a: a.0, out: o })
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId, SubstrateError> {
        let t = self.map(a, f64::tanh)?;
        self.record(t, |o| Rec::Tanh { a: a.0, out: o })
    }

    fn map(&self, a: TensorId, f: impl Fn(f64) -> f64) -> Result<Tensor, SubstrateError> {
        let out: Vec<f64> = self.values[a.0].values().iter().map(|x| f(*x)).collect();
        Tensor::new(self.values[a.0].shape().to_vec(), out)
    }

    pub fn sum(&mut self, a: TensorId) -> Result<TensorId, SubstrateError> {
        let s: f64 = self.values[a.0].values().iter().sum();
        self.record(Tensor::scalar(s), |o| Rec::Sum { a: a.0, out: o })
    }

    pub fn mean(&mut self, a: TensorId) -> Result<TensorId, SubstrateError> {
        let n = self.values[a.0].len();
        if n == 0 {
            return Err(SubstrateError::InvalidArgument("mean of empty tensor".into()));
        }
        let s: f64 = self.values[a.0].values().iter().sum::<f64>() / n as f64;
        self.record(Tensor::scalar(s), |o| Rec::Mean { a: a.0, out: o })
    }

    /// Column means of a rank-2 tensor, returned as shape `[1, cols]`.
    pub fn mean_rows(&mut self, a: TensorId) -> Result<TensorId, SubstrateError> {
        let (r, c) = self.rank2("mean_rows", a)?;
        if r == 0 {
            return Err(SubstrateError::InvalidArgument("mean_rows of empty tensor".into()));
        }
        let av = self.values[a.0].values();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += av[i * c + j];
            }
        }
        for v in &mut out {
            *v /= r as f64;
        }
        let t = Tensor::new(vec![1, c], out)?;
        self.record(t, |o| Rec::MeanRows { a: a.0, out: o })
    }

    /// Row-wise softmax. With `causal` set the input must be square and
    /// entries above the diagonal get probability exactly zero.
    pub fn softmax_rows(&mut self, a: TensorId, causal: bool) -> Result<TensorId, SubstrateError> {
        let (r, c) = self.rank2("softmax_rows", a)?;
        if causal && r != c {
            return Err(SubstrateError::ShapeMismatch {
                op: "softmax_rows",
                detail: format!("causal mask needs a square matrix, got {r}x{c}"),
            });
        }
        let av = self.values[a.0].values();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let limit = if causal { i + 1 } else { c };
            let row = &av[i * c..i * c + limit];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..limit {
                let e = (row[j] - max).exp();
                out[i * c + j] = e;
                denom += e;
            }
            for j in 0..limit {
                out[i * c + j] /= denom;
            }
        }
        let t = Tensor::new(vec![r, c], out)?;
        self.record(t, |o| Rec::SoftmaxRows { a: a.0, out: o, causal })
    }

    pub fn slice_rows(&mut self, a: TensorId, from: usize, to: usize) -> Result<TensorId, SubstrateError> {
        let (r, c) = self.rank2("slice_rows", a)?;
        if from >= to || to > r {
            return Err(SubstrateError::ShapeMismatch {
                op: "slice_rows",
                detail: format!("rows {from}..{to} out of bounds for {r} rows"),
            });
        }
        let av = self.values[a.0].values();
        let out = av[from * c..to * c].to_vec();
        let t = Tensor::new(vec![to - from, c], out)?;
        self.record(t, |o| Rec::SliceRows { a: a.0, from, out: o })
    }

    pub fn slice_cols(&mut self, a: TensorId, from: usize, to: usize) -> Result<TensorId, SubstrateError> {
        let (r, c) = self.rank2("slice_cols", a)?;
        if from >= to || to > c {
            return Err(SubstrateError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("cols {from}..{to} out of bounds for {c} cols"),
            });
        }
        let av = self.values[a.0].values();
        let w = to - from;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&av[i * c + from..i * c + to]);
        }
        let t = Tensor::new(vec![r, w], out)?;
        self.record(t, |o| Rec::SliceCols { a: a.0, from, out: o })
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId, SubstrateError> {
        if parts.is_empty() {
            return Err(SubstrateError::InvalidArgument("concat_cols of no tensors".into()));
        }
        let (r, _) = self.rank2("concat_cols", parts[0])?;
        let mut total = 0;
        for p in parts {
            let (pr, pc) = self.rank2("concat_cols", *p)?;
            if pr != r {
                return Err(SubstrateError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row counts differ: {r} vs {pr}"),
                });
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                let t = &self.values[p.0];
                let c = t.cols();
                out.extend_from_slice(&t.values()[i * c..(i + 1) * c]);
            }
        }
        let t = Tensor::new(vec![r, total], out)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.record(t, |o| Rec::ConcatCols { parts: ids, out: o })
    }

    /// Propagates gradients from a scalar output back through every recorded
    /// operation in exact reverse record order.
    pub fn backward(&mut self, out: TensorId) -> Result<(), SubstrateError> {
        if self.values[out.0].len() != 1 {
            return Err(SubstrateError::InvalidArgument(format!(
                "backward requires a scalar output, got shape {}",
                self.values[out.0].shape_string()
            )));
        }
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        self.grads[out.0][0] = 1.0;

        for idx in (0..self.ops.len()).rev() {
            // The output gradient is moved out (a pointer swap) for the
            // duration of the op, so no arm clones or conflicts with the
            // input-gradient borrows.
            let out_idx = self.ops[idx].out_index();
            let go = std::mem::take(&mut self.grads[out_idx]);
            let (values, grads, ops) = (&self.values, &mut self.grads, &self.ops);
            match &ops[idx] {
                Rec::MatMul { a, b, .. } => {
                    let (m, k) = (values[*a].rows(), values[*a].cols());
                    let n = values[*b].cols();
                    let av = values[*a].values();
                    let bv = values[*b].values();
                    {
                        let ga = &mut grads[*a];
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += go[i * n + j] * bv[p * n + j];
                                }
                                ga[i * k + p] += acc;
                            }
                        }
                    }
                    let gb = &mut grads[*b];
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += av[i * k + p] * go[i * n + j];
                            }
                            gb[p * n + j] += acc;
                        }
                    }
                }
                Rec::Transpose { a, .. } => {
                    let (m, n) = (values[*a].rows(), values[*a].cols());
                    let ga = &mut grads[*a];
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += go[j * m + i];
                        }
                    }
                }
                Rec::Add { a, b, .. } => {
                    add_into(&mut grads[*a], &go, 1.0);
                    add_into(&mut grads[*b], &go, 1.0);
                }
                Rec::Sub { a, b, .. } => {
                    add_into(&mut grads[*a], &go, 1.0);
                    add_into(&mut grads[*b], &go, -1.0);
                }
                Rec::Mul { a, b, .. } => {
                    let av = values[*a].values().to_vec();
                    let bv = values[*b].values();
                    for (i, g) in go.iter().enumerate() {
                        grads[*a][i] += g * bv[i];
                    }
                    for (i, g) in go.iter().enumerate() {
                        grads[*b][i] += g * av[i];
                    }
                }
                Rec::Div { a, b, .. } => {
                    let av = values[*a].values().to_vec();
                    let bv = values[*b].values().to_vec();
                    for (i, g) in go.iter().enumerate() {
                        grads[*a][i] += g / bv[i];
                    }
                    for (i, g) in go.iter().enumerate() {
                        grads[*b][i] -= g * av[i] / (bv[i] * bv[i]);
                    }
                }
                Rec::AddBias { x, bias, .. } => {
                    let c = values[*x].cols();
                    add_into(&mut grads[*x], &go, 1.0);
                    let gb = &mut grads[*bias];
                    for (i, g) in go.iter().enumerate() {
                        gb[i % c] += g;
                    }
                }
                Rec::Scale { a, k, .. } => {
                    add_into(&mut grads[*a], &go, *k);
                }
                Rec::AddScalar { a, .. } => {
                    add_into(&mut grads[*a], &go, 1.0);
                }
                Rec::Softplus { a, .. } => {
                    let av = values[*a].values();
                    let ga = &mut grads[*a];
                    for (i, g) in go.iter().enumerate() {
                        ga[i] += g * sigmoid(av[i]);
                    }
                }
                Rec::Relu { a, .. } => {
                    let av = values[*a].values();
                    let ga = &mut grads[*a];
                    for (i, g) in go.iter().enumerate() {
                        if av[i] > 0.0 {
                            ga[i] += g;
                        }
                    }
                }
                Rec::Tanh { a, .. } => {
                    let ov = values[out_idx].values();
                    let ga = &mut grads[*a];
                    for (i, g) in go.iter().enumerate() {
                        ga[i] += g * (1.0 - ov[i] * ov[i]);
                    }
                }
                Rec::Sum { a, .. } => {
                    let g = go[0];
                    grads[*a].iter_mut().for_each(|v| *v += g);
                }
                Rec::Mean { a, .. } => {
                    let g = go[0] / values[*a].len() as f64;
                    grads[*a].iter_mut().for_each(|v| *v += g);
                }
                Rec::MeanRows { a, .. } => {
                    let (r, c) = (values[*a].rows(), values[*a].cols());
                    let ga = &mut grads[*a];
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += go[j] / r as f64;
                        }
                    }
                }
                Rec::SoftmaxRows { a, causal, .. } => {
                    let (r, c) = (values[*a].rows(), values[*a].cols());
                    let ov = values[out_idx].values();
                    let ga = &mut grads[*a];
                    for i in 0..r {
                        let limit = if *causal { i + 1 } else { c };
                        let mut dot = 0.0;
                        for j in 0..limit {
                            dot += go[i * c + j] * ov[i * c + j];
                        }
                        for j in 0..limit {
                            ga[i * c + j] += ov[i * c + j] * (go[i * c + j] - dot);
                        }
                    }
                }
                Rec::SliceRows { a, from, .. } => {
                    let c = values[*a].cols();
                    let ga = &mut grads[*a];
                    for (i, g) in go.iter().enumerate() {
                        ga[from * c + i] += g;
                    }
                }
                Rec::SliceCols { a, from, .. } => {
                    let c = values[*a].cols();
                    let w = values[out_idx].cols();
                    let ga = &mut grads[*a];
                    for i in 0..values[out_idx].rows() {
                        for j in 0..w {
                            ga[i * c + from + j] += go[i * w + j];
                        }
                    }
                }
                Rec::ConcatCols { parts, .. } => {
                    let total = values[out_idx].cols();
                    let rows = values[out_idx].rows();
                    let mut offset = 0;
                    for p in parts {
                        let c = values[*p].cols();
                        let gp = &mut grads[*p];
                        for i in 0..rows {
                            for j in 0..c {
                                gp[i * c + j] += go[i * total + offset + j];
                            }
                        }
                        offset += c;
                    }
                }
            }
            self.grads[out_idx] = go;
        }

        for (i, g) in self.grads.iter().enumerate() {
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(SubstrateError::NonFinite {
                    context: format!("backward pass (tensor {i}, gradient {bad})"),
                });
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// y = xW + b for x `[B,I]`, W `[I,O]`, b `[O]`.
pub fn linear(tape: &mut Tape, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId, SubstrateError> {
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

/// Mean squared error between two same-shape tensors.
pub fn mse(tape: &mut Tape, pred: TensorId, target: TensorId) -> Result<TensorId, SubstrateError> {
    let d = tape.sub(pred, target)?;
    let sq = tape.mul(d, d)?;
    tape.mean(sq)
}

/// Multi-head scaled dot-product self-attention over `x` of shape `[T, D]`.
///
/// With `causal` set, position t attends only to positions <= t; unmasked
/// otherwise. Rejects sequences longer than `max_context`.
pub fn causal_self_attention(
    tape: &mut Tape,
    x: TensorId,
    weights: &AttentionWeights,
    causal: bool,
    max_context: usize,
) -> Result<TensorId, SubstrateError> {
    let t = tape.value(x).rows();
    let d = tape.value(x).cols();
    if t > max_context {
        return Err(SubstrateError::ContextOverflow { len: t, max: max_context });
    }
    if weights.heads == 0 || d % weights.heads != 0 {
        return Err(SubstrateError::ShapeMismatch {
            op: "attention",
            detail: format!("dim {d} not divisible by {} heads", weights.heads),
        });
    }
    let dh = d / weights.heads;
    let q = tape.matmul(x, weights.wq)?;
    let k = tape.matmul(x, weights.wk)?;
    let v = tape.matmul(x, weights.wv)?;
    let mut head_outs = Vec::with_capacity(weights.heads);
    for h in 0..weights.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let probs = tape.softmax_rows(scaled, causal)?;
        head_outs.push(tape.matmul(probs, vh)?);
    }
    let merged = tape.concat_cols(&head_outs)?;
    tape.matmul(merged, weights.wo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_of(tape: &Tape, id: TensorId) -> Vec<f64> {
        tape.grad(id).values().to_vec()
    }

    #[test]
    fn linear_identity() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::matrix(&[vec![1.0, 2.0]]).unwrap());
        let w = tape.input(Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let b = tape.input(Tensor::vector(vec![0.0, 0.0]));
        let y = linear(&mut tape, x, w, b).unwrap();
        assert_eq!(tape.value(y).values(), &[1.0, 2.0]);
    }

    #[test]
    fn linear_direct_arithmetic() {
        // [[1,1]] * [[2],[3]] + [1] = [[6]]
        let mut tape = Tape::new();
        let x = tape.input(Tensor::matrix(&[vec![1.0, 1.0]]).unwrap());
        let w = tape.input(Tensor::matrix(&[vec![2.0], vec![3.0]]).unwrap());
        let b = tape.input(Tensor::vector(vec![1.0]));
        let y = linear(&mut tape, x, w, b).unwrap();
        assert_eq!(tape.value(y).values(), &[6.0]);
    }

    #[test]
    fn linear_bias_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::matrix(&[vec![1.0, 2.0], vec![0.5, -1.0]]).unwrap());
        let w = tape.input(Tensor::matrix(&[vec![0.3, 0.7], vec![-0.2, 0.4]]).unwrap());
        let b = tape.input(Tensor::vector(vec![0.1, 0.2]));
        let y = linear(&mut tape, x, w, b).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        // d sum(y) / d b_j = number of rows
        assert_eq!(grad_of(&tape, b), vec![2.0, 2.0]);
    }

    #[test]
    fn linear_rejects_mismatched_shapes() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::matrix(&[vec![1.0, 2.0, 3.0]]).unwrap());
        let w = tape.input(Tensor::matrix(&[vec![1.0], vec![1.0]]).unwrap());
        let b = tape.input(Tensor::vector(vec![0.0]));
        let err = linear(&mut tape, x, w, b).unwrap_err();
        match err {
            SubstrateError::ShapeMismatch { detail, .. } => {
                assert!(detail.contains("[1,3]") && detail.contains("[2,1]"), "{detail}");
            }
            other => panic!("expected shape mismatch, got {other}"),
        }
    }

    #[test]
    fn softplus_reference_points() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![0.0, 50.0, -50.0]));
        let y = tape.softplus(x).unwrap();
        let v = tape.value(y).values();
        assert!((v[0] - 2.0f64.ln()).abs() < 1e-12);
        assert!((v[1] - 50.0).abs() < 1e-9);
        // exp(-50) ~ 1.93e-22, still strictly positive
        assert!(v[2] > 0.0 && v[2] < 1e-21);
    }

    #[test]
    fn softplus_strictly_positive_for_extreme_inputs() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![-745.0, -1e8, 708.0, 1e15]));
        let y = tape.softplus(x).unwrap();
        for (i, v) in tape.value(y).values().iter().enumerate() {
            assert!(v.is_finite(), "index {i} not finite");
            assert!(*v >= 0.0);
        }
        // Large positive side tracks the identity asymptote.
        assert_eq!(tape.value(y).values()[3], 1e15);
    }

    #[test]
    fn relu_values_and_gradient_mask() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).values(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        // Mask is the indicator of x > 0; subgradient at exactly 0 is 0.
        assert_eq!(grad_of(&tape, x), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_all_negative_is_zero_tensor() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![-3.0, -0.5, -1e9]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn mse_reference_points() {
        let mut tape = Tape::new();
        let p = tape.input(Tensor::vector(vec![1.0, 3.0]));
        let t = tape.input(Tensor::vector(vec![1.0, 1.0]));
        let l = mse(&mut tape, p, t).unwrap();
        assert_eq!(tape.value(l).as_scalar(), 2.0);

        let mut tape = Tape::new();
        let p = tape.input(Tensor::vector(vec![5.0, -2.0]));
        let l = mse(&mut tape, p, p).unwrap();
        assert_eq!(tape.value(l).as_scalar(), 0.0);
    }

    #[test]
    fn mse_gradient() {
        // d/dp mean((p-t)^2) = 2(p-t)/n; at p=[2], t=[0] this is [4].
        let mut tape = Tape::new();
        let p = tape.input(Tensor::vector(vec![2.0]));
        let t = tape.input(Tensor::vector(vec![0.0]));
        let l = mse(&mut tape, p, t).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(grad_of(&tape, p), vec![4.0]);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let mut tape = Tape::new();
        let p = tape.input(Tensor::vector(vec![1.0, 2.0]));
        let t = tape.input(Tensor::vector(vec![1.0]));
        assert!(mse(&mut tape, p, t).is_err());
    }

    #[test]
    fn attention_single_token_is_value_projection() {
        let mut rng = crate::seed::TestRng::new(7);
        let d = 4;
        let mut tape = Tape::new();
        let x = tape.input(Tensor::matrix(&[rng.uniform_vec(d)]).unwrap());
        let w = random_attention(&mut tape, &mut rng, d, 2);
        let out = causal_self_attention(&mut tape, x, &w, true, 8).unwrap();

        // With one token the attention weights are [1], so out = x * Wv * Wo.
        let mut direct = Tape::new();
        let x2 = direct.input(tape.value(x).clone());
        let wv = direct.input(tape.value(w.wv).clone());
        let wo = direct.input(tape.value(w.wo).clone());
        let xv = direct.matmul(x2, wv).unwrap();
        let expect = direct.matmul(xv, wo).unwrap();
        for (a, b) in tape.value(out).values().iter().zip(direct.value(expect).values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_mask_blocks_future_positions() {
        let mut rng = crate::seed::TestRng::new(11);
        let (t, d) = (5, 4);
        let rows: Vec<Vec<f64>> = (0..t).map(|_| rng.uniform_vec(d)).collect();

        let mut tape = Tape::new();
        let x = tape.input(Tensor::matrix(&rows).unwrap());
        let w = random_attention(&mut tape, &mut rng, d, 2);
        let out = causal_self_attention(&mut tape, x, &w, true, 8).unwrap();
        let base = tape.value(out).values().to_vec();

        // Perturb the last two rows; rows before them must be bit-identical.
        let mut rows2 = rows.clone();
        rows2[3] = rng.uniform_vec(d);
        rows2[4] = rng.uniform_vec(d);
        let mut tape2 = Tape::new();
        let x2 = tape2.input(Tensor::matrix(&rows2).unwrap());
        let w2 = AttentionWeights {
            wq: tape2.input(tape.value(w.wq).clone()),
            wk: tape2.input(tape.value(w.wk).clone()),
            wv: tape2.input(tape.value(w.wv).clone()),
            wo: tape2.input(tape.value(w.wo).clone()),
            heads: 2,
        };
        let out2 = causal_self_attention(&mut tape2, x2, &w2, true, 8).unwrap();
        let changed = tape2.value(out2).values();
        for i in 0..3 * d {
            assert_eq!(base[i], changed[i], "position {} leaked future input", i / d);
        }
    }

    #[test]
    fn zero_query_key_weights_average_value_projections() {
        let mut rng = crate::seed::TestRng::new(13);
        let (t, d) = (4, 4);
        let rows: Vec<Vec<f64>> = (0..t).map(|_| rng.uniform_vec(d)).collect();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::matrix(&rows).unwrap());
        let wv_t = Tensor::matrix(&(0..d).map(|_| rng.uniform_vec(d)).collect::<Vec<_>>()).unwrap();
        let wo_t = Tensor::matrix(&(0..d).map(|_| rng.uniform_vec(d)).collect::<Vec<_>>()).unwrap();
        let w = AttentionWeights {
            wq: tape.input(Tensor::zeros(vec![d, d])),
            wk: tape.input(Tensor::zeros(vec![d, d])),
            wv: tape.input(wv_t.clone()),
            wo: tape.input(wo_t.clone()),
            heads: 2,
        };
        let out = causal_self_attention(&mut tape, x, &w, true, 8).unwrap();

        // Uniform weights over the prefix: row t = mean of V rows 0..=t, then Wo.
        let mut direct = Tape::new();
        let xd = direct.input(Tensor::matrix(&rows).unwrap());
        let wvd = direct.input(wv_t);
        let v = direct.matmul(xd, wvd).unwrap();
        let vv = direct.value(v).clone();
        let mut averaged = vec![0.0; t * d];
        for i in 0..t {
            for j in 0..d {
                let sum: f64 = (0..=i).map(|p| vv.get2(p, j)).sum();
                averaged[i * d + j] = sum / (i + 1) as f64;
            }
        }
        let avg = direct.input(Tensor::new(vec![t, d], averaged).unwrap());
        let wod = direct.input(tape.value(w.wo).clone());
        let expect = direct.matmul(avg, wod).unwrap();
        for (a, b) in tape.value(out).values().iter().zip(direct.value(expect).values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rejects_context_overflow() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(vec![9, 4]));
        let w = AttentionWeights {
            wq: tape.input(Tensor::zeros(vec![4, 4])),
            wk: tape.input(Tensor::zeros(vec![4, 4])),
            wv: tape.input(Tensor::zeros(vec![4, 4])),
            wo: tape.input(Tensor::zeros(vec![4, 4])),
            heads: 2,
        };
        let err = causal_self_attention(&mut tape, x, &w, true, 8).unwrap_err();
        assert_eq!(err, SubstrateError::ContextOverflow { len: 9, max: 8 });
    }

    #[test]
    fn non_participating_tensors_keep_zero_gradients() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::vector(vec![1.0, 2.0]));
        let unused = tape.input(Tensor::vector(vec![3.0, 4.0]));
        let half = tape.scale(unused, 0.5).unwrap(); // recorded but off the loss path
        let s = tape.sum(a).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(grad_of(&tape, unused), vec![0.0, 0.0]);
        assert_eq!(grad_of(&tape, half), vec![0.0, 0.0]);
        assert_eq!(grad_of(&tape, a), vec![1.0, 1.0]);
    }

    #[test]
    fn forward_rejects_non_finite_results() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::vector(vec![1e308]));
        let err = tape.scale(a, 10.0).unwrap_err();
        assert!(matches!(err, SubstrateError::NonFinite { .. }));
    }

    fn random_attention(tape: &mut Tape, rng: &mut crate::seed::TestRng, d: usize, heads: usize) -> AttentionWeights {
        let mut mat = |rng: &mut crate::seed::TestRng| {
            Tensor::matrix(&(0..d).map(|_| rng.uniform_vec(d)).collect::<Vec<_>>()).unwrap()
        };
        AttentionWeights {
            wq: tape.input(mat(rng)),
            wk: tape.input(mat(rng)),
            wv: tape.input(mat(rng)),
            wo: tape.input(mat(rng)),
            heads,
        }
    }
}
