//! Minimal dense feedforward classifier with exact manual backpropagation.
//!
//! Hidden layers use ReLU, the output layer is identity into a softmax, and
//! everything runs batched in double precision on `ndarray` matrices. The
//! backward pass is hand-derived and returns gradients with respect to both
//! parameters and inputs — the latter drives the ℓ∞ attacks. The last hidden
//! activation doubles as the embedding vector used by the
//! embedding-similarity weight variant.
//!
//! Every gradient formula here is validated against central finite
//! differences in the tests; the checkpoint format is a flat CSV that
//! round-trips parameters bit-exactly.

use crate::error::Error;
use crate::io::{read_to_string, write_atomic};
use crate::rng::{derive_seed, SplitMix64};
use crate::Result;
use ndarray::{Array1, Array2, Axis};
use std::path::Path;

/// One dense layer: `z = x·wᵀ + b` with `w` of shape out×in.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Full parameter set of the MLP; hidden layers apply ReLU, the final layer
/// feeds the softmax directly.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

impl MlpParams {
    /// Layer widths `[d, h₁, …, C]` implied by the parameter shapes.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].w.ncols()];
        sizes.extend(self.layers.iter().map(|l| l.w.nrows()));
        sizes
    }

    /// Input dimension d.
    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    /// Output dimension C.
    pub fn num_classes(&self) -> usize {
        self.layers.last().expect("non-empty architecture").w.nrows()
    }
}

/// Gradients with the same shapes as [`MlpParams`].
#[derive(Clone, Debug)]
pub struct ParamGrads {
    pub layers: Vec<DenseLayer>,
}

impl ParamGrads {
    /// All-zero gradients shaped like `params`.
    pub fn zeros_like(params: &MlpParams) -> Self {
        ParamGrads {
            layers: params
                .layers
                .iter()
                .map(|l| DenseLayer {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
        }
    }

    /// Accumulate another gradient set scaled by `factor`.
    pub fn add_scaled(&mut self, other: &ParamGrads, factor: f64) {
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            mine.w.scaled_add(factor, &theirs.w);
            mine.b.scaled_add(factor, &theirs.b);
        }
    }
}

/// Everything produced by one batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// The n×d input batch.
    pub input: Array2<f64>,
    /// Pre-activations of each hidden layer (n×hₗ).
    pub pre_activations: Vec<Array2<f64>>,
    /// Post-ReLU activations of each hidden layer (n×hₗ).
    pub activations: Vec<Array2<f64>>,
    /// Final-layer outputs (n×C).
    pub logits: Array2<f64>,
    /// Log-softmax of the logits (n×C), always finite.
    pub log_probs: Array2<f64>,
    /// Softmax probabilities (n×C); rows sum to 1.
    pub probs: Array2<f64>,
}

impl ForwardTrace {
    /// Batch size.
    pub fn len(&self) -> usize {
        self.input.nrows()
    }

    /// Whether the batch is empty.
    pub fn is_empty(&self) -> bool {
        self.input.nrows() == 0
    }

    /// The embedding of each example: the last hidden activation, or the
    /// input itself for a linear (no-hidden-layer) model.
    pub fn embeddings(&self) -> &Array2<f64> {
        self.activations.last().unwrap_or(&self.input)
    }

    /// Predicted class per example (argmax logit, lowest index on ties).
    pub fn predictions(&self) -> Vec<usize> {
        self.logits
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// Glorot-uniform initialization: weights uniform in ±sqrt(6/(fan_in+fan_out)),
/// biases zero, one derived random stream per layer.
pub fn init(layer_sizes: &[usize], seed: u64) -> Result<MlpParams> {
    if layer_sizes.len() < 2 {
        return Err(Error::EmptyArchitecture { got: layer_sizes.len() });
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::config("layer sizes must all be ≥ 1"));
    }
    let layers = layer_sizes
        .windows(2)
        .enumerate()
        .map(|(idx, pair)| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = SplitMix64::new(derive_seed(seed, idx as u64));
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.next_range(-bound, bound));
            DenseLayer { w, b: Array1::zeros(fan_out) }
        })
        .collect();
    Ok(MlpParams { layers })
}

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

/// Batched forward pass producing the full trace.
pub fn forward(params: &MlpParams, x: &Array2<f64>) -> Result<ForwardTrace> {
    if x.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "forward input width",
            expected: params.input_dim(),
            got: x.ncols(),
        });
    }
    let n_hidden = params.layers.len() - 1;
    let mut pre_activations = Vec::with_capacity(n_hidden);
    let mut activations = Vec::with_capacity(n_hidden);
    let mut current = x.clone();
    for layer in &params.layers[..n_hidden] {
        let z = current.dot(&layer.w.t()) + &layer.b;
        let a = relu(&z);
        pre_activations.push(z);
        activations.push(a.clone());
        current = a;
    }
    let output = params.layers.last().expect("non-empty architecture");
    let logits = current.dot(&output.w.t()) + &output.b;

    // Row-wise log-sum-exp stabilization.
    let mut log_probs = logits.clone();
    for mut row in log_probs.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| v - max);
        let lse = row.iter().map(|&v| v.exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    let probs = log_probs.mapv(f64::exp);
    Ok(ForwardTrace { input: x.clone(), pre_activations, activations, logits, log_probs, probs })
}

fn check_labels(trace: &ForwardTrace, y: &[usize]) -> Result<()> {
    if y.len() != trace.len() {
        return Err(Error::DimensionMismatch {
            context: "label count",
            expected: trace.len(),
            got: y.len(),
        });
    }
    let c = trace.logits.ncols();
    if let Some(&bad) = y.iter().find(|&&label| label >= c) {
        return Err(Error::config(format!("label {bad} out of range for {c} classes")));
    }
    Ok(())
}

/// Mean cross-entropy −log p(y) over the batch.
pub fn loss_ce(trace: &ForwardTrace, y: &[usize]) -> Result<f64> {
    loss_ce_weighted(trace, y, None)
}

/// Mean of W_y·(−log p(y)); `class_weights` of length C, `None` = uniform 1.
pub fn loss_ce_weighted(
    trace: &ForwardTrace,
    y: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<f64> {
    check_labels(trace, y)?;
    check_class_weights(trace, class_weights)?;
    let n = trace.len();
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = y
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let w = class_weights.map_or(1.0, |cw| cw[label]);
            -w * trace.log_probs[[i, label]]
        })
        .sum();
    Ok(total / n as f64)
}

fn check_class_weights(trace: &ForwardTrace, class_weights: Option<&[f64]>) -> Result<()> {
    if let Some(cw) = class_weights {
        if cw.len() != trace.logits.ncols() {
            return Err(Error::DimensionMismatch {
                context: "class weight count",
                expected: trace.logits.ncols(),
                got: cw.len(),
            });
        }
    }
    Ok(())
}

fn check_trace_pair(clean: &ForwardTrace, adv: &ForwardTrace) -> Result<()> {
    if clean.logits.dim() != adv.logits.dim() {
        return Err(Error::DimensionMismatch {
            context: "clean/adversarial trace shapes",
            expected: clean.logits.nrows(),
            got: adv.logits.nrows(),
        });
    }
    Ok(())
}

/// Mean KL(clean ‖ adversarial) over the batch:
/// Σ_c q(c)·(log q(c) − log r(c)) with q from the clean trace. Nonnegative.
pub fn loss_kl(trace_clean: &ForwardTrace, trace_adv: &ForwardTrace) -> Result<f64> {
    check_trace_pair(trace_clean, trace_adv)?;
    let n = trace_clean.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        for c in 0..trace_clean.logits.ncols() {
            let q = trace_clean.probs[[i, c]];
            total += q * (trace_clean.log_probs[[i, c]] - trace_adv.log_probs[[i, c]]);
        }
    }
    Ok(total / n as f64)
}

/// Gradient of mean weighted CE with respect to the logits:
/// (1/n)·W_y·(softmax − onehot(y)) per row.
pub fn ce_dlogits(
    trace: &ForwardTrace,
    y: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<Array2<f64>> {
    check_labels(trace, y)?;
    check_class_weights(trace, class_weights)?;
    let n = trace.len();
    let mut d = trace.probs.clone();
    for (i, &label) in y.iter().enumerate() {
        d[[i, label]] -= 1.0;
        let w = class_weights.map_or(1.0, |cw| cw[label]);
        for v in d.row_mut(i) {
            *v *= w / n as f64;
        }
    }
    Ok(d)
}

/// Gradient of mean KL(clean ‖ adv) with respect to the adversarial logits:
/// (1/n)·(softmax_adv − softmax_clean) per row.
pub fn kl_dlogits_adv(trace_clean: &ForwardTrace, trace_adv: &ForwardTrace) -> Result<Array2<f64>> {
    check_trace_pair(trace_clean, trace_adv)?;
    let n = trace_clean.len();
    Ok((&trace_adv.probs - &trace_clean.probs) / n as f64)
}

/// Gradient of mean KL(clean ‖ adv) with respect to the clean logits:
/// (1/n)·q ⊙ (s − KL_row) per row, where s = log q − log r and
/// KL_row = Σ q·s.
pub fn kl_dlogits_clean(
    trace_clean: &ForwardTrace,
    trace_adv: &ForwardTrace,
) -> Result<Array2<f64>> {
    check_trace_pair(trace_clean, trace_adv)?;
    let n = trace_clean.len();
    let c = trace_clean.logits.ncols();
    let mut d = Array2::<f64>::zeros(trace_clean.logits.raw_dim());
    for i in 0..trace_clean.len() {
        let mut kl_row = 0.0;
        for j in 0..c {
            kl_row += trace_clean.probs[[i, j]]
                * (trace_clean.log_probs[[i, j]] - trace_adv.log_probs[[i, j]]);
        }
        for j in 0..c {
            let s = trace_clean.log_probs[[i, j]] - trace_adv.log_probs[[i, j]];
            d[[i, j]] = trace_clean.probs[[i, j]] * (s - kl_row) / n as f64;
        }
    }
    Ok(d)
}

/// Backpropagate a logits-gradient through the network, returning gradients
/// for every parameter and for the input batch.
pub fn backward(
    params: &MlpParams,
    trace: &ForwardTrace,
    dlogits: &Array2<f64>,
) -> Result<(ParamGrads, Array2<f64>)> {
    if dlogits.dim() != trace.logits.dim() {
        return Err(Error::DimensionMismatch {
            context: "logits gradient shape",
            expected: trace.logits.nrows(),
            got: dlogits.nrows(),
        });
    }
    let n_layers = params.layers.len();
    let mut grads = ParamGrads::zeros_like(params);
    let mut dz = dlogits.clone();
    for l in (0..n_layers).rev() {
        let a_in = if l == 0 { &trace.input } else { &trace.activations[l - 1] };
        grads.layers[l].w = dz.t().dot(a_in);
        grads.layers[l].b = dz.sum_axis(Axis(0));
        let da_in = dz.dot(&params.layers[l].w);
        if l == 0 {
            return Ok((grads, da_in));
        }
        let gate = trace.pre_activations[l - 1].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        dz = da_in * &gate;
    }
    unreachable!("architecture has ≥ 1 layer");
}

/// Backpropagate a logits-gradient to the input batch only, skipping the
/// parameter gradients. Produces exactly the input gradient `backward`
/// returns, at roughly half the cost — the attack inner loop never needs
/// parameter gradients.
pub fn backward_input(
    params: &MlpParams,
    trace: &ForwardTrace,
    dlogits: &Array2<f64>,
) -> Result<Array2<f64>> {
    if dlogits.dim() != trace.logits.dim() {
        return Err(Error::DimensionMismatch {
            context: "logits gradient shape",
            expected: trace.logits.nrows(),
            got: dlogits.nrows(),
        });
    }
    let n_layers = params.layers.len();
    let mut dz = dlogits.clone();
    for l in (0..n_layers).rev() {
        let da_in = dz.dot(&params.layers[l].w);
        if l == 0 {
            return Ok(da_in);
        }
        let gate = trace.pre_activations[l - 1].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        dz = da_in * &gate;
    }
    unreachable!("architecture has ≥ 1 layer");
}

/// Parameter gradients of mean weighted CE at `trace`.
pub fn grad_params_ce(
    params: &MlpParams,
    trace: &ForwardTrace,
    y: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<ParamGrads> {
    let d = ce_dlogits(trace, y, class_weights)?;
    Ok(backward(params, trace, &d)?.0)
}

/// Input gradients of mean weighted CE at `trace`.
pub fn grad_input_ce(
    params: &MlpParams,
    trace: &ForwardTrace,
    y: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<Array2<f64>> {
    let d = ce_dlogits(trace, y, class_weights)?;
    backward_input(params, trace, &d)
}

/// Gradient of mean KL(clean ‖ adv) with respect to the adversarial inputs.
pub fn grad_input_kl_adv(
    params: &MlpParams,
    trace_clean: &ForwardTrace,
    trace_adv: &ForwardTrace,
) -> Result<Array2<f64>> {
    let d = kl_dlogits_adv(trace_clean, trace_adv)?;
    backward_input(params, trace_adv, &d)
}

/// One SGD step with decoupled weight decay:
/// θ ← θ − lr·(grad + weight_decay·θ).
pub fn sgd_step(params: &mut MlpParams, grads: &ParamGrads, lr: f64, weight_decay: f64) {
    for (layer, grad) in params.layers.iter_mut().zip(&grads.layers) {
        layer.w.zip_mut_with(&grad.w, |p, &g| *p -= lr * (g + weight_decay * *p));
        layer.b.zip_mut_with(&grad.b, |p, &g| *p -= lr * (g + weight_decay * *p));
    }
}

/// Serialize parameters to a flat CSV: an architecture line, a column
/// header, then one `(layer,row,col,value)` row per weight and one with
/// col = −1 per bias entry. Values print in shortest round-trip form, so a
/// write/read cycle reproduces the parameters bit-exactly.
pub fn write_checkpoint(params: &MlpParams, path: &Path) -> Result<()> {
    let arch: Vec<String> = params.layer_sizes().iter().map(|s| s.to_string()).collect();
    let mut out = format!("arch,{}\nlayer,row,col,value\n", arch.join(","));
    for (l, layer) in params.layers.iter().enumerate() {
        for ((r, c), &v) in layer.w.indexed_iter() {
            out.push_str(&format!("{l},{r},{c},{v}\n"));
        }
        for (r, &v) in layer.b.iter().enumerate() {
            out.push_str(&format!("{l},{r},-1,{v}\n"));
        }
    }
    write_atomic(path, &out)
}

/// Load parameters from [`write_checkpoint`]'s format.
pub fn read_checkpoint(path: &Path) -> Result<MlpParams> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, arch_line) = lines
        .next()
        .ok_or_else(|| Error::parse(path, "empty checkpoint".to_string()))?;
    let mut arch_fields = arch_line.split(',');
    if arch_fields.next() != Some("arch") {
        return Err(Error::parse(path, "line 1: expected architecture header".to_string()));
    }
    let sizes: Vec<usize> = arch_fields
        .map(|f| {
            f.parse::<usize>()
                .map_err(|_| Error::parse(path, format!("line 1: bad layer size {f:?}")))
        })
        .collect::<Result<_>>()?;
    if sizes.len() < 2 {
        return Err(Error::parse(path, "line 1: architecture needs ≥ 2 sizes".to_string()));
    }
    lines
        .next()
        .filter(|(_, l)| *l == "layer,row,col,value")
        .ok_or_else(|| Error::parse(path, "line 2: expected column header".to_string()))?;

    let mut layers: Vec<DenseLayer> = sizes
        .windows(2)
        .map(|pair| DenseLayer {
            w: Array2::zeros((pair[1], pair[0])),
            b: Array1::zeros(pair[1]),
        })
        .collect();
    let mut seen = vec![0usize; layers.len()];
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::parse(path, format!("line {lineno}: expected 4 fields")));
        }
        let l: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, format!("line {lineno}: bad layer index")))?;
        let r: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(path, format!("line {lineno}: bad row index")))?;
        let c: i64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, format!("line {lineno}: bad column index")))?;
        let v: f64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(path, format!("line {lineno}: bad value")))?;
        let layer = layers
            .get_mut(l)
            .ok_or_else(|| Error::parse(path, format!("line {lineno}: layer {l} out of range")))?;
        if c < 0 {
            if r >= layer.b.len() {
                return Err(Error::parse(path, format!("line {lineno}: bias row out of range")));
            }
            layer.b[r] = v;
        } else {
            let c = c as usize;
            if r >= layer.w.nrows() || c >= layer.w.ncols() {
                return Err(Error::parse(path, format!("line {lineno}: weight index out of range")));
            }
            layer.w[[r, c]] = v;
        }
        seen[l] += 1;
    }
    for (l, layer) in layers.iter().enumerate() {
        let expected = layer.w.len() + layer.b.len();
        if seen[l] != expected {
            return Err(Error::parse(
                path,
                format!("layer {l}: expected {expected} entries, found {}", seen[l]),
            ));
        }
    }
    Ok(MlpParams { layers })
}
