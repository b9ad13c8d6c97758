//! Small time-conditioned feedforward networks with exact reverse-mode
//! gradients, plus Adam and EMA parameter tracking.
//!
//! A network maps `(state, t)` to a vector. The input layer sees the state
//! concatenated with sinusoidal time features `[sin(f_i t), cos(f_i t)]`;
//! a network with no frequencies ignores `t` entirely (encoders and
//! one-step students are time-free). Hidden layers are activated, the
//! output layer is linear. All arithmetic is `f64`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, Matrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    SiLU,
    ReLU,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::SiLU => x / (1.0 + (-x).exp()),
            Activation::ReLU => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative evaluated at the pre-activation value.
    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::SiLU => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::ReLU => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Weights and biases of a feedforward network, with the time-embedding
/// frequencies that define its input layout.
///
/// Invariants: consecutive layer shapes compose; all entries finite; the
/// first layer's input dim equals `state_dim() + 2 * time_frequencies.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layer_weights: Vec<Matrix>,
    pub layer_biases: Vec<Vec<f64>>,
    /// Sinusoidal feature frequencies; empty for time-free networks.
    pub time_embed_frequencies: Vec<f64>,
    pub activation: Activation,
}

impl NetworkParams {
    /// Initialize a time-conditioned network.
    ///
    /// `layer_sizes[0]` must equal `layer_sizes.last() + 2 * n_freqs`: the
    /// output is a vector in data space and the input is the data state
    /// plus its sinusoidal time features. Weights are fan-in-scaled
    /// uniform, biases zero, frequencies `pi * 2^i` for `i < n_freqs`.
    pub fn init(layer_sizes: &[usize], n_freqs: usize, seed: u64) -> Result<Self> {
        if n_freqs == 0 {
            return Err(Error::Config("n_freqs: must be >= 1".into()));
        }
        validate_sizes(layer_sizes)?;
        let data_dim = *layer_sizes.last().unwrap();
        let expected_in = data_dim + 2 * n_freqs;
        if layer_sizes[0] != expected_in {
            return Err(Error::Config(format!(
                "layer_sizes: first layer must be data_dim + 2*n_freqs = {} + 2*{} = {}, got {}",
                data_dim, n_freqs, expected_in, layer_sizes[0]
            )));
        }
        let freqs = (0..n_freqs)
            .map(|i| std::f64::consts::PI * (1u64 << i) as f64)
            .collect();
        Ok(Self::init_with_frequencies(layer_sizes, freqs, seed))
    }

    /// Initialize a network with no time conditioning (encoder, student).
    /// Input and output dims are unconstrained.
    pub fn init_time_free(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        Ok(Self::init_with_frequencies(layer_sizes, Vec::new(), seed))
    }

    fn init_with_frequencies(layer_sizes: &[usize], freqs: Vec<f64>, seed: u64) -> Self {
        let mut rng = rng::stream(seed, 0);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = 1.0 / (n_in as f64).sqrt();
            let mut m = Matrix::zeros(n_out, n_in);
            for v in m.iter_mut() {
                *v = rng.gen_range(-limit..limit);
            }
            weights.push(m);
            biases.push(vec![0.0; n_out]);
        }
        Self {
            layer_weights: weights,
            layer_biases: biases,
            time_embed_frequencies: freqs,
            activation: Activation::SiLU,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layer_weights.len()
    }

    /// Dimension of the raw state input (input layer minus time features).
    pub fn state_dim(&self) -> usize {
        self.layer_weights[0].cols - 2 * self.time_embed_frequencies.len()
    }

    pub fn output_dim(&self) -> usize {
        self.layer_weights.last().unwrap().rows
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layer_weights[0].cols];
        sizes.extend(self.layer_weights.iter().map(|w| w.rows));
        sizes
    }

    /// Total number of scalar parameters (weights + biases).
    pub fn n_params(&self) -> usize {
        self.layer_weights
            .iter()
            .map(|w| w.data.len())
            .sum::<usize>()
            + self.layer_biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Check shape composition and finiteness; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.layer_weights.is_empty() || self.layer_weights.len() != self.layer_biases.len() {
            return Err(Error::Shape("layer weight/bias count mismatch".into()));
        }
        for (i, (w, b)) in self.layer_weights.iter().zip(&self.layer_biases).enumerate() {
            if w.rows * w.cols != w.data.len() || w.rows != b.len() {
                return Err(Error::Shape(format!("layer {i}: inconsistent shapes")));
            }
            if i > 0 && self.layer_weights[i - 1].rows != w.cols {
                return Err(Error::Shape(format!(
                    "layer {i}: input dim {} does not match previous output dim {}",
                    w.cols,
                    self.layer_weights[i - 1].rows
                )));
            }
            if !w.all_finite() || !all_finite(b) {
                return Err(Error::NonFinite {
                    context: format!("layer {i} parameters"),
                });
            }
        }
        if self.layer_weights[0].cols < 2 * self.time_embed_frequencies.len() {
            return Err(Error::Shape(
                "input layer narrower than the time embedding".into(),
            ));
        }
        Ok(())
    }

    fn embed_input(&self, state: &[f64], t: f64) -> Vec<f64> {
        let mut input = Vec::with_capacity(state.len() + 2 * self.time_embed_frequencies.len());
        input.extend_from_slice(state);
        for &f in &self.time_embed_frequencies {
            input.push((f * t).sin());
            input.push((f * t).cos());
        }
        input
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(
            "layer_sizes: need at least an input and an output layer".into(),
        ));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::Config("layer_sizes: all sizes must be >= 1".into()));
    }
    Ok(())
}

/// Evaluate the network. Hidden layers use `params.activation`; the output
/// layer is linear.
pub fn forward(params: &NetworkParams, state: &[f64], t: f64) -> Result<Vec<f64>> {
    let trace = forward_traced(params, state, t)?;
    Ok(trace.output)
}

/// Forward pass that keeps per-layer values for a later backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Embedded input (state followed by time features).
    input: Vec<f64>,
    /// Pre-activation values per hidden layer.
    pre_activations: Vec<Vec<f64>>,
    /// Activated outputs per hidden layer.
    hidden: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub fn forward_traced(params: &NetworkParams, state: &[f64], t: f64) -> Result<ForwardTrace> {
    if state.len() != params.state_dim() {
        return Err(Error::Shape(format!(
            "state dim {} does not match network state dim {}",
            state.len(),
            params.state_dim()
        )));
    }
    if !t.is_finite() || !all_finite(state) {
        return Err(Error::NonFinite {
            context: "network input".into(),
        });
    }
    let input = params.embed_input(state, t);
    let n = params.n_layers();
    let mut pre_activations = Vec::with_capacity(n.saturating_sub(1));
    let mut hidden = Vec::with_capacity(n.saturating_sub(1));
    let mut current = input.clone();
    let mut buf = Vec::new();
    for (i, (w, b)) in params
        .layer_weights
        .iter()
        .zip(&params.layer_biases)
        .enumerate()
    {
        w.mul_vec_add(&current, b, &mut buf);
        if !all_finite(&buf) {
            return Err(Error::NonFinite {
                context: format!("layer {i}"),
            });
        }
        if i + 1 < n {
            let activated: Vec<f64> = buf.iter().map(|&x| params.activation.apply(x)).collect();
            pre_activations.push(std::mem::take(&mut buf));
            current = activated.clone();
            hidden.push(activated);
        } else {
            current = std::mem::take(&mut buf);
        }
    }
    Ok(ForwardTrace {
        input,
        pre_activations,
        hidden,
        output: current,
    })
}

/// Parameter gradients, shaped like the weights and biases they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            weights: params
                .layer_weights
                .iter()
                .map(|w| Matrix::zeros(w.rows, w.cols))
                .collect(),
            biases: params.layer_biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, a: f64) {
        for w in &mut self.weights {
            for v in w.iter_mut() {
                *v *= a;
            }
        }
        for b in &mut self.biases {
            for v in b.iter_mut() {
                *v *= a;
            }
        }
    }
}

/// Accumulate gradients for one sample into `grads`, given the loss gradient
/// w.r.t. the network output. Returns the loss gradient w.r.t. the raw state
/// (time-feature components are dropped), which is what upstream modules
/// chain through.
pub fn backward(
    params: &NetworkParams,
    trace: &ForwardTrace,
    grad_output: &[f64],
    grads: &mut GradientSet,
) -> Vec<f64> {
    assert_eq!(grad_output.len(), params.output_dim(), "grad dim mismatch");
    let n = params.n_layers();
    let mut delta = grad_output.to_vec();
    for i in (0..n).rev() {
        let w = &params.layer_weights[i];
        let layer_in: &[f64] = if i == 0 {
            &trace.input
        } else {
            &trace.hidden[i - 1]
        };
        // dW[o][j] += delta[o] * in[j]; db[o] += delta[o]
        {
            let gw = &mut grads.weights[i];
            for (o, &d) in delta.iter().enumerate() {
                let row = &mut gw.data[o * gw.cols..(o + 1) * gw.cols];
                for (g, &x) in row.iter_mut().zip(layer_in) {
                    *g += d * x;
                }
                grads.biases[i][o] += d;
            }
        }
        // Propagate to the layer input: delta_in[j] = sum_o W[o][j] delta[o],
        // gated by the activation derivative of the previous layer.
        let mut next = vec![0.0; w.cols];
        for (o, &d) in delta.iter().enumerate() {
            let row = w.row(o);
            for (nj, &wj) in next.iter_mut().zip(row) {
                *nj += wj * d;
            }
        }
        if i > 0 {
            let pre = &trace.pre_activations[i - 1];
            for (nj, &p) in next.iter_mut().zip(pre) {
                *nj *= params.activation.derivative(p);
            }
        }
        delta = next;
    }
    delta.truncate(params.state_dim());
    delta
}

/// Loss shape for [`loss_gradients`]: plain squared error to a target, or
/// the same with a per-sample scalar weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind<'a> {
    SquaredError,
    WeightedSquaredError { weights: &'a [f64] },
}

/// Batch-mean loss and its exact parameter gradients.
///
/// The loss is `mean_b w_b * ||f(x_b, t_b) - y_b||^2` with `w_b = 1` for
/// [`LossKind::SquaredError`].
pub fn loss_gradients(
    params: &NetworkParams,
    batch_inputs: &[Vec<f64>],
    batch_times: &[f64],
    loss_kind: LossKind,
    loss_targets: &[Vec<f64>],
) -> Result<(f64, GradientSet)> {
    if batch_inputs.is_empty() {
        return Err(Error::Config("batch: must be non-empty".into()));
    }
    if batch_inputs.len() != batch_times.len() || batch_inputs.len() != loss_targets.len() {
        return Err(Error::Shape(
            "batch inputs, times, and targets must have equal length".into(),
        ));
    }
    if let LossKind::WeightedSquaredError { weights } = loss_kind {
        if weights.len() != batch_inputs.len() {
            return Err(Error::Shape("weights length must match batch".into()));
        }
    }
    let batch = batch_inputs.len() as f64;
    let mut grads = GradientSet::zeros_like(params);
    let mut loss = 0.0;
    for (b, ((x, &t), target)) in batch_inputs
        .iter()
        .zip(batch_times)
        .zip(loss_targets)
        .enumerate()
    {
        let w = match loss_kind {
            LossKind::SquaredError => 1.0,
            LossKind::WeightedSquaredError { weights } => weights[b],
        };
        let trace = forward_traced(params, x, t)?;
        if target.len() != trace.output.len() {
            return Err(Error::Shape(format!(
                "target dim {} does not match output dim {}",
                target.len(),
                trace.output.len()
            )));
        }
        let residual: Vec<f64> = trace.output.iter().zip(target).map(|(o, y)| o - y).collect();
        let sample_loss = w * crate::linalg::squared_norm(&residual);
        if !sample_loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("sample {b}"),
            });
        }
        loss += sample_loss / batch;
        let grad_out: Vec<f64> = residual.iter().map(|r| 2.0 * w * r / batch).collect();
        backward(params, &trace, &grad_out, &mut grads);
    }
    Ok((loss, grads))
}

/// Adam optimizer state. Moments mirror the parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: GradientSet,
    pub second_moment: GradientSet,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &NetworkParams, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("lr: must be positive, got {lr}")));
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name}: must be in [0, 1), got {b}")));
            }
        }
        if !(eps > 0.0) {
            return Err(Error::Config(format!("eps: must be positive, got {eps}")));
        }
        Ok(Self {
            first_moment: GradientSet::zeros_like(params),
            second_moment: GradientSet::zeros_like(params),
            step_count: 0,
            lr,
            beta1,
            beta2,
            eps,
        })
    }
}

/// One bias-corrected Adam update, in place. Increments `step_count`.
pub fn adam_step(
    params: &mut NetworkParams,
    state: &mut AdamState,
    grads: &GradientSet,
) -> Result<()> {
    check_same_shape(params, grads)?;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    };
    for l in 0..params.n_layers() {
        let gw = &grads.weights[l];
        let pw = &mut params.layer_weights[l];
        let mw = &mut state.first_moment.weights[l];
        let vw = &mut state.second_moment.weights[l];
        for i in 0..pw.data.len() {
            update(&mut pw.data[i], &mut mw.data[i], &mut vw.data[i], gw.data[i]);
        }
        let gb = &grads.biases[l];
        let pb = &mut params.layer_biases[l];
        let mb = &mut state.first_moment.biases[l];
        let vb = &mut state.second_moment.biases[l];
        for i in 0..pb.len() {
            update(&mut pb[i], &mut mb[i], &mut vb[i], gb[i]);
        }
    }
    Ok(())
}

fn check_same_shape(params: &NetworkParams, grads: &GradientSet) -> Result<()> {
    if grads.weights.len() != params.n_layers() || grads.biases.len() != params.n_layers() {
        return Err(Error::Shape("gradient layer count mismatch".into()));
    }
    for (l, (gw, pw)) in grads.weights.iter().zip(&params.layer_weights).enumerate() {
        if gw.rows != pw.rows || gw.cols != pw.cols {
            return Err(Error::Shape(format!("gradient shape mismatch at layer {l}")));
        }
    }
    Ok(())
}

/// Exponential moving average of the parameters.
///
/// Before `start_step` the shadow tracks the live parameters exactly; from
/// then on `shadow = decay * shadow + (1 - decay) * params` per update.
#[derive(Debug, Clone)]
pub struct EmaState {
    pub shadow: NetworkParams,
    pub decay: f64,
    pub start_step: u64,
}

impl EmaState {
    pub fn new(params: &NetworkParams, decay: f64, start_step: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config(format!(
                "ema_decay: must be in [0, 1), got {decay}"
            )));
        }
        Ok(Self {
            shadow: params.clone(),
            decay,
            start_step,
        })
    }
}

pub fn ema_update(ema: &mut EmaState, params: &NetworkParams, global_step: u64) -> Result<()> {
    if ema.shadow.layer_sizes() != params.layer_sizes() {
        return Err(Error::Shape("EMA shadow shape mismatch".into()));
    }
    if global_step < ema.start_step {
        ema.shadow = params.clone();
        return Ok(());
    }
    let d = ema.decay;
    for l in 0..params.n_layers() {
        for (s, &p) in ema.shadow.layer_weights[l]
            .data
            .iter_mut()
            .zip(&params.layer_weights[l].data)
        {
            *s = d * *s + (1.0 - d) * p;
        }
        for (s, &p) in ema.shadow.layer_biases[l]
            .iter_mut()
            .zip(&params.layer_biases[l])
        {
            *s = d * *s + (1.0 - d) * p;
        }
    }
    Ok(())
}

/// Flatten all trainable parameters into one vector; used by tests and
/// finite-difference checks.
pub fn flatten_params(params: &NetworkParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.n_params());
    for w in &params.layer_weights {
        out.extend_from_slice(&w.data);
    }
    for b in &params.layer_biases {
        out.extend_from_slice(b);
    }
    out
}

/// Inverse of [`flatten_params`]; panics if `flat` has the wrong length.
pub fn unflatten_params(params: &NetworkParams, flat: &[f64]) -> NetworkParams {
    let mut out = params.clone();
    let mut it = flat.iter();
    for w in &mut out.layer_weights {
        for v in w.iter_mut() {
            *v = *it.next().expect("flat vector too short");
        }
    }
    for b in &mut out.layer_biases {
        for v in b.iter_mut() {
            *v = *it.next().expect("flat vector too short");
        }
    }
    assert!(it.next().is_none(), "flat vector too long");
    out
}

/// Flatten a gradient set in the same order as [`flatten_params`].
pub fn flatten_grads(grads: &GradientSet) -> Vec<f64> {
    let mut out = Vec::new();
    for w in &grads.weights {
        out.extend_from_slice(&w.data);
    }
    for b in &grads.biases {
        out.extend_from_slice(b);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed(params: &NetworkParams) -> NetworkParams {
        let mut p = params.clone();
        for w in &mut p.layer_weights {
            for v in w.iter_mut() {
                *v = 0.0;
            }
        }
        p
    }

    #[test]
    fn init_rejects_inconsistent_input_dim() {
        let err = NetworkParams::init(&[4, 8, 2], 4, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = NetworkParams::init(&[10, 8, 2], 4, 0).unwrap();
        let b = NetworkParams::init(&[10, 8, 2], 4, 0).unwrap();
        let c = NetworkParams::init(&[10, 8, 2], 4, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.layer_weights[0].data, c.layer_weights[0].data);
        // Geometric frequency ladder scaled by pi.
        assert_eq!(
            a.time_embed_frequencies,
            vec![
                std::f64::consts::PI,
                2.0 * std::f64::consts::PI,
                4.0 * std::f64::consts::PI,
                8.0 * std::f64::consts::PI
            ]
        );
    }

    #[test]
    fn forward_zero_params_is_zero() {
        let p = zeroed(&NetworkParams::init(&[10, 8, 2], 4, 0).unwrap());
        let out = forward(&p, &[1.0, -2.0], 0.3).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_identity_layer_passes_state_through() {
        // Single linear layer [I | 0] over the time features, zero bias.
        let mut p = NetworkParams::init(&[6, 2], 2, 0).unwrap();
        for v in p.layer_weights[0].iter_mut() {
            *v = 0.0;
        }
        p.layer_weights[0].data[0] = 1.0; // row 0, col 0
        p.layer_weights[0].data[6 + 1] = 1.0; // row 1, col 1
        let s = [0.7, -1.3];
        assert_eq!(forward(&p, &s, 0.42).unwrap(), s.to_vec());
    }

    #[test]
    fn forward_is_pure() {
        let p = NetworkParams::init(&[10, 8, 2], 4, 3).unwrap();
        let a = forward(&p, &[0.1, 0.2], 0.5).unwrap();
        let b = forward(&p, &[0.1, 0.2], 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_rejects_wrong_state_dim() {
        let p = NetworkParams::init(&[10, 8, 2], 4, 0).unwrap();
        assert!(matches!(
            forward(&p, &[1.0], 0.5),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn loss_gradients_zero_net_zero_targets() {
        let p = zeroed(&NetworkParams::init(&[10, 8, 2], 4, 0).unwrap());
        let (loss, grads) = loss_gradients(
            &p,
            &[vec![1.0, 2.0]],
            &[0.5],
            LossKind::SquaredError,
            &[vec![0.0, 0.0]],
        )
        .unwrap();
        assert_eq!(loss, 0.0);
        assert!(flatten_grads(&grads).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_gradients_scalar_net_hand_check() {
        // f(x) = w*x with w=1: loss (w*2)^2 = 4, dL/dw = 2*(w*2)*2 = 8.
        let mut p = NetworkParams::init_time_free(&[1, 1], 0).unwrap();
        p.layer_weights[0].data[0] = 1.0;
        let (loss, grads) = loss_gradients(
            &p,
            &[vec![2.0]],
            &[0.0],
            LossKind::SquaredError,
            &[vec![0.0]],
        )
        .unwrap();
        assert!((loss - 4.0).abs() < 1e-15);
        assert!((grads.weights[0].data[0] - 8.0).abs() < 1e-15);
        assert!((grads.biases[0][0] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_loss_scales_by_sample_weight() {
        let mut p = NetworkParams::init_time_free(&[1, 1], 0).unwrap();
        p.layer_weights[0].data[0] = 1.0;
        let (loss, grads) = loss_gradients(
            &p,
            &[vec![2.0]],
            &[0.0],
            LossKind::WeightedSquaredError { weights: &[0.25] },
            &[vec![0.0]],
        )
        .unwrap();
        assert!((loss - 1.0).abs() < 1e-15);
        assert!((grads.weights[0].data[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut p = NetworkParams::init(&[10, 8, 2], 4, 0).unwrap();
        let before = p.clone();
        let mut adam = AdamState::new(&p, 0.1, 0.9, 0.999, 1e-8).unwrap();
        let grads = GradientSet::zeros_like(&p);
        adam_step(&mut p, &mut adam, &grads).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn adam_first_step_hand_check() {
        // p=0, g=1, lr=0.1: bias correction makes m_hat = v_hat = 1 at step 1,
        // so p' = -0.1 / (1 + 1e-8).
        let mut p = NetworkParams::init_time_free(&[1, 1], 0).unwrap();
        p.layer_weights[0].data[0] = 0.0;
        let mut adam = AdamState::new(&p, 0.1, 0.9, 0.999, 1e-8).unwrap();
        let mut grads = GradientSet::zeros_like(&p);
        grads.weights[0].data[0] = 1.0;
        adam_step(&mut p, &mut adam, &grads).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.layer_weights[0].data[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_is_deterministic() {
        let p0 = NetworkParams::init(&[10, 8, 2], 4, 7).unwrap();
        let run = || {
            let mut p = p0.clone();
            let mut adam = AdamState::new(&p, 0.01, 0.9, 0.999, 1e-8).unwrap();
            let (_, grads) = loss_gradients(
                &p,
                &[vec![0.3, -0.4]],
                &[0.2],
                LossKind::SquaredError,
                &[vec![1.0, 1.0]],
            )
            .unwrap();
            adam_step(&mut p, &mut adam, &grads).unwrap();
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ema_decay_zero_tracks_live_params() {
        let p = NetworkParams::init(&[10, 8, 2], 4, 0).unwrap();
        let mut ema = EmaState::new(&p, 0.0, 0).unwrap();
        let p2 = NetworkParams::init(&[10, 8, 2], 4, 9).unwrap();
        ema_update(&mut ema, &p2, 5).unwrap();
        assert_eq!(ema.shadow, p2);
    }

    #[test]
    fn ema_decay_one_is_rejected() {
        let p = NetworkParams::init(&[10, 8, 2], 4, 0).unwrap();
        assert!(matches!(EmaState::new(&p, 1.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn ema_midpoint_hand_check() {
        let mut p = NetworkParams::init_time_free(&[1, 1], 0).unwrap();
        p.layer_weights[0].data[0] = 0.0;
        let mut ema = EmaState::new(&p, 0.5, 0).unwrap();
        p.layer_weights[0].data[0] = 1.0;
        ema_update(&mut ema, &p, 1).unwrap();
        assert_eq!(ema.shadow.layer_weights[0].data[0], 0.5);
    }

    #[test]
    fn ema_copies_before_start_step() {
        let mut p = NetworkParams::init_time_free(&[1, 1], 0).unwrap();
        let mut ema = EmaState::new(&p, 0.9, 10).unwrap();
        p.layer_weights[0].data[0] = 3.0;
        ema_update(&mut ema, &p, 4).unwrap();
        assert_eq!(ema.shadow.layer_weights[0].data[0], 3.0);
    }

    #[test]
    fn flatten_unflatten_roundtrip() {
        let p = NetworkParams::init(&[10, 8, 2], 4, 11).unwrap();
        let flat = flatten_params(&p);
        assert_eq!(flat.len(), p.n_params());
        let q = unflatten_params(&p, &flat);
        assert_eq!(p, q);
    }
}
