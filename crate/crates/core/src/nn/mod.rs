//! Dense feed-forward networks: forward pass, softmax, reverse-mode gradients.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use train::{train_autoencoder, train_classifier, TrainConfig, TrainReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MeadError, Result};
use crate::objectives::{objective_grad_probs, ObjectiveKind, ObjectiveReference};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer `out = act(W in + b)`, weights stored row-major `[outputs x inputs]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    /// Dropout probability applied to this layer's output; always 0 on the output layer.
    pub dropout: f64,
}

impl Layer {
    fn affine(&self, input: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs)) {
            *o = row.iter().zip(input).map(|(w, x)| w * x).sum();
        }
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
    }
}

/// Layer widths and per-layer settings used to initialize a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    #[serde(default = "default_hidden_activation")]
    pub hidden_activation: Activation,
    #[serde(default)]
    pub dropout: f64,
}

fn default_hidden_activation() -> Activation {
    Activation::Relu
}

impl Architecture {
    pub fn new(input: usize, hidden: Vec<usize>, output: usize) -> Self {
        Architecture { input, hidden, output, hidden_activation: Activation::Relu, dropout: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(MeadError::config(format!(
                "architecture has a zero-width layer: input {}, hidden {:?}, output {}",
                self.input, self.hidden, self.output
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(MeadError::config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization for weights and biases.
    pub fn initialize(&self, seed: u64) -> Result<ModelParams> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![self.input];
        widths.extend(&self.hidden);
        widths.push(self.output);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = 1.0 / (inputs as f64).sqrt();
                let weights = (0..inputs * outputs).map(|_| rng.random_range(-bound..=bound)).collect();
                let bias = (0..outputs).map(|_| rng.random_range(-bound..=bound)).collect();
                let hidden = i < last;
                Layer {
                    inputs,
                    outputs,
                    weights,
                    bias,
                    activation: if hidden { self.hidden_activation } else { Activation::Identity },
                    dropout: if hidden { self.dropout } else { 0.0 },
                }
            })
            .collect();
        ModelParams::new(layers)
    }
}

/// Logits and their softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPrediction {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl SoftPrediction {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probs = softmax(&logits);
        SoftPrediction { logits, probs }
    }

    /// Arg-max with ties going to the lowest index.
    pub fn label(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Intermediate activations of a single forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    /// Post-activation output of every hidden layer, in order.
    pub hidden: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl FeatureBundle {
    pub fn last_hidden(&self) -> Option<&[f64]> {
        self.hidden.last().map(Vec::as_slice)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Cached values from a forward pass, consumed by the backward pass.
struct Trace {
    /// `inputs[l]` is the input of layer `l` (after the previous layer's dropout).
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers applied to each layer's output (empty if none).
    masks: Vec<Vec<f64>>,
    output: Vec<f64>,
}

/// Gradients of a scalar with respect to every weight and bias.
#[derive(Debug, Clone)]
pub(crate) struct ParamGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Parameters of a dense network whose output layer produces logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layers: Vec<Layer>,
}

impl ModelParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(MeadError::config("a network needs at least one layer"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.inputs == 0 || layer.outputs == 0 {
                return Err(MeadError::config(format!("layer {i} has zero width")));
            }
            if layer.weights.len() != layer.inputs * layer.outputs || layer.bias.len() != layer.outputs {
                return Err(MeadError::config(format!(
                    "layer {i}: {} weights / {} biases do not match {}x{}",
                    layer.weights.len(),
                    layer.bias.len(),
                    layer.outputs,
                    layer.inputs
                )));
            }
            if !(0.0..1.0).contains(&layer.dropout) {
                return Err(MeadError::config(format!("layer {i}: dropout {} outside [0, 1)", layer.dropout)));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(MeadError::config(format!("layer {i} has non-finite parameters")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(MeadError::config(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        Ok(ModelParams { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Whether any hidden layer applies dropout when stochastic passes are requested.
    pub fn has_dropout(&self) -> bool {
        self.layers.iter().any(|l| l.dropout > 0.0)
    }

    /// Overrides the dropout rate of every hidden layer.
    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(MeadError::config(format!("dropout {rate} outside [0, 1)")));
        }
        let last = self.layers.len() - 1;
        for layer in &mut self.layers[..last] {
            layer.dropout = rate;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(MeadError::config(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(MeadError::config("input contains non-finite values"));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64], mut dropout_rng: Option<&mut ChaCha8Rng>) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for layer in &self.layers {
            let mut z = vec![0.0; layer.outputs];
            layer.affine(&current, &mut z);
            let mut out: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            let mask = match dropout_rng.as_deref_mut() {
                Some(rng) if layer.dropout > 0.0 => {
                    let keep = 1.0 - layer.dropout;
                    let mask: Vec<f64> =
                        (0..layer.outputs).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                    out.iter_mut().zip(&mask).for_each(|(o, m)| *o *= m);
                    mask
                }
                _ => Vec::new(),
            };
            inputs.push(std::mem::replace(&mut current, out));
            pre_activations.push(z);
            masks.push(mask);
        }
        Trace { inputs, pre_activations, masks, output: current }
    }

    /// Back-propagates `d_output` (gradient w.r.t. the logits) to the input, and
    /// optionally accumulates parameter gradients.
    fn backward(&self, trace: &Trace, d_output: &[f64], param_grads: Option<&mut ParamGrads>) -> Vec<f64> {
        let mut param_grads = param_grads;
        let mut delta = d_output.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let mask = &trace.masks[l];
            for (o, d) in delta.iter_mut().enumerate() {
                if !mask.is_empty() {
                    *d *= mask[o];
                }
                *d *= layer.activation.derivative(trace.pre_activations[l][o]);
            }
            if let Some(grads) = param_grads.as_deref_mut() {
                let input = &trace.inputs[l];
                let gw = &mut grads.weights[l];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
                    grads.biases[l][o] += d;
                }
            }
            let mut next = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                next.iter_mut().zip(row).for_each(|(n, w)| *n += d * w);
            }
            delta = next;
        }
        delta
    }

    pub(crate) fn zero_grads(&self) -> ParamGrads {
        ParamGrads {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// Raw network output (logits for a classifier, reconstruction for an autoencoder).
    pub fn output(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trace(x, None).output)
    }

    /// Deterministic forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<SoftPrediction> {
        Ok(SoftPrediction::from_logits(self.output(x)?))
    }

    /// Forward pass with inverted dropout active; the mask stream is drawn from `seed`.
    pub fn forward_stochastic(&self, x: &[f64], seed: u64) -> Result<SoftPrediction> {
        self.check_input(x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(SoftPrediction::from_logits(self.trace(x, Some(&mut rng)).output))
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<usize> {
        Ok(self.forward(x)?.label())
    }

    pub fn features(&self, x: &[f64]) -> Result<FeatureBundle> {
        self.check_input(x)?;
        let trace = self.trace(x, None);
        let hidden = trace.inputs[1..].to_vec();
        let probs = softmax(&trace.output);
        Ok(FeatureBundle { hidden, logits: trace.output, probs })
    }

    /// Gradient of `sum_c weights[c] * logit_c(x)` with respect to `x`.
    pub fn logit_gradient(&self, x: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if weights.len() != self.output_dim() {
            return Err(MeadError::config("logit weight vector has wrong length"));
        }
        let trace = self.trace(x, None);
        Ok(self.backward(&trace, weights, None))
    }

    /// Gradient of an attack objective with respect to the adversarial input.
    pub fn input_gradient(
        &self,
        x_adv: &[f64],
        kind: ObjectiveKind,
        reference: &ObjectiveReference,
    ) -> Result<Vec<f64>> {
        Ok(self.objective_and_gradient(x_adv, kind, reference)?.1)
    }

    /// Objective value and its input gradient from a single forward/backward pass.
    pub fn objective_and_gradient(
        &self,
        x_adv: &[f64],
        kind: ObjectiveKind,
        reference: &ObjectiveReference,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_input(x_adv)?;
        let trace = self.trace(x_adv, None);
        let probs = softmax(&trace.output);
        let value = crate::objectives::objective_value(kind, reference, &probs)?;
        let d_probs = objective_grad_probs(kind, reference, &probs)?;
        // softmax backward: dz = p * (g - <g, p>)
        let inner: f64 = d_probs.iter().zip(&probs).map(|(g, p)| g * p).sum();
        let d_logits: Vec<f64> = d_probs.iter().zip(&probs).map(|(g, p)| p * (g - inner)).collect();
        Ok((value, self.backward(&trace, &d_logits, None)))
    }

    pub(crate) fn loss_gradients(
        &self,
        x: &[f64],
        d_output: impl FnOnce(&[f64]) -> (f64, Vec<f64>),
        dropout_rng: Option<&mut ChaCha8Rng>,
        grads: &mut ParamGrads,
    ) -> f64 {
        let trace = self.trace(x, dropout_rng);
        let (loss, d_out) = d_output(&trace.output);
        self.backward(&trace, &d_out, Some(grads));
        loss
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn identity_model() -> ModelParams {
        ModelParams::new(vec![Layer {
            inputs: 2,
            outputs: 2,
            weights: vec![1.0, 0.0, 0.0, 1.0],
            bias: vec![0.0, 0.0],
            activation: Activation::Identity,
            dropout: 0.0,
        }])
        .unwrap()
    }

    #[test]
    fn identity_model_softmax_values() {
        let m = identity_model();
        assert_eq!(m.forward(&[0.0, 0.0]).unwrap().probs, vec![0.5, 0.5]);
        let p = m.forward(&[3f64.ln(), 0.0]).unwrap().probs;
        // e^{ln 3} / (e^{ln 3} + e^0) = 3/4
        let oracle = 3f64.ln().exp() / (3f64.ln().exp() + 1.0);
        assert_abs_diff_eq!(p[0], oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn labels_and_ties() {
        let m = identity_model();
        assert_eq!(m.predict_label(&[0.0, 0.0]).unwrap(), 0);
        assert_eq!(m.predict_label(&[5.0, -5.0]).unwrap(), 0);
        assert_eq!(m.predict_label(&[-5.0, 5.0]).unwrap(), 1);
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let m = identity_model();
        assert!(matches!(m.forward(&[1.0]), Err(MeadError::Config(_))));
        assert!(m.forward(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn broken_chain_rejected() {
        let mut arch = Architecture::new(3, vec![4], 2).initialize(0).unwrap();
        let mut layers = arch.layers.clone();
        layers[1].inputs = 5;
        layers[1].weights = vec![0.0; 10];
        assert!(ModelParams::new(layers).is_err());
        arch.layers_mut()[0].weights[0] = f64::INFINITY;
        assert!(ModelParams::new(arch.layers.clone()).is_err());
    }

    #[test]
    fn zero_dropout_matches_deterministic_pass() {
        let m = Architecture::new(4, vec![8, 8], 3).initialize(9).unwrap();
        let x = [0.1, -0.4, 0.9, 0.3];
        assert_eq!(m.forward(&x).unwrap(), m.forward_stochastic(&x, 77).unwrap());
    }

    #[test]
    fn dropout_is_seeded() {
        let mut arch = Architecture::new(4, vec![16], 3);
        arch.dropout = 0.5;
        let m = arch.initialize(1).unwrap();
        let x = [0.1, -0.4, 0.9, 0.3];
        assert_eq!(m.forward_stochastic(&x, 5).unwrap(), m.forward_stochastic(&x, 5).unwrap());
        let outputs: Vec<_> = (0..10).map(|s| m.forward_stochastic(&x, s).unwrap().logits).collect();
        assert!(outputs.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn ace_gradient_on_identity_model_matches_hand_derivation() {
        // l = -log softmax(x)_y, so dl/dx = softmax(x) - e_y for the identity network.
        let m = identity_model();
        let x = [0.3, -1.1];
        let g = m.input_gradient(&x, ObjectiveKind::Ace, &ObjectiveReference::Label(0)).unwrap();
        let e0 = (0.3f64).exp();
        let e1 = (-1.1f64).exp();
        let p0 = e0 / (e0 + e1);
        assert_abs_diff_eq!(g[0], p0 - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], 1.0 - p0, epsilon = 1e-12);
    }

    #[test]
    fn kl_against_own_prediction_is_zero() {
        let m = Architecture::new(3, vec![5], 4).initialize(2).unwrap();
        let x = [0.2, 0.5, -0.7];
        let q = m.forward(&x).unwrap().probs;
        let (value, grad) = m.objective_and_gradient(&x, ObjectiveKind::Kl, &ObjectiveReference::Natural(q)).unwrap();
        assert_eq!(value, 0.0);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn logit_gradient_of_linear_model_is_weight_row() {
        let m = ModelParams::new(vec![Layer {
            inputs: 3,
            outputs: 2,
            weights: vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0],
            bias: vec![0.1, 0.2],
            activation: Activation::Identity,
            dropout: 0.0,
        }])
        .unwrap();
        let g = m.logit_gradient(&[0.0, 0.0, 0.0], &[1.0, -1.0]).unwrap();
        assert_eq!(g, vec![2.0, 1.5, 3.0]);
    }

    proptest! {
        #[test]
        fn softmax_is_normalized_and_shift_invariant(
            logits in prop::collection::vec(-50.0f64..50.0, 1..8),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&logits);
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(argmax(&p), argmax(&logits));
            let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
            prop_assert_eq!(argmax(&softmax(&shifted)), argmax(&logits));
        }
    }
}
