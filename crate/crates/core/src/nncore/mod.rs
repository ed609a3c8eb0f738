//! Dense feedforward networks with exact backpropagation and plain SGD.
//!
//! A [`Network`] is an ordered list of [`DenseLayer`]s, each computing
//! `activation(W x + b)` with `W` stored row-major as `(fan_out, fan_in)`.
//! Hidden layers may carry an inverted-dropout mask during training; the
//! mask multiplies the post-activation and is recorded in the
//! [`ForwardTrace`] so that [`Network::backward`] routes zero gradient
//! through dropped units.
//!
//! Output layers built by [`init_network`] have `bias_trainable == false`:
//! their biases are exactly zero and never updated.

mod checkpoint;

pub use checkpoint::{read_network, write_network, CHECKPOINT_MAGIC};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PlmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Sigmoid,
    Softmax,
    Identity,
}

impl ActivationKind {
    pub(crate) fn tag(self) -> u32 {
        match self {
            ActivationKind::Sigmoid => 0,
            ActivationKind::Softmax => 1,
            ActivationKind::Identity => 2,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(ActivationKind::Sigmoid),
            1 => Some(ActivationKind::Softmax),
            2 => Some(ActivationKind::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    CrossEntropy,
    MeanSquaredError,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dot product with four independent partial sums so the loop vectorizes.
/// The summation order is fixed, so results are reproducible.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    fan_in: usize,
    fan_out: usize,
    /// Row-major `(fan_out, fan_in)`.
    weights: Vec<f64>,
    biases: Vec<f64>,
    activation: ActivationKind,
    bias_trainable: bool,
}

impl DenseLayer {
    pub(crate) fn from_parts(
        fan_in: usize,
        fan_out: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        activation: ActivationKind,
        bias_trainable: bool,
    ) -> Result<Self> {
        if fan_in == 0 || fan_out == 0 {
            return Err(PlmError::shape("layer dimensions must be positive"));
        }
        if weights.len() != fan_in * fan_out || biases.len() != fan_out {
            return Err(PlmError::shape(format!(
                "layer {fan_in}->{fan_out} got {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        if !bias_trainable && biases.iter().any(|&b| b != 0.0) {
            return Err(PlmError::format("pinned layer biases must be zero"));
        }
        Ok(Self {
            fan_in,
            fan_out,
            weights,
            biases,
            activation,
            bias_trainable,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn fan_out(&self) -> usize {
        self.fan_out
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    /// Mutable biases, or `None` for a pinned (zero-bias) layer.
    pub fn biases_mut(&mut self) -> Option<&mut [f64]> {
        if self.bias_trainable {
            Some(&mut self.biases)
        } else {
            None
        }
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn bias_trainable(&self) -> bool {
        self.bias_trainable
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.fan_in..(i + 1) * self.fan_in]
    }
}

/// Per-layer pre- and post-activations for one forward pass.
///
/// `post[k]` is what layer `k + 1` consumed, i.e. it already includes the
/// dropout mask when one was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
    pub masks: Option<Vec<Vec<f64>>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.fan_out]).collect(),
        }
    }

    fn flat(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn is_finite(&self) -> bool {
        self.flat().all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.flat().fold(0.0, |m, g| m.max(g.abs()))
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    /// Elementwise division, used to turn a replica sum into a mean.
    pub fn div_assign(&mut self, denom: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for x in v.iter_mut() {
                *x /= denom;
            }
        }
    }

    fn congruent_with(&self, net: &Network) -> bool {
        self.weights.len() == net.layers.len()
            && self.biases.len() == net.layers.len()
            && net.layers.iter().enumerate().all(|(k, l)| {
                self.weights[k].len() == l.weights.len() && self.biases[k].len() == l.fan_out
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
    loss: LossKind,
}

/// Builds a network with weights uniform in `±1/sqrt(fan_in)` and zero biases.
///
/// `dims` lists layer widths including the input, so `activations` has
/// `dims.len() - 1` entries. The last layer's bias is pinned to zero.
pub fn init_network(
    dims: &[usize],
    activations: &[ActivationKind],
    loss: LossKind,
    seed: u64,
) -> Result<Network> {
    if dims.len() < 2 {
        return Err(PlmError::config("a network needs at least two layer sizes"));
    }
    if activations.len() != dims.len() - 1 {
        return Err(PlmError::config(format!(
            "{} layer sizes need {} activations, got {}",
            dims.len(),
            dims.len() - 1,
            activations.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = activations.len();
    let mut layers = Vec::with_capacity(depth);
    for (k, (pair, &act)) in dims.windows(2).zip(activations).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        if fan_in == 0 || fan_out == 0 {
            return Err(PlmError::config("layer sizes must be positive"));
        }
        let limit = 1.0 / (fan_in as f64).sqrt();
        let weights = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        layers.push(DenseLayer {
            fan_in,
            fan_out,
            weights,
            biases: vec![0.0; fan_out],
            activation: act,
            bias_trainable: k + 1 != depth,
        });
    }
    Network::from_layers(layers, loss)
}

impl Network {
    /// Assembles a network, checking dimension chaining and loss pairing.
    pub fn from_layers(layers: Vec<DenseLayer>, loss: LossKind) -> Result<Self> {
        if layers.is_empty() {
            return Err(PlmError::config("network has no layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out != pair[1].fan_in {
                return Err(PlmError::config(format!(
                    "layer dimensions do not chain: {} -> {}",
                    pair[0].fan_out, pair[1].fan_in
                )));
            }
        }
        let last = layers.len() - 1;
        if layers[..last]
            .iter()
            .any(|l| l.activation == ActivationKind::Softmax)
        {
            return Err(PlmError::config("softmax is only allowed on the output layer"));
        }
        let out_act = layers[last].activation;
        let paired = match loss {
            LossKind::CrossEntropy => out_act == ActivationKind::Softmax,
            LossKind::MeanSquaredError => out_act != ActivationKind::Softmax,
        };
        if !paired {
            return Err(PlmError::config(format!(
                "loss {loss:?} cannot pair with {out_act:?} output"
            )));
        }
        Ok(Self { layers, loss })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Widths of the hidden layers, i.e. the shapes dropout masks must have.
    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.fan_out)
            .collect()
    }

    /// Dimensions as `[input, hidden.., output]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.fan_out))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + if l.bias_trainable { l.fan_out } else { 0 })
            .sum()
    }

    pub fn forward(
        &self,
        input: &[f64],
        masks: Option<&[Vec<f64>]>,
    ) -> Result<(Vec<f64>, ForwardTrace)> {
        if input.len() != self.input_dim() {
            return Err(PlmError::shape(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        if let Some(masks) = masks {
            let hidden = self.hidden_dims();
            if masks.len() != hidden.len()
                || masks.iter().zip(&hidden).any(|(m, &d)| m.len() != d)
            {
                return Err(PlmError::shape("dropout masks do not match hidden layers"));
            }
        }
        let depth = self.layers.len();
        let mut pre = Vec::with_capacity(depth);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(depth);
        for (k, layer) in self.layers.iter().enumerate() {
            let x = if k == 0 { input } else { post[k - 1].as_slice() };
            let z: Vec<f64> = (0..layer.fan_out)
                .map(|i| layer.biases[i] + dot(layer.row(i), x))
                .collect();
            let mut a = z.clone();
            match layer.activation {
                ActivationKind::Sigmoid => a.iter_mut().for_each(|v| *v = sigmoid(*v)),
                ActivationKind::Softmax => softmax_in_place(&mut a),
                ActivationKind::Identity => {}
            }
            if k + 1 < depth {
                if let Some(masks) = masks {
                    for (v, m) in a.iter_mut().zip(&masks[k]) {
                        *v *= m;
                    }
                }
            }
            pre.push(z);
            post.push(a);
        }
        let trace = ForwardTrace {
            input: input.to_vec(),
            pre,
            post,
            masks: masks.map(<[Vec<f64>]>::to_vec),
        };
        Ok((trace.output().to_vec(), trace))
    }

    /// Eval-mode output: no mask, no rescaling.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input, None)?.0)
    }

    pub fn loss_value(&self, output: &[f64], target: &[f64]) -> Result<f64> {
        let d = self.output_dim();
        if output.len() != d || target.len() != d {
            return Err(PlmError::shape("output/target length does not match network"));
        }
        if output.iter().any(|o| !o.is_finite()) {
            return Err(PlmError::Numeric("non-finite network output".into()));
        }
        let value = match self.loss {
            LossKind::CrossEntropy => -output
                .iter()
                .zip(target)
                .filter(|(_, &t)| t != 0.0)
                .map(|(o, t)| t * o.ln())
                .sum::<f64>(),
            LossKind::MeanSquaredError => {
                output
                    .iter()
                    .zip(target)
                    .map(|(o, t)| (o - t) * (o - t))
                    .sum::<f64>()
                    / d as f64
            }
        };
        if !value.is_finite() {
            return Err(PlmError::Numeric(format!("loss evaluated to {value}")));
        }
        Ok(value)
    }

    pub fn backward(&self, trace: &ForwardTrace, target: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.accumulate_gradients(trace, target, &mut grads)?;
        Ok(grads)
    }

    /// Adds the gradient for one trace into `acc`.
    ///
    /// Each entry is updated as `acc += g`, so accumulating into zeros gives
    /// exactly [`Network::backward`], and accumulating a sequence of traces
    /// gives exactly the in-order sum of their individual gradients.
    pub fn accumulate_gradients(
        &self,
        trace: &ForwardTrace,
        target: &[f64],
        acc: &mut Gradients,
    ) -> Result<()> {
        self.check_trace(trace)?;
        if target.len() != self.output_dim() {
            return Err(PlmError::shape("target length does not match network output"));
        }
        if !acc.congruent_with(self) {
            return Err(PlmError::shape("gradient buffer does not match network"));
        }
        let depth = self.layers.len();
        let last = depth - 1;
        let out = &trace.post[last];

        let mut delta: Vec<f64> = match (self.loss, self.layers[last].activation) {
            (LossKind::CrossEntropy, _) => out.iter().zip(target).map(|(o, t)| o - t).collect(),
            (LossKind::MeanSquaredError, act) => {
                let scale = 2.0 / out.len() as f64;
                out.iter()
                    .zip(target)
                    .map(|(o, t)| {
                        let da = match act {
                            ActivationKind::Sigmoid => o * (1.0 - o),
                            _ => 1.0,
                        };
                        scale * (o - t) * da
                    })
                    .collect()
            }
        };

        for k in (0..depth).rev() {
            let layer = &self.layers[k];
            let x: &[f64] = if k == 0 { &trace.input } else { &trace.post[k - 1] };
            let gw = &mut acc.weights[k];
            for (i, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, x, &mut gw[i * layer.fan_in..(i + 1) * layer.fan_in]);
                }
            }
            if layer.bias_trainable {
                for (gb, &d) in acc.biases[k].iter_mut().zip(&delta) {
                    *gb += d;
                }
            }
            if k == 0 {
                break;
            }
            // Propagate to the previous (hidden) layer.
            let mut back = vec![0.0; layer.fan_in];
            for (i, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, layer.row(i), &mut back);
                }
            }
            let prev = &self.layers[k - 1];
            let mask = trace.masks.as_ref().map(|m| m[k - 1].as_slice());
            for (j, b) in back.iter_mut().enumerate() {
                let m = mask.map_or(1.0, |m| m[j]);
                let da = match prev.activation {
                    ActivationKind::Sigmoid => {
                        let s = sigmoid(trace.pre[k - 1][j]);
                        s * (1.0 - s)
                    }
                    ActivationKind::Identity => 1.0,
                    ActivationKind::Softmax => unreachable!("softmax is output-only"),
                };
                *b *= m * da;
            }
            delta = back;
        }
        Ok(())
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        let ok = trace.input.len() == self.input_dim()
            && trace.pre.len() == self.layers.len()
            && trace.post.len() == self.layers.len()
            && self
                .layers
                .iter()
                .zip(trace.pre.iter().zip(&trace.post))
                .all(|(l, (z, a))| z.len() == l.fan_out && a.len() == l.fan_out)
            && trace.masks.as_ref().is_none_or(|m| {
                m.len() + 1 == self.layers.len()
                    && m.iter().zip(&self.layers).all(|(v, l)| v.len() == l.fan_out)
            });
        if ok {
            Ok(())
        } else {
            Err(PlmError::shape("trace does not match network"))
        }
    }

    /// One plain SGD step: `p -= learning_rate * g` for every trainable parameter.
    ///
    /// Nothing is modified if the gradient contains a non-finite entry.
    pub fn apply_update(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(PlmError::config("learning rate must be a positive finite number"));
        }
        if !grads.congruent_with(self) {
            return Err(PlmError::shape("gradients do not match network"));
        }
        if !grads.is_finite() {
            return Err(PlmError::Numeric("non-finite gradient entry".into()));
        }
        for (k, layer) in self.layers.iter_mut().enumerate() {
            axpy(-learning_rate, &grads.weights[k], &mut layer.weights);
            if layer.bias_trainable {
                axpy(-learning_rate, &grads.biases[k], &mut layer.biases);
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn storage() -> Network {
        init_network(
            &[784, 100, 75],
            &[ActivationKind::Sigmoid, ActivationKind::Softmax],
            LossKind::CrossEntropy,
            7,
        )
        .unwrap()
    }

    fn zeroed(mut net: Network) -> Network {
        for l in net.layers_mut() {
            l.weights_mut().fill(0.0);
            if let Some(b) = l.biases_mut() {
                b.fill(0.0);
            }
        }
        net
    }

    #[test]
    fn storage_parameter_count() {
        let net = storage();
        assert_eq!(net.parameter_count(), 784 * 100 + 100 + 100 * 75);
        assert_eq!(net.dims(), vec![784, 100, 75]);
        assert!(!net.layers()[1].bias_trainable());
        assert!(net.layers()[0].bias_trainable());
    }

    #[test]
    fn recall_network_builds() {
        let net = init_network(
            &[75, 100, 784],
            &[ActivationKind::Sigmoid, ActivationKind::Sigmoid],
            LossKind::MeanSquaredError,
            1,
        )
        .unwrap();
        assert_eq!((net.input_dim(), net.output_dim()), (75, 784));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = storage();
        assert_eq!(a, storage());
        let limit = 1.0 / 784f64.sqrt();
        assert!(a.layers()[0].weights().iter().all(|w| w.abs() <= limit));
        let other = init_network(
            &[784, 100, 75],
            &[ActivationKind::Sigmoid, ActivationKind::Softmax],
            LossKind::CrossEntropy,
            8,
        )
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn config_errors() {
        let err = init_network(&[3, 4, 2], &[ActivationKind::Sigmoid], LossKind::MeanSquaredError, 0);
        assert!(matches!(err, Err(PlmError::Config(_))));
        let err = init_network(
            &[3, 4, 2],
            &[ActivationKind::Softmax, ActivationKind::Softmax],
            LossKind::CrossEntropy,
            0,
        );
        assert!(matches!(err, Err(PlmError::Config(_))));
        let err = init_network(
            &[3, 2],
            &[ActivationKind::Sigmoid],
            LossKind::CrossEntropy,
            0,
        );
        assert!(matches!(err, Err(PlmError::Config(_))));
        let err = init_network(&[3, 2], &[ActivationKind::Softmax], LossKind::MeanSquaredError, 0);
        assert!(matches!(err, Err(PlmError::Config(_))));
    }

    #[test]
    fn zero_network_gives_uniform_softmax() {
        let net = zeroed(storage());
        let out = net.predict(&vec![0.3; 784]).unwrap();
        for o in &out {
            assert!((o - 1.0 / 75.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_sigmoid_layer_gives_half() {
        let net = zeroed(storage());
        let (_, trace) = net.forward(&vec![1.0; 784], None).unwrap();
        assert!(trace.post[0].iter().all(|&a| a == 0.5));
    }

    #[test]
    fn shape_error_on_bad_input() {
        let net = storage();
        assert!(matches!(net.forward(&[0.0; 10], None), Err(PlmError::Shape(_))));
        let bad_mask = vec![vec![1.0; 3]];
        assert!(matches!(
            net.forward(&vec![0.0; 784], Some(&bad_mask)),
            Err(PlmError::Shape(_))
        ));
    }

    #[test]
    fn loss_examples() {
        let mse = init_network(&[2, 2], &[ActivationKind::Identity], LossKind::MeanSquaredError, 0)
            .unwrap();
        assert_eq!(mse.loss_value(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(mse.loss_value(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(matches!(
            mse.loss_value(&[f64::NAN, 0.0], &[0.0, 0.0]),
            Err(PlmError::Numeric(_))
        ));

        let net = zeroed(storage());
        let out = net.predict(&vec![0.0; 784]).unwrap();
        let mut target = vec![0.0; 75];
        target[12] = 1.0;
        let ce = net.loss_value(&out, &target).unwrap();
        assert!((ce - 75f64.ln()).abs() < 1e-12);
        assert!((ce - 4.3175).abs() < 1e-4);
    }

    #[test]
    fn softmax_cross_entropy_output_delta() {
        let net = storage();
        let x: Vec<f64> = (0..784).map(|i| (i % 7) as f64 / 7.0 - 0.4).collect();
        let (out, trace) = net.forward(&x, None).unwrap();
        let mut target = vec![0.0; 75];
        target[3] = 1.0;
        let g = net.backward(&trace, &target).unwrap();
        // With zero output biases pinned, check the weight gradient instead:
        // dL/dW2[i][j] = (o_i - t_i) * h_j.
        let h = &trace.post[0];
        for i in [0usize, 3, 40] {
            for j in [0usize, 17, 99] {
                let expect = (out[i] - target[i]) * h[j];
                assert!((g.weights[1][i * 100 + j] - expect).abs() < 1e-15);
            }
        }
        assert!(g.biases[1].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn mse_at_target_has_zero_gradient() {
        let net = init_network(
            &[5, 4, 3],
            &[ActivationKind::Sigmoid, ActivationKind::Sigmoid],
            LossKind::MeanSquaredError,
            3,
        )
        .unwrap();
        let x = [0.1, -0.2, 0.3, 0.9, 0.0];
        let (out, trace) = net.forward(&x, None).unwrap();
        let g = net.backward(&trace, &out).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn dropped_units_get_zero_gradient() {
        let net = init_network(
            &[4, 6, 3],
            &[ActivationKind::Sigmoid, ActivationKind::Softmax],
            LossKind::CrossEntropy,
            5,
        )
        .unwrap();
        let mask = vec![vec![2.0, 0.0, 2.0, 0.0, 2.0, 2.0]];
        let (_, trace) = net.forward(&[0.5, -0.5, 0.2, 0.1], Some(&mask)).unwrap();
        assert_eq!(trace.post[0][1], 0.0);
        let g = net.backward(&trace, &[0.0, 1.0, 0.0]).unwrap();
        for j in [1usize, 3] {
            assert!(g.weights[0][j * 4..(j + 1) * 4].iter().all(|&v| v == 0.0));
            assert_eq!(g.biases[0][j], 0.0);
        }
    }

    #[test]
    fn update_examples() {
        let mut net =
            init_network(&[1, 1], &[ActivationKind::Identity], LossKind::MeanSquaredError, 0)
                .unwrap();
        net.layers_mut()[0].weights_mut()[0] = 1.0;
        let mut g = Gradients::zeros_like(&net);
        let before = net.clone();
        net.apply_update(&g, 0.1).unwrap();
        assert_eq!(net, before);
        g.weights[0][0] = 0.5;
        net.apply_update(&g, 0.1).unwrap();
        assert_eq!(net.layers()[0].weights()[0], 0.95);

        g.weights[0][0] = f64::INFINITY;
        assert!(matches!(net.apply_update(&g, 0.1), Err(PlmError::Numeric(_))));
        assert_eq!(net.layers()[0].weights()[0], 0.95);
    }

    #[test]
    fn pinned_biases_survive_updates() {
        let mut net = storage();
        let x: Vec<f64> = (0..784).map(|i| ((i * 31) % 17) as f64 / 17.0).collect();
        let mut t = vec![0.0; 75];
        t[0] = 1.0;
        for _ in 0..5 {
            let (_, trace) = net.forward(&x, None).unwrap();
            let mut g = net.backward(&trace, &t).unwrap();
            g.biases[1].fill(1.0); // even a polluted gradient must not move them
            net.apply_update(&g, 0.5).unwrap();
        }
        assert!(net.layers()[1].biases().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[1.0 / 75.0; 75]), 0);
    }
}
