//! Fully-connected ReLU classifier with hand-written backpropagation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng as _, RngCore};

use crate::error::{Error, Result};
use crate::numerics::LogitVector;
use crate::rng;

/// Default hidden width.
pub const DEFAULT_HIDDEN: usize = 64;

/// One affine layer. `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn check(&self) -> Result<()> {
        if self.inputs == 0 || self.outputs == 0 {
            return Err(Error::config("layer with a zero dimension"));
        }
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::config(format!(
                "layer {}x{} has {} weights and {} biases",
                self.outputs,
                self.inputs,
                self.weights.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(dot + b);
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

fn check_layers(layers: &[Dense]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::config("network needs at least one layer"));
    }
    for l in layers {
        l.check()?;
    }
    for (i, pair) in layers.windows(2).enumerate() {
        if pair[0].outputs != pair[1].inputs {
            return Err(Error::config(format!(
                "layer {i} emits {} values but layer {} expects {}",
                pair[0].outputs,
                i + 1,
                pair[1].inputs
            )));
        }
    }
    Ok(())
}

/// Network parameters. Hidden layers use ReLU; the last layer is linear and
/// produces logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Dense>,
    // bumped on every mutation so that stale forward caches are detectable
    version: u64,
}

/// Activations recorded by [`MlpParams::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer `l`; `inputs[0]` is the sample.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of every layer.
    pre: Vec<Vec<f64>>,
    version: u64,
    sizes: Vec<usize>,
}

impl ForwardCache {
    /// Output of the last hidden layer (the sample itself for a single-layer net).
    pub fn penultimate(&self) -> &[f64] {
        self.inputs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Gradients with the same layout as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<Dense>,
}

impl MlpParams {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        check_layers(&layers)?;
        Ok(MlpParams { layers, version: 0 })
    }

    /// All-zero network with layer widths `sizes = [input, hidden..., classes]`.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config("need at least input and output sizes"));
        }
        Self::from_layers(sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect())
    }

    /// Glorot-uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: RngCore>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(sizes)?;
        for layer in &mut params.layers {
            let bound = libm::sqrt(6.0 / (layer.inputs + layer.outputs) as f64);
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(params)
    }

    /// Glorot initialization from the dedicated initialization stream of `seed`.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        Self::glorot(sizes, &mut rng::seeded(seed, rng::stream::INIT))
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable access to the layers. Invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.version += 1;
        &mut self.layers
    }

    /// Layer widths, `[input, hidden..., classes]`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.values().all(|v| v.is_finite()))
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.values().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::input(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter();
        for layer in self.layers_mut() {
            for (dst, src) in layer.values_mut().zip(&mut it) {
                *dst = *src;
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::config(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("input contains a non-finite value"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(LogitVector, ForwardCache)> {
        self.check_input(x)?;
        let depth = self.layers.len();
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        let mut current = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.apply(&current, &mut z);
            let next = if l + 1 < depth {
                z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
            } else {
                z.clone()
            };
            inputs.push(current);
            pre.push(z);
            current = next;
        }
        let logits = LogitVector::new(current)?;
        Ok((
            logits,
            ForwardCache {
                inputs,
                pre,
                version: self.version,
                sizes: self.sizes(),
            },
        ))
    }

    /// Logits without recording a cache.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut current = x.to_vec();
        let mut next = Vec::new();
        let depth = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&current, &mut next);
            if l + 1 < depth {
                for v in &mut next {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            core::mem::swap(&mut current, &mut next);
        }
        Ok(current)
    }

    /// Activations of the last hidden layer.
    pub fn penultimate(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.1.penultimate().to_vec())
    }

    /// Gradients of the loss with respect to every parameter, given the
    /// upstream gradient with respect to the logits.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_accumulate(cache, grad_logits, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Adds `scale` times the parameter gradient into `acc`.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        grad_logits: &[f64],
        scale: f64,
        acc: &mut Gradients,
    ) -> Result<()> {
        if cache.version != self.version || cache.sizes != self.sizes() {
            return Err(Error::InvalidState(
                "forward cache does not belong to these parameters".into(),
            ));
        }
        if grad_logits.len() != self.classes() {
            return Err(Error::input(format!(
                "logit gradient has {} entries, network has {} classes",
                grad_logits.len(),
                self.classes()
            )));
        }
        if acc.layers.len() != self.layers.len() {
            return Err(Error::input("gradient accumulator has the wrong shape"));
        }
        let mut delta: Vec<f64> = grad_logits.iter().map(|g| g * scale).collect();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            let g = &mut acc.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, &v) in row.iter_mut().zip(input) {
                    *gw += d * v;
                }
            }
            if l == 0 {
                break;
            }
            // back through the weights, then the ReLU of the previous layer
            let below = &cache.pre[l - 1];
            let mut next = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += d * w;
                }
            }
            for (n, &z) in next.iter_mut().zip(below) {
                if z <= 0.0 {
                    *n = 0.0;
                }
            }
            delta = next;
        }
        Ok(())
    }

    /// Serializes to the checkpoint layout: little-endian `u64` layer count,
    /// then `(outputs, inputs)` per layer as `u64`, then every layer's weights
    /// (row-major) followed by its biases as `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * (1 + 2 * self.layers.len() + self.num_params()));
        out.extend_from_slice(&(self.layers.len() as u64).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.outputs as u64).to_le_bytes());
            out.extend_from_slice(&(l.inputs as u64).to_le_bytes());
        }
        for v in self.to_flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut words = bytes.chunks_exact(8);
        if !bytes.len().is_multiple_of(8) {
            return Err(Error::input(format!(
                "checkpoint length {} is not a multiple of 8",
                bytes.len()
            )));
        }
        let mut next_u64 = |what: &str| -> Result<u64> {
            words
                .next()
                .map(|w| u64::from_le_bytes(w.try_into().expect("8-byte chunk")))
                .ok_or_else(|| Error::input(format!("checkpoint truncated reading {what}")))
        };
        let count = next_u64("layer count")? as usize;
        if count == 0 || count > 1024 {
            return Err(Error::input(format!("implausible layer count {count}")));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let outputs = next_u64("layer shape")? as usize;
            let inputs = next_u64("layer shape")? as usize;
            layers.push(Dense::zeros(inputs, outputs));
        }
        let mut params = Self::from_layers(layers)?;
        let body = &bytes[8 * (1 + 2 * count)..];
        if body.len() != 8 * params.num_params() {
            return Err(Error::input(format!(
                "checkpoint holds {} values, shape header needs {}",
                body.len() / 8,
                params.num_params()
            )));
        }
        let flat: Vec<f64> = body
            .chunks_exact(8)
            .map(|w| f64::from_le_bytes(w.try_into().expect("8-byte chunk")))
            .collect();
        params.set_flat(&flat)?;
        params.version = 0;
        Ok(params)
    }
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.values().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.values().all(|v| v.is_finite()))
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.values_mut().for_each(|v| *v = 0.0);
        }
    }

    pub(crate) fn same_shape(&self, params: &MlpParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, p)| g.inputs == p.inputs && g.outputs == p.outputs)
    }

    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Dense::values_mut)
    }

    pub(crate) fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Dense::values)
    }
}

impl MlpParams {
    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.version += 1;
        self.layers.iter_mut().flat_map(Dense::values_mut)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{alr_grad_logits, alr_loss, finite_diff_grad, softmax, ProbVector};

    fn naive_forward(params: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let depth = params.layers().len();
        for (l, layer) in params.layers().iter().enumerate() {
            let mut z = vec![0.0; layer.outputs];
            for i in 0..layer.outputs {
                let mut s = layer.bias[i];
                for j in 0..layer.inputs {
                    s += layer.weights[i * layer.inputs + j] * a[j];
                }
                z[i] = if l + 1 < depth { s.max(0.0) } else { s };
            }
            a = z;
        }
        a
    }

    #[test]
    fn zero_network_gives_uniform_prediction() {
        let params = MlpParams::zeros(&[3, 8, 4]).unwrap();
        let (z, _) = params.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(z.as_slice(), &[0.0; 4]);
        assert_eq!(softmax(&z), ProbVector::uniform(4).unwrap());
    }

    #[test]
    fn identity_single_layer_passes_inputs_through() {
        let mut layer = Dense::zeros(3, 3);
        for i in 0..3 {
            layer.weights[i * 3 + i] = 1.0;
        }
        let params = MlpParams::from_layers(vec![layer]).unwrap();
        let (z, cache) = params.forward(&[0.5, -1.0, 2.0]).unwrap();
        assert_eq!(z.as_slice(), &[0.5, -1.0, 2.0]);
        assert_eq!(cache.penultimate(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn forward_matches_naive_loops() {
        let params = MlpParams::init(&[5, 7, 6, 3], 11).unwrap();
        let x = [0.3, -0.7, 1.1, 0.0, 2.5];
        let (z, _) = params.forward(&x).unwrap();
        let expect = naive_forward(&params, &x);
        for (a, b) in z.as_slice().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(params.logits(&x).unwrap(), z.into_inner());
    }

    #[test]
    fn shape_mismatches_are_config_errors() {
        let params = MlpParams::zeros(&[3, 4, 2]).unwrap();
        assert!(matches!(params.forward(&[1.0, 2.0]), Err(Error::Config(_))));
        let bad = vec![Dense::zeros(3, 4), Dense::zeros(5, 2)];
        assert!(matches!(MlpParams::from_layers(bad), Err(Error::Config(_))));
        assert!(MlpParams::zeros(&[3]).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradient() {
        let params = MlpParams::init(&[3, 4, 3], 2).unwrap();
        let (_, cache) = params.forward(&[0.1, 0.2, 0.3]).unwrap();
        let g = params.backward(&cache, &[0.0; 3]).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_upstream_gradient() {
        let params = MlpParams::init(&[3, 4, 3], 5).unwrap();
        let (_, cache) = params.forward(&[0.4, -0.2, 0.9]).unwrap();
        let g1 = params.backward(&cache, &[0.3, -0.1, 0.25]).unwrap().to_flat();
        let g2 = params.backward(&cache, &[0.6, -0.2, 0.5]).unwrap().to_flat();
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut params = MlpParams::init(&[2, 3, 2], 1).unwrap();
        let (_, cache) = params.forward(&[1.0, 1.0]).unwrap();
        params.layers_mut()[0].bias[0] += 1.0;
        assert!(matches!(
            params.backward(&cache, &[0.1, -0.1]),
            Err(Error::InvalidState(_))
        ));
        let other = MlpParams::init(&[2, 5, 2], 1).unwrap();
        let (_, cache) = other.forward(&[1.0, 1.0]).unwrap();
        assert!(params.backward(&cache, &[0.1, -0.1]).is_err());
    }

    #[test]
    fn parameter_gradients_match_central_differences() {
        // D=3, hidden=4, K=3: 31 parameters
        let params = MlpParams::init(&[3, 4, 3], 9).unwrap();
        let x = [0.7, -0.4, 1.3];
        let t = ProbVector::new(vec![0.2, 0.7, 0.1]).unwrap();
        let lambda = 0.2;
        let (z, cache) = params.forward(&x).unwrap();
        let p = softmax(&z);
        let upstream = alr_grad_logits(&t, &p, lambda).unwrap();
        let analytic = params.backward(&cache, &upstream).unwrap().to_flat();
        let flat = params.to_flat();
        let numeric = finite_diff_grad(
            |theta| {
                let mut q = params.clone();
                q.set_flat(theta).unwrap();
                let (z, _) = q.forward(&x).unwrap();
                alr_loss(&t, &softmax(&z), lambda).unwrap()
            },
            &flat,
            1e-6,
        );
        let scale = analytic
            .iter()
            .chain(&numeric)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() / scale <= 1e-5, "{a} vs {n}");
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip() {
        let params = MlpParams::init(&[4, 6, 3], 3).unwrap();
        let bytes = params.to_bytes();
        assert_eq!(&bytes[..8], &2u64.to_le_bytes());
        assert_eq!(&bytes[8..16], &6u64.to_le_bytes());
        assert_eq!(bytes.len(), 8 * (1 + 4 + params.num_params()));
        let back = MlpParams::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_flat(), params.to_flat());
        assert_eq!(back.sizes(), vec![4, 6, 3]);
        assert!(MlpParams::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(MlpParams::from_bytes(&bytes[..13]).is_err());
    }

    #[test]
    fn glorot_respects_bounds_and_seed() {
        let a = MlpParams::init(&[10, 20, 5], 42).unwrap();
        let b = MlpParams::init(&[10, 20, 5], 42).unwrap();
        assert_eq!(a, b);
        let bound = libm::sqrt(6.0 / 30.0);
        assert!(a.layers()[0].weights.iter().all(|w| w.abs() <= bound));
        assert!(a.layers()[0].bias.iter().all(|&b| b == 0.0));
    }
}
