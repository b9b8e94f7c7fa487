use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LensError, Result};

/// Negative-side slope used throughout the encoder and decoder stacks.
pub const DEFAULT_LEAKY_ALPHA: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    LeakyRelu { alpha: f64 },
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::LeakyRelu { alpha } => {
                if v >= 0.0 {
                    v
                } else {
                    alpha * v
                }
            }
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu { alpha } => {
                if pre >= 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            input_dim,
            output_dim,
            activation,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(LensError::Config(format!(
                "layer dims must be >= 1, got {}x{}",
                self.input_dim, self.output_dim
            )));
        }
        if let Activation::LeakyRelu { alpha } = self.activation {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(LensError::Config(format!(
                    "leaky relu alpha must lie in (0,1), got {alpha}"
                )));
            }
        }
        Ok(())
    }
}

/// Layer specs for a multilayer perceptron `input -> widths[0] -> ... -> widths[last]`.
///
/// Hidden layers use leaky ReLU with slope `alpha`; the final layer is linear.
pub fn mlp_specs(input_dim: usize, widths: &[usize], alpha: f64) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(widths.len());
    let mut fan_in = input_dim;
    for (i, &w) in widths.iter().enumerate() {
        let activation = if i + 1 == widths.len() {
            Activation::Identity
        } else {
            Activation::LeakyRelu { alpha }
        };
        specs.push(LayerSpec::new(fan_in, w, activation));
        fan_in = w;
    }
    specs
}

/// Purely linear stack, used for the projection head.
pub fn linear_specs(input_dim: usize, widths: &[usize]) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(widths.len());
    let mut fan_in = input_dim;
    for &w in widths {
        specs.push(LayerSpec::new(fan_in, w, Activation::Identity));
        fan_in = w;
    }
    specs
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub spec: LayerSpec,
    /// Row-major `output_dim x input_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(spec: LayerSpec) -> Self {
        DenseLayer {
            spec,
            weights: vec![0.0; spec.input_dim * spec.output_dim],
            bias: vec![0.0; spec.output_dim],
        }
    }

    #[inline]
    fn row(&self, o: usize) -> &[f64] {
        let n = self.spec.input_dim;
        &self.weights[o * n..(o + 1) * n]
    }
}

/// Feed-forward stack of affine layers followed by elementwise activations.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<DenseLayer>,
    generation: u64,
}

/// Activation record of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    generation: u64,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// Nonzero input coordinates per layer, recorded when the input is sparse.
    sparse: Vec<Option<Vec<usize>>>,
}

impl Tape {
    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }
}

/// Parameter gradients shaped like a [`DenseNetwork`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.slices_mut().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .flat_map(|s| s.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Weight then bias slice per layer, in layer order.
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.bias.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
fn dense_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, ra) = a.split_at(a.len() / 4 * 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn is_sparse(x: &[f64]) -> Option<Vec<usize>> {
    let nnz = x.iter().filter(|v| **v != 0.0).count();
    if nnz * 4 < x.len() {
        Some(
            x.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, _)| i)
                .collect(),
        )
    } else {
        None
    }
}

impl DenseNetwork {
    /// Network with all parameters zero.
    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        if specs.is_empty() {
            return Err(LensError::Config("network needs at least one layer".into()));
        }
        for (i, s) in specs.iter().enumerate() {
            s.validate()?;
            if i > 0 && specs[i - 1].output_dim != s.input_dim {
                return Err(LensError::Config(format!(
                    "layer {i} input dim {} does not chain with previous output dim {}",
                    s.input_dim,
                    specs[i - 1].output_dim
                )));
            }
        }
        Ok(DenseNetwork {
            layers: specs.iter().copied().map(DenseLayer::zeros).collect(),
            generation: 0,
        })
    }

    /// Glorot-uniform weights, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(specs)?;
        for layer in &mut net.layers {
            let a = glorot_bound(layer.spec.input_dim, layer.spec.output_dim);
            for w in &mut layer.weights {
                *w = rng.gen_range(-a..=a);
            }
        }
        Ok(net)
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        Self::zeros(&specs)?;
        for l in &layers {
            if l.weights.len() != l.spec.input_dim * l.spec.output_dim
                || l.bias.len() != l.spec.output_dim
            {
                return Err(LensError::Config("parameter shape does not match layer spec".into()));
            }
        }
        Ok(DenseNetwork {
            layers,
            generation: 0,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.output_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.parameter_slices().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// Weight then bias slice per layer, matching [`Gradients::slices`].
    pub fn parameter_slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    /// Mutable parameter access. Invalidates any outstanding tapes.
    pub fn parameter_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.generation += 1;
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(LensError::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn affine(layer: &DenseLayer, x: &[f64], nz: Option<&[usize]>, out: &mut [f64]) {
        for (o, y) in out.iter_mut().enumerate() {
            let row = layer.row(o);
            let dot = match nz {
                Some(idx) => idx.iter().map(|&i| row[i] * x[i]).sum::<f64>(),
                None => dense_dot(row, x),
            };
            *y = dot + layer.bias[o];
        }
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let nz = is_sparse(&cur);
            let mut out = vec![0.0; layer.spec.output_dim];
            Self::affine(layer, &cur, nz.as_deref(), &mut out);
            out.iter_mut()
                .for_each(|v| *v = layer.spec.activation.apply(*v));
            cur = out;
        }
        Ok(cur)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut tape = Tape {
            generation: self.generation,
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            sparse: Vec::with_capacity(n),
        };
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let nz = is_sparse(&cur);
            let mut pre = vec![0.0; layer.spec.output_dim];
            Self::affine(layer, &cur, nz.as_deref(), &mut pre);
            let out: Vec<f64> = pre
                .iter()
                .map(|&v| layer.spec.activation.apply(v))
                .collect();
            tape.inputs.push(std::mem::replace(&mut cur, out));
            tape.pre.push(pre);
            tape.sparse.push(nz);
        }
        Ok((cur, tape))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64], grads: &mut Gradients) -> Result<Vec<f64>> {
        self.backward_impl(tape, output_grad, Some(grads), true)
            .map(|g| g.expect("input gradient requested"))
    }

    /// Parameter gradients only; skips the input-gradient product of the first layer.
    pub fn backward_params(&self, tape: &Tape, output_grad: &[f64], grads: &mut Gradients) -> Result<()> {
        self.backward_impl(tape, output_grad, Some(grads), false)
            .map(|_| ())
    }

    /// Input gradient only, for frozen networks.
    pub fn backward_input(&self, tape: &Tape, output_grad: &[f64]) -> Result<Vec<f64>> {
        self.backward_impl(tape, output_grad, None, true)
            .map(|g| g.expect("input gradient requested"))
    }

    fn backward_impl(
        &self,
        tape: &Tape,
        output_grad: &[f64],
        mut grads: Option<&mut Gradients>,
        want_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        if tape.generation != self.generation || tape.pre.len() != self.layers.len() {
            return Err(LensError::Config(
                "stale tape: network parameters changed after the forward pass".into(),
            ));
        }
        if output_grad.len() != self.output_dim() {
            return Err(LensError::DimensionMismatch {
                expected: self.output_dim(),
                actual: output_grad.len(),
            });
        }
        let mut upstream = output_grad.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let act = layer.spec.activation;
            let delta: Vec<f64> = upstream
                .iter()
                .zip(&tape.pre[li])
                .map(|(g, &p)| g * act.derivative(p))
                .collect();
            let x = &tape.inputs[li];
            let n_in = layer.spec.input_dim;

            if let Some(g) = grads.as_deref_mut() {
                let gw = &mut g.weights[li];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    match &tape.sparse[li] {
                        Some(idx) => idx.iter().for_each(|&i| row[i] += d * x[i]),
                        None => row.iter_mut().zip(x).for_each(|(r, v)| *r += d * v),
                    }
                }
                g.bias[li].iter_mut().zip(&delta).for_each(|(b, d)| *b += d);
            }

            if li == 0 && !want_input {
                return Ok(None);
            }
            let mut down = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                down.iter_mut()
                    .zip(layer.row(o))
                    .for_each(|(dx, w)| *dx += d * w);
            }
            upstream = down;
        }
        Ok(Some(upstream))
    }
}

impl DenseNetwork {
    /// Forward pass over a batch, one tape per sample. Each weight row is
    /// applied to the whole batch while it is in cache; results match
    /// [`DenseNetwork::forward`] exactly.
    pub fn forward_batch(&self, xs: &[&[f64]]) -> Result<(Vec<Vec<f64>>, Vec<Tape>)> {
        for x in xs {
            self.check_input(x)?;
        }
        let n = self.layers.len();
        let mut tapes: Vec<Tape> = xs
            .iter()
            .map(|_| Tape {
                generation: self.generation,
                inputs: Vec::with_capacity(n),
                pre: Vec::with_capacity(n),
                sparse: Vec::with_capacity(n),
            })
            .collect();
        let mut cur: Vec<Vec<f64>> = xs.iter().map(|x| x.to_vec()).collect();
        for layer in &self.layers {
            let nz: Vec<Option<Vec<usize>>> = cur.iter().map(|c| is_sparse(c)).collect();
            let n_out = layer.spec.output_dim;
            let mut pre = vec![vec![0.0; n_out]; cur.len()];
            for o in 0..n_out {
                let row = layer.row(o);
                for (b, x) in cur.iter().enumerate() {
                    let dot = match &nz[b] {
                        Some(idx) => idx.iter().map(|&i| row[i] * x[i]).sum::<f64>(),
                        None => dense_dot(row, x),
                    };
                    pre[b][o] = dot + layer.bias[o];
                }
            }
            for (b, (p, z)) in pre.into_iter().zip(nz).enumerate() {
                let out: Vec<f64> = p.iter().map(|&v| layer.spec.activation.apply(v)).collect();
                let t = &mut tapes[b];
                t.inputs.push(std::mem::replace(&mut cur[b], out));
                t.pre.push(p);
                t.sparse.push(z);
            }
        }
        Ok((cur, tapes))
    }

    /// Batched counterpart of [`DenseNetwork::backward`]. Parameter gradients
    /// of all samples are summed into `grads`; input gradients are returned
    /// when `want_input` is set.
    pub fn backward_batch(
        &self,
        tapes: &[Tape],
        output_grads: &[&[f64]],
        mut grads: Option<&mut Gradients>,
        want_input: bool,
    ) -> Result<Option<Vec<Vec<f64>>>> {
        if tapes.len() != output_grads.len() {
            return Err(LensError::DimensionMismatch {
                expected: tapes.len(),
                actual: output_grads.len(),
            });
        }
        for (t, g) in tapes.iter().zip(output_grads) {
            if t.generation != self.generation || t.pre.len() != self.layers.len() {
                return Err(LensError::Config(
                    "stale tape: network parameters changed after the forward pass".into(),
                ));
            }
            if g.len() != self.output_dim() {
                return Err(LensError::DimensionMismatch {
                    expected: self.output_dim(),
                    actual: g.len(),
                });
            }
        }
        let mut upstream: Vec<Vec<f64>> = output_grads.iter().map(|g| g.to_vec()).collect();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let act = layer.spec.activation;
            let n_in = layer.spec.input_dim;
            let deltas: Vec<Vec<f64>> = upstream
                .iter()
                .zip(tapes)
                .map(|(u, t)| u.iter().zip(&t.pre[li]).map(|(g, &p)| g * act.derivative(p)).collect())
                .collect();

            if let Some(g) = grads.as_deref_mut() {
                let gw = &mut g.weights[li];
                for o in 0..layer.spec.output_dim {
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    for (delta, t) in deltas.iter().zip(tapes) {
                        let d = delta[o];
                        if d == 0.0 {
                            continue;
                        }
                        let x = &t.inputs[li];
                        match &t.sparse[li] {
                            Some(idx) => idx.iter().for_each(|&i| row[i] += d * x[i]),
                            None => row.iter_mut().zip(x).for_each(|(r, v)| *r += d * v),
                        }
                    }
                }
                for delta in &deltas {
                    g.bias[li].iter_mut().zip(delta).for_each(|(b, d)| *b += d);
                }
            }

            if li == 0 && !want_input {
                return Ok(None);
            }
            let mut down = vec![vec![0.0; n_in]; deltas.len()];
            for o in 0..layer.spec.output_dim {
                let row = layer.row(o);
                for (dx, delta) in down.iter_mut().zip(&deltas) {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    dx.iter_mut().zip(row).for_each(|(a, w)| *a += d * w);
                }
            }
            upstream = down;
        }
        Ok(Some(upstream))
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn single(weights: Vec<f64>, bias: Vec<f64>, n_in: usize, n_out: usize, act: Activation) -> DenseNetwork {
        DenseNetwork::from_layers(vec![DenseLayer {
            spec: LayerSpec::new(n_in, n_out, act),
            weights,
            bias,
        }])
        .unwrap()
    }

    #[test]
    fn identity_network_is_identity() {
        let net = single(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, 2, Activation::Identity);
        assert_eq!(net.predict(&[0.3, -2.0]).unwrap(), vec![0.3, -2.0]);
    }

    #[test]
    fn hand_arithmetic_forward() {
        let net = single(vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 0.0], 2, 2, Activation::Identity);
        assert_eq!(net.predict(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn leaky_relu_slope() {
        let act = Activation::LeakyRelu { alpha: DEFAULT_LEAKY_ALPHA };
        assert_eq!(act.apply(-1.0), -0.4);
        assert_eq!(act.apply(2.0), 2.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = single(vec![1.0; 4], vec![0.0; 2], 2, 2, Activation::Identity);
        assert!(matches!(
            net.forward(&[1.0, 2.0, 3.0]),
            Err(LensError::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn chaining_is_validated() {
        let specs = vec![
            LayerSpec::new(4, 3, Activation::Identity),
            LayerSpec::new(2, 2, Activation::Identity),
        ];
        assert!(DenseNetwork::zeros(&specs).is_err());
    }

    #[test]
    fn glorot_bound_and_zero_bias() {
        assert_eq!(glorot_bound(4, 2), 1.0);
        let net = DenseNetwork::glorot(&mlp_specs(4, &[2], 0.4), &mut rng_from_seed(1)).unwrap();
        assert!(net.layers()[0].bias.iter().all(|b| *b == 0.0));
        assert!(net.layers()[0].weights.iter().all(|w| w.abs() <= 1.0));
    }

    #[test]
    fn glorot_variance_matches_uniform() {
        // 100_000 samples from one 200x500 layer.
        let specs = [LayerSpec::new(500, 200, Activation::Identity)];
        let net = DenseNetwork::glorot(&specs, &mut rng_from_seed(9)).unwrap();
        let w = &net.layers()[0].weights;
        let a = glorot_bound(500, 200);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let expected = a * a / 3.0;
        assert!((var / expected - 1.0).abs() < 0.02, "var {var} vs {expected}");
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let net = DenseNetwork::glorot(&mlp_specs(4, &[3, 2], 0.4), &mut rng_from_seed(3)).unwrap();
        let (_, tape) = net.forward(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let mut g = Gradients::zeros_like(&net);
        net.backward(&tape, &[0.0, 0.0], &mut g).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn bias_gradient_of_identity_layer_is_output_gradient() {
        let net = single(vec![0.5, -1.0, 2.0, 0.25], vec![0.1, 0.2], 2, 2, Activation::Identity);
        let (_, tape) = net.forward(&[1.0, 3.0]).unwrap();
        let mut g = Gradients::zeros_like(&net);
        net.backward(&tape, &[0.7, -1.3], &mut g).unwrap();
        assert_eq!(g.bias[0], vec![0.7, -1.3]);
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut net = DenseNetwork::glorot(&mlp_specs(3, &[2], 0.4), &mut rng_from_seed(4)).unwrap();
        let (_, tape) = net.forward(&[1.0, 0.0, 0.0]).unwrap();
        for s in net.parameter_slices_mut() {
            s[0] += 1.0;
        }
        let mut g = Gradients::zeros_like(&net);
        assert!(net.backward(&tape, &[1.0, 1.0], &mut g).is_err());
    }

    /// Central finite differences of `sum(c .* net(x))` against reverse mode.
    #[test]
    fn backward_matches_finite_differences() {
        let specs = mlp_specs(4, &[3, 2], 0.4);
        for seed in 0..5 {
            let net = DenseNetwork::glorot(&specs, &mut rng_from_seed(seed)).unwrap();
            let x = [0.3, -0.7, 0.0, 1.1];
            let c = [0.6, -1.4];
            let objective = |n: &DenseNetwork| -> f64 {
                n.predict(&x).unwrap().iter().zip(&c).map(|(y, w)| y * w).sum()
            };
            let (_, tape) = net.forward(&x).unwrap();
            let mut g = Gradients::zeros_like(&net);
            let dx = net.backward(&tape, &c, &mut g).unwrap();
            let h = 1e-4;
            let analytic: Vec<f64> = g.slices().flat_map(|s| s.to_vec()).collect();
            let n_params = analytic.len();
            for k in 0..n_params {
                let mut plus = net.clone();
                let mut minus = net.clone();
                nth_param(&mut plus, k, h);
                nth_param(&mut minus, k, -h);
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-8);
                assert!(err < 1e-5 || (fd - analytic[k]).abs() < 1e-9, "param {k}: fd {fd} vs {}", analytic[k]);
            }
            for i in 0..x.len() {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let f = |v: &[f64]| -> f64 {
                    net.predict(v).unwrap().iter().zip(&c).map(|(y, w)| y * w).sum()
                };
                let fd = (f(&xp) - f(&xm)) / (2.0 * h);
                assert!((fd - dx[i]).abs() < 1e-8, "input {i}");
            }
        }
    }

    fn nth_param(net: &mut DenseNetwork, mut k: usize, delta: f64) {
        for s in net.parameter_slices_mut() {
            if k < s.len() {
                s[k] += delta;
                return;
            }
            k -= s.len();
        }
        panic!("parameter index out of range");
    }

    #[test]
    fn batched_passes_match_single_sample_passes() {
        let net = DenseNetwork::glorot(&mlp_specs(40, &[8, 3], 0.4), &mut rng_from_seed(12)).unwrap();
        let mut sparse = vec![0.0; 40];
        sparse[5] = 1.0;
        let dense: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let xs: Vec<&[f64]> = vec![&sparse, &dense, &sparse];
        let gs: Vec<Vec<f64>> = vec![vec![0.3, -1.0, 0.2], vec![1.5, 0.0, -0.4], vec![-0.2, 0.9, 0.1]];
        let mut single = Gradients::zeros_like(&net);
        let mut singles_dx = Vec::new();
        for (x, g) in xs.iter().zip(&gs) {
            let (_, tape) = net.forward(x).unwrap();
            singles_dx.push(net.backward(&tape, g, &mut single).unwrap());
        }
        let (ys, tapes) = net.forward_batch(&xs).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(&net.predict(x).unwrap(), y);
        }
        let mut batched = Gradients::zeros_like(&net);
        let grads: Vec<&[f64]> = gs.iter().map(|g| g.as_slice()).collect();
        let dx = net.backward_batch(&tapes, &grads, Some(&mut batched), true).unwrap().unwrap();
        assert_eq!(single, batched);
        assert_eq!(singles_dx, dx);
    }

    #[test]
    fn sparse_and_dense_paths_agree() {
        let net = DenseNetwork::glorot(&mlp_specs(40, &[8, 2], 0.4), &mut rng_from_seed(11)).unwrap();
        let mut x = vec![0.0; 40];
        x[3] = 1.0;
        x[17] = 0.5;
        let (y_sparse, tape) = net.forward(&x).unwrap();
        assert!(tape.sparse[0].is_some());
        // Dense reference computed directly.
        let l0 = &net.layers()[0];
        let h: Vec<f64> = (0..8)
            .map(|o| {
                let pre: f64 = (0..40).map(|i| l0.weights[o * 40 + i] * x[i]).sum::<f64>() + l0.bias[o];
                l0.spec.activation.apply(pre)
            })
            .collect();
        let l1 = &net.layers()[1];
        for o in 0..2 {
            let pre: f64 = (0..8).map(|i| l1.weights[o * 8 + i] * h[i]).sum::<f64>() + l1.bias[o];
            assert!((pre - y_sparse[o]).abs() < 1e-12);
        }
    }
}
