//! Small fully connected feedforward network with exact reverse-mode gradients.
//!
//! Hidden layers use `tanh`; the output layer is either linear or a logistic
//! sigmoid. Both the critic and the action network of the HDP controller are
//! instances of [`Mlp`].
//!
//! # Snapshot format
//!
//! ```text
//! mlp v1
//! layers 5 5 5 1
//! activations tanh linear
//! <layer 1: weights row-major (out x in), then biases>
//! <layer 2: ...>
//! ```
//!
//! Numbers are written with Rust's shortest round-trip float formatting, so a
//! snapshot reloads bit-exactly.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlpError {
    #[error("invalid layer sizes {0:?}: need at least two layers, all of size >= 1")]
    InvalidSizes(Vec<usize>),
    #[error("input has length {got}, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("forward cache does not belong to this network state")]
    StaleCache,
    #[error("update refused: a parameter would become non-finite")]
    NonFiniteUpdate,
    #[error("snapshot parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Linear,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn slope(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Activation::Tanh),
            "linear" => Some(Activation::Linear),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    /// `weights[l]` is `layer_sizes[l + 1] x layer_sizes[l]`, row-major.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    hidden_activation: Activation,
    output_activation: Activation,
    generation: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layer_sizes == other.layer_sizes
            && self.hidden_activation == other.hidden_activation
            && self.output_activation == other.output_activation
            && self.weights == other.weights
            && self.biases == other.biases
    }
}

/// Activations retained by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input, the last entry the network output.
    activations: Vec<Vec<f64>>,
    generation: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Gradient (or any other quantity) shaped like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|g| *g *= factor);
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        let pairs = self
            .weights
            .iter_mut()
            .zip(&other.weights)
            .chain(self.biases.iter_mut().zip(&other.biases));
        for (dst, src) in pairs {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += factor * s;
            }
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.biases).flatten()
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut()).flatten()
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, g| m.max(g.abs()))
    }
}

impl Mlp {
    /// Network with weights drawn uniformly from `±1/sqrt(fan_in)` and zero
    /// biases. Same seed, same network.
    pub fn init(
        layer_sizes: &[usize],
        output_activation: Activation,
        seed: u64,
    ) -> Result<Self, MlpError> {
        let mut net = Self::zeros(layer_sizes, output_activation)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, w) in net.weights.iter_mut().enumerate() {
            let bound = 1.0 / (layer_sizes[l] as f64).sqrt();
            for x in w.iter_mut() {
                *x = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    /// Network with every parameter zero.
    pub fn zeros(layer_sizes: &[usize], output_activation: Activation) -> Result<Self, MlpError> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(MlpError::InvalidSizes(layer_sizes.to_vec()));
        }
        let weights = layer_sizes
            .windows(2)
            .map(|p| vec![0.0; p[0] * p[1]])
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden_activation: Activation::Tanh,
            output_activation,
            generation: 0,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_len(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_len(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 1]
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    /// Row-major weights of layer `l` (`out x in`).
    pub fn weights(&self, l: usize) -> &[f64] {
        &self.weights[l]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        &self.biases[l]
    }

    /// Mutable parameter access. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> (&mut [Vec<f64>], &mut [Vec<f64>]) {
        self.generation += 1;
        (&mut self.weights, &mut self.biases)
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.weights.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    /// Output only; no cache is kept.
    pub fn eval(&self, input: &[f64]) -> Result<Vec<f64>, MlpError> {
        self.check_input(input)?;
        let mut a = input.to_vec();
        for l in 0..self.weights.len() {
            a = self.layer_forward(l, &a);
        }
        Ok(a)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache), MlpError> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        activations.push(input.to_vec());
        for l in 0..self.weights.len() {
            let next = self.layer_forward(l, &activations[l]);
            activations.push(next);
        }
        let out = activations[activations.len() - 1].clone();
        Ok((
            out,
            ForwardCache {
                activations,
                generation: self.generation,
            },
        ))
    }

    fn check_input(&self, input: &[f64]) -> Result<(), MlpError> {
        if input.len() != self.input_len() {
            return Err(MlpError::DimensionMismatch {
                expected: self.input_len(),
                got: input.len(),
            });
        }
        Ok(())
    }

    fn layer_forward(&self, l: usize, a: &[f64]) -> Vec<f64> {
        let n_in = self.layer_sizes[l];
        let act = self.activation_of(l);
        self.weights[l]
            .chunks_exact(n_in)
            .zip(&self.biases[l])
            .map(|(row, b)| act.apply(row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>() + b))
            .collect()
    }

    fn check_cache(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<(), MlpError> {
        if cache.generation != self.generation || cache.activations.len() != self.weights.len() + 1
        {
            return Err(MlpError::StaleCache);
        }
        if upstream.len() != self.output_len() {
            return Err(MlpError::DimensionMismatch {
                expected: self.output_len(),
                got: upstream.len(),
            });
        }
        Ok(())
    }

    /// Runs the backward pass; `visit` receives each layer index with the
    /// loss gradient w.r.t. that layer's pre-activation. Returns the gradient
    /// w.r.t. the network input.
    fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        mut visit: impl FnMut(usize, &[f64]),
    ) -> Vec<f64> {
        let mut delta: Vec<f64> = upstream.to_vec();
        for l in (0..self.weights.len()).rev() {
            let act = self.activation_of(l);
            for (d, a) in delta.iter_mut().zip(&cache.activations[l + 1]) {
                *d *= act.slope(*a);
            }
            visit(l, &delta);
            let n_in = self.layer_sizes[l];
            let mut below = vec![0.0; n_in];
            for (row, d) in self.weights[l].chunks_exact(n_in).zip(&delta) {
                for (b, w) in below.iter_mut().zip(row) {
                    *b += w * d;
                }
            }
            delta = below;
        }
        delta
    }

    /// Gradient of the loss w.r.t. every weight and bias, given
    /// `d_loss/d_output` at the cached forward pass.
    pub fn grad_weights(
        &self,
        cache: &ForwardCache,
        d_output: &[f64],
    ) -> Result<Gradients, MlpError> {
        self.check_cache(cache, d_output)?;
        let mut grads = Gradients::zeros_like(self);
        self.backward(cache, d_output, |l, delta| {
            let inputs = &cache.activations[l];
            let n_in = inputs.len();
            for (j, d) in delta.iter().enumerate() {
                grads.biases[l][j] = *d;
                for (g, x) in grads.weights[l][j * n_in..(j + 1) * n_in].iter_mut().zip(inputs) {
                    *g = d * x;
                }
            }
        });
        Ok(grads)
    }

    /// Gradient of the loss w.r.t. the network input.
    pub fn grad_input(&self, cache: &ForwardCache, d_output: &[f64]) -> Result<Vec<f64>, MlpError> {
        self.check_cache(cache, d_output)?;
        Ok(self.backward(cache, d_output, |_, _| {}))
    }

    /// Both gradients from a single backward pass.
    pub fn grad_both(
        &self,
        cache: &ForwardCache,
        d_output: &[f64],
    ) -> Result<(Gradients, Vec<f64>), MlpError> {
        let grads = self.grad_weights(cache, d_output)?;
        let input = self.backward(cache, d_output, |_, _| {});
        Ok((grads, input))
    }

    /// Plain gradient descent: `θ ← θ − learning_rate · grad`.
    ///
    /// The network is left untouched if any resulting parameter would be
    /// non-finite.
    pub fn apply_update(&mut self, grads: &Gradients, learning_rate: f64) -> Result<(), MlpError> {
        let shapes_match = grads.weights.len() == self.weights.len()
            && grads.biases.len() == self.biases.len()
            && grads.weights.iter().zip(&self.weights).all(|(g, w)| g.len() == w.len())
            && grads.biases.iter().zip(&self.biases).all(|(g, b)| g.len() == b.len());
        if !shapes_match {
            return Err(MlpError::DimensionMismatch {
                expected: self.num_params(),
                got: grads.values().count(),
            });
        }
        if learning_rate == 0.0 {
            return Ok(());
        }
        let params = self.weights.iter().chain(&self.biases).flatten();
        if params
            .zip(grads.values())
            .any(|(p, g)| !(p - learning_rate * g).is_finite())
        {
            return Err(MlpError::NonFiniteUpdate);
        }
        let (weights, biases) = self.params_mut();
        let params = weights.iter_mut().chain(biases.iter_mut()).flatten();
        for (p, g) in params.zip(grads.values()) {
            *p -= learning_rate * g;
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Plain-text snapshot; see the module docs for the layout.
    pub fn save(&self) -> String {
        let mut out = String::from("mlp v1\nlayers");
        for n in &self.layer_sizes {
            let _ = write!(out, " {n}");
        }
        let _ = writeln!(
            out,
            "\nactivations {} {}",
            self.hidden_activation.name(),
            self.output_activation.name()
        );
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let row: Vec<String> = w.iter().chain(b).map(|x| format!("{x:e}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn load(text: &str) -> Result<Self, MlpError> {
        let err = |line: usize, message: String| MlpError::Parse { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(0, format!("unexpected end of input, expected {what}")))
        };

        let (n, header) = next("header")?;
        if header != "mlp v1" {
            return Err(err(n, format!("expected header `mlp v1`, found `{header}`")));
        }

        let (n, sizes_line) = next("layer sizes")?;
        let mut fields = sizes_line.split_whitespace();
        if fields.next() != Some("layers") {
            return Err(err(n, "expected `layers <n0> <n1> ...`".into()));
        }
        let sizes = fields
            .map(|f| f.parse::<usize>().map_err(|e| err(n, format!("bad layer size `{f}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;

        let (n, act_line) = next("activations")?;
        let fields: Vec<&str> = act_line.split_whitespace().collect();
        let [tag, hidden, output] = fields[..] else {
            return Err(err(n, "expected `activations <hidden> <output>`".into()));
        };
        if tag != "activations" {
            return Err(err(n, "expected `activations <hidden> <output>`".into()));
        }
        let hidden = Activation::from_name(hidden)
            .filter(|a| *a == Activation::Tanh)
            .ok_or_else(|| err(n, format!("unsupported hidden activation `{hidden}`")))?;
        let output = Activation::from_name(output)
            .filter(|a| *a != Activation::Tanh)
            .ok_or_else(|| err(n, format!("unsupported output activation `{output}`")))?;

        let mut net = Self::zeros(&sizes, output).map_err(|e| err(2, e.to_string()))?;
        net.hidden_activation = hidden;
        for l in 0..net.weights.len() {
            let (n, row) = next("parameter row")?;
            let values = row
                .split_whitespace()
                .enumerate()
                .map(|(col, f)| {
                    f.parse::<f64>()
                        .map_err(|e| err(n, format!("column {}: bad number `{f}`: {e}", col + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let (nw, nb) = (net.weights[l].len(), net.biases[l].len());
            if values.len() != nw + nb {
                return Err(err(
                    n,
                    format!("layer {} expects {} parameters, found {}", l + 1, nw + nb, values.len()),
                ));
            }
            if let Some(col) = values.iter().position(|v| !v.is_finite()) {
                return Err(err(n, format!("column {}: non-finite parameter", col + 1)));
            }
            net.weights[l].copy_from_slice(&values[..nw]);
            net.biases[l].copy_from_slice(&values[nw..]);
        }
        if let Some((n, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(err(n, format!("trailing content `{extra}`")));
        }
        Ok(net)
    }
}
