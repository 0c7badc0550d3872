//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Parameters live in one flat `Vec<f64>`, layer by layer, each layer stored
//! as its `out x in` weight matrix (row-major) followed by its bias. The same
//! layout is used for gradients, the optimizer moments, and checkpoints.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, XmaError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "RELU")]
    Relu,
    #[serde(rename = "TANH")]
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = XmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RELU" => Ok(Activation::Relu),
            "TANH" => Ok(Activation::Tanh),
            other => Err(XmaError::Config(format!("unknown activation {other:?}"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputKind {
    #[serde(rename = "FLAT_VECTOR")]
    FlatVector,
    #[serde(rename = "TEMPORAL_SEQUENCE")]
    TemporalSequence,
}

impl InputKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            InputKind::FlatVector => 0,
            InputKind::TemporalSequence => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(InputKind::FlatVector),
            1 => Some(InputKind::TemporalSequence),
            _ => None,
        }
    }
}

/// Shape and nonlinearity of a network. `widths` includes the input width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub input_kind: InputKind,
    /// Apply the activation after the last layer too.
    pub activate_output: bool,
}

impl NetworkSpec {
    pub fn new(
        widths: Vec<usize>,
        activation: Activation,
        input_kind: InputKind,
        activate_output: bool,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(XmaError::InvalidArgument(
                "a network needs an input and an output width".into(),
            ));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(XmaError::InvalidArgument(format!(
                "layer widths must be positive: {widths:?}"
            )));
        }
        Ok(NetworkSpec {
            widths,
            activation,
            input_kind,
            activate_output,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn hidden_layers(&self) -> usize {
        self.widths.len() - 2
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Activations recorded by a batched forward pass. `values[0]` is the input,
/// `values[l + 1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub rows: usize,
    pub values: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.values.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: NetworkSpec,
    params: Vec<f64>,
    frozen: bool,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(spec: NetworkSpec, rng: &mut R) -> Self {
        let mut params = Vec::with_capacity(spec.param_count());
        for w in spec.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-bound..bound));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Mlp {
            spec,
            params,
            frozen: false,
        }
    }

    pub fn zeros(spec: NetworkSpec) -> Self {
        let params = vec![0.0; spec.param_count()];
        Mlp {
            spec,
            params,
            frozen: false,
        }
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<f64>, frozen: bool) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(XmaError::Shape(format!(
                "network needs {} parameters, got {}",
                spec.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(XmaError::NonFinite("network parameter".into()));
        }
        Ok(Mlp {
            spec,
            params,
            frozen,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access. Panics on a frozen network.
    pub fn params_mut(&mut self) -> &mut [f64] {
        assert!(!self.frozen, "attempted to mutate a frozen network");
        &mut self.params
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.spec.widths.windows(2).map(move |w| {
            let start = offset;
            offset += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    /// Returns `(weights, bias)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (start, n_in, n_out) = self.layer_offsets().nth(l).expect("layer index");
        let w_end = start + n_in * n_out;
        (&self.params[start..w_end], &self.params[w_end..w_end + n_out])
    }

    fn check_input(&self, input: &[f64], rows: usize) -> Result<()> {
        if input.len() != rows * self.input_dim() {
            return Err(XmaError::Shape(format!(
                "network expects {} inputs per row, got {} values for {rows} rows",
                self.input_dim(),
                input.len()
            )));
        }
        Ok(())
    }

    /// Batched forward pass over `rows` row-major inputs.
    pub fn forward_trace(&self, input: &[f64], rows: usize) -> Result<Trace> {
        self.check_input(input, rows)?;
        let n_layers = self.spec.num_layers();
        let mut values = Vec::with_capacity(n_layers + 1);
        values.push(input.to_vec());
        for (l, (start, n_in, n_out)) in self.layer_offsets().enumerate() {
            let w = &self.params[start..start + n_in * n_out];
            let b = &self.params[start + n_in * n_out..start + n_in * n_out + n_out];
            let activate = l + 1 < n_layers || self.spec.activate_output;
            let prev = &values[l];
            let mut out = vec![0.0; rows * n_out];
            for r in 0..rows {
                let x = &prev[r * n_in..(r + 1) * n_in];
                let y = &mut out[r * n_out..(r + 1) * n_out];
                for o in 0..n_out {
                    let wr = &w[o * n_in..(o + 1) * n_in];
                    let mut acc = b[o];
                    for i in 0..n_in {
                        acc += wr[i] * x[i];
                    }
                    y[o] = if activate {
                        self.spec.activation.apply(acc)
                    } else {
                        acc
                    };
                }
            }
            values.push(out);
        }
        Ok(Trace { rows, values })
    }

    pub fn forward(&self, input: &[f64], rows: usize) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input, rows)?.values.pop().unwrap())
    }

    /// Backpropagates `grad_output` (same shape as the traced output).
    /// Returns `(parameter gradient, input gradient)`.
    pub fn backward(&self, trace: &Trace, grad_output: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let rows = trace.rows;
        let n_layers = self.spec.num_layers();
        let mut grad_params = vec![0.0; self.params.len()];
        let mut grad = grad_output.to_vec();
        let layers: Vec<_> = self.layer_offsets().collect();
        for l in (0..n_layers).rev() {
            let (start, n_in, n_out) = layers[l];
            let activate = l + 1 < n_layers || self.spec.activate_output;
            let out = &trace.values[l + 1];
            if activate {
                for (g, y) in grad.iter_mut().zip(out) {
                    *g *= self.spec.activation.derivative_from_output(*y);
                }
            }
            let input = &trace.values[l];
            let w = &self.params[start..start + n_in * n_out];
            let (gw, gb) = grad_params[start..start + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut grad_in = vec![0.0; rows * n_in];
            for r in 0..rows {
                let x = &input[r * n_in..(r + 1) * n_in];
                let gy = &grad[r * n_out..(r + 1) * n_out];
                let gx = &mut grad_in[r * n_in..(r + 1) * n_in];
                for o in 0..n_out {
                    let g = gy[o];
                    if g == 0.0 {
                        continue;
                    }
                    gb[o] += g;
                    let wr = &w[o * n_in..(o + 1) * n_in];
                    let gwr = &mut gw[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        gwr[i] += g * x[i];
                        gx[i] += g * wr[i];
                    }
                }
            }
            grad = grad_in;
        }
        (grad_params, grad)
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
