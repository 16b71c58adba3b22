//! Dense networks on spectral coefficients: the transport map
//! `T: R^K -> R^K` and the potential `V: R^K -> R`.
//!
//! Both are plain multilayer perceptrons with `tanh` hidden activations and a
//! linear output layer. The transport map is residual by default,
//! `T(x) = x + f(x)`, with the last layer of `f` initialized 100x smaller so
//! that `T` starts close to the identity.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NamedTensor, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Scale applied to the last layer of the residual branch at init.
pub const RESIDUAL_LAST_LAYER_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array2<f64>>,
    activation: Activation,
}

/// Tape handles for an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    weights: Vec<Var>,
    biases: Vec<Var>,
    activation: Activation,
}

impl Mlp {
    /// Normal init with standard deviation `scale * sqrt(2 / fan_in)` and zero
    /// biases; the last layer's weights are additionally multiplied by
    /// `last_layer_scale`.
    pub fn init(widths: &[usize], scale: f64, last_layer_scale: f64, activation: Activation, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!("invalid layer widths {widths:?}")));
        }
        if !scale.is_finite() || scale < 0.0 {
            return Err(Error::invalid(format!("init scale must be finite and >= 0, got {scale}")));
        }
        let layers = widths.len() - 1;
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let mut std = scale * (2.0 / fan_in as f64).sqrt();
            if l == layers - 1 {
                std *= last_layer_scale;
            }
            let w = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                let z: f64 = rng.sample(StandardNormal);
                std * z
            });
            weights.push(w);
            biases.push(Array2::zeros((1, fan_out)));
        }
        Ok(Mlp {
            widths: widths.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(|a| a.len()).sum()
    }

    /// Parameters in the order `w0, b0, w1, b1, ..`.
    pub fn params(&self) -> Vec<&Array2<f64>> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    /// Replaces all parameters, in [`params`](Self::params) order.
    pub fn set_params(&mut self, values: &[Array2<f64>]) -> Result<()> {
        let mut slots = self.params_mut();
        if values.len() != slots.len() {
            return Err(Error::shape("set_params", &[slots.len()], &[values.len()]));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if slot.raw_dim() != v.raw_dim() {
                return Err(Error::shape("set_params", slot.shape(), v.shape()));
            }
            slot.assign(v);
        }
        Ok(())
    }

    pub fn map_params(&mut self, mut f: impl FnMut(f64) -> f64) {
        for p in self.params_mut() {
            p.mapv_inplace(&mut f);
        }
    }

    /// Registers the parameters on `tape`.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Result<BoundMlp> {
        let mut weights = Vec::with_capacity(self.weights.len());
        let mut biases = Vec::with_capacity(self.biases.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            weights.push(tape.leaf(w.clone(), requires_grad)?);
            biases.push(tape.leaf(b.clone(), requires_grad)?);
        }
        Ok(BoundMlp {
            weights,
            biases,
            activation: self.activation,
        })
    }

    /// Forward pass without a tape.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_width() {
            return Err(Error::shape("mlp forward", &[self.input_width()], &[x.ncols()]));
        }
        let last = self.weights.len() - 1;
        let mut h = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.dot(w) + b;
            if l < last {
                match self.activation {
                    Activation::Tanh => h.mapv_inplace(f64::tanh),
                    Activation::Relu => h.mapv_inplace(|v| v.max(0.0)),
                }
            }
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mlp forward".into()));
        }
        Ok(h)
    }

    fn to_tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push(NamedTensor { name: format!("{prefix}layer{l}.weight"), value: w.clone() });
            out.push(NamedTensor { name: format!("{prefix}layer{l}.bias"), value: b.clone() });
        }
        out
    }

    fn from_tensors(tensors: &[NamedTensor], activation: Activation) -> Result<Self> {
        if tensors.is_empty() || !tensors.len().is_multiple_of(2) {
            return Err(Error::Parse("network checkpoint needs weight/bias pairs".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut widths = vec![tensors[0].value.nrows()];
        for pair in tensors.chunks(2) {
            let (w, b) = (&pair[0].value, &pair[1].value);
            if w.nrows() != *widths.last().unwrap() || b.nrows() != 1 || b.ncols() != w.ncols() {
                return Err(Error::Parse(format!(
                    "inconsistent layer shapes at `{}`: {:?} / {:?}",
                    pair[0].name,
                    w.shape(),
                    b.shape()
                )));
            }
            widths.push(w.ncols());
            weights.push(w.clone());
            biases.push(b.clone());
        }
        Ok(Mlp {
            widths,
            weights,
            biases,
            activation,
        })
    }
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let last = self.weights.len() - 1;
        let mut h = x;
        for (l, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = tape.matmul(h, w)?;
            h = tape.add_bias(z, b)?;
            if l < last {
                h = match self.activation {
                    Activation::Tanh => tape.tanh(h)?,
                    Activation::Relu => tape.relu(h)?,
                };
            }
        }
        Ok(h)
    }

    /// Parameter handles in `w0, b0, w1, b1, ..` order.
    pub fn vars(&self) -> Vec<Var> {
        self.weights.iter().zip(&self.biases).flat_map(|(&w, &b)| [w, b]).collect()
    }
}

/// Architecture of both networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_true")]
    pub residual: bool,
    #[serde(default = "default_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128]
}

fn default_true() -> bool {
    true
}

fn default_scale() -> f64 {
    1.0
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: default_hidden(),
            residual: true,
            init_scale: 1.0,
            activation: Activation::Tanh,
        }
    }
}

impl NetworkConfig {
    fn widths(&self, num_modes: usize, out: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(num_modes);
        w.extend(&self.hidden);
        w.push(out);
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportNet {
    mlp: Mlp,
    residual: bool,
}

impl TransportNet {
    pub fn init(num_modes: usize, config: &NetworkConfig, rng: &mut Rng) -> Result<Self> {
        let widths = config.widths(num_modes, num_modes);
        let last = if config.residual { RESIDUAL_LAST_LAYER_SCALE } else { 1.0 };
        let mlp = Mlp::init(&widths, config.init_scale, last, config.activation, rng)?;
        Ok(TransportNet {
            mlp,
            residual: config.residual,
        })
    }

    pub fn from_mlp(mlp: Mlp, residual: bool) -> Result<Self> {
        if mlp.input_width() != mlp.output_width() {
            return Err(Error::shape("transport net", &[mlp.input_width()], &[mlp.output_width()]));
        }
        Ok(TransportNet { mlp, residual })
    }

    pub fn num_modes(&self) -> usize {
        self.mlp.input_width()
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    /// `T(x)` for an `n x K` batch.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let f = self.mlp.forward(x)?;
        Ok(if self.residual { f + x } else { f })
    }

    /// `T(x)` recorded on `tape`; `bound` must come from `self.mlp().bind`.
    pub fn forward_tape(&self, tape: &mut Tape, bound: &BoundMlp, x: Var) -> Result<Var> {
        let f = bound.forward(tape, x)?;
        if self.residual {
            tape.add(x, f)
        } else {
            Ok(f)
        }
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        self.mlp.to_tensors("")
    }

    pub fn from_tensors(tensors: &[NamedTensor], residual: bool, activation: Activation) -> Result<Self> {
        Self::from_mlp(Mlp::from_tensors(tensors, activation)?, residual)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialNet {
    mlp: Mlp,
}

impl PotentialNet {
    pub fn init(num_modes: usize, config: &NetworkConfig, rng: &mut Rng) -> Result<Self> {
        let widths = config.widths(num_modes, 1);
        let mlp = Mlp::init(&widths, config.init_scale, 1.0, config.activation, rng)?;
        Ok(PotentialNet { mlp })
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if mlp.output_width() != 1 {
            return Err(Error::shape("potential net", &[1], &[mlp.output_width()]));
        }
        Ok(PotentialNet { mlp })
    }

    pub fn num_modes(&self) -> usize {
        self.mlp.input_width()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    /// `V(x)` as an `n x 1` column.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.mlp.forward(x)
    }

    pub fn forward_tape(&self, tape: &mut Tape, bound: &BoundMlp, x: Var) -> Result<Var> {
        bound.forward(tape, x)
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        self.mlp.to_tensors("")
    }

    pub fn from_tensors(tensors: &[NamedTensor], activation: Activation) -> Result<Self> {
        Self::from_mlp(Mlp::from_tensors(tensors, activation)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use ndarray::Array2;

    fn batch(n: usize, k: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream(seed, Stream::Data);
        Array2::from_shape_simple_fn((n, k), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zeroed_residual_branch_is_identity() {
        let mut rng = stream(0, Stream::Init);
        let mut t = TransportNet::init(16, &NetworkConfig::default(), &mut rng).unwrap();
        t.mlp_mut().map_params(|_| 0.0);
        let x = batch(9, 16, 1);
        assert_eq!(t.forward(x.view()).unwrap(), x);

        let cfg = NetworkConfig { init_scale: 0.0, ..Default::default() };
        let t = TransportNet::init(16, &cfg, &mut rng).unwrap();
        assert_eq!(t.forward(x.view()).unwrap(), x);
    }

    #[test]
    fn near_identity_at_init() {
        let mut rng = stream(4, Stream::Init);
        let t = TransportNet::init(16, &NetworkConfig::default(), &mut rng).unwrap();
        let x = batch(64, 16, 2);
        let d = t.forward(x.view()).unwrap() - &x;
        let max_row = d.rows().into_iter().map(|r| r.dot(&r).sqrt()).fold(0.0, f64::max);
        assert!(max_row < 0.1, "{max_row}");
    }

    #[test]
    fn shapes_and_zero_potential() {
        let mut rng = stream(0, Stream::Init);
        let mut v = PotentialNet::init(8, &NetworkConfig::default(), &mut rng).unwrap();
        for n in [1, 3, 17] {
            assert_eq!(v.forward(batch(n, 8, 0).view()).unwrap().dim(), (n, 1));
        }
        v.mlp_mut().map_params(|_| 0.0);
        assert!(v.forward(batch(5, 8, 0).view()).unwrap().iter().all(|&y| y == 0.0));
        assert!(v.forward(batch(5, 7, 0).view()).is_err());
    }

    #[test]
    fn init_depends_on_seed_only() {
        let cfg = NetworkConfig::default();
        let a = TransportNet::init(8, &cfg, &mut stream(1, Stream::Init)).unwrap();
        let b = TransportNet::init(8, &cfg, &mut stream(1, Stream::Init)).unwrap();
        let c = TransportNet::init(8, &cfg, &mut stream(2, Stream::Init)).unwrap();
        let d = TransportNet::init(8, &cfg, &mut stream(3, Stream::Init)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(c, d);
        assert_ne!(a, d);
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let mut rng = stream(5, Stream::Init);
        let t = TransportNet::init(6, &NetworkConfig { hidden: vec![7, 5], ..Default::default() }, &mut rng).unwrap();
        let x = batch(4, 6, 3);
        let mut tape = Tape::new();
        let bound = t.mlp().bind(&mut tape, true).unwrap();
        let xv = tape.constant(x.clone()).unwrap();
        let y = t.forward_tape(&mut tape, &bound, xv).unwrap();
        assert_eq!(tape.value(y), &t.forward(x.view()).unwrap());
    }

    #[test]
    fn tensor_round_trip() {
        let mut rng = stream(5, Stream::Init);
        let v = PotentialNet::init(4, &NetworkConfig { hidden: vec![3], ..Default::default() }, &mut rng).unwrap();
        let back = PotentialNet::from_tensors(&v.to_tensors(), Activation::Tanh).unwrap();
        assert_eq!(back, v);
        assert!(TransportNet::from_tensors(&v.to_tensors(), true, Activation::Tanh).is_err());
    }
}
