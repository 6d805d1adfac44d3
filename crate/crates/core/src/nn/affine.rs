use super::{prefixed, uniform_param, Activation, Module};
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::tensor::Tensor;

/// `y = x Wᵀ + b` with `W: [out × in]`.
#[derive(Clone, Debug)]
pub struct AffineLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl AffineLayer {
    /// Uniform init in `±sqrt(1/fan_in)` for both weight and bias.
    pub fn new(input: usize, output: usize, key: StreamKey) -> Self {
        let bound = (1.0 / input.max(1) as f64).sqrt();
        AffineLayer {
            weight: uniform_param(key.child(0), &[output, input], bound),
            bias: uniform_param(key.child(1), &[output], bound),
        }
    }

    pub fn from_tensors(weight: Tensor, bias: Tensor) -> Result<Self> {
        match weight.shape() {
            [o, _] if bias.shape() == [*o] => Ok(AffineLayer { weight, bias }),
            _ => Err(Error::Config(format!(
                "affine layer: weight {:?} and bias {:?} disagree",
                weight.shape(),
                bias.shape()
            ))),
        }
    }

    pub fn input_size(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_size(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.linear(&self.weight, Some(&self.bias))?)
    }
}

impl Module for AffineLayer {
    fn parameters(&self) -> Vec<(String, Tensor)> {
        vec![
            ("weight".into(), self.weight.clone()),
            ("bias".into(), self.bias.clone()),
        ]
    }
}

/// Stack of affine layers, each followed by its activation.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<AffineLayer>,
    activations: Vec<Activation>,
}

impl Mlp {
    /// `sizes = [in, h1, .., out]`; one activation per layer.
    pub fn new(sizes: &[usize], activations: Vec<Activation>, key: StreamKey) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config("mlp needs at least an input and an output size".into()));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| AffineLayer::new(w[0], w[1], key.child(i as u64)))
            .collect();
        Mlp::from_layers(layers, activations)
    }

    pub fn from_layers(layers: Vec<AffineLayer>, activations: Vec<Activation>) -> Result<Self> {
        if layers.len() != activations.len() {
            return Err(Error::Config(format!(
                "mlp: {} layers but {} activations",
                layers.len(),
                activations.len()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_size() != pair[1].input_size() {
                return Err(Error::Config(format!(
                    "mlp: layer {i} emits {} features but layer {} expects {}",
                    pair[0].output_size(),
                    i + 1,
                    pair[1].input_size()
                )));
            }
        }
        Ok(Mlp { layers, activations })
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map(|l| l.output_size()).unwrap_or(0)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            h = act.apply(&layer.forward(&h)?);
        }
        Ok(h)
    }

    /// Value and `∂out/∂x` of a scalar-output network, both recorded on the
    /// tape so the gradient can itself be differentiated with respect to the
    /// weights.
    pub fn value_and_input_gradient(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        if self.output_size() != 1 {
            return Err(Error::Config("input gradient needs a scalar-output mlp".into()));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let z = layer.forward(&h)?;
            h = act.apply(&z);
            pre.push(z);
        }
        let rows = x.shape()[0];
        let mut g = Tensor::ones(&[rows, 1]);
        for ((layer, act), z) in self.layers.iter().zip(&self.activations).zip(&pre).rev() {
            if *act != Activation::Identity {
                g = g.mul(&act.derivative(z)?)?;
            }
            g = g.matmul(&layer.weight)?;
        }
        Ok((h, g))
    }
}

impl Module for Mlp {
    fn parameters(&self) -> Vec<(String, Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| prefixed(&format!("layers.{i}"), l.parameters()))
            .collect()
    }
}
