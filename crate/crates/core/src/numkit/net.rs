use super::mat::Mat;
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Activation::Linear,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Sigmoid,
            other => return Err(Error::Input(format!("unknown activation code {other}"))),
        })
    }
}

/// One dense layer: `y = act(x · weight + bias)` with `weight` of shape `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Mat, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::dim(format!(
                "bias length {} for layer with {} outputs",
                bias.len(),
                weight.cols()
            )));
        }
        Ok(Layer {
            weight,
            bias,
            activation,
        })
    }

    pub fn input_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Feed-forward stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Per-layer outputs recorded by [`DenseNet::forward`].
#[derive(Debug, Clone)]
pub struct Activations {
    pub input: Mat,
    /// One entry per layer; the last is the network output.
    pub outputs: Vec<Mat>,
}

impl Activations {
    pub fn output(&self) -> &Mat {
        self.outputs.last().unwrap_or(&self.input)
    }

    pub fn into_output(mut self) -> Mat {
        self.outputs.pop().unwrap_or(self.input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

/// Gradients shaped exactly like the layers of one [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub layers: Vec<LayerGrad>,
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_width() != pair[1].input_width() {
                return Err(Error::dim(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].output_width(),
                    i + 1,
                    pair[1].input_width()
                )));
            }
        }
        Ok(DenseNet { layers })
    }

    /// Glorot-uniform weights, zero biases.
    ///
    /// `widths` lists every layer boundary, so a net with `n` layers takes
    /// `n + 1` widths and `n` activations.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(Error::Config(format!(
                "{} widths need {} activations, got {}",
                widths.len(),
                widths.len().saturating_sub(1),
                activations.len()
            )));
        }
        if widths.contains(&0) {
            return Err(Error::Config("zero-width layer".into()));
        }
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Layer {
                    weight: Mat::from_vec(fan_in, fan_out, data).expect("sized above"),
                    bias: vec![0.0; fan_out],
                    activation: act,
                }
            })
            .collect();
        DenseNet::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output_width()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn forward(&self, x: &Mat) -> Result<Activations> {
        if x.cols() != self.input_width() {
            return Err(Error::dim(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.input_width()
            )));
        }
        let mut outputs: Vec<Mat> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let prev = outputs.last().unwrap_or(x);
            let mut z = prev.matmul(&layer.weight)?;
            let width = layer.output_width();
            let act = layer.activation;
            for row in z.as_mut_slice().chunks_exact_mut(width) {
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v = act.apply(*v + b);
                }
            }
            outputs.push(z);
        }
        Ok(Activations {
            input: x.clone(),
            outputs,
        })
    }

    /// Forward pass returning only the final output.
    pub fn predict(&self, x: &Mat) -> Result<Mat> {
        Ok(self.forward(x)?.into_output())
    }

    /// Backpropagates `upstream` (dLoss/dOutput) through the recorded pass.
    pub fn backward(&self, acts: &Activations, upstream: &Mat) -> Result<(GradBundle, Mat)> {
        if acts.outputs.len() != self.layers.len() {
            return Err(Error::dim(format!(
                "{} activation records for {} layers",
                acts.outputs.len(),
                self.layers.len()
            )));
        }
        upstream.check_same_shape(acts.output(), "upstream gradient")?;

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = &acts.outputs[i];
            if layer.activation != Activation::Linear {
                for (d, &y) in delta.as_mut_slice().iter_mut().zip(out.as_slice()) {
                    *d *= layer.activation.derivative_from_output(y);
                }
            }
            let prev = if i == 0 { &acts.input } else { &acts.outputs[i - 1] };
            let weight = prev.t_matmul(&delta)?;
            let bias = delta.col_sums();
            let next_delta = delta.matmul_t(&layer.weight)?;
            grads.push(LayerGrad { weight, bias });
            delta = next_delta;
        }
        grads.reverse();
        Ok((GradBundle { layers: grads }, delta))
    }

    /// Online gradient descent: `p ← p − eta · g` for every parameter.
    pub fn ogd_step(&mut self, grads: &GradBundle, eta: f64) -> Result<()> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::Domain(format!("learning rate {eta} must be non-negative")));
        }
        self.check_congruent(grads)?;
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient in OGD step".into()));
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (p, d) in layer.weight.as_mut_slice().iter_mut().zip(g.weight.as_slice()) {
                *p -= eta * d;
            }
            for (p, d) in layer.bias.iter_mut().zip(&g.bias) {
                *p -= eta * d;
            }
        }
        Ok(())
    }

    pub(crate) fn check_congruent(&self, grads: &GradBundle) -> Result<()> {
        let ok = self.layers.len() == grads.layers.len()
            && self
                .layers
                .iter()
                .zip(&grads.layers)
                .all(|(l, g)| l.weight.shape() == g.weight.shape() && l.bias.len() == g.bias.len());
        if ok {
            Ok(())
        } else {
            Err(Error::dim("gradient bundle does not match network shape"))
        }
    }

    /// All parameters flattened layer by layer (weights then bias).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim(format!(
                "{} parameters for a network with {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&params[off..off + n]);
            off += n;
            let b = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + b]);
            off += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Copy with every parameter set to zero.
    pub fn zeroed(&self) -> DenseNet {
        let mut z = self.clone();
        for l in &mut z.layers {
            l.weight.scale(0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        z
    }
}

impl GradBundle {
    pub fn zeros_like(net: &DenseNet) -> Self {
        GradBundle {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Mat::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weight.is_finite() && g.bias.iter().all(|v| v.is_finite()))
    }

    /// Flattened in the same order as [`DenseNet::params`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(g.weight.as_slice());
            out.extend_from_slice(&g.bias);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|g| g.weight.len() + g.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.layers {
            g.weight.scale(s);
            g.bias.iter_mut().for_each(|b| *b *= s);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weight.as_slice().iter().all(|&v| v == 0.0) && g.bias.iter().all(|&v| v == 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_net(w: f64, b: f64, act: Activation) -> DenseNet {
        DenseNet::from_layers(vec![
            Layer::new(Mat::from_vec(1, 1, vec![w]).unwrap(), vec![b], act).unwrap()
        ])
        .unwrap()
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let net = DenseNet::from_layers(vec![
            Layer::new(Mat::identity(3), vec![0.0; 3], Activation::Linear).unwrap()
        ])
        .unwrap();
        let x = Mat::from_rows(&[vec![1.0, -2.0, 0.5], vec![3.0, 0.0, -1.0]]).unwrap();
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn scalar_forward_cases() {
        let x = Mat::from_vec(1, 1, vec![3.0]).unwrap();
        assert_eq!(
            scalar_net(2.0, 1.0, Activation::Linear).predict(&x).unwrap()[(0, 0)],
            7.0
        );
        let x = Mat::from_vec(1, 1, vec![1.0]).unwrap();
        assert_eq!(
            scalar_net(1.0, -2.0, Activation::Relu).predict(&x).unwrap()[(0, 0)],
            0.0
        );
    }

    #[test]
    fn scalar_backward_hand_derivative() {
        // y = w x, L = ½ (y − t)², w = 2, x = 3, t = 0 → dL/dw = (wx − t)·x = 18
        let net = scalar_net(2.0, 0.0, Activation::Linear);
        let x = Mat::from_vec(1, 1, vec![3.0]).unwrap();
        let acts = net.forward(&x).unwrap();
        let y = acts.output()[(0, 0)];
        let up = Mat::from_vec(1, 1, vec![y - 0.0]).unwrap();
        let (g, dx) = net.backward(&acts, &up).unwrap();
        assert_eq!(g.layers[0].weight[(0, 0)], 18.0);
        assert_eq!(g.layers[0].bias[0], 6.0);
        assert_eq!(dx[(0, 0)], 12.0);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::init(&[4, 5, 2], &[Activation::Tanh, Activation::Linear], &mut rng).unwrap();
        let x = Mat::filled(3, 4, 0.3);
        let acts = net.forward(&x).unwrap();
        let (g, dx) = net.backward(&acts, &Mat::zeros(3, 2)).unwrap();
        assert!(g.is_zero());
        assert!(dx.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::init(&[4, 2], &[Activation::Linear], &mut rng).unwrap();
        assert!(matches!(net.forward(&Mat::zeros(2, 3)), Err(Error::Dimension(_))));
        let acts = net.forward(&Mat::zeros(2, 4)).unwrap();
        assert!(matches!(
            net.backward(&acts, &Mat::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
        let bad = Layer::new(Mat::zeros(3, 2), vec![0.0; 2], Activation::Linear).unwrap();
        let other = Layer::new(Mat::zeros(3, 1), vec![0.0], Activation::Linear).unwrap();
        assert!(DenseNet::from_layers(vec![bad, other]).is_err());
    }

    #[test]
    fn ogd_step_arithmetic() {
        let mut net = scalar_net(1.0, 0.0, Activation::Linear);
        let mut g = GradBundle::zeros_like(&net);
        g.layers[0].weight[(0, 0)] = 0.5;
        net.ogd_step(&g, 0.1).unwrap();
        assert!((net.layers()[0].weight[(0, 0)] - 0.95).abs() < 1e-15);

        let before = net.clone();
        net.ogd_step(&GradBundle::zeros_like(&net), 0.1).unwrap();
        assert_eq!(net, before);

        g.layers[0].bias[0] = f64::NAN;
        assert!(matches!(net.ogd_step(&g, 0.1), Err(Error::Numeric(_))));
    }

    #[test]
    fn param_count_and_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = DenseNet::init(&[3, 4, 2], &[Activation::Relu, Activation::Sigmoid], &mut rng).unwrap();
        assert_eq!(net.param_count(), 3 * 4 + 4 + 4 * 2 + 2);
        let p = net.params();
        let copy = net.clone();
        net.set_params(&p).unwrap();
        assert_eq!(net, copy);
    }

    #[test]
    fn glorot_bounds_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = DenseNet::init(&[10, 6], &[Activation::Linear], &mut rng).unwrap();
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(net.layers()[0].weight.as_slice().iter().all(|w| w.abs() <= limit));
        assert!(net.layers()[0].bias.iter().all(|&b| b == 0.0));
    }
}
