use rand::Rng;

use super::{Activation, MlpConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    /// Offset of the weight block; biases follow it.
    offset: usize,
}

impl LayerShape {
    fn bias_offset(&self) -> usize {
        self.offset + self.inputs * self.outputs
    }

    fn end(&self) -> usize {
        self.bias_offset() + self.outputs
    }
}

/// Dense layers stored in one flat parameter vector. Hidden layers apply
/// the activation; the output layer is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    activation: Activation,
    shapes: Vec<LayerShape>,
    params: Vec<f64>,
}

fn shapes_for(config: &MlpConfig) -> Vec<LayerShape> {
    let mut offset = 0;
    config
        .widths()
        .windows(2)
        .map(|w| {
            let s = LayerShape {
                inputs: w[0],
                outputs: w[1],
                offset,
            };
            offset = s.end();
            s
        })
        .collect()
}

/// Scratch buffers reused across samples.
pub struct Workspace {
    /// Activations per layer boundary; `acts[0]` is the input.
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Network {
    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))` for sigmoid/tanh and
    /// `±sqrt(6 / fan_in)` for relu; biases start at zero.
    pub fn init<R: Rng>(config: &MlpConfig, rng: &mut R) -> Self {
        let shapes = shapes_for(config);
        let total = shapes.last().map_or(0, LayerShape::end);
        let mut params = vec![0.0; total];
        for s in &shapes {
            let limit = match config.activation {
                Activation::Relu => (6.0 / s.inputs as f64).sqrt(),
                _ => (6.0 / (s.inputs + s.outputs) as f64).sqrt(),
            };
            for w in &mut params[s.offset..s.bias_offset()] {
                *w = rng.gen_range(-limit..=limit);
            }
        }
        Self {
            activation: config.activation,
            shapes,
            params,
        }
    }

    pub fn from_params(config: &MlpConfig, params: Vec<f64>) -> Result<Self> {
        let shapes = shapes_for(config);
        let total = shapes.last().map_or(0, LayerShape::end);
        if params.len() != total {
            return Err(Error::ModelFormat(format!(
                "expected {total} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self {
            activation: config.activation,
            shapes,
            params,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.shapes[0].inputs
    }

    pub fn layer_count(&self) -> usize {
        self.shapes.len()
    }

    /// `true` for weights, `false` for biases. Weight decay only touches
    /// weights.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.params.len()];
        for s in &self.shapes {
            mask[s.offset..s.bias_offset()].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    /// Zeroes the output layer's weights and bias.
    pub fn zero_output_layer(&mut self) {
        let last = *self.shapes.last().unwrap();
        self.params[last.offset..last.end()].iter_mut().for_each(|p| *p = 0.0);
    }

    pub fn workspace(&self) -> Workspace {
        let mut acts = vec![vec![0.0; self.shapes[0].inputs]];
        acts.extend(self.shapes.iter().map(|s| vec![0.0; s.outputs]));
        let deltas = self.shapes.iter().map(|s| vec![0.0; s.outputs]).collect();
        Workspace { acts, deltas }
    }

    fn forward_into(&self, x: &[f64], ws: &mut Workspace) -> Result<f64> {
        debug_assert_eq!(x.len(), self.input_dim());
        ws.acts[0].copy_from_slice(x);
        let last = self.shapes.len() - 1;
        for (l, s) in self.shapes.iter().enumerate() {
            let (before, after) = ws.acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            let weights = &self.params[s.offset..s.bias_offset()];
            let bias = &self.params[s.bias_offset()..s.end()];
            for (j, o) in out.iter_mut().enumerate() {
                let row = &weights[j * s.inputs..(j + 1) * s.inputs];
                let mut z = bias[j];
                for (w, a) in row.iter().zip(input) {
                    z += w * a;
                }
                *o = if l == last { z } else { self.activation.apply(z) };
                if !o.is_finite() {
                    return Err(Error::NumericOverflow { layer: l });
                }
            }
        }
        Ok(ws.acts[last + 1][0])
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::InvalidParameter(format!(
                "expected {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let mut ws = self.workspace();
        self.forward_into(x, &mut ws)
    }

    /// Mean squared error over the batch plus `weight_decay / 2 * |W|^2`.
    /// Writes the gradient of that objective into `grad` (overwritten).
    pub fn loss_and_grad(
        &self,
        batch: &[(&[f64], f64)],
        weight_decay: f64,
        grad: &mut [f64],
        ws: &mut Workspace,
    ) -> Result<f64> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let last = self.shapes.len() - 1;
        for &(x, y) in batch {
            let pred = self.forward_into(x, ws)?;
            let err = pred - y;
            loss += err * err * scale;
            ws.deltas[last][0] = 2.0 * err * scale;
            for l in (0..self.shapes.len()).rev() {
                let s = self.shapes[l];
                let input = &ws.acts[l];
                let (gw, gb) = grad[s.offset..s.end()].split_at_mut(s.inputs * s.outputs);
                for j in 0..s.outputs {
                    let d = ws.deltas[l][j];
                    gb[j] += d;
                    let row = &mut gw[j * s.inputs..(j + 1) * s.inputs];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                if l > 0 {
                    let weights = &self.params[s.offset..s.bias_offset()];
                    let (lower, upper) = ws.deltas.split_at_mut(l);
                    let below = &mut lower[l - 1];
                    let here = &upper[0];
                    for (i, b) in below.iter_mut().enumerate() {
                        let mut sum = 0.0;
                        for j in 0..s.outputs {
                            sum += weights[j * s.inputs + i] * here[j];
                        }
                        *b = sum * self.activation.derivative_from_output(ws.acts[l][i]);
                    }
                }
            }
        }
        if weight_decay > 0.0 {
            for s in &self.shapes {
                for i in s.offset..s.bias_offset() {
                    let w = self.params[i];
                    loss += 0.5 * weight_decay * w * w;
                    grad[i] += weight_decay * w;
                }
            }
        }
        Ok(loss)
    }

    /// Objective value only (same definition as [`Network::loss_and_grad`]).
    pub fn loss(&self, batch: &[(&[f64], f64)], weight_decay: f64) -> Result<f64> {
        let mut ws = self.workspace();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &(x, y) in batch {
            let err = self.forward_into(x, &mut ws)? - y;
            loss += err * err * scale;
        }
        if weight_decay > 0.0 {
            for s in &self.shapes {
                for &w in &self.params[s.offset..s.bias_offset()] {
                    loss += 0.5 * weight_decay * w * w;
                }
            }
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_output_bias() {
        let config = MlpConfig {
            input_dim: 3,
            ..MlpConfig::new(2, 4, Activation::Sigmoid)
        };
        let mut params = vec![0.0; config.param_count()];
        *params.last_mut().unwrap() = 0.75;
        let net = Network::from_params(&config, params).unwrap();
        for x in [[0.0, 0.0, 0.0], [1e3, -5.0, 2.0]] {
            assert_eq!(net.forward(&x).unwrap(), 0.75);
        }
    }

    #[test]
    fn hand_computed_relu_forward() {
        // 2 -> 1 -> 1: h = relu(0.5*x0 - 1.0*x1 + 0.25); y = 2*h - 0.5
        let config = MlpConfig {
            input_dim: 2,
            ..MlpConfig::new(1, 1, Activation::Relu)
        };
        let net = Network::from_params(&config, vec![0.5, -1.0, 0.25, 2.0, -0.5]).unwrap();
        // x = (3, 1): h = 1.5 - 1 + 0.25 = 0.75; y = 1.5 - 0.5 = 1.0
        assert_eq!(net.forward(&[3.0, 1.0]).unwrap(), 1.0);
        // x = (0, 1): h = relu(-0.75) = 0; y = -0.5
        assert_eq!(net.forward(&[0.0, 1.0]).unwrap(), -0.5);
    }

    #[test]
    fn overflow_names_layer() {
        let config = MlpConfig {
            input_dim: 1,
            ..MlpConfig::new(1, 1, Activation::Relu)
        };
        let net = Network::from_params(&config, vec![f64::MAX, 0.0, f64::MAX, 0.0]).unwrap();
        assert!(matches!(net.forward(&[10.0]), Err(Error::NumericOverflow { layer: 0 })));
        let net = Network::from_params(&config, vec![1.0, 0.0, f64::MAX, 0.0]).unwrap();
        let err = net.forward(&[10.0]).unwrap_err();
        assert_eq!(err.to_string(), "numeric overflow in layer 1");
    }

    #[test]
    fn wrong_param_count_rejected() {
        let config = MlpConfig::new(1, 2, Activation::Tanh);
        assert!(Network::from_params(&config, vec![0.0; 3]).is_err());
    }

    #[test]
    fn init_ranges() {
        use rand::SeedableRng;
        let config = MlpConfig::new(2, 16, Activation::Relu);
        let net = Network::init(&config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        let limit = (6.0f64 / 12.0).sqrt();
        let mask = net.weight_mask();
        let first = 12 * 16;
        assert!(net.params()[..first].iter().all(|w| w.abs() <= limit));
        assert!(net.params().iter().zip(&mask).filter(|(_, &m)| !m).all(|(b, _)| *b == 0.0));
        assert_eq!(mask.iter().filter(|&&m| m).count(), 12 * 16 + 16 * 16 + 16);
    }
}
