//! One-hidden-layer ReLU network with a softmax head, trained by momentum SGD.
//!
//! Inputs are always one-hot, so the first layer reduces to a column lookup.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::softmax_into;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub hidden: usize,
    /// Weights are drawn from `Normal(0, init_gain / fan_in)` (variance).
    pub init_gain: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            init_gain: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    input: usize,
    hidden: usize,
    output: usize,
    /// `[hidden x input]`, row-major.
    pub weights_in: Vec<f64>,
    pub bias_in: Vec<f64>,
    /// `[output x hidden]`, row-major.
    pub weights_out: Vec<f64>,
    pub bias_out: Vec<f64>,
    velocity: Velocity,
}

#[derive(Clone, Debug, PartialEq)]
struct Velocity {
    weights_in: Vec<f64>,
    bias_in: Vec<f64>,
    weights_out: Vec<f64>,
    bias_out: Vec<f64>,
}

/// Gradient of the cross-entropy loss, laid out like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights_in: Vec<f64>,
    pub bias_in: Vec<f64>,
    pub weights_out: Vec<f64>,
    pub bias_out: Vec<f64>,
}

struct Activations {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            weights_in: vec![0.0; hidden * input],
            bias_in: vec![0.0; hidden],
            weights_out: vec![0.0; output * hidden],
            bias_out: vec![0.0; output],
            velocity: Velocity {
                weights_in: vec![0.0; hidden * input],
                bias_in: vec![0.0; hidden],
                weights_out: vec![0.0; output * hidden],
                bias_out: vec![0.0; output],
            },
        }
    }

    pub fn new(input: usize, output: usize, config: &MlpConfig, rng: &mut RngStream) -> Self {
        let mut net = Self::zeros(input, config.hidden, output);
        let sd_in = (config.init_gain / input as f64).sqrt();
        let sd_out = (config.init_gain / config.hidden as f64).sqrt();
        for w in net.weights_in.iter_mut() {
            *w = rng.normal(0.0, sd_in);
        }
        for w in net.weights_out.iter_mut() {
            *w = rng.normal(0.0, sd_out);
        }
        net
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    pub fn output_width(&self) -> usize {
        self.output
    }

    fn hot_index(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.input {
            return Err(Error::Shape {
                expected: self.input,
                got: x.len(),
            });
        }
        let mut hot = None;
        for (i, &v) in x.iter().enumerate() {
            if v == 1.0 && hot.is_none() {
                hot = Some(i);
            } else if v != 0.0 {
                return Err(Error::InvalidArgument("input is not one-hot".into()));
            }
        }
        hot.ok_or_else(|| Error::InvalidArgument("input is not one-hot".into()))
    }

    fn check_input(&self, index: usize) -> Result<()> {
        if index < self.input {
            Ok(())
        } else {
            Err(Error::Index {
                index,
                len: self.input,
            })
        }
    }

    fn activations(&self, index: usize) -> Activations {
        let pre: Vec<f64> = (0..self.hidden)
            .map(|h| self.weights_in[h * self.input + index] + self.bias_in[h])
            .collect();
        let hidden: Vec<f64> = pre.iter().map(|a| a.max(0.0)).collect();
        let logits: Vec<f64> = (0..self.output)
            .map(|o| {
                let row = &self.weights_out[o * self.hidden..(o + 1) * self.hidden];
                row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + self.bias_out[o]
            })
            .collect();
        let mut probs = Vec::with_capacity(self.output);
        softmax_into(&logits, &mut probs);
        Activations { pre, hidden, probs }
    }

    /// Predictive distribution for a one-hot input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let index = self.hot_index(x)?;
        Ok(self.activations(index).probs)
    }

    /// Predictive distribution for the input whose hot coordinate is `index`.
    pub fn forward_at(&self, index: usize) -> Result<Vec<f64>> {
        self.check_input(index)?;
        Ok(self.activations(index).probs)
    }

    pub fn loss_at(&self, index: usize, label: usize) -> Result<f64> {
        self.check_label(label)?;
        Ok(-self.forward_at(index)?[label].ln())
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label < self.output {
            Ok(())
        } else {
            Err(Error::Index {
                index: label,
                len: self.output,
            })
        }
    }

    /// Cross-entropy loss and its gradient at `(index, label)`.
    pub fn gradient_at(&self, index: usize, label: usize) -> Result<(f64, Gradients)> {
        self.check_input(index)?;
        self.check_label(label)?;
        let act = self.activations(index);
        let loss = -act.probs[label].ln();

        let mut d_logits = act.probs;
        d_logits[label] -= 1.0;

        let mut g_out = vec![0.0; self.output * self.hidden];
        let mut d_hidden = vec![0.0; self.hidden];
        for (o, d) in d_logits.iter().enumerate() {
            let row = o * self.hidden;
            for h in 0..self.hidden {
                g_out[row + h] = d * act.hidden[h];
                d_hidden[h] += d * self.weights_out[row + h];
            }
        }
        let d_pre: Vec<f64> = d_hidden
            .iter()
            .zip(&act.pre)
            .map(|(d, a)| if *a > 0.0 { *d } else { 0.0 })
            .collect();
        let mut g_in = vec![0.0; self.hidden * self.input];
        for (h, d) in d_pre.iter().enumerate() {
            g_in[h * self.input + index] = *d;
        }
        Ok((
            loss,
            Gradients {
                weights_in: g_in,
                bias_in: d_pre,
                weights_out: g_out,
                bias_out: d_logits,
            },
        ))
    }

    /// One momentum-SGD step on `(x, label)`; returns the pre-update loss.
    pub fn update(&mut self, x: &[f64], label: usize, lr: f64, momentum: f64) -> Result<f64> {
        let index = self.hot_index(x)?;
        self.update_at(index, label, lr, momentum)
    }

    pub fn update_at(&mut self, index: usize, label: usize, lr: f64, momentum: f64) -> Result<f64> {
        let (loss, grad) = self.gradient_at(index, label)?;
        step(
            &mut self.weights_in,
            &mut self.velocity.weights_in,
            &grad.weights_in,
            lr,
            momentum,
        );
        step(
            &mut self.bias_in,
            &mut self.velocity.bias_in,
            &grad.bias_in,
            lr,
            momentum,
        );
        step(
            &mut self.weights_out,
            &mut self.velocity.weights_out,
            &grad.weights_out,
            lr,
            momentum,
        );
        step(
            &mut self.bias_out,
            &mut self.velocity.bias_out,
            &grad.bias_out,
            lr,
            momentum,
        );
        Ok(loss)
    }

    /// All parameters concatenated in a fixed order.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        out.extend(&self.weights_in);
        out.extend(&self.bias_in);
        out.extend(&self.weights_out);
        out.extend(&self.bias_out);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.weights_in.len() + self.bias_in.len() + self.weights_out.len() + self.bias_out.len()
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::Shape {
                expected: self.parameter_count(),
                got: flat.len(),
            });
        }
        let mut rest = flat;
        for dst in [
            &mut self.weights_in,
            &mut self.bias_in,
            &mut self.weights_out,
            &mut self.bias_out,
        ] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|x| x.is_finite())
    }

    /// Velocity buffer shapes, in parameter order.
    pub fn velocity_shapes(&self) -> [usize; 4] {
        [
            self.velocity.weights_in.len(),
            self.velocity.bias_in.len(),
            self.velocity.weights_out.len(),
            self.velocity.bias_out.len(),
        ]
    }
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(&self.weights_in);
        out.extend(&self.bias_in);
        out.extend(&self.weights_out);
        out.extend(&self.bias_out);
        out
    }
}

fn step(param: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, momentum: f64) {
    for ((p, v), g) in param.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
}
