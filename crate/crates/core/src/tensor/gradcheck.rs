//! Central finite-difference gradient checking at double precision.
//!
//! A layer is checked through the scalar probe `L = Σ r ⊙ layer(x)` with a
//! fixed random `r`, so every output element contributes to every gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout_backward,
    max_pool2d_backward, max_pool2d_forward, relu_backward, relu_forward,
    softmax_cross_entropy_backward, softmax_forward, weighted_cross_entropy, LayerGrad, Tensor,
};
use crate::error::Result;

/// Denominator floor for the relative error, so gradients that are both
/// near zero compare by absolute difference.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// A differentiable layer with its parameters.
pub trait Layer {
    fn params(&self) -> Vec<&Tensor<f64>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<f64>>;
    fn forward(&self, input: &Tensor<f64>) -> Result<Tensor<f64>>;
    fn backward(&self, input: &Tensor<f64>, grad_output: &Tensor<f64>) -> Result<LayerGrad<f64>>;
}

pub struct Conv2d {
    pub weights: Tensor<f64>,
    pub bias: Tensor<f64>,
}

impl Layer for Conv2d {
    fn params(&self) -> Vec<&Tensor<f64>> {
        vec![&self.weights, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        vec![&mut self.weights, &mut self.bias]
    }
    fn forward(&self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        conv2d_forward(input, &self.weights, &self.bias)
    }
    fn backward(&self, input: &Tensor<f64>, grad_output: &Tensor<f64>) -> Result<LayerGrad<f64>> {
        conv2d_backward(input, &self.weights, grad_output)
    }
}

pub struct Dense {
    pub weights: Tensor<f64>,
    pub bias: Tensor<f64>,
}

impl Layer for Dense {
    fn params(&self) -> Vec<&Tensor<f64>> {
        vec![&self.weights, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        vec![&mut self.weights, &mut self.bias]
    }
    fn forward(&self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        dense_forward(input, &self.weights, &self.bias)
    }
    fn backward(&self, input: &Tensor<f64>, grad_output: &Tensor<f64>) -> Result<LayerGrad<f64>> {
        dense_backward(input, &self.weights, grad_output)
    }
}

pub struct MaxPool2d;

impl Layer for MaxPool2d {
    fn params(&self) -> Vec<&Tensor<f64>> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        Vec::new()
    }
    fn forward(&self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(max_pool2d_forward(input)?.0)
    }
    fn backward(&self, input: &Tensor<f64>, grad_output: &Tensor<f64>) -> Result<LayerGrad<f64>> {
        let (_, idx) = max_pool2d_forward(input)?;
        Ok(LayerGrad {
            grad_input: max_pool2d_backward(&idx, grad_output)?,
            grad_params: Vec::new(),
        })
    }
}

pub struct Relu;

impl Layer for Relu {
    fn params(&self) -> Vec<&Tensor<f64>> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        Vec::new()
    }
    fn forward(&self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(relu_forward(input))
    }
    fn backward(&self, input: &Tensor<f64>, grad_output: &Tensor<f64>) -> Result<LayerGrad<f64>> {
        Ok(LayerGrad {
            grad_input: relu_backward(input, grad_output)?,
            grad_params: Vec::new(),
        })
    }
}

/// Dropout with a frozen mask (as drawn by `dropout_forward` in training mode).
pub struct Dropout {
    pub mask: Option<Tensor<f64>>,
}

impl Layer for Dropout {
    fn params(&self) -> Vec<&Tensor<f64>> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        Vec::new()
    }
    fn forward(&self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        match &self.mask {
            Some(m) => Ok(Tensor::from_fn(input.shape(), |i| input.data()[i] * m.data()[i])),
            None => Ok(input.clone()),
        }
    }
    fn backward(&self, _input: &Tensor<f64>, grad_output: &Tensor<f64>) -> Result<LayerGrad<f64>> {
        Ok(LayerGrad {
            grad_input: dropout_backward(self.mask.as_ref(), grad_output)?,
            grad_params: Vec::new(),
        })
    }
}

/// Softmax followed by weighted cross-entropy; maps logits to a 1-element
/// loss tensor.
pub struct SoftmaxCrossEntropy {
    pub target: usize,
    pub weights: Vec<f64>,
}

impl Layer for SoftmaxCrossEntropy {
    fn params(&self) -> Vec<&Tensor<f64>> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        Vec::new()
    }
    fn forward(&self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        let probs = softmax_forward(input)?;
        let loss = weighted_cross_entropy(&probs, self.target, &self.weights)?;
        Tensor::from_vec(&[1], vec![loss])
    }
    fn backward(&self, input: &Tensor<f64>, grad_output: &Tensor<f64>) -> Result<LayerGrad<f64>> {
        let probs = softmax_forward(input)?;
        let mut g = softmax_cross_entropy_backward(&probs, self.target, &self.weights)?;
        g.scale(grad_output.data()[0]);
        Ok(LayerGrad {
            grad_input: g,
            grad_params: Vec::new(),
        })
    }
}

/// Largest relative error between the analytic gradients of `layer` and
/// central differences with step `epsilon`, over every input element and
/// every parameter element.
pub fn grad_check<L: Layer>(layer: &mut L, input: &Tensor<f64>, epsilon: f64) -> Result<f64> {
    let out = layer.forward(input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let probe = Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0));
    let objective = |y: &Tensor<f64>| -> f64 {
        y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };
    let analytic = layer.backward(input, &probe)?;

    let mut worst = 0.0f64;
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + epsilon;
        let up = objective(&layer.forward(&x)?);
        x.data_mut()[i] = orig - epsilon;
        let down = objective(&layer.forward(&x)?);
        x.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic.grad_input.data()[i], numeric));
    }

    let n_params = layer.params().len();
    for p in 0..n_params {
        let len = layer.params()[p].len();
        for i in 0..len {
            let orig = layer.params()[p].data()[i];
            layer.params_mut()[p].data_mut()[i] = orig + epsilon;
            let up = objective(&layer.forward(input)?);
            layer.params_mut()[p].data_mut()[i] = orig - epsilon;
            let down = objective(&layer.forward(input)?);
            layer.params_mut()[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic.grad_params[p].data()[i], numeric));
        }
    }
    Ok(worst)
}
