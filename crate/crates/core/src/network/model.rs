//! Forward and backward passes through the full network:
//! `[conv → ReLU → pool] ×3 → flatten → [dense → ReLU → dropout] ×2 → dense`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{slot, Gradients, NetworkParams};
use crate::error::{Axis, Error, Result};
use crate::tensor::{
    conv2d_backward, conv2d_backward_params, conv2d_forward, dense_backward, dense_forward,
    dropout_backward, dropout_forward, max_pool2d_backward, max_pool2d_forward, relu_backward,
    relu_forward, softmax_cross_entropy_backward, softmax_forward, weighted_cross_entropy, Mode,
    PoolIndices, Scalar, Tensor,
};

/// Activations kept from a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    /// Input of each convolution.
    conv_in: [Tensor<T>; 3],
    /// Pre-activation output of each convolution.
    conv_pre: [Tensor<T>; 3],
    pools: [PoolIndices; 3],
    pooled_shape: Vec<usize>,
    flat: Tensor<T>,
    fc1_pre: Tensor<T>,
    fc1_mask: Option<Tensor<T>>,
    fc2_in: Tensor<T>,
    fc2_pre: Tensor<T>,
    fc2_mask: Option<Tensor<T>>,
    out_in: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    pub logits: Tensor<T>,
    /// Present only in [`Mode::Train`].
    pub cache: Option<ForwardCache<T>>,
}

fn check_input<T: Scalar>(params: &NetworkParams<T>, input: &Tensor<T>) -> Result<()> {
    let (c, h, w) = input.dims3("network_forward")?;
    let side = params.architecture().input_size;
    if c != 1 {
        return Err(Error::dim("network_forward", Axis::Channels, 1, c));
    }
    if h != side {
        return Err(Error::dim("network_forward", Axis::Height, side, h));
    }
    if w != side {
        return Err(Error::dim("network_forward", Axis::Width, side, w));
    }
    Ok(())
}

/// Runs one `1×S×S` patch through the network. Dropout draws from `rng`
/// only in training mode.
pub fn forward<T: Scalar, R: Rng + ?Sized>(
    params: &NetworkParams<T>,
    input: &Tensor<T>,
    mode: Mode,
    dropout: f64,
    rng: &mut R,
) -> Result<ForwardPass<T>> {
    check_input(params, input)?;
    let t = params.tensors();
    let mut x = input.clone();
    let mut conv_in = Vec::with_capacity(3);
    let mut conv_pre = Vec::with_capacity(3);
    let mut pools = Vec::with_capacity(3);
    for i in 0..3 {
        let pre = conv2d_forward(&x, &t[slot::CONV_WEIGHT[i]], &t[slot::CONV_BIAS[i]])?;
        let (pooled, idx) = max_pool2d_forward(&relu_forward(&pre))?;
        if mode == Mode::Train {
            conv_in.push(std::mem::replace(&mut x, pooled));
            conv_pre.push(pre);
            pools.push(idx);
        } else {
            x = pooled;
        }
    }
    let pooled_shape = x.shape().to_vec();
    let flat = x.reshape(&[pooled_shape.iter().product()])?;

    let (w, b) = params.pair(slot::FC1);
    let fc1_pre = dense_forward(&flat, w, b)?;
    let (fc2_in, fc1_mask) = dropout_forward(&relu_forward(&fc1_pre), dropout, mode, rng)?;
    let (w, b) = params.pair(slot::FC2);
    let fc2_pre = dense_forward(&fc2_in, w, b)?;
    let (out_in, fc2_mask) = dropout_forward(&relu_forward(&fc2_pre), dropout, mode, rng)?;
    let (w, b) = params.pair(slot::OUT);
    let logits = dense_forward(&out_in, w, b)?;

    let cache = (mode == Mode::Train).then(|| ForwardCache {
        conv_in: conv_in.try_into().expect("three conv stages"),
        conv_pre: conv_pre.try_into().expect("three conv stages"),
        pools: pools.try_into().expect("three conv stages"),
        pooled_shape,
        flat,
        fc1_pre,
        fc1_mask,
        fc2_in,
        fc2_pre,
        fc2_mask,
        out_in,
    });
    Ok(ForwardPass { logits, cache })
}

/// Back-propagates the loss gradient with respect to the logits.
pub fn backward<T: Scalar>(
    params: &NetworkParams<T>,
    cache: &ForwardCache<T>,
    grad_logits: &Tensor<T>,
) -> Result<Gradients<T>> {
    let mut grads = NetworkParams::zeros(params.architecture())?;
    let mut store = |(w, b): (usize, usize), g: Vec<Tensor<T>>| {
        let [gw, gb]: [Tensor<T>; 2] = g.try_into().expect("weight and bias gradients");
        grads.set(w, gw);
        grads.set(b, gb);
    };

    let g = dense_backward(&cache.out_in, params.pair(slot::OUT).0, grad_logits)?;
    store(slot::OUT, g.grad_params);
    let d = dropout_backward(cache.fc2_mask.as_ref(), &g.grad_input)?;
    let d = relu_backward(&cache.fc2_pre, &d)?;

    let g = dense_backward(&cache.fc2_in, params.pair(slot::FC2).0, &d)?;
    store(slot::FC2, g.grad_params);
    let d = dropout_backward(cache.fc1_mask.as_ref(), &g.grad_input)?;
    let d = relu_backward(&cache.fc1_pre, &d)?;

    let g = dense_backward(&cache.flat, params.pair(slot::FC1).0, &d)?;
    store(slot::FC1, g.grad_params);
    let mut d = g.grad_input.reshape(&cache.pooled_shape)?;

    for i in (0..3).rev() {
        let up = max_pool2d_backward(&cache.pools[i], &d)?;
        let pre = relu_backward(&cache.conv_pre[i], &up)?;
        let w = &params.tensors()[slot::CONV_WEIGHT[i]];
        let g = if i == 0 {
            conv2d_backward_params(&cache.conv_in[i], w, &pre)?
        } else {
            conv2d_backward(&cache.conv_in[i], w, &pre)?
        };
        store((slot::CONV_WEIGHT[i], slot::CONV_BIAS[i]), g.grad_params);
        d = g.grad_input;
    }
    Ok(grads)
}

/// Weighted cross-entropy of one patch and its parameter gradient.
pub fn loss_and_gradients<T: Scalar, R: Rng + ?Sized>(
    params: &NetworkParams<T>,
    input: &Tensor<T>,
    target: usize,
    class_weights: &[T],
    dropout: f64,
    rng: &mut R,
) -> Result<(T, Gradients<T>)> {
    let pass = forward(params, input, Mode::Train, dropout, rng)?;
    let probs = softmax_forward(&pass.logits)?;
    let loss = weighted_cross_entropy(&probs, target, class_weights)?;
    let grad = softmax_cross_entropy_backward(&probs, target, class_weights)?;
    let cache = pass.cache.expect("training pass keeps its cache");
    Ok((loss, backward(params, &cache, &grad)?))
}

/// Class probabilities for one patch in inference mode.
pub fn predict<T: Scalar>(params: &NetworkParams<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    // inference never draws from the generator
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    softmax_forward(&forward(params, input, Mode::Infer, 0.0, &mut unused)?.logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::arch::Architecture;
    use crate::tensor::gradcheck::{relative_error, REL_ERR_FLOOR};

    fn setup(seed: u64) -> (NetworkParams<f64>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = NetworkParams::<f64>::he_init(Architecture::DOWNSIZED, &mut rng).unwrap();
        // non-zero biases so every bias gradient path is exercised
        for (i, t) in params.tensors_mut().iter_mut().enumerate() {
            if i % 2 == 1 {
                for v in t.data_mut() {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
        }
        let input = Tensor::from_fn(&[1, 14, 14], |_| rng.random_range(0.0..1.0));
        (params, input)
    }

    fn loss_at(params: &NetworkParams<f64>, input: &Tensor<f64>, target: usize, w: &[f64], seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pass = forward(params, input, Mode::Train, 0.35, &mut rng).unwrap();
        let probs = softmax_forward(&pass.logits).unwrap();
        weighted_cross_entropy(&probs, target, w).unwrap()
    }

    #[test]
    fn whole_network_gradient_check() {
        let weights = [0.5, 1.2, 0.8, 1.0, 1.5, 1.0];
        for (seed, target) in [(3u64, 2usize), (11, 5)] {
            let (params, input) = setup(seed);
            let dropout_seed = 100 + seed;
            let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
            let (_, grads) =
                loss_and_gradients(&params, &input, target, &weights, 0.35, &mut rng).unwrap();
            let eps = 1e-6;
            let mut worst: f64 = 0.0;
            for ti in 0..params.tensors().len() {
                for k in 0..params.tensors()[ti].len() {
                    let mut plus = params.clone();
                    plus.tensors_mut()[ti].data_mut()[k] += eps;
                    let mut minus = params.clone();
                    minus.tensors_mut()[ti].data_mut()[k] -= eps;
                    let numeric = (loss_at(&plus, &input, target, &weights, dropout_seed)
                        - loss_at(&minus, &input, target, &weights, dropout_seed))
                        / (2.0 * eps);
                    let analytic = grads.tensors()[ti].data()[k];
                    if analytic.abs().max(numeric.abs()) > REL_ERR_FLOOR {
                        worst = worst.max(relative_error(analytic, numeric));
                    }
                }
            }
            assert!(worst < 1e-4, "seed {seed}: max relative error {worst}");
        }
    }

    #[test]
    fn standard_forward_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = NetworkParams::<f32>::he_init(Architecture::STANDARD, &mut rng).unwrap();
        let input = Tensor::filled(&[1, 50, 50], 0.5f32);
        let pass = forward(&params, &input, Mode::Train, 0.35, &mut rng).unwrap();
        assert_eq!(pass.logits.shape(), &[6]);
        let cache = pass.cache.unwrap();
        assert_eq!(cache.conv_pre[0].shape(), &[32, 46, 46]);
        assert_eq!(cache.conv_pre[1].shape(), &[32, 21, 21]);
        assert_eq!(cache.conv_pre[2].shape(), &[32, 8, 8]);
        assert_eq!(cache.flat.shape(), &[512]);
        let probs = predict(&params, &input).unwrap();
        assert!((probs.data().iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn inference_is_deterministic() {
        let (params, input) = setup(5);
        let a = predict(&params, &input).unwrap();
        let b = predict(&params, &input).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(forward(&params, &input, Mode::Infer, 0.35, &mut rng).unwrap().cache.is_none());
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let (params, _) = setup(1);
        let err = predict(&params, &Tensor::zeros(&[1, 15, 14])).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: Axis::Height, expected: 14, actual: 15, .. }));
    }
}
