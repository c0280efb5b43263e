//! Finite-difference check of every layer and of the downsized network.
//!
//! `cargo run --release --example gradient_check`

use onh_stain::network::{forward, loss_and_gradients, Architecture, NetworkParams};
use onh_stain::tensor::gradcheck::{grad_check, relative_error, Conv2d, Dense, MaxPool2d, Relu, SoftmaxCrossEntropy};
use onh_stain::tensor::{softmax_forward, weighted_cross_entropy, Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> onh_stain::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut random = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    let eps = 1e-5;

    let (conv_in, dense_in, pool_in, relu_in, logits) =
        (random(&[2, 6, 6]), random(&[10]), random(&[3, 6, 5]), random(&[4, 4]), random(&[6]));
    let mut conv = Conv2d { weights: random(&[3, 2, 3, 3]), bias: random(&[3]) };
    let mut dense = Dense { weights: random(&[4, 10]), bias: random(&[4]) };
    let mut loss = SoftmaxCrossEntropy { target: 1, weights: vec![1.0; 6] };
    println!("conv      {:.2e}", grad_check(&mut conv, &conv_in, eps)?);
    println!("dense     {:.2e}", grad_check(&mut dense, &dense_in, eps)?);
    println!("max pool  {:.2e}", grad_check(&mut MaxPool2d, &pool_in, eps)?);
    println!("relu      {:.2e}", grad_check(&mut Relu, &relu_in, eps)?);
    println!("loss      {:.2e}", grad_check(&mut loss, &logits, eps)?);

    let arch = Architecture::DOWNSIZED;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = NetworkParams::<f64>::he_init(arch, &mut rng)?;
    let input = Tensor::from_fn(&[1, 14, 14], |_| rng.random_range(0.0..1.0));
    let weights = [1.0; 6];
    let loss_of = |p: &NetworkParams<f64>| -> onh_stain::Result<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let probs = softmax_forward(&forward(p, &input, Mode::Train, 0.35, &mut r)?.logits)?;
        weighted_cross_entropy(&probs, 3, &weights)
    };
    let (_, grads) = loss_and_gradients(&params, &input, 3, &weights, 0.35, &mut ChaCha8Rng::seed_from_u64(5))?;
    let mut worst: f64 = 0.0;
    for (ti, g) in grads.tensors().iter().enumerate() {
        for k in 0..g.len() {
            let (mut plus, mut minus) = (params.clone(), params.clone());
            plus.tensors_mut()[ti].data_mut()[k] += 1e-6;
            minus.tensors_mut()[ti].data_mut()[k] -= 1e-6;
            let numeric = (loss_of(&plus)? - loss_of(&minus)?) / 2e-6;
            if g.data()[k].abs().max(numeric.abs()) > 1e-6 {
                worst = worst.max(relative_error(g.data()[k], numeric));
            }
        }
    }
    println!("network   {worst:.2e} over {} parameters", params.count());
    Ok(())
}
