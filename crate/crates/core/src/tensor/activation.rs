use rand::Rng;

use super::{Scalar, Tensor};
use crate::error::{Axis, Error, Result};

/// Lower bound applied to a probability before taking its logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient passes where the input was strictly positive; zero elsewhere,
/// including at exactly zero.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    if !input.same_shape(grad_output) {
        return Err(Error::dim("relu_backward", Axis::Length, input.len(), grad_output.len()));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Inverted dropout. In training mode each unit is zeroed with probability
/// `rate` and survivors are scaled by `1/(1−rate)`; the returned mask holds
/// that per-unit factor. Inference mode is the identity and returns no mask.
pub fn dropout_forward<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask = Tensor::from_fn(input.shape(), |_| {
        if rng.random::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    });
    let out = input
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&x, &m)| x * m)
        .collect();
    Ok((Tensor::from_vec(input.shape(), out)?, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(
    mask: Option<&Tensor<T>>,
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    let Some(mask) = mask else {
        return Ok(grad_output.clone());
    };
    if !mask.same_shape(grad_output) {
        return Err(Error::dim("dropout_backward", Axis::Length, mask.len(), grad_output.len()));
    }
    let data = grad_output
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&g, &m)| g * m)
        .collect();
    Tensor::from_vec(grad_output.shape(), data)
}

/// Numerically stable softmax of a logit vector.
pub fn softmax_forward<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    logits.dims1("softmax_forward")?;
    let max = logits
        .data()
        .iter()
        .copied()
        .fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.data().iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Tensor::from_vec(logits.shape(), exps.into_iter().map(|e| e / total).collect())
}

fn check_target<T: Scalar>(
    op: &'static str,
    probs: &Tensor<T>,
    target: usize,
    weights: &[T],
) -> Result<()> {
    let k = probs.dims1(op)?;
    if weights.len() != k {
        return Err(Error::dim(op, Axis::Features, k, weights.len()));
    }
    if target >= k {
        return Err(Error::invalid(format!("{op}: target index {target} out of range 0..{k}")));
    }
    Ok(())
}

/// `−weights[target] · ln(max(probs[target], 1e−12))`. `target` is the
/// zero-based class index.
pub fn weighted_cross_entropy<T: Scalar>(
    probs: &Tensor<T>,
    target: usize,
    weights: &[T],
) -> Result<T> {
    check_target("weighted_cross_entropy", probs, target, weights)?;
    // a comparison rather than `max` so that NaN propagates
    let p = probs.data()[target];
    let p = if p < T::of(LOG_CLAMP) { T::of(LOG_CLAMP) } else { p };
    Ok(-weights[target] * p.ln())
}

/// Gradient of the weighted cross-entropy with respect to the logits that
/// produced `probs`: `weights[target] · (probs − onehot(target))`.
pub fn softmax_cross_entropy_backward<T: Scalar>(
    probs: &Tensor<T>,
    target: usize,
    weights: &[T],
) -> Result<Tensor<T>> {
    check_target("softmax_cross_entropy_backward", probs, target, weights)?;
    let w = weights[target];
    let data = probs
        .data()
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let onehot = if i == target { T::one() } else { T::zero() };
            w * (p - onehot)
        })
        .collect();
    Tensor::from_vec(probs.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{grad_check, Dropout, Relu, SoftmaxCrossEntropy};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = softmax_forward(&Tensor::<f64>::filled(&[6], 3.3)).unwrap();
        for &v in p.data() {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax_forward(&Tensor::<f64>::from_vec(&[3], vec![1000.0, 999.0, -1000.0]).unwrap())
            .unwrap();
        assert!(p.all_finite());
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_is_zero_at_certainty() {
        let probs = Tensor::<f64>::from_vec(&[3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(weighted_cross_entropy(&probs, 1, &[1.0, 1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn loss_clamps_zero_probability() {
        let probs = Tensor::<f64>::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let loss = weighted_cross_entropy(&probs, 1, &[1.0, 2.0]).unwrap();
        assert!((loss - 2.0 * -(LOG_CLAMP.ln())).abs() < 1e-9);
    }

    #[test]
    fn target_out_of_range() {
        let probs = Tensor::<f64>::filled(&[6], 1.0 / 6.0);
        assert!(weighted_cross_entropy(&probs, 6, &[1.0; 6]).is_err());
        assert!(weighted_cross_entropy(&probs, 0, &[1.0; 5]).is_err());
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let x = Tensor::<f64>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let g = relu_backward(&x, &Tensor::filled(&[3], 5.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn dropout_inference_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::from_fn(&[20], |i| i as f64);
        let (y, mask) = dropout_forward(&x, 0.35, Mode::Infer, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());
    }

    #[test]
    fn dropout_training_scales_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::filled(&[10_000], 1.0);
        let (y, mask) = dropout_forward(&x, 0.35, Mode::Train, &mut rng).unwrap();
        let mask = mask.unwrap();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
        assert!((zeros as f64 / 10_000.0 - 0.35).abs() < 0.02);
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.65).abs() < 1e-12));
        let g = dropout_backward(Some(&mask), &Tensor::filled(&[10_000], 2.0)).unwrap();
        assert!(g.data().iter().zip(y.data()).all(|(&gi, &yi)| (gi - 2.0 * yi).abs() < 1e-12));
        assert!(dropout_forward(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn finite_difference_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = Tensor::<f64>::from_fn(&[2, 4, 4], |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        assert!(grad_check(&mut Relu, &x, 1e-5).unwrap() < 1e-4);

        let mask = dropout_forward(&x, 0.35, Mode::Train, &mut rng).unwrap().1.unwrap();
        assert!(grad_check(&mut Dropout { mask: Some(mask) }, &x, 1e-5).unwrap() < 1e-4);

        let logits = Tensor::<f64>::from_fn(&[6], |_| rand::Rng::random_range(&mut rng, -2.0..2.0));
        let mut loss = SoftmaxCrossEntropy {
            target: 4,
            weights: vec![0.5, 1.5, 1.0, 0.8, 2.0, 0.2],
        };
        assert!(grad_check(&mut loss, &logits, 1e-5).unwrap() < 1e-4);
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(logits in prop::collection::vec(-15.0f64..15.0, 1..8)) {
            let n = logits.len();
            let p = softmax_forward(&Tensor::from_vec(&[n], logits).unwrap()).unwrap();
            prop_assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0 || n == 1));
        }
    }
}
