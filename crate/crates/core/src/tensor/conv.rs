use super::{LayerGrad, MatMut, MatRef, Scalar, Tensor};
use crate::error::{Axis, Error, Result};

struct ConvDims {
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    kernel: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvDims {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn conv_dims<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<ConvDims> {
    let (channels, height, width) = input.dims3(op)?;
    let (filters, kernel) = match weights.shape()[..] {
        [f, c, kh, kw] => {
            if c != channels {
                return Err(Error::dim(op, Axis::Channels, channels, c));
            }
            if kh != kw {
                return Err(Error::dim(op, Axis::Kernel, kh, kw));
            }
            (f, kh)
        }
        _ => return Err(Error::dim(op, Axis::Rank, 4, weights.rank())),
    };
    if kernel == 0 || kernel > height {
        return Err(Error::dim(op, Axis::Height, kernel, height));
    }
    if kernel > width {
        return Err(Error::dim(op, Axis::Width, kernel, width));
    }
    Ok(ConvDims {
        channels,
        height,
        width,
        filters,
        kernel,
        out_h: height - kernel + 1,
        out_w: width - kernel + 1,
    })
}

/// Unfolds the input into a `(C·k·k) × (H'·W')` matrix. Row order is
/// channel, kernel row, kernel column.
fn im2col<T: Scalar>(input: &[T], d: &ConvDims) -> Vec<T> {
    let n = d.cols();
    let mut cols = vec![T::zero(); d.rows() * n];
    let mut row = 0;
    for c in 0..d.channels {
        let plane = &input[c * d.height * d.width..(c + 1) * d.height * d.width];
        for i in 0..d.kernel {
            for j in 0..d.kernel {
                let dst = &mut cols[row * n..(row + 1) * n];
                for y in 0..d.out_h {
                    let src = &plane[(y + i) * d.width + j..(y + i) * d.width + j + d.out_w];
                    dst[y * d.out_w..(y + 1) * d.out_w].copy_from_slice(src);
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], d: &ConvDims) -> Vec<T> {
    let n = d.cols();
    let mut out = vec![T::zero(); d.channels * d.height * d.width];
    let mut row = 0;
    for c in 0..d.channels {
        let plane = &mut out[c * d.height * d.width..(c + 1) * d.height * d.width];
        for i in 0..d.kernel {
            for j in 0..d.kernel {
                let src = &cols[row * n..(row + 1) * n];
                for y in 0..d.out_h {
                    let dst = &mut plane[(y + i) * d.width + j..(y + i) * d.width + j + d.out_w];
                    for (o, &g) in dst.iter_mut().zip(&src[y * d.out_w..(y + 1) * d.out_w]) {
                        *o += g;
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// Valid (unpadded) 2-D cross-correlation.
///
/// `input` is `C×H×W`, `weights` is `F×C×k×k`, `bias` has `F` entries; the
/// result is `F×(H−k+1)×(W−k+1)`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let d = conv_dims("conv2d_forward", input, weights)?;
    let nb = bias.dims1("conv2d_forward")?;
    if nb != d.filters {
        return Err(Error::dim("conv2d_forward", Axis::Filters, d.filters, nb));
    }
    let cols = im2col(input.data(), &d);
    let n = d.cols();
    let mut out = vec![T::zero(); d.filters * n];
    for (f, &b) in bias.data().iter().enumerate() {
        out[f * n..(f + 1) * n].fill(b);
    }
    T::gemm_acc(
        MatRef::row_major(weights.data(), d.filters, d.rows()),
        MatRef::row_major(&cols, d.rows(), n),
        MatMut::row_major(&mut out, d.filters, n),
    );
    Tensor::from_vec(&[d.filters, d.out_h, d.out_w], out)
}

/// Gradients of a valid convolution with respect to its input, weights and
/// bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<LayerGrad<T>> {
    backward(input, weights, grad_output, true)
}

/// Same as [`conv2d_backward`] but leaves `grad_input` zero-filled; used for
/// the first layer, whose input gradient is never consumed.
pub(crate) fn conv2d_backward_params<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<LayerGrad<T>> {
    backward(input, weights, grad_output, false)
}

fn backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_output: &Tensor<T>,
    with_input: bool,
) -> Result<LayerGrad<T>> {
    const OP: &str = "conv2d_backward";
    let d = conv_dims(OP, input, weights)?;
    let (gf, gh, gw) = grad_output.dims3(OP)?;
    if gf != d.filters {
        return Err(Error::dim(OP, Axis::Filters, d.filters, gf));
    }
    if gh != d.out_h {
        return Err(Error::dim(OP, Axis::Height, d.out_h, gh));
    }
    if gw != d.out_w {
        return Err(Error::dim(OP, Axis::Width, d.out_w, gw));
    }
    let n = d.cols();
    let k = d.rows();
    let cols = im2col(input.data(), &d);
    let g = grad_output.data();

    // dW = dY · colsᵀ
    let mut grad_w = vec![T::zero(); d.filters * k];
    T::gemm_acc(
        MatRef::row_major(g, d.filters, n),
        MatRef::transposed(&cols, n, k),
        MatMut::row_major(&mut grad_w, d.filters, k),
    );
    let grad_b: Vec<T> = (0..d.filters)
        .map(|f| g[f * n..(f + 1) * n].iter().copied().sum())
        .collect();

    let grad_input = if with_input {
        // dcols = Wᵀ · dY
        let mut grad_cols = vec![T::zero(); k * n];
        T::gemm_acc(
            MatRef::transposed(weights.data(), k, d.filters),
            MatRef::row_major(g, d.filters, n),
            MatMut::row_major(&mut grad_cols, k, n),
        );
        col2im(&grad_cols, &d)
    } else {
        vec![T::zero(); input.len()]
    };

    Ok(LayerGrad {
        grad_input: Tensor::from_vec(input.shape(), grad_input)?,
        grad_params: vec![
            Tensor::from_vec(weights.shape(), grad_w)?,
            Tensor::from_vec(&[d.filters], grad_b)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{grad_check, Conv2d};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Nested-loop reference, accumulating in channel, row, column order.
    fn loop_oracle(input: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (c, h, wd) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (f, k) = (w.shape()[0], w.shape()[2]);
        let (oh, ow) = (h - k + 1, wd - k + 1);
        let x = input.data();
        let wt = w.data();
        let mut out = Tensor::zeros(&[f, oh, ow]);
        for fi in 0..f {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b.data()[fi];
                    for ci in 0..c {
                        for i in 0..k {
                            for j in 0..k {
                                acc += wt[((fi * c + ci) * k + i) * k + j]
                                    * x[(ci * h + y + i) * wd + xo + j];
                            }
                        }
                    }
                    out.data_mut()[(fi * oh + y) * ow + xo] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let input = Tensor::<f64>::filled(&[1, 3, 3], 1.0);
        let w = Tensor::filled(&[1, 1, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &w, &b).unwrap();
        assert_eq!(out, Tensor::filled(&[1, 3, 3], 1.0));
    }

    #[test]
    fn first_layer_output_shape() {
        let input = Tensor::<f32>::zeros(&[1, 50, 50]);
        let w = Tensor::zeros(&[32, 1, 5, 5]);
        let b = Tensor::zeros(&[32]);
        assert_eq!(conv2d_forward(&input, &w, &b).unwrap().shape(), &[32, 46, 46]);
    }

    #[test]
    fn matches_loop_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (c, h, w, f, k) in [(2, 5, 5, 3, 3), (3, 8, 8, 4, 3), (1, 8, 6, 2, 5), (4, 7, 8, 2, 1)] {
            let input = random(&[c, h, w], &mut rng);
            let wt = random(&[f, c, k, k], &mut rng);
            let b = random(&[f], &mut rng);
            let got = conv2d_forward(&input, &wt, &b).unwrap();
            assert_eq!(got, loop_oracle(&input, &wt, &b));
        }
    }

    #[test]
    fn single_precision_tracks_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = random(&[3, 12, 12], &mut rng);
        let wt = random(&[4, 3, 3, 3], &mut rng);
        let b = random(&[4], &mut rng);
        let reference = conv2d_forward(&input, &wt, &b).unwrap();
        let fast = conv2d_forward(&input.cast::<f32>(), &wt.cast(), &b.cast()).unwrap();
        for (r, f) in reference.data().iter().zip(fast.data()) {
            assert!((r - *f as f64).abs() < 1e-5);
        }
        let g = random(reference.shape(), &mut rng);
        let gr = conv2d_backward(&input, &wt, &g).unwrap();
        let gf = conv2d_backward(&input.cast::<f32>(), &wt.cast(), &g.cast()).unwrap();
        for (a, b) in gr.grad_input.data().iter().zip(gf.grad_input.data()) {
            assert!((a - *b as f64).abs() < 1e-4);
        }
        for (a, b) in gr.grad_params[0].data().iter().zip(gf.grad_params[0].data()) {
            assert!((a - *b as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn zero_grad_output_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random(&[2, 5, 5], &mut rng);
        let wt = random(&[3, 2, 3, 3], &mut rng);
        let g = conv2d_backward(&input, &wt, &Tensor::zeros(&[3, 3, 3])).unwrap();
        assert!(g.grad_input.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_params.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn one_by_one_weight_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random(&[1, 4, 4], &mut rng);
        let g = random(&[1, 4, 4], &mut rng);
        let w = Tensor::filled(&[1, 1, 1, 1], 0.7);
        let grads = conv2d_backward(&input, &w, &g).unwrap();
        let expected: f64 = input.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        assert!((grads.grad_params[0].data()[0] - expected).abs() < 1e-12);
        let gb: f64 = g.data().iter().sum();
        assert!((grads.grad_params[1].data()[0] - gb).abs() < 1e-12);
        for (gi, go) in grads.grad_input.data().iter().zip(g.data()) {
            assert!((gi - 0.7 * go).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut layer = Conv2d {
            weights: random(&[3, 2, 3, 3], &mut rng),
            bias: random(&[3], &mut rng),
        };
        let input = random(&[2, 6, 5], &mut rng);
        let err = grad_check(&mut layer, &input, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn shape_errors_name_axis() {
        let input = Tensor::<f64>::zeros(&[2, 5, 5]);
        let b = Tensor::zeros(&[3]);
        let err = conv2d_forward(&input, &Tensor::zeros(&[3, 1, 3, 3]), &b).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: Axis::Channels, .. }));
        let err = conv2d_forward(&input, &Tensor::zeros(&[3, 2, 6, 6]), &b).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: Axis::Height, .. }));
        let err = conv2d_forward(&input, &Tensor::zeros(&[3, 2, 3, 3]), &Tensor::zeros(&[2]))
            .unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: Axis::Filters, .. }));
        let err = conv2d_backward(&input, &Tensor::zeros(&[3, 2, 3, 3]), &Tensor::zeros(&[3, 3, 4]))
            .unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: Axis::Width, .. }));
    }
}
